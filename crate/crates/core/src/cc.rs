//! Communities and Crime ingestion: one fair-classification task per state.
//!
//! Input is the UCI `communities.data` file: 128 comma-separated columns, no
//! header, `?` for missing values. Any column containing a `?` is dropped
//! from the features, as are the identifier columns. A community is labelled
//! 1 when its violent-crime rate is strictly above its state's median, and
//! belongs to the protected group (`a = 0`) when its African-American
//! population share ranks first or second among the four race shares.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Regularizer, Task};
use crate::error::{Error, Result};
use crate::tasks::{DistributionKind, TaskDistribution};

/// Column names of the UCI file, in file order.
pub const UCI_COLUMNS: [&str; 128] = [
    "state",
    "county",
    "community",
    "communityname",
    "fold",
    "population",
    "householdsize",
    "racepctblack",
    "racePctWhite",
    "racePctAsian",
    "racePctHisp",
    "agePct12t21",
    "agePct12t29",
    "agePct16t24",
    "agePct65up",
    "numbUrban",
    "pctUrban",
    "medIncome",
    "pctWWage",
    "pctWFarmSelf",
    "pctWInvInc",
    "pctWSocSec",
    "pctWPubAsst",
    "pctWRetire",
    "medFamInc",
    "perCapInc",
    "whitePerCap",
    "blackPerCap",
    "indianPerCap",
    "AsianPerCap",
    "OtherPerCap",
    "HispPerCap",
    "NumUnderPov",
    "PctPopUnderPov",
    "PctLess9thGrade",
    "PctNotHSGrad",
    "PctBSorMore",
    "PctUnemployed",
    "PctEmploy",
    "PctEmplManu",
    "PctEmplProfServ",
    "PctOccupManu",
    "PctOccupMgmtProf",
    "MalePctDivorce",
    "MalePctNevMarr",
    "FemalePctDiv",
    "TotalPctDiv",
    "PersPerFam",
    "PctFam2Par",
    "PctKids2Par",
    "PctYoungKids2Par",
    "PctTeen2Par",
    "PctWorkMomYoungKids",
    "PctWorkMom",
    "NumIlleg",
    "PctIlleg",
    "NumImmig",
    "PctImmigRecent",
    "PctImmigRec5",
    "PctImmigRec8",
    "PctImmigRec10",
    "PctRecentImmig",
    "PctRecImmig5",
    "PctRecImmig8",
    "PctRecImmig10",
    "PctSpeakEnglOnly",
    "PctNotSpeakEnglWell",
    "PctLargHouseFam",
    "PctLargHouseOccup",
    "PersPerOccupHous",
    "PersPerOwnOccHous",
    "PersPerRentOccHous",
    "PctPersOwnOccup",
    "PctPersDenseHous",
    "PctHousLess3BR",
    "MedNumBR",
    "HousVacant",
    "PctHousOccup",
    "PctHousOwnOcc",
    "PctVacantBoarded",
    "PctVacMore6Mos",
    "MedYrHousBuilt",
    "PctHousNoPhone",
    "PctWOFullPlumb",
    "OwnOccLowQuart",
    "OwnOccMedVal",
    "OwnOccHiQuart",
    "RentLowQ",
    "RentMedian",
    "RentHighQ",
    "MedRent",
    "MedRentPctHousInc",
    "MedOwnCostPctInc",
    "MedOwnCostPctIncNoMtg",
    "NumInShelters",
    "NumStreet",
    "PctForeignBorn",
    "PctBornSameState",
    "PctSameHouse85",
    "PctSameCity85",
    "PctSameState85",
    "LemasSwornFT",
    "LemasSwFTPerPop",
    "LemasSwFTFieldOps",
    "LemasSwFTFieldPerPop",
    "LemasTotalReq",
    "LemasTotReqPerPop",
    "PolicReqPerOffic",
    "PolicPerPop",
    "RacialMatchCommPol",
    "PctPolicWhite",
    "PctPolicBlack",
    "PctPolicHisp",
    "PctPolicAsian",
    "PctPolicMinor",
    "OfficAssgnDrugUnits",
    "NumKindsDrugsSeiz",
    "PolicAveOTWorked",
    "LandArea",
    "PopDens",
    "PctUsePubTrans",
    "PolicCars",
    "PolicOperBudg",
    "LemasPctPolicOnPatr",
    "LemasGangUnitDeploy",
    "LemasPctOfficDrugUn",
    "PolicBudgPerPop",
    "ViolentCrimesPerPop",
];

pub const IDENTIFIER_COLUMNS: [&str; 5] = ["state", "county", "community", "communityname", "fold"];
pub const TARGET_COLUMN: &str = "ViolentCrimesPerPop";
/// Order: African-American, white, Asian, Hispanic.
pub const RACE_COLUMNS: [&str; 4] = ["racepctblack", "racePctWhite", "racePctAsian", "racePctHisp"];
pub const MIN_COMMUNITIES: usize = 20;
pub const DEFAULT_HOLDOUT: usize = 5;
pub const DEFAULT_FINETUNE_N: usize = 10;

/// Column names from a UCI `.names` file (`@attribute <name> <type>` lines).
pub fn parse_names(text: &str) -> Vec<String> {
    text.lines()
        .filter_map(|l| {
            let mut parts = l.split_whitespace();
            match parts.next() {
                Some(kw) if kw.eq_ignore_ascii_case("@attribute") => parts.next().map(str::to_owned),
                _ => None,
            }
        })
        .collect()
}

/// Which raw columns became features and why the others did not.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureManifest {
    pub raw_columns: usize,
    pub features: Vec<String>,
    pub dropped_missing: Vec<String>,
    pub identifiers: Vec<String>,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CcRecord {
    pub state: u32,
    pub community_name: String,
    /// Values of [`FeatureManifest::features`], in order.
    pub features: Vec<f64>,
    pub target: f64,
    /// Shares in [`RACE_COLUMNS`] order.
    pub race: [f64; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct CcData {
    pub records: Vec<CcRecord>,
    pub manifest: FeatureManifest,
}

/// Loads `path` using the built-in UCI column names.
pub fn load_cc(path: &Path) -> Result<CcData> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_cc(&text, &UCI_COLUMNS, path)
}

/// Loads `path` with column names taken from a `.names` file.
pub fn load_cc_with_names(path: &Path, names: &Path) -> Result<CcData> {
    let names_text = fs::read_to_string(names).map_err(|e| Error::io(names, e))?;
    let columns = parse_names(&names_text);
    if columns.is_empty() {
        return Err(Error::Data {
            path: names.to_path_buf(),
            message: "no @attribute lines".into(),
        });
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_cc(&text, &columns, path)
}

/// Parses file contents; `path` is used only in error messages.
pub fn parse_cc<S: AsRef<str>>(text: &str, columns: &[S], path: &Path) -> Result<CcData> {
    let columns: Vec<&str> = columns.iter().map(AsRef::as_ref).collect();
    let data_err = |message: String| Error::Data {
        path: path.to_path_buf(),
        message,
    };
    let col = |name: &str| {
        columns
            .iter()
            .position(|c| *c == name)
            .ok_or_else(|| data_err(format!("required column `{name}` not in column list")))
    };
    let state_col = col("state")?;
    let name_col = col("communityname")?;
    let target_col = col(TARGET_COLUMN)?;
    let race_cols = [
        col(RACE_COLUMNS[0])?,
        col(RACE_COLUMNS[1])?,
        col(RACE_COLUMNS[2])?,
        col(RACE_COLUMNS[3])?,
    ];

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows: Vec<(usize, csv::StringRecord)> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(i + 1, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(i + 1, |p| p.line() as usize);
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() != columns.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("row {line} has {} columns, expected {}", rec.len(), columns.len()),
            });
        }
        rows.push((line, rec));
    }
    if rows.is_empty() {
        return Err(data_err("no records".into()));
    }

    let missing: Vec<bool> = (0..columns.len())
        .map(|c| rows.iter().any(|(_, r)| &r[c] == "?"))
        .collect();
    for &c in race_cols.iter().chain([&target_col, &state_col]) {
        if missing[c] {
            return Err(data_err(format!("column `{}` has missing values", columns[c])));
        }
    }
    let feature_cols: Vec<usize> = (0..columns.len())
        .filter(|&c| !missing[c] && c != target_col && !IDENTIFIER_COLUMNS.contains(&columns[c]))
        .collect();
    let manifest = FeatureManifest {
        raw_columns: columns.len(),
        features: feature_cols.iter().map(|&c| columns[c].to_owned()).collect(),
        dropped_missing: (0..columns.len())
            .filter(|&c| missing[c] && !IDENTIFIER_COLUMNS.contains(&columns[c]))
            .map(|c| columns[c].to_owned())
            .collect(),
        identifiers: IDENTIFIER_COLUMNS
            .iter()
            .filter(|c| columns.contains(c))
            .map(|c| (*c).to_owned())
            .collect(),
        target: TARGET_COLUMN.to_owned(),
    };

    let records = rows
        .iter()
        .map(|(line, r)| {
            let bad = |c: usize, what: &str| Error::Parse {
                path: path.to_path_buf(),
                line: *line,
                message: format!("row {line}, column `{}`: {what} `{}`", columns[c], &r[c]),
            };
            let unit = |c: usize| -> Result<f64> {
                let v: f64 = r[c].parse().map_err(|_| bad(c, "not a number"))?;
                if (0.0..=1.0).contains(&v) {
                    Ok(v)
                } else {
                    Err(bad(c, "outside [0, 1]"))
                }
            };
            Ok(CcRecord {
                state: r[state_col].parse().map_err(|_| bad(state_col, "bad state id"))?,
                community_name: r[name_col].to_owned(),
                features: feature_cols.iter().map(|&c| unit(c)).collect::<Result<_>>()?,
                target: unit(target_col)?,
                race: [
                    unit(race_cols[0])?,
                    unit(race_cols[1])?,
                    unit(race_cols[2])?,
                    unit(race_cols[3])?,
                ],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CcData { records, manifest })
}

/// 1 where the value strictly exceeds the median of `values`.
pub fn median_labels(values: &[f64]) -> Vec<u8> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n == 0 {
        return Vec::new();
    }
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    values.iter().map(|&v| u8::from(v > median)).collect()
}

/// 0 (protected) when the African-American share ranks first or second,
/// with ties counted in its favour.
pub fn sensitive_from_race(race: &[f64; 4]) -> u8 {
    let above = race[1..].iter().filter(|&&r| r > race[0]).count();
    u8::from(above > 1)
}

/// Per-state tasks split into a training pool and held-out states.
#[derive(Debug, Clone, PartialEq)]
pub struct CcTaskSet {
    pub train: Vec<Dataset>,
    pub holdout: Vec<Dataset>,
    pub train_states: Vec<u32>,
    pub holdout_states: Vec<u32>,
    pub manifest: FeatureManifest,
}

impl CcTaskSet {
    pub fn train_distribution(&self, reg: Regularizer, gamma: f64) -> Result<TaskDistribution> {
        to_distribution(DistributionKind::CcTrain, &self.train, reg, gamma)
    }

    pub fn holdout_distribution(&self, reg: Regularizer, gamma: f64) -> Result<TaskDistribution> {
        to_distribution(DistributionKind::CcHoldout, &self.holdout, reg, gamma)
    }
}

fn to_distribution(kind: DistributionKind, data: &[Dataset], reg: Regularizer, gamma: f64) -> Result<TaskDistribution> {
    let tasks = data.iter().map(|d| Task::new(d.clone(), reg, gamma)).collect();
    TaskDistribution::new(kind, tasks)
}

pub fn state_tag(state: u32) -> String {
    format!("state-{state}")
}

/// Groups by state, keeps states with at least [`MIN_COMMUNITIES`]
/// communities and moves `holdout_count` of them, drawn with `seed`, to the
/// holdout split. Both splits are ordered by state id.
pub fn build_tasks(data: &CcData, holdout_count: usize, seed: u64) -> Result<CcTaskSet> {
    let mut by_state: std::collections::BTreeMap<u32, Vec<&CcRecord>> = Default::default();
    for r in &data.records {
        by_state.entry(r.state).or_default().push(r);
    }
    let surviving: Vec<(u32, Dataset)> = by_state
        .into_iter()
        .filter(|(_, rs)| rs.len() >= MIN_COMMUNITIES)
        .map(|(state, rs)| {
            let targets: Vec<f64> = rs.iter().map(|r| r.target).collect();
            let labels = median_labels(&targets);
            let sensitive = rs.iter().map(|r| sensitive_from_race(&r.race)).collect();
            let features = rs.iter().flat_map(|r| r.features.iter().copied()).collect();
            let ds =
                Dataset::new(features, data.manifest.features.len(), labels, sensitive)?.with_tag(state_tag(state));
            Ok((state, ds))
        })
        .collect::<Result<_>>()?;

    if surviving.len() < holdout_count + 1 {
        return Err(Error::InsufficientTasks(format!(
            "{} states have at least {MIN_COMMUNITIES} communities, need {}",
            surviving.len(),
            holdout_count + 1
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut held = index::sample(&mut rng, surviving.len(), holdout_count).into_vec();
    held.sort_unstable();

    let mut set = CcTaskSet {
        train: Vec::new(),
        holdout: Vec::new(),
        train_states: Vec::new(),
        holdout_states: Vec::new(),
        manifest: data.manifest.clone(),
    };
    for (i, (state, ds)) in surviving.into_iter().enumerate() {
        if held.binary_search(&i).is_ok() {
            set.holdout_states.push(state);
            set.holdout.push(ds);
        } else {
            set.train_states.push(state);
            set.train.push(ds);
        }
    }
    Ok(set)
}

/// `meta_batch` training states, each with a `k`-row support set and `k`
/// fresh query rows.
pub fn sample_task_batch(set: &CcTaskSet, meta_batch: usize, k: usize, seed: u64) -> Result<Vec<(Dataset, Dataset)>> {
    let dist = set.train_distribution(Regularizer::DemographicParity, 0.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(dist
        .sample_batch(meta_batch, k, &mut rng)?
        .into_iter()
        .map(|s| (s.support, s.query))
        .collect())
}

/// Disjoint fine-tune (`finetune_n` rows) and evaluation (the rest) sets.
/// Requires at least `2 · finetune_n` rows so evaluation is never smaller
/// than fine-tuning.
pub fn finetune_eval_split(state: &Dataset, finetune_n: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if finetune_n == 0 || state.len() < 2 * finetune_n {
        return Err(Error::InvalidDataset(format!(
            "{} has {} rows, need at least {} for a {finetune_n}-row fine-tune split",
            state.tag().unwrap_or("task"),
            state.len(),
            2 * finetune_n.max(1)
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let perm = index::sample(&mut rng, state.len(), state.len()).into_vec();
    Ok((state.select(&perm[..finetune_n])?, state.select(&perm[finetune_n..])?))
}

/// Resolves the data file, reporting a data error for a missing path.
pub fn require_file(path: &Path) -> Result<PathBuf> {
    if path.is_file() {
        Ok(path.to_path_buf())
    } else {
        Err(Error::Data {
            path: path.to_path_buf(),
            message: "file not found".into(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(state: u32, name: &str, vals: &[(&str, &str)]) -> String {
        UCI_COLUMNS
            .iter()
            .map(|c| match *c {
                "state" => state.to_string(),
                "communityname" => name.to_owned(),
                "county" | "community" => "?".into(),
                "fold" => "1".into(),
                other => vals
                    .iter()
                    .find(|(k, _)| *k == other)
                    .map(|(_, v)| (*v).to_owned())
                    .unwrap_or_else(|| "0.5".into()),
            })
            .collect::<Vec<_>>()
            .join(",")
    }

    #[test]
    fn builtin_columns_are_unique() {
        let mut v = UCI_COLUMNS.to_vec();
        v.sort_unstable();
        v.dedup();
        assert_eq!(v.len(), 128);
    }

    #[test]
    fn missing_value_drops_column_keeps_row() {
        let text = [row(1, "a", &[("PolicCars", "?")]), row(1, "b", &[])].join("\n");
        let d = parse_cc(&text, &UCI_COLUMNS, Path::new("t")).unwrap();
        assert_eq!(d.records.len(), 2);
        assert!(!d.manifest.features.contains(&"PolicCars".to_string()));
        assert_eq!(d.manifest.dropped_missing, vec!["PolicCars".to_string()]);
        assert_eq!(d.manifest.features.len(), 128 - 1 - 5 - 1);
        assert!(d.manifest.features.contains(&"racepctblack".to_string()));
    }

    #[test]
    fn short_row_is_named() {
        let good = row(1, "a", &[]);
        let short: Vec<&str> = good.split(',').collect();
        let text = format!("{good}\n{good}\n{}\n", short[..125].join(","));
        match parse_cc(&text, &UCI_COLUMNS, Path::new("t")) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("row 3"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_an_error() {
        assert!(parse_cc("", &UCI_COLUMNS, Path::new("t")).is_err());
        assert!(parse_cc("\n\n", &UCI_COLUMNS, Path::new("t")).is_err());
    }

    #[test]
    fn out_of_range_value_is_an_error() {
        let text = row(1, "a", &[("medIncome", "1.5")]);
        assert!(matches!(
            parse_cc(&text, &UCI_COLUMNS, Path::new("t")),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn strict_median_labels() {
        assert_eq!(median_labels(&[0.1, 0.2, 0.3, 0.4]), vec![0, 0, 1, 1]);
        assert_eq!(median_labels(&[0.3, 0.1, 0.2]), vec![1, 0, 0]);
        assert_eq!(median_labels(&[0.2, 0.2, 0.2, 0.5]), vec![0, 0, 0, 1]);
    }

    #[test]
    fn race_rank_rule() {
        assert_eq!(sensitive_from_race(&[0.5, 0.3, 0.1, 0.1]), 0);
        assert_eq!(sensitive_from_race(&[0.3, 0.5, 0.1, 0.1]), 0);
        assert_eq!(sensitive_from_race(&[0.1, 0.5, 0.3, 0.1]), 1);
        // tie for second place goes to the protected group
        assert_eq!(sensitive_from_race(&[0.2, 0.5, 0.2, 0.1]), 0);
        assert_eq!(sensitive_from_race(&[0.25, 0.25, 0.25, 0.25]), 0);
    }

    #[test]
    fn names_file_parsing() {
        let text = "-- comment\n@attribute state numeric\n@ATTRIBUTE communityname string\n\n@data\n";
        assert_eq!(parse_names(text), vec!["state", "communityname"]);
    }

    #[test]
    fn split_sizes() {
        let d = Dataset::new(vec![0.0; 25], 1, vec![0; 25], vec![1; 25]).unwrap();
        let (f, e) = finetune_eval_split(&d, 10, 3).unwrap();
        assert_eq!((f.len(), e.len()), (10, 15));
        assert_eq!(finetune_eval_split(&d, 10, 3).unwrap(), (f, e));
        let d20 = d.select(&(0..20).collect::<Vec<_>>()).unwrap();
        let (f, e) = finetune_eval_split(&d20, 10, 3).unwrap();
        assert_eq!((f.len(), e.len()), (10, 10));
        let d19 = d.select(&(0..19).collect::<Vec<_>>()).unwrap();
        assert!(finetune_eval_split(&d19, 10, 3).is_err());
    }
}
