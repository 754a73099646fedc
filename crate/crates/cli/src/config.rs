//! Run configuration: built-in defaults, then an optional JSON file, then
//! command-line flags.

use std::path::{Path, PathBuf};

use fairmaml::boundary::GridSpec;
use fairmaml::experiment::{CcSettings, SynthSettings};
use fairmaml::synth::PhiInterpretation;
use fairmaml::Regularizer;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Synth,
    Cc,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Synth => "synth",
            ExperimentKind::Cc => "cc",
        }
    }
}

/// Everything a run depends on. Written verbatim to `manifest.json`, which
/// can be passed back with `--config` to repeat the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub experiment: Option<ExperimentKind>,
    pub synth: SynthSettings,
    pub cc: CcSettings,
    /// Communities and Crime data file.
    pub data: PathBuf,
    /// Parent directory for run directories.
    pub out: PathBuf,
    pub boundary: GridSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            experiment: None,
            synth: SynthSettings::default(),
            cc: CcSettings::default(),
            data: PathBuf::from("data/communities.data"),
            out: PathBuf::from("runs"),
            boundary: GridSpec::default(),
        }
    }
}

/// Flag values that override the file; `None` leaves the setting alone.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub gamma: Option<f64>,
    pub regularizer: Option<Regularizer>,
    pub meta_iters: Option<usize>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub phi_interpretation: Option<PhiInterpretation>,
    pub holdout_seed: Option<u64>,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        serde_json::from_str(&text).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Defaults, then `file`, then `flags`; validated for `kind`.
    pub fn resolve(kind: ExperimentKind, file: Option<&Path>, flags: &Overrides) -> Result<Self, CliError> {
        let mut cfg = match file {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        if let Some(k) = cfg.experiment {
            if k != kind {
                return Err(CliError::Usage(format!(
                    "config is for the `{}` experiment, not `{}`",
                    k.as_str(),
                    kind.as_str()
                )));
            }
        }
        cfg.experiment = Some(kind);
        cfg.apply(flags);
        cfg.validate(kind)?;
        Ok(cfg)
    }

    pub fn apply(&mut self, f: &Overrides) {
        if let Some(seed) = f.seed {
            self.synth.seeds = vec![seed];
            self.cc.seeds = vec![seed];
        }
        if let Some(g) = f.gamma {
            self.synth.gammas = vec![g];
            self.cc.dp_gammas = vec![g];
            self.cc.eop_gammas = vec![g];
        }
        if let Some(r) = f.regularizer {
            self.synth.meta.regularizer = r;
            self.cc.regularizers = vec![r];
        }
        if let Some(n) = f.meta_iters {
            self.synth.meta.meta_iters = n;
            self.cc.meta.meta_iters = n;
        }
        if let Some(d) = &f.data {
            self.data = d.clone();
        }
        if let Some(o) = &f.out {
            self.out = o.clone();
        }
        if let Some(p) = f.phi_interpretation {
            self.synth.phi_interpretation = p;
        }
        if let Some(s) = f.holdout_seed {
            self.cc.holdout_seed = s;
        }
    }

    pub fn validate(&self, kind: ExperimentKind) -> Result<(), CliError> {
        match kind {
            ExperimentKind::Synth => self.synth.validate()?,
            ExperimentKind::Cc => self.cc.validate()?,
        }
        self.boundary.validate()?;
        Ok(())
    }

    pub fn seeds(&self, kind: ExperimentKind) -> &[u64] {
        match kind {
            ExperimentKind::Synth => &self.synth.seeds,
            ExperimentKind::Cc => &self.cc.seeds,
        }
    }
}
