#!/usr/bin/env python3
"""Rebuild a `communities.data`-format file when the UCI archive is unreachable.

The EthicML wheel on PyPI ships `ethicml/data/csvs/crime.csv`, derived from the
UCI Communities and Crime file by:

  * reading `communities.data` with pandas' default header handling, which
    consumed the first record (Lakewoodcity, CO) as a header row,
  * dropping every column containing a '?' value,
  * one-hot encoding `state`,
  * appending two derived columns and shuffling with `random_state=888`.

This script undoes the shuffle and the one-hot encoding and writes the 128 UCI
columns back in their original order. Columns that were dropped for missing
values are written as '?' throughout, which is equivalent under the loader's
"drop any column with a missing value" rule. The result has 1993 records, one
fewer than the canonical 1994.

Usage:
    python3 scripts/rebuild_communities_data.py [--wheel PATH] [--out data/communities.data]

Without `--wheel`, the wheel is fetched with `pip download ethicml==1.3.0`.
"""

import argparse
import glob
import io
import subprocess
import tempfile
import zipfile

import numpy as np
import pandas as pd

UCI_COLUMNS = """state county community communityname fold population householdsize
racepctblack racePctWhite racePctAsian racePctHisp agePct12t21 agePct12t29 agePct16t24
agePct65up numbUrban pctUrban medIncome pctWWage pctWFarmSelf pctWInvInc pctWSocSec
pctWPubAsst pctWRetire medFamInc perCapInc whitePerCap blackPerCap indianPerCap AsianPerCap
OtherPerCap HispPerCap NumUnderPov PctPopUnderPov PctLess9thGrade PctNotHSGrad PctBSorMore
PctUnemployed PctEmploy PctEmplManu PctEmplProfServ PctOccupManu PctOccupMgmtProf
MalePctDivorce MalePctNevMarr FemalePctDiv TotalPctDiv PersPerFam PctFam2Par PctKids2Par
PctYoungKids2Par PctTeen2Par PctWorkMomYoungKids PctWorkMom NumIlleg PctIlleg NumImmig
PctImmigRecent PctImmigRec5 PctImmigRec8 PctImmigRec10 PctRecentImmig PctRecImmig5
PctRecImmig8 PctRecImmig10 PctSpeakEnglOnly PctNotSpeakEnglWell PctLargHouseFam
PctLargHouseOccup PersPerOccupHous PersPerOwnOccHous PersPerRentOccHous PctPersOwnOccup
PctPersDenseHous PctHousLess3BR MedNumBR HousVacant PctHousOccup PctHousOwnOcc
PctVacantBoarded PctVacMore6Mos MedYrHousBuilt PctHousNoPhone PctWOFullPlumb OwnOccLowQuart
OwnOccMedVal OwnOccHiQuart RentLowQ RentMedian RentHighQ MedRent MedRentPctHousInc
MedOwnCostPctInc MedOwnCostPctIncNoMtg NumInShelters NumStreet PctForeignBorn
PctBornSameState PctSameHouse85 PctSameCity85 PctSameState85 LemasSwornFT LemasSwFTPerPop
LemasSwFTFieldOps LemasSwFTFieldPerPop LemasTotalReq LemasTotReqPerPop PolicReqPerOffic
PolicPerPop RacialMatchCommPol PctPolicWhite PctPolicBlack PctPolicHisp PctPolicAsian
PctPolicMinor OfficAssgnDrugUnits NumKindsDrugsSeiz PolicAveOTWorked LandArea PopDens
PctUsePubTrans PolicCars PolicOperBudg LemasPctPolicOnPatr LemasGangUnitDeploy
LemasPctOfficDrugUn PolicBudgPerPop ViolentCrimesPerPop""".split()

assert len(UCI_COLUMNS) == 128


def fetch_wheel(dest):
    subprocess.run(
        ["pip", "download", "--no-deps", "-q", "-d", dest, "ethicml==1.3.0"],
        check=True,
    )
    return glob.glob(f"{dest}/*.whl")[0]


def fmt(v):
    if isinstance(v, str):
        return v
    return "%g" % v


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--wheel")
    ap.add_argument("--out", default="data/communities.data")
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        wheel = args.wheel or fetch_wheel(tmp)
        raw = zipfile.ZipFile(wheel).read("ethicml/data/csvs/crime.csv")
    df = pd.read_csv(io.BytesIO(raw))

    # undo `sample(frac=1.0, random_state=888)`: shuffled row i came from row perm[i]
    n = len(df)
    perm = np.random.RandomState(888).choice(n, size=n, replace=False)
    df.index = perm
    df = df.sort_index()
    assert (np.diff(df["fold"].values) >= 0).all(), "fold column not restored"

    state_cols = [c for c in df.columns if c.startswith("state_")]
    df["state"] = [int(state_cols[i][len("state_"):]) for i in df[state_cols].values.argmax(1)]

    with open(args.out, "w") as fh:
        for _, row in df.iterrows():
            fields = [fmt(row[c]) if c in df.columns else "?" for c in UCI_COLUMNS]
            fh.write(",".join(fields) + "\n")
    print(f"wrote {n} records to {args.out}")


if __name__ == "__main__":
    main()
