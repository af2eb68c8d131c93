//! On-disk JSON format for PSR models.
//!
//! ```json
//! {
//!   "H": 3, "obs": 2, "act": 2,
//!   "coreTests": [[{"obs":[0],"act":[]}, ...], ...],
//!   "q0": [0.5, 0.5],
//!   "ops": {"1,0,0": [[...], ...], ...},
//!   "rewards": {"3,0,0": 1.0, ...}
//! }
//! ```
//!
//! `coreTests` lists `U_1..U_He` in order; `ops` keys are `"h,o,a"` with
//! matrices row-major, rows in `U_{h+1}` order and columns in `U_h` order;
//! `rewards` keys are `"h,o,a"` with omitted entries meaning zero.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{CoreTestSet, PsrModel, Rewards, Test};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PsrModelFile {
    #[serde(rename = "H")]
    h: usize,
    obs: usize,
    act: usize,
    #[serde(rename = "coreTests")]
    core_tests: Vec<Vec<Test>>,
    q0: Vec<f64>,
    ops: BTreeMap<String, Vec<Vec<f64>>>,
    rewards: BTreeMap<String, f64>,
}

fn parse_key(key: &str) -> Result<(usize, usize, usize)> {
    let parts: Vec<&str> = key.split(',').collect();
    if parts.len() != 3 {
        return Err(Error::Parse(format!("key {key:?} is not \"h,o,a\"")));
    }
    let mut nums = [0usize; 3];
    for (i, p) in parts.iter().enumerate() {
        nums[i] = p
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("key {key:?} has non-integer component {p:?}")))?;
    }
    Ok((nums[0], nums[1], nums[2]))
}

impl PsrModel {
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: PsrModelFile = serde_json::from_str(text)?;
        for (si, tests) in raw.core_tests.iter().enumerate() {
            for t in tests {
                if t.obs.len() != t.act.len() + 1 {
                    return Err(Error::Parse(format!(
                        "coreTests[{si}]: test {t:?} needs |obs| = |act| + 1"
                    )));
                }
            }
        }
        let core_tests = CoreTestSet::new(raw.core_tests)?;
        let eff = core_tests.num_steps();
        let mut ops: Vec<Vec<DMatrix<f64>>> = Vec::with_capacity(eff.saturating_sub(1));
        for h in 1..eff {
            let mut per_oa = Vec::with_capacity(raw.obs * raw.act);
            for o in 0..raw.obs {
                for a in 0..raw.act {
                    let key = format!("{h},{o},{a}");
                    let rows = raw.ops.get(&key).ok_or_else(|| {
                        Error::Parse(format!("ops missing required key {key:?}"))
                    })?;
                    let nrows = core_tests.size(h + 1);
                    let ncols = core_tests.size(h);
                    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
                        return Err(Error::Parse(format!(
                            "ops[{key:?}] is not a {nrows}x{ncols} matrix"
                        )));
                    }
                    per_oa.push(DMatrix::from_row_iterator(
                        nrows,
                        ncols,
                        rows.iter().flatten().copied(),
                    ));
                }
            }
            ops.push(per_oa);
        }
        if raw.ops.len() != (eff - 1) * raw.obs * raw.act {
            return Err(Error::Parse(format!(
                "ops has {} entries, expected {}",
                raw.ops.len(),
                (eff - 1) * raw.obs * raw.act
            )));
        }
        let mut rewards = Rewards::new();
        for (key, &r) in &raw.rewards {
            let (h, o, a) = parse_key(key)?;
            if h == 0 || h > raw.h || o >= raw.obs || a >= raw.act {
                return Err(Error::Parse(format!("rewards key {key:?} out of range")));
            }
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Parse(format!("rewards[{key:?}] = {r} outside [0, 1]")));
            }
            rewards.set(h, o, a, r);
        }
        PsrModel::new(
            raw.h,
            raw.obs,
            raw.act,
            core_tests,
            DVector::from_vec(raw.q0),
            ops,
            rewards,
        )
    }

    pub fn to_json(&self) -> String {
        let mut ops = BTreeMap::new();
        for h in 1..self.eff_horizon() {
            for o in 0..self.obs_count {
                for a in 0..self.act_count {
                    let m = self.op(h, o, a);
                    let rows: Vec<Vec<f64>> =
                        (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
                    ops.insert(format!("{h},{o},{a}"), rows);
                }
            }
        }
        let mut rewards = BTreeMap::new();
        for (&(h, o, a), &r) in self.rewards.iter() {
            if r != 0.0 {
                rewards.insert(format!("{h},{o},{a}"), r);
            }
        }
        let file = PsrModelFile {
            h: self.horizon,
            obs: self.obs_count,
            act: self.act_count,
            core_tests: (1..=self.eff_horizon())
                .map(|h| self.core_tests.tests(h).to_vec())
                .collect(),
            q0: self.q0.iter().copied().collect(),
            ops,
            rewards,
        };
        serde_json::to_string_pretty(&file).expect("PSR model serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_json())?)
    }
}
