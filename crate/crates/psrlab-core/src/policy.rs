//! Policies over finite observation/action histories.
//!
//! A policy maps the executed prefix `(o_1, a_1, ..., o_h)` to a
//! distribution over the step-`h` action. All policies fall back to uniform
//! outside their explicitly covered region, so every policy is fully
//! supported and log-likelihood ratios between candidate models never depend
//! on the policy factor.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::psr::Trajectory;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Policy {
    /// Uniform over actions at every step.
    Uniform,
    /// History-keyed lookup; keys are `[o_1, a_1, ..., o_h]` flat encodings.
    /// Missing histories act uniformly. JSON form uses comma-joined string
    /// keys, e.g. `"0,1,0"`.
    Tabular {
        #[serde(with = "table_serde")]
        table: HashMap<Vec<usize>, Vec<f64>>,
    },
    /// Deterministic action sequence over steps `start..start+len`; uniform
    /// elsewhere.
    FixedSequence { start: usize, actions: Vec<usize> },
    /// Exploration composite: `prefix` before `uniform_step`, one uniform
    /// action at `uniform_step` (if any), the forced sequence from
    /// `seq_start`, uniform after it.
    Composite {
        prefix: Box<Policy>,
        uniform_step: Option<usize>,
        seq_start: usize,
        seq: Vec<usize>,
    },
}

impl Policy {
    /// Action distribution at step `h` (1-based) given the executed prefix
    /// `(o_1, a_1, ..., o_h)` carried in `history` (obs longer than act by
    /// one is not required; only the first `h-1` pairs and `o_h` are read
    /// via the flat key).
    pub fn action_probs(&self, h: usize, history_key: &[usize], act_count: usize) -> Vec<f64> {
        match self {
            Policy::Uniform => uniform(act_count),
            Policy::Tabular { table } => match table.get(history_key) {
                Some(p) => p.clone(),
                None => uniform(act_count),
            },
            Policy::FixedSequence { start, actions } => {
                if h >= *start && h < start + actions.len() {
                    one_hot(actions[h - start], act_count)
                } else {
                    uniform(act_count)
                }
            }
            Policy::Composite { prefix, uniform_step, seq_start, seq } => {
                if let Some(us) = uniform_step {
                    if h < *us {
                        return prefix.action_probs(h, history_key, act_count);
                    }
                    if h == *us {
                        return uniform(act_count);
                    }
                }
                if h >= *seq_start && h < seq_start + seq.len() {
                    one_hot(seq[h - seq_start], act_count)
                } else {
                    uniform(act_count)
                }
            }
        }
    }

    /// Probability the policy takes exactly the actions of `traj`.
    pub fn traj_prob(&self, traj: &Trajectory, act_count: usize) -> f64 {
        let key = traj.key();
        let mut p = 1.0;
        for h in 1..=traj.len() {
            // prefix (o_1, a_1, ..., o_h) = first 2h-1 entries of the key
            p *= self.action_probs(h, &key[..2 * h - 1], act_count)[traj.act[h - 1]];
            if p == 0.0 {
                return 0.0;
            }
        }
        p
    }

    /// Sample an action at step `h` given the prefix key.
    pub fn sample_action<R: Rng>(
        &self,
        rng: &mut R,
        h: usize,
        history_key: &[usize],
        act_count: usize,
    ) -> usize {
        let probs = self.action_probs(h, history_key, act_count);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (a, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return a;
            }
        }
        act_count - 1
    }
}

/// JSON-safe encoding of the tabular lookup: flat history keys become
/// comma-joined strings, ordered for reproducible output.
mod table_serde {
    use std::collections::{BTreeMap, HashMap};

    use serde::de::Error as DeError;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(
        table: &HashMap<Vec<usize>, Vec<f64>>,
        ser: S,
    ) -> Result<S::Ok, S::Error> {
        let ordered: BTreeMap<String, &Vec<f64>> = table
            .iter()
            .map(|(k, v)| {
                let key =
                    k.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
                (key, v)
            })
            .collect();
        ordered.serialize(ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        de: D,
    ) -> Result<HashMap<Vec<usize>, Vec<f64>>, D::Error> {
        let raw = BTreeMap::<String, Vec<f64>>::deserialize(de)?;
        raw.into_iter()
            .map(|(k, v)| {
                let key = if k.is_empty() {
                    Vec::new()
                } else {
                    k.split(',')
                        .map(|x| {
                            x.parse::<usize>().map_err(|_| {
                                D::Error::custom(format!("bad table key {k:?}"))
                            })
                        })
                        .collect::<Result<Vec<usize>, _>>()?
                };
                Ok((key, v))
            })
            .collect()
    }
}

fn uniform(act_count: usize) -> Vec<f64> {
    vec![1.0 / act_count as f64; act_count]
}

fn one_hot(a: usize, act_count: usize) -> Vec<f64> {
    let mut p = vec![0.0; act_count];
    p[a] = 1.0;
    p
}

/// Exploration policy for collecting one episode aimed at `(h, u_A)`:
/// follow `base` for steps `1..h-1`, act uniformly at step `h`, execute the
/// forced action sequence `u_a` from step `h+1`, and act uniformly after it.
/// For `h = 0` there is no base prefix and no uniform step; the forced
/// sequence starts at step 1.
pub fn compose_exploration(base: &Policy, h: usize, u_a: &[usize]) -> Policy {
    if h == 0 {
        Policy::Composite {
            prefix: Box::new(Policy::Uniform),
            uniform_step: None,
            seq_start: 1,
            seq: u_a.to_vec(),
        }
    } else {
        Policy::Composite {
            prefix: Box::new(base.clone()),
            uniform_step: Some(h),
            seq_start: h + 1,
            seq: u_a.to_vec(),
        }
    }
}
