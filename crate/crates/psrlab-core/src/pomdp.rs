//! Tabular finite-horizon POMDPs and the exact probability oracle used as
//! ground truth for lifted PSR models.
//!
//! Trajectory probabilities are computed two independent ways (belief
//! recursion and latent-path summation) so tests can cross-check the oracle
//! against itself before it is trusted to judge anything else.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::psr::{Rewards, Test, Trajectory};
use crate::{PROB_TOL, REACH_TOL};

/// A finite tabular POMDP with step-indexed dynamics.
///
/// Conventions: `trans[h-1][a]` is the `S x S` matrix with entry `(s', s) =
/// T_h(s' | s, a)` for `h` in `1..H`; `emit[h-1]` is the `O x S` matrix with
/// entry `(o, s) = O_h(o | s)` for `h` in `1..=H`. The dummy observation id
/// used by tests that run past the horizon is `n_obs` (one past the real
/// alphabet).
#[derive(Debug, Clone, PartialEq)]
pub struct Pomdp {
    pub n_states: usize,
    pub n_obs: usize,
    pub n_act: usize,
    pub horizon: usize,
    pub trans: Vec<Vec<DMatrix<f64>>>,
    pub emit: Vec<DMatrix<f64>>,
    pub mu1: DVector<f64>,
    pub rewards: Rewards,
}

impl Pomdp {
    pub fn new(
        n_states: usize,
        n_obs: usize,
        n_act: usize,
        horizon: usize,
        trans: Vec<Vec<DMatrix<f64>>>,
        emit: Vec<DMatrix<f64>>,
        mu1: DVector<f64>,
        rewards: Rewards,
    ) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::DimensionMismatch("horizon must be >= 1".into()));
        }
        if trans.len() != horizon - 1 || emit.len() != horizon {
            return Err(Error::DimensionMismatch(format!(
                "expected {} transition steps and {} emission steps, got {} and {}",
                horizon - 1,
                horizon,
                trans.len(),
                emit.len()
            )));
        }
        for (hm1, per_a) in trans.iter().enumerate() {
            if per_a.len() != n_act {
                return Err(Error::DimensionMismatch(format!(
                    "step {}: expected {} action matrices, got {}",
                    hm1 + 1,
                    n_act,
                    per_a.len()
                )));
            }
            for m in per_a {
                if m.nrows() != n_states || m.ncols() != n_states {
                    return Err(Error::DimensionMismatch(format!(
                        "step {}: transition matrix is {}x{}, expected {n_states}x{n_states}",
                        hm1 + 1,
                        m.nrows(),
                        m.ncols()
                    )));
                }
            }
        }
        for (hm1, m) in emit.iter().enumerate() {
            if m.nrows() != n_obs || m.ncols() != n_states {
                return Err(Error::DimensionMismatch(format!(
                    "step {}: emission matrix is {}x{}, expected {n_obs}x{n_states}",
                    hm1 + 1,
                    m.nrows(),
                    m.ncols()
                )));
            }
        }
        if mu1.len() != n_states {
            return Err(Error::DimensionMismatch(format!(
                "mu1 has {} entries, expected {n_states}",
                mu1.len()
            )));
        }
        Ok(Pomdp { n_states, n_obs, n_act, horizon, trans, emit, mu1, rewards })
    }

    /// The reserved observation id emitted by convention after step H.
    pub fn dummy_obs(&self) -> usize {
        self.n_obs
    }

    /// Check stochasticity: columns of each transition matrix, columns of
    /// each emission matrix, and `mu1` all sum to one within tolerance and
    /// are nonnegative.
    pub fn validate(&self) -> Result<()> {
        let check_dist = |v: &[f64], what: &str| -> Result<()> {
            if v.iter().any(|&p| p < -PROB_TOL) {
                return Err(Error::InvalidModel(format!("{what} has a negative entry")));
            }
            let s: f64 = v.iter().sum();
            if (s - 1.0).abs() > PROB_TOL {
                return Err(Error::InvalidModel(format!("{what} sums to {s}, expected 1")));
            }
            Ok(())
        };
        check_dist(self.mu1.as_slice(), "mu1")?;
        for (hm1, per_a) in self.trans.iter().enumerate() {
            for (a, m) in per_a.iter().enumerate() {
                for s in 0..self.n_states {
                    let col: Vec<f64> = m.column(s).iter().copied().collect();
                    check_dist(&col, &format!("T_{}(.|s={s},a={a})", hm1 + 1))?;
                }
            }
        }
        for (hm1, m) in self.emit.iter().enumerate() {
            for s in 0..self.n_states {
                let col: Vec<f64> = m.column(s).iter().copied().collect();
                check_dist(&col, &format!("O_{}(.|s={s})", hm1 + 1))?;
            }
        }
        Ok(())
    }

    fn check_step_ids(&self, o: usize, a: usize) -> Result<()> {
        if o >= self.n_obs || a >= self.n_act {
            return Err(Error::DimensionMismatch(format!(
                "id out of range: o={o} (|O|={}), a={a} (|A|={})",
                self.n_obs, self.n_act
            )));
        }
        Ok(())
    }

    /// Unnormalized belief over `s_{h+1}` after executing `traj` (length
    /// `h <= H - 1`): entry `s` is `P(o_{1:h}, s_{h+1} = s | do(a_{1:h}))`.
    pub fn filtered_belief(&self, traj: &Trajectory) -> Result<DVector<f64>> {
        if traj.len() > self.horizon - 1 {
            return Err(Error::DimensionMismatch(format!(
                "history length {} exceeds horizon - 1 = {}",
                traj.len(),
                self.horizon - 1
            )));
        }
        let mut b = self.mu1.clone();
        for l in 1..=traj.len() {
            let (o, a) = (traj.obs[l - 1], traj.act[l - 1]);
            self.check_step_ids(o, a)?;
            for s in 0..self.n_states {
                b[s] *= self.emit[l - 1][(o, s)];
            }
            b = &self.trans[l - 1][a] * b;
        }
        Ok(b)
    }

    /// `P(o_{1:h} | do(a_{1:h-1}))` for a history of length `h <= H` (the
    /// final action of `traj` is not consumed unless a transition follows).
    pub fn do_history_prob(&self, traj: &Trajectory) -> Result<f64> {
        if traj.is_empty() {
            return Ok(1.0);
        }
        let head = Trajectory::new(
            traj.obs[..traj.len() - 1].to_vec(),
            traj.act[..traj.len() - 1].to_vec(),
        )?;
        let b = self.filtered_belief(&head)?;
        let o = traj.obs[traj.len() - 1];
        self.check_step_ids(o, 0)?;
        Ok((0..self.n_states).map(|s| self.emit[traj.len() - 1][(o, s)] * b[s]).sum())
    }

    /// `P^pi(tau_H)` via the belief recursion.
    pub fn traj_prob(&self, policy: &Policy, traj: &Trajectory) -> Result<f64> {
        if traj.len() != self.horizon {
            return Err(Error::DimensionMismatch(format!(
                "expected full trajectory of length {}, got {}",
                self.horizon,
                traj.len()
            )));
        }
        Ok(self.do_history_prob(traj)? * policy.traj_prob(traj, self.n_act))
    }

    /// `P^pi(tau_H)` by explicit summation over latent state paths; an
    /// independent route used to cross-check [`Pomdp::traj_prob`].
    pub fn traj_prob_pathsum(&self, policy: &Policy, traj: &Trajectory) -> Result<f64> {
        if traj.len() != self.horizon {
            return Err(Error::DimensionMismatch(format!(
                "expected full trajectory of length {}, got {}",
                self.horizon,
                traj.len()
            )));
        }
        crate::budget::check(crate::budget::pow_sat(self.n_states, self.horizon))?;
        let mut total = 0.0;
        let mut path = vec![0usize; self.horizon];
        self.pathsum_rec(traj, 0, 1.0, &mut path, &mut total);
        Ok(total * policy.traj_prob(traj, self.n_act))
    }

    fn pathsum_rec(
        &self,
        traj: &Trajectory,
        depth: usize,
        weight: f64,
        path: &mut Vec<usize>,
        total: &mut f64,
    ) {
        if depth == self.horizon {
            *total += weight;
            return;
        }
        for s in 0..self.n_states {
            let mut w = weight * self.emit[depth][(traj.obs[depth], s)];
            w *= if depth == 0 {
                self.mu1[s]
            } else {
                self.trans[depth - 1][traj.act[depth - 1]][(s, path[depth - 1])]
            };
            if w == 0.0 {
                continue;
            }
            path[depth] = s;
            self.pathsum_rec(traj, depth + 1, w, path, total);
        }
    }

    /// Conditional probability `P(t | tau_h)` of observing the test's
    /// observations when its actions are forced right after history `tau_h`.
    /// Unreachable histories yield 0. Test steps past the horizon must carry
    /// the dummy observation id, which occurs with probability 1.
    pub fn do_test_prob(&self, history: &Trajectory, test: &Test) -> Result<f64> {
        let h = history.len();
        let mut b = self.filtered_belief(history)?;
        let mass = b.sum();
        if mass < REACH_TOL {
            return Ok(0.0);
        }
        b /= mass;
        let mut p = 1.0;
        for (i, &o) in test.obs.iter().enumerate() {
            let step = h + 1 + i;
            if step > self.horizon {
                if o != self.dummy_obs() {
                    return Ok(0.0);
                }
                continue;
            }
            if o >= self.n_obs {
                return Ok(0.0);
            }
            for s in 0..self.n_states {
                b[s] *= self.emit[step - 1][(o, s)];
            }
            let w = b.sum();
            p *= w;
            if p == 0.0 {
                return Ok(0.0);
            }
            if i < test.act.len() {
                if step <= self.horizon - 1 {
                    let a = test.act[i];
                    self.check_step_ids(0, a)?;
                    b = &self.trans[step - 1][a] * b;
                }
                b /= w;
            }
        }
        Ok(p)
    }

    /// True predictive state over a list of tests at step `h+1` given a
    /// history of length `h`.
    pub fn predictive_state(&self, history: &Trajectory, tests: &[Test]) -> Result<DVector<f64>> {
        let mut q = DVector::zeros(tests.len());
        for (i, t) in tests.iter().enumerate() {
            q[i] = self.do_test_prob(history, t)?;
        }
        Ok(q)
    }

    /// Visit every full-length action-observation trajectory once.
    pub fn for_each_trajectory<F: FnMut(&Trajectory)>(&self, mut f: F) -> Result<()> {
        crate::budget::check(crate::budget::pow_sat(self.n_obs * self.n_act, self.horizon))?;
        let mut traj = Trajectory::empty();
        fn rec<F: FnMut(&Trajectory)>(
            n_obs: usize,
            n_act: usize,
            horizon: usize,
            traj: &mut Trajectory,
            f: &mut F,
        ) {
            if traj.len() == horizon {
                f(traj);
                return;
            }
            for o in 0..n_obs {
                for a in 0..n_act {
                    traj.push(o, a);
                    rec(n_obs, n_act, horizon, traj, f);
                    traj.obs.pop();
                    traj.act.pop();
                }
            }
        }
        rec(self.n_obs, self.n_act, self.horizon, &mut traj, &mut f);
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PomdpFile {
    #[serde(rename = "S")]
    s: usize,
    #[serde(rename = "O")]
    o: usize,
    #[serde(rename = "A")]
    a: usize,
    #[serde(rename = "H")]
    h: usize,
    /// T[h][a][s][s'] for h in 1..H.
    #[serde(rename = "T")]
    t: Vec<Vec<Vec<Vec<f64>>>>,
    /// Omission[h][s][o] for h in 1..=H.
    #[serde(rename = "Omission")]
    omission: Vec<Vec<Vec<f64>>>,
    mu1: Vec<f64>,
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

impl Pomdp {
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: PomdpFile = serde_json::from_str(text)?;
        if raw.t.len() != raw.h.saturating_sub(1) {
            return Err(Error::Parse(format!(
                "T has {} steps, expected H - 1 = {}",
                raw.t.len(),
                raw.h.saturating_sub(1)
            )));
        }
        let mut trans = Vec::with_capacity(raw.t.len());
        for (hm1, per_a) in raw.t.iter().enumerate() {
            if per_a.len() != raw.a {
                return Err(Error::Parse(format!(
                    "T[{hm1}] has {} actions, expected {}",
                    per_a.len(),
                    raw.a
                )));
            }
            let mut mats = Vec::with_capacity(raw.a);
            for (a, rows) in per_a.iter().enumerate() {
                if rows.len() != raw.s || rows.iter().any(|r| r.len() != raw.s) {
                    return Err(Error::Parse(format!(
                        "T[{hm1}][{a}] is not an {s}x{s} table",
                        s = raw.s
                    )));
                }
                // file stores T[s][s'] = T(s' | s); internal layout is (s', s)
                let mut m = DMatrix::zeros(raw.s, raw.s);
                for s in 0..raw.s {
                    for sp in 0..raw.s {
                        m[(sp, s)] = rows[s][sp];
                    }
                }
                mats.push(m);
            }
            trans.push(mats);
        }
        if raw.omission.len() != raw.h {
            return Err(Error::Parse(format!(
                "Omission has {} steps, expected H = {}",
                raw.omission.len(),
                raw.h
            )));
        }
        let mut emit = Vec::with_capacity(raw.h);
        for (hm1, per_s) in raw.omission.iter().enumerate() {
            if per_s.len() != raw.s || per_s.iter().any(|r| r.len() != raw.o) {
                return Err(Error::Parse(format!(
                    "Omission[{hm1}] is not an {}x{} table",
                    raw.s, raw.o
                )));
            }
            let mut m = DMatrix::zeros(raw.o, raw.s);
            for s in 0..raw.s {
                for o in 0..raw.o {
                    m[(o, s)] = per_s[s][o];
                }
            }
            emit.push(m);
        }
        let mut rewards = Rewards::new();
        for (key, &r) in &raw.rewards {
            let (h, o, a) = parse_key(key)?;
            if h == 0 || h > raw.h || o >= raw.o || a >= raw.a {
                return Err(Error::Parse(format!("rewards key {key:?} out of range")));
            }
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Parse(format!("rewards[{key:?}] = {r} outside [0, 1]")));
            }
            rewards.set(h, o, a, r);
        }
        let pomdp = Pomdp::new(
            raw.s,
            raw.o,
            raw.a,
            raw.h,
            trans,
            emit,
            DVector::from_vec(raw.mu1),
            rewards,
        )?;
        pomdp.validate()?;
        Ok(pomdp)
    }

    pub fn to_json(&self) -> String {
        let t: Vec<Vec<Vec<Vec<f64>>>> = self
            .trans
            .iter()
            .map(|per_a| {
                per_a
                    .iter()
                    .map(|m| {
                        (0..self.n_states)
                            .map(|s| (0..self.n_states).map(|sp| m[(sp, s)]).collect())
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let omission: Vec<Vec<Vec<f64>>> = self
            .emit
            .iter()
            .map(|m| {
                (0..self.n_states)
                    .map(|s| (0..self.n_obs).map(|o| m[(o, s)]).collect())
                    .collect()
            })
            .collect();
        let mut rewards = BTreeMap::new();
        for (&(h, o, a), &r) in self.rewards.iter() {
            if r != 0.0 {
                rewards.insert(format!("{h},{o},{a}"), r);
            }
        }
        let file = PomdpFile {
            s: self.n_states,
            o: self.n_obs,
            a: self.n_act,
            h: self.horizon,
            t,
            omission,
            mu1: self.mu1.iter().copied().collect(),
            rewards,
        };
        serde_json::to_string_pretty(&file).expect("POMDP serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_json())?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    /// H=2 POMDP: 2 states, mu1 = (0.7, 0.3). Action 0 keeps the state,
    /// action 1 flips it. Emissions identity at both steps.
    pub(crate) fn two_state() -> Pomdp {
        let keep = dmatrix![1.0, 0.0; 0.0, 1.0];
        let flip = dmatrix![0.0, 1.0; 1.0, 0.0];
        let emit = dmatrix![1.0, 0.0; 0.0, 1.0];
        Pomdp::new(
            2,
            2,
            2,
            2,
            vec![vec![keep, flip]],
            vec![emit.clone(), emit],
            dvector![0.7, 0.3],
            Rewards::new(),
        )
        .unwrap()
    }

    #[test]
    fn validate_accepts_stochastic_tables() {
        two_state().validate().unwrap();
    }

    #[test]
    fn validate_rejects_nonstochastic_transition() {
        let mut p = two_state();
        p.trans[0][0][(0, 0)] = 0.5;
        assert!(p.validate().is_err());
    }

    #[test]
    fn belief_and_pathsum_routes_agree() {
        let p = two_state();
        p.for_each_trajectory(|traj| {
            let a = p.traj_prob(&Policy::Uniform, traj).unwrap();
            let b = p.traj_prob_pathsum(&Policy::Uniform, traj).unwrap();
            assert!((a - b).abs() < 1e-15, "{traj:?}: {a} vs {b}");
        })
        .unwrap();
    }

    #[test]
    fn flip_action_moves_the_observation() {
        let p = two_state();
        // start in s0 (prob 0.7), flip, observe o1 at step 2
        let tau = Trajectory::new(vec![0, 1], vec![1, 0]).unwrap();
        let prob = p.do_history_prob(&tau).unwrap();
        assert!((prob - 0.7).abs() < 1e-15);
    }

    #[test]
    fn do_test_prob_conditions_on_the_history() {
        let p = two_state();
        let hist = Trajectory::new(vec![1], vec![1]).unwrap();
        // after observing o1 (s=1) and flipping, state is s0 w.p. 1
        let t = Test::new(vec![0], vec![]).unwrap();
        assert!((p.do_test_prob(&hist, &t).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn dummy_observation_past_horizon_has_probability_one() {
        let p = two_state();
        let hist = Trajectory::new(vec![0], vec![0]).unwrap();
        let t = Test::new(vec![0, p.dummy_obs()], vec![0]).unwrap();
        let t_short = Test::new(vec![0], vec![]).unwrap();
        let a = p.do_test_prob(&hist, &t).unwrap();
        let b = p.do_test_prob(&hist, &t_short).unwrap();
        assert!((a - b).abs() < 1e-15);
        // a real observation id past the horizon is impossible
        let t_bad = Test::new(vec![0, 0], vec![0]).unwrap();
        assert_eq!(p.do_test_prob(&hist, &t_bad).unwrap(), 0.0);
    }

    #[test]
    fn unreachable_history_has_zero_test_prob() {
        let p = two_state();
        let mut p2 = p.clone();
        // make s1 unobservable at step 1: emission puts all mass on o0
        p2.emit[0] = dmatrix![1.0, 1.0; 0.0, 0.0];
        let hist = Trajectory::new(vec![1], vec![0]).unwrap();
        let t = Test::new(vec![0], vec![]).unwrap();
        assert_eq!(p2.do_test_prob(&hist, &t).unwrap(), 0.0);
    }

    #[test]
    fn json_round_trip_preserves_pomdp() {
        let mut p = two_state();
        p.rewards.set(2, 1, 0, 1.0);
        let back = Pomdp::from_json(&p.to_json()).unwrap();
        assert_eq!(p, back);
    }
}
