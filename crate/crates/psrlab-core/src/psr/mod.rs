//! Linear PSR models: tests, core test sets, operator matrices, and the
//! forward dynamics that turn them into trajectory probabilities.
//!
//! A model is the parameter set `{M_{o,a,h}, q0}` over per-step core test
//! sets `U_h`. The final step uses the one-hot convention: the probability of
//! a full trajectory is the entry of the accumulated unnormalized state that
//! indexes the trailing future, times the policy probability of the actions.

mod io;
mod plan;
mod validate;

pub use plan::{optimal_policy, policy_value};
pub use validate::{project_parameters, validate_psr, ValidationReport};

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::{PROB_TOL, REACH_TOL};

/// A test: future observations `o_{h:h+W-1}` with forced actions
/// `a_{h:h+W-2}`; one more observation than actions.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Test {
    pub obs: Vec<usize>,
    pub act: Vec<usize>,
}

impl Test {
    pub fn new(obs: Vec<usize>, act: Vec<usize>) -> Result<Self> {
        if obs.is_empty() || obs.len() != act.len() + 1 {
            return Err(Error::DimensionMismatch(format!(
                "test needs |obs| = |act| + 1 >= 1, got {} obs, {} act",
                obs.len(),
                act.len()
            )));
        }
        Ok(Test { obs, act })
    }

    /// Number of observations W.
    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }
}

/// An executed prefix `(o_1, a_1, ..., o_h, a_h)`; length 0 is the empty
/// history.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Trajectory {
    pub obs: Vec<usize>,
    pub act: Vec<usize>,
}

impl Trajectory {
    pub fn empty() -> Self {
        Trajectory::default()
    }

    pub fn new(obs: Vec<usize>, act: Vec<usize>) -> Result<Self> {
        if obs.len() != act.len() {
            return Err(Error::DimensionMismatch(format!(
                "trajectory needs |obs| = |act|, got {} obs, {} act",
                obs.len(),
                act.len()
            )));
        }
        Ok(Trajectory { obs, act })
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    pub fn push(&mut self, o: usize, a: usize) {
        self.obs.push(o);
        self.act.push(a);
    }

    /// Flat `[o_1, a_1, ..., o_h, a_h]` encoding used as a policy-table key.
    pub fn key(&self) -> Vec<usize> {
        let mut k = Vec::with_capacity(2 * self.len());
        for i in 0..self.len() {
            k.push(self.obs[i]);
            k.push(self.act[i]);
        }
        k
    }
}

/// Per-step core test sets `U_1..U_He` with derived index maps and the
/// distinct action sequences `U_{A,h}` of each step.
#[derive(Debug, Clone, PartialEq)]
pub struct CoreTestSet {
    steps: Vec<Vec<Test>>,
    index: Vec<HashMap<Test, usize>>,
    action_seqs: Vec<Vec<Vec<usize>>>,
    groups: Vec<Vec<Vec<usize>>>,
}

impl CoreTestSet {
    pub fn new(steps: Vec<Vec<Test>>) -> Result<Self> {
        let mut index = Vec::with_capacity(steps.len());
        let mut action_seqs = Vec::with_capacity(steps.len());
        let mut groups: Vec<Vec<Vec<usize>>> = Vec::with_capacity(steps.len());
        for (si, tests) in steps.iter().enumerate() {
            let mut idx = HashMap::new();
            let mut seqs: Vec<Vec<usize>> = Vec::new();
            let mut grps: Vec<Vec<usize>> = Vec::new();
            for (i, t) in tests.iter().enumerate() {
                if idx.insert(t.clone(), i).is_some() {
                    return Err(Error::DimensionMismatch(format!(
                        "duplicate test {:?} in U_{}",
                        t,
                        si + 1
                    )));
                }
                match seqs.iter().position(|s| s == &t.act) {
                    Some(g) => grps[g].push(i),
                    None => {
                        seqs.push(t.act.clone());
                        grps.push(vec![i]);
                    }
                }
            }
            index.push(idx);
            action_seqs.push(seqs);
            groups.push(grps);
        }
        Ok(CoreTestSet { steps, index, action_seqs, groups })
    }

    /// Number of steps carrying a core test set (the effective horizon).
    pub fn num_steps(&self) -> usize {
        self.steps.len()
    }

    /// Tests of `U_h` (h is 1-based).
    pub fn tests(&self, h: usize) -> &[Test] {
        &self.steps[h - 1]
    }

    pub fn size(&self, h: usize) -> usize {
        self.steps[h - 1].len()
    }

    pub fn position(&self, h: usize, t: &Test) -> Option<usize> {
        self.index[h - 1].get(t).copied()
    }

    /// Distinct action sequences of `U_h`, in first-appearance order.
    pub fn action_seqs(&self, h: usize) -> &[Vec<usize>] {
        &self.action_seqs[h - 1]
    }

    /// Test indices sharing action sequence `a_idx` at step `h`.
    pub fn group(&self, h: usize, a_idx: usize) -> &[usize] {
        &self.groups[h - 1][a_idx]
    }

    /// max_h |U_{A,h}|.
    pub fn max_action_seqs(&self) -> usize {
        self.action_seqs.iter().map(|s| s.len()).max().unwrap_or(0)
    }
}

/// Per-step rewards r_h(o, a) in [0, 1]; zero where unspecified.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Rewards {
    map: HashMap<(usize, usize, usize), f64>,
}

impl Rewards {
    pub fn new() -> Self {
        Rewards::default()
    }

    pub fn set(&mut self, h: usize, o: usize, a: usize, r: f64) {
        self.map.insert((h, o, a), r);
    }

    pub fn get(&self, h: usize, o: usize, a: usize) -> f64 {
        self.map.get(&(h, o, a)).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(usize, usize, usize), &f64)> {
        self.map.iter()
    }

    pub fn is_zero(&self) -> bool {
        self.map.values().all(|r| *r == 0.0)
    }
}

/// A linear PSR: core test sets, initial predictive state `q0` (indexed by
/// `U_1`), operator matrices `M_{o,a,h}` (rows indexed by `U_{h+1}`, columns
/// by `U_h`), and known deterministic rewards.
///
/// `core_tests.num_steps()` may be shorter than `horizon` for models lifted
/// from m-step core test sets; steps beyond it are resolved through the
/// one-hot convention on the trailing future.
#[derive(Debug, Clone, PartialEq)]
pub struct PsrModel {
    pub horizon: usize,
    pub obs_count: usize,
    pub act_count: usize,
    pub core_tests: CoreTestSet,
    pub q0: DVector<f64>,
    /// ops[h-1][o * act_count + a] = M_{o,a,h} for h in 1..eff_horizon.
    pub ops: Vec<Vec<DMatrix<f64>>>,
    pub rewards: Rewards,
}

impl PsrModel {
    pub fn new(
        horizon: usize,
        obs_count: usize,
        act_count: usize,
        core_tests: CoreTestSet,
        q0: DVector<f64>,
        ops: Vec<Vec<DMatrix<f64>>>,
        rewards: Rewards,
    ) -> Result<Self> {
        let eff = core_tests.num_steps();
        if eff == 0 || eff > horizon {
            return Err(Error::DimensionMismatch(format!(
                "core test sets cover {eff} steps, horizon is {horizon}"
            )));
        }
        if q0.len() != core_tests.size(1) {
            return Err(Error::DimensionMismatch(format!(
                "q0 has {} entries, |U_1| = {}",
                q0.len(),
                core_tests.size(1)
            )));
        }
        if ops.len() != eff - 1 {
            return Err(Error::DimensionMismatch(format!(
                "expected operator matrices for {} steps, got {}",
                eff - 1,
                ops.len()
            )));
        }
        for (hm1, per_oa) in ops.iter().enumerate() {
            let h = hm1 + 1;
            if per_oa.len() != obs_count * act_count {
                return Err(Error::DimensionMismatch(format!(
                    "step {h}: expected {} operator matrices, got {}",
                    obs_count * act_count,
                    per_oa.len()
                )));
            }
            for m in per_oa {
                if m.nrows() != core_tests.size(h + 1) || m.ncols() != core_tests.size(h) {
                    return Err(Error::DimensionMismatch(format!(
                        "step {h}: operator is {}x{}, expected {}x{}",
                        m.nrows(),
                        m.ncols(),
                        core_tests.size(h + 1),
                        core_tests.size(h)
                    )));
                }
            }
        }
        Ok(PsrModel { horizon, obs_count, act_count, core_tests, q0, ops, rewards })
    }

    /// Last step carrying a core test set; `horizon` for one-step tests.
    pub fn eff_horizon(&self) -> usize {
        self.core_tests.num_steps()
    }

    /// M_{o,a,h} for h in 1..eff_horizon.
    pub fn op(&self, h: usize, o: usize, a: usize) -> &DMatrix<f64> {
        &self.ops[h - 1][o * self.act_count + a]
    }

    pub fn reward(&self, h: usize, o: usize, a: usize) -> f64 {
        self.rewards.get(h, o, a)
    }

    fn check_step_ids(&self, o: usize, a: usize) -> Result<()> {
        if o >= self.obs_count || a >= self.act_count {
            return Err(Error::DimensionMismatch(format!(
                "id out of range: o={o} (|O|={}), a={a} (|A|={})",
                self.obs_count, self.act_count
            )));
        }
        Ok(())
    }

    /// Indices of the canonical one-step aggregation for observation `o` at
    /// step `h`: tests in the first action-sequence group of `U_h` whose
    /// leading observation is `o`. Summing the predictive state over these
    /// indices yields `P(o | history)`.
    fn one_step_indices(&self, h: usize, o: usize) -> Vec<usize> {
        let tests = self.core_tests.tests(h);
        self.core_tests
            .group(h, 0)
            .iter()
            .copied()
            .filter(|&i| tests[i].obs[0] == o)
            .collect()
    }

    /// Start of the forward recursion: the unnormalized state is `q0`.
    pub fn initial_forward(&self) -> ForwardState {
        ForwardState { b: self.q0.clone(), suffix_obs: Vec::new(), suffix_act: Vec::new() }
    }

    /// Unnormalized joint probability `P(o_{1:h} | do(a_{1:h-1}))` of seeing
    /// `o` at step `h` given the forward state after steps `1..h-1`.
    pub fn obs_weight(&self, fs: &ForwardState, h: usize, o: usize) -> f64 {
        let eff = self.eff_horizon();
        if h <= eff {
            debug_assert!(fs.suffix_obs.is_empty());
            self.one_step_indices(h, o)
                .into_iter()
                .map(|i| fs.b[i])
                .sum()
        } else {
            // Frozen state over U_eff; select the futures matching the
            // executed suffix plus `o`, with a canonical action completion.
            let k = fs.suffix_obs.len();
            debug_assert_eq!(h, eff + k);
            let tests = self.core_tests.tests(eff);
            let matches_prefix = |t: &Test| -> bool {
                t.obs.len() > k
                    && t.obs[..k] == fs.suffix_obs[..]
                    && t.obs[k] == o
                    && t.act.len() >= k
                    && t.act[..k] == fs.suffix_act[..]
            };
            let canon = match tests.iter().find(|t| matches_prefix(t)) {
                Some(t) => t.act.clone(),
                None => return 0.0,
            };
            tests
                .iter()
                .enumerate()
                .filter(|(_, t)| matches_prefix(t) && t.act == canon)
                .map(|(i, _)| fs.b[i])
                .sum()
        }
    }

    /// Advance the forward state through `(o, a)` at step `h`.
    pub fn advance(&self, fs: &ForwardState, h: usize, o: usize, a: usize) -> ForwardState {
        if h < self.eff_horizon() {
            ForwardState {
                b: self.op(h, o, a) * &fs.b,
                suffix_obs: Vec::new(),
                suffix_act: Vec::new(),
            }
        } else {
            let mut next = fs.clone();
            next.suffix_obs.push(o);
            next.suffix_act.push(a);
            next
        }
    }

    /// Unnormalized trajectory weight `m_{o_H}^T prod M q0` (no policy
    /// factor). Defined for every full-length trajectory.
    pub fn traj_weight(&self, traj: &Trajectory) -> Result<f64> {
        if traj.len() != self.horizon {
            return Err(Error::DimensionMismatch(format!(
                "expected full trajectory of length {}, got {}",
                self.horizon,
                traj.len()
            )));
        }
        let mut fs = self.initial_forward();
        for h in 1..self.horizon {
            self.check_step_ids(traj.obs[h - 1], traj.act[h - 1])?;
            fs = self.advance(&fs, h, traj.obs[h - 1], traj.act[h - 1]);
        }
        self.check_step_ids(traj.obs[self.horizon - 1], traj.act[self.horizon - 1])?;
        Ok(self.obs_weight(&fs, self.horizon, traj.obs[self.horizon - 1]))
    }

    /// `P^pi(tau_H)`: the trajectory-probability factorization. Tiny
    /// negative weights clamp to zero; weights below `-PROB_TOL` signal
    /// invalid parameters.
    pub fn traj_prob(&self, policy: &Policy, traj: &Trajectory) -> Result<f64> {
        let w = self.traj_weight(traj)?;
        if w < -PROB_TOL {
            return Err(Error::InvalidModel(format!(
                "trajectory weight {w:e} below -{PROB_TOL:e}"
            )));
        }
        let w = w.max(0.0);
        Ok(w * policy.traj_prob(traj, self.act_count))
    }

    /// Predictive state `q_tau` over `U_{h+1}` after history `tau` of length
    /// `h <= eff_horizon - 1`, via the normalized forward update.
    pub fn predictive_state(&self, traj: &Trajectory) -> Result<DVector<f64>> {
        if traj.len() > self.eff_horizon() - 1 {
            return Err(Error::DimensionMismatch(format!(
                "history length {} exceeds effective horizon - 1 = {}",
                traj.len(),
                self.eff_horizon() - 1
            )));
        }
        let mut q = self.q0.clone();
        for l in 1..=traj.len() {
            let (o, a) = (traj.obs[l - 1], traj.act[l - 1]);
            self.check_step_ids(o, a)?;
            let norm: f64 = self.one_step_indices(l, o).into_iter().map(|i| q[i]).sum();
            if norm < REACH_TOL {
                return Err(Error::UnreachableHistory { step: l, normalizer: norm });
            }
            q = self.op(l, o, a) * q / norm;
        }
        Ok(q)
    }

    /// Unnormalized state `b_tau = prod_{l<=h} M_{o_l,a_l,l} q0` over
    /// `U_{h+1}`, defined for unreachable histories too.
    pub fn unnormalized_state(&self, traj: &Trajectory) -> Result<DVector<f64>> {
        if traj.len() > self.eff_horizon() - 1 {
            return Err(Error::DimensionMismatch(format!(
                "history length {} exceeds effective horizon - 1 = {}",
                traj.len(),
                self.eff_horizon() - 1
            )));
        }
        let mut b = self.q0.clone();
        for l in 1..=traj.len() {
            self.check_step_ids(traj.obs[l - 1], traj.act[l - 1])?;
            b = self.op(l, traj.obs[l - 1], traj.act[l - 1]) * b;
        }
        Ok(b)
    }

    /// Visit every full-length trajectory with its unnormalized weight,
    /// checking the enumeration budget first.
    pub fn for_each_trajectory<F: FnMut(&Trajectory, f64)>(&self, mut f: F) -> Result<()> {
        let leaves =
            crate::budget::pow_sat(self.obs_count * self.act_count, self.horizon);
        crate::budget::check(leaves)?;
        let mut traj = Trajectory::empty();
        self.walk(&self.initial_forward(), 1, &mut traj, &mut f);
        Ok(())
    }

    fn walk<F: FnMut(&Trajectory, f64)>(
        &self,
        fs: &ForwardState,
        h: usize,
        traj: &mut Trajectory,
        f: &mut F,
    ) {
        for o in 0..self.obs_count {
            let w = self.obs_weight(fs, h, o);
            for a in 0..self.act_count {
                traj.push(o, a);
                if h == self.horizon {
                    f(traj, w);
                } else {
                    let next = self.advance(fs, h, o, a);
                    self.walk(&next, h + 1, traj, f);
                }
                traj.obs.pop();
                traj.act.pop();
            }
        }
    }
}

/// Accumulated state of the unnormalized forward recursion. Up to the
/// effective horizon this is the vector `b_{tau_h}`; past it, the vector is
/// frozen and the executed suffix indexes into the trailing futures.
#[derive(Debug, Clone)]
pub struct ForwardState {
    b: DVector<f64>,
    suffix_obs: Vec<usize>,
    suffix_act: Vec<usize>,
}

impl ForwardState {
    pub fn vector(&self) -> &DVector<f64> {
        &self.b
    }
}

/// All m-step futures `(O x A)^{m-1} x O` in lexicographic interleaved order
/// (o_1, a_1, o_2, ..., o_m).
pub fn m_step_futures(obs_count: usize, act_count: usize, m: usize) -> Vec<Test> {
    let mut out = Vec::new();
    let mut obs = vec![0usize; m];
    let mut act = vec![0usize; m.saturating_sub(1)];
    fn rec(
        pos: usize,
        m: usize,
        obs_count: usize,
        act_count: usize,
        obs: &mut Vec<usize>,
        act: &mut Vec<usize>,
        out: &mut Vec<Test>,
    ) {
        if pos == m {
            out.push(Test { obs: obs.clone(), act: act.clone() });
            return;
        }
        for o in 0..obs_count {
            obs[pos] = o;
            if pos + 1 == m {
                rec(pos + 1, m, obs_count, act_count, obs, act, out);
            } else {
                for a in 0..act_count {
                    act[pos] = a;
                    rec(pos + 1, m, obs_count, act_count, obs, act, out);
                }
            }
        }
    }
    rec(0, m, obs_count, act_count, &mut obs, &mut act, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn test_requires_one_more_observation_than_actions() {
        assert!(Test::new(vec![0, 1], vec![0]).is_ok());
        assert!(Test::new(vec![0, 1], vec![]).is_err());
        assert!(Test::new(vec![], vec![]).is_err());
    }

    #[test]
    fn core_test_set_rejects_duplicates() {
        let t = Test::new(vec![0], vec![]).unwrap();
        assert!(CoreTestSet::new(vec![vec![t.clone(), t]]).is_err());
    }

    #[test]
    fn action_groups_are_indexed_by_first_appearance() {
        let u = m_step_futures(2, 2, 2);
        assert_eq!(u.len(), 8);
        let cts = CoreTestSet::new(vec![u]).unwrap();
        assert_eq!(cts.action_seqs(1).len(), 2);
        assert_eq!(cts.group(1, 0).len(), 4);
    }

    #[test]
    fn m_step_futures_m1_are_single_observations() {
        let u = m_step_futures(3, 2, 1);
        assert_eq!(u.len(), 3);
        assert_eq!(u[1], Test { obs: vec![1], act: vec![] });
    }

    #[test]
    fn predictive_state_of_empty_history_is_q0() {
        let model = tiny_model();
        let q = model.predictive_state(&Trajectory::empty()).unwrap();
        assert_eq!(q, model.q0);
    }

    #[test]
    fn unnormalized_state_single_step_is_one_matvec() {
        let model = tiny_model();
        let tau = Trajectory::new(vec![1], vec![0]).unwrap();
        let b = model.unnormalized_state(&tau).unwrap();
        assert_eq!(b, model.op(1, 1, 0) * &model.q0);
    }

    #[test]
    fn traj_prob_vanishes_when_policy_excludes_an_action() {
        let model = tiny_model();
        // Fixed action 0 at every step: any trajectory containing action 1
        // has policy probability 0.
        let pol = Policy::FixedSequence { start: 1, actions: vec![0, 0] };
        let tau = Trajectory::new(vec![0, 0], vec![0, 1]).unwrap();
        assert_eq!(model.traj_prob(&pol, &tau).unwrap(), 0.0);
    }

    /// H=2, |O|=2, |A|=2 i.i.d. model: both observations fair coin flips
    /// regardless of action.
    pub(crate) fn tiny_model() -> PsrModel {
        let u: Vec<Test> = m_step_futures(2, 2, 1);
        let cts = CoreTestSet::new(vec![u.clone(), u]).unwrap();
        let q0 = DVector::from_vec(vec![0.5, 0.5]);
        // After any (o, a): next observation still uniform. Rows of
        // M_{o,a,1} are m_{(o,a,u),1}: P((o,a,u)|tau) = P(o|tau) * 0.5.
        let mut per_oa = Vec::new();
        for o in 0..2usize {
            for _a in 0..2usize {
                let mut m = DMatrix::zeros(2, 2);
                for u_idx in 0..2 {
                    m[(u_idx, o)] = 0.5;
                }
                per_oa.push(m);
            }
        }
        PsrModel::new(2, 2, 2, cts, q0, vec![per_oa], Rewards::new()).unwrap()
    }

    #[test]
    fn tiny_model_masses_to_one_under_uniform() {
        let model = tiny_model();
        let mut total = 0.0;
        model
            .for_each_trajectory(|traj, w| {
                total += w * Policy::Uniform.traj_prob(traj, 2);
            })
            .unwrap();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
