//! Ground-truth environments: episode simulation against POMDPs and seeded
//! generators for test instances, including the combinatorial-lock
//! lower-bound construction.
//!
//! All randomness is counter-based (ChaCha8) with explicit stream splitting:
//! stream 0 drives model generation, stream 1 drives episodes. Adding
//! diagnostics or regenerating a model never perturbs episode draws.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Dirichlet, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lift::{weakly_revealing_sigma, Decoder};
use crate::policy::Policy;
use crate::pomdp::Pomdp;
use crate::psr::{Rewards, Trajectory};

const MODEL_STREAM: u64 = 0;
const EPISODE_STREAM: u64 = 1;
const MAX_RETRIES: usize = 1000;

/// Largest valid lock parameter: alpha must lie in (0, 1/(2*sqrt(2))).
pub const LOCK_ALPHA_MAX: f64 = 0.35355339059327373;

/// Instance family selector for the random generators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Lock,
    RandomRevealing,
    RandomDecodable,
    RandomLowrank,
}

/// Parameters of a generated instance; fully determines the model together
/// with the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub family: Family,
    #[serde(default = "default_states")]
    pub states: usize,
    #[serde(default = "default_obs")]
    pub obs: usize,
    #[serde(default = "default_act")]
    pub act: usize,
    pub horizon: usize,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default)]
    pub d_trans: Option<usize>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default = "default_sigma_floor")]
    pub sigma_floor: f64,
    pub seed: u64,
}

fn default_states() -> usize {
    2
}
fn default_obs() -> usize {
    3
}
fn default_act() -> usize {
    2
}
fn default_m() -> usize {
    1
}
fn default_sigma_floor() -> f64 {
    0.15
}

fn model_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(MODEL_STREAM);
    rng
}

fn dirichlet_row<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    let d = Dirichlet::new(&vec![1.0; n]).expect("uniform Dirichlet is valid");
    d.sample(rng)
}

/// The combinatorial-lock hard instance: two latent states (good/bad),
/// three observations (good, bad, dummy). Before the last step both states
/// emit the dummy with probability `1 - sqrt(2) * alpha` and are otherwise
/// told apart; the last step reveals the state exactly. One seed-drawn good
/// action per step keeps the good state alive; reward 1 for seeing the good
/// observation at step H.
pub fn make_lock(alpha: f64, act_count: usize, horizon: usize, seed: u64) -> Result<Pomdp> {
    let mut rng = model_rng(seed);
    let good: Vec<usize> = (0..horizon - 1).map(|_| rng.gen_range(0..act_count)).collect();
    make_lock_with_actions(alpha, act_count, horizon, &good)
}

/// Lock with an explicit good-action sequence (one action per step
/// `1..H-1`); used to build the candidate family around a true lock.
pub fn make_lock_with_actions(
    alpha: f64,
    act_count: usize,
    horizon: usize,
    good: &[usize],
) -> Result<Pomdp> {
    if !(alpha > 0.0 && alpha < LOCK_ALPHA_MAX) {
        return Err(Error::InvalidAlpha(alpha));
    }
    if horizon < 2 || good.len() != horizon - 1 {
        return Err(Error::DimensionMismatch(format!(
            "lock needs H >= 2 and {} good actions, got H={horizon}, {}",
            horizon - 1,
            good.len()
        )));
    }
    let reveal = std::f64::consts::SQRT_2 * alpha;
    // states: 0 = good, 1 = bad; observations: 0 = good, 1 = bad, 2 = dummy
    let mut emit = Vec::with_capacity(horizon);
    for _ in 1..horizon {
        emit.push(DMatrix::from_column_slice(
            3,
            2,
            &[reveal, 0.0, 1.0 - reveal, 0.0, reveal, 1.0 - reveal],
        ));
    }
    emit.push(DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]));
    let mut trans = Vec::with_capacity(horizon - 1);
    for h in 1..horizon {
        let mut per_a = Vec::with_capacity(act_count);
        for a in 0..act_count {
            let mut t = DMatrix::zeros(2, 2);
            t[(if a == good[h - 1] { 0 } else { 1 }, 0)] = 1.0;
            t[(1, 1)] = 1.0;
            per_a.push(t);
        }
        trans.push(per_a);
    }
    let mut rewards = Rewards::new();
    for a in 0..act_count {
        rewards.set(horizon, 0, a, 1.0);
    }
    Pomdp::new(2, 3, act_count, horizon, trans, emit, DVector::from_vec(vec![1.0, 0.0]), rewards)
}

/// Every lock sharing `alpha` over good-action sequences of length H
/// (index = base-|A| encoding of the sequence). The step-H entry of the
/// sequence never influences dynamics or reward — it only pads the family
/// to `|A|^H` members — so models come in observationally identical pairs.
pub fn lock_family(alpha: f64, act_count: usize, horizon: usize) -> Result<Vec<Pomdp>> {
    let n = crate::budget::pow_sat(act_count, horizon);
    crate::budget::check(n)?;
    let mut out = Vec::with_capacity(n);
    for code in 0..n {
        let mut c = code;
        let mut good = Vec::with_capacity(horizon - 1);
        for _ in 0..horizon - 1 {
            good.push(c % act_count);
            c /= act_count;
        }
        out.push(make_lock_with_actions(alpha, act_count, horizon, &good)?);
    }
    Ok(out)
}

/// Index into [`lock_family`] of the lock produced by [`make_lock`] with the
/// same seed (the step-H pad digit is zero).
pub fn lock_family_index(act_count: usize, horizon: usize, seed: u64) -> usize {
    let mut rng = model_rng(seed);
    let good: Vec<usize> = (0..horizon - 1).map(|_| rng.gen_range(0..act_count)).collect();
    good.iter().rev().fold(0, |acc, &a| acc * act_count + a)
}

/// Dirichlet-sampled POMDP, rejection-resampled until every step of the
/// m-step emission matrix has `sigma_min >= spec.sigma_floor`.
pub fn random_pomdp(spec: &GeneratorSpec) -> Result<Pomdp> {
    let mut rng = model_rng(spec.seed);
    for _ in 0..MAX_RETRIES {
        let p = sample_pomdp(spec, &mut rng)?;
        let sig = weakly_revealing_sigma(&p, spec.m)?;
        if sig.iter().all(|&s| s >= spec.sigma_floor) {
            return Ok(p);
        }
    }
    Err(Error::GenerationFailed {
        retries: MAX_RETRIES,
        reason: format!(
            "no sample reached sigma_min >= {} for m = {}",
            spec.sigma_floor, spec.m
        ),
    })
}

fn sample_pomdp(spec: &GeneratorSpec, rng: &mut ChaCha8Rng) -> Result<Pomdp> {
    let (s_n, o_n, a_n, h_n) = (spec.states, spec.obs, spec.act, spec.horizon);
    let mut trans = Vec::with_capacity(h_n - 1);
    for _ in 1..h_n {
        let mut per_a = Vec::with_capacity(a_n);
        for _ in 0..a_n {
            let mut t = DMatrix::zeros(s_n, s_n);
            for s in 0..s_n {
                let col = dirichlet_row(rng, s_n);
                for sp in 0..s_n {
                    t[(sp, s)] = col[sp];
                }
            }
            per_a.push(t);
        }
        trans.push(per_a);
    }
    let mut emit = Vec::with_capacity(h_n);
    for _ in 0..h_n {
        let mut e = DMatrix::zeros(o_n, s_n);
        for s in 0..s_n {
            let col = dirichlet_row(rng, o_n);
            for o in 0..o_n {
                e[(o, s)] = col[o];
            }
        }
        emit.push(e);
    }
    let mu1 = DVector::from_vec(dirichlet_row(rng, s_n));
    Pomdp::new(s_n, o_n, a_n, h_n, trans, emit, mu1, Rewards::new())
}

/// The recorded transition factorization of a low-rank instance:
/// `T_h(s'|s,a) = psi_h(s')^T phi_h(s,a)` after column normalization.
#[derive(Debug, Clone)]
pub struct LowRankFactors {
    /// psi[h-1]: d x S.
    pub psi: Vec<DMatrix<f64>>,
    /// phi[h-1]: d x (S * A), column index s * A + a.
    pub phi: Vec<DMatrix<f64>>,
}

/// POMDP whose transitions have nonnegative rank at most `spec.d_trans`;
/// emissions and the initial distribution are Dirichlet-sampled. Returns
/// the model together with the factors that witness the rank bound.
pub fn random_lowrank_pomdp(spec: &GeneratorSpec) -> Result<(Pomdp, LowRankFactors)> {
    let d = spec.d_trans.ok_or_else(|| {
        Error::DimensionMismatch("random-lowrank requires d_trans".into())
    })?;
    if d == 0 || d > spec.states {
        return Err(Error::DimensionMismatch(format!(
            "d_trans={d} outside 1..=|S|={}",
            spec.states
        )));
    }
    let mut rng = model_rng(spec.seed);
    let (s_n, o_n, a_n, h_n) = (spec.states, spec.obs, spec.act, spec.horizon);
    let mut psi_all = Vec::with_capacity(h_n - 1);
    let mut phi_all = Vec::with_capacity(h_n - 1);
    let mut trans = Vec::with_capacity(h_n - 1);
    for _ in 1..h_n {
        let psi = DMatrix::from_fn(d, s_n, |_, _| rng.gen::<f64>());
        let mut phi = DMatrix::from_fn(d, s_n * a_n, |_, _| rng.gen::<f64>());
        let mut per_a = vec![DMatrix::zeros(s_n, s_n); a_n];
        for s in 0..s_n {
            for a in 0..a_n {
                let raw: Vec<f64> = (0..s_n)
                    .map(|sp| psi.column(sp).dot(&phi.column(s * a_n + a)))
                    .collect();
                let total: f64 = raw.iter().sum();
                // scaling phi's column keeps the factorization exact
                for r in 0..d {
                    phi[(r, s * a_n + a)] /= total;
                }
                for sp in 0..s_n {
                    per_a[a][(sp, s)] = raw[sp] / total;
                }
            }
        }
        psi_all.push(psi);
        phi_all.push(phi);
        trans.push(per_a);
    }
    let mut emit = Vec::with_capacity(h_n);
    for _ in 0..h_n {
        let mut e = DMatrix::zeros(o_n, s_n);
        for s in 0..s_n {
            let col = dirichlet_row(&mut rng, o_n);
            for o in 0..o_n {
                e[(o, s)] = col[o];
            }
        }
        emit.push(e);
    }
    let mu1 = DVector::from_vec(dirichlet_row(&mut rng, s_n));
    let pomdp = Pomdp::new(s_n, o_n, a_n, h_n, trans, emit, mu1, Rewards::new())?;
    Ok((pomdp, LowRankFactors { psi: psi_all, phi: phi_all }))
}

/// A 2-state POMDP that is 2-step decodable but not 1-step decodable, with
/// its decoder recorded. Observation 1 is emitted by both states (hiding
/// the state from any single observation); observations 0 and 2 are
/// state-specific. The next state is a seed-drawn function of the action
/// alone, so the previous action in the window always decodes the state.
pub fn make_decodable(spec: &GeneratorSpec) -> Result<(Pomdp, Decoder)> {
    let mut rng = model_rng(spec.seed);
    let (a_n, h_n) = (spec.act, spec.horizon);
    if h_n < 2 {
        return Err(Error::DimensionMismatch("decodable instance needs H >= 2".into()));
    }
    // state-to-next-state map per step: g[h-1][a] in {0, 1}
    let g: Vec<Vec<usize>> =
        (1..h_n).map(|_| (0..a_n).map(|_| rng.gen_range(0..2usize)).collect()).collect();
    let mut trans = Vec::with_capacity(h_n - 1);
    for gh in &g {
        let mut per_a = Vec::with_capacity(a_n);
        for a in 0..a_n {
            let mut t = DMatrix::zeros(2, 2);
            t[(gh[a], 0)] = 1.0;
            t[(gh[a], 1)] = 1.0;
            per_a.push(t);
        }
        trans.push(per_a);
    }
    let mut emit = Vec::with_capacity(h_n);
    for _ in 0..h_n {
        // state 0 emits {0, 1}, state 1 emits {1, 2}; overlap drawn in
        // (0.2, 0.8) so observation 1 stays reachable from both states
        let p: f64 = rng.gen_range(0.2..0.8);
        let q: f64 = rng.gen_range(0.2..0.8);
        emit.push(DMatrix::from_column_slice(3, 2, &[p, 1.0 - p, 0.0, 0.0, q, 1.0 - q]));
    }
    let pomdp = Pomdp::new(
        2,
        3,
        a_n,
        h_n,
        trans,
        emit,
        DVector::from_vec(vec![1.0, 0.0]),
        Rewards::new(),
    )?;
    // the construction's own decoder: step 1 is always state 0; afterwards
    // the state is g[h-2][previous action]
    let mut decoder: Decoder = Decoder::new();
    for o in pomdp.emit[0].column(0).iter().enumerate().filter(|(_, &p)| p > 0.0).map(|(o, _)| o)
    {
        decoder.insert((1, vec![o]), 0);
    }
    for h in 2..=h_n {
        for po in 0..3 {
            for pa in 0..a_n {
                let s = g[h - 2][pa];
                for o in 0..3usize {
                    if pomdp.emit[h - 1][(o, s)] > 0.0 {
                        decoder.insert((h, vec![po, pa, o]), s);
                    }
                }
            }
        }
    }
    Ok((pomdp, decoder))
}

/// A live episode source: owns the latent state and an episode RNG stream.
#[derive(Debug, Clone)]
pub struct Environment {
    pub pomdp: Pomdp,
    rng: ChaCha8Rng,
    state: usize,
    step: usize,
}

impl Environment {
    /// Wrap a POMDP with an episode RNG derived from `seed` (stream-split
    /// from any model generation done with the same seed).
    pub fn new(pomdp: Pomdp, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(EPISODE_STREAM);
        Environment { pomdp, rng, state: 0, step: 1 }
    }

    fn sample_index(rng: &mut ChaCha8Rng, probs: impl Iterator<Item = f64>, len: usize) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, p) in probs.enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        len - 1
    }

    /// Run one full episode under `policy`; returns the trajectory and the
    /// total reward collected.
    pub fn simulate_episode(&mut self, policy: &Policy) -> (Trajectory, f64) {
        let p = &self.pomdp;
        self.state = Self::sample_index(&mut self.rng, p.mu1.iter().copied(), p.n_states);
        self.step = 1;
        let mut traj = Trajectory::empty();
        let mut key: Vec<usize> = Vec::with_capacity(2 * p.horizon);
        let mut reward = 0.0;
        for h in 1..=p.horizon {
            self.step = h;
            let o = Self::sample_index(
                &mut self.rng,
                p.emit[h - 1].column(self.state).iter().copied(),
                p.n_obs,
            );
            key.push(o);
            let a = policy.sample_action(&mut self.rng, h, &key, p.n_act);
            key.push(a);
            traj.push(o, a);
            reward += p.rewards.get(h, o, a);
            if h < p.horizon {
                self.state = Self::sample_index(
                    &mut self.rng,
                    p.trans[h - 1][a].column(self.state).iter().copied(),
                    p.n_states,
                );
            }
        }
        (traj, reward)
    }
}
