//! Shared fixtures for integration tests.
#![allow(dead_code)] // each test binary uses a different subset

use std::collections::HashMap;

use psrlab_core::env::{random_pomdp, Family, GeneratorSpec};
use psrlab_core::{Policy, Pomdp, Trajectory};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Deterministic size cycle for the random-instance sweeps:
/// (|S|, |O|) pairs that can pass a one-step sigma_min gate, H in 2..=4.
pub fn sized_spec(i: u64) -> GeneratorSpec {
    let sizes = [(1usize, 2usize), (2, 2), (2, 3), (3, 3)];
    let (states, obs) = sizes[(i % 4) as usize];
    let horizon = 2 + ((i / 4) % 3) as usize;
    GeneratorSpec {
        family: Family::RandomRevealing,
        states,
        obs,
        act: 2,
        horizon,
        m: 1,
        d_trans: None,
        alpha: None,
        sigma_floor: 0.15,
        seed: 1000 + i,
    }
}

pub fn gated_random_pomdp(i: u64) -> Pomdp {
    random_pomdp(&sized_spec(i)).expect("gated generation succeeds")
}

/// Random stochastic tabular policy over every history up to length H-1.
pub fn random_tabular_policy(n_obs: usize, n_act: usize, horizon: usize, seed: u64) -> Policy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut table = HashMap::new();
    let mut key: Vec<usize> = Vec::new();
    fill(&mut rng, n_obs, n_act, horizon, 1, &mut key, &mut table);
    Policy::Tabular { table }
}

fn fill(
    rng: &mut ChaCha8Rng,
    n_obs: usize,
    n_act: usize,
    horizon: usize,
    h: usize,
    key: &mut Vec<usize>,
    table: &mut HashMap<Vec<usize>, Vec<f64>>,
) {
    for o in 0..n_obs {
        key.push(o);
        let raw: Vec<f64> = (0..n_act).map(|_| rng.gen_range(0.05..1.0)).collect();
        let total: f64 = raw.iter().sum();
        table.insert(key.clone(), raw.iter().map(|v| v / total).collect());
        if h < horizon {
            for a in 0..n_act {
                key.push(a);
                fill(rng, n_obs, n_act, horizon, h + 1, key, table);
                key.pop();
            }
        }
        key.pop();
    }
}

/// Joint probability of `(tau, then test t under forced actions)` by direct
/// summation over latent state paths — an oracle independent of both the
/// belief recursion and the PSR machinery. Test steps past the horizon must
/// carry the dummy observation.
pub fn pathsum_joint(p: &Pomdp, tau: &Trajectory, obs: &[usize], act: &[usize]) -> f64 {
    // combined forced sequence: history obs/act then test obs/act
    let mut all_obs = tau.obs.clone();
    all_obs.extend_from_slice(obs);
    let mut all_act = tau.act.clone();
    all_act.extend_from_slice(act);
    let in_horizon = all_obs.len().min(p.horizon);
    for (i, &o) in all_obs.iter().enumerate() {
        if i >= p.horizon {
            if o != p.dummy_obs() {
                return 0.0;
            }
        } else if o >= p.n_obs {
            return 0.0;
        }
    }
    let mut total = 0.0;
    let mut path = vec![0usize; in_horizon];
    sum_paths(p, &all_obs, &all_act, 0, in_horizon, 1.0, &mut path, &mut total);
    total
}

#[allow(clippy::too_many_arguments)]
fn sum_paths(
    p: &Pomdp,
    obs: &[usize],
    act: &[usize],
    depth: usize,
    len: usize,
    weight: f64,
    path: &mut Vec<usize>,
    total: &mut f64,
) {
    if depth == len {
        *total += weight;
        return;
    }
    for s in 0..p.n_states {
        let mut w = weight * p.emit[depth][(obs[depth], s)];
        w *= if depth == 0 {
            p.mu1[s]
        } else {
            p.trans[depth - 1][act[depth - 1]][(s, path[depth - 1])]
        };
        if w == 0.0 {
            continue;
        }
        path[depth] = s;
        sum_paths(p, obs, act, depth + 1, len, w, path, total);
    }
}
