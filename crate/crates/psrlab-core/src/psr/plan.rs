//! Exact finite-horizon planning by backward recursion over the history
//! tree.
//!
//! Both routines walk every `(o, a)` history once on unnormalized forward
//! weights, so the optimal value comes out in the same arithmetic as
//! [`PsrModel::traj_prob`] and agrees with brute-force policy enumeration.

use std::collections::HashMap;

use crate::error::Result;
use crate::policy::Policy;

use super::{ForwardState, PsrModel, Trajectory};

/// Deterministic optimal policy and its value.
///
/// The recursion maximizes
/// `F(tau_{h-1}) = sum_o max_a [ p(tau_{h-1}, o) r_h(o, a) + F(tau_h) ]`
/// where `p` is the unnormalized observation weight. Ties break toward the
/// lowest action id (strict improvement required), so histories with zero
/// reachable weight get action 0 and contribute value 0.
pub fn optimal_policy(model: &PsrModel) -> Result<(Policy, f64)> {
    crate::budget::check(crate::budget::pow_sat(
        model.obs_count * model.act_count,
        model.horizon,
    ))?;
    let mut table = HashMap::new();
    let mut traj = Trajectory::empty();
    let value = plan_rec(model, &model.initial_forward(), 1, &mut traj, &mut table);
    Ok((Policy::Tabular { table }, value))
}

fn plan_rec(
    model: &PsrModel,
    fs: &ForwardState,
    h: usize,
    traj: &mut Trajectory,
    table: &mut HashMap<Vec<usize>, Vec<f64>>,
) -> f64 {
    let mut total = 0.0;
    for o in 0..model.obs_count {
        let w = model.obs_weight(fs, h, o);
        let mut best_a = 0usize;
        let mut best_v = f64::NEG_INFINITY;
        for a in 0..model.act_count {
            let mut v = w * model.reward(h, o, a);
            if h < model.horizon {
                traj.push(o, a);
                let next = model.advance(fs, h, o, a);
                v += plan_rec(model, &next, h + 1, traj, table);
                traj.obs.pop();
                traj.act.pop();
            }
            if v > best_v {
                best_v = v;
                best_a = a;
            }
        }
        let mut key = traj.key();
        key.push(o);
        let mut probs = vec![0.0; model.act_count];
        probs[best_a] = 1.0;
        table.insert(key, probs);
        total += best_v;
    }
    total
}

/// Expected cumulative reward of `policy` on `model`, by exact enumeration.
pub fn policy_value(model: &PsrModel, policy: &Policy) -> Result<f64> {
    crate::budget::check(crate::budget::pow_sat(
        model.obs_count * model.act_count,
        model.horizon,
    ))?;
    let mut key = Vec::with_capacity(2 * model.horizon);
    Ok(value_rec(model, policy, &model.initial_forward(), 1, &mut key, 1.0))
}

fn value_rec(
    model: &PsrModel,
    policy: &Policy,
    fs: &ForwardState,
    h: usize,
    key: &mut Vec<usize>,
    pp: f64,
) -> f64 {
    if pp == 0.0 {
        return 0.0;
    }
    let mut acc = 0.0;
    for o in 0..model.obs_count {
        let w = model.obs_weight(fs, h, o);
        key.push(o);
        let probs = policy.action_probs(h, key, model.act_count);
        for a in 0..model.act_count {
            let pa = probs[a];
            if pa == 0.0 {
                continue;
            }
            acc += pp * pa * w * model.reward(h, o, a);
            if h < model.horizon {
                key.push(a);
                let next = model.advance(fs, h, o, a);
                acc += value_rec(model, policy, &next, h + 1, key, pp * pa);
                key.pop();
            }
        }
        key.pop();
    }
    acc
}
