//! Semantic validation and parameter normalization for PSR models.

use nalgebra::DMatrix;

use crate::error::Result;
use crate::policy::Policy;
use crate::{PROB_TOL, REACH_TOL, SVD_TOL};

use super::{ForwardState, PsrModel, Trajectory};

/// Outcome of the probabilistic-soundness checks on a model.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    /// Total trajectory mass under the uniform policy (should be 1).
    pub total_mass: f64,
    /// Most negative unnormalized trajectory weight (should be >= 0).
    pub min_traj_weight: f64,
    /// Largest excess over 1 of any per-action-sequence group sum of a
    /// reachable predictive state (should be <= 0).
    pub max_group_excess: f64,
    pub tol: f64,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        (self.total_mass - 1.0).abs() <= self.tol
            && self.min_traj_weight >= -self.tol
            && self.max_group_excess <= self.tol
    }

    pub fn describe(&self) -> String {
        format!(
            "total_mass={:.3e} (dev {:.3e}), min_traj_weight={:.3e}, max_group_excess={:.3e}",
            self.total_mass,
            (self.total_mass - 1.0).abs(),
            self.min_traj_weight,
            self.max_group_excess
        )
    }
}

/// Check that the parameters define a probability model: trajectory weights
/// are nonnegative, total mass under the uniform policy is one, and every
/// action-sequence group of every reachable predictive state sums to at most
/// one (each group is a probability of a forced-action future).
pub fn validate_psr(model: &PsrModel) -> Result<ValidationReport> {
    let mut total_mass = 0.0;
    let mut min_w = f64::INFINITY;
    model.for_each_trajectory(|traj, w| {
        total_mass += w * Policy::Uniform.traj_prob(traj, model.act_count);
        if w < min_w {
            min_w = w;
        }
    })?;
    let mut max_excess = f64::NEG_INFINITY;
    let mut traj = Trajectory::empty();
    group_rec(model, &model.initial_forward(), 1, &mut traj, &mut max_excess);
    Ok(ValidationReport {
        total_mass,
        min_traj_weight: min_w,
        max_group_excess: max_excess,
        tol: PROB_TOL,
    })
}

fn group_rec(
    model: &PsrModel,
    fs: &ForwardState,
    h: usize,
    traj: &mut Trajectory,
    max_excess: &mut f64,
) {
    // fs is b_{tau} over U_h for the history built so far (length h-1).
    let mass: f64 = (0..model.obs_count).map(|o| model.obs_weight(fs, h, o)).sum();
    if mass >= REACH_TOL {
        for g in 0..model.core_tests.action_seqs(h).len() {
            let sum: f64 = model
                .core_tests
                .group(h, g)
                .iter()
                .map(|&i| fs.vector()[i] / mass)
                .sum();
            let excess = sum - 1.0;
            if excess > *max_excess {
                *max_excess = excess;
            }
        }
        if h < model.eff_horizon() {
            for o in 0..model.obs_count {
                for a in 0..model.act_count {
                    traj.push(o, a);
                    let next = model.advance(fs, h, o, a);
                    group_rec(model, &next, h + 1, traj, max_excess);
                    traj.obs.pop();
                    traj.act.pop();
                }
            }
        }
    }
}

/// Replace each operator `M_{o,a,h}` with `M_{o,a,h} P_{h}` where `P_h`
/// projects onto the span of all unnormalized states of `h`-step histories
/// (with `P_1` spanned by `q0` alone). Trajectory probabilities are
/// invariant because every state the operator is ever applied to lies in
/// that span; components outside it are unconstrained by data and are
/// zeroed for comparability between candidate parameterizations.
pub fn project_parameters(model: &PsrModel) -> Result<PsrModel> {
    let eff = model.eff_horizon();
    crate::budget::check(crate::budget::pow_sat(
        model.obs_count * model.act_count,
        eff.saturating_sub(1),
    ))?;
    let mut out = model.clone();
    // States of all histories of length h-1, as columns over U_h.
    let mut states: Vec<nalgebra::DVector<f64>> = vec![model.q0.clone()];
    for h in 1..eff {
        let mut cols = DMatrix::zeros(model.core_tests.size(h), states.len());
        for (j, s) in states.iter().enumerate() {
            cols.set_column(j, s);
        }
        let proj = crate::linalg::col_space_projector(&cols, SVD_TOL);
        let mut next_states = Vec::with_capacity(states.len() * model.obs_count * model.act_count);
        for o in 0..model.obs_count {
            for a in 0..model.act_count {
                let idx = o * model.act_count + a;
                let projected = &model.ops[h - 1][idx] * &proj;
                for s in &states {
                    next_states.push(&projected * s);
                }
                out.ops[h - 1][idx] = projected;
            }
        }
        states = next_states;
    }
    Ok(out)
}
