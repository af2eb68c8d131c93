//! The optimistic-MLE online learner over a finite PSR model class:
//! confidence-set maintenance, optimistic planning, composed exploration
//! policies, the main loop, and exact diagnostic quantities.

use std::time::Instant;

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::linalg;
use crate::policy::{compose_exploration, Policy};
use crate::psr::{optimal_policy, policy_value, validate_psr, PsrModel, Trajectory};
use crate::{lift, PROB_FLOOR};

/// One candidate model with its pre-processing verdicts.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub model: PsrModel,
    pub passed_validity: bool,
    pub passed_regularity: bool,
    pub measured_alpha: Option<f64>,
}

/// The finite hypothesis class the learner searches over. All candidates
/// must share horizon, alphabets, and core test sets.
#[derive(Debug, Clone)]
pub struct ModelClass {
    pub candidates: Vec<Candidate>,
    /// Index of the true model when known (realizable experiments).
    pub fstar_index: Option<usize>,
}

impl ModelClass {
    pub fn from_models(models: Vec<PsrModel>) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::InvalidModel("model class is empty".into()));
        }
        let first = &models[0];
        for (i, m) in models.iter().enumerate() {
            if m.horizon != first.horizon
                || m.obs_count != first.obs_count
                || m.act_count != first.act_count
                || m.core_tests != first.core_tests
            {
                return Err(Error::InvalidModel(format!(
                    "candidate {i} does not share horizon/alphabets/core tests with candidate 0"
                )));
            }
        }
        Ok(ModelClass {
            candidates: models
                .into_iter()
                .map(|model| Candidate {
                    model,
                    passed_validity: false,
                    passed_regularity: false,
                    measured_alpha: None,
                })
                .collect(),
            fstar_index: None,
        })
    }

    /// Pre-process candidates in order: validity check, regularity check
    /// against `alpha_floor` (greedy measurement), then parameter
    /// projection onto the reachable-state span. Regularity is measured
    /// before projection so the recorded alpha describes the raw class.
    pub fn preprocess(&mut self, alpha_floor: f64) -> Result<()> {
        for cand in &mut self.candidates {
            cand.passed_validity = validate_psr(&cand.model)?.ok();
            if !cand.passed_validity {
                cand.passed_regularity = false;
                cand.measured_alpha = None;
                continue;
            }
            let depth = cand.model.eff_horizon() - 1;
            match lift::regularity_alpha(&cand.model, depth, lift::AlphaMode::Greedy) {
                Ok((_, alpha)) => {
                    cand.measured_alpha = Some(alpha);
                    cand.passed_regularity = alpha >= alpha_floor;
                }
                Err(Error::RankDeficientPool { .. }) => {
                    cand.measured_alpha = None;
                    cand.passed_regularity = false;
                }
                Err(e) => return Err(e),
            }
            if cand.passed_regularity {
                cand.model = crate::psr::project_parameters(&cand.model)?;
            }
        }
        Ok(())
    }

    /// Indices of candidates that passed both pre-processing gates (all
    /// candidates, if `preprocess` was never run — flags default false, so
    /// call sites use [`ModelClass::active_indices`] only after it).
    pub fn active_indices(&self) -> Vec<usize> {
        self.candidates
            .iter()
            .enumerate()
            .filter(|(_, c)| c.passed_validity && c.passed_regularity)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

/// One collected episode with its provenance.
#[derive(Debug, Clone)]
pub struct DataRecord {
    pub policy: Policy,
    pub traj: Trajectory,
    pub iteration: usize,
    pub step: usize,
    pub action_seq: Vec<usize>,
}

/// Append-only store of collected episodes.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub records: Vec<DataRecord>,
}

impl Dataset {
    pub fn new() -> Self {
        Dataset::default()
    }

    pub fn push(&mut self, rec: DataRecord) {
        self.records.push(rec);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// The MLE confidence set after some dataset: candidate indices whose total
/// log-likelihood is within `beta` of the maximum.
#[derive(Debug, Clone)]
pub struct ConfidenceSet {
    pub iteration: usize,
    pub members: Vec<usize>,
    pub beta: f64,
    pub max_loglik: f64,
}

/// Log-likelihood of one trajectory under a candidate, with the probability
/// floored at [`PROB_FLOOR`] so impossible-under-candidate events stay
/// finite (and effectively expel the candidate from the set).
pub fn log_likelihood(f: &PsrModel, policy: &Policy, traj: &Trajectory) -> Result<f64> {
    Ok(f.traj_prob(policy, traj)?.max(PROB_FLOOR).ln())
}

/// Recompute the confidence set from scratch over a dataset.
pub fn update_confidence_set(class: &ModelClass, data: &Dataset, beta: f64) -> Result<ConfidenceSet> {
    let active = class.active_indices();
    let mut sums = vec![0.0f64; class.len()];
    for rec in &data.records {
        for &i in &active {
            sums[i] += log_likelihood(&class.candidates[i].model, &rec.policy, &rec.traj)?;
        }
    }
    Ok(confidence_from_sums(&active, &sums, beta, 0))
}

fn confidence_from_sums(
    active: &[usize],
    sums: &[f64],
    beta: f64,
    iteration: usize,
) -> ConfidenceSet {
    let max = active.iter().map(|&i| sums[i]).fold(f64::NEG_INFINITY, f64::max);
    let members: Vec<usize> =
        active.iter().copied().filter(|&i| sums[i] >= max - beta).collect();
    ConfidenceSet { iteration, members, beta, max_loglik: max }
}

/// Re-export of the exploration composition (Algorithm 1's
/// `pi^k_{1:h-1} o Unif(A) o u`); see [`compose_exploration`].
pub fn compose_exploration_policy(pik: &Policy, h: usize, u: &[usize]) -> Policy {
    compose_exploration(pik, h, u)
}

/// Optimistic planning over the current confidence set: the member of
/// maximal optimal value, its optimal policy, and that value. Ties break
/// toward the lowest candidate index. `cache` memoizes per-candidate plans
/// across iterations (candidates are immutable).
pub fn optimistic_plan(
    class: &ModelClass,
    set: &ConfidenceSet,
    cache: &mut Vec<Option<(Policy, f64)>>,
) -> Result<(usize, Policy, f64)> {
    cache.resize(class.len(), None);
    let mut best: Option<(usize, f64)> = None;
    for &i in &set.members {
        if cache[i].is_none() {
            let (pol, v) = optimal_policy(&class.candidates[i].model)?;
            cache[i] = Some((pol, v));
        }
        let v = cache[i].as_ref().unwrap().1;
        if best.map_or(true, |(_, bv)| v > bv) {
            best = Some((i, v));
        }
    }
    let (idx, v) = best.ok_or_else(|| Error::InvalidModel("confidence set is empty".into()))?;
    Ok((idx, cache[idx].as_ref().unwrap().0.clone(), v))
}

/// Per-iteration record of the learner's behavior.
#[derive(Debug, Clone)]
pub struct TraceRow {
    pub k: usize,
    pub v_star: Option<f64>,
    pub v_pik_true: Option<f64>,
    pub v_pik_optimistic: f64,
    pub conf_set_size: usize,
    pub fstar_in_set: Option<bool>,
    pub cum_regret: Option<f64>,
    pub tv_max: Option<f64>,
    pub b_err_max: Option<f64>,
    pub wall_ms: f64,
}

/// Full run record: per-iteration rows plus the chosen policies.
#[derive(Debug, Clone, Default)]
pub struct RegretTrace {
    pub rows: Vec<TraceRow>,
    pub policies: Vec<Policy>,
}

/// Knobs for [`crane_run`] beyond the core `(K, beta)`.
#[derive(Debug, Clone, Default)]
pub struct CraneOptions {
    /// Ground-truth PSR model for exact policy evaluation and diagnostics.
    pub truth: Option<PsrModel>,
    /// Compute per-iteration TV / b-vector diagnostics (needs `truth`).
    pub diagnostics: bool,
    /// Record wall-clock per iteration; leave false for byte-reproducible
    /// trace files.
    pub record_timings: bool,
}

/// Run Algorithm 1 for `K` iterations against a live environment.
///
/// Each iteration plans optimistically over the current confidence set,
/// collects one episode per `(h, u)` pair with `h` in `0..=He-1` and `u`
/// ranging over the distinct core-test action sequences of step `h + 1`,
/// then recomputes the confidence set.
pub fn crane_run(
    env: &mut Environment,
    class: &ModelClass,
    dataset: &mut Dataset,
    k_max: usize,
    beta: f64,
    options: &CraneOptions,
) -> Result<RegretTrace> {
    let active = class.active_indices();
    if active.is_empty() {
        return Err(Error::InvalidModel(
            "no candidate passed validity/regularity pre-processing".into(),
        ));
    }
    let shared = &class.candidates[active[0]].model;
    let eff = shared.eff_horizon();
    let v_star = match &options.truth {
        Some(truth) => Some(optimal_policy(truth)?.1),
        None => None,
    };
    let mut sums = vec![0.0f64; class.len()];
    let mut cache: Vec<Option<(Policy, f64)>> = Vec::new();
    let mut set = confidence_from_sums(&active, &sums, beta, 1);
    let mut trace = RegretTrace::default();
    let mut cum_regret = v_star.map(|_| 0.0);
    for k in 1..=k_max {
        let t0 = Instant::now();
        set.iteration = k;
        let (fk, pik, v_opt) = optimistic_plan(class, &set, &mut cache)?;
        let v_true = match &options.truth {
            Some(truth) => Some(policy_value(truth, &pik)?),
            None => None,
        };
        let mut explorers: Vec<Policy> = Vec::new();
        for h in 0..eff {
            for u in shared.core_tests.action_seqs(h + 1) {
                let explorer = compose_exploration(&pik, h, u);
                let (traj, _) = env.simulate_episode(&explorer);
                for &i in &active {
                    sums[i] +=
                        log_likelihood(&class.candidates[i].model, &explorer, &traj)?;
                }
                dataset.push(DataRecord {
                    policy: explorer.clone(),
                    traj,
                    iteration: k,
                    step: h,
                    action_seq: u.clone(),
                });
                explorers.push(explorer);
            }
        }
        let (tv_max, b_err_max) = if options.diagnostics {
            match &options.truth {
                Some(truth) => {
                    let mut pols: Vec<&Policy> = vec![&pik];
                    pols.extend(explorers.iter());
                    let d = diagnostics_tv_and_b(
                        &class.candidates[fk].model,
                        truth,
                        &pols,
                        eff - 1,
                    )?;
                    (Some(d.max_tv()), Some(d.max_b_err()))
                }
                None => (None, None),
            }
        } else {
            (None, None)
        };
        if let (Some(cr), Some(vs), Some(vt)) = (cum_regret.as_mut(), v_star, v_true) {
            *cr += vs - vt;
        }
        // the row describes the set B^k the iteration planned with
        let conf_set_size = set.members.len();
        let fstar_in_set = class.fstar_index.map(|f| set.members.contains(&f));
        set = confidence_from_sums(&active, &sums, beta, k + 1);
        trace.rows.push(TraceRow {
            k,
            v_star,
            v_pik_true: v_true,
            v_pik_optimistic: v_opt,
            conf_set_size,
            fstar_in_set,
            cum_regret,
            tv_max,
            b_err_max,
            wall_ms: if options.record_timings {
                t0.elapsed().as_secs_f64() * 1e3
            } else {
                0.0
            },
        });
        trace.policies.push(pik);
    }
    Ok(trace)
}

/// Exact value on `true_model` of the uniform mixture of the per-iteration
/// policies.
pub fn mixture_policy_eval(policies: &[Policy], true_model: &PsrModel) -> Result<f64> {
    if policies.is_empty() {
        return Err(Error::DimensionMismatch("mixture of zero policies".into()));
    }
    let mut acc = 0.0;
    for p in policies {
        acc += policy_value(true_model, p)?;
    }
    Ok(acc / policies.len() as f64)
}

/// Exact divergence diagnostics between a chosen candidate and the truth.
#[derive(Debug, Clone)]
pub struct DiagnosticRecord {
    /// Total-variation-style distance `sum_tau |P_f - P_f*|` per policy.
    pub tv_per_policy: Vec<f64>,
    /// Per step h in 0..=depth: `sum_{tau_h} pi(tau_h) ||b^f - b^{f*}||_1`
    /// weighted by the policy factor through step h, per policy.
    pub b_err_weight_h: Vec<Vec<f64>>,
    /// Same but weighted by the policy factor through step h-1.
    pub b_err_weight_hm1: Vec<Vec<f64>>,
}

impl DiagnosticRecord {
    pub fn max_tv(&self) -> f64 {
        self.tv_per_policy.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_b_err(&self) -> f64 {
        self.b_err_weight_h
            .iter()
            .chain(self.b_err_weight_hm1.iter())
            .flatten()
            .copied()
            .fold(0.0, f64::max)
    }
}

/// Enumerate the exact TV distances and weighted b-vector errors between
/// `fk` and `fstar` under each policy; `depth` bounds the history length of
/// the b-error sums (at most `He - 1`).
pub fn diagnostics_tv_and_b(
    fk: &PsrModel,
    fstar: &PsrModel,
    policies: &[&Policy],
    depth: usize,
) -> Result<DiagnosticRecord> {
    crate::budget::check(
        crate::budget::pow_sat(fk.obs_count * fk.act_count, fk.horizon)
            .saturating_mul(policies.len().max(1)),
    )?;
    let mut tv = Vec::with_capacity(policies.len());
    for pol in policies {
        let mut acc = 0.0;
        fk.for_each_trajectory(|traj, w| {
            let pf = w.max(0.0) * pol.traj_prob(traj, fk.act_count);
            let ps = fstar.traj_prob(pol, traj).unwrap_or(0.0);
            acc += (pf - ps).abs();
        })?;
        tv.push(acc);
    }
    let depth = depth.min(fk.eff_horizon() - 1);
    let mut b_h = vec![Vec::with_capacity(policies.len()); depth + 1];
    let mut b_hm1 = vec![Vec::with_capacity(policies.len()); depth + 1];
    for pol in policies {
        for h in 0..=depth {
            let mut acc_h = 0.0;
            let mut acc_hm1 = 0.0;
            let mut traj = Trajectory::empty();
            b_err_rec(fk, fstar, pol, h, &mut traj, &mut acc_h, &mut acc_hm1)?;
            b_h[h].push(acc_h);
            b_hm1[h].push(acc_hm1);
        }
    }
    Ok(DiagnosticRecord { tv_per_policy: tv, b_err_weight_h: b_h, b_err_weight_hm1: b_hm1 })
}

fn b_err_rec(
    fk: &PsrModel,
    fstar: &PsrModel,
    pol: &Policy,
    h: usize,
    traj: &mut Trajectory,
    acc_h: &mut f64,
    acc_hm1: &mut f64,
) -> Result<()> {
    if traj.len() == h {
        let gap = linalg::l1_distance(&fk.unnormalized_state(traj)?, &fstar.unnormalized_state(traj)?);
        let w_h = pol.traj_prob(traj, fk.act_count);
        let head = Trajectory::new(
            traj.obs[..h.saturating_sub(1)].to_vec(),
            traj.act[..h.saturating_sub(1)].to_vec(),
        )?;
        let w_hm1 = pol.traj_prob(&head, fk.act_count);
        *acc_h += w_h * gap;
        *acc_hm1 += w_hm1 * gap;
        return Ok(());
    }
    for o in 0..fk.obs_count {
        for a in 0..fk.act_count {
            traj.push(o, a);
            b_err_rec(fk, fstar, pol, h, traj, acc_h, acc_hm1)?;
            traj.obs.pop();
            traj.act.pop();
        }
    }
    Ok(())
}
