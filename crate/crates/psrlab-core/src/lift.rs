//! POMDP -> PSR liftings and structural diagnostics.
//!
//! Two constructive liftings are implemented: the m-step weakly-revealing
//! route (operator rows through the pseudoinverse of the m-step emission
//! matrix) and the m-step decodable route (indicator aggregations for short
//! tests, decoded-state continuation products for long ones). Diagnostics
//! cover system dynamics matrices and their rank, per-step emission singular
//! values, core-matrix regularity, and decodability checking.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::pomdp::Pomdp;
use crate::psr::{m_step_futures, CoreTestSet, PsrModel, Test, Trajectory};
use crate::{REACH_TOL, SVD_TOL};

/// Tests x histories matrix of conditional probabilities `P(t | tau)` at a
/// fixed history length; columns of unreachable histories are all zero.
#[derive(Debug, Clone)]
pub struct SystemDynamicsMatrix {
    /// History length indexing the columns.
    pub step: usize,
    pub tests: Vec<Test>,
    pub histories: Vec<Trajectory>,
    pub matrix: DMatrix<f64>,
}

/// A chosen core matrix `K_h`: predictive-state columns of selected
/// reachable histories, with the 1->1 norm of its pseudoinverse.
#[derive(Debug, Clone)]
pub struct CoreMatrix {
    /// History length of the chosen core histories.
    pub step: usize,
    pub histories: Vec<Trajectory>,
    pub matrix: DMatrix<f64>,
    /// `||K_h^+||_{1->1}`; regularity at this step is its reciprocal.
    pub norm_pinv: f64,
}

/// Result of a lifting: the PSR model plus structural measurements.
#[derive(Debug, Clone)]
pub struct LiftReport {
    pub model: PsrModel,
    /// Max linearity-identity residual per step (held-out tests of length
    /// <= m + 1 against the exact oracle).
    pub residuals: Vec<f64>,
    /// Numerical rank of the predictive-state span per step h = 1..=He
    /// (histories of length h - 1).
    pub d_psr: Vec<usize>,
    /// sigma_min of the m-step emission matrix per step h = 1..=He.
    pub sigma_min: Vec<f64>,
    /// Measured regularity over the full reachable pool (greedy search).
    pub alpha: f64,
}

/// The m-step emission matrix `O_{h,m}`: rows indexed by m-step futures in
/// [`m_step_futures`] order, columns by states; entry `(t, s) = P(t | s_h =
/// s)` under the test's forced actions. Requires `h + m - 1 <= H`.
pub fn m_step_emission(pomdp: &Pomdp, h: usize, m: usize) -> Result<DMatrix<f64>> {
    if m == 0 || h == 0 || h + m - 1 > pomdp.horizon {
        return Err(Error::DimensionMismatch(format!(
            "m-step emission needs 1 <= h <= H - m + 1; got h={h}, m={m}, H={}",
            pomdp.horizon
        )));
    }
    let futures = m_step_futures(pomdp.n_obs, pomdp.n_act, m);
    let mut out = DMatrix::zeros(futures.len(), pomdp.n_states);
    for s in 0..pomdp.n_states {
        for (ti, t) in futures.iter().enumerate() {
            let mut b = DVector::zeros(pomdp.n_states);
            b[s] = 1.0;
            for (i, &o) in t.obs.iter().enumerate() {
                let step = h + i;
                for sp in 0..pomdp.n_states {
                    b[sp] *= pomdp.emit[step - 1][(o, sp)];
                }
                if i < t.act.len() {
                    b = &pomdp.trans[step - 1][t.act[i]] * b;
                }
            }
            out[(ti, s)] = b.sum();
        }
    }
    Ok(out)
}

/// `sigma_min(O_{h,m})` for each h in `1..=H-m+1`.
pub fn weakly_revealing_sigma(pomdp: &Pomdp, m: usize) -> Result<Vec<f64>> {
    (1..=pomdp.horizon + 1 - m)
        .map(|h| Ok(linalg::sigma_min(&m_step_emission(pomdp, h, m)?)))
        .collect()
}

fn lift_core_tests(pomdp: &Pomdp, m: usize) -> Result<(CoreTestSet, usize)> {
    if m == 0 || m > pomdp.horizon {
        return Err(Error::DimensionMismatch(format!(
            "lift window m={m} outside 1..={}",
            pomdp.horizon
        )));
    }
    let eff = pomdp.horizon - m + 1;
    let u = m_step_futures(pomdp.n_obs, pomdp.n_act, m);
    Ok((CoreTestSet::new(vec![u; eff])?, eff))
}

fn lift_rewards(pomdp: &Pomdp) -> crate::psr::Rewards {
    let mut r = crate::psr::Rewards::new();
    for (&(h, o, a), &v) in pomdp.rewards.iter() {
        r.set(h, o, a, v);
    }
    r
}

/// Lift via the weakly-revealing construction, returning only the model
/// (the fast path used by generators and learners).
pub fn lift_weakly_revealing_model(pomdp: &Pomdp, m: usize) -> Result<PsrModel> {
    let (core_tests, eff) = lift_core_tests(pomdp, m)?;
    let emissions: Vec<DMatrix<f64>> =
        (1..=eff).map(|h| m_step_emission(pomdp, h, m)).collect::<Result<_>>()?;
    for (hm1, e) in emissions.iter().enumerate() {
        let sv = linalg::singular_values(e);
        let smin = sv.last().copied().unwrap_or(0.0);
        if smin <= SVD_TOL {
            return Err(Error::NotWeaklyRevealing { step: hm1 + 1, sigma: smin });
        }
    }
    let q0 = &emissions[0] * &pomdp.mu1;
    let mut ops = Vec::with_capacity(eff - 1);
    for h in 1..eff {
        let pinv = linalg::pinv(&emissions[h - 1], SVD_TOL);
        let mut per_oa = Vec::with_capacity(pomdp.n_obs * pomdp.n_act);
        for o in 0..pomdp.n_obs {
            let emit_diag = DMatrix::from_diagonal(&pomdp.emit[h - 1].row(o).transpose());
            for a in 0..pomdp.n_act {
                // rows over states: m'_{(o,a,u),h} = O_{h+1,m} T_{h,a} diag(O_h(o|.))
                let m_prime = &emissions[h] * &pomdp.trans[h - 1][a] * &emit_diag;
                per_oa.push(&m_prime * &pinv);
            }
        }
        ops.push(per_oa);
    }
    PsrModel::new(
        pomdp.horizon,
        pomdp.n_obs,
        pomdp.n_act,
        core_tests,
        q0,
        ops,
        lift_rewards(pomdp),
    )
}

/// Coefficient vector `m_{t,h}` over `U_h` coordinates for an arbitrary test
/// `t` executed at step `h`, via the weakly-revealing construction. Tests
/// may run past the horizon under the dummy-observation convention.
pub fn test_coefficient(pomdp: &Pomdp, m: usize, h: usize, t: &Test) -> Result<DVector<f64>> {
    let emission = m_step_emission(pomdp, h, m)?;
    // m'_t over states: P(t | s_h = s), dummy steps contribute factor 1.
    let mut m_prime = DVector::zeros(pomdp.n_states);
    for s in 0..pomdp.n_states {
        let mut b = DVector::zeros(pomdp.n_states);
        b[s] = 1.0;
        let mut dead = false;
        for (i, &o) in t.obs.iter().enumerate() {
            let step = h + i;
            if step > pomdp.horizon {
                if o != pomdp.dummy_obs() {
                    dead = true;
                    break;
                }
                continue;
            }
            if o >= pomdp.n_obs {
                dead = true;
                break;
            }
            for sp in 0..pomdp.n_states {
                b[sp] *= pomdp.emit[step - 1][(o, sp)];
            }
            if i < t.act.len() && step <= pomdp.horizon - 1 {
                b = &pomdp.trans[step - 1][t.act[i]] * b;
            }
        }
        m_prime[s] = if dead { 0.0 } else { b.sum() };
    }
    Ok(linalg::pinv(&emission, SVD_TOL).transpose() * m_prime)
}

/// All tests of length `1..=max_len` executable after a history of length
/// `hist_len` (first test step is `hist_len + 1`). Steps past the horizon
/// carry only the dummy observation and a single placeholder action.
pub fn tests_after(pomdp: &Pomdp, hist_len: usize, max_len: usize) -> Vec<Test> {
    let mut out = Vec::new();
    for len in 1..=max_len {
        let mut obs = Vec::new();
        let mut act = Vec::new();
        gen_tests(pomdp, hist_len + 1, len, &mut obs, &mut act, &mut out);
    }
    out
}

fn gen_tests(
    pomdp: &Pomdp,
    start: usize,
    len: usize,
    obs: &mut Vec<usize>,
    act: &mut Vec<usize>,
    out: &mut Vec<Test>,
) {
    if obs.len() == len {
        out.push(Test { obs: obs.clone(), act: act.clone() });
        return;
    }
    let step = start + obs.len();
    let obs_choices: Vec<usize> = if step > pomdp.horizon {
        vec![pomdp.dummy_obs()]
    } else {
        (0..pomdp.n_obs).collect()
    };
    for o in obs_choices {
        obs.push(o);
        if obs.len() == len {
            gen_tests(pomdp, start, len, obs, act, out);
        } else {
            let act_choices: Vec<usize> = if step > pomdp.horizon - 1 {
                vec![0]
            } else {
                (0..pomdp.n_act).collect()
            };
            for a in act_choices {
                act.push(a);
                gen_tests(pomdp, start, len, obs, act, out);
                act.pop();
            }
        }
        obs.pop();
    }
}

/// All histories of length `h` over the POMDP's alphabets.
pub fn all_histories(pomdp: &Pomdp, h: usize) -> Vec<Trajectory> {
    let mut out = Vec::new();
    let mut traj = Trajectory::empty();
    fn rec(n_obs: usize, n_act: usize, h: usize, traj: &mut Trajectory, out: &mut Vec<Trajectory>) {
        if traj.len() == h {
            out.push(traj.clone());
            return;
        }
        for o in 0..n_obs {
            for a in 0..n_act {
                traj.push(o, a);
                rec(n_obs, n_act, h, traj, out);
                traj.obs.pop();
                traj.act.pop();
            }
        }
    }
    rec(pomdp.n_obs, pomdp.n_act, h, &mut traj, &mut out);
    out
}

/// Build `D_h`: rows are all tests up to `max_test_len` starting at step
/// `h + 1`, columns all length-`h` histories, entries `P(t | tau)`.
pub fn system_dynamics_matrix(
    pomdp: &Pomdp,
    h: usize,
    max_test_len: usize,
) -> Result<SystemDynamicsMatrix> {
    let tests = tests_after(pomdp, h, max_test_len);
    let n_hist = crate::budget::pow_sat(pomdp.n_obs * pomdp.n_act, h);
    crate::budget::check(n_hist.saturating_mul(tests.len()))?;
    let histories = all_histories(pomdp, h);
    let mut matrix = DMatrix::zeros(tests.len(), histories.len());
    for (j, tau) in histories.iter().enumerate() {
        for (i, t) in tests.iter().enumerate() {
            matrix[(i, j)] = pomdp.do_test_prob(tau, t)?;
        }
    }
    Ok(SystemDynamicsMatrix { step: h, tests, histories, matrix })
}

/// Numerical rank of a system dynamics matrix at relative cutoff `svd_tol`.
pub fn psr_rank(d: &SystemDynamicsMatrix, svd_tol: f64) -> usize {
    linalg::numerical_rank(&d.matrix, svd_tol)
}

/// Subset-selection mode for [`regularity_alpha`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlphaMode {
    /// Try every size-d subset of the pool (exact minimum over the pool).
    Exhaustive,
    /// Pivoted sigma_min-greedy selection plus local column swaps (an upper
    /// bound on the norm, hence a lower bound on alpha).
    Greedy,
}

/// Measure per-step core matrices and the regularity
/// `alpha = min_h 1 / ||K_h^+||_{1->1}` of a PSR model.
///
/// For each history length `h` in `0..=min(pool_depth, He-1)` the pool is
/// every reachable history's predictive state over `U_{h+1}`; `d` is the
/// numerical rank of the pool, and `d` columns are selected per `mode` to
/// minimize the pseudoinverse norm.
pub fn regularity_alpha(
    model: &PsrModel,
    history_pool_depth: usize,
    mode: AlphaMode,
) -> Result<(Vec<CoreMatrix>, f64)> {
    let max_h = history_pool_depth.min(model.eff_horizon() - 1);
    crate::budget::check(crate::budget::pow_sat(
        model.obs_count * model.act_count,
        max_h,
    ))?;
    let mut cores = Vec::with_capacity(max_h + 1);
    let mut alpha = f64::INFINITY;
    for h in 0..=max_h {
        let mut pool: Vec<(Trajectory, DVector<f64>)> = Vec::new();
        collect_reachable(model, h, &mut Trajectory::empty(), &mut pool);
        let dim = model.core_tests.size(h + 1);
        let mut pool_mat = DMatrix::zeros(dim, pool.len());
        for (j, (_, q)) in pool.iter().enumerate() {
            pool_mat.set_column(j, q);
        }
        let d = linalg::numerical_rank(&pool_mat, SVD_TOL);
        if d == 0 {
            return Err(Error::RankDeficientPool { step: h, rank: d });
        }
        let chosen = match mode {
            AlphaMode::Exhaustive => select_exhaustive(&pool_mat, d)
                .ok_or(Error::RankDeficientPool { step: h, rank: d })?,
            AlphaMode::Greedy => select_greedy(&pool_mat, d)
                .ok_or(Error::RankDeficientPool { step: h, rank: d })?,
        };
        let k = columns(&pool_mat, &chosen);
        let norm = linalg::norm_one_to_one(&linalg::pinv(&k, SVD_TOL));
        alpha = alpha.min(1.0 / norm);
        cores.push(CoreMatrix {
            step: h,
            histories: chosen.iter().map(|&j| pool[j].0.clone()).collect(),
            matrix: k,
            norm_pinv: norm,
        });
    }
    Ok((cores, alpha))
}

fn collect_reachable(
    model: &PsrModel,
    h: usize,
    traj: &mut Trajectory,
    pool: &mut Vec<(Trajectory, DVector<f64>)>,
) {
    if traj.len() == h {
        if let Ok(q) = model.predictive_state(traj) {
            pool.push((traj.clone(), q));
        }
        return;
    }
    for o in 0..model.obs_count {
        for a in 0..model.act_count {
            traj.push(o, a);
            collect_reachable(model, h, traj, pool);
            traj.obs.pop();
            traj.act.pop();
        }
    }
}

fn columns(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m.nrows(), idx.len());
    for (j, &c) in idx.iter().enumerate() {
        out.set_column(j, &m.column(c));
    }
    out
}

fn subset_norm(m: &DMatrix<f64>, idx: &[usize]) -> Option<f64> {
    let k = columns(m, idx);
    if linalg::numerical_rank(&k, SVD_TOL) < idx.len() {
        return None;
    }
    Some(linalg::norm_one_to_one(&linalg::pinv(&k, SVD_TOL)))
}

fn select_exhaustive(pool: &DMatrix<f64>, d: usize) -> Option<Vec<usize>> {
    let n = pool.ncols();
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut idx: Vec<usize> = (0..d).collect();
    loop {
        if let Some(norm) = subset_norm(pool, &idx) {
            if best.as_ref().map_or(true, |(b, _)| norm < *b) {
                best = Some((norm, idx.clone()));
            }
        }
        // next combination in lexicographic order
        let mut i = d;
        loop {
            if i == 0 {
                return best.map(|(_, c)| c);
            }
            i -= 1;
            if idx[i] < n - d + i {
                idx[i] += 1;
                for j in i + 1..d {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
        }
    }
}

fn select_greedy(pool: &DMatrix<f64>, d: usize) -> Option<Vec<usize>> {
    let n = pool.ncols();
    // pivoted selection: grow the set maximizing sigma_min at each step
    let mut chosen: Vec<usize> = Vec::with_capacity(d);
    for _ in 0..d {
        let mut best: Option<(f64, usize)> = None;
        for j in 0..n {
            if chosen.contains(&j) {
                continue;
            }
            let mut cand = chosen.clone();
            cand.push(j);
            let s = linalg::sigma_min(&columns(pool, &cand));
            if best.map_or(true, |(b, _)| s > b) {
                best = Some((s, j));
            }
        }
        chosen.push(best?.1);
    }
    let mut norm = subset_norm(pool, &chosen)?;
    // local swap refinement on the pseudoinverse norm
    let mut improved = true;
    while improved {
        improved = false;
        for slot in 0..d {
            for j in 0..n {
                if chosen.contains(&j) {
                    continue;
                }
                let old = chosen[slot];
                chosen[slot] = j;
                match subset_norm(pool, &chosen) {
                    Some(nn) if nn < norm - 1e-15 => {
                        norm = nn;
                        improved = true;
                    }
                    _ => chosen[slot] = old,
                }
            }
        }
    }
    Some(chosen)
}

/// A window-to-state decoder: keys are `(step, flat window encoding)` where
/// the window is `[o, a, o, a, ..., o]` covering steps
/// `max(h - m + 1, 1)..h`.
pub type Decoder = HashMap<(usize, Vec<usize>), usize>;

/// Result of scanning all reachable `(window, state)` pairs.
#[derive(Debug, Clone)]
pub struct DecodabilityReport {
    pub decodable: bool,
    pub decoder: Option<Decoder>,
    /// `(step, window, state_a, state_b)` witnessing ambiguity.
    pub conflict: Option<(usize, Vec<usize>, usize, usize)>,
}

/// Check whether the last-`m` observation window determines the latent
/// state on every reachable path, and return the induced decoder if so.
pub fn decodability_check(pomdp: &Pomdp, m: usize) -> Result<DecodabilityReport> {
    if m == 0 {
        return Err(Error::DimensionMismatch("decodability window m must be >= 1".into()));
    }
    crate::budget::check(crate::budget::pow_sat(
        pomdp.n_states * pomdp.n_obs * pomdp.n_act,
        pomdp.horizon,
    ))?;
    let mut decoder: Decoder = HashMap::new();
    let mut conflict: Option<(usize, Vec<usize>, usize, usize)> = None;
    let mut window: Vec<(usize, usize)> = Vec::new();
    for s in 0..pomdp.n_states {
        if pomdp.mu1[s] > 0.0 {
            decode_walk(pomdp, m, 1, s, &mut window, &mut decoder, &mut conflict);
        }
        if conflict.is_some() {
            break;
        }
    }
    Ok(match conflict {
        Some(c) => DecodabilityReport { decodable: false, decoder: None, conflict: Some(c) },
        None => DecodabilityReport { decodable: true, decoder: Some(decoder), conflict: None },
    })
}

fn decode_walk(
    pomdp: &Pomdp,
    m: usize,
    h: usize,
    s: usize,
    window: &mut Vec<(usize, usize)>,
    decoder: &mut Decoder,
    conflict: &mut Option<(usize, Vec<usize>, usize, usize)>,
) {
    for o in 0..pomdp.n_obs {
        if pomdp.emit[h - 1][(o, s)] <= 0.0 {
            continue;
        }
        // z_h = ((o,a) pairs from steps max(h-m+1,1)..h-1, o_h)
        let keep = (m - 1).min(window.len());
        let mut z: Vec<usize> = Vec::with_capacity(2 * keep + 1);
        for &(wo, wa) in &window[window.len() - keep..] {
            z.push(wo);
            z.push(wa);
        }
        z.push(o);
        match decoder.get(&(h, z.clone())) {
            Some(&prev) if prev != s => {
                *conflict = Some((h, z, prev, s));
                return;
            }
            Some(_) => {}
            None => {
                decoder.insert((h, z), s);
            }
        }
        if h == pomdp.horizon {
            continue;
        }
        for a in 0..pomdp.n_act {
            for sp in 0..pomdp.n_states {
                if pomdp.trans[h - 1][a][(sp, s)] <= 0.0 {
                    continue;
                }
                window.push((o, a));
                decode_walk(pomdp, m, h + 1, sp, window, decoder, conflict);
                window.pop();
                if conflict.is_some() {
                    return;
                }
            }
        }
    }
}

/// Coefficient vector over `U_h` (m-step futures) for test `t` at step `h`
/// under the decodable construction: tests no longer than `m` aggregate
/// matching futures with a canonical action completion; longer tests pin
/// their m-step prefix and multiply decoded-state continuation factors.
pub fn decodable_coefficient(
    pomdp: &Pomdp,
    decoder: &Decoder,
    m: usize,
    h: usize,
    t: &Test,
) -> Result<DVector<f64>> {
    let futures = m_step_futures(pomdp.n_obs, pomdp.n_act, m);
    let w = t.len();
    let mut coeff = DVector::zeros(futures.len());
    if w <= m {
        // indicator aggregation over futures extending t, restricted to one
        // canonical action completion per the first match
        let matches = |u: &Test| u.obs[..w] == t.obs[..] && u.act[..w - 1] == t.act[..w - 1];
        if let Some(first) = futures.iter().find(|u| matches(u)) {
            let canon = first.act.clone();
            for (i, u) in futures.iter().enumerate() {
                if matches(u) && u.act == canon {
                    coeff[i] = 1.0;
                }
            }
        }
        return Ok(coeff);
    }
    // prefix future u* = first m observations / m-1 actions of t
    let prefix = Test { obs: t.obs[..m].to_vec(), act: t.act[..m - 1].to_vec() };
    let idx = futures
        .iter()
        .position(|u| *u == prefix)
        .ok_or_else(|| Error::DimensionMismatch("test prefix is not an m-step future".into()))?;
    let mut c = 1.0;
    for j in m..w {
        // continuation: action t.act[j-1] at step h+j-1, observe t.obs[j]
        // at step h+j; the state at step h+j-1 is decoded from t's window
        let step = h + j - 1;
        if step + 1 > pomdp.horizon {
            // past the horizon only the dummy observation can occur
            if t.obs[j] != pomdp.dummy_obs() {
                return Ok(coeff);
            }
            continue;
        }
        // window pairs cover steps (h+j-m)..(h+j-2), i.e. t indices
        // (j-m)..(j-2); since j >= m these are always inside t
        let mut z = Vec::new();
        for i in (j - m)..(j - 1) {
            z.push(t.obs[i]);
            z.push(t.act[i]);
        }
        z.push(t.obs[j - 1]);
        let s = match decoder.get(&(step, z)) {
            Some(&s) => s,
            // window never occurs on any reachable path: the whole test has
            // probability zero after every reachable history
            None => return Ok(coeff),
        };
        let a = t.act[j - 1];
        c *= (0..pomdp.n_states)
            .map(|sp| pomdp.emit[step][(t.obs[j], sp)] * pomdp.trans[step - 1][a][(sp, s)])
            .sum::<f64>();
        if c == 0.0 {
            return Ok(coeff);
        }
    }
    coeff[idx] = c;
    Ok(coeff)
}

/// Shared diagnostics once a lifted model exists: per-step linearity
/// residuals against the oracle, per-step predictive-span rank, and
/// greedy-measured regularity.
fn finish_report(
    pomdp: &Pomdp,
    model: PsrModel,
    sigma_min: Vec<f64>,
    coeff: impl Fn(usize, &Test) -> Result<DVector<f64>>,
    held_out_len: usize,
) -> Result<LiftReport> {
    let eff = model.eff_horizon();
    let mut residuals = Vec::with_capacity(eff);
    let mut d_psr = Vec::with_capacity(eff);
    for h in 1..=eff {
        let histories: Vec<Trajectory> = all_histories(pomdp, h - 1)
            .into_iter()
            .filter(|tau| pomdp.do_history_prob(tau).map(|p| p > REACH_TOL).unwrap_or(false))
            .collect();
        let u_h = model.core_tests.tests(h).to_vec();
        let mut pool = DMatrix::zeros(u_h.len(), histories.len());
        let mut res: f64 = 0.0;
        let tests = tests_after(pomdp, h - 1, held_out_len);
        for (j, tau) in histories.iter().enumerate() {
            let q = pomdp.predictive_state(tau, &u_h)?;
            pool.set_column(j, &q);
            for t in &tests {
                let m_t = coeff(h, t)?;
                let predicted = m_t.dot(&q);
                let truth = pomdp.do_test_prob(tau, t)?;
                res = res.max((predicted - truth).abs());
            }
        }
        residuals.push(res);
        d_psr.push(linalg::numerical_rank(&pool, SVD_TOL));
    }
    let (_, alpha) = regularity_alpha(&model, eff - 1, AlphaMode::Greedy)?;
    Ok(LiftReport { model, residuals, d_psr, sigma_min, alpha })
}

/// Lift an m-step weakly-revealing POMDP to a PSR, with full diagnostics.
pub fn lift_weakly_revealing(pomdp: &Pomdp, m: usize) -> Result<LiftReport> {
    let model = lift_weakly_revealing_model(pomdp, m)?;
    let sigma = weakly_revealing_sigma(pomdp, m)?;
    finish_report(
        pomdp,
        model,
        sigma,
        |h, t| test_coefficient(pomdp, m, h, t),
        m + 1,
    )
}

/// Lift an m-step decodable POMDP to a PSR via the decoded-state
/// construction; `decoder` overrides the one induced by enumeration.
pub fn lift_decodable(pomdp: &Pomdp, m: usize, decoder: Option<Decoder>) -> Result<LiftReport> {
    let decoder = match decoder {
        Some(d) => d,
        None => {
            let report = decodability_check(pomdp, m)?;
            match report.decoder {
                Some(d) => d,
                None => {
                    let (step, window, s1, s2) = report.conflict.unwrap();
                    let _ = step;
                    return Err(Error::NotDecodable { m, window, s1, s2 });
                }
            }
        }
    };
    let (core_tests, eff) = lift_core_tests(pomdp, m)?;
    let futures = m_step_futures(pomdp.n_obs, pomdp.n_act, m);
    let q0 = pomdp.predictive_state(&Trajectory::empty(), &futures)?;
    let mut ops = Vec::with_capacity(eff - 1);
    for h in 1..eff {
        let mut per_oa = Vec::with_capacity(pomdp.n_obs * pomdp.n_act);
        for o in 0..pomdp.n_obs {
            for a in 0..pomdp.n_act {
                let mut mat = DMatrix::zeros(futures.len(), futures.len());
                for (r, u) in futures.iter().enumerate() {
                    let mut obs = vec![o];
                    obs.extend_from_slice(&u.obs);
                    let mut act = vec![a];
                    act.extend_from_slice(&u.act);
                    let row = decodable_coefficient(
                        pomdp,
                        &decoder,
                        m,
                        h,
                        &Test { obs, act },
                    )?;
                    mat.set_row(r, &row.transpose());
                }
                per_oa.push(mat);
            }
        }
        ops.push(per_oa);
    }
    let model = PsrModel::new(
        pomdp.horizon,
        pomdp.n_obs,
        pomdp.n_act,
        core_tests,
        q0,
        ops,
        lift_rewards(pomdp),
    )?;
    let sigma = weakly_revealing_sigma(pomdp, m)?;
    finish_report(
        pomdp,
        model,
        sigma,
        |h, t| decodable_coefficient(pomdp, &decoder, m, h, t),
        m + 1,
    )
}
