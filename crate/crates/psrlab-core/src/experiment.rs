//! Experiment orchestration: strict JSON configs, multi-seed learner runs,
//! trace CSVs, summary JSON, and the structural diagnosis report.
//!
//! Outputs are deterministic functions of the config: timings default to
//! zero in traces, seeds fully determine models and episode streams, and
//! the summary embeds a hash of the canonical config.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::crane::{crane_run, mixture_policy_eval, CraneOptions, Dataset, ModelClass};
use crate::env::{lock_family, lock_family_index, make_lock, random_pomdp, Environment, GeneratorSpec};
use crate::error::{Error, Result};
use crate::lift::{self, lift_weakly_revealing_model};
use crate::pomdp::Pomdp;
use crate::psr::PsrModel;
use crate::SVD_TOL;

/// Where the ground-truth environment comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum EnvironmentSpec {
    /// POMDP JSON file on disk.
    File { path: PathBuf },
    /// A seeded random family instance.
    Generator(GeneratorSpec),
    /// The combinatorial lock.
    Lock { alpha: f64, act: usize, horizon: usize, seed: u64 },
}

/// How the candidate class is built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum ModelClassSpec {
    /// Explicit PSR model files; `fstar_index` marks the true model when
    /// known.
    Files { paths: Vec<PathBuf>, fstar_index: Option<usize> },
    /// All locks sharing the environment lock's alpha (requires a lock
    /// environment); the true model's index is derived from the seed.
    LockFamily,
    /// The lifted truth plus one candidate per epsilon, each the lift of
    /// the environment POMDP with dynamics blended toward uniform by
    /// epsilon. Truth sits at index 0.
    PerturbationGrid { epsilons: Vec<f64> },
}

/// Full experiment description; unknown keys are parse errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub environment: EnvironmentSpec,
    pub model_class: ModelClassSpec,
    /// Lifting window for POMDP environments.
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(rename = "K")]
    pub k: usize,
    /// Multiplier on the log confidence radius.
    #[serde(default = "default_c")]
    pub c: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Regularity floor candidates must clear during pre-processing.
    #[serde(default)]
    pub alpha_floor: f64,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub diagnostics: bool,
    /// Record wall-clock in traces (breaks byte-reproducibility).
    #[serde(default)]
    pub record_timings: bool,
    pub out_dir: PathBuf,
}

fn default_m() -> usize {
    1
}
fn default_c() -> f64 {
    1.0
}
fn default_delta() -> f64 {
    0.05
}

/// Strict parse of a config file.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Parse("seeds must be nonempty".into()));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::Parse(format!("delta = {} outside (0, 1]", self.delta)));
        }
        Ok(())
    }

    /// Canonical serialization hash embedded in summaries. The output
    /// directory is excluded so the hash identifies the experiment itself,
    /// not where its files land.
    pub fn sha256(&self) -> String {
        let mut canonical = self.clone();
        canonical.out_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        let mut h = Sha256::new();
        h.update(&bytes);
        format!("{:x}", h.finalize())
    }
}

/// The instantiated experiment inputs shared by all seeds.
pub struct Prepared {
    pub pomdp: Pomdp,
    pub class: ModelClass,
    pub truth: PsrModel,
    pub beta: f64,
}

fn build_environment(spec: &EnvironmentSpec) -> Result<Pomdp> {
    match spec {
        EnvironmentSpec::File { path } => Pomdp::load(path),
        EnvironmentSpec::Generator(g) => random_pomdp(g),
        EnvironmentSpec::Lock { alpha, act, horizon, seed } => {
            make_lock(*alpha, *act, *horizon, *seed)
        }
    }
}

fn blend_toward_uniform(pomdp: &Pomdp, eps: f64) -> Pomdp {
    let mut out = pomdp.clone();
    let us = 1.0 / pomdp.n_states as f64;
    let uo = 1.0 / pomdp.n_obs as f64;
    for per_a in &mut out.trans {
        for t in per_a {
            for v in t.iter_mut() {
                *v = (1.0 - eps) * *v + eps * us;
            }
        }
    }
    for e in &mut out.emit {
        for v in e.iter_mut() {
            *v = (1.0 - eps) * *v + eps * uo;
        }
    }
    for v in out.mu1.iter_mut() {
        *v = (1.0 - eps) * *v + eps * us;
    }
    out
}

/// Build the POMDP, lifted truth, candidate class, and beta from a config.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let pomdp = build_environment(&cfg.environment)?;
    let truth = lift_weakly_revealing_model(&pomdp, cfg.m)?;
    let (models, fstar) = match &cfg.model_class {
        ModelClassSpec::Files { paths, fstar_index } => {
            let mut models = Vec::with_capacity(paths.len());
            for p in paths {
                models.push(PsrModel::load(p)?);
            }
            (models, *fstar_index)
        }
        ModelClassSpec::LockFamily => match &cfg.environment {
            EnvironmentSpec::Lock { alpha, act, horizon, seed } => {
                let family = lock_family(*alpha, *act, *horizon)?;
                let mut models = Vec::with_capacity(family.len());
                for p in &family {
                    models.push(lift_weakly_revealing_model(p, cfg.m)?);
                }
                (models, Some(lock_family_index(*act, *horizon, *seed)))
            }
            _ => {
                return Err(Error::Parse(
                    "model_class lock_family requires a lock environment".into(),
                ))
            }
        },
        ModelClassSpec::PerturbationGrid { epsilons } => {
            let mut models = vec![truth.clone()];
            for &eps in epsilons {
                models.push(lift_weakly_revealing_model(
                    &blend_toward_uniform(&pomdp, eps),
                    cfg.m,
                )?);
            }
            (models, Some(0))
        }
    };
    let n_class = models.len();
    let mut class = ModelClass::from_models(models)?;
    class.fstar_index = fstar;
    class.preprocess(cfg.alpha_floor)?;
    let shared = &class.candidates[0].model;
    let u_a = shared.core_tests.max_action_seqs().max(1);
    let beta = cfg.c
        * ((n_class as f64) * (cfg.k.max(1) as f64) * (shared.horizon as f64) * (u_a as f64)
            / cfg.delta)
            .ln();
    Ok(Prepared { pomdp, class, truth, beta })
}

/// Per-seed outcome used in summaries.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub final_cum_regret: f64,
    /// Mean per-episode regret over the last min(50, K) iterations.
    pub last50_avg_regret: f64,
    pub mixture_value: f64,
    /// Fraction of iterations with the true model inside the set.
    pub fstar_rate: Option<f64>,
}

/// Aggregated experiment result; everything is recomputable from the
/// per-seed rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryReport {
    pub config_sha256: String,
    pub version: String,
    pub beta: f64,
    pub v_star: f64,
    pub per_seed: Vec<SeedOutcome>,
    pub aggregate: Aggregate,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Aggregate {
    pub median_final_regret: f64,
    pub iqr_final_regret: (f64, f64),
    pub median_last50_avg_regret: f64,
    pub median_mixture_value: f64,
    pub mean_fstar_rate: Option<f64>,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Fixed trace CSV header.
pub const TRACE_COLUMNS: [&str; 10] = [
    "k",
    "V_star",
    "V_pik_true",
    "V_pik_optimistic",
    "conf_set_size",
    "fstar_in_set",
    "cum_regret",
    "tv_max",
    "b_err_max",
    "wall_ms",
];

/// Write a trace as CSV with the fixed [`TRACE_COLUMNS`] layout.
pub fn write_trace_csv(path: &Path, trace: &crate::crane::RegretTrace) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(TRACE_COLUMNS)?;
    for row in &trace.rows {
        w.write_record([
            row.k.to_string(),
            fmt_opt(row.v_star),
            fmt_opt(row.v_pik_true),
            row.v_pik_optimistic.to_string(),
            row.conf_set_size.to_string(),
            row.fstar_in_set.map(|b| b.to_string()).unwrap_or_default(),
            fmt_opt(row.cum_regret),
            fmt_opt(row.tv_max),
            fmt_opt(row.b_err_max),
            row.wall_ms.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Run the experiment: one learner run per seed, traces to
/// `out_dir/trace_seed<seed>.csv`, summary to `out_dir/summary.json`. On a
/// per-seed failure the completed traces are kept, a failure manifest is
/// written, and the first error propagates.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<SummaryReport> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let prepared = prepare(cfg)?;
    let v_star = crate::psr::optimal_policy(&prepared.truth)?.1;
    let options = CraneOptions {
        truth: Some(prepared.truth.clone()),
        diagnostics: cfg.diagnostics,
        record_timings: cfg.record_timings,
    };
    let mut per_seed = Vec::with_capacity(cfg.seeds.len());
    let mut failures: Vec<(u64, String)> = Vec::new();
    for &seed in &cfg.seeds {
        let mut env = Environment::new(prepared.pomdp.clone(), seed);
        let mut data = Dataset::new();
        let run = crane_run(&mut env, &prepared.class, &mut data, cfg.k, prepared.beta, &options);
        match run {
            Ok(trace) => {
                write_trace_csv(
                    &cfg.out_dir.join(format!("trace_seed{seed}.csv")),
                    &trace,
                )?;
                let final_cum = trace
                    .rows
                    .last()
                    .and_then(|r| r.cum_regret)
                    .unwrap_or(0.0);
                let tail = 50.min(trace.rows.len()).max(1);
                let last50: f64 = if trace.rows.is_empty() {
                    0.0
                } else {
                    trace.rows[trace.rows.len() - tail..]
                        .iter()
                        .map(|r| v_star - r.v_pik_true.unwrap_or(v_star))
                        .sum::<f64>()
                        / tail as f64
                };
                let mixture = if trace.policies.is_empty() {
                    0.0
                } else {
                    mixture_policy_eval(&trace.policies, &prepared.truth)?
                };
                let fstar_rate = if trace.rows.iter().all(|r| r.fstar_in_set.is_some()) {
                    if trace.rows.is_empty() {
                        None
                    } else {
                        Some(
                            trace.rows.iter().filter(|r| r.fstar_in_set == Some(true)).count()
                                as f64
                                / trace.rows.len() as f64,
                        )
                    }
                } else {
                    None
                };
                per_seed.push(SeedOutcome {
                    seed,
                    final_cum_regret: final_cum,
                    last50_avg_regret: last50,
                    mixture_value: mixture,
                    fstar_rate,
                });
            }
            Err(e) => failures.push((seed, e.to_string())),
        }
    }
    if !failures.is_empty() {
        let manifest = json!({
            "failed_seeds": failures
                .iter()
                .map(|(s, e)| json!({"seed": s, "error": e}))
                .collect::<Vec<_>>(),
        });
        std::fs::write(
            cfg.out_dir.join("failures.json"),
            serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
        )?;
        return Err(Error::InvalidModel(format!(
            "{} seed(s) failed; see failures.json (first: seed {} -> {})",
            failures.len(),
            failures[0].0,
            failures[0].1
        )));
    }
    let mut finals: Vec<f64> = per_seed.iter().map(|s| s.final_cum_regret).collect();
    finals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut last50s: Vec<f64> = per_seed.iter().map(|s| s.last50_avg_regret).collect();
    last50s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut mixtures: Vec<f64> = per_seed.iter().map(|s| s.mixture_value).collect();
    mixtures.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rates: Vec<f64> = per_seed.iter().filter_map(|s| s.fstar_rate).collect();
    let report = SummaryReport {
        config_sha256: cfg.sha256(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        beta: prepared.beta,
        v_star,
        aggregate: Aggregate {
            median_final_regret: quantile(&finals, 0.5),
            iqr_final_regret: (quantile(&finals, 0.25), quantile(&finals, 0.75)),
            median_last50_avg_regret: quantile(&last50s, 0.5),
            median_mixture_value: quantile(&mixtures, 0.5),
            mean_fstar_rate: if rates.len() == per_seed.len() && !rates.is_empty() {
                Some(rates.iter().sum::<f64>() / rates.len() as f64)
            } else {
                None
            },
        },
        per_seed,
    };
    std::fs::write(
        cfg.out_dir.join("summary.json"),
        serde_json::to_string_pretty(&report).expect("summary serializes"),
    )?;
    Ok(report)
}

/// Recompute aggregate statistics from the trace CSVs in a directory.
pub fn summarize(dir: &Path) -> Result<serde_json::Value> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .map(|n| n.starts_with("trace_seed") && n.ends_with(".csv"))
                .unwrap_or(false)
        })
        .collect();
    entries.sort();
    let mut per_trace = Vec::new();
    let mut finals = Vec::new();
    for path in &entries {
        let mut rdr = csv::Reader::from_path(path)?;
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != TRACE_COLUMNS {
            return Err(Error::Parse(format!(
                "{}: unexpected trace columns {:?}",
                path.display(),
                headers
            )));
        }
        let mut rows = 0usize;
        let mut last_cum: Option<f64> = None;
        let mut fstar_hits = 0usize;
        let mut fstar_known = 0usize;
        for rec in rdr.records() {
            let rec = rec?;
            rows += 1;
            if let Some(v) = rec.get(6).filter(|s| !s.is_empty()) {
                last_cum =
                    Some(v.parse().map_err(|_| Error::Parse(format!("bad cum_regret {v:?}")))?);
            }
            match rec.get(5) {
                Some("true") => {
                    fstar_known += 1;
                    fstar_hits += 1;
                }
                Some("false") => fstar_known += 1,
                _ => {}
            }
        }
        if let Some(c) = last_cum {
            finals.push(c);
        }
        per_trace.push(json!({
            "file": path.file_name().unwrap().to_str(),
            "iterations": rows,
            "final_cum_regret": last_cum,
            "fstar_rate": if fstar_known > 0 {
                Some(fstar_hits as f64 / fstar_known as f64)
            } else {
                None
            },
        }));
    }
    finals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(json!({
        "traces": per_trace,
        "median_final_regret": if finals.is_empty() { None } else { Some(quantile(&finals, 0.5)) },
        "iqr_final_regret": if finals.is_empty() {
            None
        } else {
            Some((quantile(&finals, 0.25), quantile(&finals, 0.75)))
        },
    }))
}

/// Structural report for a POMDP or PSR model file: per-step rank and
/// sigma_min, regularity, decodability, and validity.
pub fn diagnose_model(path: &Path, m: usize, depth: usize) -> Result<serde_json::Value> {
    let text = std::fs::read_to_string(path)?;
    let probe: serde_json::Value = serde_json::from_str(&text)?;
    if probe.get("S").is_some() {
        let pomdp = Pomdp::from_json(&text)?;
        let sigma = lift::weakly_revealing_sigma(&pomdp, m)?;
        let decod = lift::decodability_check(&pomdp, m)?;
        let lifted = lift::lift_weakly_revealing(&pomdp, m);
        let mut report = BTreeMap::new();
        report.insert("kind".to_string(), json!("pomdp"));
        report.insert("sigma_min".to_string(), json!(sigma));
        report.insert("decodable".to_string(), json!(decod.decodable));
        match lifted {
            Ok(rep) => {
                report.insert("d_psr".to_string(), json!(rep.d_psr));
                report.insert("alpha".to_string(), json!(rep.alpha));
                report.insert("residual_max".to_string(), json!(rep.residuals));
                let validity = crate::psr::validate_psr(&rep.model)?;
                report.insert("lift_valid".to_string(), json!(validity.ok()));
                report.insert("lift_validity_detail".to_string(), json!(validity.describe()));
            }
            Err(e) => {
                report.insert("lift_error".to_string(), json!(e.to_string()));
            }
        }
        Ok(json!(report))
    } else {
        let model = PsrModel::from_json(&text)?;
        let validity = crate::psr::validate_psr(&model)?;
        let depth = depth.min(model.eff_horizon() - 1);
        let alpha = lift::regularity_alpha(&model, depth, lift::AlphaMode::Greedy)
            .map(|(cores, a)| {
                json!({
                    "alpha": a,
                    "norms": cores.iter().map(|c| c.norm_pinv).collect::<Vec<_>>(),
                })
            })
            .unwrap_or_else(|e| json!({ "error": e.to_string() }));
        Ok(json!({
            "kind": "psr",
            "valid": validity.ok(),
            "validity_detail": validity.describe(),
            "svd_tol": SVD_TOL,
            "regularity": alpha,
        }))
    }
}
