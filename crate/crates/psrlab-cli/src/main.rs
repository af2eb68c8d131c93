//! `psrlab`: lift POMDPs to PSRs, diagnose structure, generate instances,
//! simulate episodes, plan, and run optimistic-MLE learning experiments.
//!
//! Exit codes: 0 success, 2 parse/config error, 3 enumeration budget
//! exceeded, 4 invalid model.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use psrlab_core::crane::{crane_run, CraneOptions, Dataset, ModelClass};
use psrlab_core::env::{
    lock_family, lock_family_index, make_decodable, make_lock, random_lowrank_pomdp,
    random_pomdp, Environment, Family, GeneratorSpec,
};
use psrlab_core::experiment::{
    self, diagnose_model, parse_config, run_experiment, summarize, TRACE_COLUMNS,
};
use psrlab_core::lift::{lift_decodable, lift_weakly_revealing, LiftReport};
use psrlab_core::psr::optimal_policy;
use psrlab_core::{Error, Policy, Pomdp, PsrModel, Result};

#[derive(Parser)]
#[command(name = "psrlab", version, about = "Linear PSR toolkit", long_about = None)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Lift a POMDP file to a PSR model and report structure.
    Lift {
        /// POMDP JSON file.
        #[arg(long)]
        pomdp: PathBuf,
        /// Core-test window length.
        #[arg(long, default_value_t = 1)]
        m: usize,
        /// Use the decodable construction instead of weakly-revealing.
        #[arg(long)]
        decodable: bool,
        /// Write the lifted PSR model here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Structural report for a POMDP or PSR model file.
    Diagnose {
        file: PathBuf,
        #[arg(long, default_value_t = 1)]
        m: usize,
        /// History-pool depth for regularity measurement.
        #[arg(long, default_value_t = 8)]
        depth: usize,
    },
    /// Generate a combinatorial-lock POMDP.
    MakeLock {
        #[arg(long)]
        alpha: f64,
        #[arg(long, default_value_t = 2)]
        act: usize,
        #[arg(long)]
        horizon: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a random POMDP from a generator-spec JSON file.
    MakeRandom {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stream simulated episodes as JSON lines.
    Simulate {
        #[arg(long)]
        pomdp: PathBuf,
        /// Policy JSON file; uniform when omitted.
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compute the optimal policy and value of a PSR model.
    Plan {
        model: PathBuf,
        /// Write the tabular policy as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the optimistic-MLE learner against an environment.
    RunCrane {
        /// Ground-truth POMDP JSON file.
        #[arg(long)]
        env: PathBuf,
        /// Candidate class: a directory of PSR JSON files, or a
        /// generator-spec JSON file with family "lock" (builds the full
        /// lock family around the generated truth).
        #[arg(long)]
        class: PathBuf,
        #[arg(long, default_value_t = 1)]
        m: usize,
        #[arg(short = 'K', long = "K", default_value_t = 100)]
        k: usize,
        /// Multiplier c in beta = c log(|F| K H |U_A| / delta).
        #[arg(long, default_value_t = 1.0)]
        beta_c: f64,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
        #[arg(long, default_value_t = 0.0)]
        alpha_floor: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        diagnostics: bool,
        /// Trace CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a multi-seed experiment from a config file.
    RunExperiment {
        #[arg(long)]
        config: PathBuf,
    },
    /// Aggregate trace CSVs from an experiment output directory.
    Summarize {
        #[arg(long)]
        dir: PathBuf,
    },
}

fn report_json(report: &LiftReport) -> serde_json::Value {
    json!({
        "model": serde_json::from_str::<serde_json::Value>(&report.model.to_json()).unwrap(),
        "residuals": report.residuals,
        "d_psr": report.d_psr,
        "sigma_min": report.sigma_min,
        "alpha": report.alpha,
    })
}

fn load_class(path: &Path, env: &Pomdp, m: usize) -> Result<ModelClass> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().map(|x| x == "json").unwrap_or(false))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::Parse(format!("{}: no .json model files", path.display())));
        }
        let mut models = Vec::with_capacity(files.len());
        for f in &files {
            models.push(PsrModel::load(f)?);
        }
        ModelClass::from_models(models)
    } else {
        let spec: GeneratorSpec =
            serde_json::from_str(&std::fs::read_to_string(path)?).map_err(Error::from)?;
        if spec.family != Family::Lock {
            return Err(Error::Parse(
                "class generator spec must have family \"lock\"".into(),
            ));
        }
        let alpha = spec
            .alpha
            .ok_or_else(|| Error::Parse("lock generator spec needs alpha".into()))?;
        let family = lock_family(alpha, spec.act, spec.horizon)?;
        let mut models = Vec::with_capacity(family.len());
        for p in &family {
            models.push(psrlab_core::lift::lift_weakly_revealing_model(p, m)?);
        }
        let mut class = ModelClass::from_models(models)?;
        let truth = make_lock(alpha, spec.act, spec.horizon, spec.seed)?;
        if truth == *env {
            class.fstar_index = Some(lock_family_index(spec.act, spec.horizon, spec.seed));
        }
        Ok(class)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Lift { pomdp, m, decodable, out } => {
            let p = Pomdp::load(&pomdp)?;
            let report =
                if decodable { lift_decodable(&p, m, None)? } else { lift_weakly_revealing(&p, m)? };
            if let Some(out) = out {
                report.model.save(&out)?;
            }
            println!("{}", serde_json::to_string_pretty(&report_json(&report)).unwrap());
        }
        Command::Diagnose { file, m, depth } => {
            let report = diagnose_model(&file, m, depth)?;
            println!("{}", serde_json::to_string_pretty(&report).unwrap());
        }
        Command::MakeLock { alpha, act, horizon, seed, out } => {
            make_lock(alpha, act, horizon, seed)?.save(&out)?;
        }
        Command::MakeRandom { spec, out } => {
            let spec: GeneratorSpec =
                serde_json::from_str(&std::fs::read_to_string(&spec)?).map_err(Error::from)?;
            let pomdp = match spec.family {
                Family::Lock => {
                    let alpha = spec
                        .alpha
                        .ok_or_else(|| Error::Parse("lock family needs alpha".into()))?;
                    make_lock(alpha, spec.act, spec.horizon, spec.seed)?
                }
                Family::RandomRevealing => random_pomdp(&spec)?,
                Family::RandomLowrank => random_lowrank_pomdp(&spec)?.0,
                Family::RandomDecodable => make_decodable(&spec)?.0,
            };
            pomdp.save(&out)?;
        }
        Command::Simulate { pomdp, policy, episodes, seed } => {
            let p = Pomdp::load(&pomdp)?;
            let pol: Policy = match policy {
                Some(path) => serde_json::from_str(&std::fs::read_to_string(&path)?)
                    .map_err(Error::from)?,
                None => Policy::Uniform,
            };
            let mut env = Environment::new(p, seed);
            let stdout = std::io::stdout();
            for _ in 0..episodes {
                let (traj, reward) = env.simulate_episode(&pol);
                use std::io::Write;
                writeln!(
                    stdout.lock(),
                    "{}",
                    json!({"obs": traj.obs, "act": traj.act, "reward": reward})
                )?;
            }
        }
        Command::Plan { model, out } => {
            let m = PsrModel::load(&model)?;
            let (pol, v) = optimal_policy(&m)?;
            if let Some(out) = out {
                std::fs::write(&out, serde_json::to_string_pretty(&pol).unwrap())?;
            }
            println!("{}", json!({ "value": v }));
        }
        Command::RunCrane {
            env,
            class,
            m,
            k,
            beta_c,
            delta,
            alpha_floor,
            seed,
            diagnostics,
            out,
        } => {
            let pomdp = Pomdp::load(&env)?;
            let mut class = load_class(&class, &pomdp, m)?;
            class.preprocess(alpha_floor)?;
            let truth = psrlab_core::lift::lift_weakly_revealing_model(&pomdp, m)?;
            let shared = &class.candidates[0].model;
            let u_a = shared.core_tests.max_action_seqs().max(1);
            let beta = beta_c
                * ((class.len() as f64) * (k.max(1) as f64) * (shared.horizon as f64)
                    * (u_a as f64)
                    / delta)
                    .ln();
            let mut environment = Environment::new(pomdp, seed);
            let mut data = Dataset::new();
            let options =
                CraneOptions { truth: Some(truth), diagnostics, record_timings: false };
            let trace = crane_run(&mut environment, &class, &mut data, k, beta, &options)?;
            experiment::write_trace_csv(&out, &trace)?;
            let last = trace.rows.last();
            println!(
                "{}",
                json!({
                    "iterations": trace.rows.len(),
                    "beta": beta,
                    "episodes": data.len(),
                    "final_cum_regret": last.and_then(|r| r.cum_regret),
                    "columns": TRACE_COLUMNS,
                })
            );
        }
        Command::RunExperiment { config } => {
            let cfg = parse_config(&config)?;
            let report = run_experiment(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&report).unwrap());
        }
        Command::Summarize { dir } => {
            let report = summarize(&dir)?;
            println!("{}", serde_json::to_string_pretty(&report).unwrap());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
