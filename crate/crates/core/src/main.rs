use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use fedsea::acceptance;
use fedsea::bounds::audit_lemma2;
use fedsea::engine::Simulation;
use fedsea::harness::{
    emit_outputs, emit_speedup, emit_sweep, emit_tau, prepare, run_prepared, run_sweep,
    speedup_study, tau_study, with_threads, SweepSpec,
};
use fedsea::step_size::drift_cap;
use fedsea::{ExperimentConfig, FedSeaError, Result};

#[derive(Parser)]
#[command(
    name = "fedsea",
    version,
    about = "Online federated averaging simulator and regret analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(clap::Args)]
struct Common {
    /// Config (or sweep spec) in JSON.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "fedsea-out")]
    out: PathBuf,
    /// Override the number of replicates.
    #[arg(long, global = true)]
    replicates: Option<usize>,
    /// Override the seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[arg(long, global = true, value_enum, default_value_t = Toggle::On)]
    plots: Toggle,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration.
    Run,
    /// Run a sweep spec.
    Sweep,
    /// Regret against the number of clients.
    Speedup {
        #[arg(long, value_delimiter = ',', default_value = "1,4,16")]
        clients: Vec<usize>,
    },
    /// Regret against the synchronization period.
    TauStudy {
        #[arg(long, value_delimiter = ',', default_value = "1,4,16,64")]
        periods: Vec<usize>,
    },
    /// Lemma audits on one replicate, including frozen-state resampling.
    Audit {
        /// Number of frozen states.
        #[arg(long, default_value_t = 10)]
        states: usize,
        /// Monte Carlo budget per frozen state.
        #[arg(long, default_value_t = 100_000)]
        budget: usize,
    },
    /// Run the acceptance suite.
    Selftest,
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| FedSeaError::Config("--config is required".into()))?;
    let mut config: ExperimentConfig = serde_json::from_str(&fs::read_to_string(path)?)?;
    apply_overrides(&mut config, common);
    config.validate()?;
    Ok(config)
}

fn apply_overrides(config: &mut ExperimentConfig, common: &Common) {
    if let Some(r) = common.replicates {
        config.replicates = r;
    }
    if let Some(s) = common.seed {
        config.seed = s;
    }
}

fn report(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn audit(config: &ExperimentConfig, out: &Path, states: usize, budget: usize) -> Result<bool> {
    let prepared = prepare(config)?;
    let cap = drift_cap(prepared.constants.smoothness, config.sync_period);
    if let Some(eta) = prepared.steps.iter().copied().find(|&eta| eta > cap) {
        return Err(FedSeaError::AuditPrecondition(format!(
            "step size {eta} exceeds the drift cap {cap} assumed by the lemmas"
        )));
    }
    let result = run_prepared(&prepared)?;
    let mut pass = result.bounds.lemma1.pass;
    println!(
        "lemma 1: {} ({} steps, max relative gap {:e})",
        verdict(result.bounds.lemma1.pass),
        result.bounds.lemma1.steps_checked,
        result.bounds.lemma1.max_relative_gap
    );
    match &result.bounds.lemma3 {
        Some(l3) => {
            pass &= l3.pass;
            println!(
                "lemma 3: {} (lhs {}, rhs {})",
                verdict(l3.pass),
                l3.lhs,
                l3.rhs
            );
        }
        None => println!(
            "lemma 3: skipped (needs a constant step within the drift cap and >= 32 replicates)"
        ),
    }
    let split = &result.bounds.moving_target;
    println!(
        "moving-target split: {} + {} = {}",
        split.virtual_regret_sum, split.k_sum, split.total
    );

    let horizon = config.horizon;
    let stride = (horizon / states.max(1)).max(1);
    let frozen: Vec<usize> = (1..=horizon).step_by(stride).take(states).collect();
    let mut sim = Simulation::new(
        &prepared.config,
        &prepared.model,
        &prepared.schedule,
        &prepared.steps,
        0,
    )?;
    let mut verdicts = Vec::new();
    while !sim.is_finished() {
        if frozen.contains(&sim.state().t) {
            let v = audit_lemma2(
                sim.state(),
                &prepared.oracle,
                &prepared.comparators,
                config.seed,
                budget,
            )?;
            pass &= v.pass;
            println!(
                "lemma 2 at t = {}: {} (estimate {} +/- {}, rhs {})",
                v.t,
                verdict(v.pass),
                v.estimate,
                v.std_error,
                v.rhs
            );
            verdicts.push(v);
        }
        sim.step()?;
    }
    fs::create_dir_all(out)?;
    report(&emit_outputs(&result, &[], out, false)?);
    let path = out.join("lemma2.json");
    fs::write(&path, serde_json::to_string_pretty(&verdicts)? + "\n")?;
    report(&[path]);
    Ok(pass)
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "pass"
    } else {
        "FAIL"
    }
}

fn execute(cli: &Cli) -> Result<bool> {
    let c = &cli.common;
    let plots = c.plots == Toggle::On;
    match &cli.command {
        Command::Run => {
            let config = load_config(c)?;
            let result = run_prepared(&prepare(&config)?)?;
            println!("regret {} +/- {}", result.regret, result.regret_std_error);
            report(&emit_outputs(&result, &[], &c.out, plots)?);
            Ok(true)
        }
        Command::Sweep => {
            let path = c
                .config
                .as_ref()
                .ok_or_else(|| FedSeaError::Config("--config is required".into()))?;
            let mut spec = SweepSpec::from_json(&fs::read_to_string(path)?)?;
            apply_overrides(&mut spec.base, c);
            let sweep = run_sweep(&spec)?;
            for fit in &sweep.fits {
                println!(
                    "{:?}: a = {}, b = {}, R^2 = {}",
                    fit.model, fit.a, fit.b, fit.r_squared
                );
            }
            report(&emit_sweep(&sweep, &c.out, plots)?);
            Ok(true)
        }
        Command::Speedup { clients } => {
            let config = load_config(c)?;
            let table = speedup_study(&config, clients)?;
            if let Some(w) = &table.warning {
                eprintln!("warning: {w}");
            }
            for r in &table.rows {
                println!("M = {}: regret {} (ratio {})", r.clients, r.regret, r.ratio);
            }
            report(&emit_speedup(&table, &c.out, plots)?);
            Ok(true)
        }
        Command::TauStudy { periods } => {
            let config = load_config(c)?;
            let table = tau_study(&config, periods)?;
            for r in &table.rows {
                println!(
                    "tau = {}: regret {} ({} rounds)",
                    r.sync_period, r.regret, r.rounds
                );
            }
            report(&emit_tau(&table, &c.out, plots)?);
            Ok(true)
        }
        Command::Audit { states, budget } => {
            let config = load_config(c)?;
            audit(&config, &c.out, *states, *budget)
        }
        Command::Selftest => {
            let reports = acceptance::run_all(&c.out);
            for r in &reports {
                println!("{r}");
            }
            Ok(reports.iter().all(|r| r.pass))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match with_threads(cli.common.threads, || execute(&cli)) {
        Ok(Ok(true)) => ExitCode::SUCCESS,
        Ok(Ok(false)) => {
            eprintln!("error: audit failed");
            ExitCode::from(4)
        }
        Ok(Err(e)) | Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
