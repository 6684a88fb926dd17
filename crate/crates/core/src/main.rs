//! Command-line front end: design, sweep, estimate and validate.
//!
//! Exit codes: 0 success, 2 infeasible design, 1 any other error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use satdfrc::commrates::BeamformerSet;
use satdfrc::estimator::estimate;
use satdfrc::harness::{
    run_estimation_experiment, run_rcrb_sweep, validate_scenario, DesignCache, ExperimentSpec, SweepVariable,
};
use satdfrc::optimizer::optimize;
use satdfrc::signalsim::simulate_cpi;
use satdfrc::{Error, Result, ScenarioConfig, Strategy};

#[derive(Parser)]
#[command(name = "satdfrc", version, about = "CRB-driven DFRC beamforming for multibeam LEO satellites")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Design beamformers for one scenario and print the result as JSON.
    Optimize(OptimizeArgs),
    /// Sweep R_th or SNR_radar over strategies and seeds; write CSV and JSON.
    Sweep(SweepArgs),
    /// Simulate one CPI with given (or freshly designed) beamformers and estimate the target.
    Estimate(EstimateArgs),
    /// Run the invariant suite on a scenario.
    Validate(ScenarioArgs),
}

#[derive(Args, Clone)]
struct ScenarioArgs {
    /// Flat key = value scenario file; missing keys take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Rate threshold R_th in bps/Hz.
    #[arg(long)]
    rth: Option<f64>,
    /// Radar SNR in dB.
    #[arg(long)]
    snr: Option<f64>,
    /// Coarse angle-grid step in degrees.
    #[arg(long = "grid-step-deg")]
    grid_step_deg: Option<f64>,
}

impl ScenarioArgs {
    fn load(&self) -> Result<ScenarioConfig> {
        let mut cfg = match &self.config {
            Some(p) => ScenarioConfig::load(p)?,
            None => ScenarioConfig::default(),
        };
        if let Some(v) = self.rth {
            cfg.rate_threshold_bps_hz = v;
        }
        if let Some(v) = self.snr {
            cfg.snr_radar_db = v;
        }
        if let Some(v) = self.grid_step_deg {
            cfg.grid_step_deg = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct OptimizeArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// rsma, sdma or radar-only.
    #[arg(long, default_value = "rsma")]
    strategy: String,
    /// Channel seed (overrides rng_seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for optimization.json; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepMode {
    /// One design per point; RCRB table.
    Rcrb,
    /// One design per value, one simulated CPI per seed; RMSE table.
    Estimation,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, value_enum, default_value = "rcrb")]
    mode: SweepMode,
    /// rth or snr.
    #[arg(long, default_value = "rth")]
    variable: String,
    /// Comma-separated sweep values; defaults to 1,2,3,4 (rth) or 20,24,28 (snr).
    #[arg(long, value_delimiter = ',')]
    values: Vec<f64>,
    /// Comma-separated strategies.
    #[arg(long, value_delimiter = ',', default_value = "rsma,sdma")]
    strategy: Vec<String>,
    /// Comma-separated seeds; defaults to the scenario seed (rcrb) or 0..49 (estimation).
    #[arg(long, value_delimiter = ',')]
    seed: Vec<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Beamformer JSON: an `optimize` result or a bare beamformer set.
    /// Designed inline when omitted.
    #[arg(long)]
    beamformers: Option<PathBuf>,
    #[arg(long, default_value = "rsma")]
    strategy: String,
    /// CPI seed (symbols and noise).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for estimation.json, spectrum.csv and grid.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn write_json(dir: &Path, name: &str, value: &impl serde::Serialize) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(value)?)?;
    Ok(p)
}

fn run_optimize(args: &OptimizeArgs) -> Result<()> {
    let mut cfg = args.scenario.load()?;
    if let Some(s) = args.seed {
        cfg.rng_seed = s;
    }
    let strategy: Strategy = args.strategy.parse()?;
    let result = optimize(&cfg, strategy)?;
    match &args.out {
        Some(dir) => {
            let p = write_json(dir, "optimization.json", &result)?;
            let summary = json!({
                "strategy": result.strategy,
                "rate_threshold": result.rate_threshold,
                "rcrb_theta_deg": result.crb.rcrb_deg[0],
                "rcrb_phi_deg": result.crb.rcrb_deg[1],
                "crb_trace": result.crb.trace,
                "min_rank_ratio": result.min_rank_ratio,
                "rate_margin": result.verification.rate_margin,
                "iterations": result.iterations.len(),
                "scenario_hash": cfg.scenario_hash(),
                "file": p,
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        None => println!("{}", serde_json::to_string_pretty(&result)?),
    }
    Ok(())
}

fn run_sweep(args: &SweepArgs) -> Result<()> {
    let cfg = args.scenario.load()?;
    let variable: SweepVariable = args.variable.parse()?;
    let values = if args.values.is_empty() {
        match variable {
            SweepVariable::Rth => vec![1.0, 2.0, 3.0, 4.0],
            SweepVariable::SnrRadar => vec![20.0, 24.0, 28.0],
        }
    } else {
        args.values.clone()
    };
    let strategies = args.strategy.iter().map(|s| s.parse()).collect::<Result<Vec<Strategy>>>()?;
    let seeds = match (args.seed.is_empty(), args.mode) {
        (false, _) => args.seed.clone(),
        (true, SweepMode::Rcrb) => vec![cfg.rng_seed],
        (true, SweepMode::Estimation) => (0..50).collect(),
    };
    let spec = ExperimentSpec {
        scenario: cfg,
        variable,
        values,
        strategies,
        seeds,
        out_dir: Some(args.out.clone()),
    };
    let cache = DesignCache::new();
    match args.mode {
        SweepMode::Rcrb => print!("{}", run_rcrb_sweep(&spec, &cache)?.to_csv()),
        SweepMode::Estimation => print!("{}", run_estimation_experiment(&spec, &cache)?.summary_csv()),
    }
    Ok(())
}

/// Beamformers from an `optimize` result file or a bare set.
fn load_beamformers(path: &Path) -> Result<BeamformerSet> {
    let mut value: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    if let Some(inner) = value.get_mut("beamformers") {
        value = inner.take();
    }
    Ok(serde_json::from_value(value)?)
}

fn run_estimate(args: &EstimateArgs) -> Result<()> {
    let cfg = args.scenario.load()?;
    let bf = match &args.beamformers {
        Some(p) => load_beamformers(p)?,
        None => optimize(&cfg, args.strategy.parse()?)?.beamformers,
    };
    let ds = simulate_cpi(&cfg, &bf, args.seed)?;
    let e = estimate(&ds, &cfg)?;
    let summary = json!({
        "theta_hat_deg": e.theta_hat.to_degrees(),
        "phi_hat_deg": e.phi_hat.to_degrees(),
        "doppler_hat_hz": e.doppler_hat,
        "doppler_bin_hz": e.doppler_bin_hz,
        "alpha_hat": [e.alpha_hat.re, e.alpha_hat.im],
        "peak_to_median": e.peak_to_median,
        "seed": args.seed,
        "scenario_hash": cfg.scenario_hash(),
    });
    if let Some(dir) = &args.out {
        write_json(dir, "estimation.json", &e)?;
        write_json(dir, "grid.json", &e.spectrum.grid)?;
        std::fs::write(dir.join("spectrum.csv"), e.spectrum.to_csv())?;
    }
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn run_validate(args: &ScenarioArgs) -> Result<bool> {
    let cfg = args.load()?;
    let checks = validate_scenario(&cfg)?;
    for c in &checks {
        println!("{} {}: {}", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail);
    }
    Ok(checks.iter().all(|c| c.passed))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Optimize(a) => run_optimize(a).map(|_| true),
        Command::Sweep(a) => run_sweep(a).map(|_| true),
        Command::Estimate(a) => run_estimate(a).map(|_| true),
        Command::Validate(a) => run_validate(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e @ Error::Infeasible(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
