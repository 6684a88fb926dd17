//! Experiment orchestration: RCRB sweeps, Monte-Carlo estimation runs and
//! their CSV/JSON outputs.
//!
//! Points run on a rayon pool sized by `SATDFRC_WORKERS` (default: all
//! cores). Rows are sorted before writing, so files do not depend on the
//! schedule. Wall-clock times go to JSON only; CSV files are a pure
//! function of (config, seeds).

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::commrates::{BeamformerSet, Strategy};
use crate::config::ScenarioConfig;
use crate::crb::{crb_trace, FimContext};
use crate::error::{invalid, Error, Result};
use crate::estimator::{estimate, EstimationResult, GridSpec, Spectrum};
use crate::optimizer::{optimize, OptimizationResult};
use crate::signalsim::simulate_cpi;

pub const WORKERS_ENV: &str = "SATDFRC_WORKERS";

/// Scenario parameter varied along a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepVariable {
    /// Per-user rate threshold, bps/Hz.
    Rth,
    /// Radar SNR, dB.
    SnrRadar,
}

impl SweepVariable {
    pub fn name(self) -> &'static str {
        match self {
            SweepVariable::Rth => "rth",
            SweepVariable::SnrRadar => "snr",
        }
    }

    pub fn apply(self, cfg: &mut ScenarioConfig, value: f64) {
        match self {
            SweepVariable::Rth => cfg.rate_threshold_bps_hz = value,
            SweepVariable::SnrRadar => cfg.snr_radar_db = value,
        }
    }
}

impl std::str::FromStr for SweepVariable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rth" | "r_th" | "rate" => Ok(SweepVariable::Rth),
            "snr" | "snr_radar" | "snr-radar" => Ok(SweepVariable::SnrRadar),
            other => invalid(format!("unknown sweep variable `{other}` (expected rth or snr)")),
        }
    }
}

/// One experiment: a scenario, a swept parameter, strategies and seeds.
///
/// In RCRB sweeps each seed redraws the channel (`rng_seed`). In estimation
/// runs the channel stays at the scenario seed and each seed draws one CPI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub scenario: ScenarioConfig,
    pub variable: SweepVariable,
    pub values: Vec<f64>,
    pub strategies: Vec<Strategy>,
    pub seeds: Vec<u64>,
    pub out_dir: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.values.is_empty() {
            return invalid("sweep needs at least one value");
        }
        if let Some(v) = self.values.iter().find(|v| !v.is_finite()) {
            return invalid(format!("sweep value {v} is not finite"));
        }
        if self.strategies.is_empty() {
            return invalid("sweep needs at least one strategy");
        }
        if self.seeds.is_empty() {
            return invalid("sweep needs at least one seed");
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        if seeds.windows(2).any(|w| w[0] == w[1]) {
            return invalid("seeds must be distinct");
        }
        let mut strategies = self.strategies.clone();
        strategies.sort();
        if strategies.windows(2).any(|w| w[0] == w[1]) {
            return invalid("strategies must be distinct");
        }
        let mut cfg = self.scenario.clone();
        for &v in &self.values {
            self.variable.apply(&mut cfg, v);
            cfg.validate()?;
        }
        Ok(())
    }

    /// Scenario at sweep value `value`.
    pub fn config_at(&self, value: f64) -> ScenarioConfig {
        let mut cfg = self.scenario.clone();
        self.variable.apply(&mut cfg, value);
        cfg
    }
}

/// Outcome of one design run.
#[derive(Debug, Clone)]
pub enum Design {
    Designed(Box<OptimizationResult>),
    Infeasible(String),
    Failed(String),
}

impl Design {
    pub fn result(&self) -> Option<&OptimizationResult> {
        match self {
            Design::Designed(r) => Some(r),
            _ => None,
        }
    }

    fn status(&self) -> PointStatus {
        match self {
            Design::Designed(_) => PointStatus::Ok,
            Design::Infeasible(_) => PointStatus::Infeasible,
            Design::Failed(_) => PointStatus::Error,
        }
    }

    fn message(&self) -> Option<String> {
        match self {
            Design::Designed(_) => None,
            Design::Infeasible(m) | Design::Failed(m) => Some(m.clone()),
        }
    }
}

/// Memoized optimizer runs keyed by (scenario hash, strategy).
#[derive(Debug, Default)]
pub struct DesignCache {
    runs: Mutex<HashMap<(String, Strategy), Arc<Design>>>,
}

impl DesignCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn design(&self, cfg: &ScenarioConfig, strategy: Strategy) -> Arc<Design> {
        let key = (cfg.scenario_hash(), strategy);
        if let Some(d) = self.runs.lock().expect("cache lock").get(&key) {
            return Arc::clone(d);
        }
        let d = Arc::new(match optimize(cfg, strategy) {
            Ok(r) => Design::Designed(Box::new(r)),
            Err(e) if e.is_infeasible() => Design::Infeasible(e.to_string()),
            Err(e) => Design::Failed(e.to_string()),
        });
        let mut runs = self.runs.lock().expect("cache lock");
        Arc::clone(runs.entry(key).or_insert(d))
    }
}

/// Pool sized by `SATDFRC_WORKERS`, or rayon's default when unset.
pub fn worker_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{WORKERS_ENV} must be a positive integer, got `{v}`")))?;
        if n == 0 {
            return Err(Error::Config(format!("{WORKERS_ENV} must be a positive integer")));
        }
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| Error::Internal(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PointStatus {
    Ok,
    Infeasible,
    Error,
}

impl PointStatus {
    pub fn name(self) -> &'static str {
        match self {
            PointStatus::Ok => "ok",
            PointStatus::Infeasible => "infeasible",
            PointStatus::Error => "error",
        }
    }
}

/// One (strategy, value, seed) point of an RCRB sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub strategy: Strategy,
    pub value: f64,
    pub seed: u64,
    pub status: PointStatus,
    pub rcrb_theta_deg: Option<f64>,
    pub rcrb_phi_deg: Option<f64>,
    pub crb_trace: Option<f64>,
    pub iterations: Option<usize>,
    pub rate_margin: Option<f64>,
    pub min_rank_ratio: Option<f64>,
    pub wall_time_s: Option<f64>,
    pub message: Option<String>,
}

impl SweepRow {
    /// RCRB of the pair (θ, φ) as √tr(CRB) in degrees; +∞ when infeasible.
    pub fn rcrb_total_deg(&self) -> f64 {
        match (self.status, self.crb_trace) {
            (PointStatus::Ok, Some(t)) => t.sqrt().to_degrees(),
            _ => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub scenario_hash: String,
    pub variable: SweepVariable,
    pub rows: Vec<SweepRow>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.9e}")).unwrap_or_default()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl SweepTable {
    pub fn row(&self, strategy: Strategy, value: f64, seed: u64) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.strategy == strategy && r.value == value && r.seed == seed)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("# scenario_hash={}\n", self.scenario_hash);
        out.push_str(&format!(
            "strategy,{},seed,status,rcrb_theta_deg,rcrb_phi_deg,crb_trace,iterations,rate_margin,min_rank_ratio,message\n",
            self.variable.name()
        ));
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.strategy,
                r.value,
                r.seed,
                r.status.name(),
                opt(r.rcrb_theta_deg),
                opt(r.rcrb_phi_deg),
                opt(r.crb_trace),
                r.iterations.map(|i| i.to_string()).unwrap_or_default(),
                opt(r.rate_margin),
                opt(r.min_rank_ratio),
                csv_field(r.message.as_deref().unwrap_or("")),
            );
        }
        out
    }

    /// Writes `rcrb_<variable>.csv` and `rcrb_<variable>.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let stem = format!("rcrb_{}", self.variable.name());
        let csv = dir.join(format!("{stem}.csv"));
        let json = dir.join(format!("{stem}.json"));
        std::fs::write(&csv, self.to_csv())?;
        std::fs::write(&json, serde_json::to_string_pretty(self)?)?;
        Ok(vec![csv, json])
    }
}

fn sweep_row(strategy: Strategy, value: f64, seed: u64, design: &Design) -> SweepRow {
    let r = design.result();
    SweepRow {
        strategy,
        value,
        seed,
        status: design.status(),
        rcrb_theta_deg: r.map(|r| r.crb.rcrb_deg[0]),
        rcrb_phi_deg: r.map(|r| r.crb.rcrb_deg[1]),
        crb_trace: r.map(|r| r.crb.trace),
        iterations: r.map(|r| r.iterations.len()),
        rate_margin: r.and_then(|r| r.verification.rate_margin.is_finite().then_some(r.verification.rate_margin)),
        min_rank_ratio: r.map(|r| r.min_rank_ratio),
        wall_time_s: r.map(|r| r.wall_time_s),
        message: design.message(),
    }
}

fn point_order(a: (Strategy, f64, u64), b: (Strategy, f64, u64)) -> std::cmp::Ordering {
    a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2))
}

/// One optimizer run per (strategy, value, seed). Failed points become
/// rows with their diagnostics; the sweep itself only fails on a bad spec
/// or an output error.
pub fn run_rcrb_sweep(spec: &ExperimentSpec, cache: &DesignCache) -> Result<SweepTable> {
    spec.validate()?;
    let mut points = Vec::new();
    for &s in &spec.strategies {
        for &v in &spec.values {
            for &seed in &spec.seeds {
                points.push((s, v, seed));
            }
        }
    }
    let pool = worker_pool()?;
    let mut rows: Vec<SweepRow> = pool.install(|| {
        points
            .par_iter()
            .map(|&(s, v, seed)| {
                let mut cfg = spec.config_at(v);
                cfg.rng_seed = seed;
                sweep_row(s, v, seed, &cache.design(&cfg, s))
            })
            .collect()
    });
    rows.sort_by(|a, b| point_order((a.strategy, a.value, a.seed), (b.strategy, b.value, b.seed)));
    let table = SweepTable {
        scenario_hash: spec.scenario.scenario_hash(),
        variable: spec.variable,
        rows,
    };
    if let Some(dir) = &spec.out_dir {
        table.write(dir)?;
    }
    Ok(table)
}

/// One Monte-Carlo CPI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationRow {
    pub strategy: Strategy,
    pub value: f64,
    pub seed: u64,
    pub theta_hat_deg: f64,
    pub phi_hat_deg: f64,
    pub doppler_hat_hz: f64,
    pub doppler_bin_hz: f64,
    pub alpha_re: f64,
    pub alpha_im: f64,
    pub peak_to_median: f64,
    /// |F̂_D − F_D| within one FFT bin.
    pub doppler_hit: bool,
    /// Both angle errors within one coarse grid step.
    pub angle_hit: bool,
}

/// Aggregate over the seeds of one (strategy, value).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationSummary {
    pub strategy: Strategy,
    pub value: f64,
    pub status: PointStatus,
    pub n_seeds: usize,
    pub rmse_theta_deg: Option<f64>,
    pub rmse_phi_deg: Option<f64>,
    /// Bound for the transmitted covariance with one observation per
    /// sample (L·M).
    pub rcrb_theta_deg: Option<f64>,
    pub rcrb_phi_deg: Option<f64>,
    pub doppler_hit_rate: Option<f64>,
    pub angle_hit_rate: Option<f64>,
    pub median_peak_to_median: Option<f64>,
    pub message: Option<String>,
}

/// Spectrum of the first seed of one (strategy, value).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRecord {
    pub strategy: Strategy,
    pub value: f64,
    pub seed: u64,
    pub spectrum: Spectrum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationReport {
    pub scenario_hash: String,
    pub variable: SweepVariable,
    pub grid: GridSpec,
    pub rows: Vec<EstimationRow>,
    pub summary: Vec<EstimationSummary>,
    #[serde(skip)]
    pub spectra: Vec<SpectrumRecord>,
}

impl EstimationReport {
    pub fn summary_for(&self, strategy: Strategy, value: f64) -> Option<&EstimationSummary> {
        self.summary.iter().find(|s| s.strategy == strategy && s.value == value)
    }

    pub fn rows_for(&self, strategy: Strategy, value: f64) -> impl Iterator<Item = &EstimationRow> {
        self.rows
            .iter()
            .filter(move |r| r.strategy == strategy && r.value == value)
    }

    pub fn rows_csv(&self) -> String {
        let mut out = format!("# scenario_hash={}\n", self.scenario_hash);
        out.push_str(&format!(
            "strategy,{},seed,theta_hat_deg,phi_hat_deg,doppler_hat_hz,doppler_bin_hz,alpha_re,alpha_im,peak_to_median,doppler_hit,angle_hit\n",
            self.variable.name()
        ));
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{:.9},{:.9},{:.6},{:.6},{:.9e},{:.9e},{:.9e},{},{}",
                r.strategy,
                r.value,
                r.seed,
                r.theta_hat_deg,
                r.phi_hat_deg,
                r.doppler_hat_hz,
                r.doppler_bin_hz,
                r.alpha_re,
                r.alpha_im,
                r.peak_to_median,
                r.doppler_hit,
                r.angle_hit,
            );
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = format!("# scenario_hash={}\n", self.scenario_hash);
        out.push_str(&format!(
            "strategy,{},status,n_seeds,rmse_theta_deg,rmse_phi_deg,rcrb_theta_deg,rcrb_phi_deg,doppler_hit_rate,angle_hit_rate,median_peak_to_median,message\n",
            self.variable.name()
        ));
        for s in &self.summary {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                s.strategy,
                s.value,
                s.status.name(),
                s.n_seeds,
                opt(s.rmse_theta_deg),
                opt(s.rmse_phi_deg),
                opt(s.rcrb_theta_deg),
                opt(s.rcrb_phi_deg),
                opt(s.doppler_hit_rate),
                opt(s.angle_hit_rate),
                opt(s.median_peak_to_median),
                csv_field(s.message.as_deref().unwrap_or("")),
            );
        }
        out
    }

    /// Writes per-seed and summary CSVs, a JSON report, the grid JSON and
    /// one spectrum CSV per (strategy, value).
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut files = Vec::new();
        let mut put = |name: String, text: String| -> Result<()> {
            let p = dir.join(name);
            std::fs::write(&p, text)?;
            files.push(p);
            Ok(())
        };
        put("estimation_seeds.csv".into(), self.rows_csv())?;
        put("estimation_summary.csv".into(), self.summary_csv())?;
        put("estimation.json".into(), serde_json::to_string_pretty(self)?)?;
        put("grid.json".into(), serde_json::to_string_pretty(&self.grid)?)?;
        for s in &self.spectra {
            put(
                format!("spectrum_{}_{}{}_seed{}.csv", s.strategy, self.variable.name(), s.value, s.seed),
                s.spectrum.to_csv(),
            )?;
        }
        Ok(files)
    }
}

fn rms(v: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x * x, n + 1));
    (sum / n as f64).sqrt()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn estimation_row(
    cfg: &ScenarioConfig,
    strategy: Strategy,
    value: f64,
    seed: u64,
    e: &EstimationResult,
) -> EstimationRow {
    let step = cfg.grid_step_deg;
    let theta_hat_deg = e.theta_hat.to_degrees();
    let phi_hat_deg = e.phi_hat.to_degrees();
    EstimationRow {
        strategy,
        value,
        seed,
        theta_hat_deg,
        phi_hat_deg,
        doppler_hat_hz: e.doppler_hat,
        doppler_bin_hz: e.doppler_bin_hz,
        alpha_re: e.alpha_hat.re,
        alpha_im: e.alpha_hat.im,
        peak_to_median: e.peak_to_median,
        doppler_hit: (e.doppler_hat - cfg.doppler_hz).abs() <= e.doppler_bin_hz,
        angle_hit: (theta_hat_deg - cfg.target_theta_deg).abs() <= step
            && (phi_hat_deg - cfg.target_phi_deg).abs() <= step,
    }
}

/// Simulates and estimates one CPI per seed for a fixed design.
pub fn estimate_seeds(
    cfg: &ScenarioConfig,
    beamformers: &BeamformerSet,
    seeds: &[u64],
) -> Result<Vec<(u64, EstimationResult)>> {
    seeds
        .par_iter()
        .map(|&seed| {
            let ds = simulate_cpi(cfg, beamformers, seed)?;
            Ok((seed, estimate(&ds, cfg)?))
        })
        .collect()
}

/// Optimizes once per (strategy, value), then simulates and estimates one
/// CPI per seed. Designs that fail yield a summary row and no seed rows.
pub fn run_estimation_experiment(spec: &ExperimentSpec, cache: &DesignCache) -> Result<EstimationReport> {
    spec.validate()?;
    let pool = worker_pool()?;
    let mut points = Vec::new();
    for &s in &spec.strategies {
        for &v in &spec.values {
            points.push((s, v));
        }
    }
    let outcomes: Vec<Result<(EstimationSummary, Vec<EstimationRow>, Option<SpectrumRecord>)>> = pool.install(|| {
        points
            .par_iter()
            .map(|&(strategy, value)| {
                let cfg = spec.config_at(value);
                let design = cache.design(&cfg, strategy);
                let Some(result) = design.result() else {
                    return Ok((
                        EstimationSummary {
                            strategy,
                            value,
                            status: design.status(),
                            n_seeds: 0,
                            rmse_theta_deg: None,
                            rmse_phi_deg: None,
                            rcrb_theta_deg: None,
                            rcrb_phi_deg: None,
                            doppler_hit_rate: None,
                            angle_hit_rate: None,
                            median_peak_to_median: None,
                            message: design.message(),
                        },
                        Vec::new(),
                        None,
                    ));
                };
                let estimates = estimate_seeds(&cfg, &result.beamformers, &spec.seeds)?;
                let rows: Vec<EstimationRow> = estimates
                    .iter()
                    .map(|(seed, e)| estimation_row(&cfg, strategy, value, *seed, e))
                    .collect();
                let fim = FimContext::from_config(&cfg, cfg.symbols_per_cpi * cfg.samples_per_symbol)?;
                let bound = crb_trace(&fim, &result.beamformers.covariance())?;
                let n = rows.len() as f64;
                let summary = EstimationSummary {
                    strategy,
                    value,
                    status: PointStatus::Ok,
                    n_seeds: rows.len(),
                    rmse_theta_deg: Some(rms(rows.iter().map(|r| r.theta_hat_deg - cfg.target_theta_deg))),
                    rmse_phi_deg: Some(rms(rows.iter().map(|r| r.phi_hat_deg - cfg.target_phi_deg))),
                    rcrb_theta_deg: Some(bound.rcrb_deg[0]),
                    rcrb_phi_deg: Some(bound.rcrb_deg[1]),
                    doppler_hit_rate: Some(rows.iter().filter(|r| r.doppler_hit).count() as f64 / n),
                    angle_hit_rate: Some(rows.iter().filter(|r| r.angle_hit).count() as f64 / n),
                    median_peak_to_median: Some(median(rows.iter().map(|r| r.peak_to_median).collect())),
                    message: None,
                };
                let first = estimates.into_iter().min_by_key(|(seed, _)| *seed).map(|(seed, e)| SpectrumRecord {
                    strategy,
                    value,
                    seed,
                    spectrum: e.spectrum,
                });
                Ok((summary, rows, first))
            })
            .collect()
    });
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    let mut spectra = Vec::new();
    for o in outcomes {
        let (s, r, sp) = o?;
        summary.push(s);
        rows.extend(r);
        spectra.extend(sp);
    }
    rows.sort_by(|a, b| point_order((a.strategy, a.value, a.seed), (b.strategy, b.value, b.seed)));
    summary.sort_by(|a, b| point_order((a.strategy, a.value, 0), (b.strategy, b.value, 0)));
    spectra.sort_by(|a, b| point_order((a.strategy, a.value, a.seed), (b.strategy, b.value, b.seed)));
    let report = EstimationReport {
        scenario_hash: spec.scenario.scenario_hash(),
        variable: spec.variable,
        grid: GridSpec::from_config(&spec.scenario),
        rows,
        summary,
        spectra,
    };
    if let Some(dir) = &spec.out_dir {
        report.write(dir)?;
    }
    Ok(report)
}

/// One named check of the invariant suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check {
        name: name.into(),
        passed,
        detail,
    }
}

fn rel_err(a: &crate::linalg::ComplexMatrix, b: &crate::linalg::ComplexMatrix) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

/// Invariant suite on a scenario: geometry, derivatives, FIM, channel,
/// Capon response and the noiseless amplitude estimate.
pub fn validate_scenario(cfg: &ScenarioConfig) -> Result<Vec<Check>> {
    use crate::array::{rx_steering, tx_steering, TargetAngles};
    use crate::channel::scenario_channel;
    use crate::estimator::{alpha_estimate, capon_weight, diagonal_load, sample_covariance};
    use crate::linalg::{outer, ComplexMatrix};

    cfg.validate()?;
    let mut out = Vec::new();
    let tx = cfg.tx_geometry()?;
    let rx = cfg.rx_geometry()?;
    let target = cfg.target();

    let a = tx_steering(&tx, target);
    let b = rx_steering(&rx, target.theta);
    let unit = a.iter().chain(b.iter()).map(|z| (z.norm() - 1.0).abs()).fold(0.0, f64::max);
    out.push(check("steering-unit-modulus", unit < 1e-12, format!("max deviation {unit:.2e}")));

    let fim = FimContext::from_config(cfg, cfg.symbols_per_cpi)?;
    let h = 1e-6;
    let response = |t: f64, p: f64| {
        let ang = TargetAngles { theta: t, phi: p };
        outer(&rx_steering(&rx, t), &tx_steering(&tx, ang))
    };
    let fd_theta = (response(target.theta + h, target.phi) - response(target.theta - h, target.phi)).unscale(2.0 * h);
    let fd_phi = (response(target.theta, target.phi + h) - response(target.theta, target.phi - h)).unscale(2.0 * h);
    let e_theta = rel_err(fim.d_theta(), &fd_theta);
    let e_phi = rel_err(fim.d_phi(), &fd_phi);
    out.push(check(
        "response-derivatives",
        e_theta.max(e_phi) < 1e-6,
        format!("relative error θ {e_theta:.2e}, φ {e_phi:.2e}"),
    ));

    let uniform = ComplexMatrix::identity(tx.len(), tx.len()).scale(cfg.per_feed_power());
    match crb_trace(&fim, &uniform) {
        Ok(r) => out.push(check(
            "uniform-covariance-identifiable",
            r.trace.is_finite() && r.trace > 0.0 && r.fim.eigenvalues()[0] > 0.0,
            format!("tr(CRB) {:.4e}, RCRB {:.4e}° / {:.4e}°", r.trace, r.rcrb_deg[0], r.rcrb_deg[1]),
        )),
        Err(e) => out.push(check("uniform-covariance-identifiable", false, e.to_string())),
    }

    let ch = scenario_channel(cfg)?;
    let finite = ch.h.iter().all(|z| z.re.is_finite() && z.im.is_finite());
    let weakest = ch.h.column_iter().map(|c| c.norm()).fold(f64::INFINITY, f64::min);
    out.push(check(
        "channel-finite-nonzero",
        finite && weakest > 0.0 && ch.h.shape() == (cfg.n_feeds, cfg.n_users),
        format!("{}×{}, weakest user gain {weakest:.3e}", ch.h.nrows(), ch.h.ncols()),
    ));

    let bf = BeamformerSet::new(
        crate::linalg::ComplexVector::zeros(cfg.n_feeds),
        (0..cfg.n_feeds)
            .map(|i| {
                let mut v = crate::linalg::ComplexVector::zeros(cfg.n_feeds);
                v[i] = cfg.per_feed_power().sqrt().into();
                v
            })
            .collect(),
        Strategy::Sdma,
    )?;
    let ds = simulate_cpi(cfg, &bf, cfg.rng_seed)?;
    let r = diagonal_load(&sample_covariance(&ds.z)?, cfg.diagonal_loading);
    let grid = GridSpec::from_config(cfg);
    let mut worst = 0.0f64;
    for t in grid.thetas_deg() {
        let bt = rx_steering(&rx, t.to_radians());
        let w = capon_weight(&r, t.to_radians(), &rx)?;
        worst = worst.max((w.dotc(&bt) - 1.0).norm());
    }
    out.push(check("capon-distortionless", worst < 1e-9, format!("max |wᴴb − 1| {worst:.2e}")));

    let quiet = ScenarioConfig {
        radar_noise_var: cfg.radar_noise_var * 1e-12,
        snr_radar_db: cfg.snr_radar_db + 120.0,
        ..cfg.clone()
    };
    let clean = simulate_cpi(&quiet, &bf, cfg.rng_seed)?;
    let alpha = alpha_estimate(&clean, &tx, &rx, target, cfg.doppler_hz, cfg.diagonal_loading)?;
    let err = (alpha - clean.truth.alpha).norm() / clean.truth.alpha.norm();
    out.push(check("noiseless-alpha", err < 1e-6, format!("relative error {err:.2e}")));

    let inside = (grid.theta_min_deg..=grid.theta_max_deg).contains(&cfg.target_theta_deg)
        && (grid.phi_min_deg..=grid.phi_max_deg).contains(&cfg.target_phi_deg);
    out.push(check("grid-contains-target", inside, format!("{grid:?}")));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> ExperimentSpec {
        ExperimentSpec {
            scenario: ScenarioConfig::default(),
            variable: SweepVariable::Rth,
            values: vec![1.0, 2.0],
            strategies: vec![Strategy::Rsma],
            seeds: vec![0],
            out_dir: None,
        }
    }

    #[test]
    fn empty_strategy_set_is_invalid() {
        let s = ExperimentSpec {
            strategies: vec![],
            ..spec()
        };
        assert!(matches!(s.validate(), Err(Error::InvalidArgument(_))));
        let cache = DesignCache::new();
        assert!(matches!(run_rcrb_sweep(&s, &cache), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn spec_rejects_duplicates_and_empty_values() {
        assert!(spec().validate().is_ok());
        assert!(ExperimentSpec { seeds: vec![3, 3], ..spec() }.validate().is_err());
        assert!(ExperimentSpec { values: vec![], ..spec() }.validate().is_err());
        assert!(ExperimentSpec { values: vec![-1.0], ..spec() }.validate().is_err());
        assert!(ExperimentSpec {
            strategies: vec![Strategy::Sdma, Strategy::Sdma],
            ..spec()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn sweep_variable_applies() {
        let s = ExperimentSpec {
            variable: SweepVariable::SnrRadar,
            ..spec()
        };
        assert_eq!(s.config_at(20.0).snr_radar_db, 20.0);
        assert_eq!(spec().config_at(3.0).rate_threshold_bps_hz, 3.0);
        assert_eq!("snr".parse::<SweepVariable>().unwrap(), SweepVariable::SnrRadar);
        assert!("bogus".parse::<SweepVariable>().is_err());
    }

    #[test]
    fn infeasible_rows_are_kept_and_csv_is_stable() {
        let infeasible = Design::Infeasible("no".into());
        let row = sweep_row(Strategy::Sdma, 4.0, 0, &infeasible);
        assert_eq!(row.status, PointStatus::Infeasible);
        assert_eq!(row.rcrb_total_deg(), f64::INFINITY);
        let table = SweepTable {
            scenario_hash: "abc".into(),
            variable: SweepVariable::Rth,
            rows: vec![row],
        };
        let csv = table.to_csv();
        assert!(csv.starts_with("# scenario_hash=abc\n"));
        assert!(csv.lines().nth(2).unwrap().starts_with("sdma,4,0,infeasible,,,"));
        assert_eq!(csv, table.clone().to_csv());
    }

    #[test]
    fn default_scenario_validates() {
        let checks = validate_scenario(&ScenarioConfig::default()).unwrap();
        assert!(checks.len() >= 7);
        for c in &checks {
            assert!(c.passed, "{c:?}");
        }
    }

    #[test]
    fn worker_env_is_parsed() {
        // Only the error path is checked; the variable is process-global.
        assert!(worker_pool().is_ok());
    }
}
