//! Receiver-side estimation: Doppler by FFT, Capon beamforming, the
//! closed-form reflection coefficient and a nested 2-D angle grid search.

use std::f64::consts::PI;

use nalgebra::{Cholesky, RowDVector};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::array::{rx_steering, tx_steering, ArrayGeometry, TargetAngles};
use crate::config::{AngleStatistic, DopplerMethod, ScenarioConfig};
use crate::error::{invalid, Error, Result};
use crate::linalg::{cis, hermitian_part, ComplexMatrix, ComplexVector};
use crate::signalsim::EchoDataset;

/// Denominators of α̂ below this fraction of ‖X‖²_F mean the direction is
/// not illuminated.
pub const UNOBSERVABLE_FRACTION: f64 = 1e-12;

/// (1/N) Z Zᴴ over the columns of `z`.
pub fn sample_covariance(z: &ComplexMatrix) -> Result<ComplexMatrix> {
    if z.ncols() == 0 {
        return invalid("sample covariance needs at least one snapshot");
    }
    let r = (z * z.adjoint()).unscale(z.ncols() as f64);
    Ok(hermitian_part(&r))
}

/// R + δ·tr(R)/N·I.
pub fn diagonal_load(r: &ComplexMatrix, delta: f64) -> ComplexMatrix {
    let n = r.nrows();
    let level = delta * r.trace().re / n as f64;
    r + ComplexMatrix::identity(n, n).scale(level)
}

/// w = R⁻¹b / (bᴴR⁻¹b) for an already loaded covariance.
pub fn capon_weight(r_loaded: &ComplexMatrix, theta: f64, rx: &ArrayGeometry) -> Result<ComplexVector> {
    let chol = Cholesky::new(r_loaded.clone())
        .ok_or_else(|| Error::Numeric("receive covariance is not positive definite".into()))?;
    capon_from_factor(&chol, &rx_steering(rx, theta))
}

fn capon_from_factor(chol: &Cholesky<Complex64, nalgebra::Dyn>, b: &ComplexVector) -> Result<ComplexVector> {
    let rb = chol.solve(b);
    let denom = b.dotc(&rb);
    if !(denom.norm() > 0.0 && denom.re.is_finite()) {
        return Err(Error::Numeric("Capon denominator vanished".into()));
    }
    Ok(rb.map(|v| v / denom))
}

/// Doppler spectrum on an FFT grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DopplerSpectrum {
    /// Signed bin frequencies in Hz, in FFT order.
    pub freqs_hz: Vec<f64>,
    pub power: Vec<f64>,
    pub peak_hz: f64,
    pub bin_hz: f64,
}

impl DopplerSpectrum {
    fn from_power(power: Vec<f64>, rate_hz: f64) -> Self {
        let n = power.len();
        let bin_hz = rate_hz / n as f64;
        let freqs_hz: Vec<f64> = (0..n)
            .map(|k| if k < n.div_ceil(2) { k as f64 } else { k as f64 - n as f64 } * bin_hz)
            .collect();
        let peak = power
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, _)| k)
            .unwrap_or(0);
        Self {
            peak_hz: freqs_hz[peak],
            freqs_hz,
            power,
            bin_hz,
        }
    }
}

fn fft_in_place(buf: &mut [Complex64]) {
    FftPlanner::<f64>::new().plan_fft_forward(buf.len()).process(buf);
}

/// Per-symbol FFT of the element-summed samples, accumulated coherently
/// over symbols; bins map to Hz through the sample rate.
pub fn doppler_intra_symbol(
    z: &ComplexMatrix,
    samples_per_symbol: usize,
    n_fft: usize,
    sample_period: f64,
) -> Result<DopplerSpectrum> {
    let m = samples_per_symbol;
    if m == 0 || z.ncols() % m != 0 || z.ncols() == 0 {
        return invalid("sample count must be a positive multiple of samples_per_symbol");
    }
    if n_fft < m {
        return invalid(format!("n_fft = {n_fft} is shorter than one symbol ({m} samples)"));
    }
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let mut acc = vec![Complex64::new(0.0, 0.0); n_fft];
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    for l in 0..z.ncols() / m {
        buf.iter_mut().for_each(|v| *v = 0.0.into());
        for (i, slot) in buf.iter_mut().take(m).enumerate() {
            *slot = z.column(l * m + i).sum();
        }
        fft.process(&mut buf);
        for (a, v) in acc.iter_mut().zip(&buf) {
            *a += v;
        }
    }
    let power = acc.iter().map(|v| v.norm_sqr()).collect();
    Ok(DopplerSpectrum::from_power(power, 1.0 / sample_period))
}

/// FFT across symbols of the echo with the known transmit data stripped:
/// for every receive element r and feed t the sequence z̄_r[l]·x̄_t[l]* is
/// transformed, and the power spectra are summed.
pub fn doppler_slow_time(
    x: &ComplexMatrix,
    z: &ComplexMatrix,
    samples_per_symbol: usize,
    n_fft: usize,
    sample_period: f64,
) -> Result<DopplerSpectrum> {
    let xs = symbol_average(x, samples_per_symbol, 0.0, sample_period)?;
    let zs = symbol_average(z, samples_per_symbol, 0.0, sample_period)?;
    let l = xs.ncols();
    if n_fft < l {
        return invalid(format!("n_fft = {n_fft} is shorter than the {l} symbols of the CPI"));
    }
    let mut power = vec![0.0; n_fft];
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    for r in 0..zs.nrows() {
        for t in 0..xs.nrows() {
            buf.iter_mut().for_each(|v| *v = 0.0.into());
            for (k, slot) in buf.iter_mut().take(l).enumerate() {
                *slot = zs[(r, k)] * xs[(t, k)].conj();
            }
            fft_in_place(&mut buf);
            for (p, v) in power.iter_mut().zip(&buf) {
                *p += v.norm_sqr();
            }
        }
    }
    let symbol_period = sample_period * samples_per_symbol as f64;
    Ok(DopplerSpectrum::from_power(power, 1.0 / symbol_period))
}

pub fn doppler_fft(ds: &EchoDataset, method: DopplerMethod, n_fft: usize) -> Result<DopplerSpectrum> {
    match method {
        DopplerMethod::SlowTime => doppler_slow_time(&ds.x, &ds.z, ds.samples_per_symbol, n_fft, ds.sample_period),
        DopplerMethod::IntraSymbol => doppler_intra_symbol(&ds.z, ds.samples_per_symbol, n_fft, ds.sample_period),
    }
}

/// Mean of each symbol's samples after removing e^{j2πF_D i T_s}.
fn symbol_average(m: &ComplexMatrix, samples_per_symbol: usize, doppler: f64, sample_period: f64) -> Result<ComplexMatrix> {
    let ms = samples_per_symbol;
    if ms == 0 || m.ncols() == 0 || m.ncols() % ms != 0 {
        return invalid("sample count must be a positive multiple of samples_per_symbol");
    }
    let step = -2.0 * PI * doppler * sample_period;
    let l = m.ncols() / ms;
    let mut out = ComplexMatrix::zeros(m.nrows(), l);
    for j in 0..m.ncols() {
        let rot = if doppler == 0.0 { Complex64::new(1.0, 0.0) } else { cis(step * (j + 1) as f64) };
        for i in 0..m.nrows() {
            out[(i, j / ms)] += m[(i, j)] * rot;
        }
    }
    Ok(out.unscale(ms as f64))
}

/// Angular search grid in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub theta_min_deg: f64,
    pub theta_max_deg: f64,
    pub phi_min_deg: f64,
    pub phi_max_deg: f64,
    pub step_deg: f64,
}

impl GridSpec {
    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        Self {
            theta_min_deg: cfg.grid_theta_min_deg,
            theta_max_deg: cfg.grid_theta_max_deg,
            phi_min_deg: cfg.grid_phi_min_deg,
            phi_max_deg: cfg.grid_phi_max_deg,
            step_deg: cfg.grid_step_deg,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.step_deg > 0.0
            && self.theta_min_deg >= 0.0
            && self.theta_max_deg < 360.0
            && self.theta_min_deg <= self.theta_max_deg
            && self.phi_min_deg > 0.0
            && self.phi_max_deg <= 90.0
            && self.phi_min_deg <= self.phi_max_deg;
        if ok {
            Ok(())
        } else {
            invalid(format!("invalid angle grid {self:?}"))
        }
    }

    fn axis(min: f64, max: f64, step: f64) -> Vec<f64> {
        let n = ((max - min) / step + 1e-9).floor() as usize + 1;
        (0..n).map(|k| min + k as f64 * step).collect()
    }

    pub fn thetas_deg(&self) -> Vec<f64> {
        Self::axis(self.theta_min_deg, self.theta_max_deg, self.step_deg)
    }

    pub fn phis_deg(&self) -> Vec<f64> {
        Self::axis(self.phi_min_deg, self.phi_max_deg, self.step_deg)
    }

    /// Window of ± one current step around a point, ten times finer,
    /// clipped to `bounds`.
    fn refined_around(&self, theta_deg: f64, phi_deg: f64, bounds: &GridSpec) -> Self {
        Self {
            theta_min_deg: (theta_deg - self.step_deg).max(bounds.theta_min_deg),
            theta_max_deg: (theta_deg + self.step_deg).min(bounds.theta_max_deg),
            phi_min_deg: (phi_deg - self.step_deg).max(bounds.phi_min_deg),
            phi_max_deg: (phi_deg + self.step_deg).min(bounds.phi_max_deg),
            step_deg: self.step_deg / 10.0,
        }
    }
}

/// Search statistic on a grid, θ-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub grid: GridSpec,
    pub thetas_deg: Vec<f64>,
    pub phis_deg: Vec<f64>,
    pub statistic: AngleStatistic,
    pub power: Vec<f64>,
}

impl Spectrum {
    pub fn get(&self, i_theta: usize, i_phi: usize) -> f64 {
        self.power[i_theta * self.phis_deg.len() + i_phi]
    }

    /// (θ°, φ°, power) of the largest cell.
    pub fn peak(&self) -> (f64, f64, f64) {
        let (idx, p) = self
            .power
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty grid");
        let n_phi = self.phis_deg.len();
        (self.thetas_deg[idx / n_phi], self.phis_deg[idx % n_phi], *p)
    }

    pub fn median(&self) -> f64 {
        let mut v = self.power.clone();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    }

    pub fn peak_to_median(&self) -> f64 {
        self.peak().2 / self.median()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("theta_deg,phi_deg,power\n");
        for (i, t) in self.thetas_deg.iter().enumerate() {
            for (j, p) in self.phis_deg.iter().enumerate() {
                out.push_str(&format!("{t:.6},{p:.6},{:.9e}\n", self.get(i, j)));
            }
        }
        out
    }
}

/// Symbol-rate data after Doppler removal, with the Capon filter bank.
pub struct Processor<'a> {
    tx: &'a ArrayGeometry,
    rx: &'a ArrayGeometry,
    chol: Cholesky<Complex64, nalgebra::Dyn>,
    x: ComplexMatrix,
    z: ComplexMatrix,
    gram: ComplexMatrix,
    x_energy: f64,
}

impl<'a> Processor<'a> {
    pub fn new(
        ds: &EchoDataset,
        tx: &'a ArrayGeometry,
        rx: &'a ArrayGeometry,
        doppler_hz: f64,
        loading: f64,
    ) -> Result<Self> {
        if ds.x.nrows() != tx.len() || ds.z.nrows() != rx.len() {
            return invalid("dataset dimensions do not match the array geometries");
        }
        let r = diagonal_load(&sample_covariance(&ds.z)?, loading);
        let chol = Cholesky::new(r).ok_or_else(|| Error::Numeric("receive covariance is not positive definite".into()))?;
        let x = symbol_average(&ds.x, ds.samples_per_symbol, 0.0, ds.sample_period)?;
        let z = symbol_average(&ds.z, ds.samples_per_symbol, doppler_hz, ds.sample_period)?;
        let gram = &x * x.adjoint();
        let x_energy = x.norm_squared();
        Ok(Self {
            tx,
            rx,
            chol,
            x,
            z,
            gram,
            x_energy,
        })
    }

    pub fn capon(&self, theta: f64) -> Result<ComplexVector> {
        capon_from_factor(&self.chol, &rx_steering(self.rx, theta))
    }

    /// Row vector wᴴ Z Dᴴ Xᴴ for the Capon filter at θ.
    fn filtered(&self, theta: f64) -> Result<RowDVector<Complex64>> {
        let w = self.capon(theta)?;
        Ok(w.adjoint() * &self.z * self.x.adjoint())
    }

    fn alpha_with(&self, filtered: &RowDVector<Complex64>, a: &ComplexVector) -> Result<Complex64> {
        let denom = a.dotc(&(&self.gram * a)).re;
        let threshold = UNOBSERVABLE_FRACTION * self.x_energy;
        if !(denom > threshold) {
            return Err(Error::DirectionUnobservable {
                denominator: denom,
                threshold,
            });
        }
        Ok((filtered * a)[0] / denom)
    }

    /// α̂ = wᴴ Z Dᴴ Xᴴ a / (L aᴴ R_X a).
    pub fn alpha(&self, angles: TargetAngles) -> Result<Complex64> {
        let f = self.filtered(angles.theta)?;
        self.alpha_with(&f, &tx_steering(self.tx, angles))
    }

    /// Cell value of `statistic` at (θ, φ); unlit cells carry no echo.
    fn cell(&self, filtered: &RowDVector<Complex64>, a: &ComplexVector, statistic: AngleStatistic) -> Result<f64> {
        match self.alpha_with(filtered, a) {
            Ok(v) => Ok(match statistic {
                AngleStatistic::AlphaPower => v.norm_sqr(),
                AngleStatistic::Fit => v.norm_sqr() * a.dotc(&(&self.gram * a)).re / self.x.ncols() as f64,
            }),
            Err(Error::DirectionUnobservable { .. }) => Ok(0.0),
            Err(e) => Err(e),
        }
    }

    pub fn spectrum(&self, grid: &GridSpec, statistic: AngleStatistic) -> Result<Spectrum> {
        grid.validate()?;
        let thetas = grid.thetas_deg();
        let phis = grid.phis_deg();
        let rows: Vec<Vec<f64>> = thetas
            .par_iter()
            .map(|&t| -> Result<Vec<f64>> {
                let f = self.filtered(t.to_radians())?;
                phis.iter()
                    .map(|&p| {
                        let angles = TargetAngles {
                            theta: t.to_radians(),
                            phi: p.to_radians(),
                        };
                        self.cell(&f, &tx_steering(self.tx, angles), statistic)
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        Ok(Spectrum {
            grid: *grid,
            thetas_deg: thetas,
            phis_deg: phis,
            statistic,
            power: rows.into_iter().flatten().collect(),
        })
    }
}

/// Closed-form α̂ at given angles and Doppler.
pub fn alpha_estimate(
    ds: &EchoDataset,
    tx: &ArrayGeometry,
    rx: &ArrayGeometry,
    angles: TargetAngles,
    doppler_hz: f64,
    loading: f64,
) -> Result<Complex64> {
    Processor::new(ds, tx, rx, doppler_hz, loading)?.alpha(angles)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub theta_hat: f64,
    pub phi_hat: f64,
    pub doppler_hat: f64,
    pub doppler_bin_hz: f64,
    pub alpha_hat: Complex64,
    /// Coarse-grid surface.
    pub spectrum: Spectrum,
    pub peak_to_median: f64,
    /// Nested windows searched after the coarse grid; the estimate lies on
    /// the last one.
    pub refinements: Vec<GridSpec>,
}

/// Angle-search settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchSettings {
    pub grid: GridSpec,
    /// Nested windows, each ten times finer, searched after the coarse grid.
    pub refine_levels: usize,
    pub loading: f64,
    pub statistic: AngleStatistic,
}

impl SearchSettings {
    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        Self {
            grid: GridSpec::from_config(cfg),
            refine_levels: cfg.grid_refine_levels,
            loading: cfg.diagonal_loading,
            statistic: cfg.angle_statistic,
        }
    }
}

/// Coarse 2-D search, then nested refinement around the running peak.
pub fn angle_search(
    ds: &EchoDataset,
    tx: &ArrayGeometry,
    rx: &ArrayGeometry,
    doppler: &DopplerSpectrum,
    search: &SearchSettings,
) -> Result<EstimationResult> {
    let proc = Processor::new(ds, tx, rx, doppler.peak_hz, search.loading)?;
    let spectrum = proc.spectrum(&search.grid, search.statistic)?;
    let (mut theta, mut phi, _) = spectrum.peak();
    let mut refinements = Vec::with_capacity(search.refine_levels);
    let mut current = search.grid;
    for _ in 0..search.refine_levels {
        current = current.refined_around(theta, phi, &search.grid);
        let fine = proc.spectrum(&current, search.statistic)?;
        (theta, phi, _) = fine.peak();
        refinements.push(current);
    }
    let angles = TargetAngles {
        theta: theta.to_radians(),
        phi: phi.to_radians(),
    };
    let alpha_hat = proc.alpha(angles)?;
    Ok(EstimationResult {
        theta_hat: angles.theta,
        phi_hat: angles.phi,
        doppler_hat: doppler.peak_hz,
        doppler_bin_hz: doppler.bin_hz,
        alpha_hat,
        peak_to_median: spectrum.peak_to_median(),
        spectrum,
        refinements,
    })
}

/// Doppler stage followed by the angle search, with scenario settings.
pub fn estimate(ds: &EchoDataset, cfg: &ScenarioConfig) -> Result<EstimationResult> {
    let tx = cfg.tx_geometry()?;
    let rx = cfg.rx_geometry()?;
    let doppler = doppler_fft(ds, cfg.doppler_method, cfg.n_fft)?;
    angle_search(ds, &tx, &rx, &doppler, &SearchSettings::from_config(cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::commrates::{BeamformerSet, Strategy};
    use crate::seeded_rng;
    use crate::signalsim::{echo, simulate_cpi, synth_streams, Truth};
    use rand::Rng;

    fn arrays() -> (ScenarioConfig, ArrayGeometry, ArrayGeometry) {
        let cfg = ScenarioConfig::default();
        let tx = cfg.tx_geometry().unwrap();
        let rx = cfg.rx_geometry().unwrap();
        (cfg, tx, rx)
    }

    fn uniform_beams(cfg: &ScenarioConfig) -> BeamformerSet {
        let n = cfg.n_feeds;
        let amp = cfg.per_feed_power().sqrt();
        let private = (0..n)
            .map(|i| {
                let mut v = ComplexVector::zeros(n);
                v[i] = amp.into();
                v
            })
            .collect();
        BeamformerSet::new(ComplexVector::zeros(n), private, Strategy::Sdma).unwrap()
    }

    fn dataset(x: ComplexMatrix, z: ComplexMatrix, truth: Truth, ts: f64, m: usize) -> EchoDataset {
        EchoDataset {
            x,
            z,
            truth,
            sample_period: ts,
            samples_per_symbol: m,
        }
    }

    #[test]
    fn single_snapshot_covariance_is_outer_product() {
        let z = ComplexMatrix::from_fn(3, 1, |i, _| Complex64::new(i as f64, 1.0));
        let r = sample_covariance(&z).unwrap();
        let col = z.column(0);
        assert!((r.clone() - &col * col.adjoint()).norm() < 1e-15);
        assert_eq!(r.clone(), r.adjoint());
    }

    #[test]
    fn white_noise_covariance_approaches_identity() {
        let mut rng = seeded_rng(2);
        let z = ComplexMatrix::from_fn(4, 16384, |_, _| {
            let re: f64 = rng.sample(rand_distr::StandardNormal);
            let im: f64 = rng.sample(rand_distr::StandardNormal);
            Complex64::new(re, im).scale((0.5f64).sqrt() * 1.5)
        });
        let r = sample_covariance(&z).unwrap();
        let target = ComplexMatrix::identity(4, 4).scale(2.25);
        for i in 0..4 {
            assert!((r[(i, i)].re / 2.25 - 1.0).abs() < 0.05);
        }
        assert!((r - target).norm() / 2.25 < 0.1);
    }

    #[test]
    fn capon_identity_is_scaled_steering() {
        let (_, _, rx) = arrays();
        let w = capon_weight(&ComplexMatrix::identity(rx.len(), rx.len()), 0.4, &rx).unwrap();
        let b = rx_steering(&rx, 0.4);
        assert!((w - b.unscale(rx.len() as f64)).norm() < 1e-14);
    }

    #[test]
    fn capon_is_distortionless_and_nulls_interference() {
        let (_, _, rx) = arrays();
        let b2 = rx_steering(&rx, 1.2);
        let r = &b2 * b2.adjoint() * Complex64::new(1e4, 0.0) + ComplexMatrix::identity(rx.len(), rx.len());
        for theta in [0.3, 0.7, 1.0] {
            let w = capon_weight(&r, theta, &rx).unwrap();
            let b = rx_steering(&rx, theta);
            assert!((w.dotc(&b) - Complex64::new(1.0, 0.0)).norm() < 1e-12);
            assert!(w.dotc(&b2).norm() < 0.1);
        }
    }

    #[test]
    fn intra_symbol_fft_recovers_tone_bin() {
        let (m, n_fft, ts) = (64, 256, 1e-6);
        let bin = 12.0;
        let f = bin / (n_fft as f64 * ts);
        let z = ComplexMatrix::from_fn(2, 8 * m, |_, j| cis(2.0 * PI * f * ts * j as f64));
        let s = doppler_intra_symbol(&z, m, n_fft, ts).unwrap();
        assert!((s.peak_hz - f).abs() < 1e-6 * f);
        let dc = ComplexMatrix::from_element(2, 8 * m, Complex64::new(1.0, 0.0));
        assert_eq!(doppler_intra_symbol(&dc, m, n_fft, ts).unwrap().peak_hz, 0.0);
        assert!(doppler_intra_symbol(&z, m, 32, ts).is_err());
    }

    #[test]
    fn slow_time_fft_finds_scenario_doppler() {
        let (cfg, tx, rx) = arrays();
        let bf = uniform_beams(&cfg);
        let ds = simulate_cpi(&cfg, &bf, 1).unwrap();
        let s = doppler_slow_time(&ds.x, &ds.z, ds.samples_per_symbol, cfg.n_fft, ds.sample_period).unwrap();
        assert!((s.peak_hz - cfg.doppler_hz).abs() <= s.bin_hz, "{} vs {}", s.peak_hz, cfg.doppler_hz);
        let still = ScenarioConfig {
            doppler_hz: 0.0,
            ..cfg.clone()
        };
        let ds0 = simulate_cpi(&still, &bf, 1).unwrap();
        assert_eq!(doppler_fft(&ds0, DopplerMethod::SlowTime, cfg.n_fft).unwrap().peak_hz, 0.0);
        let _ = (tx, rx);
    }

    #[test]
    fn alpha_exact_on_noiseless_echo() {
        let (cfg, tx, rx) = arrays();
        let ts = cfg.sample_period();
        let x = synth_streams(tx.len(), 64 * 4, &mut seeded_rng(3)).unwrap();
        let truth = Truth {
            theta: 45f64.to_radians(),
            phi: 83f64.to_radians(),
            doppler_hz: 2000.0,
            alpha: Complex64::new(0.02, -0.01),
        };
        let z = echo(&x, &truth, &tx, &rx, ts, 0.0, &mut seeded_rng(4)).unwrap();
        // add a little white noise so the covariance is well conditioned
        let mut rng = seeded_rng(5);
        let z = z.map(|v| v + Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5) * 1e-9);
        let ds = dataset(x, z.clone(), truth, ts, 4);
        let a = alpha_estimate(&ds, &tx, &rx, truth.angles(), truth.doppler_hz, 1e-4).unwrap();
        assert!((a - truth.alpha).norm() / truth.alpha.norm() < 1e-6, "{a}");

        let doubled = dataset(ds.x.clone(), z.scale(2.0), truth, ts, 4);
        let a2 = alpha_estimate(&doubled, &tx, &rx, truth.angles(), truth.doppler_hz, 1e-4).unwrap();
        assert!((a2 - a * 2.0).norm() < 1e-9 * a.norm());

        let rot = cis(0.9);
        let rotated = dataset(ds.x.clone(), z.map(|v| v * rot), truth, ts, 4);
        let ar = alpha_estimate(&rotated, &tx, &rx, truth.angles(), truth.doppler_hz, 1e-4).unwrap();
        assert!((ar - a * rot).norm() < 1e-9 * a.norm());
    }

    #[test]
    fn unlit_direction_is_unobservable() {
        let (cfg, tx, rx) = arrays();
        let angles = TargetAngles::from_degrees(45.0, 83.0).unwrap();
        let a = tx_steering(&tx, angles);
        // transmit only in the orthogonal complement of a
        let n = tx.len();
        let proj = ComplexMatrix::identity(n, n) - (&a * a.adjoint()).unscale(a.norm_squared());
        let s = synth_streams(n, 32, &mut seeded_rng(6)).unwrap();
        let x = &proj * s;
        let mut rng = seeded_rng(7);
        let z = ComplexMatrix::from_fn(rx.len(), 32, |_, _| Complex64::new(rng.random::<f64>(), rng.random::<f64>()));
        let ds = dataset(x, z, Truth::from_config(&cfg), 1e-6, 1);
        match alpha_estimate(&ds, &tx, &rx, angles, 0.0, 1e-4) {
            Err(Error::DirectionUnobservable { .. }) => {}
            other => panic!("expected unobservable, got {other:?}"),
        }
    }

    #[test]
    fn noiseless_search_lands_on_truth_cell() {
        // Orthogonal transmit rows make X̄X̄ᴴ ∝ I, so the amplitude spectrum
        // peaks exactly at the true steering vector.
        let (cfg, tx, rx) = arrays();
        let n = cfg.n_feeds;
        let l = 8 * n;
        let amp = cfg.per_feed_power().sqrt();
        let x = ComplexMatrix::from_fn(n, l, |t, j| cis(2.0 * PI * (t * j) as f64 / n as f64).scale(amp));
        let truth = Truth::from_config(&cfg);
        let mut rng = seeded_rng(2);
        let z = echo(&x, &truth, &tx, &rx, cfg.sample_period(), 1e-12, &mut rng).unwrap();
        let ds = EchoDataset {
            x,
            z,
            truth,
            sample_period: cfg.sample_period(),
            samples_per_symbol: 1,
        };
        let grid = GridSpec::from_config(&cfg);
        let exact = DopplerSpectrum {
            freqs_hz: vec![cfg.doppler_hz],
            power: vec![1.0],
            peak_hz: cfg.doppler_hz,
            bin_hz: 1.0 / (l as f64 * cfg.sample_period()),
        };
        let search = SearchSettings {
            grid,
            refine_levels: 0,
            loading: cfg.diagonal_loading,
            statistic: AngleStatistic::AlphaPower,
        };
        let r = angle_search(&ds, &tx, &rx, &exact, &search).unwrap();
        assert!((r.theta_hat.to_degrees() - 45.0).abs() < 1e-9);
        assert!((r.phi_hat.to_degrees() - 83.0).abs() < 1e-9, "{} {}", r.theta_hat.to_degrees(), r.phi_hat.to_degrees());
        assert_eq!(r.spectrum.power.len(), r.spectrum.thetas_deg.len() * r.spectrum.phis_deg.len());
        assert!(r.peak_to_median > 1.0);
        let csv = r.spectrum.to_csv();
        assert_eq!(csv.lines().count(), 1 + r.spectrum.power.len());
    }

    #[test]
    fn refinement_windows_shrink_tenfold() {
        let g = GridSpec {
            theta_min_deg: 35.0,
            theta_max_deg: 55.0,
            phi_min_deg: 73.0,
            phi_max_deg: 90.0,
            step_deg: 0.5,
        };
        let r = g.refined_around(45.0, 89.8, &g);
        assert_eq!(r.step_deg, 0.05);
        assert_eq!((r.theta_min_deg, r.theta_max_deg), (44.5, 45.5));
        assert_eq!(r.phi_max_deg, 90.0);
        assert_eq!(g.thetas_deg().len(), 41);
        assert_eq!(g.phis_deg().len(), 35);
        assert!(GridSpec { phi_min_deg: 0.0, ..g }.validate().is_err());
    }
}
