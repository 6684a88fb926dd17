//! One coherent processing interval: QPSK streams, beamformed transmit
//! block at sample rate and the bistatic echo seen by the receive array.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::array::{rx_steering, tx_steering, ArrayGeometry, TargetAngles};
use crate::commrates::BeamformerSet;
use crate::config::ScenarioConfig;
use crate::error::{invalid, Error, Result};
use crate::linalg::{cis, ComplexMatrix};

const MAGIC: &[u8; 4] = b"SDFE";
const VERSION: u32 = 1;

/// Ground truth of the simulated target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub theta: f64,
    pub phi: f64,
    pub doppler_hz: f64,
    pub alpha: Complex64,
}

impl Truth {
    pub fn angles(&self) -> TargetAngles {
        TargetAngles {
            theta: self.theta,
            phi: self.phi,
        }
    }

    /// Scenario target with |α| from SNR_radar and zero phase.
    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        let t = cfg.target();
        Self {
            theta: t.theta,
            phi: t.phi,
            doppler_hz: cfg.doppler_hz,
            alpha: Complex64::new(cfg.alpha_mag2().sqrt(), 0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EchoDataset {
    /// N_t × L·M transmit samples.
    pub x: ComplexMatrix,
    /// N_r × L·M receive samples.
    pub z: ComplexMatrix,
    pub truth: Truth,
    pub sample_period: f64,
    pub samples_per_symbol: usize,
}

impl EchoDataset {
    pub fn n_samples(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_symbols(&self) -> usize {
        self.n_samples() / self.samples_per_symbol
    }

    /// Symbol period T = M·T_s.
    pub fn symbol_period(&self) -> f64 {
        self.sample_period * self.samples_per_symbol as f64
    }

    /// Little-endian binary: magic, version, dims, T_s, truth, then X and Z
    /// as interleaved (re, im) pairs in column-major sample order.
    pub fn write_binary(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        for d in [self.x.nrows(), self.z.nrows(), self.n_samples(), self.samples_per_symbol] {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let t = &self.truth;
        for v in [self.sample_period, t.theta, t.phi, t.doppler_hz, t.alpha.re, t.alpha.im] {
            w.write_all(&v.to_le_bytes())?;
        }
        for m in [&self.x, &self.z] {
            for c in m.iter() {
                w.write_all(&c.re.to_le_bytes())?;
                w.write_all(&c.im.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::InvalidArgument("not an echo dataset file".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != VERSION {
            return Err(Error::InvalidArgument(format!("unsupported dataset version {version}")));
        }
        let mut b8 = [0u8; 8];
        let mut dims = [0usize; 4];
        for d in dims.iter_mut() {
            r.read_exact(&mut b8)?;
            *d = u64::from_le_bytes(b8) as usize;
        }
        let mut read_f64 = |r: &mut dyn Read| -> Result<f64> {
            r.read_exact(&mut b8)?;
            Ok(f64::from_le_bytes(b8))
        };
        let mut head = [0.0; 6];
        for v in head.iter_mut() {
            *v = read_f64(&mut r)?;
        }
        let [n_tx, n_rx, n, m_symb] = dims;
        if m_symb == 0 || n % m_symb != 0 {
            return Err(Error::InvalidArgument("sample count is not a whole number of symbols".into()));
        }
        let mut read_matrix = |rows: usize| -> Result<ComplexMatrix> {
            let mut data = Vec::with_capacity(rows * n);
            for _ in 0..rows * n {
                let re = read_f64(&mut r)?;
                let im = read_f64(&mut r)?;
                data.push(Complex64::new(re, im));
            }
            Ok(ComplexMatrix::from_vec(rows, n, data))
        };
        let x = read_matrix(n_tx)?;
        let z = read_matrix(n_rx)?;
        Ok(Self {
            x,
            z,
            truth: Truth {
                theta: head[1],
                phi: head[2],
                doppler_hz: head[3],
                alpha: Complex64::new(head[4], head[5]),
            },
            sample_period: head[0],
            samples_per_symbol: m_symb,
        })
    }

    pub fn save_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_binary(std::io::BufWriter::new(f))
    }

    pub fn load_binary(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_binary(std::io::BufReader::new(f))
    }

    /// Long-format CSV (`signal,row,sample,re,im`), meant for small cases.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("signal,row,sample,re,im\n");
        for (name, m) in [("x", &self.x), ("z", &self.z)] {
            for j in 0..m.ncols() {
                for i in 0..m.nrows() {
                    let c = m[(i, j)];
                    out.push_str(&format!("{name},{i},{j},{:e},{:e}\n", c.re, c.im));
                }
            }
        }
        out
    }
}

/// (K+1) × L matrix of i.i.d. unit-power QPSK symbols.
pub fn synth_streams<R: Rng + ?Sized>(n_streams: usize, n_symbols: usize, rng: &mut R) -> Result<ComplexMatrix> {
    if n_streams == 0 || n_symbols == 0 {
        return invalid("need at least one stream and one symbol");
    }
    let sign = |b: bool| if b { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
    Ok(ComplexMatrix::from_fn(n_streams, n_symbols, |_, _| {
        Complex64::new(sign(rng.random::<bool>()), sign(rng.random::<bool>()))
    }))
}

/// x[l] = P s[l], each symbol held for `samples_per_symbol` samples.
pub fn transmit(bf: &BeamformerSet, streams: &ComplexMatrix, samples_per_symbol: usize) -> Result<ComplexMatrix> {
    let p = bf.matrix();
    if p.ncols() != streams.nrows() {
        return invalid(format!(
            "{} beamformers for {} streams",
            p.ncols(),
            streams.nrows()
        ));
    }
    if samples_per_symbol == 0 {
        return invalid("samples_per_symbol must be at least 1");
    }
    let symbols = &p * streams;
    let n = symbols.ncols() * samples_per_symbol;
    Ok(ComplexMatrix::from_fn(p.nrows(), n, |i, j| symbols[(i, j / samples_per_symbol)]))
}

/// z[i] = α e^{j2πF_D i T_s} b(θ) aᴴ(θ,φ) x[i] + m[i], i = 1 … L·M, with
/// m[i] ~ CN(0, σ_m² I).
pub fn echo<R: Rng + ?Sized>(
    x: &ComplexMatrix,
    truth: &Truth,
    tx: &ArrayGeometry,
    rx: &ArrayGeometry,
    sample_period: f64,
    noise_var: f64,
    rng: &mut R,
) -> Result<ComplexMatrix> {
    if x.nrows() != tx.len() {
        return invalid(format!("transmit block has {} rows for {} feeds", x.nrows(), tx.len()));
    }
    if !(noise_var >= 0.0 && noise_var.is_finite()) {
        return invalid("noise variance must be non-negative");
    }
    let a = tx_steering(tx, truth.angles());
    let b = rx_steering(rx, truth.theta);
    // aᴴ x[i] for every sample
    let proj = a.adjoint() * x;
    let step = 2.0 * PI * truth.doppler_hz * sample_period;
    let sd = (noise_var / 2.0).sqrt();
    let mut z = ComplexMatrix::zeros(rx.len(), x.ncols());
    for j in 0..x.ncols() {
        let g = truth.alpha * cis(step * (j + 1) as f64) * proj[(0, j)];
        for r in 0..rx.len() {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            z[(r, j)] = b[r] * g + Complex64::new(sd * re, sd * im);
        }
    }
    Ok(z)
}

/// Full CPI for a scenario and beamformer set, deterministic in `seed`.
pub fn simulate_cpi(cfg: &ScenarioConfig, bf: &BeamformerSet, seed: u64) -> Result<EchoDataset> {
    let tx = cfg.tx_geometry()?;
    let rx = cfg.rx_geometry()?;
    if bf.n_feeds() != tx.len() {
        return invalid(format!("beamformers have {} feeds, scenario has {}", bf.n_feeds(), tx.len()));
    }
    let mut rng = crate::seeded_rng(seed);
    let streams = synth_streams(bf.matrix().ncols(), cfg.symbols_per_cpi, &mut rng)?;
    let x = transmit(bf, &streams, cfg.samples_per_symbol)?;
    let truth = Truth::from_config(cfg);
    let z = echo(&x, &truth, &tx, &rx, cfg.sample_period(), cfg.radar_noise_var, &mut rng)?;
    Ok(EchoDataset {
        x,
        z,
        truth,
        sample_period: cfg.sample_period(),
        samples_per_symbol: cfg.samples_per_symbol,
    })
}
