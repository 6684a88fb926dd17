//! Multibeam downlink channel synthesis.
//!
//! Single feed per beam: feed `n` illuminates a beam centered at a point on
//! a hexagonal grid below the satellite. The entry for feed `n` and user `k`
//! is
//!
//! ```text
//! h[n,k] = sqrt(G_sat · g(φ_nk) · G_user / (κ T B)) · λ / (4π d_k) · 10^(-ξ_k/20) · e^(jψ_k)
//! ```
//!
//! with `g` the Bessel beam pattern, `φ_nk` the off-boresight angle of user
//! `k` seen from beam `n`, `ξ_k` a lognormal rain attenuation in dB and `ψ_k`
//! a uniform phase. Rain and phase are per user (shared across feeds). Powers
//! elsewhere in the crate are expressed in mW, so `|h_kᴴ p|² / σ_n²` is the
//! per-user SNR with `p` in √mW and `σ_n²` in mW.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::ScenarioConfig;
use crate::error::{invalid, Result};
use crate::linalg::{cis, ComplexMatrix};

/// u-scale at which the pattern drops to half power at the 3 dB angle.
pub const BEAM_PATTERN_SCALE: f64 = 2.07123;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelMatrix {
    /// N_t × K, column k is h_k.
    #[serde(with = "crate::linalg::serde_matrix")]
    pub h: ComplexMatrix,
    /// Ground positions (x, y) in meters.
    pub user_positions: Vec<[f64; 2]>,
    /// The common amplitude factor sqrt(G_sat G_user / κTB).
    pub link_scale: f64,
}

impl ChannelMatrix {
    pub fn n_feeds(&self) -> usize {
        self.h.nrows()
    }

    pub fn n_users(&self) -> usize {
        self.h.ncols()
    }

    /// Row-major CSV, one `re,im` pair per cell.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.h.nrows() {
            let row: Vec<String> = (0..self.h.ncols())
                .map(|j| format!("{:e},{:e}", self.h[(i, j)].re, self.h[(i, j)].im))
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Bessel function of the first kind J_n(x), by the trapezoidal rule on
/// Bessel's integral over one full period (exponentially convergent).
pub fn bessel_j(n: u32, x: f64) -> f64 {
    const POINTS: usize = 256;
    let step = 2.0 * PI / POINTS as f64;
    let sum: f64 = (0..POINTS)
        .map(|i| {
            let tau = i as f64 * step;
            (n as f64 * tau - x * tau.sin()).cos()
        })
        .sum();
    sum / POINTS as f64
}

/// J_n(x)/xⁿ, by its power series near the origin where the quotient of
/// the integral form loses all precision.
fn bessel_j_scaled(n: u32, x: f64) -> f64 {
    if x.abs() >= 4.0 {
        return bessel_j(n, x) / x.powi(n as i32);
    }
    let q = -(x * x) / 4.0;
    let mut term = 1.0 / (2f64.powi(n as i32) * (1..=n).map(f64::from).product::<f64>());
    let mut sum = term;
    for m in 1..40u32 {
        term *= q / (m as f64 * (m + n) as f64);
        sum += term;
    }
    sum
}

/// Normalized beam gain g(u) = (J1(u)/(2u) + 36 J3(u)/u³)², g(0) = 1.
pub fn beam_pattern(off_boresight: f64, angle_3db: f64) -> f64 {
    let u = BEAM_PATTERN_SCALE * off_boresight.sin() / angle_3db.sin();
    let v = bessel_j_scaled(1, u) / 2.0 + 36.0 * bessel_j_scaled(3, u);
    v * v
}

/// Ground radius of the 3 dB footprint of a nadir-ish beam.
pub fn footprint_radius(cfg: &ScenarioConfig) -> f64 {
    cfg.sat_height_m * cfg.angle_3db().tan()
}

/// Beam centers on a hexagonal tessellation of footprint circles, filled row
/// by row and re-centered on the sub-satellite point.
pub fn beam_centers(cfg: &ScenarioConfig) -> Vec<[f64; 2]> {
    let n = cfg.n_feeds;
    let r = footprint_radius(cfg);
    let cols = (n as f64).sqrt().ceil() as usize;
    let dx = 3f64.sqrt() * r;
    let dy = 1.5 * r;
    let mut pts: Vec<[f64; 2]> = (0..n)
        .map(|i| {
            let (row, col) = (i / cols, i % cols);
            let shift = if row % 2 == 1 { dx / 2.0 } else { 0.0 };
            [col as f64 * dx + shift, row as f64 * dy]
        })
        .collect();
    let cx = pts.iter().map(|p| p[0]).sum::<f64>() / n as f64;
    let cy = pts.iter().map(|p| p[1]).sum::<f64>() / n as f64;
    for p in &mut pts {
        p[0] -= cx;
        p[1] -= cy;
    }
    pts
}

/// One user uniformly inside each beam's 3 dB footprint.
pub fn place_users<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Result<Vec<[f64; 2]>> {
    if cfg.n_users != cfg.n_feeds {
        return invalid(format!(
            "single feed per beam needs one user per feed: K = {}, N_t = {}",
            cfg.n_users, cfg.n_feeds
        ));
    }
    let r = footprint_radius(cfg);
    Ok(beam_centers(cfg)
        .into_iter()
        .map(|c| {
            let rad = r * rng.random::<f64>().sqrt();
            let ang = 2.0 * PI * rng.random::<f64>();
            [c[0] + rad * ang.cos(), c[1] + rad * ang.sin()]
        })
        .collect())
}

fn off_boresight(height: f64, beam: [f64; 2], user: [f64; 2]) -> f64 {
    let v1 = [beam[0], beam[1], -height];
    let v2 = [user[0], user[1], -height];
    let dot = v1[0] * v2[0] + v1[1] * v2[1] + v1[2] * v2[2];
    let n1 = (v1[0] * v1[0] + v1[1] * v1[1] + v1[2] * v1[2]).sqrt();
    let n2 = (v2[0] * v2[0] + v2[1] * v2[1] + v2[2] * v2[2]).sqrt();
    (dot / (n1 * n2)).clamp(-1.0, 1.0).acos()
}

/// Per-user random channel effects.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserFading {
    /// Rain attenuation in dB (≥ 0).
    pub rain_db: f64,
    pub phase: f64,
}

pub fn draw_fading<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Vec<UserFading> {
    let normal = Normal::new(cfg.rain_mu, cfg.rain_sigma2.sqrt()).expect("validated sigma");
    (0..cfg.n_users)
        .map(|_| UserFading {
            rain_db: normal.sample(rng).exp(),
            phase: 2.0 * PI * rng.random::<f64>(),
        })
        .collect()
}

pub fn link_scale(cfg: &ScenarioConfig) -> f64 {
    let g_sat = 10f64.powf(cfg.sat_antenna_gain_dbi / 10.0);
    let g_user = 10f64.powf(cfg.user_antenna_gain_dbi / 10.0);
    (g_sat * g_user / (cfg.boltzmann * cfg.noise_temperature_k * cfg.bandwidth_hz)).sqrt()
}

/// Deterministic channel assembly from positions and fading draws.
pub fn assemble_channel(
    cfg: &ScenarioConfig,
    positions: &[[f64; 2]],
    fading: &[UserFading],
) -> Result<ChannelMatrix> {
    if positions.len() != cfg.n_users || fading.len() != cfg.n_users {
        return invalid("positions and fading must have one entry per user");
    }
    let centers = beam_centers(cfg);
    let lambda = cfg.wavelength();
    let scale = link_scale(cfg);
    let mut h = ComplexMatrix::zeros(cfg.n_feeds, cfg.n_users);
    for (k, (pos, fade)) in positions.iter().zip(fading).enumerate() {
        let d = (pos[0] * pos[0] + pos[1] * pos[1] + cfg.sat_height_m * cfg.sat_height_m).sqrt();
        let path = lambda / (4.0 * PI * d);
        let rain = 10f64.powf(-fade.rain_db / 20.0);
        for (n, c) in centers.iter().enumerate() {
            let g = beam_pattern(off_boresight(cfg.sat_height_m, *c, *pos), cfg.angle_3db());
            h[(n, k)] = cis(fade.phase) * (scale * g.sqrt() * path * rain);
        }
    }
    Ok(ChannelMatrix {
        h,
        user_positions: positions.to_vec(),
        link_scale: scale,
    })
}

pub fn synthesize_channel<R: Rng + ?Sized>(
    cfg: &ScenarioConfig,
    positions: &[[f64; 2]],
    rng: &mut R,
) -> Result<ChannelMatrix> {
    let fading = draw_fading(cfg, rng);
    assemble_channel(cfg, positions, &fading)
}

/// Convenience: users and channel from the config seed.
pub fn scenario_channel(cfg: &ScenarioConfig) -> Result<ChannelMatrix> {
    let mut rng = crate::seeded_rng(cfg.rng_seed);
    let positions = place_users(cfg, &mut rng)?;
    synthesize_channel(cfg, &positions, &mut rng)
}

/// Per-user SNR (dB) when every feed radiates P_t/N_t co-phased toward that
/// user alone (maximum-ratio transmission under the per-feed constraint).
pub fn mrt_snr_db(cfg: &ScenarioConfig, ch: &ChannelMatrix) -> Vec<f64> {
    let p_feed = cfg.per_feed_power();
    (0..ch.n_users())
        .map(|k| {
            let amp: f64 = ch.h.column(k).iter().map(|z| z.norm()).sum();
            10.0 * (p_feed * amp * amp / cfg.noise_power()).log10()
        })
        .collect()
}
