//! Per-user SINRs and rates for rate-splitting (RSMA) and private-only
//! (SDMA) transmission.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{ComplexMatrix, ComplexVector};

/// Slack on `Σ C_k ≤ R_c` absorbing solver round-off.
pub const SPLIT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Rsma,
    Sdma,
    RadarOnly,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Rsma => "rsma",
            Strategy::Sdma => "sdma",
            Strategy::RadarOnly => "radar-only",
        }
    }

    pub fn has_common_stream(self) -> bool {
        matches!(self, Strategy::Rsma)
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rsma" => Ok(Strategy::Rsma),
            "sdma" => Ok(Strategy::Sdma),
            "radar-only" | "radar_only" | "radar" => Ok(Strategy::RadarOnly),
            other => invalid(format!(
                "unknown strategy `{other}` (expected rsma, sdma or radar-only)"
            )),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Common precoder plus one private precoder per user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamformerSet {
    #[serde(with = "crate::linalg::serde_vector")]
    pub common: ComplexVector,
    #[serde(with = "crate::linalg::serde_vectors")]
    pub private: Vec<ComplexVector>,
    pub strategy: Strategy,
}

impl BeamformerSet {
    pub fn new(common: ComplexVector, private: Vec<ComplexVector>, strategy: Strategy) -> Result<Self> {
        let n = common.len();
        if private.iter().any(|p| p.len() != n) {
            return invalid("all precoders must have the same length");
        }
        if strategy == Strategy::Sdma && common.iter().any(|z| z.norm() > 0.0) {
            return invalid("SDMA beamformers must have a zero common precoder");
        }
        Ok(Self {
            common,
            private,
            strategy,
        })
    }

    pub fn n_feeds(&self) -> usize {
        self.common.len()
    }

    pub fn n_users(&self) -> usize {
        self.private.len()
    }

    /// P = [p_c, p_1, …, p_K].
    pub fn matrix(&self) -> ComplexMatrix {
        let mut cols = vec![self.common.clone()];
        cols.extend(self.private.iter().cloned());
        ComplexMatrix::from_columns(&cols)
    }

    /// R_X = P Pᴴ.
    pub fn covariance(&self) -> ComplexMatrix {
        let p = self.matrix();
        &p * p.adjoint()
    }

    pub fn per_feed_power(&self) -> Vec<f64> {
        let n = self.n_feeds();
        (0..n)
            .map(|i| {
                self.common[i].norm_sqr() + self.private.iter().map(|p| p[i].norm_sqr()).sum::<f64>()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub common_sinrs: Vec<f64>,
    pub private_sinrs: Vec<f64>,
    /// min_k log2(1 + γ_c,k), zero for SDMA.
    pub common_rate: f64,
    pub common_splits: Vec<f64>,
    pub private_rates: Vec<f64>,
    pub totals: Vec<f64>,
}

fn check_dims(h: &ComplexMatrix, bf: &BeamformerSet, noise: f64) -> Result<()> {
    if !(noise.is_finite() && noise > 0.0) {
        return invalid(format!("noise power must be positive, got {noise}"));
    }
    if h.nrows() != bf.n_feeds() || h.ncols() != bf.n_users() {
        return invalid(format!(
            "channel is {}x{}, beamformers are {} feeds x {} users",
            h.nrows(),
            h.ncols(),
            bf.n_feeds(),
            bf.n_users()
        ));
    }
    Ok(())
}

/// |h_kᴴ p_i|² for every user k (rows) and private precoder i (columns).
fn private_gains(h: &ComplexMatrix, bf: &BeamformerSet) -> Vec<Vec<f64>> {
    (0..h.ncols())
        .map(|k| {
            let hk = h.column(k);
            bf.private.iter().map(|p| hk.dotc(p).norm_sqr()).collect()
        })
        .collect()
}

pub fn common_sinr(h: &ComplexMatrix, bf: &BeamformerSet, noise: f64) -> Result<Vec<f64>> {
    check_dims(h, bf, noise)?;
    let gains = private_gains(h, bf);
    Ok((0..h.ncols())
        .map(|k| {
            let signal = h.column(k).dotc(&bf.common).norm_sqr();
            signal / (gains[k].iter().sum::<f64>() + noise)
        })
        .collect())
}

pub fn private_sinr(h: &ComplexMatrix, bf: &BeamformerSet, noise: f64) -> Result<Vec<f64>> {
    check_dims(h, bf, noise)?;
    let gains = private_gains(h, bf);
    Ok(gains
        .iter()
        .enumerate()
        .map(|(k, g)| {
            let interference: f64 = g.iter().enumerate().filter(|(i, _)| *i != k).map(|(_, v)| v).sum();
            g[k] / (interference + noise)
        })
        .collect())
}

/// Full rate report. For SDMA (and radar-only) the common stream is off and
/// the splits are forced to zero regardless of `splits`.
pub fn rate_report(
    h: &ComplexMatrix,
    bf: &BeamformerSet,
    noise: f64,
    splits: &[f64],
) -> Result<RateReport> {
    let common_sinrs = common_sinr(h, bf, noise)?;
    let private_sinrs = private_sinr(h, bf, noise)?;
    let k = h.ncols();
    let private_rates: Vec<f64> = private_sinrs.iter().map(|g| (1.0 + g).log2()).collect();
    let (common_rate, common_splits) = if bf.strategy.has_common_stream() {
        if splits.len() != k {
            return invalid(format!("expected {k} common splits, got {}", splits.len()));
        }
        let rc = common_sinrs
            .iter()
            .map(|g| (1.0 + g).log2())
            .fold(f64::INFINITY, f64::min);
        if let Some(user) = splits.iter().position(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::ConstraintViolation {
                user,
                detail: format!("negative common split {}", splits[user]),
            });
        }
        let total: f64 = splits.iter().sum();
        if total > rc + SPLIT_TOLERANCE {
            let user = common_sinrs
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap_or(0);
            return Err(Error::ConstraintViolation {
                user,
                detail: format!("common splits sum {total} exceed decodable common rate {rc}"),
            });
        }
        (rc, splits.to_vec())
    } else {
        (0.0, vec![0.0; k])
    };
    let totals = common_splits
        .iter()
        .zip(&private_rates)
        .map(|(c, r)| c + r)
        .collect();
    Ok(RateReport {
        common_sinrs,
        private_sinrs,
        common_rate,
        common_splits,
        private_rates,
        totals,
    })
}
