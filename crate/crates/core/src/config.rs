//! Scenario configuration: physical constants, array and target setup,
//! solver and estimator settings.
//!
//! The on-disk format is a flat `key = value` file (TOML subset). Every key
//! is optional; missing keys take the built-in default scenario. Angles are
//! written in degrees in the file and converted to radians on access.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::array::{half_wavelength_uca_radius, make_uca, make_ula, ArrayGeometry, TargetAngles};
use crate::error::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DopplerMethod {
    /// FFT across symbols of the data-stripped echo (one sample per symbol).
    #[default]
    SlowTime,
    /// Per-symbol FFT of the element-summed samples, accumulated coherently.
    IntraSymbol,
}

/// Surface maximized by the angle search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AngleStatistic {
    /// |α̂(θ, φ)|². Peaks away from the target when R̂_X is not white.
    AlphaPower,
    /// |α̂|²·aᴴR̂_X a: echo power explained by the fitted target, i.e. the
    /// least-squares cost concentrated over α.
    #[default]
    Fit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub carrier_freq_hz: f64,
    pub sat_height_m: f64,
    pub bandwidth_hz: f64,
    pub angle_3db_deg: f64,
    pub sat_antenna_gain_dbi: f64,
    pub user_antenna_gain_dbi: f64,
    pub noise_temperature_k: f64,
    pub boltzmann: f64,
    /// Mean of ln(rain attenuation in dB).
    pub rain_mu: f64,
    /// Variance of ln(rain attenuation in dB).
    pub rain_sigma2: f64,

    pub n_feeds: usize,
    pub n_users: usize,
    pub n_rx: usize,
    /// UCA radius; `None` selects half-wavelength arc spacing.
    pub uca_radius_m: Option<f64>,
    /// ULA spacing; `None` selects λ/2.
    pub ula_spacing_m: Option<f64>,

    pub total_power_dbm: f64,
    pub noise_power_dbm: f64,
    pub rate_threshold_bps_hz: f64,

    pub snr_radar_db: f64,
    pub radar_noise_var: f64,
    pub target_theta_deg: f64,
    pub target_phi_deg: f64,
    pub doppler_hz: f64,
    pub symbols_per_cpi: usize,
    pub samples_per_symbol: usize,
    pub symbol_period_s: f64,

    pub rng_seed: u64,

    pub sca_epsilon: f64,
    pub sca_max_iter: usize,
    pub penalty_initial: f64,
    pub penalty_growth: f64,
    pub penalty_max: f64,
    pub rank_ratio_min: f64,

    pub n_fft: usize,
    pub doppler_method: DopplerMethod,
    pub diagonal_loading: f64,
    pub grid_theta_min_deg: f64,
    pub grid_theta_max_deg: f64,
    pub grid_phi_min_deg: f64,
    pub grid_phi_max_deg: f64,
    pub grid_step_deg: f64,
    pub angle_statistic: AngleStatistic,
    /// Number of nested ×10 refinement levels around the coarse peak.
    pub grid_refine_levels: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            carrier_freq_hz: 20e9,
            sat_height_m: 1000e3,
            bandwidth_hz: 25e6,
            angle_3db_deg: 0.4,
            sat_antenna_gain_dbi: 17.0,
            user_antenna_gain_dbi: 41.7,
            noise_temperature_k: 517.0,
            boltzmann: 1.38e-23,
            rain_mu: -2.6,
            rain_sigma2: 1.63,
            n_feeds: 9,
            n_users: 9,
            n_rx: 10,
            uca_radius_m: None,
            ula_spacing_m: None,
            total_power_dbm: 30.0,
            noise_power_dbm: 0.0,
            rate_threshold_bps_hz: 4.0,
            snr_radar_db: 28.0,
            radar_noise_var: 1.0,
            target_theta_deg: 45.0,
            target_phi_deg: 83.0,
            doppler_hz: 2000.0,
            symbols_per_cpi: 256,
            samples_per_symbol: 64,
            symbol_period_s: 4e-6,
            rng_seed: 0,
            sca_epsilon: 1e-4,
            sca_max_iter: 100,
            penalty_initial: 10.0,
            penalty_growth: 5.0,
            penalty_max: 1e5,
            rank_ratio_min: 0.999,
            n_fft: 1024,
            doppler_method: DopplerMethod::SlowTime,
            diagonal_loading: 1e-4,
            grid_theta_min_deg: 35.0,
            grid_theta_max_deg: 55.0,
            grid_phi_min_deg: 73.0,
            grid_phi_max_deg: 90.0,
            grid_step_deg: 0.5,
            angle_statistic: AngleStatistic::Fit,
            grid_refine_levels: 3,
        }
    }
}

fn db_to_lin(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::parse(&text)
    }

    pub fn to_config_string(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("carrier_freq_hz", self.carrier_freq_hz),
            ("sat_height_m", self.sat_height_m),
            ("bandwidth_hz", self.bandwidth_hz),
            ("angle_3db_deg", self.angle_3db_deg),
            ("noise_temperature_k", self.noise_temperature_k),
            ("boltzmann", self.boltzmann),
            ("radar_noise_var", self.radar_noise_var),
            ("symbol_period_s", self.symbol_period_s),
            ("sca_epsilon", self.sca_epsilon),
            ("penalty_initial", self.penalty_initial),
            ("diagonal_loading", self.diagonal_loading),
            ("grid_step_deg", self.grid_step_deg),
        ];
        for (key, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("key `{key}` must be positive, got {v}")));
            }
        }
        if !(self.rain_sigma2.is_finite() && self.rain_sigma2 >= 0.0) {
            return Err(Error::Config("key `rain_sigma2` must be non-negative".into()));
        }
        let counts = [
            ("n_feeds", self.n_feeds),
            ("n_users", self.n_users),
            ("n_rx", self.n_rx),
            ("symbols_per_cpi", self.symbols_per_cpi),
            ("samples_per_symbol", self.samples_per_symbol),
            ("sca_max_iter", self.sca_max_iter),
            ("n_fft", self.n_fft),
        ];
        for (key, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("key `{key}` must be at least 1")));
            }
        }
        if self.rate_threshold_bps_hz < 0.0 || !self.rate_threshold_bps_hz.is_finite() {
            return Err(Error::Config("key `rate_threshold_bps_hz` must be non-negative".into()));
        }
        if self.penalty_growth <= 1.0 {
            return Err(Error::Config("key `penalty_growth` must exceed 1".into()));
        }
        if !(0.0..=1.0).contains(&self.rank_ratio_min) {
            return Err(Error::Config("key `rank_ratio_min` must lie in [0, 1]".into()));
        }
        if self.grid_theta_min_deg >= self.grid_theta_max_deg
            || self.grid_phi_min_deg >= self.grid_phi_max_deg
        {
            return Err(Error::Config("grid ranges must be non-empty".into()));
        }
        if self.grid_phi_max_deg > 90.0 || self.grid_phi_min_deg <= 0.0 {
            return Err(Error::Config("grid elevation range must lie in (0, 90] degrees".into()));
        }
        TargetAngles::from_degrees(self.target_theta_deg, self.target_phi_deg)
            .map_err(|e| Error::Config(format!("target angles: {e}")))?;
        Ok(())
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_freq_hz
    }

    pub fn angle_3db(&self) -> f64 {
        self.angle_3db_deg.to_radians()
    }

    /// Total transmit power in mW.
    pub fn total_power(&self) -> f64 {
        db_to_lin(self.total_power_dbm)
    }

    /// Communication noise power in mW.
    pub fn noise_power(&self) -> f64 {
        db_to_lin(self.noise_power_dbm)
    }

    pub fn per_feed_power(&self) -> f64 {
        self.total_power() / self.n_feeds as f64
    }

    /// |α|² from SNR_radar = |α|² P_t / σ_m².
    pub fn alpha_mag2(&self) -> f64 {
        db_to_lin(self.snr_radar_db) * self.radar_noise_var / self.total_power()
    }

    pub fn target(&self) -> TargetAngles {
        TargetAngles::from_degrees(self.target_theta_deg, self.target_phi_deg)
            .expect("validated target angles")
    }

    pub fn sample_period(&self) -> f64 {
        self.symbol_period_s / self.samples_per_symbol as f64
    }

    pub fn tx_geometry(&self) -> Result<ArrayGeometry> {
        let lambda = self.wavelength();
        let radius = self
            .uca_radius_m
            .unwrap_or_else(|| half_wavelength_uca_radius(self.n_feeds, lambda));
        make_uca(self.n_feeds, radius, lambda)
    }

    pub fn rx_geometry(&self) -> Result<ArrayGeometry> {
        let lambda = self.wavelength();
        make_ula(self.n_rx, self.ula_spacing_m.unwrap_or(lambda / 2.0), lambda)
    }

    /// SHA-256 of the canonical serialized config, hex encoded.
    pub fn scenario_hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_scenario() {
        let c = ScenarioConfig::default();
        c.validate().unwrap();
        assert_eq!((c.n_feeds, c.n_users, c.n_rx), (9, 9, 10));
        assert!((c.total_power() - 1000.0).abs() < 1e-9);
        assert!((c.noise_power() - 1.0).abs() < 1e-12);
        assert!((c.wavelength() - 0.014_989_622_9).abs() < 1e-9);
        // SNR_radar = |α|² P_t / σ_m²
        let snr = c.alpha_mag2() * c.total_power() / c.radar_noise_var;
        assert!((10.0 * snr.log10() - 28.0).abs() < 1e-12);
    }

    #[test]
    fn parses_flat_key_values() {
        let c = ScenarioConfig::parse("snr_radar_db = 20.0\nrate_threshold_bps_hz = 2\nrng_seed = 7\n").unwrap();
        assert_eq!(c.snr_radar_db, 20.0);
        assert_eq!(c.rate_threshold_bps_hz, 2.0);
        assert_eq!(c.rng_seed, 7);
        assert_eq!(c.n_feeds, 9);
    }

    #[test]
    fn parse_errors_name_the_key() {
        let err = ScenarioConfig::parse("snr_radar_db = \"loud\"\n").unwrap_err();
        assert!(err.to_string().contains("snr_radar_db"), "{err}");
        let err = ScenarioConfig::parse("bogus_key = 1\n").unwrap_err();
        assert!(err.to_string().contains("bogus_key"), "{err}");
        let err = ScenarioConfig::parse("sat_height_m = -5.0\n").unwrap_err();
        assert!(err.to_string().contains("sat_height_m"), "{err}");
    }

    #[test]
    fn roundtrip_and_hash_stable() {
        let c = ScenarioConfig::default();
        let back = ScenarioConfig::parse(&c.to_config_string()).unwrap();
        assert_eq!(c, back);
        assert_eq!(c.scenario_hash(), back.scenario_hash());
        let mut d = c.clone();
        d.rng_seed = 1;
        assert_ne!(c.scenario_hash(), d.scenario_hash());
    }
}
