//! Fisher information and Cramér-Rao bound of the target angles (θ, φ) as a
//! function of the transmit covariance R_X.
//!
//! With A = b(θ) aᴴ(θ, φ) the entries are
//! F_ij = (2|α|²L/σ²) · Re tr(∂_i A · R_X · ∂_j Aᴴ),
//! which is linear in R_X. The receiver shares the target azimuth, so only θ
//! enters b.

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::array::{rx_steering, rx_steering_deriv, tx_steering, tx_steering_derivs, ArrayGeometry, TargetAngles};
use crate::config::ScenarioConfig;
use crate::error::{invalid, Error, Result};
use crate::linalg::{check_psd, hermitian_part, outer, re_trace_product, ComplexMatrix};

/// Largest FIM condition number accepted before the target is declared
/// unidentifiable.
pub const MAX_CONDITION: f64 = 1e12;

/// Tolerance on Hermitian symmetry and negative eigenvalues of R_X.
pub const PSD_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct FimContext {
    pub tx_geom: ArrayGeometry,
    pub rx_geom: ArrayGeometry,
    pub angles: TargetAngles,
    pub alpha_mag2: f64,
    pub symbols: usize,
    pub noise_var: f64,
    a: ComplexMatrix,
    da_theta: ComplexMatrix,
    da_phi: ComplexMatrix,
}

impl FimContext {
    pub fn new(
        tx_geom: ArrayGeometry,
        rx_geom: ArrayGeometry,
        angles: TargetAngles,
        alpha_mag2: f64,
        symbols: usize,
        noise_var: f64,
    ) -> Result<Self> {
        if !(alpha_mag2.is_finite() && alpha_mag2 > 0.0) {
            return invalid(format!("|alpha|^2 must be positive, got {alpha_mag2}"));
        }
        if symbols == 0 {
            return invalid("need at least one symbol");
        }
        if !(noise_var.is_finite() && noise_var > 0.0) {
            return invalid(format!("noise variance must be positive, got {noise_var}"));
        }
        let at = tx_steering(&tx_geom, angles);
        let (dat_theta, dat_phi) = tx_steering_derivs(&tx_geom, angles);
        let b = rx_steering(&rx_geom, angles.theta);
        let db = rx_steering_deriv(&rx_geom, angles.theta);
        let a = outer(&b, &at);
        let da_theta = outer(&db, &at) + outer(&b, &dat_theta);
        let da_phi = outer(&b, &dat_phi);
        Ok(Self {
            tx_geom,
            rx_geom,
            angles,
            alpha_mag2,
            symbols,
            noise_var,
            a,
            da_theta,
            da_phi,
        })
    }

    /// Context for the configured scenario with `symbols` observations.
    pub fn from_config(cfg: &ScenarioConfig, symbols: usize) -> Result<Self> {
        Self::new(
            cfg.tx_geometry()?,
            cfg.rx_geometry()?,
            cfg.target(),
            cfg.alpha_mag2(),
            symbols,
            cfg.radar_noise_var,
        )
    }

    pub fn n_tx(&self) -> usize {
        self.tx_geom.len()
    }

    /// A(θ, φ) = b(θ) aᴴ(θ, φ).
    pub fn response(&self) -> &ComplexMatrix {
        &self.a
    }

    pub fn d_theta(&self) -> &ComplexMatrix {
        &self.da_theta
    }

    pub fn d_phi(&self) -> &ComplexMatrix {
        &self.da_phi
    }

    fn gain(&self) -> f64 {
        2.0 * self.alpha_mag2 * self.symbols as f64 / self.noise_var
    }

    /// Hermitian G_θθ, G_θφ, G_φφ with F_ij = Re tr(R_X G_ij).
    pub fn coefficients(&self) -> [ComplexMatrix; 3] {
        let c = self.gain();
        let g = |di: &ComplexMatrix, dj: &ComplexMatrix| hermitian_part(&(dj.adjoint() * di)).scale(c);
        [
            g(&self.da_theta, &self.da_theta),
            g(&self.da_theta, &self.da_phi),
            g(&self.da_phi, &self.da_phi),
        ]
    }
}

/// Symmetric 2×2 Fisher information of (θ, φ).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FimMatrix {
    pub theta_theta: f64,
    pub theta_phi: f64,
    pub phi_phi: f64,
}

impl FimMatrix {
    pub fn matrix(&self) -> Matrix2<f64> {
        Matrix2::new(self.theta_theta, self.theta_phi, self.theta_phi, self.phi_phi)
    }

    pub fn trace(&self) -> f64 {
        self.theta_theta + self.phi_phi
    }

    pub fn determinant(&self) -> f64 {
        self.theta_theta * self.phi_phi - self.theta_phi * self.theta_phi
    }

    /// Eigenvalues, ascending.
    pub fn eigenvalues(&self) -> [f64; 2] {
        let m = 0.5 * self.trace();
        let d = (0.25 * (self.theta_theta - self.phi_phi).powi(2) + self.theta_phi.powi(2)).sqrt();
        [m - d, m + d]
    }

    pub fn condition_number(&self) -> f64 {
        let [lo, hi] = self.eigenvalues();
        if lo <= 0.0 {
            f64::INFINITY
        } else {
            hi / lo
        }
    }

    /// F⁻¹, or an unidentifiable error when F is (numerically) singular.
    pub fn inverse(&self) -> Result<Matrix2<f64>> {
        let cond = self.condition_number();
        if !(cond < MAX_CONDITION) {
            return Err(Error::Unidentifiable(format!(
                "Fisher information condition number {cond:e} exceeds {MAX_CONDITION:e}"
            )));
        }
        let det = self.determinant();
        Ok(Matrix2::new(self.phi_phi, -self.theta_phi, -self.theta_phi, self.theta_theta) / det)
    }
}

/// F(R_X). Linear in R_X; rejects non-Hermitian or indefinite input.
pub fn fim(ctx: &FimContext, rx: &ComplexMatrix) -> Result<FimMatrix> {
    let n = ctx.n_tx();
    if rx.shape() != (n, n) {
        return invalid(format!("R_X must be {n}x{n}, got {}x{}", rx.nrows(), rx.ncols()));
    }
    check_psd(rx, PSD_TOLERANCE, "R_X")?;
    Ok(fim_unchecked(ctx, rx))
}

/// F(R_X) for any Hermitian R_X, without the PSD check.
pub fn fim_unchecked(ctx: &FimContext, rx: &ComplexMatrix) -> FimMatrix {
    let c = ctx.gain();
    let entry = |di: &ComplexMatrix, dj: &ComplexMatrix| {
        let lhs = di * rx;
        c * re_trace_product(&lhs, &dj.adjoint())
    };
    FimMatrix {
        theta_theta: entry(&ctx.da_theta, &ctx.da_theta),
        theta_phi: entry(&ctx.da_theta, &ctx.da_phi),
        phi_phi: entry(&ctx.da_phi, &ctx.da_phi),
    }
}

/// tr(F⁻¹) with the per-angle bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrbReport {
    /// tr(F⁻¹) in rad².
    pub trace: f64,
    /// [F⁻¹]_θθ and [F⁻¹]_φφ in rad².
    pub variances: [f64; 2],
    /// Square roots of `variances`, radians.
    pub rcrb_rad: [f64; 2],
    pub rcrb_deg: [f64; 2],
    pub fim: FimMatrix,
}

impl CrbReport {
    pub fn from_fim(f: FimMatrix) -> Result<Self> {
        let inv = f.inverse()?;
        let variances = [inv[(0, 0)], inv[(1, 1)]];
        let rcrb_rad = variances.map(f64::sqrt);
        Ok(Self {
            trace: variances[0] + variances[1],
            variances,
            rcrb_rad,
            rcrb_deg: rcrb_rad.map(f64::to_degrees),
            fim: f,
        })
    }
}

pub fn crb_trace(ctx: &FimContext, rx: &ComplexMatrix) -> Result<CrbReport> {
    CrbReport::from_fim(fim(ctx, rx)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use proptest::prelude::*;
    use rand::Rng;

    fn ctx() -> FimContext {
        FimContext::from_config(&ScenarioConfig::default(), 256).unwrap()
    }

    fn random_psd(seed: u64, n: usize, rank: usize) -> ComplexMatrix {
        let mut rng = crate::seeded_rng(seed);
        let g = ComplexMatrix::from_fn(n, rank, |_, _| {
            Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        });
        &g * g.adjoint()
    }

    #[test]
    fn zero_covariance_gives_zero_fim() {
        let f = fim(&ctx(), &ComplexMatrix::zeros(9, 9)).unwrap();
        assert_eq!(f.trace(), 0.0);
        assert_eq!(f.theta_phi, 0.0);
    }

    #[test]
    fn doubling_covariance_doubles_fim() {
        let c = ctx();
        let i = ComplexMatrix::identity(9, 9);
        let f1 = fim(&c, &i).unwrap();
        let f2 = fim(&c, &i.scale(2.0)).unwrap();
        assert!((f2.theta_theta - 2.0 * f1.theta_theta).abs() < 1e-9 * f1.theta_theta);
        assert!((f2.phi_phi - 2.0 * f1.phi_phi).abs() < 1e-9 * f1.phi_phi);
        assert!((f2.theta_phi - 2.0 * f1.theta_phi).abs() < 1e-9 * f1.trace());
    }

    #[test]
    fn coefficient_form_agrees() {
        let c = ctx();
        let r = random_psd(4, 9, 3);
        let f = fim(&c, &r).unwrap();
        let [gtt, gtp, gpp] = c.coefficients();
        let tr = |g: &ComplexMatrix| re_trace_product(&r, g);
        assert!((tr(&gtt) - f.theta_theta).abs() < 1e-9 * f.trace());
        assert!((tr(&gtp) - f.theta_phi).abs() < 1e-9 * f.trace());
        assert!((tr(&gpp) - f.phi_phi).abs() < 1e-9 * f.trace());
    }

    #[test]
    fn rejects_bad_covariance() {
        let c = ctx();
        let mut r = ComplexMatrix::identity(9, 9);
        r[(0, 0)] = Complex64::new(-1.0, 0.0);
        assert!(matches!(fim(&c, &r), Err(Error::InvalidArgument(_))));
        let mut r = ComplexMatrix::identity(9, 9);
        r[(0, 1)] = Complex64::new(0.0, 0.5);
        assert!(matches!(fim(&c, &r), Err(Error::InvalidArgument(_))));
        assert!(fim(&c, &ComplexMatrix::identity(3, 3)).is_err());
    }

    #[test]
    fn diagonal_fim_trace() {
        let f = FimMatrix {
            theta_theta: 4.0,
            theta_phi: 0.0,
            phi_phi: 0.5,
        };
        let rep = CrbReport::from_fim(f).unwrap();
        assert!((rep.trace - (0.25 + 2.0)).abs() < 1e-15);
        assert!((rep.rcrb_rad[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn beam_along_target_is_unidentifiable() {
        // rank-one R_X in the orthogonal complement of ∂a/∂φ carries no
        // elevation information
        let c = ctx();
        let (_, dphi) = tx_steering_derivs(&c.tx_geom, c.angles);
        let a = tx_steering(&c.tx_geom, c.angles);
        // project a onto the orthogonal complement of ∂a/∂φ
        let coef = dphi.dotc(&a) / dphi.norm_squared();
        let u = &a - &dphi * coef;
        let r = outer(&u, &u);
        let f = fim(&c, &r).unwrap();
        assert!(f.phi_phi.abs() < 1e-9 * f.theta_theta);
        assert!(matches!(crb_trace(&c, &r), Err(Error::Unidentifiable(_))));
    }

    #[test]
    fn uniform_covariance_is_identifiable() {
        let cfg = ScenarioConfig::default();
        let c = ctx();
        let r = ComplexMatrix::identity(9, 9).scale(cfg.per_feed_power());
        let rep = crb_trace(&c, &r).unwrap();
        assert!(rep.trace > 0.0 && rep.trace.is_finite());
        assert!(rep.fim.condition_number() < 1e6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn fim_is_linear(s1 in 0u64..500, s2 in 500u64..1000, a in 0.0f64..3.0, b in 0.0f64..3.0) {
            let c = ctx();
            let r1 = random_psd(s1, 9, 2);
            let r2 = random_psd(s2, 9, 4);
            let mix = r1.scale(a) + r2.scale(b);
            let f = fim(&c, &mix).unwrap();
            let f1 = fim(&c, &r1).unwrap();
            let f2 = fim(&c, &r2).unwrap();
            let scale = f.trace().max(1.0);
            prop_assert!((f.theta_theta - a * f1.theta_theta - b * f2.theta_theta).abs() < 1e-10 * scale);
            prop_assert!((f.theta_phi - a * f1.theta_phi - b * f2.theta_phi).abs() < 1e-10 * scale);
            prop_assert!((f.phi_phi - a * f1.phi_phi - b * f2.phi_phi).abs() < 1e-10 * scale);
        }

        #[test]
        fn fim_is_psd(seed in 0u64..1000, rank in 1usize..9) {
            let f = fim(&ctx(), &random_psd(seed, 9, rank)).unwrap();
            prop_assert!(f.eigenvalues()[0] >= -1e-10 * f.trace());
        }

        #[test]
        fn more_power_lowers_bound(seed in 0u64..1000, extra in 1u64..1000) {
            let c = ctx();
            let r2 = random_psd(seed, 9, 9);
            let r1 = &r2 + random_psd(extra + 5000, 9, 2);
            let t1 = crb_trace(&c, &r1).unwrap().trace;
            let t2 = crb_trace(&c, &r2).unwrap().trace;
            prop_assert!(t1 <= t2 * (1.0 + 1e-10));
        }

        #[test]
        fn scaling_inverts_trace(seed in 0u64..1000, k in 0.1f64..10.0) {
            let c = ctx();
            let r = random_psd(seed, 9, 9);
            let t1 = crb_trace(&c, &r).unwrap().trace;
            let t2 = crb_trace(&c, &r.scale(k)).unwrap().trace;
            prop_assert!((t2 * k - t1).abs() < 1e-9 * t1);
        }
    }
}
