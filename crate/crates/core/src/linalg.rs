//! Dense complex linear-algebra carriers and the few Hermitian helpers the
//! rest of the crate needs on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type ComplexMatrix = DMatrix<Complex64>;
pub type ComplexVector = DVector<Complex64>;

pub const J: Complex64 = Complex64 { re: 0.0, im: 1.0 };

#[inline]
pub fn cis(phase: f64) -> Complex64 {
    Complex64::from_polar(1.0, phase)
}

/// Largest |A - A^H| entry, relative to the largest |A| entry.
pub fn hermitian_defect(a: &ComplexMatrix) -> f64 {
    let scale = a.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1.0);
    let mut worst: f64 = 0.0;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            worst = worst.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    worst / scale
}

/// Average `A` with its conjugate transpose.
pub fn hermitian_part(a: &ComplexMatrix) -> ComplexMatrix {
    (a + a.adjoint()).scale(0.5)
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues ascending.
pub struct HermitianEigen {
    pub values: Vec<f64>,
    /// Columns are unit-norm eigenvectors matching `values`.
    pub vectors: ComplexMatrix,
}

pub fn hermitian_eigen(a: &ComplexMatrix) -> HermitianEigen {
    let eig = SymmetricEigen::new(hermitian_part(a));
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let n = a.nrows();
    let mut vectors = ComplexMatrix::zeros(n, n);
    let mut values = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        values.push(eig.eigenvalues[src]);
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    HermitianEigen { values, vectors }
}

/// Largest eigenvalue and its unit eigenvector, with a deterministic phase
/// (first entry of largest modulus made real positive).
pub fn principal_eigenpair(a: &ComplexMatrix) -> (f64, ComplexVector) {
    let eig = hermitian_eigen(a);
    let n = a.nrows();
    let mut v: ComplexVector = eig.vectors.column(n - 1).into_owned();
    normalize_phase(&mut v);
    (eig.values[n - 1], v)
}

pub(crate) fn normalize_phase(v: &mut ComplexVector) {
    let pivot = v
        .iter()
        .copied()
        .max_by(|a, b| a.norm().total_cmp(&b.norm()))
        .unwrap_or(Complex64::new(1.0, 0.0));
    if pivot.norm() > 0.0 {
        let rot = pivot.conj() / pivot.norm();
        v.iter_mut().for_each(|z| *z *= rot);
    }
}

/// λ_max / tr for a PSD matrix; 1 for the zero matrix.
pub fn rank_one_ratio(a: &ComplexMatrix) -> f64 {
    let tr = a.trace().re;
    if tr <= 1e-15 {
        return 1.0;
    }
    principal_eigenpair(a).0 / tr
}

/// Checks Hermitian symmetry and λ_min ≥ -tol (absolute, relative to scale).
pub fn check_psd(a: &ComplexMatrix, tol: f64, what: &str) -> Result<()> {
    if !a.is_square() {
        return Err(Error::InvalidArgument(format!("{what} is not square")));
    }
    if a.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::InvalidArgument(format!("{what} has non-finite entries")));
    }
    let defect = hermitian_defect(a);
    if defect > tol {
        return Err(Error::InvalidArgument(format!(
            "{what} is not Hermitian (defect {defect:e})"
        )));
    }
    let scale = a.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1.0);
    let min_eig = hermitian_eigen(a).values[0];
    if min_eig < -tol * scale {
        return Err(Error::InvalidArgument(format!(
            "{what} is indefinite (min eigenvalue {min_eig:e})"
        )));
    }
    Ok(())
}

/// Re{tr(A B)} for A (m×n) and B (n×m) without forming the product.
pub fn re_trace_product(a: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
    debug_assert_eq!((a.nrows(), a.ncols()), (b.ncols(), b.nrows()));
    let mut acc = 0.0;
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            acc += (a[(i, k)] * b[(k, i)]).re;
        }
    }
    acc
}

pub fn outer(u: &ComplexVector, v: &ComplexVector) -> ComplexMatrix {
    u * v.adjoint()
}

/// Serde adapter writing a complex vector as `{"re": [..], "im": [..]}`.
pub mod serde_vector {
    use super::*;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Parts {
        re: Vec<f64>,
        im: Vec<f64>,
    }

    pub fn serialize<S: Serializer>(v: &ComplexVector, s: S) -> std::result::Result<S::Ok, S::Error> {
        Parts {
            re: v.iter().map(|z| z.re).collect(),
            im: v.iter().map(|z| z.im).collect(),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<ComplexVector, D::Error> {
        let p = Parts::deserialize(d)?;
        if p.re.len() != p.im.len() {
            return Err(serde::de::Error::custom("re and im lengths differ"));
        }
        Ok(ComplexVector::from_iterator(
            p.re.len(),
            p.re.iter().zip(&p.im).map(|(&a, &b)| Complex64::new(a, b)),
        ))
    }
}

/// Serde adapter for `Vec<ComplexVector>` using [`serde_vector`] per entry.
pub mod serde_vectors {
    use super::*;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Wrap(#[serde(with = "super::serde_vector")] ComplexVector);

    pub fn serialize<S: Serializer>(v: &[ComplexVector], s: S) -> std::result::Result<S::Ok, S::Error> {
        let wrapped: Vec<Wrap> = v.iter().cloned().map(Wrap).collect();
        wrapped.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<ComplexVector>, D::Error> {
        Ok(Vec::<Wrap>::deserialize(d)?.into_iter().map(|w| w.0).collect())
    }
}

/// Serde adapter writing a complex matrix as row-major `re` / `im` arrays.
pub mod serde_matrix {
    use super::*;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Parts {
        re: Vec<Vec<f64>>,
        im: Vec<Vec<f64>>,
    }

    pub fn serialize<S: Serializer>(m: &ComplexMatrix, s: S) -> std::result::Result<S::Ok, S::Error> {
        let rows = |f: fn(&Complex64) -> f64| -> Vec<Vec<f64>> {
            (0..m.nrows())
                .map(|i| (0..m.ncols()).map(|j| f(&m[(i, j)])).collect())
                .collect()
        };
        Parts {
            re: rows(|z| z.re),
            im: rows(|z| z.im),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<ComplexMatrix, D::Error> {
        let p = Parts::deserialize(d)?;
        let r = p.re.len();
        let c = p.re.first().map_or(0, Vec::len);
        let ragged = p.im.len() != r
            || p.re.iter().chain(&p.im).any(|row| row.len() != c);
        if ragged {
            return Err(serde::de::Error::custom("ragged complex matrix"));
        }
        Ok(ComplexMatrix::from_fn(r, c, |i, j| Complex64::new(p.re[i][j], p.im[i][j])))
    }
}
