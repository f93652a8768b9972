//! The `(J - R) Q` parameterization of stable matrices.
//!
//! Trainable factors `(J̄, R̄, Q̄)` are unconstrained square matrices. The
//! structured parts are
//!
//! ```text
//! J = J̄ - J̄ᵀ      (skew-symmetric)
//! R = R̄ R̄ᵀ        (symmetric positive semidefinite)
//! Q = Q̄ Q̄ᵀ        (symmetric positive semidefinite)
//! A = (J - R) Q
//! ```
//!
//! and `V(x) = ½ xᵀ Q x` is non-increasing along every trajectory of
//! `ẋ = A x`, so every assembled `A` has its spectrum in the closed left
//! half-plane regardless of the factor values.

use rand_distr::{Distribution, Normal};

use crate::linalg::{self, dot, LinalgError, Matrix, Spectrum};
use crate::random::seeded_rng;

/// Numerical tolerance used for "closed left half-plane" checks.
pub const STABILITY_TOL: f64 = 1e-8;

/// Standard deviation of the Gaussian used to initialize factors.
pub const DEFAULT_INIT_STD: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct StableParams {
    pub jbar: Matrix,
    pub rbar: Matrix,
    pub qbar: Matrix,
    /// Input matrix `n x m`, present for controlled systems.
    pub bbar: Option<Matrix>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    StableParameterized,
    Unconstrained,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::StableParameterized => "stable-parameterized",
            Provenance::Unconstrained => "unconstrained",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "stable-parameterized" => Some(Provenance::StableParameterized),
            "unconstrained" => Some(Provenance::Unconstrained),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub a: Matrix,
    pub b: Option<Matrix>,
    pub provenance: Provenance,
}

impl LinearModel {
    pub fn unconstrained(a: Matrix, b: Option<Matrix>) -> Result<Self, LinalgError> {
        check_model_shapes(&a, b.as_ref())?;
        Ok(Self {
            a,
            b,
            provenance: Provenance::Unconstrained,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.a.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.as_ref().map_or(0, |b| b.cols())
    }

    pub fn spectrum(&self) -> Result<Spectrum, LinalgError> {
        linalg::eigenvalues(&self.a)
    }

    /// `max Re(λ) <= STABILITY_TOL`.
    pub fn is_numerically_stable(&self) -> Result<bool, LinalgError> {
        Ok(self.spectrum()?.max_real() <= STABILITY_TOL)
    }
}

fn check_model_shapes(a: &Matrix, b: Option<&Matrix>) -> Result<(), LinalgError> {
    if !a.is_square() {
        return Err(LinalgError::NotSquare {
            rows: a.rows(),
            cols: a.cols(),
        });
    }
    if let Some(b) = b {
        if b.rows() != a.rows() {
            return Err(LinalgError::DimensionMismatch {
                op: "model input matrix",
                left: a.shape(),
                right: b.shape(),
            });
        }
    }
    Ok(())
}

impl StableParams {
    pub fn new(jbar: Matrix, rbar: Matrix, qbar: Matrix, bbar: Option<Matrix>) -> Result<Self, LinalgError> {
        let p = Self { jbar, rbar, qbar, bbar };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), LinalgError> {
        if !self.jbar.is_square() {
            return Err(LinalgError::NotSquare {
                rows: self.jbar.rows(),
                cols: self.jbar.cols(),
            });
        }
        self.jbar.check_same_shape(&self.rbar, "stable params R̄")?;
        self.jbar.check_same_shape(&self.qbar, "stable params Q̄")?;
        if let Some(b) = &self.bbar {
            if b.rows() != self.jbar.rows() {
                return Err(LinalgError::DimensionMismatch {
                    op: "stable params B̄",
                    left: self.jbar.shape(),
                    right: b.shape(),
                });
            }
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        self.jbar.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.bbar.as_ref().map_or(0, |b| b.cols())
    }

    /// `(J, R, Q)`.
    pub fn decompose_parts(&self) -> (Matrix, Matrix, Matrix) {
        let j = &self.jbar - &self.jbar.transpose();
        let r = self.rbar.matmul_t(&self.rbar);
        let q = self.qbar.matmul_t(&self.qbar);
        (j, r, q)
    }

    /// The drift matrix `A = (J̄ - J̄ᵀ - R̄R̄ᵀ) Q̄Q̄ᵀ`.
    pub fn drift(&self) -> Matrix {
        let (j, r, q) = self.decompose_parts();
        (&j - &r).matmul(&q)
    }

    pub fn assemble(&self) -> Result<LinearModel, LinalgError> {
        self.validate()?;
        Ok(LinearModel {
            a: self.drift(),
            b: self.bbar.clone(),
            provenance: Provenance::StableParameterized,
        })
    }

    /// `V(x) = ½ xᵀ Q̄Q̄ᵀ x`, evaluated as `½‖Q̄ᵀx‖²`.
    pub fn lyapunov_value(&self, x: &[f64]) -> Result<f64, LinalgError> {
        let qt_x = self.qbar.transpose().try_matvec(x)?;
        Ok(0.5 * dot(&qt_x, &qt_x))
    }

    /// `d/dt V = xᵀ Q A x` along `ẋ = A x`.
    pub fn lyapunov_rate(&self, x: &[f64]) -> Result<f64, LinalgError> {
        let a = self.drift();
        let ax = a.try_matvec(x)?;
        let (_, _, q) = self.decompose_parts();
        Ok(dot(&q.matvec(x), &ax))
    }

    /// Factors with i.i.d. `N(0, std²)` entries from a seeded generator.
    /// `m = Some(k)` adds a `n x k` input matrix.
    pub fn init(n: usize, m: Option<usize>, seed: u64, std: f64) -> Self {
        assert!(n >= 1, "state dimension must be positive");
        assert!(std > 0.0 && std.is_finite(), "std must be positive");
        let mut rng = seeded_rng(seed);
        let normal = Normal::new(0.0, std).expect("valid normal");
        let mut draw = |rows: usize, cols: usize| Matrix::from_fn(rows, cols, |_, _| normal.sample(&mut rng));
        let jbar = draw(n, n);
        let rbar = draw(n, n);
        let qbar = draw(n, n);
        let bbar = m.filter(|&k| k > 0).map(|k| draw(n, k));
        Self { jbar, rbar, qbar, bbar }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::eigenvalues;

    fn scalar(v: f64) -> Matrix {
        Matrix::from_rows(&[&[v]])
    }

    #[test]
    fn zero_generator() {
        let p = StableParams::new(Matrix::zeros(2, 2), Matrix::zeros(2, 2), Matrix::identity(2), None).unwrap();
        assert_eq!(p.assemble().unwrap().a, Matrix::zeros(2, 2));
    }

    #[test]
    fn pure_skew_gives_rotation() {
        let jbar = Matrix::from_rows(&[&[0.0, 1.0], &[0.0, 0.0]]);
        let p = StableParams::new(jbar, Matrix::zeros(2, 2), Matrix::identity(2), None).unwrap();
        let m = p.assemble().unwrap();
        assert_eq!(m.a, Matrix::from_rows(&[&[0.0, 1.0], &[-1.0, 0.0]]));
        let s = m.spectrum().unwrap();
        assert!(s.max_real().abs() < 1e-15);
        assert!(s.eigenvalues.iter().all(|z| (z.im.abs() - 1.0).abs() < 1e-14));
        assert_eq!(m.provenance, Provenance::StableParameterized);
    }

    #[test]
    fn seeded_random_is_stable() {
        for seed in 0..10 {
            let p = StableParams::init(8, None, seed, 0.5);
            let m = p.assemble().unwrap();
            assert!(m.spectrum().unwrap().max_real() <= STABILITY_TOL);
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let err = StableParams::new(Matrix::zeros(2, 2), Matrix::zeros(3, 3), Matrix::identity(2), None);
        assert!(matches!(err, Err(LinalgError::DimensionMismatch { .. })));
        let err = StableParams::new(
            Matrix::zeros(2, 2),
            Matrix::zeros(2, 2),
            Matrix::identity(2),
            Some(Matrix::zeros(3, 1)),
        );
        assert!(err.is_err());
        let p = StableParams::init(2, None, 0, 0.1);
        assert!(p.lyapunov_value(&[1.0]).is_err());
        assert!(p.lyapunov_rate(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn parts_structure() {
        let p = StableParams::new(Matrix::identity(3), Matrix::zeros(3, 3), Matrix::identity(3), None).unwrap();
        assert_eq!(p.decompose_parts().0, Matrix::zeros(3, 3));

        let p = StableParams::new(scalar(0.3), scalar(2.0), scalar(1.0), None).unwrap();
        assert_eq!(p.decompose_parts().1, scalar(4.0));

        let p = StableParams::init(5, None, 17, 1.0);
        let (j, r, q) = p.decompose_parts();
        assert!((&j + &j.transpose()).frobenius_norm() <= 1e-12 * j.frobenius_norm());
        assert!(eigenvalues(&r).unwrap().min_real() >= -1e-10);
        assert!(eigenvalues(&q).unwrap().min_real() >= -1e-10);
        let a = (&j - &r).matmul(&q);
        let assembled = p.assemble().unwrap().a;
        assert!((&a - &assembled).frobenius_norm() <= 1e-12 * assembled.frobenius_norm());
    }

    #[test]
    fn lyapunov_value_examples() {
        let p = StableParams::init(2, None, 3, 0.1);
        assert_eq!(p.lyapunov_value(&[0.0, 0.0]).unwrap(), 0.0);
        let p = StableParams::new(Matrix::zeros(2, 2), Matrix::zeros(2, 2), Matrix::identity(2), None).unwrap();
        assert!((p.lyapunov_value(&[3.0, 4.0]).unwrap() - 12.5).abs() < 1e-14);

        // ½ xᵀ (Q̄Q̄ᵀ) x computed through the full Gram matrix.
        let p = StableParams::init(6, None, 9, 0.7);
        let x: Vec<f64> = (0..6).map(|i| (i as f64 * 0.7).cos()).collect();
        let (_, _, q) = p.decompose_parts();
        let direct = 0.5 * dot(&x, &q.matvec(&x));
        let v = p.lyapunov_value(&x).unwrap();
        assert!((direct - v).abs() <= 1e-12 * (1.0 + v));
    }

    #[test]
    fn lyapunov_rate_examples() {
        let p = StableParams::init(4, None, 1, 0.3);
        assert_eq!(p.lyapunov_rate(&[0.0; 4]).unwrap(), 0.0);

        let mut p = StableParams::init(4, None, 2, 0.8);
        p.rbar = Matrix::zeros(4, 4);
        let x = [0.3, -1.2, 0.5, 2.0];
        let rate = p.lyapunov_rate(&x).unwrap();
        let a = p.drift();
        let scale = 1.0 + dot(&x, &x) * a.frobenius_norm() * p.decompose_parts().2.frobenius_norm();
        assert!(rate.abs() <= 1e-12 * scale);

        // rate = -x̃ᵀ R x̃ with x̃ = Qx
        let p = StableParams::init(4, None, 3, 0.8);
        let (_, r, q) = p.decompose_parts();
        let xt = q.matvec(&x);
        let expected = -dot(&xt, &r.matvec(&xt));
        let rate = p.lyapunov_rate(&x).unwrap();
        assert!(rate <= 0.0);
        assert!((rate - expected).abs() <= 1e-12 * (1.0 + expected.abs()));
    }

    #[test]
    fn init_is_deterministic_with_expected_spread() {
        let a = StableParams::init(3, Some(2), 123, 0.1);
        let b = StableParams::init(3, Some(2), 123, 0.1);
        assert_eq!(a, b);
        assert_eq!(a.bbar.as_ref().unwrap().shape(), (3, 2));
        assert_ne!(a, StableParams::init(3, Some(2), 124, 0.1));

        let p = StableParams::init(50, None, 7, DEFAULT_INIT_STD);
        let v = p.jbar.as_slice();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt();
        assert!(sd > 0.08 && sd < 0.12, "sd = {sd}");
    }
}
