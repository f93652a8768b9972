//! POD compression: a truncated left singular basis of the snapshot matrix,
//! projection onto it and lifting back.

use crate::linalg::{self, LinalgError, Matrix};
use crate::snapshots::SnapshotSet;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CompressionError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("energy threshold must lie in (0, 1], got {0}")]
    BadEnergy(f64),
    #[error("rank {requested} is outside 1..={max}")]
    BadRank { requested: usize, max: usize },
    #[error("basis has {basis} rows, data has {data}")]
    DimensionMismatch { basis: usize, data: usize },
}

/// How many modes to keep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RankCriterion {
    Fixed(usize),
    /// Smallest `r` whose squared-singular-value energy reaches the threshold.
    Energy(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PodBasis {
    /// `n x r`, orthonormal columns.
    pub ur: Matrix,
    pub sigma_all: Vec<f64>,
    pub r: usize,
    /// `Σ_{i<=r} σ_i² / Σ_i σ_i²`.
    pub energy_captured: f64,
    /// `Σ_{i>r} σ_i`, the a-priori bound on `‖X - Ur Urᵀ X‖₂`.
    pub tail_bound: f64,
    /// Column mean removed before the SVD, when centering was requested.
    pub center: Option<Vec<f64>>,
}

impl PodBasis {
    pub fn full_dim(&self) -> usize {
        self.ur.rows()
    }

    /// `σ_{r+1}`, the sharp spectral-norm truncation error (0 if `r` is full).
    pub fn next_sigma(&self) -> f64 {
        self.sigma_all.get(self.r).copied().unwrap_or(0.0)
    }

    /// `Ur^T (x - c)`, where `c` is the optional center.
    pub fn project(&self, x: &Matrix) -> Result<Matrix, CompressionError> {
        if x.rows() != self.ur.rows() {
            return Err(CompressionError::DimensionMismatch {
                basis: self.ur.rows(),
                data: x.rows(),
            });
        }
        match &self.center {
            None => Ok(self.ur.t_matmul(x)),
            Some(c) => {
                let mut shifted = x.clone();
                for (i, ci) in c.iter().enumerate() {
                    shifted.row_mut(i).iter_mut().for_each(|v| *v -= ci);
                }
                Ok(self.ur.t_matmul(&shifted))
            }
        }
    }

    /// `Ur xr (+ c)`.
    pub fn lift(&self, xr: &Matrix) -> Result<Matrix, CompressionError> {
        if xr.rows() != self.r {
            return Err(CompressionError::DimensionMismatch {
                basis: self.r,
                data: xr.rows(),
            });
        }
        let mut out = self.ur.matmul(xr);
        if let Some(c) = &self.center {
            for (i, ci) in c.iter().enumerate() {
                out.row_mut(i).iter_mut().for_each(|v| *v += ci);
            }
        }
        Ok(out)
    }

    pub fn project_vec(&self, x: &[f64]) -> Result<Vec<f64>, CompressionError> {
        Ok(self.project(&Matrix::column_vector(x))?.column(0))
    }

    /// Projects every trajectory of a snapshot set. Derivatives are mapped
    /// with `Urᵀ` only, since the center is constant in time.
    pub fn project_set(&self, data: &SnapshotSet) -> Result<SnapshotSet, CompressionError> {
        if data.state_dim() != self.ur.rows() {
            return Err(CompressionError::DimensionMismatch {
                basis: self.ur.rows(),
                data: data.state_dim(),
            });
        }
        let mut out = data.map_states(|m| self.ur.t_matmul(m));
        if self.center.is_some() {
            for (t, src) in out.trajectories.iter_mut().zip(&data.trajectories) {
                t.states = self.project(&src.states)?;
            }
        }
        Ok(out)
    }

    pub fn lift_set(&self, data: &SnapshotSet) -> Result<SnapshotSet, CompressionError> {
        if data.state_dim() != self.r {
            return Err(CompressionError::DimensionMismatch {
                basis: self.r,
                data: data.state_dim(),
            });
        }
        let mut out = data.map_states(|m| self.ur.matmul(m));
        if self.center.is_some() {
            for (t, src) in out.trajectories.iter_mut().zip(&data.trajectories) {
                t.states = self.lift(&src.states)?;
            }
        }
        Ok(out)
    }
}

/// Cumulative energy fractions `Σ_{i<=k} σ_i² / Σ σ_i²` for `k = 1..len`.
pub fn cumulative_energy(sigma: &[f64]) -> Vec<f64> {
    let total: f64 = sigma.iter().map(|s| s * s).sum();
    let mut acc = 0.0;
    sigma
        .iter()
        .map(|s| {
            acc += s * s;
            if total > 0.0 {
                acc / total
            } else {
                1.0
            }
        })
        .collect()
}

/// Fits a POD basis to the stacked snapshots of `data`.
pub fn fit_pod(data: &SnapshotSet, criterion: RankCriterion) -> Result<PodBasis, CompressionError> {
    fit_pod_matrix(&data.stacked_states(), criterion, false)
}

/// Fits a POD basis to an `n x N` snapshot matrix. With `center` the
/// column mean is removed before the SVD and added back on lifting.
pub fn fit_pod_matrix(x: &Matrix, criterion: RankCriterion, center: bool) -> Result<PodBasis, CompressionError> {
    if let RankCriterion::Energy(eta) = criterion {
        if !(eta > 0.0 && eta <= 1.0) {
            return Err(CompressionError::BadEnergy(eta));
        }
    }
    let (centered, mean) = if center {
        let mean: Vec<f64> = (0..x.rows())
            .map(|i| x.row(i).iter().sum::<f64>() / x.cols() as f64)
            .collect();
        let mut c = x.clone();
        for (i, mi) in mean.iter().enumerate() {
            c.row_mut(i).iter_mut().for_each(|v| *v -= mi);
        }
        (c, Some(mean))
    } else {
        (x.clone(), None)
    };
    let f = linalg::svd(&centered)?;
    let k = f.sigma.len();
    let energy = cumulative_energy(&f.sigma);
    let r = match criterion {
        RankCriterion::Fixed(r) => {
            if r == 0 || r > k {
                return Err(CompressionError::BadRank { requested: r, max: k });
            }
            r
        }
        RankCriterion::Energy(eta) => {
            // guard against round-off in the cumulative sum at eta = 1
            let target = eta.min(1.0) - 1e-15;
            energy.iter().position(|&e| e >= target).map_or(k, |i| i + 1)
        }
    };
    let ur = f.u.columns(0, r);
    Ok(PodBasis {
        ur,
        energy_captured: energy[r - 1],
        tail_bound: f.sigma[r..].iter().sum(),
        sigma_all: f.sigma,
        r,
        center: mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::TimeGrid;
    use crate::random::{normal_matrix, seeded_rng};
    use crate::snapshots::Trajectory;

    fn set_of(x: Matrix) -> SnapshotSet {
        let steps = x.cols() - 1;
        SnapshotSet::single(Trajectory::new(TimeGrid::new(0.0, 0.1, steps).unwrap(), x)).unwrap()
    }

    fn low_rank(n: usize, n_cols: usize, rank: usize, seed: u64) -> Matrix {
        let mut rng = seeded_rng(seed);
        let a = normal_matrix(&mut rng, n, rank, 1.0);
        let b = normal_matrix(&mut rng, rank, n_cols, 1.0);
        a.matmul(&b)
    }

    #[test]
    fn rank_one_data_keeps_one_mode() {
        let x = low_rank(10, 6, 1, 1);
        for eta in [0.5, 0.9, 0.999, 1.0] {
            let b = fit_pod(&set_of(x.clone()), RankCriterion::Energy(eta)).unwrap();
            assert_eq!(b.r, 1, "eta {eta}");
        }
    }

    #[test]
    fn energy_threshold_is_validated() {
        let s = set_of(low_rank(4, 4, 2, 2));
        assert_eq!(fit_pod(&s, RankCriterion::Energy(0.0)), Err(CompressionError::BadEnergy(0.0)));
        assert!(fit_pod(&s, RankCriterion::Energy(1.5)).is_err());
        assert!(matches!(
            fit_pod(&s, RankCriterion::Fixed(5)),
            Err(CompressionError::BadRank { requested: 5, max: 4 })
        ));
    }

    #[test]
    fn energy_criterion_picks_smallest_rank() {
        let mut rng = seeded_rng(3);
        let x = normal_matrix(&mut rng, 12, 9, 1.0);
        let b = fit_pod(&set_of(x), RankCriterion::Energy(0.8)).unwrap();
        let e = cumulative_energy(&b.sigma_all);
        assert!(b.energy_captured >= 0.8);
        assert!(b.r == 1 || e[b.r - 2] < 0.8);
        assert!((b.energy_captured - e[b.r - 1]).abs() < 1e-15);
    }

    #[test]
    fn project_and_lift() {
        let x = low_rank(15, 10, 6, 4);
        let b = fit_pod(&set_of(x.clone()), RankCriterion::Fixed(4)).unwrap();
        assert!((&b.ur.t_matmul(&b.ur) - &Matrix::identity(4)).frobenius_norm() <= 1e-10 * 4.0);

        let mut rng = seeded_rng(5);
        let c = normal_matrix(&mut rng, 4, 3, 1.0);
        let uc = b.ur.matmul(&c);
        assert!((&b.project(&uc).unwrap() - &c).max_abs() < 1e-12);
        assert!((&b.lift(&b.project(&uc).unwrap()).unwrap() - &uc).max_abs() < 1e-12);
        assert_eq!(b.project(&Matrix::zeros(15, 2)).unwrap(), Matrix::zeros(4, 2));
        assert_eq!(b.lift(&Matrix::zeros(4, 2)).unwrap(), Matrix::zeros(15, 2));

        let rec = b.lift(&b.project(&x).unwrap()).unwrap();
        let err = linalg::spectral_norm(&(&x - &rec)).unwrap();
        assert!(err <= b.tail_bound + 1e-8);
        assert!((err - b.next_sigma()).abs() < 1e-8 * (1.0 + err));

        assert!(b.project(&Matrix::zeros(3, 1)).is_err());
        assert!(b.lift(&Matrix::zeros(3, 1)).is_err());
    }

    #[test]
    fn full_rank_reconstruction_is_exact() {
        let mut rng = seeded_rng(6);
        let x = normal_matrix(&mut rng, 5, 8, 1.0);
        let b = fit_pod(&set_of(x.clone()), RankCriterion::Fixed(5)).unwrap();
        assert_eq!(b.tail_bound, 0.0);
        let rec = b.lift(&b.project(&x).unwrap()).unwrap();
        assert!((&rec - &x).max_abs() < 1e-12);
    }

    #[test]
    fn centered_basis_round_trip() {
        let x = low_rank(6, 7, 2, 8);
        let shifted = Matrix::from_fn(6, 7, |i, j| x[(i, j)] + 3.0 + i as f64);
        let b = fit_pod_matrix(&shifted, RankCriterion::Fixed(2), true).unwrap();
        let rec = b.lift(&b.project(&shifted).unwrap()).unwrap();
        assert!((&rec - &shifted).max_abs() < 1e-10);
    }
}
