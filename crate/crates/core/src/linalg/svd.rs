//! Thin SVD via Householder QR followed by one-sided Jacobi on the
//! triangular factor.
//!
//! Tall inputs are reduced to a `k x k` triangle first, so the cost of the
//! Jacobi sweeps depends only on the short dimension. Wide inputs are handled
//! through the transpose.

use super::{dot, LinalgError, Matrix};

const MAX_SWEEPS: usize = 80;

#[derive(Debug, Clone)]
pub struct SvdResult {
    /// `n x k` with orthonormal columns.
    pub u: Matrix,
    /// Nonincreasing, nonnegative, length `k = min(n, N)`.
    pub sigma: Vec<f64>,
    /// `k x N` with orthonormal rows.
    pub vt: Matrix,
}

impl SvdResult {
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (j, s) in self.sigma.iter().enumerate() {
                us[(i, j)] *= s;
            }
        }
        us.matmul(&self.vt)
    }
}

pub fn svd(m: &Matrix) -> Result<SvdResult, LinalgError> {
    if !m.is_finite() {
        let k = m.as_slice().iter().position(|v| !v.is_finite()).unwrap();
        return Err(LinalgError::NonFinite {
            row: k / m.cols(),
            col: k % m.cols(),
        });
    }
    if m.rows() >= m.cols() {
        let cols = to_columns(m);
        let (u, sigma, v) = svd_tall(cols, m.rows(), m.cols())?;
        Ok(SvdResult {
            u: Matrix::from_columns(&u),
            sigma,
            vt: Matrix::from_columns(&v).transpose(),
        })
    } else {
        // X = (Xᵀ)ᵀ = (U' S V'ᵀ)ᵀ = V' S U'ᵀ
        let cols = to_columns(&m.transpose());
        let (u, sigma, v) = svd_tall(cols, m.cols(), m.rows())?;
        Ok(SvdResult {
            u: Matrix::from_columns(&v),
            sigma,
            vt: Matrix::from_columns(&u).transpose(),
        })
    }
}

/// Largest singular value.
pub fn spectral_norm(m: &Matrix) -> Result<f64, LinalgError> {
    Ok(svd(m)?.sigma[0])
}

/// Moore-Penrose pseudo-inverse. Singular values at or below
/// `rcond * sigma_max` are treated as zero.
pub fn pseudo_inverse(m: &Matrix, rcond: f64) -> Result<Matrix, LinalgError> {
    let f = svd(m)?;
    let cutoff = rcond.max(0.0) * f.sigma[0];
    let k = f.sigma.len();
    // V diag(1/s) Uᵀ
    let mut v_scaled = f.vt.transpose();
    for j in 0..k {
        let s = f.sigma[j];
        let inv = if s > cutoff && s > 0.0 { 1.0 / s } else { 0.0 };
        for i in 0..v_scaled.rows() {
            v_scaled[(i, j)] *= inv;
        }
    }
    Ok(v_scaled.matmul_t(&f.u))
}

/// Pseudo-inverse with `rcond = 1e-12 * max(rows, cols)`.
pub fn pseudo_inverse_default(m: &Matrix) -> Result<Matrix, LinalgError> {
    pseudo_inverse(m, 1e-12 * m.rows().max(m.cols()) as f64)
}

fn to_columns(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.cols()).map(|j| m.column(j)).collect()
}

type ThinSvd = (Vec<Vec<f64>>, Vec<f64>, Vec<Vec<f64>>);

/// SVD of a tall matrix given by its `k` columns of length `n >= k`.
/// Returns (U columns, sigma, V columns).
fn svd_tall(mut a: Vec<Vec<f64>>, n: usize, k: usize) -> Result<ThinSvd, LinalgError> {
    // Householder QR, reflectors stored separately.
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(k);
    for j in 0..k {
        let x = &a[j][j..];
        let alpha = {
            let nrm = dot(x, x).sqrt();
            if x[0] > 0.0 {
                -nrm
            } else {
                nrm
            }
        };
        let mut v = x.to_vec();
        v[0] -= alpha;
        let vnorm = dot(&v, &v).sqrt();
        if vnorm == 0.0 || alpha == 0.0 {
            reflectors.push(Vec::new());
            continue;
        }
        v.iter_mut().for_each(|e| *e /= vnorm);
        for col in a.iter_mut().skip(j) {
            let seg = &mut col[j..];
            let p = 2.0 * dot(&v, seg);
            for (s, vi) in seg.iter_mut().zip(&v) {
                *s -= p * vi;
            }
        }
        reflectors.push(v);
    }
    // R as columns of length k (upper triangle).
    let mut w: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(j, col)| (0..k).map(|i| if i <= j { col[i] } else { 0.0 }).collect())
        .collect();

    let mut v: Vec<Vec<f64>> = (0..k)
        .map(|j| (0..k).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    let eps = f64::EPSILON;
    // pairs of round-off sized columns can rotate forever; ignore them
    let floor = eps * eps * w.iter().map(|c| dot(c, c)).sum::<f64>();
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..k {
            for q in (p + 1)..k {
                let alpha = dot(&w[p], &w[p]);
                let beta = dot(&w[q], &w[q]);
                let gamma = dot(&w[p], &w[q]);
                if gamma.abs() <= floor || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut w, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(LinalgError::NoConvergence {
            what: "svd",
            rows: n,
            cols: k,
        });
    }

    let mut sigma: Vec<f64> = w.iter().map(|c| dot(c, c).sqrt()).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]));
    sigma = order.iter().map(|&i| sigma[i]).collect();
    let w: Vec<Vec<f64>> = order.iter().map(|&i| w[i].clone()).collect();
    let v: Vec<Vec<f64>> = order.iter().map(|&i| v[i].clone()).collect();

    // Left vectors of R; columns with negligible sigma are completed to an
    // orthonormal set instead of being normalized from noise.
    let smax = sigma.first().copied().unwrap_or(0.0);
    let tiny = (k as f64) * eps * smax;
    let mut ur: Vec<Vec<f64>> = Vec::with_capacity(k);
    for (j, col) in w.iter().enumerate() {
        if sigma[j] > tiny && sigma[j] > 0.0 {
            ur.push(col.iter().map(|x| x / sigma[j]).collect());
        } else {
            ur.push(complete_basis(&ur, k));
        }
    }

    // U = Q [Ur; 0], applying reflectors in reverse.
    let mut u: Vec<Vec<f64>> = ur
        .into_iter()
        .map(|c| {
            let mut full = vec![0.0; n];
            full[..k].copy_from_slice(&c);
            full
        })
        .collect();
    for (j, refl) in reflectors.iter().enumerate().rev() {
        if refl.is_empty() {
            continue;
        }
        for col in u.iter_mut() {
            let seg = &mut col[j..];
            let p = 2.0 * dot(refl, seg);
            for (s, vi) in seg.iter_mut().zip(refl) {
                *s -= p * vi;
            }
        }
    }
    Ok((u, sigma, v))
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let (cp, cq) = (&mut lo[p], &mut hi[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// A unit vector of length `k` orthogonal to every vector in `basis`.
fn complete_basis(basis: &[Vec<f64>], k: usize) -> Vec<f64> {
    let mut best = vec![0.0; k];
    let mut best_norm = -1.0;
    for e in 0..k {
        let mut cand = vec![0.0; k];
        cand[e] = 1.0;
        // two passes of Gram-Schmidt
        for _ in 0..2 {
            for b in basis {
                let p = dot(b, &cand);
                for (c, bi) in cand.iter_mut().zip(b) {
                    *c -= p * bi;
                }
            }
        }
        let nrm = dot(&cand, &cand).sqrt();
        if nrm > best_norm {
            best_norm = nrm;
            best = cand;
        }
        if nrm > 0.5 {
            break;
        }
    }
    best.iter().map(|x| x / best_norm).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn orthonormality_defect(u: &Matrix) -> f64 {
        (&u.t_matmul(u) - &Matrix::identity(u.cols())).frobenius_norm()
    }

    fn check(m: &Matrix) {
        let f = svd(m).unwrap();
        let k = m.rows().min(m.cols());
        assert_eq!(f.sigma.len(), k);
        assert!(f.sigma.windows(2).all(|w| w[0] >= w[1]));
        assert!(f.sigma.iter().all(|&s| s >= 0.0));
        assert!(orthonormality_defect(&f.u) <= 1e-10 * k as f64);
        assert!(orthonormality_defect(&f.vt.transpose()) <= 1e-10 * k as f64);
        let err = (&f.reconstruct() - m).frobenius_norm();
        assert!(err <= 1e-8 * (1.0 + m.frobenius_norm()), "err {err}");
    }

    #[test]
    fn identity_has_unit_singular_values() {
        let f = svd(&Matrix::identity(3)).unwrap();
        for s in f.sigma {
            assert!((s - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn rank_one_outer_product() {
        // |a| = 2, |b| = 3
        let a = [2.0 / 3f64.sqrt(); 3];
        let b = [0.0, 3.0, 0.0, 0.0];
        let m = Matrix::from_fn(3, 4, |i, j| a[i] * b[j]);
        let f = svd(&m).unwrap();
        assert!((f.sigma[0] - 6.0).abs() < 1e-13);
        assert!(f.sigma[1..].iter().all(|&s| s < 1e-13));
        check(&m);
    }

    #[test]
    fn seeded_shapes_reconstruct() {
        check(&random(5, 4, 1));
        check(&random(4, 5, 2));
        check(&random(1, 1, 3));
        check(&random(7, 1, 4));
        check(&random(1, 7, 5));
        check(&random(200, 200, 6));
        check(&random(300, 20, 7));
        check(&Matrix::zeros(4, 3));
    }

    #[test]
    fn rank_deficient_still_orthonormal() {
        let a = random(8, 2, 9);
        let b = random(2, 6, 10);
        check(&a.matmul(&b));
    }

    #[test]
    fn pseudo_inverse_examples() {
        let p = pseudo_inverse(&Matrix::identity(3), 1e-12).unwrap();
        assert!((&p - &Matrix::identity(3)).max_abs() < 1e-15);

        let p = pseudo_inverse(&Matrix::from_diag(&[2.0, 0.0]), 1e-12).unwrap();
        assert!((&p - &Matrix::from_diag(&[0.5, 0.0])).max_abs() < 1e-15);

        let m = random(6, 3, 11);
        let p = pseudo_inverse_default(&m).unwrap();
        assert!((&p.matmul(&m) - &Matrix::identity(3)).max_abs() < 1e-8);
    }

    #[test]
    fn moore_penrose_conditions() {
        for (seed, (r, c)) in [(3, 5), (5, 3), (4, 4)].into_iter().enumerate() {
            let m = random(r, 2, seed as u64).matmul(&random(2, c, 100 + seed as u64));
            let p = pseudo_inverse_default(&m).unwrap();
            let mp = m.matmul(&p);
            let pm = p.matmul(&m);
            assert!((&mp.matmul(&m) - &m).max_abs() < 1e-8);
            assert!((&pm.matmul(&p) - &p).max_abs() < 1e-8);
            assert!((&mp - &mp.transpose()).max_abs() < 1e-8);
            assert!((&pm - &pm.transpose()).max_abs() < 1e-8);
        }
    }

    #[test]
    fn non_finite_input_rejected() {
        let mut m = Matrix::identity(2);
        m.as_mut_slice()[3] = f64::INFINITY;
        assert!(matches!(svd(&m), Err(LinalgError::NonFinite { row: 1, col: 1 })));
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn arb_matrix() -> impl Strategy<Value = Matrix> {
        (1usize..9, 1usize..9).prop_flat_map(|(r, c)| {
            proptest::collection::vec(-10.0f64..10.0, r * c).prop_map(move |v| Matrix::from_vec(r, c, v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn factorization_reconstructs_with_orthonormal_factors(m in arb_matrix()) {
            let s = svd(&m).unwrap();
            let scale = 1.0 + m.frobenius_norm();
            prop_assert!((&s.reconstruct() - &m).frobenius_norm() <= 1e-12 * scale);
            prop_assert!(s.sigma.windows(2).all(|w| w[0] >= w[1]));
            prop_assert!(s.sigma.iter().all(|&x| x >= 0.0));
            let k = s.sigma.len();
            let utu = s.u.t_matmul(&s.u);
            let vvt = s.vt.matmul_t(&s.vt);
            prop_assert!((&utu - &Matrix::identity(k)).max_abs() <= 1e-12);
            prop_assert!((&vvt - &Matrix::identity(k)).max_abs() <= 1e-12);
        }

        #[test]
        fn pseudo_inverse_satisfies_penrose_identity(m in arb_matrix()) {
            let p = pseudo_inverse_default(&m).unwrap();
            let back = m.matmul(&p).matmul(&m);
            let cond = {
                let s = svd(&m).unwrap().sigma;
                let lo = s.iter().copied().filter(|&x| x > 1e-12 * s[0] * m.rows().max(m.cols()) as f64).fold(f64::INFINITY, f64::min);
                if lo.is_finite() { s[0] / lo } else { 1.0 }
            };
            prop_assert!((&back - &m).frobenius_norm() <= 1e-13 * cond * (1.0 + m.frobenius_norm()));
        }
    }
}
