//! Browser demo: stable parameterization versus raw matrices, sLSI versus
//! LSI on a noisy oscillator, and phase portraits of learned models.
//!
//! Each operation has a plain Rust function (tested natively) and a thin
//! `wasm_bindgen` export. Results cross the boundary as flat `Vec<f64>`.

use stable_lsi::datagen::add_noise;
use stable_lsi::integrator::{simulate, IntegratorError, TimeGrid};
use stable_lsi::linalg::{eigenvalues, Matrix};
use stable_lsi::random::{normal_vec, seeded_rng};
use stable_lsi::{train_lsi, train_slsi, LinearModel, SnapshotSet, StableParams, TrainConfig, Trajectory};
use wasm_bindgen::prelude::*;

/// Ground truth for the fitting demo: a lightly damped oscillator.
pub const OSCILLATOR: [f64; 4] = [-0.05, 1.0, -1.0, -0.05];

fn pairs(m: &Matrix) -> Result<Vec<f64>, String> {
    let spec = eigenvalues(m).map_err(|e| e.to_string())?;
    Ok(spec.sorted().iter().flat_map(|c| [c.re, c.im]).collect())
}

/// Eigenvalues of a random `n x n` matrix `M` and of `(J - Jᵀ - RRᵀ)QQᵀ`
/// built from factors with the same distribution, as `[re, im]` pairs:
/// the first `n` pairs belong to `M`, the next `n` to the stable matrix.
pub fn compare_spectra(n: usize, seed: u64, std: f64) -> Result<Vec<f64>, String> {
    if n == 0 || n > 200 {
        return Err("dimension must be between 1 and 200".into());
    }
    if !(std > 0.0 && std.is_finite()) {
        return Err("std must be positive".into());
    }
    let raw = StableParams::init(n, None, seed ^ 0x5eed, std).jbar;
    let stable = StableParams::init(n, None, seed, std).drift();
    let mut out = pairs(&raw)?;
    out.extend(pairs(&stable)?);
    Ok(out)
}

/// Outcome of fitting both methods to the same noisy data.
#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct FitOutcome {
    data: Vec<f64>,
    slsi: Vec<f64>,
    lsi: Vec<f64>,
    slsi_loss: f64,
    lsi_loss: f64,
}

#[wasm_bindgen]
impl FitOutcome {
    /// Noisy training trajectory as interleaved `x, y` points.
    pub fn data(&self) -> Vec<f64> {
        self.data.clone()
    }
    /// Learned sLSI matrix, row-major.
    pub fn slsi_matrix(&self) -> Vec<f64> {
        self.slsi.clone()
    }
    /// Learned LSI matrix, row-major.
    pub fn lsi_matrix(&self) -> Vec<f64> {
        self.lsi.clone()
    }
    pub fn slsi_loss(&self) -> f64 {
        self.slsi_loss
    }
    pub fn lsi_loss(&self) -> f64 {
        self.lsi_loss
    }
    /// Eigenvalue pairs of the sLSI matrix.
    pub fn slsi_eigs(&self) -> Vec<f64> {
        pairs(&Matrix::from_vec(2, 2, self.slsi.clone()).expect("2x2")).unwrap_or_default()
    }
    /// Eigenvalue pairs of the LSI matrix.
    pub fn lsi_eigs(&self) -> Vec<f64> {
        pairs(&Matrix::from_vec(2, 2, self.lsi.clone()).expect("2x2")).unwrap_or_default()
    }
}

/// Simulates the oscillator from a random start, adds relative noise, and
/// trains sLSI and LSI with the same settings.
pub fn fit_oscillator(noise: f64, updates: usize, seed: u64) -> Result<FitOutcome, String> {
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err("noise must be non-negative".into());
    }
    let truth = LinearModel::unconstrained(Matrix::from_vec(2, 2, OSCILLATOR.to_vec()).expect("2x2"), None)
        .map_err(|e| e.to_string())?;
    let grid = TimeGrid::new(0.0, 0.1, 150).map_err(|e| e.to_string())?;
    let mut rng = seeded_rng(seed);
    let x0 = normal_vec(&mut rng, 2, 1.0);
    let states = simulate(&truth, &x0, &grid, None).map_err(|e| e.to_string())?;
    let clean = SnapshotSet::single(Trajectory::new(grid, states)).map_err(|e| e.to_string())?;
    let data = add_noise(&clean, noise, seed.wrapping_add(1));
    let cfg = TrainConfig {
        updates,
        seed,
        ..TrainConfig::default()
    };
    let (_, slsi, rs) = train_slsi(&data, 2, &cfg).map_err(|e| e.to_string())?;
    let (lsi, rl) = train_lsi(&data, 2, &cfg).map_err(|e| e.to_string())?;
    let x = &data.trajectories[0].states;
    Ok(FitOutcome {
        data: (0..x.cols()).flat_map(|j| [x[(0, j)], x[(1, j)]]).collect(),
        slsi: slsi.a.into_vec(),
        lsi: lsi.a.into_vec(),
        slsi_loss: rs.best_loss,
        lsi_loss: rl.best_loss,
    })
}

/// RK4 trajectories of `ẋ = Ax` for a row-major 2x2 `a` from each start in
/// `starts` (interleaved `x, y`). Each trajectory contributes `steps + 1`
/// points; points after a divergence are NaN.
pub fn portrait(a: &[f64], starts: &[f64], dt: f64, steps: usize) -> Result<Vec<f64>, String> {
    if a.len() != 4 {
        return Err("matrix must have 4 entries".into());
    }
    if !starts.len().is_multiple_of(2) {
        return Err("starts must hold x, y pairs".into());
    }
    let model = LinearModel::unconstrained(Matrix::from_vec(2, 2, a.to_vec()).map_err(|e| e.to_string())?, None)
        .map_err(|e| e.to_string())?;
    let grid = TimeGrid::new(0.0, dt, steps).map_err(|e| e.to_string())?;
    let mut out = Vec::with_capacity(starts.len() * (steps + 1));
    for s in starts.chunks(2) {
        let states = match simulate(&model, s, &grid, None) {
            Ok(m) => m,
            Err(IntegratorError::Diverged { partial, .. }) => partial,
            Err(e) => return Err(e.to_string()),
        };
        for j in 0..=steps {
            if j < states.cols() && states[(0, j)].abs() < 1e6 && states[(1, j)].abs() < 1e6 {
                out.extend([states[(0, j)], states[(1, j)]]);
            } else {
                out.extend([f64::NAN, f64::NAN]);
            }
        }
    }
    Ok(out)
}

#[wasm_bindgen(js_name = compareSpectra)]
pub fn compare_spectra_js(n: usize, seed: u64, std: f64) -> Result<Vec<f64>, JsError> {
    compare_spectra(n, seed, std).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = fitOscillator)]
pub fn fit_oscillator_js(noise: f64, updates: usize, seed: u64) -> Result<FitOutcome, JsError> {
    fit_oscillator(noise, updates, seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = portrait)]
pub fn portrait_js(a: &[f64], starts: &[f64], dt: f64, steps: usize) -> Result<Vec<f64>, JsError> {
    portrait(a, starts, dt, steps).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = oscillator)]
pub fn oscillator_js() -> Vec<f64> {
    OSCILLATOR.to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_spectrum_stays_left_raw_one_does_not() {
        let mut raw_crossed = false;
        for seed in 0..20 {
            let v = compare_spectra(8, seed, 1.0).unwrap();
            assert_eq!(v.len(), 32);
            let (raw, stable) = v.split_at(16);
            assert!(stable.chunks(2).all(|c| c[0] <= 1e-8), "seed {seed}: {stable:?}");
            raw_crossed |= raw.chunks(2).any(|c| c[0] > 0.0);
        }
        assert!(raw_crossed);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(compare_spectra(0, 0, 1.0).is_err());
        assert!(compare_spectra(3, 0, -1.0).is_err());
        assert!(fit_oscillator(-0.1, 10, 0).is_err());
        assert!(portrait(&[1.0, 2.0], &[0.0, 0.0], 0.1, 3).is_err());
        assert!(portrait(&OSCILLATOR, &[0.0], 0.1, 3).is_err());
    }

    #[test]
    fn clean_fit_recovers_oscillator() {
        let out = fit_oscillator(0.0, 3000, 1).unwrap();
        assert_eq!(out.data().len(), 2 * 151);
        for (l, t) in out.slsi_matrix().iter().zip(OSCILLATOR) {
            assert!((l - t).abs() < 1e-3, "{:?}", out.slsi_matrix());
        }
        assert!(out.slsi_eigs().chunks(2).all(|c| c[0] < 0.0));
        assert!(out.slsi_loss() <= out.lsi_loss() * 10.0 + 1e-12);
    }

    #[test]
    fn noisy_fit_keeps_slsi_stable() {
        let out = fit_oscillator(0.2, 500, 4).unwrap();
        assert!(out.slsi_eigs().chunks(2).all(|c| c[0] <= 1e-8), "{:?}", out.slsi_eigs());
        assert_eq!(out.lsi_eigs().len(), 4);
    }

    #[test]
    fn portrait_matches_rotation_and_marks_blowup() {
        let rot = [0.0, 1.0, -1.0, 0.0];
        let steps = 100;
        let dt = std::f64::consts::TAU / steps as f64;
        let v = portrait(&rot, &[1.0, 0.0, 0.0, 2.0], dt, steps).unwrap();
        assert_eq!(v.len(), 2 * 2 * (steps + 1));
        let last = &v[2 * steps..2 * steps + 2];
        assert!((last[0] - 1.0).abs() < 1e-6 && last[1].abs() < 1e-6, "{last:?}");
        let start2 = 2 * (steps + 1);
        assert_eq!(&v[start2..start2 + 2], &[0.0, 2.0]);

        let blow = portrait(&[5.0, 0.0, 0.0, 5.0], &[1.0, 1.0], 0.5, 40).unwrap();
        assert!(blow[0].is_finite());
        assert!(blow.last().unwrap().is_nan());
    }
}
