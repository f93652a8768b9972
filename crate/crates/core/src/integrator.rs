//! Classical fourth-order Runge-Kutta maps for `ẋ = Ax` and `ẋ = Ax + Bu`,
//! and trajectory simulation on uniform grids.
//!
//! The fourth stage evaluates the drift at `x + dt·h₃`. Inputs are sampled
//! at the stage times `t`, `t + dt/2` (stages two and three) and `t + dt`.

use crate::linalg::{LinalgError, Matrix};
use crate::stableparam::LinearModel;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IntegratorError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("time step must be positive and finite, got {0}")]
    BadStep(f64),
    #[error("model has an input matrix but no input signal was supplied")]
    MissingInput,
    #[error("input signal has {got} samples of dimension {got_dim}, expected {expected} of dimension {expected_dim}")]
    InputMismatch {
        expected: usize,
        got: usize,
        expected_dim: usize,
        got_dim: usize,
    },
    #[error("simulation diverged (non-finite state) at step {step}")]
    Diverged {
        step: usize,
        /// Columns `0..=step-1` that were still finite.
        partial: Matrix,
    },
}

/// Uniform time grid with `steps + 1` nodes `t0 + i·dt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub t0: f64,
    pub dt: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, dt: f64, steps: usize) -> Result<Self, IntegratorError> {
        if !(dt > 0.0 && dt.is_finite()) || !t0.is_finite() {
            return Err(IntegratorError::BadStep(dt));
        }
        Ok(Self { t0, dt, steps })
    }

    pub fn nodes(&self) -> usize {
        self.steps + 1
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn end(&self) -> f64 {
        self.time(self.steps)
    }
}

/// How inputs are evaluated halfway between grid nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MidpointRule {
    #[default]
    LinearInterpolation,
    ZeroOrderHold,
}

impl MidpointRule {
    pub fn as_str(self) -> &'static str {
        match self {
            MidpointRule::LinearInterpolation => "linear",
            MidpointRule::ZeroOrderHold => "zoh",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "linear" => Some(Self::LinearInterpolation),
            "zoh" => Some(Self::ZeroOrderHold),
            _ => None,
        }
    }
}

/// Input samples on the grid nodes, one column per node.
#[derive(Debug, Clone, PartialEq)]
pub struct InputSignal {
    pub samples: Matrix,
    pub midpoint_rule: MidpointRule,
}

impl InputSignal {
    pub fn new(samples: Matrix, midpoint_rule: MidpointRule) -> Self {
        Self { samples, midpoint_rule }
    }

    pub fn dim(&self) -> usize {
        self.samples.rows()
    }

    pub fn nodes(&self) -> usize {
        self.samples.cols()
    }

    pub fn at(&self, i: usize) -> Vec<f64> {
        self.samples.column(i)
    }

    /// `u(t_i + dt/2)` according to the midpoint rule.
    pub fn midpoint(&self, i: usize) -> Vec<f64> {
        match self.midpoint_rule {
            MidpointRule::ZeroOrderHold => self.at(i),
            MidpointRule::LinearInterpolation => (0..self.dim())
                .map(|r| 0.5 * (self.samples[(r, i)] + self.samples[(r, i + 1)]))
                .collect(),
        }
    }

    /// Midpoint samples for every interval as an `m x steps` matrix.
    pub fn midpoints(&self) -> Matrix {
        let steps = self.nodes().saturating_sub(1);
        let mut out = Matrix::zeros(self.dim(), steps.max(1));
        for i in 0..steps {
            out.set_column(i, &self.midpoint(i));
        }
        out
    }
}

/// A one-step map for linear systems. [`Rk4`] is the only scheme shipped;
/// other integrators plug into [`simulate_with`] through this trait.
pub trait OneStepScheme {
    fn step(
        &self,
        a: &Matrix,
        forcing: Option<StageForcing<'_>>,
        x: &[f64],
        dt: f64,
    ) -> Result<Vec<f64>, IntegratorError>;
}

/// Input matrix with the inputs at the start, middle and end of a step.
#[derive(Debug, Clone, Copy)]
pub struct StageForcing<'a> {
    pub b: &'a Matrix,
    pub u_now: &'a [f64],
    pub u_mid: &'a [f64],
    pub u_next: &'a [f64],
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Rk4;

impl OneStepScheme for Rk4 {
    fn step(
        &self,
        a: &Matrix,
        forcing: Option<StageForcing<'_>>,
        x: &[f64],
        dt: f64,
    ) -> Result<Vec<f64>, IntegratorError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(IntegratorError::BadStep(dt));
        }
        if !a.is_square() {
            return Err(LinalgError::NotSquare {
                rows: a.rows(),
                cols: a.cols(),
            }
            .into());
        }
        a.try_matvec(x)?;
        let (bu_now, bu_mid, bu_next) = match forcing {
            Some(f) => (f.b.try_matvec(f.u_now)?, f.b.try_matvec(f.u_mid)?, f.b.try_matvec(f.u_next)?),
            None => (vec![0.0; x.len()], vec![0.0; x.len()], vec![0.0; x.len()]),
        };
        if bu_now.len() != x.len() {
            return Err(LinalgError::DimensionMismatch {
                op: "rk4 input matrix",
                left: a.shape(),
                right: forcing.map_or((0, 0), |f| f.b.shape()),
            }
            .into());
        }
        let stage = |base: &[f64], h: &[f64], c: f64, bu: &[f64]| -> Vec<f64> {
            let p: Vec<f64> = base.iter().zip(h).map(|(xi, hi)| xi + c * hi).collect();
            a.matvec(&p).iter().zip(bu).map(|(v, w)| v + w).collect()
        };
        let zero = vec![0.0; x.len()];
        let h1 = stage(x, &zero, 0.0, &bu_now);
        let h2 = stage(x, &h1, 0.5 * dt, &bu_mid);
        let h3 = stage(x, &h2, 0.5 * dt, &bu_mid);
        let h4 = stage(x, &h3, dt, &bu_next);
        Ok((0..x.len())
            .map(|i| x[i] + dt / 6.0 * (h1[i] + 2.0 * h2[i] + 2.0 * h3[i] + h4[i]))
            .collect())
    }
}

/// One RK4 step of `ẋ = Ax`.
pub fn rk4_step(a: &Matrix, x: &[f64], dt: f64) -> Result<Vec<f64>, IntegratorError> {
    Rk4.step(a, None, x, dt)
}

/// One RK4 step of `ẋ = Ax + Bu`.
#[allow(clippy::too_many_arguments)]
pub fn rk4_step_controlled(
    a: &Matrix,
    b: &Matrix,
    x: &[f64],
    u_now: &[f64],
    u_mid: &[f64],
    u_next: &[f64],
    dt: f64,
) -> Result<Vec<f64>, IntegratorError> {
    Rk4.step(
        a,
        Some(StageForcing {
            b,
            u_now,
            u_mid,
            u_next,
        }),
        x,
        dt,
    )
}

/// Simulates `model` from `x0` over `grid`, returning an `n x (steps+1)`
/// trajectory whose first column is `x0`.
pub fn simulate(
    model: &LinearModel,
    x0: &[f64],
    grid: &TimeGrid,
    u: Option<&InputSignal>,
) -> Result<Matrix, IntegratorError> {
    simulate_with(&Rk4, model, x0, grid, u)
}

pub fn simulate_with<S: OneStepScheme>(
    scheme: &S,
    model: &LinearModel,
    x0: &[f64],
    grid: &TimeGrid,
    u: Option<&InputSignal>,
) -> Result<Matrix, IntegratorError> {
    let n = model.state_dim();
    if x0.len() != n {
        return Err(LinalgError::DimensionMismatch {
            op: "simulate initial state",
            left: model.a.shape(),
            right: (x0.len(), 1),
        }
        .into());
    }
    if !(grid.dt > 0.0 && grid.dt.is_finite()) {
        return Err(IntegratorError::BadStep(grid.dt));
    }
    let signal = match (&model.b, u) {
        (Some(_), None) => return Err(IntegratorError::MissingInput),
        (Some(b), Some(sig)) => {
            if sig.nodes() != grid.nodes() || sig.dim() != b.cols() {
                return Err(IntegratorError::InputMismatch {
                    expected: grid.nodes(),
                    got: sig.nodes(),
                    expected_dim: b.cols(),
                    got_dim: sig.dim(),
                });
            }
            Some(sig)
        }
        (None, _) => None,
    };

    let mut traj = Matrix::zeros(n, grid.nodes());
    traj.set_column(0, x0);
    let mut x = x0.to_vec();
    for i in 0..grid.steps {
        let next = match (&model.b, signal) {
            (Some(b), Some(sig)) => {
                let (un, um, ux) = (sig.at(i), sig.midpoint(i), sig.at(i + 1));
                scheme.step(
                    &model.a,
                    Some(StageForcing {
                        b,
                        u_now: &un,
                        u_mid: &um,
                        u_next: &ux,
                    }),
                    &x,
                    grid.dt,
                )?
            }
            _ => scheme.step(&model.a, None, &x, grid.dt)?,
        };
        if next.iter().any(|v| !v.is_finite()) {
            return Err(IntegratorError::Diverged {
                step: i + 1,
                partial: traj.columns(0, i + 1),
            });
        }
        traj.set_column(i + 1, &next);
        x = next;
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stableparam::StableParams;

    fn rotation() -> Matrix {
        Matrix::from_rows(&[&[0.0, 1.0], &[-1.0, 0.0]])
    }

    #[test]
    fn zero_dynamics_leave_state_unchanged() {
        let x = [1.5, -2.0, 0.25];
        assert_eq!(rk4_step(&Matrix::zeros(3, 3), &x, 0.3).unwrap(), x.to_vec());
    }

    #[test]
    fn scalar_decay_matches_quartic_taylor() {
        // 1 - 0.1 + 0.01/2 - 0.001/6 + 0.0001/24
        let dt: f64 = 0.1;
        let taylor = 1.0 - dt + dt * dt / 2.0 - dt.powi(3) / 6.0 + dt.powi(4) / 24.0;
        assert!((taylor - 0.904_837_5).abs() < 1e-9);
        let x = rk4_step(&Matrix::from_rows(&[&[-1.0]]), &[1.0], dt).unwrap();
        assert!((x[0] - taylor).abs() < 1e-15);
    }

    #[test]
    fn halving_step_reduces_local_error_sixteen_fold() {
        let a = rotation();
        let err = |dt: f64| {
            let x = rk4_step(&a, &[1.0, 0.0], dt).unwrap();
            ((x[0] - dt.cos()).powi(2) + (x[1] + dt.sin()).powi(2)).sqrt()
        };
        // local error is O(dt^5); 2^5 = 32 ideally, at least 16 asked for
        let ratio = err(0.1) / err(0.05);
        assert!(ratio > 16.0, "ratio {ratio}");
    }

    #[test]
    fn controlled_reduces_to_autonomous_with_zero_b() {
        let a = Matrix::from_rows(&[&[-0.3, 1.0], &[-2.0, -0.1]]);
        let b = Matrix::zeros(2, 1);
        let x = [0.7, -0.2];
        let y = rk4_step_controlled(&a, &b, &x, &[1.0], &[2.0], &[3.0], 0.05).unwrap();
        assert_eq!(y, rk4_step(&a, &x, 0.05).unwrap());
    }

    #[test]
    fn pure_input_integrates_exactly() {
        let x = [1.0, 2.0];
        let u = [0.5, -1.0];
        let y = rk4_step_controlled(&Matrix::zeros(2, 2), &Matrix::identity(2), &x, &u, &u, &u, 0.2).unwrap();
        assert!((y[0] - 1.1).abs() < 1e-15 && (y[1] - 1.8).abs() < 1e-15);
    }

    #[test]
    fn affine_scalar_step() {
        // x' = -x + 1, x(0) = 0: 1 - e^{-dt}, Taylor to order 4
        let dt: f64 = 0.1;
        let expected = dt - dt * dt / 2.0 + dt.powi(3) / 6.0 - dt.powi(4) / 24.0;
        assert!((expected - 0.095_162_5).abs() < 1e-9);
        let one = Matrix::from_rows(&[&[1.0]]);
        let y = rk4_step_controlled(&Matrix::from_rows(&[&[-1.0]]), &one, &[0.0], &[1.0], &[1.0], &[1.0], dt).unwrap();
        assert!((y[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn step_is_linear_in_state() {
        let a = Matrix::from_rows(&[&[-0.3, 1.0, 0.2], &[-2.0, -0.1, 0.0], &[0.5, 0.5, -1.0]]);
        let x = [0.7, -0.2, 1.1];
        let y = [-1.3, 0.4, 2.0];
        let (al, be) = (0.6, -2.5);
        let comb: Vec<f64> = x.iter().zip(&y).map(|(a, b)| al * a + be * b).collect();
        let lhs = rk4_step(&a, &comb, 0.07).unwrap();
        let px = rk4_step(&a, &x, 0.07).unwrap();
        let py = rk4_step(&a, &y, 0.07).unwrap();
        for i in 0..3 {
            assert!((lhs[i] - (al * px[i] + be * py[i])).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(rk4_step(&rotation(), &[1.0], 0.1).is_err());
        assert!(matches!(rk4_step(&rotation(), &[1.0, 0.0], 0.0), Err(IntegratorError::BadStep(_))));
        assert!(rk4_step_controlled(&rotation(), &Matrix::zeros(3, 1), &[1.0, 0.0], &[0.0], &[0.0], &[0.0], 0.1).is_err());
    }

    #[test]
    fn simulate_basic_cases() {
        let model = LinearModel::unconstrained(rotation(), None).unwrap();
        let grid = TimeGrid::new(0.0, 0.01, 0).unwrap();
        let t = simulate(&model, &[1.0, 0.0], &grid, None).unwrap();
        assert_eq!(t.shape(), (2, 1));

        let grid = TimeGrid::new(0.0, 0.01, 628).unwrap();
        let t = simulate(&model, &[1.0, 0.0], &grid, None).unwrap();
        let end = t.column(628);
        let t_end = 628.0 * 0.01_f64;
        assert!((end[0] - t_end.cos()).abs() < 1e-6);
        assert!((end[1] + t_end.sin()).abs() < 1e-6);
    }

    #[test]
    fn simulate_requires_inputs_for_controlled_models() {
        let model = LinearModel::unconstrained(rotation(), Some(Matrix::identity(2))).unwrap();
        let grid = TimeGrid::new(0.0, 0.1, 3).unwrap();
        assert_eq!(simulate(&model, &[0.0, 0.0], &grid, None), Err(IntegratorError::MissingInput));
        let short = InputSignal::new(Matrix::zeros(2, 3), MidpointRule::default());
        assert!(matches!(
            simulate(&model, &[0.0, 0.0], &grid, Some(&short)),
            Err(IntegratorError::InputMismatch { .. })
        ));
        let ok = InputSignal::new(Matrix::from_fn(2, 4, |_, j| j as f64), MidpointRule::ZeroOrderHold);
        assert_eq!(simulate(&model, &[0.0, 0.0], &grid, Some(&ok)).unwrap().shape(), (2, 4));
    }

    #[test]
    fn divergence_is_reported_with_partial_trajectory() {
        let model = LinearModel::unconstrained(Matrix::from_rows(&[&[1e200]]), None).unwrap();
        let grid = TimeGrid::new(0.0, 1.0, 10).unwrap();
        match simulate(&model, &[1.0], &grid, None) {
            Err(IntegratorError::Diverged { step, partial }) => {
                assert_eq!(step, 1);
                assert_eq!(partial.cols(), 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn midpoint_rules() {
        let sig = InputSignal::new(Matrix::from_rows(&[&[0.0, 2.0, 4.0]]), MidpointRule::LinearInterpolation);
        assert_eq!(sig.midpoint(0), vec![1.0]);
        assert_eq!(sig.midpoints().as_slice(), &[1.0, 3.0]);
        let zoh = InputSignal::new(sig.samples.clone(), MidpointRule::ZeroOrderHold);
        assert_eq!(zoh.midpoint(1), vec![2.0]);
    }

    #[test]
    fn lyapunov_level_set_bounds_long_horizon() {
        let p = StableParams::init(4, None, 5, 0.5);
        let model = p.assemble().unwrap();
        let x0 = [1.0, -0.5, 0.3, 0.8];
        let grid = TimeGrid::new(0.0, 0.01, 10_000).unwrap();
        let traj = simulate(&model, &x0, &grid, None).unwrap();
        let v0 = p.lyapunov_value(&x0).unwrap();
        let mut prev = v0;
        for i in 1..traj.cols() {
            let v = p.lyapunov_value(&traj.column(i)).unwrap();
            assert!(v <= prev + 1e-8 * (1.0 + v0), "V increased at step {i}");
            prev = v;
        }
    }
}
