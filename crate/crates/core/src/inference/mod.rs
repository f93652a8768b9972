//! Training engine: stable (sLSI) and unconstrained (LSI) inference with the
//! unrolled RK4 loss, plus the derivative-based least-squares baselines.

mod optim;
mod unrolled;

use std::time::Instant;

pub use optim::{Adam, TriangularCyclicLr};
pub use unrolled::{derivative_loss_and_grad, loss_and_grad_model, ModelGradient};

use crate::linalg::{self, LinalgError, Matrix};
use crate::random::{normal_matrix, seeded_rng};
use crate::snapshots::{SnapshotError, SnapshotSet};
use crate::stableparam::{LinearModel, StableParams, DEFAULT_INIT_STD, STABILITY_TOL};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum InferenceError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("data carry inputs but the parameters have no input matrix")]
    MissingInputMatrix,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("derivative snapshots are required for this method")]
    NoDerivatives,
    #[error("loss became non-finite at update {step}")]
    NonFiniteLoss {
        step: usize,
        /// Best parameters seen before the failure, in optimizer order.
        last_good: Vec<Matrix>,
    },
    #[error("assembled model has max Re(λ) = {0:e}, outside the closed left half-plane")]
    StabilityViolated(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub updates: usize,
    pub lr_min: f64,
    pub lr_max: f64,
    /// `None` means `updates / 10`.
    pub cycle_length: Option<usize>,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub init_std: f64,
    pub seed: u64,
    pub unroll_steps: usize,
    /// Period (in updates) at which the training observer is invoked.
    pub observe_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            updates: 20_000,
            lr_min: 1e-6,
            lr_max: 1e-2,
            cycle_length: None,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            init_std: DEFAULT_INIT_STD,
            seed: 0,
            unroll_steps: 1,
            observe_every: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), InferenceError> {
        let bad = |m: &str| Err(InferenceError::Config(m.into()));
        if self.updates == 0 {
            return bad("updates must be at least 1");
        }
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr_max && self.lr_max.is_finite()) {
            return bad("learning rates must satisfy 0 < lr_min <= lr_max");
        }
        if self.unroll_steps == 0 {
            return bad("unroll_steps must be at least 1");
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return bad("init_std must be positive");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0 && self.adam_eps.is_finite()) {
            return bad("adam_eps must be positive");
        }
        if self.cycle_length == Some(0) || self.observe_every == 0 {
            return bad("cycle_length and observe_every must be positive");
        }
        Ok(())
    }

    pub fn schedule(&self) -> TriangularCyclicLr {
        let cycle = self.cycle_length.unwrap_or((self.updates / 10).max(2));
        TriangularCyclicLr::new(self.lr_min, self.lr_max, cycle)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    /// Loss evaluated before each update.
    pub losses: Vec<f64>,
    /// Learning rate applied at each update.
    pub learning_rates: Vec<f64>,
    /// Loss of the parameters after the last update.
    pub final_loss: f64,
    /// Lowest loss seen; the returned parameters achieve it.
    pub best_loss: f64,
    /// Index into `losses` of the best loss, or `losses.len()` for the
    /// parameters after the last update.
    pub best_update: usize,
    pub wall_time_secs: f64,
}

/// Gradient of a loss with respect to the stable factors, same shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct StableGradient {
    pub jbar: Matrix,
    pub rbar: Matrix,
    pub qbar: Matrix,
    pub bbar: Option<Matrix>,
}

/// Pulls `∂L/∂A` back through `A = (J̄ − J̄ᵀ − R̄R̄ᵀ) Q̄Q̄ᵀ`.
pub fn stable_chain_rule(p: &StableParams, grad_a: &Matrix, grad_b: Option<Matrix>) -> StableGradient {
    let (j, r, q) = p.decompose_parts();
    let s = &j - &r;
    let g_s = grad_a.matmul(&q);
    let g_q = s.t_matmul(grad_a);
    let jbar = &g_s - &g_s.transpose();
    let rbar = (&g_s + &g_s.transpose()).matmul(&p.rbar).scale(-1.0);
    let qbar = (&g_q + &g_q.transpose()).matmul(&p.qbar);
    StableGradient {
        jbar,
        rbar,
        qbar,
        bbar: grad_b,
    }
}

fn require_b_if_inputs(p: &StableParams, data: &SnapshotSet) -> Result<(), InferenceError> {
    if data.has_inputs() && p.bbar.is_none() {
        return Err(InferenceError::MissingInputMatrix);
    }
    Ok(())
}

/// Unrolled RK4 loss of the stable model assembled from `p`.
pub fn loss_unrolled(p: &StableParams, data: &SnapshotSet, unroll: usize) -> Result<f64, InferenceError> {
    p.validate()?;
    require_b_if_inputs(p, data)?;
    Ok(loss_and_grad_model(&p.drift(), p.bbar.as_ref(), data, unroll, false)?.loss)
}

/// Loss together with the exact gradient with respect to `(J̄, R̄, Q̄, B̄)`.
pub fn loss_and_grad_unrolled(
    p: &StableParams,
    data: &SnapshotSet,
    unroll: usize,
) -> Result<(f64, StableGradient), InferenceError> {
    p.validate()?;
    require_b_if_inputs(p, data)?;
    let g = loss_and_grad_model(&p.drift(), p.bbar.as_ref(), data, unroll, true)?;
    // keep a zero B̄ gradient when B̄ exists but the data are autonomous
    let gb = g.b.or_else(|| p.bbar.as_ref().map(|b| Matrix::zeros(b.rows(), b.cols())));
    Ok((g.loss, stable_chain_rule(p, &g.a, gb)))
}

pub fn grad_unrolled(p: &StableParams, data: &SnapshotSet, unroll: usize) -> Result<StableGradient, InferenceError> {
    Ok(loss_and_grad_unrolled(p, data, unroll)?.1)
}

fn params_to_vec(p: &StableParams) -> Vec<Matrix> {
    let mut v = vec![p.jbar.clone(), p.rbar.clone(), p.qbar.clone()];
    if let Some(b) = &p.bbar {
        v.push(b.clone());
    }
    v
}

fn vec_to_params(v: &[Matrix]) -> StableParams {
    StableParams {
        jbar: v[0].clone(),
        rbar: v[1].clone(),
        qbar: v[2].clone(),
        bbar: v.get(3).cloned(),
    }
}

fn grad_to_vec(g: StableGradient) -> Vec<Matrix> {
    let mut v = vec![g.jbar, g.rbar, g.qbar];
    if let Some(b) = g.bbar {
        v.push(b);
    }
    v
}

/// Full-batch Adam over `params`, returning the best iterate.
fn optimize(
    init: Vec<Matrix>,
    cfg: &TrainConfig,
    mut objective: impl FnMut(&[Matrix]) -> Result<(f64, Vec<Matrix>), InferenceError>,
    mut observer: impl FnMut(usize, &[Matrix], f64),
) -> Result<(Vec<Matrix>, LossReport), InferenceError> {
    cfg.validate()?;
    let start = Instant::now();
    let schedule = cfg.schedule();
    let mut params = init;
    let refs: Vec<&Matrix> = params.iter().collect();
    let mut adam = Adam::new(&refs, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);

    let mut losses = Vec::with_capacity(cfg.updates);
    let mut lrs = Vec::with_capacity(cfg.updates);
    let mut best: Option<(f64, usize, Vec<Matrix>)> = None;

    let non_finite = |step: usize, best: &Option<(f64, usize, Vec<Matrix>)>, params: &[Matrix]| {
        InferenceError::NonFiniteLoss {
            step,
            last_good: best.as_ref().map_or_else(|| params.to_vec(), |b| b.2.clone()),
        }
    };

    for step in 0..cfg.updates {
        let (loss, grads) = objective(&params)?;
        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(non_finite(step, &best, &params));
        }
        if best.as_ref().is_none_or(|b| loss < b.0) {
            best = Some((loss, step, params.clone()));
        }
        if step % cfg.observe_every == 0 {
            observer(step, &params, loss);
        }
        let lr = schedule.at(step);
        losses.push(loss);
        lrs.push(lr);
        adam.step(&mut params, &grads, lr);
    }

    let (final_loss, _) = objective(&params)?;
    if !final_loss.is_finite() {
        return Err(non_finite(cfg.updates, &best, &params));
    }
    observer(cfg.updates, &params, final_loss);
    let (best_loss, best_update, best_params) = match best {
        Some(b) if b.0 <= final_loss => b,
        _ => (final_loss, cfg.updates, params),
    };
    Ok((
        best_params,
        LossReport {
            losses,
            learning_rates: lrs,
            final_loss,
            best_loss,
            best_update,
            wall_time_secs: start.elapsed().as_secs_f64(),
        },
    ))
}

fn check_dim(data: &SnapshotSet, n: usize) -> Result<(), InferenceError> {
    data.validate()?;
    if data.state_dim() != n {
        return Err(InferenceError::DimensionMismatch {
            expected: n,
            got: data.state_dim(),
        });
    }
    Ok(())
}

fn assemble_checked(p: &StableParams) -> Result<LinearModel, InferenceError> {
    let model = p.assemble()?;
    let max_re = model.spectrum()?.max_real();
    if max_re > STABILITY_TOL {
        return Err(InferenceError::StabilityViolated(max_re));
    }
    Ok(model)
}

/// Stable linear system inference with the unrolled RK4 loss.
pub fn train_slsi(
    data: &SnapshotSet,
    n: usize,
    cfg: &TrainConfig,
) -> Result<(StableParams, LinearModel, LossReport), InferenceError> {
    train_slsi_observed(data, n, cfg, |_, _, _| {})
}

/// As [`train_slsi`], calling `observer(update, params, loss)` every
/// `cfg.observe_every` updates and once at the end.
pub fn train_slsi_observed(
    data: &SnapshotSet,
    n: usize,
    cfg: &TrainConfig,
    mut observer: impl FnMut(usize, &StableParams, f64),
) -> Result<(StableParams, LinearModel, LossReport), InferenceError> {
    cfg.validate()?;
    check_dim(data, n)?;
    let m = data.has_inputs().then(|| data.input_dim());
    let init = StableParams::init(n, m, cfg.seed, cfg.init_std);
    let unroll = cfg.unroll_steps;
    let (best, report) = optimize(
        params_to_vec(&init),
        cfg,
        |v| {
            let p = vec_to_params(v);
            let (loss, g) = loss_and_grad_unrolled(&p, data, unroll)?;
            Ok((loss, grad_to_vec(g)))
        },
        |step, v, loss| observer(step, &vec_to_params(v), loss),
    )?;
    let params = vec_to_params(&best);
    let model = assemble_checked(&params)?;
    Ok((params, model, report))
}

/// Unconstrained linear system inference: same loss, free `A` (and `B`).
pub fn train_lsi(data: &SnapshotSet, n: usize, cfg: &TrainConfig) -> Result<(LinearModel, LossReport), InferenceError> {
    cfg.validate()?;
    check_dim(data, n)?;
    let mut rng = seeded_rng(cfg.seed);
    let mut init = vec![normal_matrix(&mut rng, n, n, cfg.init_std)];
    if data.has_inputs() {
        init.push(normal_matrix(&mut rng, n, data.input_dim(), cfg.init_std));
    }
    let unroll = cfg.unroll_steps;
    let (best, report) = optimize(
        init,
        cfg,
        |v| {
            let g = loss_and_grad_model(&v[0], v.get(1), data, unroll, true)?;
            let mut grads = vec![g.a];
            grads.extend(g.b);
            Ok((g.loss, grads))
        },
        |_, _, _| {},
    )?;
    let model = LinearModel::unconstrained(best[0].clone(), best.get(1).cloned())?;
    Ok((model, report))
}

/// Minimal-norm least-squares fit of `Ẋ ≈ AX`: `A = Ẋ X⁺`.
pub fn fit_derivative_ls(x: &Matrix, xdot: &Matrix) -> Result<LinearModel, InferenceError> {
    x.check_same_shape(xdot, "derivative least squares")?;
    let a = xdot.matmul(&linalg::pseudo_inverse_default(x)?);
    Ok(LinearModel::unconstrained(a, None)?)
}

/// `[A B] = Ẋ [X; U]⁺`.
pub fn fit_derivative_ls_controlled(x: &Matrix, u: &Matrix, xdot: &Matrix) -> Result<LinearModel, InferenceError> {
    x.check_same_shape(xdot, "derivative least squares")?;
    let stacked = x.vstack(u)?;
    let ab = xdot.matmul(&linalg::pseudo_inverse_default(&stacked)?);
    let n = x.rows();
    let a = Matrix::from_fn(n, n, |i, j| ab[(i, j)]);
    let b = Matrix::from_fn(n, u.rows(), |i, j| ab[(i, n + j)]);
    Ok(LinearModel::unconstrained(a, Some(b))?)
}

/// Derivative-form objective `‖Ẋ − (J̄−J̄ᵀ−R̄R̄ᵀ)Q̄Q̄ᵀX‖_F²` minimized with the
/// same optimizer as [`train_slsi`].
pub fn fit_derivative_stable(
    x: &Matrix,
    xdot: &Matrix,
    cfg: &TrainConfig,
) -> Result<(StableParams, LinearModel, LossReport), InferenceError> {
    fit_derivative_stable_controlled(x, xdot, None, cfg)
}

/// As [`fit_derivative_stable`] with an optional input snapshot matrix `U`
/// (residual `Ẋ − AX − BU`).
pub fn fit_derivative_stable_controlled(
    x: &Matrix,
    xdot: &Matrix,
    u: Option<&Matrix>,
    cfg: &TrainConfig,
) -> Result<(StableParams, LinearModel, LossReport), InferenceError> {
    cfg.validate()?;
    x.check_same_shape(xdot, "derivative stable fit")?;
    if let Some(u) = u {
        if u.cols() != x.cols() {
            return Err(InferenceError::DimensionMismatch {
                expected: x.cols(),
                got: u.cols(),
            });
        }
    }
    let init = StableParams::init(x.rows(), u.map(|u| u.rows()), cfg.seed, cfg.init_std);
    let (best, report) = optimize(
        params_to_vec(&init),
        cfg,
        |v| {
            let p = vec_to_params(v);
            let g = derivative_loss_and_grad(&p.drift(), p.bbar.as_ref(), x, xdot, u);
            Ok((g.loss, grad_to_vec(stable_chain_rule(&p, &g.a, g.b))))
        },
        |_, _, _| {},
    )?;
    let params = vec_to_params(&best);
    let model = assemble_checked(&params)?;
    Ok((params, model, report))
}
