//! Unrolled RK4 loss and its reverse-mode gradient.
//!
//! For every trajectory and every window start `i`, the observed state
//! `x_i` is propagated `K` steps with the RK4 map and compared with the
//! observed `x_{i+1}, ..., x_{i+K}`:
//!
//! ```text
//! L = Σ_traj Σ_i Σ_{k=1..K} ‖x_{i+k} − Φ^k(x_i)‖²
//! ```
//!
//! All windows of a trajectory are propagated together as the columns of a
//! matrix, so each RK4 stage is a single matrix product. The backward pass
//! replays the stages in reverse, accumulating `∂L/∂A` and `∂L/∂B`.

use crate::linalg::Matrix;
use crate::snapshots::{SnapshotSet, Trajectory};

use super::InferenceError;

/// Loss value with gradients with respect to the drift and input matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradient {
    pub loss: f64,
    pub a: Matrix,
    pub b: Option<Matrix>,
}

/// Stage arguments of one batched RK4 step, kept for the reverse pass.
struct StepTape {
    stages: [Matrix; 4],
}

/// Inputs of one batched step: `B·u` at the three stage times and the raw
/// input columns needed for `∂L/∂B`.
struct StepForcing {
    bu: [Matrix; 3],
    u: [Matrix; 3],
}

fn rk4_forward(a: &Matrix, forcing: Option<&StepForcing>, z: &Matrix, dt: f64) -> (Matrix, StepTape) {
    let eval = |p: &Matrix, slot: usize| {
        let mut h = a.matmul(p);
        if let Some(f) = forcing {
            h += &f.bu[slot];
        }
        h
    };
    let p1 = z.clone();
    let h1 = eval(&p1, 0);
    let mut p2 = z.clone();
    p2.axpy(0.5 * dt, &h1);
    let h2 = eval(&p2, 1);
    let mut p3 = z.clone();
    p3.axpy(0.5 * dt, &h2);
    let h3 = eval(&p3, 1);
    let mut p4 = z.clone();
    p4.axpy(dt, &h3);
    let h4 = eval(&p4, 2);

    let mut out = z.clone();
    out.axpy(dt / 6.0, &h1);
    out.axpy(dt / 3.0, &h2);
    out.axpy(dt / 3.0, &h3);
    out.axpy(dt / 6.0, &h4);
    (
        out,
        StepTape {
            stages: [p1, p2, p3, p4],
        },
    )
}

/// Reverse pass of one RK4 step. `y` is `∂L/∂out`. Accumulates into
/// `ga`/`gb` and returns `∂L/∂z` when requested.
#[allow(clippy::too_many_arguments)]
fn rk4_backward(
    a: &Matrix,
    forcing: Option<&StepForcing>,
    tape: &StepTape,
    y: &Matrix,
    dt: f64,
    ga: &mut Matrix,
    gb: Option<&mut Matrix>,
    need_gz: bool,
) -> Option<Matrix> {
    let [p1, p2, p3, p4] = &tape.stages;
    let mut gz = if need_gz { Some(y.clone()) } else { None };

    // h4 = A p4 + B u_next, p4 = z + dt h3
    let gh4 = y.scale(dt / 6.0);
    let gp4 = a.t_matmul(&gh4);
    *ga += &gh4.matmul_t(p4);
    let mut gh3 = y.scale(dt / 3.0);
    gh3.axpy(dt, &gp4);
    if let Some(g) = gz.as_mut() {
        *g += &gp4;
    }

    // h3 = A p3 + B u_mid, p3 = z + dt/2 h2
    let gp3 = a.t_matmul(&gh3);
    *ga += &gh3.matmul_t(p3);
    let mut gh2 = y.scale(dt / 3.0);
    gh2.axpy(0.5 * dt, &gp3);
    if let Some(g) = gz.as_mut() {
        *g += &gp3;
    }

    // h2 = A p2 + B u_mid, p2 = z + dt/2 h1
    let gp2 = a.t_matmul(&gh2);
    *ga += &gh2.matmul_t(p2);
    let mut gh1 = y.scale(dt / 6.0);
    gh1.axpy(0.5 * dt, &gp2);
    if let Some(g) = gz.as_mut() {
        *g += &gp2;
    }

    // h1 = A p1 + B u_now, p1 = z
    *ga += &gh1.matmul_t(p1);
    if let Some(g) = gz.as_mut() {
        *g += &a.t_matmul(&gh1);
    }

    if let (Some(gb), Some(f)) = (gb, forcing) {
        *gb += &gh1.matmul_t(&f.u[0]);
        let mid = &gh2 + &gh3;
        *gb += &mid.matmul_t(&f.u[1]);
        *gb += &gh4.matmul_t(&f.u[2]);
    }
    gz
}

pub(crate) fn check_inputs(data: &SnapshotSet, a: &Matrix, b: Option<&Matrix>) -> Result<(), InferenceError> {
    data.validate()?;
    if data.state_dim() != a.rows() {
        return Err(InferenceError::DimensionMismatch {
            expected: a.rows(),
            got: data.state_dim(),
        });
    }
    match (data.has_inputs(), b) {
        (true, None) => Err(InferenceError::MissingInputMatrix),
        (true, Some(b)) if b.cols() != data.input_dim() => Err(InferenceError::DimensionMismatch {
            expected: b.cols(),
            got: data.input_dim(),
        }),
        _ => Ok(()),
    }
}

/// Unrolled loss and its gradient with respect to `(A, B)`.
///
/// When the data carry no inputs, `b` is ignored and no `B` gradient is
/// produced. `unroll` must be at least 1.
pub fn loss_and_grad_model(
    a: &Matrix,
    b: Option<&Matrix>,
    data: &SnapshotSet,
    unroll: usize,
    need_grad: bool,
) -> Result<ModelGradient, InferenceError> {
    if unroll == 0 {
        return Err(InferenceError::Config("unroll depth must be at least 1".into()));
    }
    check_inputs(data, a, b)?;
    let b = if data.has_inputs() { b } else { None };
    let mut out = ModelGradient {
        loss: 0.0,
        a: Matrix::zeros(a.rows(), a.cols()),
        b: b.map(|b| Matrix::zeros(b.rows(), b.cols())),
    };
    for traj in &data.trajectories {
        trajectory_pass(a, b, traj, unroll, need_grad, &mut out);
    }
    Ok(out)
}

fn trajectory_pass(
    a: &Matrix,
    b: Option<&Matrix>,
    traj: &Trajectory,
    unroll: usize,
    need_grad: bool,
    out: &mut ModelGradient,
) {
    let nodes = traj.samples();
    if nodes <= unroll {
        return;
    }
    let windows = nodes - unroll;
    let dt = traj.grid.dt;
    let x = &traj.states;

    let forcing: Vec<Option<StepForcing>> = (0..unroll)
        .map(|k| {
            let (b, sig) = (b?, traj.inputs.as_ref()?);
            let mids = sig.midpoints();
            let u = [
                sig.samples.columns(k, k + windows),
                mids.columns(k, k + windows),
                sig.samples.columns(k + 1, k + 1 + windows),
            ];
            let bu = [b.matmul(&u[0]), b.matmul(&u[1]), b.matmul(&u[2])];
            Some(StepForcing { bu, u })
        })
        .collect();

    let mut z = x.columns(0, windows);
    let mut tapes = Vec::with_capacity(unroll);
    let mut residuals = Vec::with_capacity(unroll);
    for (k, f) in forcing.iter().enumerate() {
        let (next, tape) = rk4_forward(a, f.as_ref(), &z, dt);
        let target = x.columns(k + 1, k + 1 + windows);
        let e = &target - &next;
        out.loss += e.as_slice().iter().map(|v| v * v).sum::<f64>();
        residuals.push(e);
        tapes.push(tape);
        z = next;
    }
    if !need_grad {
        return;
    }

    // ∂L/∂z_K = -2 e_K; earlier depths add their own residual terms.
    let mut g = Matrix::zeros(a.rows(), windows);
    for k in (0..unroll).rev() {
        g.axpy(-2.0, &residuals[k]);
        let gz = rk4_backward(
            a,
            forcing[k].as_ref(),
            &tapes[k],
            &g,
            dt,
            &mut out.a,
            out.b.as_mut(),
            k > 0,
        );
        if let Some(gz) = gz {
            g = gz;
        }
    }
}

/// Derivative-form least-squares objective `Σ ‖Ẋ − AX − BU‖_F²` and its
/// gradient.
pub fn derivative_loss_and_grad(
    a: &Matrix,
    b: Option<&Matrix>,
    x: &Matrix,
    xdot: &Matrix,
    u: Option<&Matrix>,
) -> ModelGradient {
    let mut e = xdot - &a.matmul(x);
    if let (Some(b), Some(u)) = (b, u) {
        e -= &b.matmul(u);
    }
    let loss = e.as_slice().iter().map(|v| v * v).sum();
    let ga = e.matmul_t(x).scale(-2.0);
    let gb = match (b, u) {
        (Some(_), Some(u)) => Some(e.matmul_t(u).scale(-2.0)),
        _ => None,
    };
    ModelGradient { loss, a: ga, b: gb }
}
