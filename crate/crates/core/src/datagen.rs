//! Reproducible data generators: random stable LTI systems, an analytic
//! transport flow, a finite-difference viscous Burgers solver, and additive
//! noise.

use rand_distr::{Distribution, Normal};

use crate::integrator::{IntegratorError, TimeGrid};
use crate::linalg::Matrix;
use crate::random::{normal_matrix, seeded_rng};
use crate::snapshots::{SnapshotError, SnapshotSet, Trajectory};
use crate::stableparam::{LinearModel, StableParams};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DatagenError {
    #[error("invalid generator settings: {0}")]
    InvalidSpec(String),
    #[error("Burgers solver needs more than {cap} substeps per snapshot interval")]
    SubstepCap { cap: usize },
    #[error("Burgers solution became non-finite at t = {time}")]
    NonFinite { time: f64 },
    #[error(transparent)]
    Integrator(#[from] IntegratorError),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
}

/// Lower-triangular `L` with `L Lᵀ = m` for symmetric positive definite `m`.
fn cholesky(m: &Matrix) -> Matrix {
    let n = m.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        let d = d.max(0.0).sqrt();
        l.as_mut_slice()[j * n + j] = d;
        for i in j + 1..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l.as_mut_slice()[i * n + j] = if d > 0.0 { s / d } else { 0.0 };
        }
    }
    l
}

/// Stable factors with `R ⪰ margin·I` and `Q ⪰ ½·I`, so every eigenvalue of
/// `A = (J − R) Q` has strictly negative real part.
pub fn gen_stable_params(n: usize, seed: u64, spectral_margin: f64) -> Result<StableParams, DatagenError> {
    if n == 0 {
        return Err(DatagenError::InvalidSpec("state dimension must be positive".into()));
    }
    if !(spectral_margin > 0.0 && spectral_margin.is_finite()) {
        return Err(DatagenError::InvalidSpec(format!(
            "spectral margin must be positive, got {spectral_margin}"
        )));
    }
    let mut rng = seeded_rng(seed);
    let std = 1.0 / (n as f64).sqrt();
    let jbar = normal_matrix(&mut rng, n, n, std);
    let r0 = normal_matrix(&mut rng, n, n, std);
    let q0 = normal_matrix(&mut rng, n, n, std);
    let r = &r0.matmul_t(&r0) + &Matrix::identity(n).scale(spectral_margin);
    let q = &q0.matmul_t(&q0) + &Matrix::identity(n).scale(0.5);
    Ok(StableParams {
        jbar,
        rbar: cholesky(&r),
        qbar: cholesky(&q),
        bbar: None,
    })
}

/// A seeded random asymptotically stable system, see [`gen_stable_params`].
pub fn gen_stable_lti(n: usize, seed: u64, spectral_margin: f64) -> Result<LinearModel, DatagenError> {
    let p = gen_stable_params(n, seed, spectral_margin)?;
    p.assemble()
        .map_err(|e| DatagenError::InvalidSpec(format!("assembly failed: {e}")))
}

/// Analytic two-component flow
/// `u = sin(5(t−x)) sin(5(t−y))`, `v = cos(5(t−x)) cos(5(t−y))`
/// on a uniform square grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransportFlowSpec {
    pub grid_points_per_axis: usize,
    /// Number of snapshots, including `t = 0` and `t = t_end`.
    pub times: usize,
    pub t_end: f64,
    /// The domain is `[−half_width, half_width]²`.
    pub half_width: f64,
}

impl Default for TransportFlowSpec {
    fn default() -> Self {
        Self {
            grid_points_per_axis: 200,
            times: 100,
            t_end: 5.0,
            half_width: 1.5,
        }
    }
}

fn linspace(a: f64, b: f64, count: usize) -> Vec<f64> {
    let step = (b - a) / (count - 1) as f64;
    (0..count).map(|i| if i + 1 == count { b } else { a + step * i as f64 }).collect()
}

pub fn transport_velocity(x: f64, y: f64, t: f64) -> (f64, f64) {
    let (sx, cx) = (5.0 * (t - x)).sin_cos();
    let (sy, cy) = (5.0 * (t - y)).sin_cos();
    (sx * sy, cx * cy)
}

/// One trajectory with state `[u; v]`, each component flattened with `x`
/// varying fastest, so the state dimension is `2 g²`.
pub fn gen_transport_flow(spec: &TransportFlowSpec) -> Result<SnapshotSet, DatagenError> {
    let g = spec.grid_points_per_axis;
    if g < 2 || spec.times < 2 {
        return Err(DatagenError::InvalidSpec("grid points and times must both be at least 2".into()));
    }
    if !(spec.t_end > 0.0 && spec.half_width > 0.0) {
        return Err(DatagenError::InvalidSpec("t_end and half_width must be positive".into()));
    }
    let axis = linspace(-spec.half_width, spec.half_width, g);
    let grid = TimeGrid::new(0.0, spec.t_end / (spec.times - 1) as f64, spec.times - 1)?;
    let n = 2 * g * g;
    let mut states = Matrix::zeros(n, spec.times);
    let cols = spec.times;
    let data = states.as_mut_slice();
    for k in 0..cols {
        let t = grid.time(k);
        for (j, &y) in axis.iter().enumerate() {
            for (i, &x) in axis.iter().enumerate() {
                let (u, v) = transport_velocity(x, y, t);
                let idx = j * g + i;
                data[idx * cols + k] = u;
                data[(g * g + idx) * cols + k] = v;
            }
        }
    }
    Ok(SnapshotSet::single(Trajectory::new(grid, states))?)
}

/// Spatial discretization of the nonlinear term `v v_ζ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Advection {
    /// Conservative central differences of `(v²/2)_ζ`.
    #[default]
    Central,
    /// Conservative first-order Godunov flux.
    Upwind,
}

impl Advection {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Central => "central",
            Self::Upwind => "upwind",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "central" => Some(Self::Central),
            "upwind" => Some(Self::Upwind),
            _ => None,
        }
    }
}

/// `v_t + v v_ζ = μ v_ζζ` on `ζ ∈ [0, 1]` with homogeneous Neumann
/// boundaries and `v₀(ζ) = 1 + sin((2fζ + 1)π)`, one trajectory per `f`.
#[derive(Debug, Clone, PartialEq)]
pub struct BurgersSpec {
    pub grid_points: usize,
    pub viscosity: f64,
    pub horizon: f64,
    /// Time steps between snapshots; each trajectory has `samples + 1` columns.
    pub samples: usize,
    pub frequencies: Vec<f64>,
    pub advection: Advection,
    /// Upper bound on RK4 substeps per snapshot interval.
    pub max_substeps: usize,
}

pub const BURGERS_TEST_FREQUENCIES: [f64; 3] = [1.75, 2.75, 3.75];

/// `1.0, 1.25, …, 5.0`.
pub fn burgers_default_frequencies() -> Vec<f64> {
    (0..17).map(|i| 1.0 + 0.25 * i as f64).collect()
}

impl Default for BurgersSpec {
    fn default() -> Self {
        Self {
            grid_points: 1000,
            viscosity: 0.01,
            horizon: 1.0,
            samples: 500,
            frequencies: burgers_default_frequencies(),
            advection: Advection::Central,
            max_substeps: 1_000_000,
        }
    }
}

impl BurgersSpec {
    fn validate(&self) -> Result<(), DatagenError> {
        let bad = |s: &str| Err(DatagenError::InvalidSpec(s.into()));
        if self.grid_points < 3 {
            return bad("Burgers needs at least 3 grid points");
        }
        if !(self.viscosity > 0.0 && self.viscosity.is_finite()) {
            return bad("viscosity must be positive");
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad("horizon must be positive");
        }
        if self.samples < 1 {
            return bad("at least one time step is required");
        }
        if self.frequencies.is_empty() {
            return bad("at least one frequency is required");
        }
        if self.frequencies.iter().any(|f| !f.is_finite()) {
            return bad("frequencies must be finite");
        }
        Ok(())
    }

    pub fn grid_spacing(&self) -> f64 {
        1.0 / (self.grid_points - 1) as f64
    }

    pub fn initial_condition(&self, f: f64) -> Vec<f64> {
        let h = self.grid_spacing();
        (0..self.grid_points)
            .map(|i| 1.0 + ((2.0 * f * i as f64 * h + 1.0) * std::f64::consts::PI).sin())
            .collect()
    }
}

fn godunov_flux(l: f64, r: f64) -> f64 {
    let f = |v: f64| 0.5 * v * v;
    f(l.max(0.0)).max(f(r.min(0.0)))
}

/// Semi-discrete right-hand side with mirror ghost cells `v_{−1} = v_1`,
/// `v_g = v_{g−2}`.
fn burgers_rhs(v: &[f64], mu: f64, h: f64, adv: Advection, out: &mut [f64]) {
    let g = v.len();
    let at = |i: isize| -> f64 {
        if i < 0 {
            v[1]
        } else if i as usize >= g {
            v[g - 2]
        } else {
            v[i as usize]
        }
    };
    let inv_h2 = mu / (h * h);
    for (i, o) in out.iter_mut().enumerate() {
        let i = i as isize;
        let (vl, vc, vr) = (at(i - 1), at(i), at(i + 1));
        let advective = match adv {
            Advection::Central => (vr * vr - vl * vl) / (4.0 * h),
            Advection::Upwind => (godunov_flux(vc, vr) - godunov_flux(vl, vc)) / h,
        };
        *o = inv_h2 * (vr - 2.0 * vc + vl) - advective;
    }
}

fn rk4_pde_step(v: &mut [f64], dt: f64, mu: f64, h: f64, adv: Advection, work: &mut [Vec<f64>; 5]) {
    let [k1, k2, k3, k4, tmp] = work;
    burgers_rhs(v, mu, h, adv, k1);
    for i in 0..v.len() {
        tmp[i] = v[i] + 0.5 * dt * k1[i];
    }
    burgers_rhs(tmp, mu, h, adv, k2);
    for i in 0..v.len() {
        tmp[i] = v[i] + 0.5 * dt * k2[i];
    }
    burgers_rhs(tmp, mu, h, adv, k3);
    for i in 0..v.len() {
        tmp[i] = v[i] + dt * k3[i];
    }
    burgers_rhs(tmp, mu, h, adv, k4);
    for i in 0..v.len() {
        v[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// Integrates one initial condition over the snapshot grid. Substeps are
/// sized from the RK4 diffusion limit and the advective CFL number at the
/// start of each snapshot interval.
pub fn solve_burgers(spec: &BurgersSpec, v0: &[f64]) -> Result<Matrix, DatagenError> {
    spec.validate()?;
    if v0.len() != spec.grid_points {
        return Err(DatagenError::InvalidSpec(format!(
            "initial condition has {} values for {} grid points",
            v0.len(),
            spec.grid_points
        )));
    }
    let g = spec.grid_points;
    let h = spec.grid_spacing();
    let mu = spec.viscosity;
    let interval = spec.horizon / spec.samples as f64;
    let mut out = Matrix::zeros(g, spec.samples + 1);
    out.set_column(0, v0);
    let mut v = v0.to_vec();
    let mut work: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; g]);
    for k in 1..=spec.samples {
        let vmax = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let diffusive = 0.69 * h * h / mu;
        let advective = if vmax > 0.0 { h / vmax } else { f64::INFINITY };
        let limit = 0.5 * diffusive.min(advective);
        let substeps = (interval / limit).ceil().max(1.0);
        if substeps > spec.max_substeps as f64 {
            return Err(DatagenError::SubstepCap { cap: spec.max_substeps });
        }
        let substeps = substeps as usize;
        let dt = interval / substeps as f64;
        for _ in 0..substeps {
            rk4_pde_step(&mut v, dt, mu, h, spec.advection, &mut work);
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(DatagenError::NonFinite {
                time: k as f64 * interval,
            });
        }
        out.set_column(k, &v);
    }
    Ok(out)
}

/// One trajectory per frequency, in the order of `spec.frequencies`.
pub fn gen_burgers(spec: &BurgersSpec) -> Result<SnapshotSet, DatagenError> {
    spec.validate()?;
    let grid = TimeGrid::new(0.0, spec.horizon / spec.samples as f64, spec.samples)?;
    let trajectories = spec
        .frequencies
        .iter()
        .map(|&f| Ok(Trajectory::new(grid, solve_burgers(spec, &spec.initial_condition(f))?)))
        .collect::<Result<Vec<_>, DatagenError>>()?;
    Ok(SnapshotSet::new(trajectories)?)
}

/// Splits a Burgers set into `(train, test)`, putting trajectories whose
/// frequency is in `test_frequencies` into the test set.
pub fn split_by_frequency(
    data: &SnapshotSet,
    frequencies: &[f64],
    test_frequencies: &[f64],
) -> Result<(SnapshotSet, SnapshotSet), DatagenError> {
    if frequencies.len() != data.len() {
        return Err(DatagenError::InvalidSpec(format!(
            "{} frequencies for {} trajectories",
            frequencies.len(),
            data.len()
        )));
    }
    let is_test = |f: f64| test_frequencies.iter().any(|t| (t - f).abs() < 1e-9);
    let (test, train): (Vec<usize>, Vec<usize>) = (0..data.len()).partition(|&i| is_test(frequencies[i]));
    Ok((data.select(&train)?, data.select(&test)?))
}

/// Adds i.i.d. Gaussian noise with standard deviation
/// `sigma_rel · RMS(states)` to every state entry. Inputs and derivatives are
/// left untouched.
///
/// # Panics
/// If `sigma_rel` is negative or not finite.
pub fn add_noise(data: &SnapshotSet, sigma_rel: f64, seed: u64) -> SnapshotSet {
    assert!(sigma_rel >= 0.0 && sigma_rel.is_finite(), "sigma_rel must be non-negative");
    if sigma_rel == 0.0 {
        return data.clone();
    }
    let (sum_sq, count) = data.trajectories.iter().fold((0.0, 0usize), |(s, c), t| {
        let v = t.states.as_slice();
        (s + v.iter().map(|x| x * x).sum::<f64>(), c + v.len())
    });
    let rms = (sum_sq / count.max(1) as f64).sqrt();
    let std = sigma_rel * rms;
    if std == 0.0 {
        return data.clone();
    }
    let normal = Normal::new(0.0, std).expect("valid normal");
    let mut rng = seeded_rng(seed);
    data.map_states(|x| {
        let mut y = x.clone();
        for v in y.as_mut_slice() {
            *v += normal.sample(&mut rng);
        }
        y
    })
}
