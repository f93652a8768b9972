use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use stable_lsi::compression::{cumulative_energy, fit_pod_matrix, PodBasis, RankCriterion};
use stable_lsi::datagen::{
    add_noise, burgers_default_frequencies, gen_burgers, gen_stable_params, gen_transport_flow, split_by_frequency,
    Advection, BurgersSpec, TransportFlowSpec, BURGERS_TEST_FREQUENCIES,
};
use stable_lsi::inference::{
    fit_derivative_ls, fit_derivative_ls_controlled, fit_derivative_stable, fit_derivative_stable_controlled,
    train_lsi, train_slsi, LossReport, TrainConfig,
};
use stable_lsi::integrator::{simulate as run_model, InputSignal, IntegratorError, MidpointRule, TimeGrid};
use stable_lsi::io::{self, format_f64, StoredModel};
use stable_lsi::linalg::Matrix;
use stable_lsi::metrics::{error_field, per_step_errors, relative_l2_error};
use stable_lsi::random::{normal_matrix, normal_vec, seeded_rng};
use stable_lsi::snapshots::{SnapshotSet, Trajectory};
use stable_lsi::stableparam::{LinearModel, STABILITY_TOL};

use crate::config::Section;
use crate::error::CliError;
use crate::{
    BurgersArgs, CompressArgs, EvaluateArgs, LtiArgs, NoiseArgs, SimulateArgs, SpectrumArgs, TrainArgs,
    TransportArgs,
};

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    io::write_file(path, text.as_bytes()).map_err(CliError::from)
}

fn summarize(label: &str, data: &SnapshotSet) {
    let t = &data.trajectories[0];
    let samples = if data.trajectories.iter().all(|x| x.samples() == t.samples()) {
        t.samples().to_string()
    } else {
        "mixed".into()
    };
    println!(
        "{label}: n={}, trajectories={}, N={samples}, dt={}",
        data.state_dim(),
        data.len(),
        format_f64(t.grid.dt)
    );
}

fn apply_noise(data: SnapshotSet, args: &NoiseArgs, sec: &Section) -> Result<SnapshotSet, CliError> {
    let level = sec.pick(args.noise, "noise", 0.0)?;
    if !(level >= 0.0 && level.is_finite()) {
        return Err(CliError::Usage(format!("noise must be non-negative, got {level}")));
    }
    let seed = sec.pick(args.noise_seed, "noise-seed", 0)?;
    Ok(add_noise(&data, level, seed))
}

pub fn generate_transport(args: &TransportArgs, sec: &Section) -> Result<(), CliError> {
    let d = TransportFlowSpec::default();
    let spec = TransportFlowSpec {
        grid_points_per_axis: sec.pick(args.grid, "grid", d.grid_points_per_axis)?,
        times: sec.pick(args.times, "times", d.times)?,
        t_end: sec.pick(args.t_end, "t-end", d.t_end)?,
        half_width: sec.pick(args.half_width, "half-width", d.half_width)?,
    };
    let data = apply_noise(gen_transport_flow(&spec)?, &args.noise, sec)?;
    io::write_snapshots(&data, &args.out)?;
    summarize("transport flow", &data);
    Ok(())
}

pub fn generate_burgers(args: &BurgersArgs, sec: &Section) -> Result<(), CliError> {
    let d = BurgersSpec::default();
    let advection = match sec.pick_opt(args.advection.clone(), "advection")? {
        None => d.advection,
        Some(s) => Advection::parse(&s).ok_or_else(|| CliError::Usage(format!("unknown advection scheme `{s}`")))?,
    };
    let frequencies = if !args.f.is_empty() {
        args.f.clone()
    } else {
        sec.list("f")?.unwrap_or_else(burgers_default_frequencies)
    };
    let spec = BurgersSpec {
        grid_points: sec.pick(args.grid, "grid", d.grid_points)?,
        viscosity: sec.pick(args.viscosity, "viscosity", d.viscosity)?,
        horizon: sec.pick(args.horizon, "horizon", d.horizon)?,
        samples: sec.pick(args.samples, "samples", d.samples)?,
        frequencies,
        advection,
        max_substeps: sec.pick(args.max_substeps, "max-substeps", d.max_substeps)?,
    };
    let data = apply_noise(gen_burgers(&spec)?, &args.noise, sec)?;
    match &args.test_out {
        None => {
            io::write_snapshots(&data, &args.out)?;
            summarize("burgers", &data);
        }
        Some(test_path) => {
            let (train, test) = split_by_frequency(&data, &spec.frequencies, &BURGERS_TEST_FREQUENCIES)?;
            if train.is_empty() || test.is_empty() {
                return Err(CliError::Usage(
                    "--test-out needs frequencies both inside and outside 1.75, 2.75, 3.75".into(),
                ));
            }
            io::write_snapshots(&train, &args.out)?;
            io::write_snapshots(&test, test_path)?;
            summarize("burgers train", &train);
            summarize("burgers test", &test);
        }
    }
    Ok(())
}

pub fn generate_lti(args: &LtiArgs, sec: &Section) -> Result<(), CliError> {
    let n = sec.pick(args.n, "n", 2)?;
    let seed = sec.pick(args.seed, "seed", 0)?;
    let margin = sec.pick(args.margin, "margin", 0.1)?;
    let count = sec.pick(args.trajectories, "trajectories", 3)?;
    let dt = sec.pick(args.dt, "dt", 0.01)?;
    let steps = sec.pick(args.steps, "steps", 500)?;
    let inputs = sec.pick(args.inputs, "inputs", 0)?;
    if count == 0 || steps == 0 {
        return Err(CliError::Usage("trajectories and steps must be positive".into()));
    }
    let mut params = gen_stable_params(n, seed, margin)?;
    let mut rng = seeded_rng(seed.wrapping_add(1));
    if inputs > 0 {
        params.bbar = Some(normal_matrix(&mut rng, n, inputs, 1.0));
    }
    let model = params.assemble()?;
    let grid = TimeGrid::new(0.0, dt, steps)?;
    let trajectories = (0..count)
        .map(|k| {
            let x0 = normal_vec(&mut rng, n, 1.0);
            let signal = (inputs > 0).then(|| {
                let s = Matrix::from_fn(inputs, grid.nodes(), |i, j| {
                    (0.7 * (i + 1) as f64 * (k + 1) as f64 * grid.time(j) + k as f64).sin()
                });
                InputSignal::new(s, MidpointRule::LinearInterpolation)
            });
            let states = run_model(&model, &x0, &grid, signal.as_ref())?;
            let t = Trajectory::new(grid, states);
            Ok(match signal {
                Some(u) => t.with_inputs(u),
                None => t,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let data = SnapshotSet::new(trajectories).map_err(|e| CliError::Data(e.to_string()))?;
    let data = apply_noise(data, &args.noise, sec)?;
    io::write_snapshots(&data, &args.out)?;
    if let Some(p) = &args.model_out {
        io::write_model(&StoredModel::stable(params)?, p)?;
    }
    summarize("lti", &data);
    Ok(())
}

fn energy_table(basis: &PodBasis) -> String {
    let energy = cumulative_energy(&basis.sigma_all);
    let shown = basis.sigma_all.len().min(basis.r + 5).max(basis.r);
    let mut s = String::from("    i  sigma_i                cumulative_energy      tail_bound\n");
    let mut tail: f64 = basis.sigma_all.iter().sum();
    for (i, (sigma, e)) in basis.sigma_all.iter().zip(&energy).take(shown).enumerate() {
        tail -= sigma;
        let mark = if i + 1 == basis.r { " <- r" } else { "" };
        let _ = writeln!(
            s,
            "{:>5}  {:<22} {:<22} {:.6e}{mark}",
            i + 1,
            format!("{sigma:.15e}"),
            format!("{e:.15}"),
            tail.max(0.0)
        );
    }
    s
}

pub fn compress(args: &CompressArgs, sec: &Section) -> Result<(), CliError> {
    let data = io::read_snapshots(&args.input)?;
    let criterion = match (args.rank, args.energy) {
        (Some(r), _) => RankCriterion::Fixed(r),
        (None, Some(e)) => RankCriterion::Energy(e),
        (None, None) => match (sec.get::<usize>("rank")?, sec.get::<f64>("energy")?) {
            (Some(_), Some(_)) => return Err(CliError::Usage("config sets both rank and energy".into())),
            (Some(r), None) => RankCriterion::Fixed(r),
            (None, Some(e)) => RankCriterion::Energy(e),
            (None, None) => RankCriterion::Energy(0.999),
        },
    };
    let center = args.center || sec.get::<bool>("center")?.unwrap_or(false);
    let basis = fit_pod_matrix(&data.stacked_states(), criterion, center)?;
    let reduced = basis.project_set(&data)?;
    io::write_basis(&basis, &args.basis)?;
    io::write_snapshots(&reduced, &args.out)?;
    print!("{}", energy_table(&basis));
    println!(
        "selected r={} of {} (energy {:.12}, tail bound {:.6e})",
        basis.r,
        basis.sigma_all.len(),
        basis.energy_captured,
        basis.tail_bound
    );
    Ok(())
}

fn train_config(args: &TrainArgs, sec: &Section) -> Result<TrainConfig, CliError> {
    let d = TrainConfig::default();
    Ok(TrainConfig {
        updates: sec.pick(args.updates, "updates", d.updates)?,
        lr_min: sec.pick(args.lr_min, "lr-min", d.lr_min)?,
        lr_max: sec.pick(args.lr_max, "lr-max", d.lr_max)?,
        cycle_length: sec.pick_opt(args.cycle, "cycle")?,
        adam_beta1: sec.pick(args.beta1, "beta1", d.adam_beta1)?,
        adam_beta2: sec.pick(args.beta2, "beta2", d.adam_beta2)?,
        adam_eps: sec.pick(args.adam_eps, "adam-eps", d.adam_eps)?,
        init_std: sec.pick(args.init_std, "init-std", d.init_std)?,
        seed: sec.pick(args.seed, "seed", d.seed)?,
        unroll_steps: sec.pick(args.unroll, "unroll", d.unroll_steps)?,
        observe_every: d.observe_every,
    })
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn derivative_data(data: &SnapshotSet, method: &str) -> Result<(Matrix, Matrix, Option<Matrix>), CliError> {
    let xdot = data
        .stacked_derivatives()
        .ok_or_else(|| CliError::Data(format!("method {method} needs derivative snapshots in the input file")))?;
    Ok((data.stacked_states(), xdot, data.stacked_inputs()))
}

pub fn train(args: &TrainArgs, sec: &Section) -> Result<(), CliError> {
    let method = sec.pick(args.method.clone(), "method", "slsi".to_string())?;
    let cfg = train_config(args, sec)?;
    cfg.validate()?;
    let data = io::read_snapshots(&args.input)?;
    let n = data.state_dim();
    let (stored, report): (StoredModel, Option<LossReport>) = match method.as_str() {
        "slsi" => {
            let (p, _, r) = train_slsi(&data, n, &cfg)?;
            (StoredModel::stable(p)?, Some(r))
        }
        "lsi" => {
            let (m, r) = train_lsi(&data, n, &cfg)?;
            (StoredModel::unconstrained(m), Some(r))
        }
        "deriv-ls" => {
            let (x, xdot, u) = derivative_data(&data, &method)?;
            let m = match u {
                Some(u) => fit_derivative_ls_controlled(&x, &u, &xdot)?,
                None => fit_derivative_ls(&x, &xdot)?,
            };
            (StoredModel::unconstrained(m), None)
        }
        "deriv-stable" => {
            let (x, xdot, u) = derivative_data(&data, &method)?;
            let (p, _, r) = match u {
                Some(u) => fit_derivative_stable_controlled(&x, &xdot, Some(&u), &cfg)?,
                None => fit_derivative_stable(&x, &xdot, &cfg)?,
            };
            (StoredModel::stable(p)?, Some(r))
        }
        other => {
            return Err(CliError::Usage(format!(
                "unknown method `{other}` (expected slsi, lsi, deriv-ls or deriv-stable)"
            )))
        }
    };
    let spectrum = stored.model.spectrum()?;
    io::write_model(&stored, &args.out)?;
    let eigen_path = args.eigen_csv.clone().unwrap_or_else(|| sibling(&args.out, ".eigs.csv"));
    write_text(&eigen_path, &io::eigen_report_csv(&spectrum))?;
    if let Some(r) = &report {
        let loss_path = args.loss_csv.clone().unwrap_or_else(|| sibling(&args.out, ".loss.csv"));
        write_text(&loss_path, &io::loss_history_csv(r))?;
        println!(
            "{method}: {} updates, first loss {:.6e}, best loss {:.6e} at update {}, {:.1}s",
            r.losses.len(),
            r.losses.first().copied().unwrap_or(f64::NAN),
            r.best_loss,
            r.best_update,
            r.wall_time_secs
        );
    }
    let max_re = spectrum.max_real();
    let verdict = if max_re <= STABILITY_TOL { "stable" } else { "UNSTABLE" };
    println!("{method}: n={n}, max Re(lambda) = {:.6e} ({verdict})", max_re);
    Ok(())
}

fn load_basis(path: &Option<PathBuf>, model: &LinearModel) -> Result<Option<PodBasis>, CliError> {
    let Some(p) = path else { return Ok(None) };
    let basis = io::read_basis(p)?;
    if basis.r != model.state_dim() {
        return Err(CliError::Data(format!(
            "basis rank {} differs from model dimension {}",
            basis.r,
            model.state_dim()
        )));
    }
    Ok(Some(basis))
}

/// Brings a state into model coordinates, projecting full-space states.
fn to_model_space(x: Vec<f64>, model: &LinearModel, basis: Option<&PodBasis>) -> Result<Vec<f64>, CliError> {
    match basis {
        Some(b) if x.len() == b.full_dim() => Ok(b.project_vec(&x)?),
        _ if x.len() == model.state_dim() => Ok(x),
        _ => Err(CliError::Data(format!(
            "initial state has {} entries, model dimension is {}",
            x.len(),
            model.state_dim()
        ))),
    }
}

fn lift_states(states: Matrix, basis: Option<&PodBasis>) -> Result<Matrix, CliError> {
    match basis {
        Some(b) => Ok(b.lift(&states)?),
        None => Ok(states),
    }
}

pub fn simulate(args: &SimulateArgs, sec: &Section) -> Result<(), CliError> {
    let model = io::read_model(&args.model)?.model;
    let basis = load_basis(&args.basis, &model)?;
    let source = match &args.x0_from {
        Some(p) => {
            let data = io::read_snapshots(p)?;
            let k = sec.pick(args.trajectory, "trajectory", 0)?;
            let t = data
                .trajectories
                .get(k)
                .cloned()
                .ok_or_else(|| CliError::Data(format!("{} has no trajectory {k}", p.display())))?;
            Some(t)
        }
        None => None,
    };
    let x0 = match &source {
        Some(t) => t.initial_state(),
        None if !args.x0.is_empty() => args.x0.clone(),
        None => return Err(CliError::Usage("give an initial state with --x0 or --x0-from".into())),
    };
    let x0 = to_model_space(x0, &model, basis.as_ref())?;
    let base = source.as_ref().map(|t| t.grid);
    let grid = TimeGrid::new(
        sec.pick(args.t0, "t0", base.map_or(0.0, |g| g.t0))?,
        sec.pick(args.dt, "dt", base.map_or(0.01, |g| g.dt))?,
        sec.pick(args.steps, "steps", base.map_or(500, |g| g.steps))?,
    )?;
    let inputs = source.and_then(|t| t.inputs);
    if model.b.is_some() && inputs.is_none() {
        return Err(CliError::Data("model has inputs; supply them through --x0-from".into()));
    }
    let inputs = if model.b.is_some() { inputs } else { None };
    let write = |states: Matrix, g: TimeGrid| -> Result<(), CliError> {
        let mut t = Trajectory::new(g, lift_states(states, basis.as_ref())?);
        if let Some(u) = &inputs {
            if u.nodes() == g.nodes() {
                t = t.with_inputs(u.clone());
            }
        }
        let set = SnapshotSet::single(t).map_err(|e| CliError::Data(e.to_string()))?;
        io::write_snapshots(&set, &args.out)?;
        Ok(())
    };
    match run_model(&model, &x0, &grid, inputs.as_ref()) {
        Ok(states) => {
            let shape = lift_states(states.clone(), basis.as_ref())?.shape();
            write(states, grid)?;
            println!("simulated {} steps, trajectory shape ({}, {})", grid.steps, shape.0, shape.1);
            Ok(())
        }
        Err(IntegratorError::Diverged { step, partial }) => {
            if partial.cols() >= 2 {
                write(partial, TimeGrid::new(grid.t0, grid.dt, step - 1)?)?;
                eprintln!("warning: simulation diverged at step {step}; wrote the finite part");
            }
            Err(CliError::Numerical(format!("simulation diverged at step {step}")))
        }
        Err(e) => Err(e.into()),
    }
}

pub fn evaluate(args: &EvaluateArgs, sec: &Section) -> Result<(), CliError> {
    let model = io::read_model(&args.model)?.model;
    let basis = load_basis(&args.basis, &model)?;
    let test = io::read_snapshots(&args.test)?;
    let expected_dim = basis.as_ref().map_or(model.state_dim(), PodBasis::full_dim);
    if test.state_dim() != expected_dim {
        return Err(CliError::Data(format!(
            "test data has dimension {}, predictions have dimension {expected_dim}",
            test.state_dim()
        )));
    }
    if model.input_dim() != test.input_dim() {
        return Err(CliError::Data(format!(
            "model expects {} inputs, test data has {}",
            model.input_dim(),
            test.input_dim()
        )));
    }
    let field_k = sec.pick(args.trajectory, "trajectory", 0)?;
    if args.error_field.is_some() && field_k >= test.len() {
        return Err(CliError::Usage(format!("test data has no trajectory {field_k}")));
    }
    let mut metrics = String::from("trajectory,samples,relative_l2_error,max_step_error,final_step_error\n");
    let mut series = String::from("trajectory,step,time,error,relative_error\n");
    for (k, t) in test.trajectories.iter().enumerate() {
        let x0 = to_model_space(t.initial_state(), &model, basis.as_ref())?;
        let pred = run_model(&model, &x0, &t.grid, t.inputs.as_ref())?;
        let pred = lift_states(pred, basis.as_ref())?;
        let rel = relative_l2_error(&pred, &t.states)?;
        let steps = per_step_errors(&pred, &t.states)?;
        let max_step = steps.iter().copied().fold(0.0, f64::max);
        let _ = writeln!(
            metrics,
            "{k},{},{},{},{}",
            t.samples(),
            format_f64(rel),
            format_f64(max_step),
            format_f64(*steps.last().unwrap_or(&0.0))
        );
        for (j, e) in steps.iter().enumerate() {
            let norm = stable_lsi::linalg::norm(&t.states.column(j));
            let r = if norm > 0.0 { e / norm } else { *e };
            let _ = writeln!(
                series,
                "{k},{j},{},{},{}",
                format_f64(t.grid.time(j)),
                format_f64(*e),
                format_f64(r)
            );
        }
        if k == field_k {
            if let Some(path) = &args.error_field {
                let f = error_field(&pred, &t.states)?;
                let mut s = String::from("step,time");
                for i in 0..f.rows() {
                    let _ = write!(s, ",e{i}");
                }
                s.push('\n');
                for j in 0..f.cols() {
                    let _ = write!(s, "{j},{}", format_f64(t.grid.time(j)));
                    for i in 0..f.rows() {
                        let _ = write!(s, ",{}", format_f64(f[(i, j)]));
                    }
                    s.push('\n');
                }
                write_text(path, &s)?;
            }
        }
        println!("trajectory {k}: relative L2 error {rel:.6e}");
    }
    write_text(&args.out, &metrics)?;
    if let Some(p) = &args.series {
        write_text(p, &series)?;
    }
    Ok(())
}

pub fn spectrum(args: &SpectrumArgs, sec: &Section) -> Result<(), CliError> {
    if args.models.is_empty() {
        return Err(CliError::Usage("at least one --model is required".into()));
    }
    let zoom = sec.pick(args.zoom, "zoom", 1.0)?;
    let mut s = String::from("model,re,im,zoom\n");
    for path in &args.models {
        let model = io::read_model(path)?.model;
        let name = path
            .file_stem()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        let spec = model.spectrum()?;
        for l in spec.sorted() {
            let _ = writeln!(
                s,
                "{name},{},{},{}",
                format_f64(l.re),
                format_f64(l.im),
                u8::from(l.re.abs() <= zoom)
            );
        }
        println!("{name}: max Re(lambda) = {:.6e}", spec.max_real());
    }
    write_text(&args.out, &s)
}
