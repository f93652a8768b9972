//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Mutex;
use std::time::Instant;

use stable_lsi::compression::{fit_pod, PodBasis, RankCriterion};
use stable_lsi::datagen::{
    add_noise, gen_burgers, gen_stable_params, gen_transport_flow, split_by_frequency, BurgersSpec,
    TransportFlowSpec, BURGERS_TEST_FREQUENCIES,
};
use stable_lsi::inference::{loss_and_grad_unrolled, loss_unrolled, train_lsi, train_slsi, TrainConfig};
use stable_lsi::integrator::{simulate, InputSignal, MidpointRule, TimeGrid};
use stable_lsi::io::{self, StoredModel};
use stable_lsi::linalg::{spectral_norm, svd, Matrix};
use stable_lsi::metrics::relative_l2_error;
use stable_lsi::random::{normal_matrix, normal_vec, seeded_rng};
use stable_lsi::snapshots::{SnapshotSet, Trajectory};
use stable_lsi::stableparam::{LinearModel, StableParams, STABILITY_TOL};

/// Largest real eigenvalue part of every stable-parameterized model trained
/// by the other criteria, checked again by criterion 1.
static TRAINED: Mutex<Vec<(String, f64)>> = Mutex::new(Vec::new());

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn max_re(model: &LinearModel) -> Result<f64, String> {
    model.spectrum().map(|s| s.max_real()).map_err(|e| e.to_string())
}

fn record_stable(label: &str, model: &LinearModel) -> Result<f64, String> {
    let re = max_re(model)?;
    TRAINED.lock().unwrap().push((label.to_string(), re));
    ensure(re <= STABILITY_TOL, || format!("{label}: max Re = {re:e}"))?;
    Ok(re)
}

fn cfg(updates: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        updates,
        seed,
        ..TrainConfig::default()
    }
}

fn simulate_from(model: &LinearModel, x0: &[f64], grid: &TimeGrid, u: Option<&InputSignal>) -> Result<Matrix, String> {
    simulate(model, x0, grid, u).map_err(|e| e.to_string())
}

// ------------------------------------------------------------------ 1

fn stability_by_construction() -> Outcome {
    let mut worst = f64::NEG_INFINITY;
    let mut count = 0;
    for (k, n) in [2, 5, 10, 31].into_iter().enumerate() {
        for i in 0..25 {
            let seed = 1000 * k as u64 + i;
            let p = StableParams::init(n, None, seed, 1.0);
            let model = p.assemble().map_err(|e| e.to_string())?;
            let re = max_re(&model)?;
            ensure(re <= STABILITY_TOL, || format!("n={n} seed={seed}: max Re = {re:e}"))?;
            worst = worst.max(re);
            count += 1;
        }
    }
    let trained = TRAINED.lock().unwrap().clone();
    for (label, re) in &trained {
        ensure(*re <= STABILITY_TOL, || format!("trained model {label}: max Re = {re:e}"))?;
        worst = worst.max(*re);
    }
    Ok(format!(
        "{count} random parameterizations and {} trained models, worst max Re = {worst:.3e}",
        trained.len()
    ))
}

// ------------------------------------------------------------------ 2

fn lyapunov_property() -> Outcome {
    let mut worst = f64::NEG_INFINITY;
    for seed in 0..100u64 {
        let n = 2 + (seed % 7) as usize;
        let p = StableParams::init(n, None, seed, 0.1 + 0.02 * seed as f64);
        let mut rng = seeded_rng(10_000 + seed);
        let x = normal_vec(&mut rng, n, 1.0);
        let (_, _, q) = p.decompose_parts();
        let scale = spectral_norm(&q).unwrap() * spectral_norm(&p.drift()).unwrap() * x.iter().map(|v| v * v).sum::<f64>();
        let rate = p.lyapunov_rate(&x).map_err(|e| e.to_string())?;
        ensure(rate <= 1e-10 * scale, || format!("seed {seed}: rate {rate:e} (scale {scale:e})"))?;
        worst = worst.max(rate / scale.max(f64::MIN_POSITIVE));

        let lossless = StableParams {
            rbar: Matrix::zeros(n, n),
            ..p
        };
        let rate0 = lossless.lyapunov_rate(&x).map_err(|e| e.to_string())?;
        let scale0 = spectral_norm(&q).unwrap() * spectral_norm(&lossless.drift()).unwrap() * x.iter().map(|v| v * v).sum::<f64>();
        ensure(rate0.abs() <= 1e-10 * scale0, || format!("seed {seed}: R=0 rate {rate0:e}"))?;
    }
    Ok(format!("100 pairs, worst scaled rate = {worst:.3e}; R̄ = 0 rates vanish"))
}

// ------------------------------------------------------------------ 3

fn params_vec(p: &StableParams) -> Vec<Matrix> {
    let mut v = vec![p.jbar.clone(), p.rbar.clone(), p.qbar.clone()];
    v.extend(p.bbar.clone());
    v
}

fn params_from(v: &[Matrix]) -> StableParams {
    StableParams {
        jbar: v[0].clone(),
        rbar: v[1].clone(),
        qbar: v[2].clone(),
        bbar: v.get(3).cloned(),
    }
}

fn random_snapshots(n: usize, m: usize, seed: u64) -> SnapshotSet {
    let mut rng = seeded_rng(seed);
    let trajectories = (0..2)
        .map(|k| {
            let grid = TimeGrid::new(0.0, 0.05 * (k + 1) as f64, 5).unwrap();
            let t = Trajectory::new(grid, normal_matrix(&mut rng, n, 6, 1.0));
            if m > 0 {
                t.with_inputs(InputSignal::new(normal_matrix(&mut rng, m, 6, 1.0), MidpointRule::LinearInterpolation))
            } else {
                t
            }
        })
        .collect();
    SnapshotSet::new(trajectories).unwrap()
}

fn gradient_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (i, n) in [2usize, 3, 5].into_iter().enumerate() {
        for (m, unroll) in [(0, 1), (2, 1), (1, 3)] {
            let seed = 50 + 10 * i as u64 + m as u64;
            let data = random_snapshots(n, m, seed);
            let p = StableParams::init(n, (m > 0).then_some(m), seed + 1, 0.5);
            let (_, g) = loss_and_grad_unrolled(&p, &data, unroll).map_err(|e| e.to_string())?;
            let mut analytic = vec![g.jbar, g.rbar, g.qbar];
            analytic.extend(g.bbar);
            let base = params_vec(&p);
            for (pi, block) in base.iter().enumerate() {
                for k in 0..block.as_slice().len() {
                    let theta = block.as_slice()[k];
                    let h = 1e-6 * theta.abs().max(1.0);
                    let eval = |delta: f64| {
                        let mut v = base.clone();
                        v[pi].as_mut_slice()[k] = theta + delta;
                        loss_unrolled(&params_from(&v), &data, unroll).unwrap()
                    };
                    let fd = (eval(h) - eval(-h)) / (2.0 * h);
                    let an = analytic[pi].as_slice()[k];
                    let denom = an.abs().max(fd.abs());
                    if denom > 1e-8 {
                        let rel = (an - fd).abs() / denom;
                        worst = worst.max(rel);
                        ensure(rel <= 1e-5, || format!("n={n} m={m} block {pi} entry {k}: {an} vs {fd}"))?;
                    }
                    checked += 1;
                }
            }
        }
    }
    Ok(format!("{checked} partial derivatives over J̄, R̄, Q̄, B̄; worst relative error {worst:.2e}"))
}

// ------------------------------------------------------------------ 4

fn rk4_order() -> Outcome {
    let rotation = LinearModel::unconstrained(Matrix::from_rows(&[&[0.0, 1.0], &[-1.0, 0.0]]), None).unwrap();
    let period = 2.0 * std::f64::consts::PI;
    let mut pts = Vec::new();
    for dt in [0.1, 0.05, 0.025, 0.0125] {
        let steps = (period / dt).round() as usize;
        let h = period / steps as f64;
        let grid = TimeGrid::new(0.0, h, steps).unwrap();
        let x = simulate_from(&rotation, &[1.0, 0.0], &grid, None)?;
        let end = x.column(steps);
        let err = ((end[0] - 1.0).powi(2) + end[1].powi(2)).sqrt();
        pts.push((h.ln(), err.ln()));
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / 4.0;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / 4.0;
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    ensure((slope - 4.0).abs() <= 0.2, || format!("slope {slope:.3}"))?;
    Ok(format!("log-log slope {slope:.3}"))
}

// ------------------------------------------------------------------ 5

fn recovery_case(n: usize, seed: u64) -> Result<f64, String> {
    let truth = gen_stable_params(n, seed, 0.2).map_err(|e| e.to_string())?.assemble().unwrap();
    let grid = TimeGrid::new(0.0, 0.01, 500).unwrap();
    let mut rng = seeded_rng(seed + 1);
    let trajectories = (0..3)
        .map(|_| {
            let x0 = normal_vec(&mut rng, n, 1.0);
            Ok(Trajectory::new(grid, simulate_from(&truth, &x0, &grid, None)?))
        })
        .collect::<Result<Vec<_>, String>>()?;
    let data = SnapshotSet::new(trajectories).unwrap();
    let (_, model, _) = train_slsi(&data, n, &cfg(5_000, seed)).map_err(|e| e.to_string())?;
    record_stable(&format!("recovery n={n}"), &model)?;
    let x0 = normal_vec(&mut rng, n, 1.0);
    let pred = simulate_from(&model, &x0, &grid, None)?;
    let exact = simulate_from(&truth, &x0, &grid, None)?;
    let err = relative_l2_error(&pred, &exact).unwrap();
    ensure(err < 1e-2, || format!("n={n}: held-out relative error {err:.3e}"))?;
    Ok(err)
}

fn system_recovery() -> Outcome {
    let e2 = recovery_case(2, 7)?;
    let e5 = recovery_case(5, 8)?;
    Ok(format!("held-out relative error 2x2 {e2:.2e}, 5x5 {e5:.2e}"))
}

// ------------------------------------------------------------------ 8 (shared)

static POD_CHECKS: Mutex<Vec<(String, f64, f64)>> = Mutex::new(Vec::new());

/// Records `‖X − lift(project(X))‖₂` against the tail bound.
fn check_pod(label: &str, basis: &PodBasis, x: &Matrix) -> Result<(), String> {
    let xr = basis.project(x).map_err(|e| e.to_string())?;
    let back = basis.lift(&xr).map_err(|e| e.to_string())?;
    let err = spectral_norm(&(x - &back)).map_err(|e| e.to_string())?;
    POD_CHECKS.lock().unwrap().push((label.to_string(), err, basis.tail_bound));
    Ok(())
}

// ------------------------------------------------------------------ 6

fn transport_flow() -> Outcome {
    let spec = TransportFlowSpec {
        grid_points_per_axis: 50,
        ..Default::default()
    };
    let data = gen_transport_flow(&spec).map_err(|e| e.to_string())?;
    let x = data.stacked_states();
    let sigma = svd(&x).map_err(|e| e.to_string())?.sigma;
    let rank = sigma.iter().filter(|&&s| s > 1e-10 * sigma[0]).count();
    ensure(rank <= 3, || format!("numerical rank {rank}"))?;

    let basis = fit_pod(&data, RankCriterion::Fixed(3)).map_err(|e| e.to_string())?;
    ensure(basis.energy_captured >= 1.0 - 1e-10, || format!("energy {}", basis.energy_captured))?;
    check_pod("transport r=3", &basis, &x)?;
    let reduced = basis.project_set(&data).map_err(|e| e.to_string())?;
    let noisy = add_noise(&reduced, 0.01, 17);

    let config = cfg(20_000, 3);
    let (_, slsi, _) = train_slsi(&noisy, 3, &config).map_err(|e| e.to_string())?;
    let s_re = record_stable("transport sLSI", &slsi)?;
    let (lsi, _) = train_lsi(&noisy, 3, &config).map_err(|e| e.to_string())?;
    let l_re = max_re(&lsi)?;
    let verdict = if l_re > STABILITY_TOL { "unstable" } else { "stable" };
    Ok(format!(
        "rank {rank}; sLSI max Re {s_re:.3e}; LSI max Re {l_re:.3e} ({verdict}, reported only)"
    ))
}

// ------------------------------------------------------------------ 7

fn burgers_errors(model: &LinearModel, basis: &PodBasis, test: &SnapshotSet) -> Result<Vec<f64>, String> {
    test.trajectories
        .iter()
        .map(|t| {
            let x0 = basis.project_vec(&t.initial_state()).map_err(|e| e.to_string())?;
            let pred = simulate_from(model, &x0, &t.grid, None)?;
            let full = basis.lift(&pred).map_err(|e| e.to_string())?;
            Ok(relative_l2_error(&full, &t.states).unwrap())
        })
        .collect()
}

fn burgers_pipeline() -> Outcome {
    let spec = BurgersSpec {
        grid_points: 200,
        samples: 100,
        ..Default::default()
    };
    let data = gen_burgers(&spec).map_err(|e| e.to_string())?;
    let (train, test) =
        split_by_frequency(&data, &spec.frequencies, &BURGERS_TEST_FREQUENCIES).map_err(|e| e.to_string())?;
    ensure(train.len() == 14 && test.len() == 3, || "bad split".into())?;
    let basis = fit_pod(&train, RankCriterion::Energy(0.999)).map_err(|e| e.to_string())?;
    ensure(basis.energy_captured >= 0.999, || format!("energy {}", basis.energy_captured))?;
    check_pod("burgers train", &basis, &train.stacked_states())?;
    let r = basis.r;
    let reduced = basis.project_set(&train).map_err(|e| e.to_string())?;

    let config = cfg(10_000, 11);
    let (_, slsi, _) = train_slsi(&reduced, r, &config).map_err(|e| e.to_string())?;
    record_stable("burgers sLSI", &slsi)?;
    let (lsi, _) = train_lsi(&reduced, r, &config).map_err(|e| e.to_string())?;
    let s_err = burgers_errors(&slsi, &basis, &test)?;
    let l_re = max_re(&lsi)?;
    let l_err = burgers_errors(&lsi, &basis, &test).unwrap_or_else(|_| vec![f64::INFINITY; 3]);
    let s_mean = s_err.iter().sum::<f64>() / 3.0;
    let l_mean = l_err.iter().sum::<f64>() / 3.0;
    ensure(s_err.iter().all(|e| e.is_finite()), || format!("sLSI errors {s_err:?}"))?;
    if l_re <= STABILITY_TOL && l_mean.is_finite() {
        ensure(s_mean <= 4.0 * l_mean, || format!("sLSI {s_mean:.3e} vs LSI {l_mean:.3e}"))?;
    }
    let fmt = |v: &[f64]| v.iter().map(|e| format!("{e:.3e}")).collect::<Vec<_>>().join("/");
    Ok(format!(
        "r={r} (energy {:.5}); test errors sLSI {} LSI {} (LSI max Re {l_re:.2e})",
        basis.energy_captured,
        fmt(&s_err),
        fmt(&l_err)
    ))
}

// ------------------------------------------------------------------ 8

fn pod_bound() -> Outcome {
    let mut rng = seeded_rng(99);
    for (i, (n, cols, rank)) in [(20, 8, 3), (6, 30, 6), (40, 40, 40), (15, 15, 2)].into_iter().enumerate() {
        let x = normal_matrix(&mut rng, n, rank, 1.0).matmul(&normal_matrix(&mut rng, rank, cols, 1.0));
        let grid = TimeGrid::new(0.0, 1.0, cols - 1).unwrap();
        let set = SnapshotSet::single(Trajectory::new(grid, x.clone())).unwrap();
        let k = n.min(cols);
        for r in [1, (k / 2).max(1), k] {
            let b = fit_pod(&set, RankCriterion::Fixed(r)).map_err(|e| e.to_string())?;
            check_pod(&format!("random {i} r={r}"), &b, &x)?;
        }
    }
    let checks = POD_CHECKS.lock().unwrap().clone();
    let mut worst: f64 = 0.0;
    for (label, err, bound) in &checks {
        // round-off allowance for the full-rank case, where the bound is 0
        let slack = 1e-12 * (1.0 + bound);
        ensure(*err <= bound + slack, || format!("{label}: error {err:e} > bound {bound:e}"))?;
        if *bound > 1e-10 {
            worst = worst.max(err / bound);
        }
    }
    Ok(format!("{} compressions, largest error/bound ratio {worst:.3}", checks.len()))
}

// ------------------------------------------------------------------ 9

fn controlled_inference() -> Outcome {
    let mut truth = gen_stable_params(3, 21, 0.2).map_err(|e| e.to_string())?;
    truth.bbar = Some(normal_matrix(&mut seeded_rng(22), 3, 2, 1.0));
    let model = truth.assemble().unwrap();
    let grid = TimeGrid::new(0.0, 0.01, 500).unwrap();
    let signal = |freqs: [f64; 2], phase: f64| {
        let s = Matrix::from_fn(2, grid.nodes(), |i, j| (freqs[i] * grid.time(j) + phase).sin());
        InputSignal::new(s, MidpointRule::LinearInterpolation)
    };
    let mut rng = seeded_rng(23);
    let trajectories = (0..3)
        .map(|k| {
            let u = signal([1.0 + k as f64, 2.5 - 0.5 * k as f64], 0.3 * k as f64);
            let x0 = normal_vec(&mut rng, 3, 1.0);
            Ok(Trajectory::new(grid, simulate_from(&model, &x0, &grid, Some(&u))?).with_inputs(u))
        })
        .collect::<Result<Vec<_>, String>>()?;
    let data = SnapshotSet::new(trajectories).unwrap();
    let (_, learned, _) = train_slsi(&data, 3, &cfg(10_000, 24)).map_err(|e| e.to_string())?;
    let re = record_stable("controlled sLSI", &learned)?;
    let fresh = signal([3.7, 0.6], 1.1);
    let x0 = normal_vec(&mut rng, 3, 1.0);
    let pred = simulate_from(&learned, &x0, &grid, Some(&fresh))?;
    let exact = simulate_from(&model, &x0, &grid, Some(&fresh))?;
    let err = relative_l2_error(&pred, &exact).unwrap();
    ensure(err < 5e-2, || format!("fresh-input relative error {err:.3e}"))?;
    Ok(format!("fresh-input relative error {err:.3e}, max Re {re:.3e}"))
}

// ------------------------------------------------------------------ 10

fn round_trip_and_determinism() -> Outcome {
    let spec = BurgersSpec {
        grid_points: 30,
        samples: 20,
        frequencies: vec![1.0, 2.5],
        ..Default::default()
    };
    let burgers = gen_burgers(&spec).map_err(|e| e.to_string())?;
    let transport = gen_transport_flow(&TransportFlowSpec {
        grid_points_per_axis: 6,
        times: 9,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    for data in [&burgers, &transport] {
        let bytes = io::snapshots_to_bytes(data).map_err(|e| e.to_string())?;
        ensure(&io::snapshots_from_bytes(&bytes).unwrap() == data, || "binary snapshot round trip".into())?;
        let text = io::snapshots_to_text(data).map_err(|e| e.to_string())?;
        ensure(&io::snapshots_from_text(&text).unwrap() == data, || "text snapshot round trip".into())?;
    }
    let basis = fit_pod(&burgers, RankCriterion::Energy(0.99)).map_err(|e| e.to_string())?;
    ensure(io::basis_from_bytes(&io::basis_to_bytes(&basis).unwrap()).unwrap() == basis, || "basis".into())?;
    ensure(io::basis_from_text(&io::basis_to_text(&basis).unwrap()).unwrap() == basis, || "basis text".into())?;

    let reduced = basis.project_set(&burgers).map_err(|e| e.to_string())?;
    let run = || -> Result<(Vec<u8>, String, String, Vec<u8>), String> {
        let c = cfg(500, 5);
        let (p, model, report) = train_slsi(&reduced, basis.r, &c).map_err(|e| e.to_string())?;
        let stored = StoredModel::stable(p).map_err(|e| e.to_string())?;
        let (lsi, _) = train_lsi(&reduced, basis.r, &c).map_err(|e| e.to_string())?;
        Ok((
            io::model_to_bytes(&stored).unwrap(),
            io::model_to_text(&stored).unwrap(),
            io::loss_history_csv(&report) + &io::eigen_report_csv(&model.spectrum().unwrap()),
            io::model_to_bytes(&StoredModel::unconstrained(lsi)).unwrap(),
        ))
    };
    let first = run()?;
    let second = run()?;
    ensure(first == second, || "two runs with equal seeds differ".into())?;
    let stored = io::model_from_bytes(&first.0).map_err(|e| e.to_string())?;
    record_stable("determinism sLSI", &stored.model)?;
    ensure(io::model_from_text(&first.1).unwrap() == stored, || "model text vs binary".into())?;
    Ok(format!(
        "snapshots, bases and models round-trip; reruns byte-identical ({} model bytes)",
        first.0.len()
    ))
}

fn main() {
    type Criterion = (usize, &'static str, fn() -> Outcome);
    // criterion 1 runs last so it also covers the models trained by the others
    let order: [Criterion; 10] = [
        (2, "Lyapunov rate is non-positive", lyapunov_property),
        (3, "gradient matches finite differences", gradient_oracle),
        (4, "RK4 is fourth order", rk4_order),
        (5, "system recovery", system_recovery),
        (6, "transport flow", transport_flow),
        (7, "Burgers pipeline", burgers_pipeline),
        (9, "controlled-system inference", controlled_inference),
        (10, "round trip and determinism", round_trip_and_determinism),
        (8, "POD error bound", pod_bound),
        (1, "stability by construction", stability_by_construction),
    ];
    let mut lines = Vec::new();
    for (id, name, f) in order {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        eprintln!("  finished criterion {id} in {secs:.1}s");
        lines.push((id, name, outcome, secs));
    }
    lines.sort_by_key(|l| l.0);
    let mut failed = 0;
    println!();
    for (id, name, outcome, secs) in &lines {
        match outcome {
            Ok(detail) => println!("criterion {id:>2} PASS  {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id:>2} FAIL  {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    println!("\n{} of {} criteria passed", lines.len() - failed, lines.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
