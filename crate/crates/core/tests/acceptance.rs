//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. Lines marked "diagnostic" report further
//! properties of the same runs with their real outcome but do not gate.
//!
//! Pass criterion numbers as arguments to run a subset, e.g.
//! `cargo test --test acceptance -- 5 6 9`.

use std::fs;
use std::process::ExitCode;
use std::time::Instant;

use cdii::autodiff::{grad_check, Var};
use cdii::field::{
    make_phantom, relative_l2_error_masked, GridField, Mask, PhantomKind, Rect,
};
use cdii::forward::{add_noise, current_magnitude, solve_conductivity_pde, DirichletData, NoiseSpec};
use cdii::loss::{empirical_loss, huber, huber_derivative, quadrature_loss, LossConfig, LossEvaluator, SampleBatch};
use cdii::network::bounds::probe_grid;
use cdii::network::tape::spatial_gradient;
use cdii::network::{
    check_gradient_sup_bound, check_param_lipschitz, init_params, Activation, InitScheme, MlpSpec,
};
use cdii::optim::AdamConfig;
use cdii::recon::{
    baseline_iterate, reconstruct_nn, write_run_dir, BaselineConfig, BaselineStop, DenoiseConfig, NnConfig,
    ReconHistory, ReconResult, Truth,
};
use cdii::rng::SeededRng;

const GRID: usize = 128;

struct Report {
    failed: Vec<String>,
    diagnostics_failed: Vec<String>,
}

impl Report {
    fn print(id: &str, name: &str, pass: bool, note: &str, detail: &str) {
        let tag = if pass { "PASS" } else { "FAIL" };
        println!("[{tag}] {id:>4} {name}{note}: {detail}");
    }

    fn line(&mut self, id: &str, name: &str, pass: bool, detail: String) {
        Self::print(id, name, pass, "", &detail);
        if !pass {
            self.failed.push(id.to_string());
        }
    }

    /// Printed with its real outcome but does not gate the exit status.
    fn diagnostic(&mut self, id: &str, name: &str, pass: bool, detail: String) {
        Self::print(id, name, pass, " (diagnostic)", &detail);
        if !pass {
            self.diagnostics_failed.push(id.to_string());
        }
    }
}

struct Problem {
    sigma: GridField,
    u: GridField,
    a: GridField,
}

impl Problem {
    fn new(kind: PhantomKind, n: usize) -> Self {
        let sigma = make_phantom(kind, n, n).unwrap();
        let u = solve_conductivity_pde(&sigma, &DirichletData::linear_y()).unwrap();
        let a = current_magnitude(&sigma, &u).unwrap();
        Self { sigma, u, a }
    }

    fn noisy(&self, delta: f64) -> GridField {
        add_noise(&self.a, &NoiseSpec::new(delta, NoiseSpec::DEFAULT_SEED)).unwrap()
    }

    fn truth(&self) -> Truth {
        Truth {
            sigma: Some(self.sigma.clone()),
            u: Some(self.u.clone()),
        }
    }
}

fn training_loss(r: &ReconResult) -> &[f64] {
    match &r.history {
        ReconHistory::Training(h) => &h.loss,
        ReconHistory::Iterations(_) => &[],
    }
}

fn nn_run(p: &Problem, data: &GridField, cfg: &NnConfig) -> (ReconResult, f64) {
    let t = Instant::now();
    let r = reconstruct_nn(data, &DirichletData::linear_y(), cfg, &p.truth()).unwrap();
    (r, t.elapsed().as_secs_f64())
}

/// Criteria 1–3 share two long training runs.
fn fourmode_runs(rep: &mut Report, wanted: &dyn Fn(u32) -> bool) {
    let p = Problem::new(PhantomKind::FourMode, GRID);
    let mut cfg = NnConfig::default();
    cfg.train.eval_every = 500;

    let (clean, secs) = nn_run(&p, &p.a, &cfg);
    let e_clean = clean.sigma_error.unwrap();
    rep.line(
        "1",
        "fourmode, exact data, sigma error <= 8.0e-2 within 45 min",
        e_clean <= 8.0e-2 && secs <= 45.0 * 60.0,
        format!("e = {e_clean:.4e}, {secs:.0} s"),
    );

    let loss = training_loss(&clean);
    let last = *loss.last().unwrap();
    let tail = &loss[loss.len().saturating_sub(500)..];
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    let drift = (last - mean).abs() / mean;
    rep.diagnostic(
        "1a",
        "fourmode, exact data, loss stagnates",
        drift <= 0.05 && last < 0.5 * loss[0],
        format!("final {last:.4e}, last-500 mean {mean:.4e} ({:.2}%), initial {:.4e}", 100.0 * drift, loss[0]),
    );
    rep.diagnostic(
        "1b",
        "fourmode, exact data, floored nodes < 1%",
        clean.floored_fraction() < 0.01,
        format!("{} of {}", clean.floored, clean.nodes),
    );

    if !(wanted(2) || wanted(3)) {
        return;
    }
    let mut noisy_cfg = cfg.clone();
    noisy_cfg.denoise = Some(DenoiseConfig::default());
    let (noisy, secs) = nn_run(&p, &p.noisy(0.10), &noisy_cfg);
    let e_noisy = noisy.sigma_error.unwrap();
    rep.line(
        "2",
        "fourmode, 10% noise, sigma error <= 1.5 x exact-data error",
        e_noisy <= 1.5 * e_clean,
        format!("e = {e_noisy:.4e}, ratio {:.3}, {secs:.0} s", e_noisy / e_clean),
    );
    let (u0, u10) = (clean.u_error.unwrap(), noisy.u_error.unwrap());
    rep.line(
        "3",
        "fourmode, voltage error <= 5e-2 at 0% and 10% noise",
        u0 <= 5e-2 && u10 <= 5e-2,
        format!("e(u) = {u0:.4e} / {u10:.4e}"),
    );

    // The classical iteration on the same denoised data.
    let denoised = noisy.a_denoised.as_ref().unwrap();
    let cfg = BaselineConfig::new(GridField::constant(GRID, GRID, 1.0).unwrap(), 40, BaselineStop::OracleBest);
    let b = baseline_iterate(denoised, &DirichletData::linear_y(), &cfg, &p.truth()).unwrap();
    let k = b.best_iteration.unwrap();
    rep.diagnostic(
        "2a",
        "fourmode, 10% noise, denoised baseline best iteration in 4..=24",
        (4..=24).contains(&k),
        format!("best iteration {k}, e = {:.4e}", b.sigma_error.unwrap()),
    );
}

fn constant_run(rep: &mut Report) {
    let p = Problem::new(PhantomKind::Constant(1.0), GRID);
    let (r, secs) = nn_run(&p, &p.a, &NnConfig::default());
    let e = r.sigma_error.unwrap();
    rep.diagnostic(
        "1c",
        "constant sigma, exact data, sigma error <= 1e-2",
        e <= 1e-2,
        format!("e = {e:.4e}, {secs:.0} s"),
    );
}

fn baseline_convergence(rep: &mut Report) {
    let p = Problem::new(PhantomKind::FourMode, GRID);
    let cfg = BaselineConfig::new(GridField::constant(GRID, GRID, 1.0).unwrap(), 30, BaselineStop::Fixed(30));
    let r = baseline_iterate(&p.a, &DirichletData::linear_y(), &cfg, &p.truth()).unwrap();
    let ReconHistory::Iterations(log) = &r.history else {
        unreachable!()
    };
    let hit = log.iter().find(|it| it.sigma_error.unwrap() < 2e-2);
    rep.line(
        "4",
        "fourmode baseline from sigma = 1 below 2e-2 within 30 iterations",
        hit.is_some(),
        match hit {
            Some(it) => format!(
                "iteration {} (e = {:.3e}); e after 30: {:.3e}",
                it.iteration,
                it.sigma_error.unwrap(),
                log.last().unwrap().sigma_error.unwrap()
            ),
            None => format!("e after 30: {:.3e}", log.last().unwrap().sigma_error.unwrap()),
        },
    );
}

fn autodiff_oracle(rep: &mut Report) {
    let mut rng = SeededRng::new(2024);
    let mut worst: f64 = 0.0;
    for trial in 0..100 {
        let depth = 2 + rng.index(8);
        let width = 5 + rng.index(16);
        let spec = MlpSpec::uniform(depth, width, Activation::Tanh).unwrap();
        let theta = init_params(&spec, 1000 + trial, InitScheme::GlorotUniform).into_vec();
        let x = [rng.uniform(), rng.uniform()];
        let d = grad_check(
            |_, th| {
                let p = spatial_gradient(&spec, th, [Var::constant(x[0]), Var::constant(x[1])])?;
                Ok(p.u + p.grad[0].norm_smooth(p.grad[1], 0.01))
            },
            &theta,
            1e-5,
        )
        .unwrap();
        worst = worst.max(d);
    }
    rep.line(
        "5a",
        "network gradient check, 100 random networks",
        worst <= 1e-6,
        format!("max relative discrepancy {worst:.2e}"),
    );

    // Full loss on the production architecture, tape and batched routes.
    let spec = MlpSpec::uniform(9, 10, Activation::Tanh).unwrap();
    let theta = init_params(&spec, 1, InitScheme::GlorotUniform).into_vec();
    let p = Problem::new(PhantomKind::FourMode, 65);
    let batch = SampleBatch::draw(&p.a, &DirichletData::linear_y(), 60, 24, 3, None).unwrap();
    let cfg = LossConfig::default();
    let tape_worst = grad_check(|_, th| empirical_loss(&spec, th, &batch, &cfg), &theta, 1e-5).unwrap();
    let mut eval = LossEvaluator::new(&spec);
    let mut grad = vec![0.0; theta.len()];
    eval.value_and_grad(&theta, &batch, &cfg, &mut grad).unwrap();
    let mut batch_worst: f64 = 0.0;
    let mut th = theta.clone();
    let h = 1e-5;
    for k in 0..theta.len() {
        th[k] = theta[k] + h;
        let up = eval.value(&th, &batch, &cfg).unwrap().total();
        th[k] = theta[k] - h;
        let down = eval.value(&th, &batch, &cfg).unwrap().total();
        th[k] = theta[k];
        let fd = (up - down) / (2.0 * h);
        batch_worst = batch_worst.max((fd - grad[k]).abs() / grad[k].abs().max(1.0));
    }
    rep.line(
        "5b",
        "loss gradient vs finite differences, 811 parameters",
        tape_worst <= 1e-5 && batch_worst <= 1e-5,
        format!("tape {tape_worst:.2e}, batched {batch_worst:.2e}"),
    );
}

fn list(v: &[f64], f: impl Fn(f64) -> String) -> String {
    v.iter().map(|&x| f(x)).collect::<Vec<_>>().join(" ")
}

fn forward_order(rep: &mut Report) {
    let exact = |x: f64| (1.0 + x).ln() / 2f64.ln();
    let sizes = [17, 33, 65, 129];
    let errs: Vec<f64> = sizes
        .iter()
        .map(|&n| {
            let sigma = GridField::from_fn(n, n, |x, _| 1.0 + x).unwrap();
            let g = DirichletData::from_fn("log", move |x, _| exact(x));
            let u = solve_conductivity_pde(&sigma, &g).unwrap();
            let mut e = 0.0f64;
            for j in 0..n {
                for i in 0..n {
                    e = e.max((u.at(i, j) - exact(u.node(i, j).0)).abs());
                }
            }
            e
        })
        .collect();
    let orders: Vec<f64> = errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    rep.line(
        "6a",
        "solver order on sigma = 1 + x",
        orders.iter().all(|o| (1.7..=2.3).contains(o)),
        format!("max errors {}, orders {}", list(&errs, |v| format!("{v:.2e}")), list(&orders, |v| format!("{v:.3}"))),
    );

    let sigma = GridField::constant(GRID, GRID, 1.0).unwrap();
    let u = solve_conductivity_pde(&sigma, &DirichletData::linear_y()).unwrap();
    let mut e = 0.0f64;
    for j in 0..GRID {
        for i in 0..GRID {
            e = e.max((u.at(i, j) - u.node(i, j).1).abs());
        }
    }
    rep.line("6b", "solver exact on sigma = 1, g = y", e <= 1e-9, format!("max node error {e:.2e}"));
}

fn theory_bounds(rep: &mut Report) {
    let mut rng = SeededRng::new(99);
    let probes = probe_grid(12);
    let (mut sup_bad, mut lip_bad) = (0, 0);
    let (mut sup_ratio, mut lip_ratio) = (0.0f64, 0.0f64);
    for t in 0..100 {
        let depth = 2 + rng.index(8);
        let width = 5 + rng.index(16);
        let spec = MlpSpec::uniform(depth, width, Activation::Tanh).unwrap();
        let r = rng.uniform_in(0.2, 2.0);
        let theta = init_params(&spec, 5000 + t, InitScheme::Uniform(r)).into_vec();
        let tilde: Vec<f64> = theta.iter().map(|v| v + rng.uniform_in(-0.1, 0.1)).collect();
        let s = check_gradient_sup_bound(&spec, &theta, &probes).unwrap();
        let l = check_param_lipschitz(&spec, &theta, &tilde, &probes).unwrap();
        sup_bad += !s.pass as usize;
        lip_bad += !l.pass as usize;
        sup_ratio = sup_ratio.max(s.measured / s.bound);
        lip_ratio = lip_ratio.max(l.measured / l.bound);
    }
    rep.line(
        "7",
        "gradient sup-norm and parameter Lipschitz bounds, 100 pairs",
        sup_bad == 0 && lip_bad == 0,
        format!("violations {sup_bad} / {lip_bad}, worst measured/bound {sup_ratio:.2e} / {lip_ratio:.2e}"),
    );
}

fn loss_correctness(rep: &mut Report) {
    let cfg = LossConfig::default();
    let g = DirichletData::linear_y();
    let linear = MlpSpec::new(vec![2, 1, 1], Activation::Identity).unwrap();
    let q = quadrature_loss(&linear, &[0.0, 1.0, 0.0, 1.0, 0.0], |_, _| 1.0, &g, 128, &cfg, None)
        .unwrap()
        .total();
    let expected = 1.0 + 2.0 * cfg.gamma * cfg.zeta;
    rep.line(
        "8a",
        "quadrature loss of u = y equals 1 + 2 gamma zeta",
        (q - expected).abs() <= 1e-12 * expected,
        format!("{q} vs {expected}"),
    );

    let spec = MlpSpec::uniform(3, 8, Activation::Tanh).unwrap();
    let theta = init_params(&spec, 11, InitScheme::GlorotUniform).into_vec();
    let a = |x: f64, y: f64| 1.0 + 0.5 * (3.0 * x).sin() * (2.0 * y).cos().powi(2);
    let q = quadrature_loss(&spec, &theta, a, &g, 1024, &cfg, None).unwrap().total();
    let mut eval = LossEvaluator::new(&spec);
    let mut within = 0;
    for seed in 0..20 {
        let batch = SampleBatch::draw_with(a, &g, 100_000, 100_000, 7000 + seed, None).unwrap();
        let est = eval.estimate(&theta, &batch, &cfg).unwrap();
        within += ((est.value - q).abs() <= 3.0 * est.standard_error) as usize;
    }
    rep.line(
        "8b",
        "Monte Carlo loss at n = 1e5 within 3 standard errors of quadrature",
        within >= 18,
        format!("{within} of 20 seeds"),
    );
}

fn huber_properties(rep: &mut Report) {
    let mut worst: f64 = 0.0;
    let mut zero_exact = true;
    for zeta in [1e-3, 0.01, 0.05, 0.3, 1.0] {
        let below = zeta * (1.0 - 1e-12);
        worst = worst.max((huber(below, zeta) - huber(zeta, zeta)).abs());
        worst = worst.max((huber_derivative(below, zeta) - huber_derivative(zeta, zeta)).abs());
        // One-sided difference quotients, extrapolated to cancel the O(h) term.
        let h = 1e-5;
        let left = |h: f64| (huber(zeta, zeta) - huber(zeta - h, zeta)) / h;
        let right = (huber(zeta + h, zeta) - huber(zeta, zeta)) / h;
        worst = worst.max((2.0 * left(h / 2.0) - left(h) - right).abs());
        zero_exact &= huber(0.0, zeta) == zeta / 2.0;
    }
    rep.line(
        "9",
        "Huber continuity and C1 at the knee; psi(0) = zeta/2",
        worst <= 1e-8 && zero_exact,
        format!("max jump {worst:.2e}, psi(0) exact: {zero_exact}"),
    );
}

fn partial_data(rep: &mut Report) {
    let p = Problem::new(PhantomKind::SheppLogan, GRID);
    let data = p.noisy(0.01);
    let rect = Rect::new(0.25, 0.75, 0.25, 0.75).unwrap();
    let mask = Mask::from_rect(GRID, GRID, &rect).unwrap();
    let mut cfg = NnConfig {
        n2: 1000,
        loss: LossConfig::new(10.0, 0.01).unwrap(),
        adam: AdamConfig::new(1e-4, 5000).unwrap(),
        denoise: Some(DenoiseConfig::default()),
        ..NnConfig::default()
    };
    cfg.train.eval_every = 500;

    let (full, t_full) = nn_run(&p, &data, &cfg);
    let e_full = relative_l2_error_masked(&full.sigma_hat, &p.sigma, &mask).unwrap();
    cfg.subdomain = Some(rect);
    cfg.loss = LossConfig::partial(10.0, 0.01, &rect).unwrap();
    let (part, t_part) = nn_run(&p, &data, &cfg);
    let e_part = part.sigma_error.unwrap();
    rep.line(
        "10",
        "Shepp-Logan, 1% noise, partial-data masked error <= 1.5 x full-data masked error",
        e_part <= 1.5 * e_full,
        format!(
            "partial {e_part:.4e}, full {e_full:.4e}, ratio {:.3}, {:.0} s + {:.0} s",
            e_part / e_full,
            t_full,
            t_part
        ),
    );
    rep.diagnostic(
        "10a",
        "Shepp-Logan, 1% noise, floored nodes < 1%",
        full.floored_fraction() < 0.01,
        format!("{} of {}", full.floored, full.nodes),
    );
}

fn determinism(rep: &mut Report) {
    let p = Problem::new(PhantomKind::FourMode, 33);
    let run = |dir: &std::path::Path| {
        let data = p.noisy(0.10);
        let mut cfg = NnConfig {
            spec: MlpSpec::uniform(4, 8, Activation::Tanh).unwrap(),
            n1: 800,
            n2: 300,
            adam: AdamConfig::new(1e-2, 200).unwrap(),
            denoise: Some(DenoiseConfig {
                epochs: 100,
                ..DenoiseConfig::default()
            }),
            ..NnConfig::default()
        };
        cfg.train.eval_every = 50;
        let r = reconstruct_nn(&data, &DirichletData::linear_y(), &cfg, &p.truth()).unwrap();
        write_run_dir(dir, &r, &[("grid".into(), "33".into())], false).unwrap();
    };
    let tmp = tempfile::tempdir().unwrap();
    let (one, two) = (tmp.path().join("one"), tmp.path().join("two"));
    run(&one);
    run(&two);
    let mut names: Vec<String> = fs::read_dir(&one)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    let differing: Vec<&String> = names
        .iter()
        .filter(|n| fs::read(one.join(n)).unwrap() != fs::read(two.join(n)).unwrap())
        .collect();
    let same_noise = p.noisy(0.10) == p.noisy(0.10);
    rep.line(
        "11",
        "identical configs give identical run directories",
        differing.is_empty() && same_noise && names.len() >= 5,
        format!("{} files compared, differing: {differing:?}", names.len()),
    );
}

fn main() -> ExitCode {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: u32| selected.is_empty() || selected.contains(&n);
    let mut rep = Report {
        failed: Vec::new(),
        diagnostics_failed: Vec::new(),
    };
    let start = Instant::now();

    if wanted(5) {
        autodiff_oracle(&mut rep);
    }
    if wanted(6) {
        forward_order(&mut rep);
    }
    if wanted(7) {
        theory_bounds(&mut rep);
    }
    if wanted(8) {
        loss_correctness(&mut rep);
    }
    if wanted(9) {
        huber_properties(&mut rep);
    }
    if wanted(11) {
        determinism(&mut rep);
    }
    if wanted(4) {
        baseline_convergence(&mut rep);
    }
    if wanted(1) || wanted(2) || wanted(3) {
        fourmode_runs(&mut rep, &wanted);
        constant_run(&mut rep);
    }
    if wanted(10) {
        partial_data(&mut rep);
    }

    println!("acceptance finished in {:.0} s", start.elapsed().as_secs_f64());
    if !rep.diagnostics_failed.is_empty() {
        println!("diagnostics outside tolerance: {}", rep.diagnostics_failed.join(", "));
    }
    if rep.failed.is_empty() {
        println!("all criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("failed: {}", rep.failed.join(", "));
        ExitCode::FAILURE
    }
}
