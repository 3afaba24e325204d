use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use cdii::field::{
    make_phantom, read_grid, read_mask, relative_l2_error, relative_l2_error_masked, write_grid, write_pgm,
    GridField,
};
use cdii::forward::{add_noise, current_magnitude, solve_conductivity_pde};
use cdii::network::bounds::probe_grid;
use cdii::network::{
    check_gradient_sup_bound, check_layer_gradient_bounds, check_param_lipschitz, init_params, Activation,
    InitScheme, MlpSpec,
};
use cdii::recon::{
    baseline_iterate, denoise as denoise_grid, reconstruct_nn, write_run_dir, BaselineConfig, BaselineStop,
    ReconResult, Truth,
};
use cdii::rng::SeededRng;

use crate::config::{Method, RunConfig, Settings, Sigma0, StopRule};
use crate::CliError;

const SWEEP_AXES: &[&str] = &["n1", "n2", "gamma", "zeta", "delta", "depth", "width"];

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn write_field(f: &GridField, dir: &Path, name: &str, images: bool) -> Result<(), CliError> {
    write_grid(f, dir.join(format!("{name}.grid")))?;
    if images {
        write_pgm(f, dir.join(format!("{name}.pgm")))?;
    }
    Ok(())
}

fn generate_into(cfg: &RunConfig, s: &Settings, dir: &Path) -> Result<(), CliError> {
    let sigma = make_phantom(s.phantom, s.grid, s.grid).map_err(|e| CliError::Config(e.to_string()))?;
    let u = solve_conductivity_pde(&sigma, &s.g)?;
    let a = current_magnitude(&sigma, &u)?;
    let noisy = add_noise(&a, &s.noise)?;
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    write_field(&sigma, dir, "sigma_true", s.images)?;
    write_field(&u, dir, "u_true", s.images)?;
    write_field(&a, dir, "a_true", s.images)?;
    write_field(&noisy, dir, "a_noisy", s.images)?;
    let echo = dir.join("generate.txt");
    fs::write(&echo, cfg.to_text()).map_err(|e| io_err(&echo, e))?;
    println!(
        "generated {} ({}x{}, delta={}) in {}; a range [{:.4e}, {:.4e}]",
        s.phantom,
        s.grid,
        s.grid,
        s.noise.delta,
        dir.display(),
        a.min(),
        a.max()
    );
    Ok(())
}

pub fn generate(config: Option<&Path>, overrides: &[String]) -> Result<(), CliError> {
    let cfg = RunConfig::load(config, overrides)?;
    let s = cfg.resolve()?;
    generate_into(&cfg, &s, &s.data)
}

fn read_optional(path: &Path) -> Result<Option<GridField>, CliError> {
    if path.exists() {
        Ok(Some(read_grid(path)?))
    } else {
        Ok(None)
    }
}

fn run_pipeline(s: &Settings) -> Result<ReconResult, CliError> {
    let a_path = s.data.join("a_noisy.grid");
    if !a_path.exists() {
        return Err(CliError::Data(format!("missing data file {}", a_path.display())));
    }
    let a = read_grid(&a_path)?;
    let truth = Truth {
        sigma: read_optional(&s.data.join("sigma_true.grid"))?,
        u: read_optional(&s.data.join("u_true.grid"))?,
    };
    for f in truth.sigma.iter().chain(&truth.u) {
        if !f.same_shape(&a) {
            return Err(CliError::Data("data files disagree in grid shape".into()));
        }
    }
    match s.method {
        Method::Nn => Ok(reconstruct_nn(&a, &s.g, &s.nn, &truth)?),
        Method::Baseline => {
            let denoised = match &s.nn.denoise {
                Some(d) => Some(denoise_grid(&a, d)?.0),
                None => None,
            };
            let data = denoised.as_ref().unwrap_or(&a);
            let sigma0 = match s.sigma0 {
                Sigma0::Constant(c) => GridField::constant(a.nx(), a.ny(), c)?,
                Sigma0::Truth => truth
                    .sigma
                    .clone()
                    .ok_or_else(|| CliError::Data("baseline.sigma0=truth needs sigma_true.grid".into()))?,
            };
            let stop = match s.baseline_stop {
                StopRule::Fixed(k) => BaselineStop::Fixed(k),
                StopRule::Oracle => BaselineStop::OracleBest,
                StopRule::Auto if truth.sigma.is_some() => BaselineStop::OracleBest,
                StopRule::Auto => BaselineStop::Fixed(s.baseline_iters),
            };
            let mut cfg = BaselineConfig::new(sigma0, s.baseline_iters, stop);
            cfg.floor = s.nn.floor;
            let mut result = baseline_iterate(data, &s.g, &cfg, &truth)?;
            result.a_denoised = denoised;
            Ok(result)
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "na".into(), |v| format!("{v:.6e}"))
}

fn reconstruct_config(cfg: &RunConfig) -> Result<ReconResult, CliError> {
    let s = cfg.resolve()?;
    let result = run_pipeline(&s)?;
    write_run_dir(&s.out, &result, &cfg.pairs(), s.images)?;
    Ok(result)
}

pub fn reconstruct(config: Option<&Path>, overrides: &[String]) -> Result<(), CliError> {
    let cfg = RunConfig::load(config, overrides)?;
    let r = reconstruct_config(&cfg)?;
    println!(
        "sigma_error={} u_error={} floored_fraction={:.3e} out={}",
        fmt_opt(r.sigma_error),
        fmt_opt(r.u_error),
        r.floored_fraction(),
        cfg.get("out")
    );
    if let Some(k) = r.best_iteration {
        println!("iteration={k}");
    }
    Ok(())
}

pub fn evaluate(estimate: &Path, truth: &Path, mask: Option<&Path>, csv: Option<&Path>) -> Result<(), CliError> {
    let est = read_grid(estimate)?;
    let tru = read_grid(truth)?;
    let err = match mask {
        Some(m) => relative_l2_error_masked(&est, &tru, &read_mask(m)?)?,
        None => relative_l2_error(&est, &tru)?,
    };
    println!("relative_l2_error={err:.16e}");
    let csv_path = match csv {
        Some(p) => p.to_path_buf(),
        None => estimate.parent().unwrap_or(Path::new(".")).join("eval.csv"),
    };
    let row = format!(
        "estimate,truth,mask,relative_l2_error\n{},{},{},{err:.16e}\n",
        estimate.display(),
        truth.display(),
        mask.map_or_else(|| "none".into(), |m| m.display().to_string())
    );
    fs::write(&csv_path, row).map_err(|e| io_err(&csv_path, e))
}

fn parse_axis(spec: &str) -> Result<(String, Vec<String>), CliError> {
    let (key, values) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("axis must be key=v1,v2,..., got {spec:?}")))?;
    let key = key.trim();
    if !SWEEP_AXES.contains(&key) {
        return Err(CliError::Config(format!(
            "cannot sweep {key:?}; axes are {}",
            SWEEP_AXES.join(" ")
        )));
    }
    let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
    if values.is_empty() {
        return Err(CliError::Config(format!("axis {key} has no values")));
    }
    Ok((key.to_string(), values))
}

pub fn sweep(config: Option<&Path>, overrides: &[String], axes: &[String], jobs: usize) -> Result<(), CliError> {
    let template = RunConfig::load(config, overrides)?;
    let axes: Vec<(String, Vec<String>)> = axes.iter().map(|a| parse_axis(a)).collect::<Result<_, _>>()?;
    let root = PathBuf::from(template.get("out"));

    // Cartesian product, last axis fastest.
    let mut cells: Vec<Vec<String>> = vec![Vec::new()];
    for (_, values) in &axes {
        cells = cells
            .into_iter()
            .flat_map(|prefix| {
                values.iter().map(move |v| {
                    let mut c = prefix.clone();
                    c.push(v.clone());
                    c
                })
            })
            .collect();
    }

    // One data set per distinct data-generating configuration.
    let mut configs = Vec::with_capacity(cells.len());
    let mut datasets: BTreeMap<String, PathBuf> = BTreeMap::new();
    for (idx, values) in cells.iter().enumerate() {
        let mut cfg = template.clone();
        for ((key, _), v) in axes.iter().zip(values) {
            cfg.set(key, v)?;
        }
        let s = cfg.resolve()?;
        let signature = ["phantom", "grid", "g", "delta", "seed.noise"]
            .iter()
            .map(|k| cfg.get(k))
            .collect::<Vec<_>>()
            .join("|");
        let dir = match datasets.get(&signature) {
            Some(dir) => dir.clone(),
            None => {
                let dir = root.join(format!("data_{:03}", datasets.len()));
                generate_into(&cfg, &s, &dir)?;
                datasets.insert(signature, dir.clone());
                dir
            }
        };
        cfg.set("data", &dir.display().to_string())?;
        cfg.set("out", &root.join(format!("cell_{idx:03}")).display().to_string())?;
        configs.push(cfg);
    }

    let rows: Mutex<Vec<Option<String>>> = Mutex::new(vec![None; configs.len()]);
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..jobs.max(1) {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::SeqCst);
                if idx >= configs.len() {
                    break;
                }
                let tail = match reconstruct_config(&configs[idx]) {
                    Ok(r) => format!(
                        "{},{},{:.6e},ok",
                        fmt_opt(r.sigma_error),
                        fmt_opt(r.u_error),
                        r.floored_fraction()
                    ),
                    Err(e) => format!("na,na,na,failed: {}", e.to_string().replace([',', '\n'], ";")),
                };
                let mut line = idx.to_string();
                for v in &cells[idx] {
                    line.push(',');
                    line.push_str(v);
                }
                line.push(',');
                line.push_str(&tail);
                println!("{line}");
                rows.lock().expect("sweep row lock")[idx] = Some(line);
            });
        }
    });

    let mut table = String::from("cell");
    for (key, _) in &axes {
        table.push(',');
        table.push_str(key);
    }
    table.push_str(",sigma_error,u_error,floored_fraction,status\n");
    for row in rows.into_inner().expect("sweep row lock") {
        table.push_str(&row.expect("every cell ran"));
        table.push('\n');
    }
    let path = root.join("table.csv");
    fs::write(&path, table).map_err(|e| io_err(&path, e))?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn denoise(input: &Path, output: &Path, config: Option<&Path>, overrides: &[String]) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(config, overrides)?;
    cfg.set("denoise", "on")?;
    let s = cfg.resolve()?;
    let d = s.nn.denoise.expect("denoising switched on");
    let noisy = read_grid(input)?;
    let (clean, history) = denoise_grid(&noisy, &d)?;
    write_grid(&clean, output)?;
    println!(
        "denoised {} -> {} (final fit loss {:.4e})",
        input.display(),
        output.display(),
        history.loss.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

pub fn theorycheck(trials: usize, seed: u64) -> Result<(), CliError> {
    let mut rng = SeededRng::new(seed);
    let probes = probe_grid(12);
    let (mut sup_ok, mut lip_ok, mut layer_ok) = (0, 0, 0);
    for t in 0..trials {
        let depth = 2 + rng.index(8);
        let width = 5 + rng.index(16);
        let spec = MlpSpec::uniform(depth, width, Activation::Tanh).map_err(|e| CliError::Config(e.to_string()))?;
        let r = rng.uniform_in(0.2, 2.0);
        let theta = init_params(&spec, seed.wrapping_add(t as u64), InitScheme::Uniform(r)).into_vec();
        let tilde: Vec<f64> = theta.iter().map(|v| v + rng.uniform_in(-0.1, 0.1)).collect();
        sup_ok += check_gradient_sup_bound(&spec, &theta, &probes)?.pass as usize;
        lip_ok += check_param_lipschitz(&spec, &theta, &tilde, &probes)?.pass as usize;
        layer_ok += (check_layer_gradient_bounds(&spec, &theta, &probes)? <= 1.0) as usize;
    }
    println!("gradient sup-norm bound: {sup_ok}/{trials} pass");
    println!("parameter Lipschitz bound: {lip_ok}/{trials} pass");
    println!("hidden-layer gradient bound: {layer_ok}/{trials} pass");
    if sup_ok == trials && lip_ok == trials && layer_ok == trials {
        Ok(())
    } else {
        Err(CliError::Numeric("bound violations found".into()))
    }
}
