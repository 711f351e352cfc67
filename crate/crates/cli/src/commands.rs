use std::path::Path;

use rayon::prelude::*;

use chmm_core::decode_loss::{closed_form_mixture_loss, decode_posterior, independence_baseline_loss, zero_one_loss};
use chmm_core::eifm::{estimating_function_psi, gauss_seidel_spectral_radius};
use chmm_core::gof::select_family;
use chmm_core::io::{read_model, read_trajectory_csv, write_trajectory};
use chmm_core::model::{scenario_model, symmetric_mixture_model};
use chmm_core::rng::{draw_seeds, seeded};
use chmm_core::uncertainty::{bootstrap_with_seeds, godambe_with_seeds};
use chmm_core::{fit, forward_backward, initialize, CopulaHmm, FitConfig, InitConfig, Trajectory, UncertaintyReport};

use crate::output::{num, strings, OutputDir};
use crate::{
    BootstrapArgs, CliError, Command, DecodeArgs, DiagnoseArgs, FitArgs, FitOverrides, GodambeArgs, GofArgs,
    LossCurveArgs, ModelSource, SimulateArgs,
};

/// Largest g(ξ) system `diagnose` will build.
const MAX_DIAGNOSE_DIMENSION: usize = 4000;

fn input_paths(command: &Command) -> Vec<&Path> {
    fn source(s: &ModelSource) -> Vec<&Path> {
        s.model.as_deref().into_iter().collect()
    }
    match command {
        Command::Simulate(a) => source(&a.source),
        Command::Fit(a) => a.data.iter().map(|p| p.as_path()).chain(a.init.as_deref()).collect(),
        Command::Decode(a) => vec![&a.model, &a.data],
        Command::LossCurve(_) => vec![],
        Command::Bootstrap(a) => source(&a.source),
        Command::Godambe(a) => source(&a.source),
        Command::Gof(a) => vec![&a.data],
        Command::Diagnose(a) => vec![&a.model, &a.data],
    }
}

pub fn run(command: &Command, seed: u64) -> Result<(), CliError> {
    for path in input_paths(command) {
        if !path.is_file() {
            return Err(CliError::Missing(path.to_path_buf()));
        }
    }
    let mut out = OutputDir::create(command.out_dir())?;
    match command {
        Command::Simulate(a) => simulate(a, seed, &mut out)?,
        Command::Fit(a) => fit_cmd(a, seed, &mut out)?,
        Command::Decode(a) => decode(a, &mut out)?,
        Command::LossCurve(a) => loss_curve(a, seed, &mut out)?,
        Command::Bootstrap(a) => bootstrap(a, seed, &mut out)?,
        Command::Godambe(a) => godambe(a, seed, &mut out)?,
        Command::Gof(a) => gof(a, &mut out)?,
        Command::Diagnose(a) => diagnose(a, &mut out)?,
    }
    out.finish(command, seed)
}

fn load_model(source: &ModelSource) -> Result<CopulaHmm, CliError> {
    match (&source.model, source.scenario) {
        (Some(path), _) => Ok(read_model(path)?),
        (None, Some(s)) => Ok(scenario_model(s)?),
        (None, None) => Err(CliError::Usage("one of --model or --scenario is required".into())),
    }
}

fn load_trajectory(path: &Path) -> Result<Trajectory, CliError> {
    Ok(read_trajectory_csv(path)?.trajectory)
}

fn fit_config(o: &FitOverrides, seed: u64) -> Result<FitConfig, CliError> {
    let d = FitConfig::default();
    let c = FitConfig {
        max_iterations: o.max_iterations.unwrap_or(d.max_iterations),
        tolerance: o.tolerance.unwrap_or(d.tolerance),
        param_tolerance: o.param_tolerance.or(d.param_tolerance),
        seed,
        ..d
    };
    c.validate()?;
    Ok(c)
}

fn positive(name: &str, v: usize) -> Result<(), CliError> {
    if v == 0 {
        return Err(CliError::Usage(format!("--{name} must be positive")));
    }
    Ok(())
}

fn to_bytes(traj: &Trajectory) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    write_trajectory(&mut buf, traj, None)?;
    Ok(buf)
}

fn simulate(a: &SimulateArgs, seed: u64, out: &mut OutputDir) -> Result<(), CliError> {
    positive("length", a.length)?;
    positive("count", a.count)?;
    let model = load_model(&a.source)?;
    let seeds = draw_seeds(&mut seeded(seed), a.count);
    let trajs = seeds
        .par_iter()
        .map(|&s| model.simulate(a.length, &mut seeded(s)))
        .collect::<chmm_core::Result<Vec<_>>>()?;
    for (i, tr) in trajs.iter().enumerate() {
        let name = if a.count == 1 { "trajectory.csv".to_string() } else { format!("trajectory_{}.csv", i + 1) };
        out.raw(&name, to_bytes(tr)?);
    }
    out.raw("model.toml", chmm_core::io::model_to_toml(&model)?.into_bytes());
    Ok(())
}

fn fit_cmd(a: &FitArgs, seed: u64, out: &mut OutputDir) -> Result<(), CliError> {
    let data = a.data.iter().map(|p| load_trajectory(p).map(|t| t.without_labels())).collect::<Result<Vec<_>, _>>()?;
    let config = fit_config(&a.fit, seed)?;
    let init = match &a.init {
        Some(path) => read_model(path)?,
        None => {
            positive("states", a.states)?;
            let d = data[0].dim();
            let margins = match a.margins.len() {
                1 => vec![a.margins[0]; d],
                n if n == d => a.margins.clone(),
                n => return Err(CliError::Usage(format!("{n} margin families for d={d}"))),
            };
            let family = if d == 2 { a.family } else { chmm_core::CopulaFamily::Independence };
            let mut ic = InitConfig::uniform(a.states, d, family);
            ic.margin_families = margins;
            ic.restarts = a.restarts.max(1);
            initialize(&data, &ic, &mut seeded(seed))?
        }
    };
    let res = fit(&data, &init, &config)?;
    out.raw("model.toml", chmm_core::io::model_to_toml(&res.model)?.into_bytes());
    out.raw("init.toml", chmm_core::io::model_to_toml(&init)?.into_bytes());
    let names = res.model.param_names();
    let rows = names.iter().zip(res.model.param_vector()).map(|(n, v)| vec![n.clone(), num(v)]).collect();
    out.table("estimates.csv", &strings(["parameter", "value"]), rows)?;
    let mut header = strings(["iteration", "log_likelihood", "max_param_change"]);
    header.extend(names.iter().cloned());
    let rows = res
        .trace
        .entries
        .iter()
        .map(|e| {
            let mut r = vec![e.iteration.to_string(), num(e.log_likelihood), num(e.max_param_change)];
            r.extend(e.params.iter().map(|&p| num(p)));
            r
        })
        .collect();
    out.table("trace.csv", &header, rows)?;
    out.note("log_likelihood", res.log_likelihood);
    out.note("converged", res.trace.converged);
    out.note("iterations", res.trace.iterations as i64);
    out.note("best_iteration", res.trace.entries[res.trace.best_index].iteration as i64);
    Ok(())
}

fn decode(a: &DecodeArgs, out: &mut OutputDir) -> Result<(), CliError> {
    let model = read_model(&a.model)?;
    let traj = load_trajectory(&a.data)?;
    let post = forward_backward(&model, &traj)?;
    let pred = decode_posterior(&post);
    let k = model.n_states();
    let mut header = strings(["t", "state"]);
    header.extend((1..=k).map(|j| format!("p{j}")));
    let rows = pred
        .iter()
        .enumerate()
        .map(|(t, &s)| {
            let mut r = vec![(t + 1).to_string(), (s + 1).to_string()];
            r.extend((0..k).map(|j| num(post.u_hat[[j, t]])));
            r
        })
        .collect();
    out.table("decoded.csv", &header, rows)?;
    out.note("log_likelihood", post.log_likelihood);
    if let Some(truth) = traj.labels() {
        if let Some(&bad) = truth.iter().find(|&&l| l >= k) {
            return Err(chmm_core::Error::InvalidState { index: bad, count: k }.into());
        }
        let raw = zero_one_loss(&pred, truth, k, false)?;
        let mut rows = vec![vec!["zero_one".to_string(), num(raw.zero_one)]];
        if k <= chmm_core::decode_loss::MAX_MATCHED_STATES {
            rows.push(vec!["zero_one_matched".into(), num(zero_one_loss(&pred, truth, k, true)?.zero_one)]);
        }
        for (j, acc) in raw.per_state_accuracy.iter().enumerate() {
            rows.push(vec![format!("accuracy_state_{}", j + 1), num(*acc)]);
        }
        out.table("loss.csv", &strings(["metric", "value"]), rows)?;
    }
    Ok(())
}

fn parse_grid(spec: &str) -> Result<Vec<f64>, CliError> {
    let bad = || CliError::Usage(format!("cannot parse θ grid `{spec}`"));
    let grid: Vec<f64> = if spec.contains(':') {
        let parts: Vec<f64> = spec.split(':').map(|s| s.trim().parse().map_err(|_| bad())).collect::<Result<_, _>>()?;
        let [start, stop, step] = parts[..] else { return Err(bad()) };
        if !(step > 0.0) || stop < start {
            return Err(bad());
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize;
        (0..=n).map(|i| start + step * i as f64).collect()
    } else {
        spec.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect::<Result<_, _>>()?
    };
    if grid.is_empty() || grid.iter().any(|t| !t.is_finite()) {
        return Err(bad());
    }
    Ok(grid)
}

fn loss_curve(a: &LossCurveArgs, seed: u64, out: &mut OutputDir) -> Result<(), CliError> {
    positive("length", a.length)?;
    if a.replicates < 2 {
        return Err(CliError::Usage("--replicates must be at least 2".into()));
    }
    let grid = parse_grid(&a.thetas)?;
    for &theta in &grid {
        closed_form_mixture_loss(a.family, theta)?;
    }
    let seeds = draw_seeds(&mut seeded(seed), grid.len());
    let rows = grid
        .par_iter()
        .zip(&seeds)
        .map(|(&theta, &s)| {
            let model = symmetric_mixture_model(a.family, theta)?;
            let ((loss, se), (ind, ind_se)) =
                independence_baseline_loss(&model, &model.with_independence(), a.length, a.replicates, &mut seeded(s))?;
            let exact = closed_form_mixture_loss(a.family, theta)?;
            Ok(vec![num(theta), num(exact), num(loss), num(se), num(ind), num(ind_se)])
        })
        .collect::<chmm_core::Result<Vec<_>>>()?;
    out.table(
        "loss_curve.csv",
        &strings(["theta", "closed_form", "empirical", "empirical_se", "independence", "independence_se"]),
        rows,
    )
}

fn write_report(report: &UncertaintyReport, out: &mut OutputDir) -> Result<(), CliError> {
    let rows = (0..report.names.len())
        .map(|i| {
            vec![
                report.names[i].clone(),
                num(report.estimate[i]),
                num(report.std_errors[i]),
                num(report.intervals[i].0),
                num(report.intervals[i].1),
                report.flagged[i].to_string(),
            ]
        })
        .collect();
    out.table("intervals.csv", &strings(["parameter", "estimate", "std_error", "lower", "upper", "flagged"]), rows)?;
    let mut header = vec!["parameter".to_string()];
    header.extend(report.names.iter().cloned());
    let rows = report
        .names
        .iter()
        .zip(&report.covariance)
        .map(|(n, row)| std::iter::once(n.clone()).chain(row.iter().map(|&c| num(c))).collect())
        .collect();
    out.table("covariance.csv", &header, rows)?;
    out.note("level", report.level);
    out.note("replicates", report.replicates as i64);
    out.note("dropped", report.dropped as i64);
    Ok(())
}

fn check_level(level: f64) -> Result<(), CliError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(CliError::Usage(format!("--level must lie in (0, 1), got {level}")));
    }
    Ok(())
}

fn bootstrap(a: &BootstrapArgs, seed: u64, out: &mut OutputDir) -> Result<(), CliError> {
    positive("length", a.length)?;
    check_level(a.level)?;
    let model = load_model(&a.source)?;
    let config = fit_config(&a.fit, seed)?;
    let seeds = draw_seeds(&mut seeded(seed), a.replicates);
    let report = bootstrap_with_seeds(&model, a.length, &seeds, &config, a.level)?;
    write_report(&report, out)
}

fn godambe(a: &GodambeArgs, seed: u64, out: &mut OutputDir) -> Result<(), CliError> {
    positive("length", a.length)?;
    check_level(a.level)?;
    let model = load_model(&a.source)?;
    let seeds = draw_seeds(&mut seeded(seed), a.replicates);
    let report = godambe_with_seeds(&model, a.length, &seeds, a.level)?;
    write_report(&report, out)
}

fn gof(a: &GofArgs, out: &mut OutputDir) -> Result<(), CliError> {
    let traj = load_trajectory(&a.data)?;
    let rows: Vec<Vec<f64>> = match a.state {
        None => traj.rows().map(|r| r.to_vec()).collect(),
        Some(0) => return Err(CliError::Usage("--state is 1-based".into())),
        Some(s) => {
            let labels = traj
                .labels()
                .ok_or_else(|| CliError::Usage("--state needs a `state` column in the data".into()))?;
            traj.rows().zip(labels).filter(|(_, &l)| l + 1 == s).map(|(r, _)| r.to_vec()).collect()
        }
    };
    let sel = select_family(&rows, &a.families)?;
    let table = sel
        .table
        .iter()
        .zip(&a.families)
        .map(|(r, f)| match r {
            Ok(fit) => vec![
                f.to_string(),
                num(fit.theta),
                num(fit.statistic),
                (fit.family == sel.best.family).to_string(),
                String::new(),
            ],
            Err(e) => vec![f.to_string(), String::new(), String::new(), "false".into(), e.clone()],
        })
        .collect();
    out.table("gof.csv", &strings(["family", "theta", "statistic", "selected", "error"]), table)?;
    out.note("selected", sel.best.family.to_string());
    out.note("n", rows.len() as i64);
    Ok(())
}

fn diagnose(a: &DiagnoseArgs, out: &mut OutputDir) -> Result<(), CliError> {
    let model = read_model(&a.model)?;
    let mut traj = load_trajectory(&a.data)?;
    if let Some(n) = a.truncate {
        positive("truncate", n)?;
        traj = traj.truncated(n.min(traj.len()))?;
    }
    let k = model.n_states();
    let dimension = k * traj.len() + k * k * traj.len().saturating_sub(1) + model.n_params();
    if dimension > MAX_DIAGNOSE_DIMENSION {
        return Err(CliError::Usage(format!(
            "g(ξ) system has {dimension} coordinates (limit {MAX_DIAGNOSE_DIMENSION}); pass --truncate"
        )));
    }
    let post = forward_backward(&model, &traj)?;
    let psi = estimating_function_psi(&model, std::slice::from_ref(&traj))?;
    let diag = gauss_seidel_spectral_radius(&model, &post, &traj)?;
    let max_psi = psi.iter().fold(0.0f64, |m, p| m.max(p.abs()));
    let opt = |x: Option<f64>| x.map(num).unwrap_or_default();
    let rows = vec![
        vec!["length".into(), traj.len().to_string()],
        vec!["log_likelihood".into(), num(post.log_likelihood)],
        vec!["max_abs_psi".into(), num(max_psi)],
        vec!["spectral_radius".into(), opt(diag.spectral_radius)],
        vec!["dimension".into(), diag.dimension.to_string()],
        vec!["n5".into(), diag.n5.to_string()],
        vec!["unit_diagonal_deviation".into(), num(diag.unit_diagonal_deviation)],
        vec!["singular_index".into(), diag.singular_index.map(|i| (i + 1).to_string()).unwrap_or_default()],
    ];
    out.table("diagnose.csv", &strings(["metric", "value"]), rows)?;
    if let Some(r) = diag.spectral_radius {
        out.note("spectral_radius", r);
    }
    Ok(())
}
