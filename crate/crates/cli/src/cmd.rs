//! Subcommand implementations.

use std::path::{Path, PathBuf};

use serde_json::json;

use poolrisk_core::affine::{survival_curve, ForcedPaths};
use poolrisk_core::clt::second_order_loss_samples;
use poolrisk_core::config::ResolvedConfig;
use poolrisk_core::importance as is_core;
use poolrisk_core::ldp;
use poolrisk_core::lln::{lln_loss_distribution, solve_lln};
use poolrisk_core::model::{FactorSpec, SeedSpec, TimeGrid};
use poolrisk_core::sim::{check_step_size, simulate_ensemble, EnsembleOptions};
use poolrisk_core::stats;

use crate::output::{fmt_f64, gnuplot_script, sorted_json, CsvBuilder, ManifestWriter};
use crate::{
    CliError, CltArgs, IsArgs, LdpArgs, LlnArgs, ReproduceArgs, SimulateArgs, SurvivalArgs,
    VarArgs,
};

struct LoadedConfig {
    resolved: ResolvedConfig,
    raw_text: String,
}

fn load(path: &str) -> Result<LoadedConfig, CliError> {
    let raw_text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {path}: {e}")))?;
    let resolved = poolrisk_core::config::parse_config(&raw_text)?;
    for warning in &resolved.warnings {
        eprintln!("warning: {warning}");
    }
    Ok(LoadedConfig { resolved, raw_text })
}

fn print_step_warnings(cfg: &ResolvedConfig) {
    for w in check_step_size(&cfg.pool, &cfg.grid) {
        eprintln!("warning: {w}");
    }
}

pub fn simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let loaded = load(&args.config)?;
    let cfg = &loaded.resolved;
    print_step_warnings(cfg);
    let full = args.emit == "full";
    let manifest = ManifestWriter::new(
        "simulate",
        &loaded.raw_text,
        json!({
            "paths": args.paths,
            "run": args.run,
            "emit": args.emit,
            "epsilon": cfg.factor.epsilon,
        }),
        cfg.seed.master_seed,
    );
    let ensemble = simulate_ensemble(
        &cfg.pool,
        &cfg.factor,
        &cfg.grid,
        args.paths,
        &cfg.seed,
        args.run,
        EnsembleOptions { keep_paths: full },
    )?;

    let out = PathBuf::from(&args.out);
    let bytes = if full {
        let mut csv = CsvBuilder::new(&["path", "t", "loss"])?;
        let paths = ensemble.paths.as_ref().expect("requested full paths");
        for (j, path) in paths.iter().enumerate() {
            for (k, loss) in path.losses.iter().enumerate() {
                csv.row(&[
                    j.to_string(),
                    fmt_f64(cfg.grid.time(k)),
                    fmt_f64(*loss),
                ])?;
            }
        }
        csv.finish()?
    } else {
        let mut csv = CsvBuilder::new(&["path", "loss"])?;
        for (j, loss) in ensemble.terminal.iter().enumerate() {
            csv.row(&[j.to_string(), fmt_f64(*loss)])?;
        }
        csv.finish()?
    };
    manifest.emit(&out, &bytes)?;
    if args.gnuplot {
        let script = gnuplot_script(&out, "terminal losses", &[(2, "loss")]);
        manifest.emit(&out.with_extension("gp"), script.as_bytes())?;
    }
    Ok(())
}

pub fn survival(args: &SurvivalArgs) -> Result<(), CliError> {
    let loaded = load(&args.config)?;
    let cfg = &loaded.resolved;
    let manifest = ManifestWriter::new(
        "survival",
        &loaded.raw_text,
        json!({ "k": args.k }),
        cfg.seed.master_seed,
    );
    let mut csv = CsvBuilder::new(&["group", "t", "survival", "density"])?;
    for (i, group) in cfg.pool.groups.iter().enumerate() {
        let curve = survival_curve(&group.params, &ForcedPaths::zero(cfg.grid), args.k)?;
        for k in 0..=cfg.grid.n_steps {
            csv.row(&[
                i.to_string(),
                fmt_f64(cfg.grid.time(k)),
                fmt_f64(curve.survival[k]),
                fmt_f64(curve.density[k]),
            ])?;
        }
    }
    let out = PathBuf::from(&args.out);
    manifest.emit(&out, &csv.finish()?)?;
    if args.gnuplot {
        let script = gnuplot_script(&out, "survival and default density", &[(3, "S"), (4, "f")]);
        manifest.emit(&out.with_extension("gp"), script.as_bytes())?;
    }
    Ok(())
}

fn quantile_summary(samples: &[f64]) -> serde_json::Value {
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |p: f64| stats::quantile_sorted(&sorted, p);
    json!({
        "mean": stats::mean(samples),
        "std_error": stats::std_error(samples),
        "quantiles": {
            "p05": q(0.05), "p25": q(0.25), "p50": q(0.50),
            "p75": q(0.75), "p95": q(0.95), "p99": q(0.99)
        },
        "n_samples": samples.len()
    })
}

pub fn lln(args: &LlnArgs) -> Result<(), CliError> {
    let loaded = load(&args.config)?;
    let cfg = &loaded.resolved;
    let manifest = ManifestWriter::new(
        "lln",
        &loaded.raw_text,
        json!({
            "k": args.k,
            "paths": args.paths,
            "run": args.run,
            "epsilon": cfg.factor.epsilon,
        }),
        cfg.seed.master_seed,
    );
    let out = PathBuf::from(&args.out);
    let summary_path = summary_sidecar(&out);
    if cfg.factor.is_active() {
        let samples = lln_loss_distribution(
            &cfg.pool,
            &cfg.factor,
            &cfg.grid,
            args.k,
            args.paths,
            &cfg.seed,
            args.run,
        )?;
        let mut csv = CsvBuilder::new(&["path", "terminal_loss"])?;
        for (j, loss) in samples.iter().enumerate() {
            csv.row(&[j.to_string(), fmt_f64(*loss)])?;
        }
        manifest.emit(&out, &csv.finish()?)?;
        manifest.emit_json(&summary_path, &quantile_summary(&samples))?;
        if args.gnuplot {
            let script = gnuplot_script(&out, "limiting loss samples", &[(2, "terminal loss")]);
            manifest.emit(&out.with_extension("gp"), script.as_bytes())?;
        }
    } else {
        let state = solve_lln(&cfg.pool, &cfg.factor, &cfg.grid, args.k, None)?;
        let mut csv = CsvBuilder::new(&["t", "loss"])?;
        for k in 0..=cfg.grid.n_steps {
            csv.row(&[fmt_f64(cfg.grid.time(k)), fmt_f64(state.loss[k])])?;
        }
        manifest.emit(&out, &csv.finish()?)?;
        manifest.emit_json(
            &summary_path,
            &json!({
                "terminal_loss": state.terminal_loss(),
                "deterministic": true
            }),
        )?;
        if args.gnuplot {
            let script = gnuplot_script(&out, "limiting loss trajectory", &[(2, "loss")]);
            manifest.emit(&out.with_extension("gp"), script.as_bytes())?;
        }
    }
    Ok(())
}

fn summary_sidecar(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".summary.json");
    out.with_file_name(name)
}

pub fn clt(args: &CltArgs) -> Result<(), CliError> {
    let loaded = load(&args.config)?;
    let cfg = &loaded.resolved;
    let n_names = args.n_names.unwrap_or(cfg.pool.n_names);
    let manifest = ManifestWriter::new(
        "clt",
        &loaded.raw_text,
        json!({
            "kf": args.kf,
            "n_names": n_names,
            "paths": args.paths,
            "run": args.run,
            "levels": args.levels,
        }),
        cfg.seed.master_seed,
    );
    let samples = second_order_loss_samples(
        &cfg.pool,
        &cfg.factor,
        &cfg.grid,
        args.kf,
        n_names,
        args.paths,
        &cfg.seed,
        args.run,
    )?;
    let mut csv = CsvBuilder::new(&["path", "corrected_loss", "lln_loss", "xi0"])?;
    for j in 0..samples.corrected.len() {
        csv.row(&[
            j.to_string(),
            fmt_f64(samples.corrected[j]),
            fmt_f64(samples.lln_terminal[j]),
            fmt_f64(samples.xi0[j]),
        ])?;
    }
    let out = PathBuf::from(&args.out);
    manifest.emit(&out, &csv.finish()?)?;

    let corrected_risk = stats::var_es(&samples.corrected, &args.levels)?;
    let lln_risk = stats::var_es(&samples.lln_terminal, &args.levels)?;
    let report = json!({
        "n_names": n_names,
        "mean_corrected": stats::mean(&samples.corrected),
        "mean_lln": stats::mean(&samples.lln_terminal),
        "mean_xi0": stats::mean(&samples.xi0),
        "var_es_corrected": corrected_risk,
        "var_es_lln": lln_risk,
        "n_paths": samples.corrected.len()
    });
    manifest.emit_json(&report_sidecar(&out), &report)?;
    Ok(())
}

fn report_sidecar(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".report.json");
    out.with_file_name(name)
}

fn parse_curve_request(request: &str) -> Result<Vec<f64>, CliError> {
    let parts: Vec<&str> = request.split(':').collect();
    if parts.len() != 3 {
        return Err(CliError::Config(format!(
            "--curve expects lo:hi:points, got {request}"
        )));
    }
    let lo: f64 = parts[0]
        .parse()
        .map_err(|_| CliError::Config(format!("bad curve bound {}", parts[0])))?;
    let hi: f64 = parts[1]
        .parse()
        .map_err(|_| CliError::Config(format!("bad curve bound {}", parts[1])))?;
    let n: usize = parts[2]
        .parse()
        .map_err(|_| CliError::Config(format!("bad curve point count {}", parts[2])))?;
    if n < 2 || !(lo < hi) {
        return Err(CliError::Config(
            "curve request needs lo < hi and at least 2 points".into(),
        ));
    }
    Ok((0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect())
}

fn default_scale_c(cfg: &ResolvedConfig) -> f64 {
    if cfg.factor.epsilon > 0.0 {
        cfg.pool.n_names as f64 * cfg.factor.epsilon * cfg.factor.epsilon
    } else {
        f64::INFINITY
    }
}

fn extremal_csv(result: &ldp::RateResult) -> Result<Vec<u8>, CliError> {
    let grid = result.path.grid;
    let mut header: Vec<String> = vec!["t".into()];
    for i in 0..result.path.per_type_phi.len() {
        header.push(format!("phi_{i}"));
    }
    header.push("aggregate".into());
    header.push("psi".into());
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let mut csv = CsvBuilder::new(&header_refs)?;
    for k in 0..=grid.n_steps {
        let mut row = vec![fmt_f64(grid.time(k))];
        for path in &result.path.per_type_phi {
            row.push(fmt_f64(path[k]));
        }
        row.push(fmt_f64(result.path.aggregate[k]));
        row.push(fmt_f64(result.path.psi[k]));
        csv.row(&row)?;
    }
    csv.finish()
}

fn rate_report(result: &ldp::RateResult) -> serde_json::Value {
    json!({
        "ell": result.ell,
        "rate": result.value,
        "status": result.status,
        "per_type_entropy": result.per_type_entropy,
        "weights": result.weights,
        "factor_cost": result.factor_cost,
        "scale_c": if result.scale_c.is_finite() { json!(result.scale_c) } else { json!("infinite") },
        "start_values": result.start_values,
        "n_evaluations": result.n_evaluations,
        "decomposition_residual": result.decomposition_residual()
    })
}

pub fn ldp(args: &LdpArgs) -> Result<(), CliError> {
    let loaded = load(&args.config)?;
    let cfg = &loaded.resolved;
    let scale_c = args.c.unwrap_or_else(|| default_scale_c(cfg));
    let path_grid = TimeGrid::new(cfg.grid.horizon, args.path_steps)?;
    let manifest = ManifestWriter::new(
        "ldp",
        &loaded.raw_text,
        json!({
            "ell": args.ell,
            "c": if scale_c.is_finite() { json!(scale_c) } else { json!("infinite") },
            "path_steps": args.path_steps,
            "k": args.k,
            "curve": args.curve,
        }),
        cfg.seed.master_seed,
    );
    let optimizer = ldp::OptimizerConfig::default();

    if args.ell.is_none() && args.curve.is_none() {
        return Err(CliError::Config(
            "ldp needs --ell, --curve, or both".into(),
        ));
    }

    if let Some(ell) = args.ell {
        let result = ldp::rate_heterogeneous(
            &cfg.pool,
            &cfg.factor,
            scale_c,
            ell,
            &path_grid,
            args.k,
            &optimizer,
        )?;
        if result.status != ldp::OptimStatus::Converged {
            eprintln!("warning: optimizer status {:?} at ell = {ell}", result.status);
        }
        let out = PathBuf::from(&args.out);
        manifest.emit(&out, &extremal_csv(&result)?)?;
        manifest.emit_json(&report_sidecar(&out), &rate_report(&result))?;
        if args.gnuplot {
            let mut cols: Vec<(usize, String)> = (0..result.path.per_type_phi.len())
                .map(|i| (i + 2, format!("phi_{i}")))
                .collect();
            cols.push((result.path.per_type_phi.len() + 3, "psi".to_string()));
            let col_refs: Vec<(usize, &str)> =
                cols.iter().map(|(c, s)| (*c, s.as_str())).collect();
            let script = gnuplot_script(&out, "most likely failure paths", &col_refs);
            manifest.emit(&out.with_extension("gp"), script.as_bytes())?;
        }
    }

    if let Some(request) = &args.curve {
        let ells = parse_curve_request(request)?;
        let curve_out = args.curve_out.clone().ok_or_else(|| {
            CliError::Config("--curve requires --curve-out for the CSV".into())
        })?;
        let results = ldp::rate_curve(
            &cfg.pool,
            &cfg.factor,
            scale_c,
            &ells,
            &path_grid,
            args.k,
            &optimizer,
        )?;
        let mut csv = CsvBuilder::new(&["ell", "rate", "status"])?;
        for r in &results {
            csv.row(&[
                fmt_f64(r.ell),
                fmt_f64(r.value),
                format!("{:?}", r.status),
            ])?;
        }
        manifest.emit(&PathBuf::from(&curve_out), &csv.finish()?)?;
    }
    Ok(())
}

pub fn importance(args: &IsArgs) -> Result<(), CliError> {
    let loaded = load(&args.config)?;
    let cfg = &loaded.resolved;
    let manifest = ManifestWriter::new(
        "is",
        &loaded.raw_text,
        json!({
            "ell": args.ell,
            "mode": args.mode,
            "samples": args.samples,
            "n_names": args.n_names,
            "theta": args.theta,
            "beta": args.beta,
            "beta_grid": args.beta_grid,
            "pilot": args.pilot,
            "k": args.k,
            "run": args.run,
        }),
        cfg.seed.master_seed,
    );
    let report = match args.mode.as_str() {
        "independent" => {
            if !cfg.pool.is_homogeneous() {
                return Err(CliError::Config(
                    "independent mode expects a homogeneous pool; use mode heterogeneous".into(),
                ));
            }
            let params = &cfg.pool.groups[0].params;
            let n_names = args.n_names.unwrap_or(cfg.pool.n_names);
            let est = match args.theta {
                Some(theta) => is_core::estimate_independent_with_tilt(
                    params, &cfg.grid, args.k, args.ell, n_names, args.samples, theta, &cfg.seed,
                    args.run,
                )?,
                None => is_core::estimate_independent(
                    params, &cfg.grid, args.k, args.ell, n_names, args.samples, &cfg.seed,
                    args.run,
                )?,
            };
            let p = is_core::default_probability(params, &cfg.grid, args.k)?;
            json!({
                "mode": "independent",
                "estimate": est.estimate,
                "std_error": (est.sample_variance / est.n_samples as f64).sqrt(),
                "relative_error": est.relative_error,
                "q_hat": est.second_moment,
                "decay": est.decay,
                "theta": est.tilt_parameter,
                "default_probability": p,
                "n_names": n_names,
                "n_samples": est.n_samples
            })
        }
        "heterogeneous" => {
            let est = is_core::estimate_heterogeneous_independent(
                &cfg.pool, &cfg.grid, args.k, args.ell, args.samples, &cfg.seed, args.run,
            )?;
            json!({
                "mode": "heterogeneous",
                "estimate": est.estimate,
                "std_error": (est.sample_variance / est.n_samples as f64).sqrt(),
                "relative_error": est.relative_error,
                "q_hat": est.second_moment,
                "decay": est.decay,
                "theta": est.tilt_parameter,
                "n_names": cfg.pool.n_names,
                "n_samples": est.n_samples
            })
        }
        "dependent" => {
            let (beta, pilot_table) = match (&args.beta_grid, args.beta) {
                (Some(grid_text), _) => {
                    let betas: Vec<f64> = grid_text
                        .split(',')
                        .map(|s| {
                            s.trim().parse::<f64>().map_err(|_| {
                                CliError::Config(format!("bad beta value {s} in --beta-grid"))
                            })
                        })
                        .collect::<Result<_, _>>()?;
                    let selection = is_core::select_beta(
                        &cfg.pool,
                        &cfg.factor,
                        &cfg.grid,
                        args.ell,
                        &betas,
                        args.pilot,
                        &cfg.seed,
                        1000,
                    )?;
                    (
                        selection.best_beta,
                        Some(serde_json::to_value(&selection.table).unwrap()),
                    )
                }
                (None, Some(beta)) => (beta, None),
                (None, None) => {
                    return Err(CliError::Config(
                        "dependent mode needs --beta or --beta-grid".into(),
                    ))
                }
            };
            let est = is_core::estimate_dependent(
                &cfg.pool,
                &cfg.factor,
                &cfg.grid,
                args.ell,
                beta,
                args.samples,
                &cfg.seed,
                args.run,
            )?;
            let mut report = json!({
                "mode": "dependent",
                "estimate": est.estimate,
                "std_error": (est.sample_variance / est.n_samples as f64).sqrt(),
                "relative_error": est.relative_error,
                "q_hat": est.second_moment,
                "decay": est.decay,
                "beta": est.tilt_parameter,
                "n_names": cfg.pool.n_names,
                "n_samples": est.n_samples
            });
            if let Some(table) = pilot_table {
                report["pilot_table"] = table;
            }
            report
        }
        other => {
            return Err(CliError::Config(format!("unknown is mode {other}")));
        }
    };
    manifest.emit_json(&PathBuf::from(&args.out), &report)?;
    Ok(())
}

pub fn var(args: &VarArgs) -> Result<(), CliError> {
    let loaded = load(&args.config)?;
    let cfg = &loaded.resolved;
    let manifest = ManifestWriter::new(
        "var",
        &loaded.raw_text,
        json!({
            "levels": args.levels,
            "paths": args.paths,
            "kf": args.kf,
            "k": args.k,
            "run": args.run,
        }),
        cfg.seed.master_seed,
    );
    let exact = simulate_ensemble(
        &cfg.pool,
        &cfg.factor,
        &cfg.grid,
        args.paths,
        &cfg.seed,
        args.run,
        EnsembleOptions::default(),
    )?;
    let exact_risk = stats::var_es(&exact.terminal, &args.levels)?;

    let lln_samples = if cfg.factor.is_active() {
        lln_loss_distribution(
            &cfg.pool, &cfg.factor, &cfg.grid, args.k, args.paths, &cfg.seed,
            args.run + 1,
        )?
    } else {
        let state = solve_lln(&cfg.pool, &cfg.factor, &cfg.grid, args.k, None)?;
        vec![state.terminal_loss(); 1]
    };
    let lln_risk = stats::var_es(&lln_samples, &args.levels)?;

    let clt_risk = if cfg.pool.is_homogeneous() {
        let samples = second_order_loss_samples(
            &cfg.pool,
            &cfg.factor,
            &cfg.grid,
            args.kf,
            cfg.pool.n_names,
            args.paths,
            &cfg.seed,
            args.run + 2,
        )?;
        Some(stats::var_es(&samples.corrected, &args.levels)?)
    } else {
        eprintln!("warning: heterogeneous pool; second-order columns omitted");
        None
    };

    let mut header = vec!["level", "var_exact", "es_exact", "var_lln", "es_lln"];
    if clt_risk.is_some() {
        header.push("var_clt");
        header.push("es_clt");
    }
    let mut csv = CsvBuilder::new(&header)?;
    for (i, level) in args.levels.iter().enumerate() {
        let mut row = vec![
            fmt_f64(*level),
            fmt_f64(exact_risk[i].var),
            fmt_f64(exact_risk[i].es),
            fmt_f64(lln_risk[i].var),
            fmt_f64(lln_risk[i].es),
        ];
        if let Some(clt_rows) = &clt_risk {
            row.push(fmt_f64(clt_rows[i].var));
            row.push(fmt_f64(clt_rows[i].es));
        }
        csv.row(&row)?;
    }
    manifest.emit(&PathBuf::from(&args.out), &csv.finish()?)?;
    Ok(())
}

pub fn reproduce_table1(args: &ReproduceArgs) -> Result<(), CliError> {
    use poolrisk_core::model::{FactorKind, PoolGroup, PoolSpec, TypeParams};

    let mk_group = |beta_c: f64, weight: f64| PoolGroup {
        params: TypeParams {
            lambda0: 0.2,
            alpha: 0.5,
            lambda_bar: 2.0,
            sigma: 0.5,
            beta_c,
            beta_s: 1.0,
        },
        weight,
    };
    let n_names = 200usize;
    let pool_contagion = PoolSpec {
        groups: vec![
            mk_group(10.0, 1.0 / 6.0),
            mk_group(3.0, 1.0 / 3.0),
            mk_group(1.0, 0.5),
        ],
        n_names,
    };
    let mut pool_independent = pool_contagion.clone();
    for g in &mut pool_independent.groups {
        g.params.beta_c = 0.0;
    }
    let epsilon = 1.0 / (n_names as f64).sqrt();
    let factor = FactorSpec {
        kind: FactorKind::Ou {
            gamma: 1.0,
            vol: 1.0,
            mean: 0.0,
        },
        x0: 0.0,
        epsilon,
    };
    let scale_c = n_names as f64 * epsilon * epsilon; // = 1
    let sim_grid = TimeGrid::new(1.0, 500)?;
    let path_grid = TimeGrid::new(1.0, args.path_steps)?;
    let seed = SeedSpec::new(args.seed);
    let config_stamp = "built-in three-type test portfolio (alpha 0.5, lambda_bar 2, sigma 0.5, \
                        lambda0 0.2, gamma 1, beta_s 1; beta_c 10/3/1; weights 1/6, 1/3, 1/2; \
                        N = 200; eps = 1/sqrt(N))";
    let manifest = ManifestWriter::new(
        "reproduce-table1",
        config_stamp,
        json!({
            "ell_points": args.ell_points,
            "paths": args.paths,
            "path_steps": args.path_steps,
        }),
        args.seed,
    );
    let dir = PathBuf::from(&args.out_dir);

    // Typical losses from the deterministic limit, cross-checked by exact
    // simulation at the published pool size.
    let lln_contagion =
        solve_lln(&pool_contagion, &FactorSpec::none(), &sim_grid, 12, None)?.terminal_loss();
    let lln_independent =
        solve_lln(&pool_independent, &FactorSpec::none(), &sim_grid, 12, None)?.terminal_loss();
    let exact_contagion = simulate_ensemble(
        &pool_contagion,
        &factor,
        &sim_grid,
        args.paths,
        &seed,
        0,
        EnsembleOptions::default(),
    )?;
    let exact_independent = simulate_ensemble(
        &pool_independent,
        &factor,
        &sim_grid,
        args.paths,
        &seed,
        1,
        EnsembleOptions::default(),
    )?;
    let typical = json!({
        "contagion": {
            "lln_loss": lln_contagion,
            "exact_mean": stats::mean(&exact_contagion.terminal),
            "exact_std_error": stats::std_error(&exact_contagion.terminal)
        },
        "independent": {
            "lln_loss": lln_independent,
            "exact_mean": stats::mean(&exact_independent.terminal),
            "exact_std_error": stats::std_error(&exact_independent.terminal)
        },
        "published": { "contagion": 0.721, "independent": 0.425 }
    });
    manifest.emit_json(&dir.join("typical_losses.json"), &typical)?;

    // Rate curves for both cases, from just above the typical loss to 0.95.
    let optimizer = ldp::OptimizerConfig::default();
    let mut curve_summary = Vec::new();
    for (label, pool, lln_loss) in [
        ("contagion", &pool_contagion, lln_contagion),
        ("independent", &pool_independent, lln_independent),
    ] {
        let lo = (lln_loss + 0.02).min(0.94);
        let ells: Vec<f64> = (0..args.ell_points)
            .map(|i| lo + (0.95 - lo) * i as f64 / (args.ell_points - 1).max(1) as f64)
            .collect();
        let results = ldp::rate_curve(
            pool,
            &factor,
            scale_c,
            &ells,
            &path_grid,
            12,
            &optimizer,
        )?;
        let mut csv = CsvBuilder::new(&["ell", "rate", "status"])?;
        for r in &results {
            csv.row(&[
                fmt_f64(r.ell),
                fmt_f64(r.value),
                format!("{:?}", r.status),
            ])?;
        }
        manifest.emit(&dir.join(format!("rate_curve_{label}.csv")), &csv.finish()?)?;
        curve_summary.push(json!({
            "case": label,
            "zero_at": lln_loss,
            "points": results.iter().map(|r| json!([r.ell, r.value])).collect::<Vec<_>>()
        }));
    }

    // Extremal paths at ℓ = 0.81 for both cases.
    let mut extremal_summary = Vec::new();
    for (label, pool) in [
        ("contagion", &pool_contagion),
        ("independent", &pool_independent),
    ] {
        let result = ldp::rate_heterogeneous(
            pool,
            &factor,
            scale_c,
            0.81,
            &path_grid,
            12,
            &optimizer,
        )?;
        manifest.emit(
            &dir.join(format!("extremals_{label}.csv")),
            &extremal_csv(&result)?,
        )?;
        manifest.emit_json(
            &dir.join(format!("extremals_{label}.report.json")),
            &rate_report(&result),
        )?;
        extremal_summary.push(json!({
            "case": label,
            "ell": 0.81,
            "rate": result.value,
            "psi_first_half_increment":
                result.path.psi[path_grid.n_steps / 2] - result.path.psi[0],
            "psi_second_half_increment":
                result.path.psi[path_grid.n_steps] - result.path.psi[path_grid.n_steps / 2]
        }));
    }

    let report = json!({
        "portfolio": config_stamp,
        "typical_losses": typical,
        "rate_curves": curve_summary,
        "extremals": extremal_summary
    });
    manifest.emit_json(&dir.join("report.json"), &report)?;
    println!(
        "{}",
        sorted_json(&json!({
            "out_dir": args.out_dir,
            "lln_loss_contagion": lln_contagion,
            "lln_loss_independent": lln_independent
        }))
        .unwrap_or_default()
    );
    Ok(())
}
