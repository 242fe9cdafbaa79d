use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use lcen::datagen::{
    gen_linear5, gen_multicollinear, gen_quartic, gen_relativistic, kepler_data, load_csv, load_inputs, CsvOptions,
    KeplerVersion, MassRange, NoiseSpec, Sidecar,
};
use lcen::diagnostics::metrics;
use lcen::pipeline::fmt_sig;
use lcen::{fit_pipeline, sparsify, vif as vif_values, CvResult, Dataset, FittedModel, History, PipelineSpec};

use crate::config::RunConfig;
use crate::CliError;

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn csv_options(cfg: &RunConfig) -> Result<CsvOptions, CliError> {
    Ok(CsvOptions {
        delimiter: cfg.delimiter()?,
    })
}

fn load_model(path: &Path) -> Result<FittedModel, CliError> {
    Ok(FittedModel::from_json(&std::fs::read_to_string(path)?)?)
}

fn warn_degenerate(model: &FittedModel) {
    for w in &model.warnings {
        eprintln!("warning: {w}");
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let ext = path
        .extension()
        .map(|e| format!(".{}", e.to_string_lossy()))
        .unwrap_or_default();
    path.with_file_name(format!("{stem}_{suffix}{ext}"))
}

fn noise(cfg: &RunConfig, seed: u64) -> Result<NoiseSpec, CliError> {
    Ok(match cfg.optional::<f64>("noise_variance")? {
        Some(v) => NoiseSpec::variance(v, seed),
        None => NoiseSpec::level(cfg.get("noise")?, seed),
    })
}

pub fn gen(cfg: &RunConfig, generator: &str, out: &Path) -> Result<(), CliError> {
    let seed: u64 = cfg.get("seed")?;
    let n: usize = cfg.get("n")?;
    let mut written = Vec::new();
    let single = match generator {
        "linear5" => Some(gen_linear5(n, noise(cfg, seed)?)?),
        "multicollinear" => Some(gen_multicollinear(
            n,
            NoiseSpec::level(cfg.get("eps1")?, seed),
            NoiseSpec::level(cfg.get("eps2")?, seed.wrapping_add(1)),
        )?),
        "relativistic" => Some(gen_relativistic(
            n,
            MassRange::from_max(cfg.get("mass_max")?)?,
            noise(cfg, seed)?,
        )?),
        "kepler" => {
            let version = match cfg.raw("kepler_version") {
                "modern" => KeplerVersion::Modern,
                "original1619" | "1619" => KeplerVersion::Original1619,
                other => {
                    return Err(CliError::Usage(format!(
                        "unknown kepler_version '{other}' (modern, original1619)"
                    )))
                }
            };
            Some(kepler_data(version))
        }
        "quartic" => {
            let (train, test) = gen_quartic(cfg.get("n_train")?, cfg.get("n_test")?, noise(cfg, seed)?)?;
            for (part, g) in [("train", train), ("test", test)] {
                let path = with_suffix(out, part);
                g.write(&path)?;
                written.push((path, g.data.nrows()));
            }
            None
        }
        other => {
            return Err(CliError::Usage(format!(
                "unknown generator '{other}' (linear5, multicollinear, relativistic, quartic, kepler)"
            )))
        }
    };
    if let Some(g) = single {
        g.write(out)?;
        written.push((out.to_path_buf(), g.data.nrows()));
    }
    let mut report = cfg.echo("gen");
    for (path, rows) in written {
        writeln!(
            report,
            "wrote {} ({rows} rows) and {}",
            path.display(),
            path.with_extension("json").display()
        )
        .unwrap();
    }
    print!("{report}");
    Ok(())
}

fn cv_rows(stage: &str, cv: &CvResult, out: &mut String) {
    for r in &cv.records {
        let mse = r.mean_mse.map_or("NA".to_string(), |m| m.to_string());
        let folds: Vec<String> = r.fold_mse.iter().map(f64::to_string).collect();
        let error = r.error.clone().unwrap_or_default();
        writeln!(
            out,
            "{stage}\t{}\t{}\t{}\t{}\t{mse}\t{}\t{error}",
            r.degree,
            r.lag,
            r.alpha,
            r.l1_ratio,
            folds.join(";")
        )
        .unwrap();
    }
}

fn best_rows(cv: &CvResult, k: usize) -> String {
    let mut rows: Vec<_> = cv.records.iter().filter(|r| r.mean_mse.is_some()).collect();
    rows.sort_by(|a, b| a.mean_mse.unwrap().total_cmp(&b.mean_mse.unwrap()));
    let mut out = String::from("    degree\tlag\talpha\tl1_ratio\tmean_mse\n");
    for r in rows.into_iter().take(k) {
        writeln!(
            out,
            "    {}\t{}\t{}\t{}\t{}",
            r.degree,
            r.lag,
            fmt_sig(r.alpha, 4),
            r.l1_ratio,
            fmt_sig(r.mean_mse.unwrap(), 6)
        )
        .unwrap();
    }
    out
}

fn fit_report(cfg: &RunConfig, model: &FittedModel, seconds: f64) -> String {
    let h = &model.hyperparameters;
    let mut r = cfg.echo("fit");
    writeln!(r, "pipeline: {}", model.pipeline).unwrap();
    writeln!(r, "model: {}", model.equation()).unwrap();
    writeln!(r, "selected terms ({}):", model.n_features_selected).unwrap();
    for ((t, b), s) in model.terms.iter().zip(&model.unscaled_beta).zip(&model.scaled_beta) {
        writeln!(
            r,
            "    {}\t{}\t(scaled {})",
            t.display_named(&model.feature_names, &model.target_name),
            fmt_sig(*b, 6),
            fmt_sig(*s, 4)
        )
        .unwrap();
    }
    writeln!(r, "    intercept\t{}", fmt_sig(model.intercept, 6)).unwrap();
    writeln!(
        r,
        "hyperparameters: degree={} lag={} cutoff={} first_stage_alpha={} alpha={} l1_ratio={}",
        h.degree,
        h.lag,
        h.cutoff,
        fmt_sig(h.first_stage_alpha, 4),
        fmt_sig(h.alpha, 4),
        h.l1_ratio
    )
    .unwrap();
    let first = &model.cv_table.first;
    writeln!(
        r,
        "first-stage cross-validation ({} folds, {} combinations), best rows:",
        first.folds,
        first.records.len()
    )
    .unwrap();
    r.push_str(&best_rows(first, 5));
    if let Some(second) = &model.cv_table.second {
        writeln!(
            r,
            "second-stage cross-validation ({} combinations), best rows:",
            second.records.len()
        )
        .unwrap();
        r.push_str(&best_rows(second, 5));
    }
    writeln!(r, "train RMSE: {}", fmt_sig(model.train_metrics.rmse, 6)).unwrap();
    for w in &model.warnings {
        writeln!(r, "warning: {w}").unwrap();
    }
    writeln!(r, "runtime: {seconds:.3} s").unwrap();
    r
}

pub fn fit(cfg: &RunConfig, data: &Path, out: Option<&Path>, cv_out: Option<&Path>) -> Result<(), CliError> {
    let settings = cfg.fit_settings()?;
    let spec = cfg.pipeline()?;
    let dataset = load_csv(data, cfg.raw("target"), &csv_options(cfg)?)?;
    let start = Instant::now();
    let model = fit_pipeline(&dataset, &settings, &spec)?;
    let seconds = start.elapsed().as_secs_f64();
    warn_degenerate(&model);
    if let Some(path) = out {
        std::fs::write(path, model.to_json()? + "\n")?;
    }
    if let Some(path) = cv_out {
        let mut t = cfg.echo("fit");
        t.push_str("stage\tdegree\tlag\talpha\tl1_ratio\tmean_mse\tfold_mse\terror\n");
        cv_rows("first", &model.cv_table.first, &mut t);
        if let Some(second) = &model.cv_table.second {
            cv_rows("second", second, &mut t);
        }
        std::fs::write(path, t)?;
    }
    print!("{}", fit_report(cfg, &model, seconds));
    Ok(())
}

fn metric_lines(y: &[f64], pred: &[f64]) -> Result<String, CliError> {
    let m = metrics(y, pred)?;
    let mre = m.mean_relative_error.map_or("NA".to_string(), |v| v.to_string());
    Ok(format!(
        "# rmse={}\n# mse={}\n# mean_relative_error_percent={mre}\n",
        m.rmse, m.mse
    ))
}

pub fn predict(cfg: &RunConfig, model_path: &Path, data: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let model = load_model(model_path)?;
    let (x, y) = load_inputs(data, &model.feature_names, &model.target_name, &csv_options(cfg)?)?;
    let pred = model.predict(&x, y.as_ref())?;
    let lag = model.lag();
    let mut report = cfg.echo("predict");
    writeln!(report, "# model={} ({})", model_path.display(), model.pipeline).unwrap();
    if let Some(y) = &y {
        report.push_str(&metric_lines(&y.as_slice()[lag..], &pred)?);
    }
    let mut table = String::from("row,prediction\n");
    for (i, p) in pred.iter().enumerate() {
        writeln!(table, "{},{p}", i + lag).unwrap();
    }
    match out {
        Some(path) => {
            std::fs::write(path, table)?;
            writeln!(report, "wrote {} predictions to {}", pred.len(), path.display()).unwrap();
            print!("{report}");
        }
        None => print!("{report}{table}"),
    }
    Ok(())
}

pub fn forecast(
    cfg: &RunConfig,
    model_path: &Path,
    history: &Path,
    future: Option<&Path>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let model = load_model(model_path)?;
    let horizon: usize = cfg.get("horizon")?;
    let opts = csv_options(cfg)?;
    let (x, y) = load_inputs(history, &model.feature_names, &model.target_name, &opts)?;
    let y = y.ok_or_else(|| missing_target(&model.target_name, history))?;
    let hist = History::from_series(&x, &y, x.nrows(), model.lag());
    let future_x = match future {
        Some(path) => Some(load_inputs(path, &model.feature_names, &model.target_name, &opts)?.0),
        None => None,
    };
    let steps = model.forecast(&hist, horizon, future_x.as_ref())?;
    let mut table = String::from("step,forecast\n");
    for (h, v) in steps.iter().enumerate() {
        writeln!(table, "{},{v}", h + 1).unwrap();
    }
    let mut report = cfg.echo("forecast");
    writeln!(report, "# model={} ({})", model_path.display(), model.pipeline).unwrap();
    match out {
        Some(path) => {
            std::fs::write(path, table)?;
            writeln!(report, "wrote {horizon} forecast steps to {}", path.display()).unwrap();
            print!("{report}");
        }
        None => print!("{report}{table}"),
    }
    Ok(())
}

fn missing_target(target: &str, path: &Path) -> CliError {
    CliError::Lcen(lcen::LcenError::Data(format!(
        "{} has no '{target}' column",
        path.display()
    )))
}

fn validation_rmse(model: &FittedModel) -> String {
    let cv = model.cv_table.second.as_ref().unwrap_or(&model.cv_table.first);
    cv.chosen().mean_mse.map_or("NA".to_string(), |m| m.sqrt().to_string())
}

fn test_rmse(
    model: &FittedModel,
    test: Option<&(nalgebra::DMatrix<f64>, nalgebra::DVector<f64>)>,
) -> Result<String, CliError> {
    let Some((x, y)) = test else {
        return Ok("NA".to_string());
    };
    let pred = model.predict(x, Some(y))?;
    Ok(metrics(&y.as_slice()[model.lag()..], &pred)?.rmse.to_string())
}

fn terms_cell(model: &FittedModel) -> String {
    model
        .terms
        .iter()
        .map(|t| t.display_named(&model.feature_names, &model.target_name))
        .collect::<Vec<_>>()
        .join(";")
}

pub fn sweep(cfg: &RunConfig, data: &Path, test: Option<&Path>, out: Option<&Path>) -> Result<(), CliError> {
    let cutoffs: Vec<f64> = cfg.list("cutoffs")?;
    if cutoffs.is_empty() {
        return Err(CliError::Usage(
            "sweep needs at least one cutoff (--cutoffs 0.01,0.1)".into(),
        ));
    }
    let opts = csv_options(cfg)?;
    let full = load_csv(data, cfg.raw("target"), &opts)?;
    let (train, held_out) = match test {
        Some(path) => {
            let (x, y) = load_inputs(path, &full.feature_names, &full.target_name, &opts)?;
            let y = y.ok_or_else(|| missing_target(&full.target_name, path))?;
            (full, Some((x, y)))
        }
        None => {
            let fraction: f64 = cfg.get("test_fraction")?;
            if !(0.0..1.0).contains(&fraction) {
                return Err(CliError::Usage(format!(
                    "test_fraction must lie in [0, 1), got {fraction}"
                )));
            }
            let n_test = (full.nrows() as f64 * fraction).round() as usize;
            let n_train = full.nrows() - n_test;
            let held = (n_test > 0).then(|| split(&full, n_train));
            (full.slice_rows(0, n_train), held)
        }
    };
    let mut settings = cfg.fit_settings()?;
    settings.grid.cutoff = cutoffs[0];
    let model = fit_pipeline(&train, &settings, &cfg.pipeline()?)?;
    let mut models = vec![model.clone()];
    models.extend(sparsify(&model, &train, &cutoffs[1..])?);
    let mut t = cfg.echo("sweep");
    t.push_str("cutoff\tn_features\tval_rmse\ttest_rmse\tterms\n");
    for (c, m) in cutoffs.iter().zip(&models) {
        warn_degenerate(m);
        writeln!(
            t,
            "{c}\t{}\t{}\t{}\t{}",
            m.n_features_selected,
            validation_rmse(m),
            test_rmse(m, held_out.as_ref())?,
            terms_cell(m)
        )
        .unwrap();
    }
    emit(out, &t)
}

fn split(data: &Dataset, at: usize) -> (nalgebra::DMatrix<f64>, nalgebra::DVector<f64>) {
    let rest = data.slice_rows(at, data.nrows() - at);
    (rest.x, rest.y)
}

fn coefficient_error(model: &FittedModel, truth: &Sidecar) -> f64 {
    truth
        .true_support
        .iter()
        .zip(&truth.true_coefficients)
        .map(|(t, c)| match model.terms.iter().position(|m| m == t) {
            Some(j) => 100.0 * (model.unscaled_beta[j] - c).abs() / c.abs(),
            None => 100.0,
        })
        .fold(0.0, f64::max)
}

pub fn ablate(
    cfg: &RunConfig,
    data: &Path,
    truth: Option<&Path>,
    timing: bool,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let settings = cfg.fit_settings()?;
    let dataset = load_csv(data, cfg.raw("target"), &csv_options(cfg)?)?;
    let truth: Option<Sidecar> = match truth {
        Some(path) => Some(serde_json::from_str(&std::fs::read_to_string(path)?).map_err(lcen::LcenError::from)?),
        None => None,
    };
    let mut t = cfg.echo("ablate");
    t.push_str("pipeline\tn_features\tval_rmse\ttrain_rmse");
    if truth.is_some() {
        t.push_str("\tmax_coef_error_percent");
    }
    if timing {
        t.push_str("\truntime_s");
    }
    t.push_str("\tequation\n");
    for (name, spec) in PipelineSpec::NAMED {
        let start = Instant::now();
        let model = fit_pipeline(&dataset, &settings, &spec)?;
        let seconds = start.elapsed().as_secs_f64();
        write!(
            t,
            "{name}\t{}\t{}\t{}",
            model.n_features_selected,
            validation_rmse(&model),
            model.train_metrics.rmse
        )
        .unwrap();
        if let Some(truth) = &truth {
            write!(t, "\t{}", coefficient_error(&model, truth)).unwrap();
        }
        if timing {
            write!(t, "\t{seconds:.4}").unwrap();
        }
        writeln!(t, "\t{}", model.equation()).unwrap();
    }
    emit(out, &t)
}

pub fn vif(cfg: &RunConfig, data: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let dataset = load_csv(data, cfg.raw("target"), &csv_options(cfg)?)?;
    let values = vif_values(&dataset.x)?;
    let mut t = cfg.echo("vif");
    t.push_str("feature\tvif\n");
    for (name, v) in dataset.feature_names.iter().zip(values) {
        writeln!(
            t,
            "{name}\t{}",
            if v.is_infinite() {
                "inf".to_string()
            } else {
                v.to_string()
            }
        )
        .unwrap();
    }
    emit(out, &t)
}
