use std::path::Path;

use serde_json::{json, Map, Value};

use robreg_core::selection::{default_alpha_grid, SelectionConfig};
use robreg_core::simulation::{run_study, Contamination, SimulationConfig, SimulationReport};
use robreg_core::{
    adaptive_alpha, fit_huber_pilot, fit_mdpde, influence_curve, kkt_residual, read_csv, robust_standardize,
    select_lambda, unstandardize_model, CsvData, Dataset, FitConfig, FittedModel, Init, PenaltyFamily,
    PenaltySpec, Standardizer,
};

use crate::args::{AlphaChoice, FitArgs, GlobalArgs, InfluenceArgs, InitArg, PenaltyArgs, SelectArgs, SimulateArgs};
use crate::output::{emit, fmt_float, sha256_hex, table_path, to_value, write_table, Manifest};
use crate::CliError;

const INTERCEPT: &str = "(intercept)";

struct Input {
    csv: CsvData<f64>,
    sha256: String,
}

fn load(g: &GlobalArgs) -> Result<Input, CliError> {
    let path = g.csv.as_ref().ok_or_else(|| CliError::Usage("missing required flag --csv <path>".into()))?;
    let response = g
        .response
        .as_deref()
        .ok_or_else(|| CliError::Usage("missing required flag --response <column>".into()))?;
    let bytes = std::fs::read(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let csv = read_csv(&bytes[..], response)?;
    Ok(Input {
        csv,
        sha256: sha256_hex(&bytes),
    })
}

fn names(csv: &CsvData<f64>) -> Vec<String> {
    std::iter::once(INTERCEPT.to_string()).chain(csv.predictors.iter().cloned()).collect()
}

fn standardize(d: &Dataset<f64>, skip: bool) -> Result<(Dataset<f64>, Standardizer<f64>), CliError> {
    if skip {
        Ok((d.clone(), Standardizer::identity(d.p())))
    } else {
        Ok(robust_standardize(d)?)
    }
}

fn penalty(p: &PenaltyArgs) -> Result<PenaltySpec<f64>, CliError> {
    Ok(PenaltySpec::new(p.penalty, p.lambda, p.scad_a)?)
}

/// Original-scale coefficients and scale plus diagnostics of a standardized-scale fit.
fn model_json(m: &FittedModel<f64>, st: &Standardizer<f64>, names: &[String]) -> Value {
    let orig = unstandardize_model(m, st);
    json!({
        "beta": orig.theta.beta.as_slice(),
        "sigma": orig.theta.sigma,
        "active": m.active.indices(),
        "active_names": m.active.indices().iter().map(|&j| names[j].as_str()).collect::<Vec<_>>(),
        "converged": m.converged,
        "iters": m.outer_iters,
        "loss": m.loss,
        "sigma_equation_residual": m.sigma_equation_residual,
        "inner_converged": m.inner_converged,
    })
}

fn warn_unconverged(m: &FittedModel<f64>) {
    if !m.converged {
        eprintln!("warning: NoConvergence: outer iterations exhausted after {}", m.outer_iters);
    }
}

fn scale_json(st: &Standardizer<f64>, standardized: bool) -> Value {
    json!({
        "standardized": standardized,
        "x_centers": st.centers.as_slice(),
        "x_scales": st.scales.as_slice(),
        "y_center": st.y_center,
        "y_scale": st.y_scale,
    })
}

pub fn cmd_fit(g: &GlobalArgs, a: &FitArgs) -> Result<(), CliError> {
    let input = load(g)?;
    let d = &input.csv.dataset;
    let (ds, st) = standardize(d, a.no_standardize)?;
    let mut cfg = FitConfig::new(a.alpha, penalty(&a.penalty)?).with_init(match a.init {
        InitArg::Ols => Init::Ols,
        InitArg::Huber => Init::HuberPilot,
    });
    cfg.max_outer_iters = a.max_iters;
    cfg.tol = a.tol;
    let config = to_value(&cfg)?;
    let manifest = Manifest::new(config, g.seed, Some(input.sha256));

    let m = fit_mdpde(&ds, &cfg)?;
    warn_unconverged(&m);
    let names = names(&input.csv);
    let mut body = Map::new();
    body.insert("response".into(), Value::from(input.csv.response.clone()));
    body.insert("predictors".into(), to_value(&names)?);
    body.insert("alpha".into(), Value::from(a.alpha));
    body.insert("penalty".into(), to_value(&m.penalty)?);
    if let Value::Object(fields) = model_json(&m, &st, &names) {
        body.extend(fields);
    }
    body.insert("kkt_residual".into(), Value::from(kkt_residual(&m, &ds)));
    body.insert("scaling".into(), scale_json(&st, !a.no_standardize));
    emit(body, manifest, g.out.as_deref())
}

pub fn cmd_select(g: &GlobalArgs, a: &SelectArgs) -> Result<(), CliError> {
    if matches!(a.penalty, PenaltyFamily::None) {
        return Err(CliError::Usage("--penalty must be l1 or scad for select".into()));
    }
    let input = load(g)?;
    let (ds, st) = robust_standardize(&input.csv.dataset)?;
    let mut cfg = SelectionConfig::new(a.criterion);
    cfg.n_grid = a.grid_size;
    cfg.cp_variant = a.rcp_variant;
    cfg.aic_form = a.aic_form;
    cfg.family = a.penalty;
    cfg.scad_a = a.scad_a;
    let mut config = to_value(&cfg)?;
    config["alpha"] = match a.alpha {
        AlphaChoice::Fixed(v) => Value::from(v),
        AlphaChoice::Adaptive => Value::from("adaptive"),
    };
    config["alpha_step"] = Value::from(a.alpha_step);
    let manifest = Manifest::new(config, g.seed, Some(input.sha256));

    let (sel, adaptive) = match a.alpha {
        AlphaChoice::Fixed(alpha) => (select_lambda(&ds, alpha, &cfg)?, None),
        AlphaChoice::Adaptive => {
            let grid = alpha_grid(a.alpha_step)?;
            let pilot = fit_huber_pilot(&ds)?;
            let r = adaptive_alpha(&ds, &pilot, &grid, &cfg)?;
            log::info!("adaptive alpha chose {}", r.alpha_star);
            (r.selection, Some(r.records))
        }
    };
    warn_unconverged(&sel.model);
    let names = names(&input.csv);

    // one row per grid point; criterion columns stay empty where the fit failed
    let rows: Vec<Vec<String>> = sel
        .grid
        .iter()
        .zip(&sel.models)
        .map(|(&lam, m)| {
            let v = sel.values.iter().find(|v| v.lambda == lam);
            vec![
                fmt_float(lam),
                v.map_or(String::new(), |v| fmt_float(v.value)),
                v.map_or(String::new(), |v| fmt_float(v.df)),
                m.as_ref().map_or(String::new(), |m| fmt_float(m.theta.sigma * st.y_scale)),
                m.as_ref().map_or(String::new(), |m| m.active.predictors().count().to_string()),
            ]
        })
        .collect();

    let mut body = Map::new();
    body.insert("response".into(), Value::from(input.csv.response.clone()));
    body.insert("predictors".into(), to_value(&names)?);
    body.insert("criterion".into(), to_value(&sel.criterion)?);
    body.insert("alpha".into(), Value::from(sel.alpha));
    body.insert("chosen_lambda".into(), Value::from(sel.chosen_lambda));
    body.insert("lambda_scale".into(), Value::from("standardized"));
    body.insert("sigma_u".into(), to_value(&sel.sigma_u)?);
    body.insert("model".into(), model_json(&sel.model, &st, &names));
    body.insert("path".into(), to_value(&sel.values)?);
    body.insert("failures".into(), to_value(&sel.failures)?);
    if let Some(records) = adaptive {
        body.insert("alpha_records".into(), to_value(&records)?);
    }
    body.insert("scaling".into(), scale_json(&st, true));
    if let Some(out) = g.out.as_deref() {
        let header = ["lambda", "criterion", "df", "sigma", "active_count"].map(String::from);
        write_table(&table_path(out, "lambda"), &header, &rows)?;
    }
    emit(body, manifest, g.out.as_deref())
}

fn alpha_grid(step: f64) -> Result<Vec<f64>, CliError> {
    if (step - 0.0125).abs() < 1e-15 {
        return Ok(default_alpha_grid());
    }
    if !(step > 0.0 && step <= 1.0) {
        return Err(CliError::Usage(format!("--alpha-step must be in (0, 1], got {step}")));
    }
    let k = (1.0 / step).round() as usize;
    Ok((0..=k).map(|i| (i as f64 * step).min(1.0)).collect())
}

pub fn cmd_influence(g: &GlobalArgs, a: &InfluenceArgs) -> Result<(), CliError> {
    if a.probe_steps < 2 || !(a.probe_max > a.probe_min) {
        return Err(CliError::Usage("need --probe-steps >= 2 and --probe-max > --probe-min".into()));
    }
    let input = load(g)?;
    let (ds, st) = robust_standardize(&input.csv.dataset)?;
    let cfg = FitConfig::new(a.alpha, penalty(&a.penalty)?);
    let mut config = to_value(&cfg)?;
    config["probe_min"] = Value::from(a.probe_min);
    config["probe_max"] = Value::from(a.probe_max);
    config["probe_steps"] = Value::from(a.probe_steps);
    let manifest = Manifest::new(config, g.seed, Some(input.sha256));

    let m = fit_mdpde(&ds, &cfg)?;
    warn_unconverged(&m);
    let h = (a.probe_max - a.probe_min) / (a.probe_steps - 1) as f64;
    let probes: Vec<f64> = (0..a.probe_steps).map(|k| a.probe_min + k as f64 * h).collect();
    let curve = influence_curve(&m, &ds, a.alpha, &probes)?;
    let names = names(&input.csv);

    let mut body = Map::new();
    body.insert("response".into(), Value::from(input.csv.response.clone()));
    body.insert("predictors".into(), to_value(&names)?);
    body.insert("alpha".into(), Value::from(a.alpha));
    body.insert("scale".into(), Value::from("standardized"));
    body.insert(
        "probe_definition".into(),
        Value::from("t_i = fitted value + probe on the standardized response scale"),
    );
    body.insert("theta_g".into(), Value::from("plug-in: the fitted parameters stand in for the true ones"));
    body.insert(
        "theta".into(),
        json!({"beta": m.theta.beta.as_slice(), "sigma": m.theta.sigma, "active": m.active.indices()}),
    );
    body.insert("sup_norm".into(), Value::from(curve.sup_norm));
    body.insert("probes".into(), to_value(&curve.points)?);
    body.insert("norms".into(), to_value(&curve.norms)?);
    body.insert("scaling".into(), scale_json(&st, true));
    if let Some(out) = g.out.as_deref() {
        let mut header = vec!["probe".to_string()];
        header.extend(names.iter().map(|n| format!("if_{n}")));
        header.extend(["if_sigma2".to_string(), "norm".to_string()]);
        let rows: Vec<Vec<String>> = (0..probes.len())
            .map(|k| {
                let mut r = vec![fmt_float(probes[k])];
                r.extend(curve.if_values.column(k).iter().map(|&v| fmt_float(v)));
                r.push(fmt_float(curve.norms[k]));
                r
            })
            .collect();
        write_table(&table_path(out, "influence"), &header, &rows)?;
    } else {
        let cols: Vec<Vec<f64>> = (0..probes.len()).map(|k| curve.if_values.column(k).iter().copied().collect()).collect();
        body.insert("if_values".into(), to_value(&cols)?);
    }
    emit(body, manifest, g.out.as_deref())
}

fn study_config(g: &GlobalArgs, a: &SimulateArgs) -> Result<SimulationConfig, CliError> {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
        None => {
            let contamination = if a.tau > 0.0 {
                Contamination::Point {
                    tau: a.tau,
                    mu_c_in_sigmas: a.mu_c,
                }
            } else {
                Contamination::None
            };
            let mut c = SimulationConfig::new(a.n, a.snr, contamination, a.replicates, 0);
            c.p = a.p;
            c.rho = a.rho;
            c.sparsity = a.sparsity;
            c.test_size = a.test_size;
            c.grid_size = a.grid_size;
            c.rcp_variant = a.rcp_variant;
            if let Some(e) = &a.estimators {
                c.estimators = e.clone();
            }
            c
        }
    };
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// The four panels: clean at SNR 1 and 10, then 1% outliers at 10 sigma (SNR 1)
/// and 5% outliers at 5 sigma (SNR 10).
fn figure1_panels(base: &SimulationConfig, sizes: &[usize]) -> Vec<(String, SimulationConfig)> {
    let specs = [("a", 1.0, 0.0, 0.0), ("b", 10.0, 0.0, 0.0), ("c", 1.0, 0.01, 10.0), ("d", 10.0, 0.05, 5.0)];
    let mut out = Vec::new();
    for (label, snr, tau, mu_c) in specs {
        for &n in sizes {
            let mut c = base.clone();
            c.n = n;
            c.snr = snr;
            c.contamination = if tau > 0.0 {
                Contamination::Point {
                    tau,
                    mu_c_in_sigmas: mu_c,
                }
            } else {
                Contamination::None
            };
            out.push((label.to_string(), c));
        }
    }
    out
}

fn record_rows(panel: Option<&str>, rep: &SimulationReport) -> Vec<Vec<String>> {
    rep.records
        .iter()
        .map(|r| {
            let mut row: Vec<String> = panel.map(String::from).into_iter().collect();
            row.extend([
                r.estimator.to_string(),
                rep.config.n.to_string(),
                r.replicate.to_string(),
                fmt_float(r.rpe),
                fmt_float(r.rel_rpe),
                fmt_float(r.sensitivity),
                fmt_float(r.specificity),
                r.active_count.to_string(),
            ]);
            row
        })
        .collect()
}

const RECORD_COLUMNS: [&str; 8] = ["estimator", "n", "replicate", "rpe", "rel_rpe", "sensitivity", "specificity", "active_count"];

pub fn cmd_simulate(g: &GlobalArgs, a: &SimulateArgs) -> Result<(), CliError> {
    if let Some(t) = g.threads {
        if t == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Output(e.to_string()))?;
    }
    let cfg = study_config(g, a)?;
    let mut body = Map::new();
    let mut header: Vec<String> = RECORD_COLUMNS.iter().map(|s| s.to_string()).collect();
    let mut rows = Vec::new();
    let manifest;
    if a.figure1 {
        if a.sizes.is_empty() {
            return Err(CliError::Usage("--sizes must list at least one sample size".into()));
        }
        let panels = figure1_panels(&cfg, &a.sizes);
        let mut config = to_value(&cfg)?;
        config["figure1_sizes"] = to_value(&a.sizes)?;
        manifest = Manifest::new(config, Some(cfg.seed), None);
        let mut out = Vec::new();
        for (label, c) in &panels {
            log::info!("panel {label}, n = {}", c.n);
            let rep = run_study(c)?;
            rows.extend(record_rows(Some(label), &rep));
            out.push(json!({"panel": label, "n": c.n, "report": to_value(&rep)?}));
        }
        header.insert(0, "panel".into());
        body.insert("panels".into(), Value::Array(out));
    } else {
        manifest = Manifest::new(to_value(&cfg)?, Some(cfg.seed), None);
        let rep = run_study(&cfg)?;
        rows = record_rows(None, &rep);
        body.insert("report".into(), to_value(&rep)?);
    }
    if let Some(out) = g.out.as_deref() {
        write_table(&table_path(out, "records"), &header, &rows)?;
    }
    emit(body, manifest, g.out.as_deref())
}

pub fn ensure_parent(p: &Path) -> Result<(), CliError> {
    match p.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.exists() => {
            Err(CliError::Usage(format!("output directory {} does not exist", dir.display())))
        }
        _ => Ok(()),
    }
}
