//! Command-line front end: `fit`, `simulate`, `diagnose` and `curves`.
//!
//! Input CSVs carry a header row and numeric columns; missing outcomes are
//! written as the literal token `NA` (case-sensitive) and must coincide with
//! selection indicator zero. Fit results are written as JSON and can be fed
//! back into `diagnose` together with the original CSV.

use crate::ecm::{EcmOptions, Init};
use crate::error::{Error, Result};
use crate::inference::{
    fit_model, information_criteria, quantile_residuals, residual_envelope, Classification,
    FitResult,
};
use crate::model::{lambda_curve_export, loglik, ModelKind, SelectionData, Theta};
use crate::sim::{run_monte_carlo, ErrorLaw, McSummary, SimDesign};
use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "heckman",
    version,
    about = "Heckman selection models with normal or contaminated-normal errors"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit a selection model to a CSV data set.
    Fit(FitArgs),
    /// Run a Monte Carlo recovery study and write summary tables.
    Simulate(SimulateArgs),
    /// Residual diagnostics and inlier/outlier report for a stored fit.
    Diagnose(DiagnoseArgs),
    /// Export the mean-correction curves to CSV.
    Curves(CurvesArgs),
}

/// Dispatch a parsed command line; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let outcome = match cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Diagnose(args) => cmd_diagnose(args),
        Command::Curves(args) => cmd_curves(args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

#[derive(Args, Debug, Default, Clone, Serialize, Deserialize)]
pub struct FitArgs {
    /// Optional JSON config file supplying defaults for any flag.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Input CSV path.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Outcome column (may contain NA where selection = 0).
    #[arg(long)]
    pub outcome: Option<String>,
    /// Selection indicator column (0/1).
    #[arg(long)]
    pub selection: Option<String>,
    /// Comma-separated outcome covariate columns.
    #[arg(long, value_delimiter = ',')]
    pub x: Option<Vec<String>>,
    /// Comma-separated selection covariate columns.
    #[arg(long, value_delimiter = ',')]
    pub w: Option<Vec<String>>,
    /// Model kind: sln or slcn.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Initialization: two-step or grid.
    #[arg(long)]
    pub init: Option<String>,
    #[arg(long)]
    pub fix_nu1: Option<f64>,
    #[arg(long)]
    pub fix_nu2: Option<f64>,
    /// Override the parameter count used in AIC/BIC.
    #[arg(long)]
    pub k_override: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output JSON path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn merge_config<T: for<'de> Deserialize<'de> + Serialize>(
    args: T,
    config: &Option<PathBuf>,
) -> Result<T> {
    let Some(path) = config else { return Ok(args) };
    let file: serde_json::Value = serde_json::from_str(&fs::read_to_string(path)?)?;
    if !file.is_object() {
        return Err(Error::Config(format!(
            "config file {} must hold a JSON object",
            path.display()
        )));
    }
    let mut merged = serde_json::to_value(&args)?;
    let obj = merged.as_object_mut().expect("args serialize to an object");
    for (k, v) in file.as_object().unwrap() {
        let slot = obj
            .get_mut(k)
            .ok_or_else(|| Error::Config(format!("unknown config key '{k}'")))?;
        if slot.is_null() {
            *slot = v.clone();
        }
    }
    Ok(serde_json::from_value(merged)?)
}

fn parse_init(name: &str) -> Result<Init> {
    match name {
        "two-step" => Ok(Init::TwoStep),
        "grid" => Ok(Init::Grid),
        other => Err(Error::Config(format!(
            "unknown init '{other}' (use two-step or grid)"
        ))),
    }
}

fn ecm_options(
    tol: Option<f64>,
    max_iter: Option<usize>,
    init: Option<&str>,
    fix_nu1: Option<f64>,
    fix_nu2: Option<f64>,
) -> Result<EcmOptions> {
    let mut opts = EcmOptions::default();
    if let Some(t) = tol {
        opts.tol = t;
    }
    if let Some(m) = max_iter {
        opts.max_iter = m;
    }
    if let Some(name) = init {
        opts.init = parse_init(name)?;
    }
    opts.fix_nu = match (fix_nu1, fix_nu2) {
        (None, None) => None,
        (Some(a), Some(b)) => Some((a, b)),
        _ => {
            return Err(Error::Config(
                "fix-nu1 and fix-nu2 must be given together".into(),
            ))
        }
    };
    Ok(opts)
}

/// Loaded CSV columns for one model specification.
pub struct LoadedData {
    pub data: SelectionData,
    pub x_names: Vec<String>,
    pub w_names: Vec<String>,
    pub fingerprint: String,
}

fn fnv1a(hash: &mut u64, bytes: &[u8]) {
    for &b in bytes {
        *hash ^= b as u64;
        *hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
    }
}

/// Read a CSV file into selection data. The missing token is exactly `NA`.
pub fn load_csv(
    path: &Path,
    outcome: &str,
    selection: &str,
    x_names: &[String],
    w_names: &[String],
) -> Result<LoadedData> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::InvalidData(format!("column '{name}' not found in {}", path.display()))
        })
    };
    let outcome_idx = col(outcome)?;
    let selection_idx = col(selection)?;
    let x_idx: Vec<usize> = x_names.iter().map(|n| col(n)).collect::<Result<_>>()?;
    let w_idx: Vec<usize> = w_names.iter().map(|n| col(n)).collect::<Result<_>>()?;

    let mut xs: Vec<f64> = Vec::new();
    let mut ws: Vec<f64> = Vec::new();
    let mut v1 = Vec::new();
    let mut c = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let get = |idx: usize| -> Result<f64> {
            let raw = record.get(idx).unwrap_or("");
            raw.trim().parse::<f64>().map_err(|_| {
                Error::InvalidData(format!("row {}: cannot parse '{raw}' as a number", row + 2))
            })
        };
        let sel_raw = get(selection_idx)?;
        let selected = if sel_raw == 1.0 {
            true
        } else if sel_raw == 0.0 {
            false
        } else {
            return Err(Error::InvalidData(format!(
                "row {}: selection column must be 0 or 1, got {sel_raw}",
                row + 2
            )));
        };
        let outcome_raw = record.get(outcome_idx).unwrap_or("").trim().to_string();
        let outcome_val = if outcome_raw == "NA" {
            None
        } else {
            Some(outcome_raw.parse::<f64>().map_err(|_| {
                Error::InvalidData(format!(
                    "row {}: outcome '{outcome_raw}' is neither a number nor NA",
                    row + 2
                ))
            })?)
        };
        match (outcome_val, selected) {
            (Some(_), true) | (None, false) => {}
            (None, true) => {
                return Err(Error::InvalidData(format!(
                    "row {}: selected unit has missing outcome",
                    row + 2
                )))
            }
            (Some(_), false) => {
                return Err(Error::InvalidData(format!(
                    "row {}: outcome present where selection = 0",
                    row + 2
                )))
            }
        }
        for &idx in &x_idx {
            xs.push(get(idx)?);
        }
        for &idx in &w_idx {
            ws.push(get(idx)?);
        }
        v1.push(outcome_val);
        c.push(selected);
    }
    let n = c.len();
    if n == 0 {
        return Err(Error::InvalidData("CSV has no data rows".into()));
    }
    let x = DMatrix::from_row_slice(n, x_idx.len(), &xs);
    let w = DMatrix::from_row_slice(n, w_idx.len(), &ws);

    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    fnv1a(&mut hash, &(n as u64).to_le_bytes());
    for name in x_names.iter().chain(w_names) {
        fnv1a(&mut hash, name.as_bytes());
    }
    for v in x.iter().chain(w.iter()) {
        fnv1a(&mut hash, &v.to_bits().to_le_bytes());
    }
    for (val, sel) in v1.iter().zip(&c) {
        fnv1a(&mut hash, &[*sel as u8]);
        fnv1a(&mut hash, &val.unwrap_or(f64::NAN).to_bits().to_le_bytes());
    }
    let data = SelectionData::new(x, w, v1, c)?;
    Ok(LoadedData {
        data,
        x_names: x_names.to_vec(),
        w_names: w_names.to_vec(),
        fingerprint: format!("{hash:016x}"),
    })
}

fn estimate_names(fit: &FitResult, x_names: &[String], w_names: &[String]) -> Vec<String> {
    let mut names: Vec<String> = x_names.iter().map(|n| format!("beta:{n}")).collect();
    names.extend(w_names.iter().map(|n| format!("gamma:{n}")));
    names.push("sigma2".into());
    names.push("rho".into());
    if fit.kind == ModelKind::SLcn {
        names.push("nu1".into());
        names.push("nu2".into());
    }
    names
}

#[allow(clippy::too_many_arguments)]
fn fit_to_json(
    fit: &FitResult,
    loaded: &LoadedData,
    outcome: &str,
    selection: &str,
    input: &Path,
    k_used: usize,
    aic: f64,
    bic: f64,
) -> serde_json::Value {
    let names = estimate_names(fit, &loaded.x_names, &loaded.w_names);
    let mut estimates = BTreeMap::new();
    for (j, name) in names.iter().enumerate() {
        estimates.insert(
            name.clone(),
            json!({ "value": fit.param_value(j), "se": fit.param_se(j) }),
        );
    }
    estimates.insert(
        "sigma".into(),
        json!({ "value": fit.theta.sigma(), "se": fit.se_sigma }),
    );
    json!({
        "model": fit.kind.name(),
        "converged": fit.trace.converged,
        "iterations": fit.trace.iterations,
        "loglik": fit.loglik,
        "aic": aic,
        "bic": bic,
        "estimates": estimates,
        "eps_hat": fit.eps_hat,
        "classifications": fit.classifications,
        "meta": {
            "input": input.display().to_string(),
            "outcome": outcome,
            "selection": selection,
            "x": loaded.x_names,
            "w": loaded.w_names,
            "n": fit.n,
            "n_selected": loaded.data.n_selected(),
            "k_used": k_used,
            "info_pd": fit.info_pd,
            "data_fingerprint": loaded.fingerprint,
        }
    })
}

fn print_fit_table(fit: &FitResult, names: &[String]) {
    println!(
        "model: {}   converged: {}   iterations: {}",
        fit.kind.name(),
        fit.trace.converged,
        fit.trace.iterations
    );
    println!(
        "loglik: {:.6}   aic: {:.3}   bic: {:.3}",
        fit.loglik, fit.aic, fit.bic
    );
    println!("{:<24} {:>12} {:>12}", "parameter", "estimate", "se");
    for (j, name) in names.iter().enumerate() {
        println!(
            "{:<24} {:>12.6} {:>12.6}",
            name,
            fit.param_value(j),
            fit.param_se(j)
        );
    }
    let n_out = fit
        .classifications
        .iter()
        .filter(|c| **c == Classification::Outlier)
        .count();
    let n_in = fit
        .classifications
        .iter()
        .filter(|c| **c == Classification::Inlier)
        .count();
    if fit.kind == ModelKind::SLcn {
        println!(
            "detected outliers: {n_out}, inliers: {n_in}, good: {}",
            fit.n - n_out - n_in
        );
    }
}

pub fn cmd_fit(args: FitArgs) -> Result<i32> {
    let config = args.config.clone();
    let args = merge_config(args, &config)?;
    let input = args
        .input
        .ok_or_else(|| Error::Config("--input is required".into()))?;
    let outcome = args
        .outcome
        .ok_or_else(|| Error::Config("--outcome is required".into()))?;
    let selection = args
        .selection
        .ok_or_else(|| Error::Config("--selection is required".into()))?;
    let x_names = args
        .x
        .ok_or_else(|| Error::Config("--x is required".into()))?;
    let w_names = args
        .w
        .ok_or_else(|| Error::Config("--w is required".into()))?;
    let kind: ModelKind = args.model.as_deref().unwrap_or("slcn").parse()?;
    let opts = ecm_options(
        args.tol,
        args.max_iter,
        args.init.as_deref(),
        args.fix_nu1,
        args.fix_nu2,
    )?;

    let loaded = load_csv(&input, &outcome, &selection, &x_names, &w_names)?;
    let fit = fit_model(&loaded.data, kind, &opts)?;
    let (k_used, aic, bic) = match args.k_override {
        Some(k) => {
            let (a, b) = information_criteria(fit.loglik, k, fit.n);
            (k, a, b)
        }
        None => (fit.k_params, fit.aic, fit.bic),
    };
    let out_json = fit_to_json(
        &fit, &loaded, &outcome, &selection, &input, k_used, aic, bic,
    );
    let names = estimate_names(&fit, &loaded.x_names, &loaded.w_names);
    print_fit_table(&fit, &names);
    if let Some(out) = &args.out {
        fs::write(out, serde_json::to_string_pretty(&out_json)?)?;
        eprintln!("wrote {}", out.display());
    } else {
        println!("{}", serde_json::to_string_pretty(&out_json)?);
    }
    Ok(if fit.trace.converged {
        EXIT_OK
    } else {
        EXIT_NOT_CONVERGED
    })
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

#[derive(Args, Debug, Default, Clone, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Error law: normal, cn or slash.
    #[arg(long)]
    pub law: Option<String>,
    #[arg(long)]
    pub nu1: Option<f64>,
    #[arg(long)]
    pub nu2: Option<f64>,
    /// Slash tail parameter.
    #[arg(long)]
    pub q: Option<f64>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Target missing rate in (0,1).
    #[arg(long)]
    pub missing: Option<f64>,
    #[arg(long)]
    pub sigma2: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    /// Override the calibrated selection intercept.
    #[arg(long)]
    pub gamma0: Option<f64>,
    /// Comma-separated models to fit (default sln,slcn).
    #[arg(long, value_delimiter = ',')]
    pub models: Option<Vec<String>>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output prefix; writes <out>.json, <out>.csv and <out>_selection.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn mc_summary_csv(summary: &McSummary) -> String {
    let mut header = String::from("parameter,truth");
    for m in &summary.models {
        let name = m.model.name();
        header.push_str(&format!(",{name}_em,{name}_se,{name}_sd_across_reps"));
    }
    let mut lines = vec![header];
    // union of parameter names in first-model order, then any extras
    let mut names: Vec<String> = Vec::new();
    for m in &summary.models {
        for p in &m.params {
            if !names.contains(&p.name) {
                names.push(p.name.clone());
            }
        }
    }
    let fmt = |v: f64| format!("{v:.6}");
    let fmt_opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "NA".into());
    for name in &names {
        let truth = summary.models.iter().find_map(|m| {
            m.params
                .iter()
                .find(|p| &p.name == name)
                .and_then(|p| p.truth)
        });
        let mut line = format!("{name},{}", fmt_opt(truth));
        for m in &summary.models {
            match m.params.iter().find(|p| &p.name == name) {
                Some(p) => line.push_str(&format!(
                    ",{},{},{}",
                    fmt(p.em_mean),
                    fmt(p.mean_info_se),
                    fmt_opt(p.sd_across_reps)
                )),
                None => line.push_str(",NA,NA,NA"),
            }
        }
        lines.push(line);
    }
    for criterion in ["aic", "bic"] {
        let mut line = format!("{criterion},NA");
        for m in &summary.models {
            let (mean, sd) = if criterion == "aic" {
                (m.aic_mean, m.aic_sd)
            } else {
                (m.bic_mean, m.bic_sd)
            };
            line.push_str(&format!(",{},{},NA", fmt(mean), fmt_opt(sd)));
        }
        lines.push(line);
    }
    lines.join("\n") + "\n"
}

fn selection_csv(summary: &McSummary) -> String {
    let mut lines = vec!["criterion,model,percent".to_string()];
    for (m, pct) in &summary.selection_pct_aic {
        lines.push(format!("aic,{},{:.1}", m.name(), pct));
    }
    for (m, pct) in &summary.selection_pct_bic {
        lines.push(format!("bic,{},{:.1}", m.name(), pct));
    }
    lines.join("\n") + "\n"
}

pub fn cmd_simulate(args: SimulateArgs) -> Result<i32> {
    let config = args.config.clone();
    let args = merge_config(args, &config)?;
    let law = match args.law.as_deref().unwrap_or("normal") {
        "normal" => ErrorLaw::Normal,
        "cn" => ErrorLaw::ContaminatedNormal {
            nu1: args
                .nu1
                .ok_or_else(|| Error::Config("cn law needs --nu1".into()))?,
            nu2: args
                .nu2
                .ok_or_else(|| Error::Config("cn law needs --nu2".into()))?,
        },
        "slash" => ErrorLaw::Slash {
            q: args
                .q
                .ok_or_else(|| Error::Config("slash law needs --q".into()))?,
        },
        other => return Err(Error::Config(format!("unknown law '{other}'"))),
    };
    let design = SimDesign {
        n: args.n.unwrap_or(500),
        error_law: law,
        target_missing_rate: args.missing.unwrap_or(0.25),
        sigma2: args.sigma2.unwrap_or(1.0),
        rho: args.rho.unwrap_or(0.6),
        seed: args.seed.unwrap_or(0),
        gamma0: args.gamma0,
        ..SimDesign::default()
    };
    let model_names = args
        .models
        .unwrap_or_else(|| vec!["sln".into(), "slcn".into()]);
    let models: Vec<ModelKind> = model_names
        .iter()
        .map(|s| s.parse())
        .collect::<Result<_>>()?;
    let reps = args.reps.unwrap_or(100);
    let opts = ecm_options(args.tol, args.max_iter, None, None, None)?;
    eprintln!(
        "simulating {reps} replicates of n = {} under {:?}, fitting {:?}",
        design.n, design.error_law, model_names
    );
    let summary = run_monte_carlo(&design, reps, &models, &opts)?;
    for m in &summary.models {
        eprintln!(
            "{}: used {} replicates, excluded {}",
            m.model.name(),
            m.n_used,
            m.n_excluded
        );
    }
    let json = serde_json::to_string_pretty(&summary)?;
    let csv_main = mc_summary_csv(&summary);
    let csv_sel = selection_csv(&summary);
    match &args.out {
        Some(prefix) => {
            let base = prefix.display().to_string();
            fs::write(format!("{base}.json"), &json)?;
            fs::write(format!("{base}.csv"), &csv_main)?;
            fs::write(format!("{base}_selection.csv"), &csv_sel)?;
            eprintln!("wrote {base}.json, {base}.csv, {base}_selection.csv");
        }
        None => {
            println!("{csv_main}");
            println!("{csv_sel}");
        }
    }
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// diagnose
// ---------------------------------------------------------------------------

#[derive(Args, Debug, Default, Clone, Serialize, Deserialize)]
pub struct DiagnoseArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Fit JSON produced by `fit`.
    #[arg(long)]
    pub fit: Option<PathBuf>,
    /// Original input CSV.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Number of envelope simulations.
    #[arg(long)]
    pub n_sim: Option<usize>,
    /// Envelope coverage level.
    #[arg(long)]
    pub level: Option<f64>,
    /// Randomize censored-unit residuals over their point mass.
    #[arg(long)]
    #[serde(default)]
    pub randomized: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output prefix; writes <out>_residuals.csv, <out>_envelope.csv and
    /// <out>_report.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Reconstruct the fitted parameter vector from a fit JSON.
pub fn theta_from_fit_json(
    fit_json: &serde_json::Value,
) -> Result<(ModelKind, Theta, f64, String)> {
    let kind: ModelKind = fit_json["model"]
        .as_str()
        .ok_or_else(|| Error::Config("fit json missing 'model'".into()))?
        .parse()?;
    let meta = &fit_json["meta"];
    let x_names: Vec<String> = serde_json::from_value(meta["x"].clone())?;
    let w_names: Vec<String> = serde_json::from_value(meta["w"].clone())?;
    let est = &fit_json["estimates"];
    let value = |name: &str| -> Result<f64> {
        est[name]["value"]
            .as_f64()
            .ok_or_else(|| Error::Config(format!("fit json missing estimate '{name}'")))
    };
    let beta = DVector::from_iterator(
        x_names.len(),
        x_names
            .iter()
            .map(|n| value(&format!("beta:{n}")))
            .collect::<Result<Vec<_>>>()?,
    );
    let gamma = DVector::from_iterator(
        w_names.len(),
        w_names
            .iter()
            .map(|n| value(&format!("gamma:{n}")))
            .collect::<Result<Vec<_>>>()?,
    );
    let sigma2 = value("sigma2")?;
    let rho = value("rho")?;
    let theta = match kind {
        ModelKind::SLn => Theta::sln(beta, gamma, sigma2, rho),
        ModelKind::SLcn => Theta::slcn(beta, gamma, sigma2, rho, value("nu1")?, value("nu2")?),
    };
    let loglik = fit_json["loglik"]
        .as_f64()
        .ok_or_else(|| Error::Config("fit json missing 'loglik'".into()))?;
    let fingerprint = meta["data_fingerprint"]
        .as_str()
        .unwrap_or_default()
        .to_string();
    Ok((kind, theta, loglik, fingerprint))
}

pub fn cmd_diagnose(args: DiagnoseArgs) -> Result<i32> {
    let config = args.config.clone();
    let args = merge_config(args, &config)?;
    let fit_path = args
        .fit
        .ok_or_else(|| Error::Config("--fit is required".into()))?;
    let input = args
        .input
        .ok_or_else(|| Error::Config("--input is required".into()))?;
    let fit_json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&fit_path)?)?;
    let (kind, theta, stored_loglik, fingerprint) = theta_from_fit_json(&fit_json)?;
    let meta = &fit_json["meta"];
    let outcome = meta["outcome"]
        .as_str()
        .ok_or_else(|| Error::Config("fit json missing outcome".into()))?;
    let selection = meta["selection"]
        .as_str()
        .ok_or_else(|| Error::Config("fit json missing selection".into()))?;
    let x_names: Vec<String> = serde_json::from_value(meta["x"].clone())?;
    let w_names: Vec<String> = serde_json::from_value(meta["w"].clone())?;
    let loaded = load_csv(&input, outcome, selection, &x_names, &w_names)?;
    if loaded.fingerprint != fingerprint {
        return Err(Error::InvalidData(format!(
            "data set does not match the fit (fingerprint {} vs {})",
            loaded.fingerprint, fingerprint
        )));
    }
    let recomputed = loglik(&theta, &loaded.data, kind)?;
    let eps_hat: Vec<f64> = serde_json::from_value(fit_json["eps_hat"].clone())?;
    let classifications: Vec<Classification> =
        serde_json::from_value(fit_json["classifications"].clone())?;

    let mut rng = ChaCha8Rng::seed_from_u64(args.seed.unwrap_or(0));
    let residuals = if args.randomized {
        quantile_residuals(&theta, &loaded.data, kind, Some(&mut rng))?
    } else {
        quantile_residuals(&theta, &loaded.data, kind, None)?
    };
    let n_sim = args.n_sim.unwrap_or(100);
    let level = args.level.unwrap_or(0.95);
    let envelope = residual_envelope(&theta, &loaded.data, kind, n_sim, level, &mut rng)?;

    let n_out = classifications
        .iter()
        .filter(|c| **c == Classification::Outlier)
        .count();
    let n_in = classifications
        .iter()
        .filter(|c| **c == Classification::Inlier)
        .count();
    let n_good = loaded.data.n() - n_out - n_in;

    let mut res_csv = String::from("unit,selected,residual,eps_hat,classification\n");
    for i in 0..loaded.data.n() {
        let label = match classifications.get(i) {
            Some(Classification::Outlier) => "outlier",
            Some(Classification::Inlier) => "inlier",
            _ => "good",
        };
        res_csv.push_str(&format!(
            "{},{},{:.10},{:.10},{}\n",
            i,
            loaded.data.selected()[i] as u8,
            residuals.values[i],
            eps_hat.get(i).copied().unwrap_or(0.0),
            label
        ));
    }
    let mut env_csv = String::from("unit,residual,theoretical_quantile,band_lo,band_hi\n");
    for row in &envelope {
        env_csv.push_str(&format!(
            "{},{:.10},{:.10},{:.10},{:.10}\n",
            row.unit, row.residual, row.theoretical_quantile, row.band_lo, row.band_hi
        ));
    }
    let report = json!({
        "model": kind.name(),
        "n": loaded.data.n(),
        "n_selected": loaded.data.n_selected(),
        "stored_loglik": stored_loglik,
        "recomputed_loglik": recomputed,
        "loglik_abs_diff": (stored_loglik - recomputed).abs(),
        "counts": { "good": n_good, "inlier": n_in, "outlier": n_out },
        "n_clamped_residuals": residuals.n_clamped,
        "n_sim": n_sim,
        "level": level,
        "randomized": args.randomized,
    });
    println!(
        "{} good observations, {} inliers, {} outliers out of {} units ({} observed)",
        n_good,
        n_in,
        n_out,
        loaded.data.n(),
        loaded.data.n_selected()
    );
    println!("stored loglik {stored_loglik:.10}, recomputed {recomputed:.10}");
    match &args.out {
        Some(prefix) => {
            let base = prefix.display().to_string();
            fs::write(format!("{base}_residuals.csv"), &res_csv)?;
            fs::write(format!("{base}_envelope.csv"), &env_csv)?;
            fs::write(
                format!("{base}_report.json"),
                serde_json::to_string_pretty(&report)?,
            )?;
            eprintln!("wrote {base}_residuals.csv, {base}_envelope.csv, {base}_report.json");
        }
        None => {
            let mut stdout = std::io::stdout();
            writeln!(stdout, "{}", serde_json::to_string_pretty(&report)?)?;
        }
    }
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// curves
// ---------------------------------------------------------------------------

#[derive(Args, Debug, Default, Clone, Serialize, Deserialize)]
pub struct CurvesArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Comma-separated mixing proportions (default 0.1,0.3,0.5).
    #[arg(long, value_delimiter = ',')]
    pub nu1_list: Option<Vec<f64>>,
    /// Comma-separated contamination degrees (default 0.1,0.5,0.9).
    #[arg(long, value_delimiter = ',')]
    pub nu2_list: Option<Vec<f64>>,
    #[arg(long)]
    pub x_min: Option<f64>,
    #[arg(long)]
    pub x_max: Option<f64>,
    #[arg(long)]
    pub x_steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output CSV path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn cmd_curves(args: CurvesArgs) -> Result<i32> {
    let config = args.config.clone();
    let args = merge_config(args, &config)?;
    let nu1_list = args.nu1_list.unwrap_or_else(|| vec![0.1, 0.3, 0.5]);
    let nu2_list = args.nu2_list.unwrap_or_else(|| vec![0.1, 0.5, 0.9]);
    let x_min = args.x_min.unwrap_or(-4.0);
    let x_max = args.x_max.unwrap_or(4.0);
    let steps = args.x_steps.unwrap_or(161);
    if steps < 2 || !(x_max > x_min) {
        return Err(Error::Config(
            "need x_max > x_min and at least 2 steps".into(),
        ));
    }
    let grid: Vec<f64> = (0..steps)
        .map(|i| x_min + (x_max - x_min) * i as f64 / (steps - 1) as f64)
        .collect();
    let mut rows = lambda_curve_export(&nu1_list, &nu2_list, &grid);
    // always include the normal limit, labeled as such in the output
    rows.extend(lambda_curve_export(&[0.0], &[1.0], &grid));
    let mut csv = String::from("x,nu1,nu2,lambda,lambda_prime,label\n");
    for r in &rows {
        let label = if r.nu1 == 0.0 || r.nu2 == 1.0 {
            "normal"
        } else {
            "cn"
        };
        csv.push_str(&format!(
            "{:.6},{},{},{:.12},{:.12},{label}\n",
            r.x, r.nu1, r.nu2, r.lambda, r.lambda_prime
        ));
    }
    match &args.out {
        Some(path) => {
            fs::write(path, &csv)?;
            eprintln!("wrote {}", path.display());
        }
        None => print!("{csv}"),
    }
    Ok(EXIT_OK)
}

// ---------------------------------------------------------------------------
// shared file helpers
// ---------------------------------------------------------------------------

/// Format a data set as an input CSV (used by examples and tests).
pub fn write_csv(
    path: &Path,
    data: &SelectionData,
    outcome: &str,
    selection: &str,
    x_names: &[String],
    w_names: &[String],
) -> Result<()> {
    let mut out = String::new();
    let mut header: Vec<String> = vec![outcome.to_string(), selection.to_string()];
    header.extend(x_names.iter().cloned());
    header.extend(w_names.iter().cloned());
    out.push_str(&header.join(","));
    out.push('\n');
    for i in 0..data.n() {
        let mut fields: Vec<String> = Vec::with_capacity(header.len());
        match data.outcomes()[i] {
            Some(v) => fields.push(format!("{v:.12}")),
            None => fields.push("NA".into()),
        }
        fields.push((data.selected()[i] as u8).to_string());
        for j in 0..data.p() {
            fields.push(format!("{:.12}", data.x()[(i, j)]));
        }
        for j in 0..data.q() {
            fields.push(format!("{:.12}", data.w()[(i, j)]));
        }
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}
