//! End-to-end file workflow: CSV in, fit JSON out, diagnostics from both.
//!
//! Writes a data set in the input CSV layout (header row, `NA` marking the
//! missing outcomes), runs the same entry points the `heckman` binary uses
//! (`fit` then `diagnose`), and shows the round trip: the stored fit JSON
//! plus the original CSV reproduce the log-likelihood.
//!
//! Run with: cargo run --release --example csv_workflow

use heckman_cn::cli::{cmd_diagnose, cmd_fit, write_csv, DiagnoseArgs, FitArgs};
use heckman_cn::sim::{generate_dataset, ErrorLaw, SimDesign};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("heckman_csv_workflow");
    std::fs::create_dir_all(&dir)?;
    let csv_path = dir.join("wages.csv");
    let fit_path = dir.join("fit.json");

    let design = SimDesign {
        n: 1200,
        error_law: ErrorLaw::ContaminatedNormal { nu1: 0.1, nu2: 0.1 },
        seed: 42,
        ..SimDesign::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(design.seed);
    let data = generate_dataset(&design, &mut rng)?;
    let x_names = vec!["const".to_string(), "educ".to_string()];
    let w_names = vec!["const".to_string(), "educ".to_string(), "kids".to_string()];
    write_csv(&csv_path, &data, "lwage", "working", &x_names, &w_names)?;
    println!("wrote {} ({} rows)", csv_path.display(), data.n());

    let code = cmd_fit(FitArgs {
        input: Some(csv_path.clone()),
        outcome: Some("lwage".into()),
        selection: Some("working".into()),
        x: Some(x_names),
        w: Some(w_names),
        model: Some("slcn".into()),
        // mixtures can have minor modes; pilot a grid of (nu1, nu2) starts
        init: Some("grid".into()),
        max_iter: Some(5000),
        out: Some(fit_path.clone()),
        ..FitArgs::default()
    })?;
    println!("fit exit code: {code}");

    let code = cmd_diagnose(DiagnoseArgs {
        fit: Some(fit_path),
        input: Some(csv_path),
        n_sim: Some(29),
        level: Some(0.95),
        out: Some(PathBuf::from(dir.join("diag"))),
        ..DiagnoseArgs::default()
    })?;
    println!("diagnose exit code: {code}");
    println!("outputs under {}", dir.display());
    Ok(())
}
