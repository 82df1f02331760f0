//! Small Monte Carlo recovery study.
//!
//! Replicates the contaminated-normal recovery experiment at desk scale:
//! 40 replicates of n = 500 with CN(0.1, 0.1) errors, fitting SLn and SLcn
//! to each replicate, then printing mean estimates, mean information-based
//! standard errors, the spread of the estimates across replicates, and the
//! AIC/BIC model-selection percentages.
//!
//! Run with: cargo run --release --example monte_carlo

use heckman_cn::ecm::EcmOptions;
use heckman_cn::model::ModelKind;
use heckman_cn::sim::{run_monte_carlo, ErrorLaw, SimDesign};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let design = SimDesign {
        n: 500,
        error_law: ErrorLaw::ContaminatedNormal { nu1: 0.1, nu2: 0.1 },
        seed: 2024,
        ..SimDesign::default()
    };
    let models = [ModelKind::SLn, ModelKind::SLcn];
    let opts = EcmOptions {
        max_iter: 2000,
        ..EcmOptions::default()
    };
    eprintln!("running 40 replicates of n = {}...", design.n);
    let summary = run_monte_carlo(&design, 40, &models, &opts)?;

    for m in &summary.models {
        println!(
            "\n{} ({} replicates used, {} excluded)",
            m.model.name(),
            m.n_used,
            m.n_excluded
        );
        println!(
            "{:<10} {:>8} {:>10} {:>10} {:>12}",
            "parameter", "truth", "em_mean", "mean_se", "sd_across"
        );
        for p in &m.params {
            println!(
                "{:<10} {:>8} {:>10.3} {:>10.3} {:>12}",
                p.name,
                p.truth
                    .map(|t| format!("{t:.3}"))
                    .unwrap_or_else(|| "-".into()),
                p.em_mean,
                p.mean_info_se,
                p.sd_across_reps
                    .map(|s| format!("{s:.3}"))
                    .unwrap_or_else(|| "NA".into()),
            );
        }
        println!(
            "aic mean {:.2} (sd {})   bic mean {:.2}",
            m.aic_mean,
            m.aic_sd
                .map(|s| format!("{s:.2}"))
                .unwrap_or_else(|| "NA".into()),
            m.bic_mean
        );
    }
    println!("\nmodel selection (percent of replicates):");
    for ((m_a, pct_a), (_, pct_b)) in summary
        .selection_pct_aic
        .iter()
        .zip(&summary.selection_pct_bic)
    {
        println!(
            "  {:<5} aic {:>5.1}%   bic {:>5.1}%",
            m_a.name(),
            pct_a,
            pct_b
        );
    }
    Ok(())
}
