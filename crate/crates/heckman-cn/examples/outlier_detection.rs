//! Automatic inlier/outlier detection from the fitted mixture.
//!
//! Each unit gets a posterior probability of belonging to the inflated
//! mixture component; with a minority inflated component (`nu1 <= 0.5`)
//! those units are mild outliers, with a majority inflated component the
//! complement marks inliers. The example generates data with a known 10%
//! contamination share and checks how many planted outliers the rule finds.
//!
//! Run with: cargo run --release --example outlier_detection

use heckman_cn::ecm::EcmOptions;
use heckman_cn::inference::{fit_model, Classification};
use heckman_cn::model::ModelKind;
use heckman_cn::sim::{generate_dataset_with_latents, ErrorLaw, SimDesign};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let design = SimDesign {
        n: 1500,
        error_law: ErrorLaw::ContaminatedNormal {
            nu1: 0.1,
            nu2: 0.05,
        },
        seed: 5,
        ..SimDesign::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(design.seed);
    let (data, latents) = generate_dataset_with_latents(&design, &mut rng)?;
    let planted = latents.contaminated.expect("cn law records contamination");

    let fit = fit_model(&data, ModelKind::SLcn, &EcmOptions::default())?;
    println!(
        "fitted nu1 = {:.3}, nu2 = {:.3} (truth 0.10, 0.05)",
        fit.theta.nu1, fit.theta.nu2
    );

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
    println!(
        "classified {} outliers, {} inliers, {} good out of {} units",
        n_out,
        n_in,
        data.n() - n_out - n_in,
        data.n()
    );

    // agreement with the planted contamination flags
    let mut hits = 0usize;
    let mut planted_total = 0usize;
    for i in 0..data.n() {
        if planted[i] {
            planted_total += 1;
            if fit.classifications[i] == Classification::Outlier {
                hits += 1;
            }
        }
    }
    println!(
        "detection: {hits} of {planted_total} planted contaminated units flagged \
         ({:.0}% recall; censored units are hardest)",
        100.0 * hits as f64 / planted_total as f64
    );

    // a few of the most extreme posterior probabilities
    let mut ranked: Vec<(usize, f64)> = fit.eps_hat.iter().copied().enumerate().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    println!("\nhighest posterior contamination probabilities:");
    for (i, e) in ranked.iter().take(5) {
        let v = data.outcomes()[*i]
            .map(|v| format!("{v:.2}"))
            .unwrap_or_else(|| "NA".into());
        println!(
            "  unit {i:>4}: eps = {e:.3}, outcome = {v}, planted = {}",
            planted[*i]
        );
    }
    Ok(())
}
