//! Fit both selection models to one contaminated data set and compare them.
//!
//! Generates n = 1000 units with CN(0.1, 0.1) errors and 25% censoring,
//! fits SLn and SLcn by ECM, and prints estimates, standard errors,
//! information criteria and the likelihood-ratio test of normality.
//!
//! Run with: cargo run --release --example fit_simulated

use heckman_cn::ecm::EcmOptions;
use heckman_cn::inference::{fit_model, lr_test};
use heckman_cn::model::ModelKind;
use heckman_cn::sim::{generate_dataset, ErrorLaw, SimDesign};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let design = SimDesign {
        n: 1000,
        error_law: ErrorLaw::ContaminatedNormal { nu1: 0.1, nu2: 0.1 },
        seed: 7,
        ..SimDesign::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(design.seed);
    let data = generate_dataset(&design, &mut rng)?;
    println!(
        "generated n = {} ({} observed, {} censored)\n",
        data.n(),
        data.n_selected(),
        data.n() - data.n_selected()
    );

    let opts = EcmOptions::default();
    let sln = fit_model(&data, ModelKind::SLn, &opts)?;
    let slcn = fit_model(&data, ModelKind::SLcn, &opts)?;

    println!(
        "{:<10} {:>10} | {:>10} {:>8} | {:>10} {:>8}",
        "parameter", "truth", "SLn", "se", "SLcn", "se"
    );
    let truth = design.truth()?;
    let slcn_names = slcn.param_names();
    for (j, name) in slcn_names.iter().enumerate() {
        let t = truth
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| format!("{v:>10.3}"))
            .unwrap_or_else(|| format!("{:>10}", "-"));
        let sln_part = if j < sln.param_names().len() {
            format!("{:>10.3} {:>8.3}", sln.param_value(j), sln.param_se(j))
        } else {
            format!("{:>10} {:>8}", "-", "-")
        };
        println!(
            "{:<10} {} | {} | {:>10.3} {:>8.3}",
            name,
            t,
            sln_part,
            slcn.param_value(j),
            slcn.param_se(j)
        );
    }
    println!();
    println!(
        "SLn : loglik {:.3}  aic {:.2}  bic {:.2}  ({} iterations)",
        sln.loglik, sln.aic, sln.bic, sln.trace.iterations
    );
    println!(
        "SLcn: loglik {:.3}  aic {:.2}  bic {:.2}  ({} iterations)",
        slcn.loglik, slcn.aic, slcn.bic, slcn.trace.iterations
    );
    let lr = lr_test(&sln, &slcn)?;
    println!(
        "\nLR test of bivariate normality: stat {:.2} on {} df, p = {:.2e}",
        lr.statistic, lr.df, lr.p_value
    );
    let preferred = if slcn.bic < sln.bic { "SLcn" } else { "SLn" };
    println!("BIC prefers {preferred}");
    Ok(())
}
