//! Tabulate the mean-correction function and its derivative.
//!
//! The correction `lambda(x)` generalizes the inverse Mills ratio to
//! contaminated-normal errors: `E[Y1 | selected] = x'beta + rho sigma
//! lambda(w'gamma)`. The example writes a plot-ready CSV over a grid of
//! `(nu1, nu2)` pairs, including the normal limit, and prints marginal
//! effects for one covariate configuration.
//!
//! Run with: cargo run --release --example lambda_curves

use heckman_cn::model::{
    conditional_mean_observed, lambda_cn, lambda_curve_export, marginal_effect, MarginalEffectForm,
    ModelKind, Theta,
};
use nalgebra::DVector;
use std::fs;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let grid: Vec<f64> = (0..=160).map(|i| -4.0 + 0.05 * i as f64).collect();
    let mut rows = lambda_curve_export(&[0.1, 0.3, 0.5], &[0.1, 0.5, 0.9], &grid);
    rows.extend(lambda_curve_export(&[0.0], &[1.0], &grid)); // normal limit
    let mut csv = String::from("x,nu1,nu2,lambda,lambda_prime,label\n");
    for r in &rows {
        let label = if r.nu1 == 0.0 { "normal" } else { "cn" };
        csv.push_str(&format!(
            "{:.4},{},{},{:.10},{:.10},{label}\n",
            r.x, r.nu1, r.nu2, r.lambda, r.lambda_prime
        ));
    }
    fs::write("lambda_curves.csv", &csv)?;
    println!("wrote lambda_curves.csv ({} rows)", rows.len());

    println!("\nlambda at x = 0:");
    println!(
        "  normal limit      : {:.7} (inverse Mills ratio)",
        lambda_cn(0.0, 0.0, 1.0)
    );
    for (n1, n2) in [(0.1, 0.1), (0.3, 0.5), (0.5, 0.9)] {
        println!("  nu1={n1:.1}, nu2={n2:.1}: {:.7}", lambda_cn(0.0, n1, n2));
    }

    // conditional mean and marginal effects for one unit
    let theta = Theta::slcn(
        DVector::from_vec(vec![1.0, 0.5]),
        DVector::from_vec(vec![0.7, 0.3, -0.5]),
        1.0,
        0.6,
        0.1,
        0.1,
    );
    let xi = [1.0, 0.4];
    let wi = [1.0, 0.4, -0.2];
    let mean = conditional_mean_observed(&xi, &wi, &theta, ModelKind::SLcn)?;
    println!("\nE[Y1 | selected] at x = {xi:?}: {mean:.4}");
    let literal = marginal_effect(
        1,
        &xi,
        &wi,
        &theta,
        ModelKind::SLcn,
        MarginalEffectForm::Literal,
    )?;
    let chained = marginal_effect(
        1,
        &xi,
        &wi,
        &theta,
        ModelKind::SLcn,
        MarginalEffectForm::ChainRule {
            selection_index: Some(1),
        },
    )?;
    println!("marginal effect of x1 (published form)   : {literal:.4}");
    println!("marginal effect of x1 (chain-rule form)  : {chained:.4}");
    Ok(())
}
