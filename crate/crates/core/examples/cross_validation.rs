//! Choose both constraint radii by stratified 5-fold cross-validation.

use sdar::bench::{tune_and_fit, LambdaGrid, LambdaScaling, Rule, TuneConfig};
use sdar::datagen::{gen_model, sample, sample_mixture};
use sdar::estimate::FitConfig;

fn main() -> sdar::error::Result<()> {
    let problem = gen_model(3, 40, 3)?;
    let train = sample(&problem, 150, 150, 1)?;
    let test = sample_mixture(&problem, 1000, 2)?;

    let mut fit = FitConfig::new(0.0, 0.0);
    fit.solver.duality_gap_tol = 1e-6;
    let cfg = TuneConfig {
        grid1: LambdaGrid::paper(2.0, 8),
        grid2: LambdaGrid::paper(2.0, 8),
        folds: 5,
        seed: 11,
        scaling: LambdaScaling::Variance,
        fit,
    };
    let (model, tuned) = tune_and_fit(Rule::Sdar, &train, &cfg)?;
    println!(
        "lambda1 {:.3}, lambda2 {:.3}, cv error {:.3}, {} pairs rejected",
        tuned.lambda1, tuned.lambda2, tuned.cv_error, tuned.invalid
    );
    let pred = model.classify_rows(&test.features)?;
    let wrong = pred.iter().zip(&test.labels).filter(|(a, b)| a != b).count();
    println!("test error {:.3}", wrong as f64 / test.n() as f64);
    Ok(())
}
