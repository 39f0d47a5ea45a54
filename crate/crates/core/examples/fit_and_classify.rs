//! Fit the two-class rule to a simulated AR(1) problem and compare its test
//! error with the Bayes rule.

use sdar::classify::{error_rate, oracle_model, PriorConvention};
use sdar::datagen::{gen_model, sample, sample_mixture};
use sdar::estimate::{fit_sdar, FitConfig};

fn main() -> sdar::error::Result<()> {
    let problem = gen_model(2, 60, 42)?;
    let train = sample(&problem, 200, 200, 1)?;
    let test = sample_mixture(&problem, 2000, 2)?;

    let cfg = FitConfig::with_default_lambdas(60, 200);
    let model = fit_sdar(&train, &cfg)?;
    let nonzero = model.d_hat.iter().filter(|v| **v != 0.0).count();
    println!("lambda1 = {:.3}, lambda2 = {:.3}", cfg.lambda1, cfg.lambda2);
    println!("nonzero graph entries: {nonzero}");
    println!("test error:   {:.3}", error_rate(&model, &test)?);

    let oracle = oracle_model(&problem.theta, PriorConvention::Bayes)?;
    println!("oracle error: {:.3}", error_rate(&oracle, &test)?);
    Ok(())
}
