//! Heavily transformed marginals: the rank-based copula rule against the
//! Gaussian rule fitted to the raw features.

use sdar::classify::error_rate;
use sdar::copula::{classify_csdar_rows, fit_csdar};
use sdar::datagen::{gen_copula_model, sample, sample_mixture};
use sdar::estimate::{fit_sdar, FitConfig};

fn main() -> sdar::error::Result<()> {
    let problem = gen_copula_model(5, 100, 7)?;
    let train = sample(&problem, 200, 200, 1)?;
    let test = sample_mixture(&problem, 2000, 2)?;
    let cfg = FitConfig::with_default_lambdas(100, 200);

    let copula = fit_csdar(&train, &cfg)?;
    let pred = classify_csdar_rows(&test.features, &copula)?;
    let wrong = pred.iter().zip(&test.labels).filter(|(a, b)| a != b).count();
    println!("copula rule error:   {:.3}", wrong as f64 / test.n() as f64);

    match fit_sdar(&train, &cfg) {
        Ok(m) => println!("gaussian rule error: {:.3}", error_rate(&m, &test)?),
        Err(e) => println!("gaussian rule failed: {e}"),
    }
    Ok(())
}
