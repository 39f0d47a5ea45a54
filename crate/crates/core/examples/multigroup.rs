//! Three Gaussian classes with different covariances.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use sdar::classify::{classify_multigroup, fit_multigroup};
use sdar::estimate::FitConfig;
use sdar::types::LabeledDataset;

fn draw(n_per: usize, p: usize, seed: u64) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 3 * n_per;
    let labels: Vec<usize> = (0..n).map(|i| 1 + i / n_per).collect();
    let x = DMatrix::from_fn(n, p, |i, j| {
        let z: f64 = StandardNormal.sample(&mut rng);
        match (labels[i], j) {
            (2, 0) => 1.5 + z,
            (3, 1) => 3.0 * z,
            _ => z,
        }
    });
    LabeledDataset::new(x, labels).unwrap()
}

fn main() -> sdar::error::Result<()> {
    let train = draw(150, 8, 1);
    let test = draw(300, 8, 2);
    let model = fit_multigroup(&train, &FitConfig::with_default_lambdas(8, 150))?;
    let mut wrong = 0;
    for i in 0..test.n() {
        if classify_multigroup(&test.row(i), &model)? != test.labels[i] {
            wrong += 1;
        }
    }
    println!("{} classes, test error {:.3}", model.num_classes(), wrong as f64 / test.n() as f64);
    Ok(())
}
