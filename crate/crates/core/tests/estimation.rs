mod common;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use common::{median, rng};
use sdar::classify::discriminant;
use sdar::datagen::{gen_model_with, sample, PrecisionModel, Sparsity, SyntheticProblem};
use sdar::estimate::{class_moments, fit_sdar, FitConfig};
use sdar::linalg::mean_and_covariance;
use sdar::types::LabeledDataset;

fn ar1_problem(p: usize, beta: usize, graph: usize, seed: u64) -> SyntheticProblem {
    gen_model_with(PrecisionModel::Ar1, p, Sparsity { beta, graph }, seed).unwrap()
}

/// `(|D_hat - D|_F, |beta_hat - beta|_2)` at radii `3 sqrt(log p / n)`.
fn estimation_errors(problem: &SyntheticProblem, n: usize, seed: u64) -> (f64, f64) {
    let data = sample(problem, n, n, seed).unwrap();
    let lam = 3.0 * ((problem.p() as f64).ln() / n as f64).sqrt();
    let model = fit_sdar(&data, &FitConfig::new(lam, lam)).unwrap();
    (
        (&model.d_hat - &problem.d_true).norm(),
        (&model.beta_hat - &problem.beta_true).norm(),
    )
}

#[test]
fn sample_covariance_of_a_bivariate_gaussian() {
    let sigma = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
    let root = sigma.clone().cholesky().unwrap().l();
    let n = 500;
    let runs = 50;
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for seed in 0..runs {
        let mut r = rng(500 + seed);
        let z = DMatrix::from_fn(n, 2, |_, _| r.sample::<f64, _>(StandardNormal));
        let (_, s) = mean_and_covariance(&(z * root.transpose()), 0);
        let err = (&s - &sigma).norm();
        sum += err;
        sum_sq += err * err;
    }
    // E|S - Sigma|_F^2 = sum_ij (s_ii s_jj + s_ij^2) / n = 26 / n
    let mse = sum_sq / runs as f64;
    let want = 26.0 / n as f64;
    assert!((mse - want).abs() <= 0.25 * want, "{mse} vs {want}");
    assert!(sum / runs as f64 <= 0.35);
}

#[test]
fn graph_and_direction_errors_at_large_n() {
    let problem = ar1_problem(10, 3, 4, 7);
    assert_eq!(problem.beta_true.iter().filter(|v| **v != 0.0).count(), 3);
    let (d_err, b_err) = estimation_errors(&problem, 2000, 8);
    println!("graph error {d_err:.4}, direction error {b_err:.4}");
    assert!(d_err <= 0.8, "{d_err}");
    assert!(b_err <= 0.5, "{b_err}");
}

#[test]
fn errors_shrink_with_the_sample_size() {
    let mut small = (Vec::new(), Vec::new());
    let mut large = (Vec::new(), Vec::new());
    for seed in 0..20 {
        let problem = ar1_problem(20, 10, 4, 100 + seed);
        let (d, b) = estimation_errors(&problem, 500, 200 + seed);
        small.0.push(d);
        small.1.push(b);
        let (d, b) = estimation_errors(&problem, 2000, 300 + seed);
        large.0.push(d);
        large.1.push(b);
    }
    let (d500, d2000) = (median(small.0), median(large.0));
    let (b500, b2000) = (median(small.1), median(large.1));
    println!("graph medians {d500:.4} -> {d2000:.4}, direction medians {b500:.4} -> {b2000:.4}");
    assert!(d2000 <= 0.75 * d500, "{d2000} vs {d500}");
    assert!(b2000 <= 0.75 * b500, "{b2000} vs {b500}");
}

/// Class 2 is class 1 shifted by a constant, so both sample covariances
/// coincide exactly.
fn shifted_copy(seed: u64, n: usize, p: usize) -> LabeledDataset {
    let mut r = rng(seed);
    let x1 = DMatrix::from_fn(n, p, |_, _| r.sample::<f64, _>(StandardNormal));
    let shift: Vec<f64> = (0..p).map(|_| r.random_range(-1.0..1.0)).collect();
    let x2 = DMatrix::from_fn(n, p, |i, j| x1[(i, j)] + shift[j]);
    LabeledDataset::from_two_classes(&x1, &x2).unwrap()
}

#[test]
fn equal_covariances_give_a_linear_rule() {
    for seed in 0..10 {
        let data = shifted_copy(900 + seed, 60, 6);
        let m1 = class_moments(&data, 1).unwrap();
        let m2 = class_moments(&data, 2).unwrap();
        let spread = (&m1.sigma_hat - &m2.sigma_hat).amax();
        let model = fit_sdar(&data, &FitConfig::new(spread, 0.1)).unwrap();
        assert!(model.d_hat.iter().all(|v| *v == 0.0), "seed {seed}");
        assert_eq!(model.logdet_term, 0.0);
        // affine: the discriminant is linear along any line
        let mut r = rng(seed);
        let a = nalgebra::DVector::from_fn(6, |_, _| r.random_range(-2.0..2.0));
        let b = nalgebra::DVector::from_fn(6, |_, _| r.random_range(-2.0..2.0));
        let qa = discriminant(&a, &model).unwrap();
        let qb = discriminant(&b, &model).unwrap();
        let qm = discriminant(&((&a + &b) * 0.5), &model).unwrap();
        assert!((qm - 0.5 * (qa + qb)).abs() < 1e-9 * (1.0 + qa.abs() + qb.abs()));
    }
}
