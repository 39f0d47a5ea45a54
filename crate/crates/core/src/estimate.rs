//! Sample moments and the two l1 estimators behind the SDAR rule.

use nalgebra::{DMatrix, DVector};

use crate::classify::{logdet_term, PriorConvention};
use crate::error::{Error, Result};
use crate::linalg;
use crate::solver::{
    half_unvectorize, half_vectorize, matrix_operator, solve_l1_dantzig,
    solve_weighted_l1_dantzig, sylvester_operator, symmetric_sylvester_operator, SolveReport,
};
use crate::types::{ClassMoments, LabeledDataset, SdarModel, SolverConfig};

/// How the differential-graph program is posed to the solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GraphFormulation {
    /// All `p^2` entries of `D` are free; the result is symmetrized afterwards.
    Full,
    /// Only symmetric `D` are searched, in half-vectorized coordinates.
    #[default]
    Symmetric,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    /// Constraint radius of the differential-graph program.
    pub lambda1: f64,
    /// Constraint radius of the direction program.
    pub lambda2: f64,
    /// Solver settings; its `lambda` field is overwritten per program.
    pub solver: SolverConfig,
    pub formulation: GraphFormulation,
    pub prior: PriorConvention,
}

impl FitConfig {
    pub fn new(lambda1: f64, lambda2: f64) -> Self {
        Self {
            lambda1,
            lambda2,
            solver: SolverConfig::default(),
            formulation: GraphFormulation::default(),
            prior: PriorConvention::default(),
        }
    }

    /// Both radii set to [`default_lambda`].
    pub fn with_default_lambdas(p: usize, n: usize) -> Self {
        let l = default_lambda(p, n);
        Self::new(l, l)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        self.solver.validate()
    }
}

/// `2 sqrt(log p / n)`, where `n` is the smaller class size.
pub fn default_lambda(p: usize, n: usize) -> f64 {
    2.0 * ((p.max(1) as f64).ln() / n.max(1) as f64).sqrt()
}

/// Mean, covariance (divisor `n_k`) and prior share of one class.
pub fn class_moments(data: &LabeledDataset, class: usize) -> Result<ClassMoments> {
    let rows = data.rows_of_class(class);
    if rows.is_empty() {
        return Err(Error::UnknownClass(class));
    }
    if rows.len() < 2 {
        return Err(Error::TooFewSamples {
            class,
            n_k: rows.len(),
            required: 2,
        });
    }
    ClassMoments::from_rows(&data.select_rows(&rows), data.n())
}

fn check_pair(m1: &ClassMoments, m2: &ClassMoments) -> Result<()> {
    if m1.p() != m2.p() {
        return Err(Error::DimensionMismatch {
            expected: m1.p(),
            got: m2.p(),
        });
    }
    Ok(())
}

/// Estimate of `Omega2 - Omega1` from the l1 program with constraint
/// `|(S1 D S2 + S2 D S1)/2 - S1 + S2|_inf <= lambda1`.
pub fn estimate_differential_graph(
    m1: &ClassMoments,
    m2: &ClassMoments,
    cfg: &FitConfig,
) -> Result<(DMatrix<f64>, SolveReport)> {
    check_pair(m1, m2)?;
    cfg.validate()?;
    graph_program(
        &m1.sigma_hat,
        &m2.sigma_hat,
        &(&m1.sigma_hat - &m2.sigma_hat),
        cfg.lambda1,
        cfg,
    )
}

/// `min |D|_1  s.t.  |(S1 D S2 + S2 D S1)/2 - target|_inf <= lambda`.
pub(crate) fn graph_program(
    s1: &DMatrix<f64>,
    s2: &DMatrix<f64>,
    target: &DMatrix<f64>,
    lambda: f64,
    cfg: &FitConfig,
) -> Result<(DMatrix<f64>, SolveReport)> {
    let p = s1.nrows();
    let solver = cfg.solver.with_lambda(lambda);
    match cfg.formulation {
        GraphFormulation::Full => {
            let op = sylvester_operator(s1, s2)?;
            let report = solve_l1_dantzig(&op, target.as_slice(), &solver)?;
            let d = DMatrix::from_column_slice(p, p, &report.solution);
            Ok((linalg::symmetrized(d), report))
        }
        GraphFormulation::Symmetric => {
            let op = symmetric_sylvester_operator(s1, s2)?;
            let b = half_vectorize(&linalg::symmetrized(target.clone()));
            let report = solve_weighted_l1_dantzig(&op, &b, &op.l1_weights(), &solver)?;
            Ok((half_unvectorize(&report.solution, p), report))
        }
    }
}

/// Estimate of `Omega2 (mu2 - mu1)` from
/// `min |b|_1  s.t.  |S2 b - mu2 + mu1|_inf <= lambda2`.
pub fn estimate_direction(
    m1: &ClassMoments,
    m2: &ClassMoments,
    cfg: &FitConfig,
) -> Result<(DVector<f64>, SolveReport)> {
    check_pair(m1, m2)?;
    cfg.validate()?;
    direction_program(&m2.sigma_hat, &(&m2.mu_hat - &m1.mu_hat), cfg.lambda2, cfg)
}

pub(crate) fn direction_program(
    sigma: &DMatrix<f64>,
    delta: &DVector<f64>,
    lambda: f64,
    cfg: &FitConfig,
) -> Result<(DVector<f64>, SolveReport)> {
    let op = matrix_operator(sigma.clone())?;
    let report = solve_l1_dantzig(&op, delta.as_slice(), &cfg.solver.with_lambda(lambda))?;
    Ok((DVector::from_column_slice(&report.solution), report))
}

/// Combine moments and the two estimates into a classifier.
pub fn assemble_sdar(
    m1: &ClassMoments,
    m2: &ClassMoments,
    d_hat: DMatrix<f64>,
    beta_hat: DVector<f64>,
    lambdas: (f64, f64),
    prior: PriorConvention,
) -> Result<SdarModel> {
    let logdet = logdet_term(&d_hat, &m1.sigma_hat)?;
    Ok(SdarModel {
        mu1_hat: m1.mu_hat.clone(),
        mu2_hat: m2.mu_hat.clone(),
        d_hat,
        beta_hat,
        logdet_term: logdet,
        log_prior_ratio: prior.log_ratio(m1.pi_hat, m2.pi_hat),
        lambda1: lambdas.0,
        lambda2: lambdas.1,
    })
}

/// Fit the two-class rule to a dataset with labels 1 and 2.
pub fn fit_sdar(data: &LabeledDataset, cfg: &FitConfig) -> Result<SdarModel> {
    let k = data.num_classes();
    if k > 2 {
        return Err(Error::MoreThanTwoClasses(k));
    }
    let m1 = class_moments(data, 1)?;
    let m2 = class_moments(data, 2)?;
    fit_sdar_from_moments(&m1, &m2, cfg)
}

pub fn fit_sdar_from_moments(
    m1: &ClassMoments,
    m2: &ClassMoments,
    cfg: &FitConfig,
) -> Result<SdarModel> {
    let (d_hat, _) = estimate_differential_graph(m1, m2, cfg)?;
    let (beta_hat, _) = estimate_direction(m1, m2, cfg)?;
    assemble_sdar(m1, m2, d_hat, beta_hat, (cfg.lambda1, cfg.lambda2), cfg.prior)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments(mu: &[f64], sigma: DMatrix<f64>, pi: f64) -> ClassMoments {
        ClassMoments::from_parts(100, DVector::from_row_slice(mu), sigma, pi).unwrap()
    }

    #[test]
    fn moments_by_hand() {
        let x = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 2.0, 0.0, 5.0, 5.0, 6.0, 7.0]);
        let data = LabeledDataset::new(x, vec![1, 1, 2, 2]).unwrap();
        let m = class_moments(&data, 1).unwrap();
        assert_eq!(m.mu_hat.as_slice(), &[1.0, 0.0]);
        assert_eq!(m.sigma_hat, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
        assert_eq!(m.pi_hat, 0.5);
        assert!(matches!(class_moments(&data, 3), Err(Error::UnknownClass(3))));
    }

    #[test]
    fn single_row_class_is_too_small() {
        let x = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 2.0]);
        let data = LabeledDataset {
            features: x,
            labels: vec![1, 1, 2],
        };
        assert!(matches!(
            class_moments(&data, 2),
            Err(Error::TooFewSamples { class: 2, n_k: 1, .. })
        ));
    }

    #[test]
    fn equal_covariances_give_zero_graph() {
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 0.4, 0.4, 1.0]);
        let m1 = moments(&[0.0, 0.0], s.clone(), 0.5);
        let m2 = moments(&[1.0, 0.0], s, 0.5);
        for formulation in [GraphFormulation::Full, GraphFormulation::Symmetric] {
            let cfg = FitConfig {
                formulation,
                ..FitConfig::new(0.0, 0.1)
            };
            let (d, _) = estimate_differential_graph(&m1, &m2, &cfg).unwrap();
            assert_eq!(d, DMatrix::zeros(2, 2));
        }
    }

    #[test]
    fn exact_population_graph_at_zero_lambda() {
        let m1 = moments(&[0.0, 0.0], DMatrix::identity(2, 2), 0.5);
        let s2 = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 1.0]));
        let m2 = moments(&[0.0, 0.0], s2, 0.5);
        for formulation in [GraphFormulation::Full, GraphFormulation::Symmetric] {
            let cfg = FitConfig {
                formulation,
                ..FitConfig::new(0.0, 0.0)
            };
            let (d, report) = estimate_differential_graph(&m1, &m2, &cfg).unwrap();
            assert!(report.converged);
            let want = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
            assert!((d - want).abs().max() < 1e-5);
        }
    }

    #[test]
    fn identity_direction_is_the_mean_gap() {
        let m1 = moments(&[0.0, 0.0, 0.0], DMatrix::identity(3, 3), 0.5);
        let m2 = moments(&[2.0, 0.0, 0.0], DMatrix::identity(3, 3), 0.5);
        let (b, _) = estimate_direction(&m1, &m2, &FitConfig::new(0.0, 0.0)).unwrap();
        assert!((b[0] - 2.0).abs() < 1e-5);
        assert!(b[1].abs() < 1e-6 && b[2].abs() < 1e-6);

        let (b0, _) = estimate_direction(&m1, &m1, &FitConfig::new(0.0, 0.0)).unwrap();
        assert_eq!(b0, DVector::zeros(3));
    }

    #[test]
    fn prior_ratio_from_counts() {
        let n1 = 120;
        let n2 = 80;
        let x = DMatrix::from_fn(n1 + n2, 2, |i, j| ((i * 31 + j * 17) % 13) as f64);
        let labels = (0..n1 + n2).map(|i| if i < n1 { 1 } else { 2 }).collect();
        let data = LabeledDataset::new(x, labels).unwrap();
        let model = fit_sdar(&data, &FitConfig::new(100.0, 100.0)).unwrap();
        assert!((model.log_prior_ratio - 1.5f64.ln()).abs() < 1e-12);
        assert_eq!(model.d_hat, DMatrix::zeros(2, 2));
        assert_eq!(model.beta_hat, DVector::zeros(2));
        assert_eq!(model.logdet_term, 0.0);
    }

    #[test]
    fn three_classes_are_rejected() {
        let x = DMatrix::from_fn(6, 1, |i, _| i as f64);
        let data = LabeledDataset::new(x, vec![1, 1, 2, 2, 3, 3]).unwrap();
        assert!(matches!(
            fit_sdar(&data, &FitConfig::new(1.0, 1.0)),
            Err(Error::MoreThanTwoClasses(3))
        ));
    }

    #[test]
    fn one_dimensional_problem() {
        let m1 = moments(&[0.0], DMatrix::from_element(1, 1, 1.0), 0.5);
        let m2 = moments(&[1.0], DMatrix::from_element(1, 1, 0.5), 0.5);
        let cfg = FitConfig::new(0.0, 0.0);
        let model = fit_sdar_from_moments(&m1, &m2, &cfg).unwrap();
        assert!((model.d_hat[(0, 0)] - 1.0).abs() < 1e-5);
        assert!((model.beta_hat[0] - 2.0).abs() < 1e-5);
        assert!((model.logdet_term - 2.0f64.ln()).abs() < 1e-5);
    }

    #[test]
    fn negative_lambda_is_rejected() {
        let m = moments(&[0.0], DMatrix::from_element(1, 1, 1.0), 0.5);
        assert!(estimate_direction(&m, &m, &FitConfig::new(0.1, -1.0)).is_err());
    }
}
