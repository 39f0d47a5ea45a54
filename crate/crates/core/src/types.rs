//! Domain types shared by every stage of the pipeline, dataset validation and
//! the exact Gaussian log-likelihood-ratio used as a reference in tests.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// Observations in rows, one class label per row. Labels run over `1..=K`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub features: DMatrix<f64>,
    pub labels: Vec<usize>,
}

/// A structural problem found by [`validate_dataset`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    LabelCount { rows: usize, labels: usize },
    TooFewRows { n: usize },
    NoFeatures,
    LabelOutOfRange { row: usize, label: usize },
    MissingClass { class: usize },
    ClassTooSmall { class: usize, n_k: usize },
    NonFinite { row: usize, col: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::LabelCount { rows, labels } => {
                write!(f, "{rows} feature rows but {labels} labels")
            }
            Violation::TooFewRows { n } => write!(f, "dataset has n = {n} < 4 rows"),
            Violation::NoFeatures => f.write_str("dataset has no feature columns"),
            Violation::LabelOutOfRange { row, label } => {
                write!(f, "row {row} has label {label}, labels must start at 1")
            }
            Violation::MissingClass { class } => {
                write!(f, "class {class} has no rows but a larger label is used")
            }
            Violation::ClassTooSmall { class, .. } => write!(f, "class {class} has n_k < 2"),
            Violation::NonFinite { row, col } => {
                write!(f, "non-finite feature at row {row}, column {col}")
            }
        }
    }
}

impl LabeledDataset {
    pub fn new(features: DMatrix<f64>, labels: Vec<usize>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: features.nrows(),
                got: labels.len(),
            });
        }
        Ok(Self { features, labels })
    }

    /// Stack a class-1 block on top of a class-2 block.
    pub fn from_two_classes(x1: &DMatrix<f64>, x2: &DMatrix<f64>) -> Result<Self> {
        if x1.ncols() != x2.ncols() {
            return Err(Error::DimensionMismatch {
                expected: x1.ncols(),
                got: x2.ncols(),
            });
        }
        let (n1, n2, p) = (x1.nrows(), x2.nrows(), x1.ncols());
        let features = DMatrix::from_fn(n1 + n2, p, |i, j| {
            if i < n1 {
                x1[(i, j)]
            } else {
                x2[(i - n1, j)]
            }
        });
        let mut labels = vec![1; n1];
        labels.extend(std::iter::repeat_n(2, n2));
        Self::new(features, labels)
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn p(&self) -> usize {
        self.features.ncols()
    }

    /// Largest label present, i.e. K.
    pub fn num_classes(&self) -> usize {
        self.labels.iter().copied().max().unwrap_or(0)
    }

    pub fn class_counts(&self) -> BTreeMap<usize, usize> {
        let mut counts = BTreeMap::new();
        for &l in &self.labels {
            *counts.entry(l).or_insert(0) += 1;
        }
        counts
    }

    pub fn rows_of_class(&self, class: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.labels[i] == class).collect()
    }

    pub fn select_rows(&self, rows: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), self.p(), |i, j| self.features[(rows[i], j)])
    }

    pub fn class_matrix(&self, class: usize) -> DMatrix<f64> {
        self.select_rows(&self.rows_of_class(class))
    }

    pub fn subset(&self, rows: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: self.select_rows(rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn select_columns(&self, cols: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: DMatrix::from_fn(self.n(), cols.len(), |i, j| self.features[(i, cols[j])]),
            labels: self.labels.clone(),
        }
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.features.row(i).transpose()
    }

    /// Validate and return `self`, or the list of violations as an error.
    pub fn validated(self) -> Result<Self> {
        let v = validate_dataset(&self);
        if v.is_empty() {
            Ok(self)
        } else {
            Err(Error::InvalidDataset(v))
        }
    }
}

/// Structural checks on a dataset. An empty list means the dataset is usable.
pub fn validate_dataset(data: &LabeledDataset) -> Vec<Violation> {
    let mut out = Vec::new();
    let (n, p) = (data.features.nrows(), data.features.ncols());
    if n != data.labels.len() {
        out.push(Violation::LabelCount {
            rows: n,
            labels: data.labels.len(),
        });
    }
    if n < 4 {
        out.push(Violation::TooFewRows { n });
    }
    if p == 0 {
        out.push(Violation::NoFeatures);
    }
    for (row, &label) in data.labels.iter().enumerate() {
        if label == 0 {
            out.push(Violation::LabelOutOfRange { row, label });
        }
    }
    let counts = data.class_counts();
    let k = data.num_classes();
    for class in 1..=k {
        match counts.get(&class) {
            None => out.push(Violation::MissingClass { class }),
            Some(&n_k) if n_k < 2 => out.push(Violation::ClassTooSmall { class, n_k }),
            _ => {}
        }
    }
    for col in 0..p {
        for row in 0..n {
            if !data.features[(row, col)].is_finite() {
                out.push(Violation::NonFinite { row, col });
            }
        }
    }
    out
}

/// Full parameter set of a two-class Gaussian problem.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPairParams {
    pub pi1: f64,
    pub pi2: f64,
    pub mu1: DVector<f64>,
    pub mu2: DVector<f64>,
    pub sigma1: DMatrix<f64>,
    pub sigma2: DMatrix<f64>,
}

impl GaussianPairParams {
    pub fn new(
        pi1: f64,
        pi2: f64,
        mu1: DVector<f64>,
        mu2: DVector<f64>,
        sigma1: DMatrix<f64>,
        sigma2: DMatrix<f64>,
    ) -> Result<Self> {
        let theta = Self {
            pi1,
            pi2,
            mu1,
            mu2,
            sigma1,
            sigma2,
        };
        theta.validate()?;
        Ok(theta)
    }

    pub fn p(&self) -> usize {
        self.mu1.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pi1 > 0.0 && self.pi1 < 1.0 && self.pi2 > 0.0 && self.pi2 < 1.0)
            || (self.pi1 + self.pi2 - 1.0).abs() > 1e-12
        {
            return Err(Error::InvalidParameter(format!(
                "priors ({}, {}) must lie in (0,1) and sum to 1",
                self.pi1, self.pi2
            )));
        }
        let p = self.p();
        for (what, m) in [("sigma1", &self.sigma1), ("sigma2", &self.sigma2)] {
            if m.nrows() != p || m.ncols() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    got: m.nrows(),
                });
            }
            if linalg::max_asymmetry(m) > 1e-10 {
                return Err(Error::InvalidParameter(format!("{what} is not symmetric")));
            }
            if linalg::min_eigenvalue(m) <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "{what} is not positive definite"
                )));
            }
        }
        if self.mu2.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: self.mu2.len(),
            });
        }
        Ok(())
    }

    pub fn omega1(&self) -> Result<DMatrix<f64>> {
        linalg::inverse_spd(&self.sigma1, "sigma1")
    }

    pub fn omega2(&self) -> Result<DMatrix<f64>> {
        linalg::inverse_spd(&self.sigma2, "sigma2")
    }

    /// Differential graph `Omega2 - Omega1`.
    pub fn differential_graph(&self) -> Result<DMatrix<f64>> {
        Ok(linalg::symmetrized(self.omega2()? - self.omega1()?))
    }

    /// Discriminating direction `Omega2 (mu2 - mu1)`.
    pub fn direction(&self) -> Result<DVector<f64>> {
        let chol = linalg::cholesky(&self.sigma2, "sigma2")?;
        Ok(chol.solve(&(&self.mu2 - &self.mu1)))
    }
}

/// Per-class sample summary.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMoments {
    pub n_k: usize,
    pub mu_hat: DVector<f64>,
    pub sigma_hat: DMatrix<f64>,
    pub pi_hat: f64,
}

impl ClassMoments {
    /// Moments of the rows of `x` (divisor `n_k`), with prior `n_k / n_total`.
    pub fn from_rows(x: &DMatrix<f64>, n_total: usize) -> Result<Self> {
        if x.nrows() < 2 {
            return Err(Error::TooFewSamples {
                class: 0,
                n_k: x.nrows(),
                required: 2,
            });
        }
        let (mu_hat, sigma_hat) = linalg::mean_and_covariance(x, 0);
        Self::from_parts(x.nrows(), mu_hat, sigma_hat, x.nrows() as f64 / n_total as f64)
    }

    /// Assemble moments from given pieces; `sigma_hat` is symmetrized.
    pub fn from_parts(
        n_k: usize,
        mu_hat: DVector<f64>,
        sigma_hat: DMatrix<f64>,
        pi_hat: f64,
    ) -> Result<Self> {
        let p = mu_hat.len();
        if sigma_hat.nrows() != p || sigma_hat.ncols() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: sigma_hat.nrows(),
            });
        }
        if !(pi_hat > 0.0 && pi_hat < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "prior estimate {pi_hat} outside (0,1)"
            )));
        }
        Ok(Self {
            n_k,
            mu_hat,
            sigma_hat: linalg::symmetrized(sigma_hat),
            pi_hat,
        })
    }

    pub fn p(&self) -> usize {
        self.mu_hat.len()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        linalg::min_eigenvalue(&self.sigma_hat)
    }
}

/// A fitted two-class sparse QDA rule.
#[derive(Debug, Clone, PartialEq)]
pub struct SdarModel {
    pub mu1_hat: DVector<f64>,
    pub mu2_hat: DVector<f64>,
    /// Estimate of `Omega2 - Omega1`.
    pub d_hat: DMatrix<f64>,
    /// Estimate of `Omega2 (mu2 - mu1)`.
    pub beta_hat: DVector<f64>,
    /// `log|D Sigma1 + I|`.
    pub logdet_term: f64,
    pub log_prior_ratio: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl SdarModel {
    pub fn p(&self) -> usize {
        self.mu1_hat.len()
    }
}

/// Interior-point settings for one l1 program.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Constraint radius.
    pub lambda: f64,
    pub max_outer_iters: usize,
    pub duality_gap_tol: f64,
    pub cg_tol: f64,
    pub cg_max_iters: usize,
    /// Largest number of columns or constraint rows the solver may activate
    /// before giving up with `NotConverged`.
    pub max_working_set: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            max_outer_iters: 100,
            duality_gap_tol: 1e-7,
            cg_tol: 1e-9,
            cg_max_iters: 500,
            max_working_set: 2000,
        }
    }
}

impl SolverConfig {
    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self {
            lambda,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be finite and nonnegative, got {}",
                self.lambda
            )));
        }
        if !(self.duality_gap_tol > 0.0 && self.cg_tol > 0.0) {
            return Err(Error::InvalidParameter("tolerances must be positive".into()));
        }
        if self.max_outer_iters == 0 || self.cg_max_iters == 0 || self.max_working_set == 0 {
            return Err(Error::InvalidParameter("iteration limits must be positive".into()));
        }
        Ok(())
    }
}

/// `log(pi1 phi(z; mu1, Sigma1)) - log(pi2 phi(z; mu2, Sigma2))`, computed
/// from the two Gaussian densities with Cholesky solves.
pub fn log_likelihood_ratio(z: &DVector<f64>, theta: &GaussianPairParams) -> Result<f64> {
    if z.len() != theta.p() {
        return Err(Error::DimensionMismatch {
            expected: theta.p(),
            got: z.len(),
        });
    }
    let l1 = log_density(z, &theta.mu1, &theta.sigma1, "sigma1")?;
    let l2 = log_density(z, &theta.mu2, &theta.sigma2, "sigma2")?;
    Ok(theta.pi1.ln() + l1 - theta.pi2.ln() - l2)
}

/// Gaussian log-density.
pub fn log_density(
    z: &DVector<f64>,
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    what: &str,
) -> Result<f64> {
    let chol = linalg::cholesky(sigma, what)?;
    let diff = z - mu;
    let w = chol.l().solve_lower_triangular(&diff).ok_or_else(|| {
        Error::Factorization(format!("triangular solve with {what} failed"))
    })?;
    let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let p = z.len() as f64;
    Ok(-0.5 * (p * (2.0 * std::f64::consts::PI).ln() + logdet + w.norm_squared()))
}
