//! Gaussian-copula discriminant analysis (CSDAR).
//!
//! Each feature is mapped to a latent Gaussian scale through Winsorized
//! empirical CDFs; correlations come from Kendall's tau through the sine
//! transform, so the whole fit depends on the data only through ranks.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::classify::{discriminant, logdet_term, PriorConvention};
use crate::error::{Error, Result};
use crate::estimate::{direction_program, graph_program, FitConfig};
use crate::linalg;
use crate::types::{LabeledDataset, SdarModel};

/// Standard normal quantile.
pub fn normal_quantile(u: f64) -> f64 {
    Normal::standard().inverse_cdf(u)
}

/// Empirical CDF clipped to `[1/n^2, 1 - 1/n^2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WinsorizedEcdf {
    pub sorted_values: Vec<f64>,
}

pub fn winsorized_ecdf(samples: &[f64]) -> Result<WinsorizedEcdf> {
    if samples.len() < 2 {
        return Err(Error::TooFewSamples {
            class: 0,
            n_k: samples.len(),
            required: 2,
        });
    }
    if let Some(v) = samples.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(format!("non-finite sample {v}")));
    }
    let mut sorted_values = samples.to_vec();
    sorted_values.sort_by(f64::total_cmp);
    Ok(WinsorizedEcdf { sorted_values })
}

impl WinsorizedEcdf {
    pub fn n(&self) -> usize {
        self.sorted_values.len()
    }

    pub fn evaluate(&self, t: f64) -> f64 {
        let n = self.n() as f64;
        let below = self.sorted_values.partition_point(|&v| v <= t) as f64;
        let floor = 1.0 / (n * n);
        (below / n).clamp(floor, 1.0 - floor)
    }

    /// `Phi^-1` of the clipped ECDF; always finite.
    pub fn normal_score(&self, t: f64) -> f64 {
        normal_quantile(self.evaluate(t))
    }
}

fn column_ecdfs(x: &DMatrix<f64>) -> Result<Vec<WinsorizedEcdf>> {
    x.column_iter()
        .map(|c| winsorized_ecdf(c.as_slice()))
        .collect()
}

/// Latent class-2 mean and variance of each feature, measured on the
/// class-1 normal-score scale. The variance uses divisor `n2 - 1`.
pub fn copula_class2_moments(
    data2: &DMatrix<f64>,
    ecdf1: &[WinsorizedEcdf],
) -> Result<(DVector<f64>, DVector<f64>)> {
    let (n2, p) = data2.shape();
    if n2 < 2 {
        return Err(Error::TooFewSamples {
            class: 2,
            n_k: n2,
            required: 2,
        });
    }
    if ecdf1.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: ecdf1.len(),
        });
    }
    let mut mu = DVector::zeros(p);
    let mut var = DVector::zeros(p);
    for j in 0..p {
        let scores: Vec<f64> = data2.column(j).iter().map(|&v| ecdf1[j].normal_score(v)).collect();
        let s0 = scores[0];
        let m = s0 + scores.iter().map(|s| s - s0).sum::<f64>() / n2 as f64;
        mu[j] = m;
        var[j] = scores.iter().map(|s| (s - m) * (s - m)).sum::<f64>() / (n2 - 1) as f64;
    }
    Ok((mu, var))
}

/// Kendall's tau-a between all pairs of columns. Tied pairs count as 0.
pub fn kendall_tau_matrix(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, p) = x.shape();
    let pairs = n * n.saturating_sub(1) / 2;
    let mut tau = DMatrix::identity(p, p);
    if pairs == 0 {
        return tau;
    }
    // pairwise order signs per column, then one dot product per column pair
    let signs: Vec<Vec<i8>> = (0..p)
        .map(|j| {
            let c = x.column(j);
            let mut s = Vec::with_capacity(pairs);
            for i in 0..n {
                for k in (i + 1)..n {
                    s.push(match c[i].partial_cmp(&c[k]) {
                        Some(std::cmp::Ordering::Less) => -1,
                        Some(std::cmp::Ordering::Greater) => 1,
                        _ => 0,
                    });
                }
            }
            s
        })
        .collect();
    for a in 0..p {
        for b in (a + 1)..p {
            let concord: i64 = signs[a]
                .iter()
                .zip(&signs[b])
                .map(|(&u, &v)| (u * v) as i64)
                .sum();
            let t = concord as f64 / pairs as f64;
            tau[(a, b)] = t;
            tau[(b, a)] = t;
        }
    }
    tau
}

/// `sin(pi tau / 2)` off the diagonal, 1 on it.
pub fn sine_correlation(tau: &DMatrix<f64>) -> DMatrix<f64> {
    let p = tau.nrows();
    DMatrix::from_fn(p, p, |i, j| {
        if i == j {
            1.0
        } else {
            (std::f64::consts::FRAC_PI_2 * tau[(i, j)]).sin()
        }
    })
}

/// Eigenvalues clipped at `floor`, then rescaled to unit diagonal.
pub fn nearest_correlation(r: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(r.clone());
    let v = &eig.eigenvectors;
    let vals = eig.eigenvalues.map(|x| x.max(floor));
    let scaled = DMatrix::from_fn(v.nrows(), v.ncols(), |i, j| v[(i, j)] * vals[j]);
    let m = scaled * v.transpose();
    let d = m.diagonal().map(|x| 1.0 / x.sqrt());
    let p = r.nrows();
    linalg::symmetrized(DMatrix::from_fn(p, p, |i, j| {
        if i == j {
            1.0
        } else {
            m[(i, j)] * d[i] * d[j]
        }
    }))
}

const PROJECTION_FLOOR: f64 = 1e-8;

fn correlation_estimate(x: &DMatrix<f64>) -> DMatrix<f64> {
    let r = sine_correlation(&kendall_tau_matrix(x));
    if linalg::min_eigenvalue(&r) < PROJECTION_FLOOR {
        nearest_correlation(&r, PROJECTION_FLOOR)
    } else {
        r
    }
}

/// Rank-based ingredients of a copula fit that do not depend on the
/// tuning parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CopulaMoments {
    pub ecdf1: Vec<WinsorizedEcdf>,
    pub ecdf2: Vec<WinsorizedEcdf>,
    pub mu2_hat: DVector<f64>,
    pub sigma2_jj_hat: DVector<f64>,
    pub r_hat1: DMatrix<f64>,
    pub r_hat2: DMatrix<f64>,
    pub sigma_tilde1: DMatrix<f64>,
    pub sigma_tilde2: DMatrix<f64>,
    pub n1: usize,
    pub n2: usize,
}

impl CopulaMoments {
    pub fn from_data(data: &LabeledDataset) -> Result<Self> {
        let k = data.num_classes();
        if k != 2 {
            return Err(if k > 2 {
                Error::MoreThanTwoClasses(k)
            } else {
                Error::UnknownClass(2)
            });
        }
        let x1 = data.class_matrix(1);
        let x2 = data.class_matrix(2);
        for (class, x) in [(1, &x1), (2, &x2)] {
            if x.nrows() < 2 {
                return Err(Error::TooFewSamples {
                    class,
                    n_k: x.nrows(),
                    required: 2,
                });
            }
        }
        let ecdf1 = column_ecdfs(&x1)?;
        let ecdf2 = column_ecdfs(&x2)?;
        let (mu2_hat, sigma2_jj_hat) = copula_class2_moments(&x2, &ecdf1)?;
        if let Some(feature) = sigma2_jj_hat.iter().position(|&v| v <= 0.0) {
            return Err(Error::DegenerateVariance { feature });
        }
        let r_hat1 = correlation_estimate(&x1);
        let r_hat2 = correlation_estimate(&x2);
        let sd = sigma2_jj_hat.map(f64::sqrt);
        let p = data.p();
        let sigma_tilde2 = DMatrix::from_fn(p, p, |i, j| sd[i] * r_hat2[(i, j)] * sd[j]);
        Ok(Self {
            ecdf1,
            ecdf2,
            mu2_hat,
            sigma2_jj_hat,
            sigma_tilde1: r_hat1.clone(),
            r_hat1,
            r_hat2,
            sigma_tilde2,
            n1: x1.nrows(),
            n2: x2.nrows(),
        })
    }

    pub fn p(&self) -> usize {
        self.mu2_hat.len()
    }

    /// Pooled estimate of the latent value of feature `j` at raw value `t`.
    pub fn transform(&self, j: usize, t: f64) -> f64 {
        let w1 = self.n1 as f64;
        let w2 = self.n2 as f64;
        let s1 = self.ecdf1[j].normal_score(t);
        let s2 = self.mu2_hat[j] + self.sigma2_jj_hat[j].sqrt() * self.ecdf2[j].normal_score(t);
        (w1 * s1 + w2 * s2) / (w1 + w2)
    }

    pub fn transform_vector(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        if z.len() != self.p() {
            return Err(Error::DimensionMismatch {
                expected: self.p(),
                got: z.len(),
            });
        }
        Ok(DVector::from_fn(self.p(), |j, _| self.transform(j, z[j])))
    }

    pub fn transform_rows(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.p() {
            return Err(Error::DimensionMismatch {
                expected: self.p(),
                got: x.ncols(),
            });
        }
        Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
            self.transform(j, x[(i, j)])
        }))
    }

    /// Differential graph on the latent scale.
    pub fn graph(&self, lambda1: f64, cfg: &FitConfig) -> Result<DMatrix<f64>> {
        let target = &self.sigma_tilde1 - &self.sigma_tilde2;
        Ok(graph_program(&self.sigma_tilde1, &self.sigma_tilde2, &target, lambda1, cfg)?.0)
    }

    /// Discriminating direction on the latent scale (class-1 mean is 0).
    pub fn direction(&self, lambda2: f64, cfg: &FitConfig) -> Result<DVector<f64>> {
        Ok(direction_program(&self.sigma_tilde2, &self.mu2_hat, lambda2, cfg)?.0)
    }

    pub fn assemble(
        self,
        d_hat: DMatrix<f64>,
        beta_hat: DVector<f64>,
        lambdas: (f64, f64),
        prior: PriorConvention,
    ) -> Result<CopulaModel> {
        let p = self.p();
        let total = (self.n1 + self.n2) as f64;
        let sdar = SdarModel {
            mu1_hat: DVector::zeros(p),
            mu2_hat: self.mu2_hat.clone(),
            logdet_term: logdet_term(&d_hat, &self.sigma_tilde1)?,
            d_hat,
            beta_hat,
            log_prior_ratio: prior.log_ratio(self.n1 as f64 / total, self.n2 as f64 / total),
            lambda1: lambdas.0,
            lambda2: lambdas.1,
        };
        Ok(CopulaModel {
            moments: self,
            sdar,
        })
    }
}

/// A fitted CSDAR classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct CopulaModel {
    pub moments: CopulaMoments,
    /// SDAR rule on the latent scale.
    pub sdar: SdarModel,
}

pub fn fit_csdar(data: &LabeledDataset, cfg: &FitConfig) -> Result<CopulaModel> {
    cfg.validate()?;
    let moments = CopulaMoments::from_data(data)?;
    let d = moments.graph(cfg.lambda1, cfg)?;
    let beta = moments.direction(cfg.lambda2, cfg)?;
    moments.assemble(d, beta, (cfg.lambda1, cfg.lambda2), cfg.prior)
}

pub fn classify_csdar(z: &DVector<f64>, model: &CopulaModel) -> Result<usize> {
    let w = model.moments.transform_vector(z)?;
    Ok(if discriminant(&w, &model.sdar)? > 0.0 { 1 } else { 2 })
}

pub fn classify_csdar_rows(x: &DMatrix<f64>, model: &CopulaModel) -> Result<Vec<usize>> {
    let w = model.moments.transform_rows(x)?;
    crate::classify::classify_rows(&w, &model.sdar)
}
