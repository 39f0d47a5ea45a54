//! Seeded synthetic problems: the Gaussian simulation models, their copula
//! variants, and the two impossibility settings.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::types::{GaussianPairParams, LabeledDataset};

/// Structure of the class-2 precision matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PrecisionModel {
    /// `U' diag(l) U` with Gaussian `U` (plus a `1e-6` ridge) and `l ~ Unif[1, 2]`.
    Random,
    /// `Omega_ij = 0.5^|i-j|`.
    Ar1,
    /// Sparse Erdos-Renyi pattern shifted to be positive definite.
    ErdosRenyi,
}

impl PrecisionModel {
    /// Models 1-3 are Gaussian; 4-6 reuse them with marginal transforms.
    pub fn from_id(id: u8) -> Result<(Self, bool)> {
        let m = match id {
            1 | 4 => PrecisionModel::Random,
            2 | 5 => PrecisionModel::Ar1,
            3 | 6 => PrecisionModel::ErdosRenyi,
            _ => return Err(Error::InvalidParameter(format!("unknown model id {id}"))),
        };
        Ok((m, id >= 4))
    }
}

pub const AR1_RHO: f64 = 0.5;
pub const ER_EDGE_PROB: f64 = 0.05;
const PD_MARGIN: f64 = 0.05;
const GRAPH_MARGIN_FRACTION: f64 = 0.05;
const MIN_P: usize = 30;
const MIN_P_COPULA: usize = 85;

/// Nonzero counts of the generated direction and differential graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sparsity {
    /// Leading entries of the direction set to 1.
    pub beta: usize,
    /// Nonzero entries in the upper triangle (diagonal included) of `D`.
    pub graph: usize,
}

impl Default for Sparsity {
    fn default() -> Self {
        Self { beta: 10, graph: 20 }
    }
}

/// Strictly increasing marginal map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Transform {
    Identity,
    Cube,
    Arctan,
    ArctanCube,
    Fifth,
}

impl Transform {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Transform::Identity => x,
            Transform::Cube => x * x * x,
            Transform::Arctan => x.atan(),
            Transform::ArctanCube => x.atan().powi(3),
            Transform::Fifth => x.powi(5),
        }
    }

    /// Inverse map; outside the range of `apply` the result is infinite.
    pub fn inverse(self, y: f64) -> f64 {
        let half_pi = std::f64::consts::FRAC_PI_2;
        let tan_or_inf = |t: f64| {
            if t >= half_pi {
                f64::INFINITY
            } else if t <= -half_pi {
                f64::NEG_INFINITY
            } else {
                t.tan()
            }
        };
        match self {
            Transform::Identity => y,
            Transform::Cube => y.cbrt(),
            Transform::Arctan => tan_or_inf(y),
            Transform::ArctanCube => tan_or_inf(y.cbrt()),
            Transform::Fifth => y.signum() * y.abs().powf(0.2),
        }
    }
}

/// Transforms of the copula models: `x^3` on features 1-5, `atan` on
/// 11-15, `atan^3` on 21-50, `x^5` on 51-85 (1-based), identity elsewhere.
pub fn copula_transforms(p: usize) -> Vec<Transform> {
    (1..=p)
        .map(|j| match j {
            1..=5 => Transform::Cube,
            11..=15 => Transform::Arctan,
            21..=50 => Transform::ArctanCube,
            51..=85 => Transform::Fifth,
            _ => Transform::Identity,
        })
        .collect()
}

/// Ground truth of a simulated two-class problem.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticProblem {
    pub theta: GaussianPairParams,
    /// `Omega2 - Omega1`.
    pub d_true: DMatrix<f64>,
    /// `Omega2 (mu2 - mu1)`.
    pub beta_true: DVector<f64>,
    /// Per-feature maps applied to the Gaussian draws, if any.
    pub transforms: Option<Vec<Transform>>,
    pub seed: u64,
    /// Factor applied to the random sparse matrix to keep `Omega1`
    /// positive definite (1 when no shrinking was needed).
    pub graph_scale: f64,
}

impl SyntheticProblem {
    pub fn p(&self) -> usize {
        self.theta.p()
    }

    fn from_precisions(
        omega1: DMatrix<f64>,
        omega2: DMatrix<f64>,
        mu1: DVector<f64>,
        mu2: DVector<f64>,
        seed: u64,
        graph_scale: f64,
    ) -> Result<Self> {
        let sigma1 = linalg::inverse_spd(&omega1, "Omega1")?;
        let sigma2 = linalg::inverse_spd(&omega2, "Omega2")?;
        let beta_true = &omega2 * (&mu2 - &mu1);
        let d_true = linalg::symmetrized(&omega2 - &omega1);
        let theta = GaussianPairParams::new(0.5, 0.5, mu1, mu2, sigma1, sigma2)?;
        Ok(Self {
            theta,
            d_true,
            beta_true,
            transforms: None,
            seed,
            graph_scale,
        })
    }
}

fn precision_matrix(model: PrecisionModel, p: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    match model {
        PrecisionModel::Random => {
            let lam: Vec<f64> = (0..p).map(|_| rng.random_range(1.0..=2.0)).collect();
            let u = DMatrix::from_fn(p, p, |_, _| rng.sample::<f64, _>(StandardNormal));
            let lu = DMatrix::from_fn(p, p, |i, j| lam[i] * u[(i, j)]);
            let mut omega = linalg::symmetrized(u.transpose() * lu);
            for i in 0..p {
                omega[(i, i)] += 1e-6;
            }
            omega
        }
        PrecisionModel::Ar1 => {
            DMatrix::from_fn(p, p, |i, j| AR1_RHO.powi((i as i32 - j as i32).abs()))
        }
        PrecisionModel::ErdosRenyi => {
            let mut omega = DMatrix::zeros(p, p);
            for j in 0..p {
                for i in 0..j {
                    if rng.random_bool(ER_EDGE_PROB) {
                        let mag = rng.random_range(0.5..=1.0);
                        let v = if rng.random_bool(0.5) { mag } else { -mag };
                        omega[(i, j)] = v;
                        omega[(j, i)] = v;
                    }
                }
            }
            let shift = (-linalg::min_eigenvalue(&omega)).max(0.0) + PD_MARGIN;
            for i in 0..p {
                omega[(i, i)] += shift;
            }
            omega
        }
    }
}

/// Symmetric matrix with `count` standard-normal entries at uniformly drawn
/// upper-triangle positions (diagonal included), mirrored below.
fn random_sparse_symmetric(p: usize, count: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let positions = index::sample(rng, p * (p + 1) / 2, count).into_vec();
    let mut sorted = positions;
    sorted.sort_unstable();
    let mut d = DMatrix::zeros(p, p);
    for k in sorted {
        let (i, j) = upper_position(k);
        let v: f64 = rng.sample(StandardNormal);
        d[(i, j)] = v;
        d[(j, i)] = v;
    }
    d
}

/// Position of the `k`-th upper-triangle entry, column by column.
fn upper_position(k: usize) -> (usize, usize) {
    let mut j = 0;
    while (j + 1) * (j + 2) / 2 <= k {
        j += 1;
    }
    (k - j * (j + 1) / 2, j)
}

/// One of the Gaussian simulation models (1-3) with the default sparsity.
pub fn gen_model(model_id: u8, p: usize, seed: u64) -> Result<SyntheticProblem> {
    let (model, copula) = PrecisionModel::from_id(model_id)?;
    if copula {
        return Err(Error::InvalidParameter(format!(
            "model {model_id} is a copula model; use gen_copula_model"
        )));
    }
    if p < MIN_P {
        return Err(Error::DimensionTooSmall { p, min: MIN_P });
    }
    gen_model_with(model, p, Sparsity::default(), seed)
}

/// A Gaussian problem with the given precision structure and sparsity.
///
/// `Omega1 = Omega2 + c D` for a random sparse symmetric `D`, where `c`
/// starts at 1 and is multiplied by 0.9 until the smallest eigenvalue of
/// `Omega1` exceeds `0.05 lambda_min(Omega2)`. The means are
/// `mu1 = 0` and `mu2 = -Sigma2 b` with `b` the 0/1 vector of the leading
/// `sparsity.beta` coordinates, so the true direction is `-b`.
pub fn gen_model_with(
    model: PrecisionModel,
    p: usize,
    sparsity: Sparsity,
    seed: u64,
) -> Result<SyntheticProblem> {
    if p < sparsity.beta.max(1) || p * (p + 1) / 2 < sparsity.graph {
        return Err(Error::DimensionTooSmall {
            p,
            min: sparsity.beta.max(1),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega2 = precision_matrix(model, p, &mut rng);
    let d = random_sparse_symmetric(p, sparsity.graph, &mut rng);

    let margin = GRAPH_MARGIN_FRACTION * linalg::min_eigenvalue(&omega2);
    let mut scale = 1.0;
    let mut omega1 = &omega2 + &d;
    while linalg::min_eigenvalue(&omega1) <= margin {
        scale *= 0.9;
        omega1 = &omega2 + &d * scale;
    }

    let b = DVector::from_fn(p, |i, _| if i < sparsity.beta { 1.0 } else { 0.0 });
    let sigma2 = linalg::inverse_spd(&omega2, "Omega2")?;
    let mu1 = DVector::zeros(p);
    let mu2 = -(&sigma2 * &b);
    let mut problem = SyntheticProblem::from_precisions(omega1, omega2, mu1, mu2, seed, scale)?;
    problem.d_true = -(d * scale);
    problem.beta_true = -b;
    Ok(problem)
}

/// Copula models 4-6: models 1-3 with the fixed marginal transforms.
pub fn gen_copula_model(model_id: u8, p: usize, seed: u64) -> Result<SyntheticProblem> {
    let (model, copula) = PrecisionModel::from_id(model_id)?;
    if !copula {
        return Err(Error::InvalidParameter(format!(
            "model {model_id} is not a copula model"
        )));
    }
    if p < MIN_P_COPULA {
        return Err(Error::DimensionTooSmall {
            p,
            min: MIN_P_COPULA,
        });
    }
    let mut problem = gen_model_with(model, p, Sparsity::default(), seed)?;
    problem.transforms = Some(copula_transforms(p));
    Ok(problem)
}

/// Either kind of simulation model by id (1-6).
pub fn gen_any_model(model_id: u8, p: usize, seed: u64) -> Result<SyntheticProblem> {
    if PrecisionModel::from_id(model_id)?.1 {
        gen_copula_model(model_id, p, seed)
    } else {
        gen_model(model_id, p, seed)
    }
}

/// The two settings where consistent estimation is impossible without
/// sparsity: (1) identity covariances and `mu1 = -mu2 = 1/sqrt(p)`;
/// (2) `Sigma1 = I`, `Sigma2 = (I + 2/sqrt(p) sum_{i <= p/2} E_ii)^-1` and
/// `mu1 = -mu2 = e_1`.
pub fn gen_impossibility(setting: u8, p: usize, seed: u64) -> Result<SyntheticProblem> {
    if p == 0 {
        return Err(Error::DimensionTooSmall { p, min: 1 });
    }
    let eye = DMatrix::identity(p, p);
    match setting {
        1 => {
            let mu = DVector::from_element(p, 1.0 / (p as f64).sqrt());
            SyntheticProblem::from_precisions(eye.clone(), eye, mu.clone(), -mu, seed, 1.0)
        }
        2 => {
            if !p.is_multiple_of(2) {
                return Err(Error::OddDimension(p));
            }
            let bump = 2.0 / (p as f64).sqrt();
            let omega2 = DMatrix::from_fn(p, p, |i, j| {
                if i != j {
                    0.0
                } else if i < p / 2 {
                    1.0 + bump
                } else {
                    1.0
                }
            });
            let mu = DVector::from_fn(p, |i, _| if i == 0 { 1.0 } else { 0.0 });
            let mut problem =
                SyntheticProblem::from_precisions(eye, omega2, mu.clone(), -mu, seed, 1.0)?;
            // exact diagonal inverse instead of the Cholesky round trip
            for i in 0..p / 2 {
                problem.theta.sigma2[(i, i)] = 1.0 / (1.0 + bump);
            }
            Ok(problem)
        }
        _ => Err(Error::InvalidParameter(format!(
            "unknown impossibility setting {setting}"
        ))),
    }
}

/// Draws from a problem's class-conditional distributions.
#[derive(Debug, Clone)]
pub struct Sampler {
    mu: [DVector<f64>; 2],
    /// Transposed Cholesky factors.
    factor_t: [DMatrix<f64>; 2],
    pi2: f64,
    transforms: Option<Vec<Transform>>,
}

impl Sampler {
    pub fn new(problem: &SyntheticProblem) -> Result<Self> {
        let t = &problem.theta;
        let l1 = linalg::cholesky(&t.sigma1, "Sigma1")?.l().transpose();
        let l2 = linalg::cholesky(&t.sigma2, "Sigma2")?.l().transpose();
        Ok(Self {
            mu: [t.mu1.clone(), t.mu2.clone()],
            factor_t: [l1, l2],
            pi2: t.pi2,
            transforms: problem.transforms.clone(),
        })
    }

    fn p(&self) -> usize {
        self.mu[0].len()
    }

    fn fill(&self, labels: &[usize], rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let p = self.p();
        let n = labels.len();
        let z = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut x = DMatrix::zeros(n, p);
        for class in 0..2 {
            let rows: Vec<usize> = (0..n).filter(|&i| labels[i] == class + 1).collect();
            if rows.is_empty() {
                continue;
            }
            let block = z.select_rows(&rows) * &self.factor_t[class];
            for (r, &i) in rows.iter().enumerate() {
                for j in 0..p {
                    x[(i, j)] = block[(r, j)] + self.mu[class][j];
                }
            }
        }
        if let Some(tr) = &self.transforms {
            for (j, t) in tr.iter().enumerate() {
                x.column_mut(j).apply(|v| *v = t.apply(*v));
            }
        }
        x
    }

    /// `n1` rows of class 1 followed by `n2` rows of class 2.
    pub fn two_class(&self, n1: usize, n2: usize, seed: u64) -> Result<LabeledDataset> {
        if n1 < 2 || n2 < 2 {
            return Err(Error::TooFewSamples {
                class: if n1 < 2 { 1 } else { 2 },
                n_k: n1.min(n2),
                required: 2,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<usize> = (0..n1 + n2).map(|i| if i < n1 { 1 } else { 2 }).collect();
        let x = self.fill(&labels, &mut rng);
        Ok(LabeledDataset {
            features: x,
            labels,
        })
    }

    /// `n` draws from the mixture; each label is drawn before its vector.
    pub fn mixture(&self, n: usize, seed: u64) -> LabeledDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<usize> = (0..n)
            .map(|_| if rng.random_bool(self.pi2) { 2 } else { 1 })
            .collect();
        let x = self.fill(&labels, &mut rng);
        LabeledDataset {
            features: x,
            labels,
        }
    }
}

/// Training sample of `n1` class-1 and `n2` class-2 rows.
pub fn sample(problem: &SyntheticProblem, n1: usize, n2: usize, seed: u64) -> Result<LabeledDataset> {
    Sampler::new(problem)?.two_class(n1, n2, seed)
}

/// Test sample of size `n` from the prior-weighted mixture.
pub fn sample_mixture(problem: &SyntheticProblem, n: usize, seed: u64) -> Result<LabeledDataset> {
    Ok(Sampler::new(problem)?.mixture(n, seed))
}
