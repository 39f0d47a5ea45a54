//! Cross-validated choice of the two constraint radii.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classify::{logdet_term, PriorConvention};
use crate::copula::CopulaMoments;
use crate::error::{Error, Result};
use crate::estimate::{class_moments, direction_program, graph_program, FitConfig};
use crate::types::{ClassMoments, LabeledDataset};

/// Radii `(k / divisor) sqrt(log p / n)` for each multiplier `k`, optionally
/// rescaled by the size of the sample covariances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaGrid {
    pub multipliers: Vec<f64>,
    pub divisor: f64,
}

impl LambdaGrid {
    /// `k = 1..=max_k`.
    pub fn paper(divisor: f64, max_k: usize) -> Self {
        Self {
            multipliers: (1..=max_k).map(|k| k as f64).collect(),
            divisor,
        }
    }

    pub fn single(lambda_multiplier: f64) -> Self {
        Self {
            multipliers: vec![lambda_multiplier],
            divisor: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.multipliers.is_empty() {
            return Err(Error::InvalidParameter("lambda grid is empty".into()));
        }
        if !(self.divisor > 0.0) || self.multipliers.iter().any(|k| !(*k >= 0.0 && k.is_finite())) {
            return Err(Error::InvalidParameter(
                "lambda grid needs a positive divisor and finite nonnegative multipliers".into(),
            ));
        }
        Ok(())
    }

    /// Radii for base rate `sqrt(log p / n) * scale`, largest first.
    pub fn values(&self, base: f64) -> Vec<f64> {
        let mut v: Vec<f64> = self.multipliers.iter().map(|k| k / self.divisor * base).collect();
        v.sort_by(|a, b| b.total_cmp(a));
        v.dedup();
        v
    }
}

/// How the grid's base rate is scaled to the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaScaling {
    /// `sqrt(log p / n)` as is.
    Unit,
    /// Multiply by the largest sample variance `s` for the graph program and
    /// by `sqrt(s)` for the direction program, which makes the selected
    /// model invariant to rescaling the features.
    #[default]
    Variance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneConfig {
    pub grid1: LambdaGrid,
    pub grid2: LambdaGrid,
    pub folds: usize,
    pub seed: u64,
    pub scaling: LambdaScaling,
    /// Solver settings, formulation and prior convention; the radii in it
    /// are ignored.
    pub fit: FitConfig,
}

impl TuneConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid1.validate()?;
        self.grid2.validate()?;
        if self.folds < 2 {
            return Err(Error::InvalidParameter("cross-validation needs at least 2 folds".into()));
        }
        self.fit.solver.validate()
    }
}

/// Which rule is being tuned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    Sdar,
    Csdar,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneResult {
    pub lambda1: f64,
    pub lambda2: f64,
    /// Mean validation error of the chosen pair (NaN without CV).
    pub cv_error: f64,
    /// Valid pairs ordered from best to worst; the first is the choice.
    pub ranking: Vec<(f64, f64)>,
    /// Pairs excluded because a fit failed in some fold.
    pub invalid: usize,
}

/// Moments of one training set in the form both rules share: anchor means,
/// covariances and the map from raw features to the modelling scale.
pub(crate) enum Prepared {
    Gaussian(ClassMoments, ClassMoments),
    Copula(Box<CopulaMoments>),
}

impl Prepared {
    pub(crate) fn new(rule: Rule, data: &LabeledDataset) -> Result<Self> {
        match rule {
            Rule::Sdar => Ok(Prepared::Gaussian(class_moments(data, 1)?, class_moments(data, 2)?)),
            Rule::Csdar => Ok(Prepared::Copula(Box::new(CopulaMoments::from_data(data)?))),
        }
    }

    fn covariances(&self) -> (&DMatrix<f64>, &DMatrix<f64>) {
        match self {
            Prepared::Gaussian(m1, m2) => (&m1.sigma_hat, &m2.sigma_hat),
            Prepared::Copula(c) => (&c.sigma_tilde1, &c.sigma_tilde2),
        }
    }

    fn means(&self) -> (DVector<f64>, DVector<f64>) {
        match self {
            Prepared::Gaussian(m1, m2) => (m1.mu_hat.clone(), m2.mu_hat.clone()),
            Prepared::Copula(c) => (DVector::zeros(c.p()), c.mu2_hat.clone()),
        }
    }

    fn counts(&self) -> (usize, usize) {
        match self {
            Prepared::Gaussian(m1, m2) => (m1.n_k, m2.n_k),
            Prepared::Copula(c) => (c.n1, c.n2),
        }
    }

    fn latent(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self {
            Prepared::Gaussian(..) => Ok(x.clone()),
            Prepared::Copula(c) => c.transform_rows(x),
        }
    }

    pub(crate) fn graph(&self, lambda: f64, cfg: &FitConfig) -> Result<DMatrix<f64>> {
        match self {
            Prepared::Gaussian(m1, m2) => {
                let target = &m1.sigma_hat - &m2.sigma_hat;
                Ok(graph_program(&m1.sigma_hat, &m2.sigma_hat, &target, lambda, cfg)?.0)
            }
            Prepared::Copula(c) => c.graph(lambda, cfg),
        }
    }

    pub(crate) fn direction(&self, lambda: f64, cfg: &FitConfig) -> Result<DVector<f64>> {
        match self {
            Prepared::Gaussian(m1, m2) => {
                let delta = &m2.mu_hat - &m1.mu_hat;
                Ok(direction_program(&m2.sigma_hat, &delta, lambda, cfg)?.0)
            }
            Prepared::Copula(c) => c.direction(lambda, cfg),
        }
    }

    /// Base rates for the two grids.
    pub(crate) fn base_rates(&self, scaling: LambdaScaling) -> (f64, f64) {
        let (s1, s2) = self.covariances();
        let (n1, n2) = self.counts();
        let p = s1.nrows();
        let rate = ((p.max(2) as f64).ln() / n1.min(n2) as f64).sqrt();
        match scaling {
            LambdaScaling::Unit => (rate, rate),
            LambdaScaling::Variance => {
                let s = (0..p)
                    .map(|j| s1[(j, j)].max(s2[(j, j)]))
                    .fold(0.0f64, f64::max);
                let s = if s > 0.0 { s } else { 1.0 };
                (rate * s, rate * s.sqrt())
            }
        }
    }

    fn log_prior(&self, prior: PriorConvention) -> f64 {
        let (n1, n2) = self.counts();
        prior.log_ratio(n1 as f64, n2 as f64)
    }
}

/// Stratified fold assignment: each class is shuffled and dealt round-robin.
pub fn stratified_folds(labels: &[usize], folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0; labels.len()];
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    for (offset, c) in classes.into_iter().enumerate() {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        idx.shuffle(&mut rng);
        for (r, i) in idx.into_iter().enumerate() {
            assignment[i] = (r + offset) % folds;
        }
    }
    assignment
}

/// Per-fold validation scores, split into the part that depends on the
/// graph and the part that depends on the direction.
struct FoldScores {
    /// `quad[a][i] - logdet[a]` for graph radius `a`; `None` when invalid.
    graph: Vec<Option<Vec<f64>>>,
    /// `-2 beta'(z - mid)` for direction radius `b`.
    direction: Vec<Option<Vec<f64>>>,
    prior: f64,
    labels: Vec<usize>,
}

fn fold_scores(
    rule: Rule,
    train: &LabeledDataset,
    valid: &LabeledDataset,
    cfg: &TuneConfig,
) -> Result<FoldScores> {
    let prep = Prepared::new(rule, train)?;
    let (base1, base2) = prep.base_rates(cfg.scaling);
    let (mu1, mu2) = prep.means();
    let mid = (&mu1 + &mu2) * 0.5;
    let z = prep.latent(&valid.features)?;
    let n = z.nrows();
    let centered = DMatrix::from_fn(n, z.ncols(), |i, j| z[(i, j)] - mu1[j]);
    let halfway = DMatrix::from_fn(n, z.ncols(), |i, j| z[(i, j)] - mid[j]);
    let (s1, _) = prep.covariances();

    let mut graph = Vec::new();
    let mut failed = false;
    for lambda in cfg.grid1.values(base1) {
        // smaller radii give denser, harder programs; stop at the first failure
        if failed {
            graph.push(None);
            continue;
        }
        let scores = prep.graph(lambda, &cfg.fit).and_then(|d| {
            let logdet = logdet_term(&d, s1)?;
            let cd = &centered * &d;
            Ok((0..n)
                .map(|i| centered.row(i).dot(&cd.row(i)) - logdet)
                .collect::<Vec<_>>())
        });
        match scores {
            Ok(s) => graph.push(Some(s)),
            Err(_) => {
                failed = true;
                graph.push(None);
            }
        }
    }

    let mut direction = Vec::new();
    let mut failed = false;
    for lambda in cfg.grid2.values(base2) {
        if failed {
            direction.push(None);
            continue;
        }
        match prep.direction(lambda, &cfg.fit) {
            Ok(beta) => direction.push(Some((&halfway * beta).iter().map(|v| -2.0 * v).collect())),
            Err(_) => {
                failed = true;
                direction.push(None);
            }
        }
    }

    Ok(FoldScores {
        graph,
        direction,
        prior: prep.log_prior(cfg.fit.prior),
        labels: valid.labels.clone(),
    })
}

/// Choose `(lambda1, lambda2)` by stratified k-fold cross-validation.
///
/// Every pair of the two grids is scored by its mean validation error; a
/// pair whose fit fails in any fold (solver failure or an undefined
/// log-determinant) is excluded. Ties go to the larger `lambda1`, then the
/// larger `lambda2`. The returned radii are on the scale of the full data.
pub fn tune_lambdas(rule: Rule, data: &LabeledDataset, cfg: &TuneConfig) -> Result<TuneResult> {
    cfg.validate()?;
    let full = Prepared::new(rule, data)?;
    let (base1, base2) = full.base_rates(cfg.scaling);
    let full1 = cfg.grid1.values(base1);
    let full2 = cfg.grid2.values(base2);
    if full1.len() == 1 && full2.len() == 1 {
        return Ok(TuneResult {
            lambda1: full1[0],
            lambda2: full2[0],
            cv_error: f64::NAN,
            ranking: vec![(full1[0], full2[0])],
            invalid: 0,
        });
    }

    let assignment = stratified_folds(&data.labels, cfg.folds, cfg.seed);
    let (g1, g2) = (full1.len(), full2.len());
    let mut errors = vec![0.0; g1 * g2];
    let mut valid = vec![true; g1 * g2];
    let mut total = 0usize;
    for fold in 0..cfg.folds {
        let tr: Vec<usize> = (0..data.n()).filter(|&i| assignment[i] != fold).collect();
        let va: Vec<usize> = (0..data.n()).filter(|&i| assignment[i] == fold).collect();
        if va.is_empty() {
            continue;
        }
        let scores = fold_scores(rule, &data.subset(&tr), &data.subset(&va), cfg)?;
        total += va.len();
        for a in 0..g1 {
            for b in 0..g2 {
                let k = a * g2 + b;
                let (Some(q), Some(l)) = (&scores.graph[a], &scores.direction[b]) else {
                    valid[k] = false;
                    continue;
                };
                let wrong = (0..va.len())
                    .filter(|&i| {
                        let label = if q[i] + l[i] + scores.prior > 0.0 { 1 } else { 2 };
                        label != scores.labels[i]
                    })
                    .count();
                errors[k] += wrong as f64;
            }
        }
    }

    // grids are sorted largest first, so a stable sort keeps larger radii
    // ahead on ties
    let mut order: Vec<usize> = (0..g1 * g2).filter(|&k| valid[k]).collect();
    if order.is_empty() {
        return Err(Error::AllCandidatesInvalid);
    }
    order.sort_by(|&a, &b| errors[a].total_cmp(&errors[b]));
    let ranking: Vec<(f64, f64)> = order.iter().map(|&k| (full1[k / g2], full2[k % g2])).collect();
    Ok(TuneResult {
        lambda1: ranking[0].0,
        lambda2: ranking[0].1,
        cv_error: errors[order[0]] / total.max(1) as f64,
        ranking,
        invalid: valid.iter().filter(|v| !**v).count(),
    })
}
