//! Replicated experiments, tuning, tables, CSV ingestion and model files.

mod ingest;
mod persist;
mod table;
mod tune;

pub use ingest::{ingest_csv, read_features, screen_features, welch_t_statistics, CsvDataset};
pub use persist::{
    load_model, load_spec, model_from_json, model_to_json, save_model, save_spec, AnyModel, ModelKind,
    SCHEMA_VERSION,
};
pub use table::{emit_table, parse_table, ErrorRow, ErrorTable, TableFormat};
pub use tune::{stratified_folds, tune_lambdas, LambdaGrid, LambdaScaling, Rule, TuneConfig, TuneResult};

use std::path::PathBuf;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{classify_rows, misclassified, oracle_model, PriorConvention};
use crate::copula::classify_csdar_rows;
use crate::datagen::{gen_any_model, gen_impossibility, Sampler, SyntheticProblem};
use crate::error::{Error, Result};
use crate::estimate::{assemble_sdar, class_moments, FitConfig};
use crate::types::{LabeledDataset, SdarModel, SolverConfig};

/// Where the data of an experiment comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Problem {
    /// Simulation models 1-6.
    Model { id: u8, p: usize },
    /// Settings 1 and 2 where the plug-in rule cannot match the oracle.
    Impossibility { setting: u8, p: usize },
    /// A labelled CSV file, evaluated by repeated stratified cross-validation.
    Csv {
        path: PathBuf,
        label_column: String,
        #[serde(default)]
        screen_top_k: Option<usize>,
    },
}

impl Problem {
    pub fn label(&self) -> String {
        match self {
            Problem::Model { id, .. } => format!("model{id}"),
            Problem::Impossibility { setting, .. } => format!("impossibility{setting}"),
            Problem::Csv { path, .. } => path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "csv".into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Sdar,
    Csdar,
    LdaPlugin,
    QdaPlugin,
    Oracle,
    /// Impossibility settings only: estimate the unknown part of the
    /// parameters (means in setting 1, diagonal covariances in setting 2)
    /// and plug the rest in exactly.
    Plugin,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Sdar => "sdar",
            Method::Csdar => "csdar",
            Method::LdaPlugin => "lda_plugin",
            Method::QdaPlugin => "qda_plugin",
            Method::Oracle => "oracle",
            Method::Plugin => "plugin",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "sdar" => Method::Sdar,
            "csdar" => Method::Csdar,
            "lda_plugin" | "lda" => Method::LdaPlugin,
            "qda_plugin" | "qda" => Method::QdaPlugin,
            "oracle" => Method::Oracle,
            "plugin" => Method::Plugin,
            other => return Err(Error::InvalidParameter(format!("unknown method {other:?}"))),
        })
    }
}

fn default_folds() -> usize {
    5
}

fn default_gap_tol() -> f64 {
    1e-6
}

fn default_working_set() -> usize {
    600
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub problem: Problem,
    /// Training sizes; unused for CSV problems.
    pub n1: usize,
    pub n2: usize,
    /// Mixture test-set size; unused for CSV problems.
    pub n_test: usize,
    pub replications: usize,
    pub lambda_grid1: LambdaGrid,
    pub lambda_grid2: LambdaGrid,
    #[serde(default)]
    pub lambda_scaling: LambdaScaling,
    #[serde(default = "default_folds")]
    pub cv_folds: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    #[serde(default = "default_gap_tol")]
    pub duality_gap_tol: f64,
    #[serde(default = "default_working_set")]
    pub max_working_set: usize,
}

impl ExperimentSpec {
    /// Simulation defaults: `n1 = n2 = 200`, 200 test points, grids
    /// `k/2` (`k/4` for model 2) with `k = 1..=15`.
    pub fn simulation(model_id: u8, p: usize, replications: usize, seed: u64) -> Self {
        let divisor = if model_id % 3 == 2 { 4.0 } else { 2.0 };
        Self {
            problem: Problem::Model { id: model_id, p },
            n1: 200,
            n2: 200,
            n_test: 200,
            replications,
            lambda_grid1: LambdaGrid::paper(divisor, 15),
            lambda_grid2: LambdaGrid::paper(divisor, 15),
            lambda_scaling: LambdaScaling::Variance,
            cv_folds: 5,
            seed,
            methods: if model_id >= 4 {
                vec![Method::Csdar, Method::Oracle]
            } else {
                vec![Method::Sdar, Method::Oracle]
            },
            duality_gap_tol: default_gap_tol(),
            max_working_set: default_working_set(),
        }
    }

    /// `n` training points per class and 100 test points.
    pub fn impossibility(setting: u8, p: usize, n: usize, replications: usize, seed: u64) -> Self {
        Self {
            problem: Problem::Impossibility { setting, p },
            n1: n,
            n2: n,
            n_test: 100,
            methods: vec![Method::Plugin, Method::Oracle],
            ..Self::simulation(1, p, replications, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.replications == 0 {
            return bad("replications must be at least 1".into());
        }
        if self.methods.is_empty() {
            return bad("no methods requested".into());
        }
        let simulated = !matches!(self.problem, Problem::Csv { .. });
        if simulated && self.n_test == 0 {
            return bad("n_test must be at least 1".into());
        }
        if simulated && (self.n1 < 2 || self.n2 < 2) {
            return bad("each class needs at least 2 training points".into());
        }
        match &self.problem {
            Problem::Model { id, p } => {
                gen_any_model(*id, *p, self.seed)?;
            }
            Problem::Impossibility { setting, p } => {
                gen_impossibility(*setting, *p, self.seed)?;
            }
            Problem::Csv { .. } => {}
        }
        for m in &self.methods {
            let ok = match (m, &self.problem) {
                (Method::Plugin, Problem::Impossibility { .. }) => true,
                (Method::Plugin, _) => false,
                (Method::Oracle, Problem::Csv { .. }) => false,
                _ => true,
            };
            if !ok {
                return bad(format!("method {} is not available for this problem", m.name()));
            }
        }
        self.tune_config(0).validate()
    }

    fn tune_config(&self, seed: u64) -> TuneConfig {
        let solver = SolverConfig {
            duality_gap_tol: self.duality_gap_tol,
            max_working_set: self.max_working_set,
            ..SolverConfig::default()
        };
        TuneConfig {
            grid1: self.lambda_grid1.clone(),
            grid2: self.lambda_grid2.clone(),
            folds: self.cv_folds,
            seed,
            scaling: self.lambda_scaling,
            fit: FitConfig {
                solver,
                ..FitConfig::new(0.0, 0.0)
            },
        }
    }

    fn p(&self) -> usize {
        match &self.problem {
            Problem::Model { p, .. } | Problem::Impossibility { p, .. } => *p,
            Problem::Csv { screen_top_k, .. } => screen_top_k.unwrap_or(0),
        }
    }
}

/// Independent seed for replication `rep` and purpose `stream`.
pub fn derive_seed(seed: u64, rep: usize, stream: u64) -> u64 {
    // splitmix64 finalizer over a mixed input
    let mut z = seed
        .wrapping_add((rep as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_PROBLEM: u64 = 0;
const STREAM_TRAIN: u64 = 1;
const STREAM_TEST: u64 = 2;
const STREAM_TUNE: u64 = 3;

/// Worker count from `SDAR_THREADS` (0 or unset: all cores).
pub fn thread_count() -> Result<usize> {
    match std::env::var("SDAR_THREADS") {
        Err(_) => Ok(0),
        Ok(v) => v.trim().parse::<usize>().map_err(|_| {
            Error::InvalidParameter(format!("SDAR_THREADS must be a nonnegative integer, got {v:?}"))
        }),
    }
}

/// Pseudo-inverse and log pseudo-determinant of a symmetric PSD matrix.
fn pseudo_inverse(s: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let eig = SymmetricEigen::new(s.clone());
    let top = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let cut = top * 1e-10 * s.nrows() as f64;
    let mut inv = DMatrix::zeros(s.nrows(), s.nrows());
    let mut logdet = 0.0;
    for (k, &v) in eig.eigenvalues.iter().enumerate() {
        if v > cut {
            let u = eig.eigenvectors.column(k);
            inv += u * u.transpose() / v;
            logdet += v.ln();
        }
    }
    (inv, logdet)
}

/// Inverse with a 1e-6 ridge when `p < n`, pseudo-inverse otherwise.
fn plugin_precision(s: &DMatrix<f64>, n: usize) -> (DMatrix<f64>, f64) {
    let p = s.nrows();
    if p < n {
        let ridged = s + DMatrix::identity(p, p) * 1e-6;
        if let Some(chol) = nalgebra::Cholesky::new(ridged) {
            let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            return (chol.inverse(), logdet);
        }
    }
    pseudo_inverse(s)
}

fn plugin_model(
    mu1: DVector<f64>,
    mu2: DVector<f64>,
    (omega1, logdet1): (DMatrix<f64>, f64),
    (omega2, logdet2): (DMatrix<f64>, f64),
    log_prior: f64,
) -> SdarModel {
    let beta = &omega2 * (&mu2 - &mu1);
    SdarModel {
        mu1_hat: mu1,
        mu2_hat: mu2,
        d_hat: omega2 - omega1,
        beta_hat: beta,
        logdet_term: logdet1 - logdet2,
        log_prior_ratio: log_prior,
        lambda1: 0.0,
        lambda2: 0.0,
    }
}

/// Plug-in LDA: pooled sample covariance.
pub fn fit_lda_plugin(data: &LabeledDataset) -> Result<SdarModel> {
    let (m1, m2) = (class_moments(data, 1)?, class_moments(data, 2)?);
    let n = m1.n_k + m2.n_k;
    let dof = (n.max(3) - 2) as f64;
    // class moments use the 1/n_k divisor
    let pooled = (&m1.sigma_hat * m1.n_k as f64 + &m2.sigma_hat * m2.n_k as f64) / dof;
    let prec = plugin_precision(&pooled, n - 2);
    let prior = PriorConvention::Bayes.log_ratio(m1.pi_hat, m2.pi_hat);
    Ok(plugin_model(m1.mu_hat, m2.mu_hat, prec.clone(), prec, prior))
}

/// Plug-in QDA: per-class sample covariances.
pub fn fit_qda_plugin(data: &LabeledDataset) -> Result<SdarModel> {
    let (m1, m2) = (class_moments(data, 1)?, class_moments(data, 2)?);
    let unbiased = |m: &crate::types::ClassMoments| {
        &m.sigma_hat * (m.n_k as f64 / (m.n_k.max(2) - 1) as f64)
    };
    let n_min = m1.n_k.min(m2.n_k);
    let p1 = plugin_precision(&unbiased(&m1), n_min);
    let p2 = plugin_precision(&unbiased(&m2), n_min);
    let prior = PriorConvention::Bayes.log_ratio(m1.pi_hat, m2.pi_hat);
    Ok(plugin_model(m1.mu_hat, m2.mu_hat, p1, p2, prior))
}

/// The impossibility-setting plug-in rule.
pub fn fit_impossibility_plugin(
    setting: u8,
    problem: &SyntheticProblem,
    data: &LabeledDataset,
) -> Result<SdarModel> {
    let (m1, m2) = (class_moments(data, 1)?, class_moments(data, 2)?);
    let theta = &problem.theta;
    let p = theta.p();
    let eye = (DMatrix::identity(p, p), 0.0);
    match setting {
        1 => Ok(plugin_model(m1.mu_hat, m2.mu_hat, eye.clone(), eye, 0.0)),
        _ => {
            let diag = |m: &crate::types::ClassMoments| {
                let scale = m.n_k as f64 / (m.n_k.max(2) - 1) as f64;
                let v: Vec<f64> = (0..p).map(|j| m.sigma_hat[(j, j)] * scale).collect();
                let inv = DMatrix::from_diagonal(&DVector::from_iterator(p, v.iter().map(|x| 1.0 / x)));
                (inv, v.iter().map(|x| x.ln()).sum::<f64>())
            };
            Ok(plugin_model(
                theta.mu1.clone(),
                theta.mu2.clone(),
                diag(&m1),
                diag(&m2),
                0.0,
            ))
        }
    }
}

/// Tune on `train` and refit on all of it, walking down the CV ranking
/// when the best pair fails on the full training set.
pub fn tune_and_fit(
    rule: Rule,
    train: &LabeledDataset,
    cfg: &TuneConfig,
) -> Result<(Fitted, TuneResult)> {
    let tuned = tune_lambdas(rule, train, cfg)?;
    let full = tune::Prepared::new(rule, train)?;
    for &(l1, l2) in &tuned.ranking {
        let fitted = full.graph(l1, &cfg.fit).and_then(|d| {
            let beta = full.direction(l2, &cfg.fit)?;
            Ok((d, beta))
        });
        let Ok((d, beta)) = fitted else { continue };
        let model = match &full {
            tune::Prepared::Gaussian(m1, m2) => {
                assemble_sdar(m1, m2, d, beta, (l1, l2), cfg.fit.prior).map(Fitted::Sdar)
            }
            tune::Prepared::Copula(c) => (**c)
                .clone()
                .assemble(d, beta, (l1, l2), cfg.fit.prior)
                .map(|m| Fitted::Copula(Box::new(m))),
        };
        if let Ok(model) = model {
            return Ok((model, tuned));
        }
    }
    Err(Error::AllCandidatesInvalid)
}

/// A fitted two-class rule of either kind.
#[derive(Debug, Clone)]
pub enum Fitted {
    Sdar(SdarModel),
    Copula(Box<crate::copula::CopulaModel>),
}

impl Fitted {
    pub fn classify_rows(&self, x: &DMatrix<f64>) -> Result<Vec<usize>> {
        match self {
            Fitted::Sdar(m) => classify_rows(x, m),
            Fitted::Copula(m) => classify_csdar_rows(x, m),
        }
    }
}

/// Error rate of one (replication, method) cell and the seconds it took.
type Cell = (Result<f64>, f64);

fn timed(f: impl FnOnce() -> Result<f64>) -> Cell {
    let t = Instant::now();
    let r = f();
    (r, t.elapsed().as_secs_f64())
}

fn oracle_errors(problem: &SyntheticProblem, test: &LabeledDataset) -> Result<f64> {
    let model = oracle_model(&problem.theta, PriorConvention::Bayes)?;
    let latent = match &problem.transforms {
        None => test.features.clone(),
        Some(t) => DMatrix::from_fn(test.n(), test.p(), |i, j| t[j].inverse(test.features[(i, j)])),
    };
    Ok(misclassified(&classify_rows(&latent, &model)?, &test.labels))
}

fn evaluate(model: Result<SdarModel>, test: &LabeledDataset) -> Result<f64> {
    let model = model?;
    Ok(misclassified(&classify_rows(&test.features, &model)?, &test.labels))
}

fn tuned_errors(
    rule: Rule,
    train: &LabeledDataset,
    test: &LabeledDataset,
    cfg: &TuneConfig,
) -> Result<f64> {
    let (model, _) = tune_and_fit(rule, train, cfg)?;
    Ok(misclassified(&model.classify_rows(&test.features)?, &test.labels))
}

fn simulated_replication(spec: &ExperimentSpec, rep: usize) -> Result<Vec<Cell>> {
    let problem_seed = derive_seed(spec.seed, rep, STREAM_PROBLEM);
    let (problem, setting) = match &spec.problem {
        Problem::Model { id, p } => (gen_any_model(*id, *p, problem_seed)?, 0),
        Problem::Impossibility { setting, p } => (gen_impossibility(*setting, *p, problem_seed)?, *setting),
        Problem::Csv { .. } => unreachable!("csv problems are evaluated by cross-validation"),
    };
    let sampler = Sampler::new(&problem)?;
    let train = sampler.two_class(spec.n1, spec.n2, derive_seed(spec.seed, rep, STREAM_TRAIN))?;
    let test = sampler.mixture(spec.n_test, derive_seed(spec.seed, rep, STREAM_TEST));
    let cfg = spec.tune_config(derive_seed(spec.seed, rep, STREAM_TUNE));
    Ok(spec
        .methods
        .iter()
        .map(|m| {
            timed(|| match m {
                Method::Sdar => tuned_errors(Rule::Sdar, &train, &test, &cfg),
                Method::Csdar => tuned_errors(Rule::Csdar, &train, &test, &cfg),
                Method::LdaPlugin => evaluate(fit_lda_plugin(&train), &test),
                Method::QdaPlugin => evaluate(fit_qda_plugin(&train), &test),
                Method::Oracle => oracle_errors(&problem, &test),
                Method::Plugin => {
                    evaluate(fit_impossibility_plugin(setting, &problem, &train), &test)
                }
            })
        })
        .collect())
}

/// One repetition of stratified k-fold cross-validation on real data, with
/// screening and tuning redone inside every training fold.
fn csv_replication(
    spec: &ExperimentSpec,
    data: &CsvDataset,
    top_k: Option<usize>,
    rep: usize,
) -> Vec<Cell> {
    let data = &data.data;
    let folds = stratified_folds(&data.labels, spec.cv_folds, derive_seed(spec.seed, rep, STREAM_TRAIN));
    let mut wrong: Vec<Result<f64>> = spec.methods.iter().map(|_| Ok(0.0)).collect();
    let mut seconds = vec![0.0; spec.methods.len()];
    for fold in 0..spec.cv_folds {
        let tr: Vec<usize> = (0..data.n()).filter(|&i| folds[i] != fold).collect();
        let va: Vec<usize> = (0..data.n()).filter(|&i| folds[i] == fold).collect();
        if va.is_empty() {
            continue;
        }
        let (mut train, mut test) = (data.subset(&tr), data.subset(&va));
        if let Some(k) = top_k {
            let keep = match screen_features(&train, k) {
                Ok(keep) => keep,
                Err(e) => {
                    let msg = e.to_string();
                    for w in wrong.iter_mut() {
                        *w = Err(Error::InvalidParameter(msg.clone()));
                    }
                    break;
                }
            };
            train = train.select_columns(&keep);
            test = test.select_columns(&keep);
        }
        let cfg = spec.tune_config(derive_seed(spec.seed, rep * spec.cv_folds + fold, STREAM_TUNE));
        for ((slot, secs), m) in wrong.iter_mut().zip(seconds.iter_mut()).zip(&spec.methods) {
            let Ok(total) = slot else { continue };
            let (cell, t) = timed(|| match m {
                Method::Sdar => tuned_errors(Rule::Sdar, &train, &test, &cfg),
                Method::Csdar => tuned_errors(Rule::Csdar, &train, &test, &cfg),
                Method::LdaPlugin => evaluate(fit_lda_plugin(&train), &test),
                Method::QdaPlugin => evaluate(fit_qda_plugin(&train), &test),
                Method::Oracle | Method::Plugin => unreachable!("rejected by validation"),
            });
            *secs += t;
            *slot = cell.map(|e| *total + e * va.len() as f64);
        }
    }
    wrong
        .into_iter()
        .zip(seconds)
        .map(|(w, t)| (w.map(|count| count / data.n() as f64), t))
        .collect()
}

/// Run every replication and aggregate one table row per method, together
/// with the wall-clock seconds spent per method row.
pub fn run_experiment_timed(spec: &ExperimentSpec) -> Result<(ErrorTable, Vec<f64>)> {
    spec.validate()?;
    let csv = match &spec.problem {
        Problem::Csv { path, label_column, .. } => Some(ingest_csv(path, label_column, None)?),
        _ => None,
    };
    let top_k = match &spec.problem {
        Problem::Csv { screen_top_k, .. } => *screen_top_k,
        _ => None,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count()?)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    let cells: Vec<Vec<Cell>> = pool.install(|| {
        (0..spec.replications)
            .into_par_iter()
            .map(|rep| match &csv {
                Some(data) => csv_replication(spec, data, top_k, rep),
                None => simulated_replication(spec, rep).unwrap_or_else(|e| {
                    let msg = e.to_string();
                    let failed = || (Err(Error::InvalidParameter(msg.clone())), 0.0);
                    spec.methods.iter().map(|_| failed()).collect()
                }),
            })
            .collect()
    });

    let p = match &csv {
        Some(d) => top_k.unwrap_or(d.data.p()),
        None => spec.p(),
    };
    let mut rows = Vec::new();
    let mut seconds = Vec::new();
    for (k, m) in spec.methods.iter().enumerate() {
        let errs: Vec<f64> = cells.iter().filter_map(|c| c[k].0.as_ref().ok().copied()).collect();
        let failed = spec.replications - errs.len();
        let (mean, sd) = mean_sd(&errs);
        rows.push(ErrorRow {
            model: spec.problem.label(),
            p,
            method: m.name().to_string(),
            mean,
            sd,
            reps: errs.len(),
            failed,
        });
        seconds.push(cells.iter().map(|c| c[k].1).sum::<f64>());
    }
    Ok((ErrorTable { rows }, seconds))
}

/// [`run_experiment_timed`] without the timings.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ErrorTable> {
    run_experiment_timed(spec).map(|(t, _)| t)
}

/// Mean and sample standard deviation, summed in index order. NaN mean
/// for no values, zero deviation for one.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}
