//! Discriminant functions and label assignment.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::estimate::{class_moments, direction_program, graph_program, FitConfig};
use crate::linalg;
use crate::types::{GaussianPairParams, LabeledDataset, SdarModel};

/// How the log prior ratio enters the two-class discriminant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PriorConvention {
    /// `log(pi1 / pi2)`.
    #[default]
    Sdar,
    /// `2 log(pi1 / pi2)`, which makes the discriminant twice the
    /// log-likelihood ratio.
    Bayes,
}

impl PriorConvention {
    pub fn log_ratio(self, pi1: f64, pi2: f64) -> f64 {
        let r = (pi1 / pi2).ln();
        match self {
            PriorConvention::Sdar => r,
            PriorConvention::Bayes => 2.0 * r,
        }
    }
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// `(z - mu1)' D (z - mu1) - 2 beta'(z - (mu1 + mu2)/2) - logdet + log prior ratio`.
pub fn discriminant(z: &DVector<f64>, model: &SdarModel) -> Result<f64> {
    check_dim(model.p(), z.len())?;
    let c = z - &model.mu1_hat;
    let mid = (&model.mu1_hat + &model.mu2_hat) * 0.5;
    let quad = c.dot(&(&model.d_hat * &c));
    let lin = model.beta_hat.dot(&(z - mid));
    Ok(quad - 2.0 * lin - model.logdet_term + model.log_prior_ratio)
}

/// Discriminant values for every row of `x`.
pub fn discriminant_rows(x: &DMatrix<f64>, model: &SdarModel) -> Result<Vec<f64>> {
    check_dim(model.p(), x.ncols())?;
    let mut c = x.clone();
    for (j, mut col) in c.column_iter_mut().enumerate() {
        col.add_scalar_mut(-model.mu1_hat[j]);
    }
    let cd = &c * &model.d_hat;
    let delta = &model.mu2_hat - &model.mu1_hat;
    // z - mid = (z - mu1) - delta / 2
    let shift = model.beta_hat.dot(&delta) * 0.5;
    let cb = &c * &model.beta_hat;
    let constant = -model.logdet_term + model.log_prior_ratio + 2.0 * shift;
    Ok((0..x.nrows())
        .map(|i| c.row(i).dot(&cd.row(i)) - 2.0 * cb[i] + constant)
        .collect())
}

/// `log|D S + I|`, evaluated through the symmetric matrix `S^1/2 D S^1/2 + I`.
pub fn logdet_term(d: &DMatrix<f64>, sigma1: &DMatrix<f64>) -> Result<f64> {
    check_dim(sigma1.nrows(), d.nrows())?;
    if d.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    let root = linalg::sqrt_psd(sigma1, "sigma1")?;
    let mut m = &root * d * &root;
    linalg::symmetrize(&mut m);
    for i in 0..m.nrows() {
        m[(i, i)] += 1.0;
    }
    let eig = SymmetricEigen::new(m).eigenvalues;
    let smallest = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if smallest <= 1e-12 {
        return Err(Error::NonPositiveEigenvalue {
            eigenvalue: smallest,
        });
    }
    Ok(eig.iter().map(|v| v.ln()).sum())
}

fn label_of(q: f64) -> usize {
    if q > 0.0 {
        1
    } else {
        2
    }
}

/// Class 1 when the discriminant is positive, class 2 otherwise.
pub fn classify_sdar(z: &DVector<f64>, model: &SdarModel) -> Result<usize> {
    discriminant(z, model).map(label_of)
}

pub fn classify_rows(x: &DMatrix<f64>, model: &SdarModel) -> Result<Vec<usize>> {
    Ok(discriminant_rows(x, model)?.into_iter().map(label_of).collect())
}

/// Fraction of rows whose predicted label differs from the given one.
pub fn error_rate(model: &SdarModel, data: &LabeledDataset) -> Result<f64> {
    let pred = classify_rows(&data.features, model)?;
    Ok(misclassified(&pred, &data.labels))
}

pub(crate) fn misclassified(pred: &[usize], labels: &[usize]) -> f64 {
    let wrong = pred.iter().zip(labels).filter(|(a, b)| a != b).count();
    wrong as f64 / labels.len().max(1) as f64
}

/// The discriminant with exact parameters plugged in. With the `Bayes`
/// prior convention its value is twice the log-likelihood ratio.
pub fn oracle_model(theta: &GaussianPairParams, prior: PriorConvention) -> Result<SdarModel> {
    theta.validate()?;
    let d = theta.differential_graph()?;
    let logdet = linalg::logdet_spd(&theta.sigma1, "sigma1")?
        - linalg::logdet_spd(&theta.sigma2, "sigma2")?;
    Ok(SdarModel {
        mu1_hat: theta.mu1.clone(),
        mu2_hat: theta.mu2.clone(),
        d_hat: d,
        beta_hat: theta.direction()?,
        logdet_term: logdet,
        log_prior_ratio: prior.log_ratio(theta.pi1, theta.pi2),
        lambda1: 0.0,
        lambda2: 0.0,
    })
}

/// The Bayes rule for known parameters.
pub fn classify_oracle(z: &DVector<f64>, theta: &GaussianPairParams) -> Result<usize> {
    classify_sdar(z, &oracle_model(theta, PriorConvention::Bayes)?)
}

/// K-class rule anchored at class 1.
///
/// For `k >= 2` the score is
/// `-(z - mu_k)' D_k (z - mu_k)/2 - beta_k'(z - (mu_1 + mu_k)/2) - logdet_k/2 + log(pi_1/pi_k)`
/// with `D_k = Omega_1 - Omega_k`, `beta_k = Omega_1 (mu_k - mu_1)` and
/// `logdet_k = log|I - D_k Sigma_1|`; class 1 scores 0. With exact
/// parameters the score is `log(pi_1 phi_1(z) / (pi_k phi_k(z)))`, so the
/// smallest score is the most probable class.
#[derive(Debug, Clone, PartialEq)]
pub struct MultigroupModel {
    pub mu_hat: Vec<DVector<f64>>,
    /// Entry 0 is unused (zero).
    pub d_hat: Vec<DMatrix<f64>>,
    /// Entry 0 is unused (zero).
    pub beta_hat: Vec<DVector<f64>>,
    /// `log|I - D_k Sigma_1|`; entry 0 is 0.
    pub logdet_term: Vec<f64>,
    pub log_prior: Vec<f64>,
}

impl MultigroupModel {
    pub fn num_classes(&self) -> usize {
        self.mu_hat.len()
    }

    pub fn p(&self) -> usize {
        self.mu_hat[0].len()
    }

    /// Exact-parameter model.
    pub fn from_params(
        mus: &[DVector<f64>],
        sigmas: &[DMatrix<f64>],
        priors: &[f64],
    ) -> Result<Self> {
        let k = mus.len();
        if k < 2 || sigmas.len() != k || priors.len() != k {
            return Err(Error::InvalidParameter(
                "need matching means, covariances and priors for at least two classes".into(),
            ));
        }
        let p = mus[0].len();
        let omega1 = linalg::inverse_spd(&sigmas[0], "sigma_1")?;
        let logdet1 = linalg::logdet_spd(&sigmas[0], "sigma_1")?;
        let mut model = Self::empty(mus.to_vec(), priors, p);
        for c in 1..k {
            let what = format!("sigma_{}", c + 1);
            model.d_hat[c] = &omega1 - linalg::inverse_spd(&sigmas[c], &what)?;
            model.beta_hat[c] = &omega1 * (&mus[c] - &mus[0]);
            model.logdet_term[c] = logdet1 - linalg::logdet_spd(&sigmas[c], &what)?;
        }
        Ok(model)
    }

    fn empty(mu_hat: Vec<DVector<f64>>, priors: &[f64], p: usize) -> Self {
        let k = mu_hat.len();
        Self {
            mu_hat,
            d_hat: vec![DMatrix::zeros(p, p); k],
            beta_hat: vec![DVector::zeros(p); k],
            logdet_term: vec![0.0; k],
            log_prior: priors.iter().map(|v| v.ln()).collect(),
        }
    }
}

/// Fit the K-class rule to labels `1..=K`.
pub fn fit_multigroup(data: &LabeledDataset, cfg: &FitConfig) -> Result<MultigroupModel> {
    cfg.validate()?;
    let k = data.num_classes();
    if k < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least two classes, found {k}"
        )));
    }
    let moments = (1..=k)
        .map(|c| class_moments(data, c))
        .collect::<Result<Vec<_>>>()?;
    let mus = moments.iter().map(|m| m.mu_hat.clone()).collect();
    let priors: Vec<f64> = moments.iter().map(|m| m.pi_hat).collect();
    let mut model = MultigroupModel::empty(mus, &priors, data.p());
    let s1 = &moments[0].sigma_hat;
    for c in 1..k {
        let sk = &moments[c].sigma_hat;
        let (d, _) = graph_program(s1, sk, &(sk - s1), cfg.lambda1, cfg)?;
        let delta = &moments[c].mu_hat - &moments[0].mu_hat;
        let (beta, _) = direction_program(s1, &delta, cfg.lambda2, cfg)?;
        model.logdet_term[c] = logdet_term(&(-&d), s1)?;
        model.d_hat[c] = d;
        model.beta_hat[c] = beta;
    }
    Ok(model)
}

/// Per-class scores; class 1 is 0.
pub fn multigroup_scores(z: &DVector<f64>, model: &MultigroupModel) -> Result<Vec<f64>> {
    check_dim(model.p(), z.len())?;
    let mu1 = &model.mu_hat[0];
    let mut out = vec![0.0; model.num_classes()];
    for (c, q) in out.iter_mut().enumerate().skip(1) {
        let mu = &model.mu_hat[c];
        let ck = z - mu;
        let mid = (mu1 + mu) * 0.5;
        *q = -0.5 * ck.dot(&(&model.d_hat[c] * &ck)) - model.beta_hat[c].dot(&(z - mid))
            - 0.5 * model.logdet_term[c]
            + model.log_prior[0]
            - model.log_prior[c];
    }
    Ok(out)
}

/// Smallest score wins; ties go to the smaller class index.
pub fn classify_multigroup(z: &DVector<f64>, model: &MultigroupModel) -> Result<usize> {
    let scores = multigroup_scores(z, model)?;
    let mut best = 0;
    for (c, &q) in scores.iter().enumerate() {
        if q < scores[best] {
            best = c;
        }
    }
    Ok(best + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::log_likelihood_ratio;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(rng: &mut ChaCha8Rng, p: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(p, p) * 0.5
    }

    fn random_theta(rng: &mut ChaCha8Rng, p: usize) -> GaussianPairParams {
        let pi1 = rng.random_range(0.2..0.8);
        let mu1 = DVector::from_fn(p, |_, _| rng.random_range(-1.0..1.0));
        let mu2 = DVector::from_fn(p, |_, _| rng.random_range(-1.0..1.0));
        let s1 = random_spd(rng, p);
        let s2 = random_spd(rng, p);
        GaussianPairParams::new(pi1, 1.0 - pi1, mu1, mu2, s1, s2).unwrap()
    }

    fn null_model(p: usize) -> SdarModel {
        SdarModel {
            mu1_hat: DVector::zeros(p),
            mu2_hat: DVector::zeros(p),
            d_hat: DMatrix::zeros(p, p),
            beta_hat: DVector::zeros(p),
            logdet_term: 0.0,
            log_prior_ratio: 0.0,
            lambda1: 0.0,
            lambda2: 0.0,
        }
    }

    #[test]
    fn null_model_scores_zero_and_picks_class_two() {
        let m = null_model(3);
        for z in [[0.0, 0.0, 0.0], [1.0, -4.0, 2.5]] {
            let z = DVector::from_row_slice(&z);
            assert_eq!(discriminant(&z, &m).unwrap(), 0.0);
            assert_eq!(classify_sdar(&z, &m).unwrap(), 2);
        }
    }

    #[test]
    fn lda_example() {
        let mut m = null_model(2);
        m.mu1_hat = DVector::from_row_slice(&[1.0, 0.0]);
        m.mu2_hat = DVector::from_row_slice(&[-1.0, 0.0]);
        m.beta_hat = DVector::from_row_slice(&[-2.0, 0.0]);
        let z = DVector::from_row_slice(&[1.0, 0.0]);
        assert!((discriminant(&z, &m).unwrap() - 4.0).abs() < 1e-14);
        assert_eq!(classify_sdar(&z, &m).unwrap(), 1);
    }

    #[test]
    fn exact_terms_give_twice_the_llr() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let theta = random_theta(&mut rng, 5);
            let model = oracle_model(&theta, PriorConvention::Bayes).unwrap();
            let z = DVector::from_fn(5, |_, _| rng.random_range(-3.0..3.0));
            let q = discriminant(&z, &model).unwrap();
            let llr = log_likelihood_ratio(&z, &theta).unwrap();
            assert!((q - 2.0 * llr).abs() <= 1e-8 * (1.0 + q.abs()));
        }
    }

    #[test]
    fn batch_matches_pointwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let theta = random_theta(&mut rng, 4);
        let model = oracle_model(&theta, PriorConvention::Sdar).unwrap();
        let x = DMatrix::from_fn(7, 4, |_, _| rng.random_range(-2.0..2.0));
        let batch = discriminant_rows(&x, &model).unwrap();
        for i in 0..7 {
            let q = discriminant(&x.row(i).transpose(), &model).unwrap();
            assert!((q - batch[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn logdet_cases() {
        let s = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        assert_eq!(logdet_term(&DMatrix::zeros(2, 2), &s).unwrap(), 0.0);
        let v = logdet_term(&DMatrix::from_element(1, 1, 3.0), &DMatrix::from_element(1, 1, 2.0))
            .unwrap();
        assert!((v - 7.0f64.ln()).abs() < 1e-12);
        let neg = logdet_term(&DMatrix::from_element(1, 1, -1.0), &DMatrix::from_element(1, 1, 1.0));
        assert!(matches!(neg, Err(Error::NonPositiveEigenvalue { .. })));
    }

    #[test]
    fn logdet_matches_determinant_ratio_and_swaps() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let theta = random_theta(&mut rng, 5);
            let d = theta.differential_graph().unwrap();
            let want = linalg::logdet_spd(&theta.sigma1, "s1").unwrap()
                - linalg::logdet_spd(&theta.sigma2, "s2").unwrap();
            let got = logdet_term(&d, &theta.sigma1).unwrap();
            assert!((got - want).abs() < 1e-9);
            let swapped = logdet_term(&(-&d), &theta.sigma2).unwrap();
            assert!((swapped + got).abs() < 1e-9);
        }
    }

    #[test]
    fn oracle_agrees_with_density_ratio_sign() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..1000 {
            let theta = random_theta(&mut rng, 3);
            let z = DVector::from_fn(3, |_, _| rng.random_range(-3.0..3.0));
            let llr = log_likelihood_ratio(&z, &theta).unwrap();
            let want = if llr > 0.0 { 1 } else { 2 };
            assert_eq!(classify_oracle(&z, &theta).unwrap(), want);
        }
    }

    #[test]
    fn symmetric_pair_on_axis_is_a_tie() {
        let s = DMatrix::identity(2, 2);
        let theta = GaussianPairParams::new(
            0.5,
            0.5,
            DVector::from_row_slice(&[1.0, 0.0]),
            DVector::from_row_slice(&[-1.0, 0.0]),
            s.clone(),
            s,
        )
        .unwrap();
        let z = DVector::from_row_slice(&[0.0, 3.0]);
        assert_eq!(classify_oracle(&z, &theta).unwrap(), 2);
    }

    #[test]
    fn dominant_prior_wins() {
        let s = DMatrix::identity(2, 2);
        let mu = DVector::zeros(2);
        let mu2 = DVector::from_row_slice(&[0.01, 0.0]);
        let theta = GaussianPairParams::new(0.999, 0.001, mu, mu2, s.clone(), s).unwrap();
        for z in [[0.0, 0.0], [0.5, -0.3], [-1.0, 1.0]] {
            let z = DVector::from_row_slice(&z);
            assert_eq!(classify_oracle(&z, &theta).unwrap(), 1);
        }
    }

    #[test]
    fn multigroup_exact_parameters_pick_the_most_likely_class() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = 4;
        let mus: Vec<_> = (0..3)
            .map(|k| DVector::from_fn(p, |j, _| if j == k { 3.0 } else { 0.0 }))
            .collect();
        let sigmas: Vec<_> = (0..3).map(|_| random_spd(&mut rng, p)).collect();
        let priors = [0.2, 0.3, 0.5];
        let model = MultigroupModel::from_params(&mus, &sigmas, &priors).unwrap();
        for _ in 0..500 {
            let z = DVector::from_fn(p, |_, _| rng.random_range(-2.0..5.0));
            let dens: Vec<f64> = (0..3)
                .map(|k| priors[k].ln() + crate::types::log_density(&z, &mus[k], &sigmas[k], "s").unwrap())
                .collect();
            let want = (0..3).fold(0, |b, k| if dens[k] > dens[b] { k } else { b }) + 1;
            assert_eq!(classify_multigroup(&z, &model).unwrap(), want);
        }
    }

    #[test]
    fn multigroup_identical_classes_tie_to_the_first() {
        let mus = vec![DVector::zeros(2); 3];
        let sigmas = vec![DMatrix::identity(2, 2); 3];
        let model = MultigroupModel::from_params(&mus, &sigmas, &[1.0 / 3.0; 3]).unwrap();
        let z = DVector::from_row_slice(&[0.7, -0.2]);
        let q = multigroup_scores(&z, &model).unwrap();
        assert!(q.iter().all(|v| v.abs() < 1e-12));
        assert_eq!(classify_multigroup(&z, &model).unwrap(), 1);
    }

    #[test]
    fn prior_conventions() {
        assert_eq!(PriorConvention::Sdar.log_ratio(0.5, 0.5), 0.0);
        let r = PriorConvention::Bayes.log_ratio(0.75, 0.25);
        assert!((r - 2.0 * 3.0f64.ln()).abs() < 1e-14);
    }
}
