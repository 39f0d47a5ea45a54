//! Versioned JSON files for fitted models and experiment specs.
//!
//! Every float is written as a decimal string with 17 significant digits
//! (`"1.2345678901234567e-1"`), which reads back to the identical `f64`.
//! Matrices are objects `{"rows", "cols", "data"}` with row-major data.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde_json::{json, Map, Value};

use super::ExperimentSpec;
use crate::classify::MultigroupModel;
use crate::copula::{CopulaModel, CopulaMoments, WinsorizedEcdf};
use crate::error::{Error, Result};
use crate::types::SdarModel;

pub const SCHEMA_VERSION: u32 = 1;

/// Any fitted rule, with the column names and original labels it was fitted
/// on when known.
#[derive(Debug, Clone, PartialEq)]
pub struct AnyModel {
    pub kind: ModelKind,
    pub feature_names: Vec<String>,
    pub label_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelKind {
    Sdar(SdarModel),
    Copula(Box<CopulaModel>),
    Multigroup(MultigroupModel),
}

impl AnyModel {
    pub fn new(kind: ModelKind) -> Self {
        Self {
            kind,
            feature_names: Vec::new(),
            label_names: Vec::new(),
        }
    }

    pub fn p(&self) -> usize {
        match &self.kind {
            ModelKind::Sdar(m) => m.p(),
            ModelKind::Copula(m) => m.sdar.p(),
            ModelKind::Multigroup(m) => m.p(),
        }
    }

    /// Labels `1..=K` for every row.
    pub fn classify_rows(&self, x: &DMatrix<f64>) -> Result<Vec<usize>> {
        match &self.kind {
            ModelKind::Sdar(m) => crate::classify::classify_rows(x, m),
            ModelKind::Copula(m) => crate::copula::classify_csdar_rows(x, m),
            ModelKind::Multigroup(m) => (0..x.nrows())
                .map(|i| crate::classify::classify_multigroup(&x.row(i).transpose(), m))
                .collect(),
        }
    }
}

fn num(v: f64) -> Value {
    Value::String(format!("{v:.16e}"))
}

fn nums<'a>(v: impl IntoIterator<Item = &'a f64>) -> Value {
    Value::Array(v.into_iter().map(|x| num(*x)).collect())
}

fn mat(m: &DMatrix<f64>) -> Value {
    let data: Vec<Value> = (0..m.nrows())
        .flat_map(|i| (0..m.ncols()).map(move |j| (i, j)))
        .map(|(i, j)| num(m[(i, j)]))
        .collect();
    json!({"rows": m.nrows(), "cols": m.ncols(), "data": data})
}

fn sdar_json(m: &SdarModel) -> Value {
    json!({
        "mu1_hat": nums(m.mu1_hat.iter()),
        "mu2_hat": nums(m.mu2_hat.iter()),
        "d_hat": mat(&m.d_hat),
        "beta_hat": nums(m.beta_hat.iter()),
        "logdet_term": num(m.logdet_term),
        "log_prior_ratio": num(m.log_prior_ratio),
        "lambda1": num(m.lambda1),
        "lambda2": num(m.lambda2),
    })
}

/// Serialize a model document.
pub fn model_to_json(model: &AnyModel) -> Value {
    let (kind, body) = match &model.kind {
        ModelKind::Sdar(m) => ("sdar", sdar_json(m)),
        ModelKind::Copula(m) => {
            let c = &m.moments;
            let ecdfs = |e: &[WinsorizedEcdf]| {
                Value::Array(e.iter().map(|x| nums(x.sorted_values.iter())).collect())
            };
            (
                "csdar",
                json!({
                    "sdar": sdar_json(&m.sdar),
                    "ecdf1": ecdfs(&c.ecdf1),
                    "ecdf2": ecdfs(&c.ecdf2),
                    "mu2_hat": nums(c.mu2_hat.iter()),
                    "sigma2_jj_hat": nums(c.sigma2_jj_hat.iter()),
                    "r_hat1": mat(&c.r_hat1),
                    "r_hat2": mat(&c.r_hat2),
                    "sigma_tilde1": mat(&c.sigma_tilde1),
                    "sigma_tilde2": mat(&c.sigma_tilde2),
                    "n1": c.n1,
                    "n2": c.n2,
                }),
            )
        }
        ModelKind::Multigroup(m) => (
            "multigroup",
            json!({
                "mu_hat": m.mu_hat.iter().map(|v| nums(v.iter())).collect::<Vec<_>>(),
                "d_hat": m.d_hat.iter().map(mat).collect::<Vec<_>>(),
                "beta_hat": m.beta_hat.iter().map(|v| nums(v.iter())).collect::<Vec<_>>(),
                "logdet_term": nums(m.logdet_term.iter()),
                "log_prior": nums(m.log_prior.iter()),
            }),
        ),
    };
    json!({
        "schema_version": SCHEMA_VERSION,
        "kind": kind,
        "feature_names": model.feature_names,
        "label_names": model.label_names,
        "model": body,
    })
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptModel(msg.into())
}

fn field<'a>(obj: &'a Map<String, Value>, name: &str) -> Result<&'a Value> {
    obj.get(name).ok_or_else(|| corrupt(format!("missing field {name:?}")))
}

fn object<'a>(v: &'a Value, what: &str) -> Result<&'a Map<String, Value>> {
    v.as_object().ok_or_else(|| corrupt(format!("{what} is not an object")))
}

fn array<'a>(v: &'a Value, what: &str) -> Result<&'a Vec<Value>> {
    v.as_array().ok_or_else(|| corrupt(format!("{what} is not an array")))
}

fn read_num(v: &Value, what: &str) -> Result<f64> {
    match v {
        Value::String(s) => s.parse().map_err(|_| corrupt(format!("{what}: bad number {s:?}"))),
        Value::Number(n) => n.as_f64().ok_or_else(|| corrupt(format!("{what}: bad number"))),
        _ => Err(corrupt(format!("{what} is not a number"))),
    }
}

fn read_count(v: &Value, what: &str) -> Result<usize> {
    v.as_u64()
        .map(|n| n as usize)
        .ok_or_else(|| corrupt(format!("{what} is not a count")))
}

fn read_nums(v: &Value, what: &str) -> Result<Vec<f64>> {
    array(v, what)?.iter().map(|x| read_num(x, what)).collect()
}

fn read_vec(v: &Value, what: &str) -> Result<DVector<f64>> {
    Ok(DVector::from_vec(read_nums(v, what)?))
}

fn read_mat(v: &Value, what: &str) -> Result<DMatrix<f64>> {
    let o = object(v, what)?;
    let rows = read_count(field(o, "rows")?, what)?;
    let cols = read_count(field(o, "cols")?, what)?;
    let data = read_nums(field(o, "data")?, what)?;
    if data.len() != rows * cols {
        return Err(corrupt(format!("{what}: {} entries for a {rows}x{cols} matrix", data.len())));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

fn read_strings(v: Option<&Value>) -> Result<Vec<String>> {
    match v {
        None | Some(Value::Null) => Ok(Vec::new()),
        Some(v) => array(v, "names")?
            .iter()
            .map(|s| s.as_str().map(str::to_string).ok_or_else(|| corrupt("names must be strings")))
            .collect(),
    }
}

fn read_sdar(v: &Value) -> Result<SdarModel> {
    let o = object(v, "model")?;
    let f = |name: &str| field(o, name);
    let m = SdarModel {
        mu1_hat: read_vec(f("mu1_hat")?, "mu1_hat")?,
        mu2_hat: read_vec(f("mu2_hat")?, "mu2_hat")?,
        d_hat: read_mat(f("d_hat")?, "d_hat")?,
        beta_hat: read_vec(f("beta_hat")?, "beta_hat")?,
        logdet_term: read_num(f("logdet_term")?, "logdet_term")?,
        log_prior_ratio: read_num(f("log_prior_ratio")?, "log_prior_ratio")?,
        lambda1: read_num(f("lambda1")?, "lambda1")?,
        lambda2: read_num(f("lambda2")?, "lambda2")?,
    };
    let p = m.mu1_hat.len();
    if m.mu2_hat.len() != p || m.beta_hat.len() != p || m.d_hat.shape() != (p, p) {
        return Err(corrupt("inconsistent dimensions"));
    }
    Ok(m)
}

fn check_version(doc: &Map<String, Value>) -> Result<()> {
    let found = field(doc, "schema_version")?
        .as_u64()
        .ok_or_else(|| corrupt("schema_version is not an integer"))?;
    if found == 0 || found > SCHEMA_VERSION as u64 {
        return Err(Error::SchemaVersionMismatch {
            found: found.min(u32::MAX as u64) as u32,
            supported: SCHEMA_VERSION,
        });
    }
    Ok(())
}

/// Parse a model document.
pub fn model_from_json(doc: &Value) -> Result<AnyModel> {
    let doc = object(doc, "document")?;
    check_version(doc)?;
    let body = field(doc, "model")?;
    let kind = match field(doc, "kind")?.as_str() {
        Some("sdar") => ModelKind::Sdar(read_sdar(body)?),
        Some("csdar") => {
            let o = object(body, "model")?;
            let f = |name: &str| field(o, name);
            let ecdfs = |name: &str| -> Result<Vec<WinsorizedEcdf>> {
                array(f(name)?, name)?
                    .iter()
                    .map(|v| {
                        Ok(WinsorizedEcdf {
                            sorted_values: read_nums(v, name)?,
                        })
                    })
                    .collect()
            };
            let moments = CopulaMoments {
                ecdf1: ecdfs("ecdf1")?,
                ecdf2: ecdfs("ecdf2")?,
                mu2_hat: read_vec(f("mu2_hat")?, "mu2_hat")?,
                sigma2_jj_hat: read_vec(f("sigma2_jj_hat")?, "sigma2_jj_hat")?,
                r_hat1: read_mat(f("r_hat1")?, "r_hat1")?,
                r_hat2: read_mat(f("r_hat2")?, "r_hat2")?,
                sigma_tilde1: read_mat(f("sigma_tilde1")?, "sigma_tilde1")?,
                sigma_tilde2: read_mat(f("sigma_tilde2")?, "sigma_tilde2")?,
                n1: read_count(f("n1")?, "n1")?,
                n2: read_count(f("n2")?, "n2")?,
            };
            let sdar = read_sdar(f("sdar")?)?;
            let p = sdar.p();
            if moments.ecdf1.len() != p || moments.ecdf2.len() != p || moments.mu2_hat.len() != p {
                return Err(corrupt("inconsistent dimensions"));
            }
            ModelKind::Copula(Box::new(CopulaModel { moments, sdar }))
        }
        Some("multigroup") => {
            let o = object(body, "model")?;
            let f = |name: &str| field(o, name);
            let vecs = |name: &str| -> Result<Vec<DVector<f64>>> {
                array(f(name)?, name)?.iter().map(|v| read_vec(v, name)).collect()
            };
            let m = MultigroupModel {
                mu_hat: vecs("mu_hat")?,
                d_hat: array(f("d_hat")?, "d_hat")?
                    .iter()
                    .map(|v| read_mat(v, "d_hat"))
                    .collect::<Result<_>>()?,
                beta_hat: vecs("beta_hat")?,
                logdet_term: read_nums(f("logdet_term")?, "logdet_term")?,
                log_prior: read_nums(f("log_prior")?, "log_prior")?,
            };
            let k = m.mu_hat.len();
            if k < 2
                || [m.d_hat.len(), m.beta_hat.len(), m.logdet_term.len(), m.log_prior.len()]
                    .iter()
                    .any(|&l| l != k)
            {
                return Err(corrupt("inconsistent class counts"));
            }
            ModelKind::Multigroup(m)
        }
        other => return Err(corrupt(format!("unknown model kind {other:?}"))),
    };
    Ok(AnyModel {
        kind,
        feature_names: read_strings(doc.get("feature_names"))?,
        label_names: read_strings(doc.get("label_names"))?,
    })
}

pub fn save_model(model: &AnyModel, path: impl AsRef<Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(&model_to_json(model)).expect("json values serialize");
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<AnyModel> {
    let text = std::fs::read_to_string(path)?;
    let doc: Value = serde_json::from_str(&text).map_err(|e| corrupt(e.to_string()))?;
    model_from_json(&doc)
}

/// Experiment specs use the same envelope with `"kind": "experiment"`.
pub fn save_spec(spec: &ExperimentSpec, path: impl AsRef<Path>) -> Result<()> {
    let doc = json!({
        "schema_version": SCHEMA_VERSION,
        "kind": "experiment",
        "spec": spec,
    });
    let text = serde_json::to_string_pretty(&doc).expect("json values serialize");
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn load_spec(path: impl AsRef<Path>) -> Result<ExperimentSpec> {
    let text = std::fs::read_to_string(path)?;
    let invalid = |e: String| Error::InvalidParameter(format!("experiment spec: {e}"));
    let doc: Value = serde_json::from_str(&text).map_err(|e| invalid(e.to_string()))?;
    let obj = doc.as_object().ok_or_else(|| invalid("not an object".into()))?;
    check_version(obj).map_err(|e| match e {
        Error::CorruptModel(m) => invalid(m),
        other => other,
    })?;
    let spec = obj.get("spec").ok_or_else(|| invalid("missing field \"spec\"".into()))?;
    let spec: ExperimentSpec =
        serde_json::from_value(spec.clone()).map_err(|e| invalid(e.to_string()))?;
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_model() -> AnyModel {
        AnyModel::new(ModelKind::Sdar(SdarModel {
            mu1_hat: DVector::from_row_slice(&[0.1, -1.0 / 3.0]),
            mu2_hat: DVector::from_row_slice(&[std::f64::consts::PI, 1e-300]),
            d_hat: DMatrix::from_row_slice(2, 2, &[0.5, 0.1 + 0.2, 0.1 + 0.2, -2.0]),
            beta_hat: DVector::from_row_slice(&[f64::MIN_POSITIVE, -7.25]),
            logdet_term: 0.123_456_789_012_345_68,
            log_prior_ratio: -0.0,
            lambda1: 0.3,
            lambda2: 0.15,
        }))
    }

    #[test]
    fn round_trip_is_exact() {
        let m = small_model();
        let back = model_from_json(&model_to_json(&m)).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn missing_field_is_corrupt() {
        let mut doc = model_to_json(&small_model());
        doc["model"].as_object_mut().unwrap().remove("d_hat");
        assert!(matches!(model_from_json(&doc), Err(Error::CorruptModel(_))));
    }

    #[test]
    fn future_version_rejected() {
        let mut doc = model_to_json(&small_model());
        doc["schema_version"] = json!(SCHEMA_VERSION + 1);
        assert!(matches!(
            model_from_json(&doc),
            Err(Error::SchemaVersionMismatch { found: 2, supported: 1 })
        ));
    }

    #[test]
    fn spec_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("spec.json");
        let spec = ExperimentSpec::simulation(2, 40, 3, 11);
        save_spec(&spec, &path).unwrap();
        assert_eq!(load_spec(&path).unwrap(), spec);
    }
}
