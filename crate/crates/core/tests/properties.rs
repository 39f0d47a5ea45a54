mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

use common::{random_spd, random_theta, rng};
use sdar::bench::{
    emit_table, model_from_json, model_to_json, parse_table, screen_features, AnyModel,
    ErrorRow, ErrorTable, ModelKind, TableFormat,
};
use sdar::classify::{discriminant, logdet_term, oracle_model, PriorConvention};
use sdar::copula::winsorized_ecdf;
use sdar::types::{log_likelihood_ratio, LabeledDataset, SdarModel};

#[test]
fn exact_discriminant_is_twice_the_log_likelihood_ratio() {
    let mut r = rng(7000);
    let mut worst = 0.0f64;
    for i in 0..200 {
        let p = [1, 2, 5, 20][i % 4];
        let theta = random_theta(&mut r, p);
        let model = oracle_model(&theta, PriorConvention::Bayes).unwrap();
        let z = DVector::from_fn(p, |_, _| r.random_range(-3.0..3.0));
        let q = discriminant(&z, &model).unwrap();
        let want = 2.0 * log_likelihood_ratio(&z, &theta).unwrap();
        worst = worst.max((q - want).abs() / want.abs().max(1.0));
    }
    assert!(worst <= 1e-8, "{worst}");
}

#[test]
fn logdet_of_the_exact_graph_is_the_determinant_ratio() {
    let mut r = rng(7100);
    for i in 0..100 {
        let p = 1 + i % 10;
        let s1 = random_spd(&mut r, p);
        let s2 = random_spd(&mut r, p);
        let d = s2.clone().try_inverse().unwrap() - s1.clone().try_inverse().unwrap();
        let got = logdet_term(&d, &s1).unwrap();
        // LU determinants, independent of the eigen route under test
        let want = s1.determinant().ln() - s2.determinant().ln();
        assert!((got - want).abs() <= 1e-9 * (1.0 + want.abs()), "p={p}: {got} vs {want}");
    }
}

fn dataset(values: &[f64], n: usize, p: usize) -> LabeledDataset {
    let x = DMatrix::from_row_slice(n, p, &values[..n * p]);
    let labels = (0..n).map(|i| if i < n / 2 { 1 } else { 2 }).collect();
    LabeledDataset::new(x, labels).unwrap()
}

fn sdar_model(values: &[f64], p: usize) -> SdarModel {
    let mut it = values.iter().copied().cycle();
    let mut next = || it.next().unwrap();
    let mu1 = DVector::from_fn(p, |_, _| next());
    let mu2 = DVector::from_fn(p, |_, _| next());
    let mut d = DMatrix::from_fn(p, p, |_, _| next());
    d = (&d + d.transpose()) * 0.5;
    SdarModel {
        mu1_hat: mu1,
        mu2_hat: mu2,
        d_hat: d,
        beta_hat: DVector::from_fn(p, |_, _| next()),
        logdet_term: next(),
        log_prior_ratio: next(),
        lambda1: next().abs(),
        lambda2: next().abs(),
    }
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        -1e3f64..1e3,
        -1e-8f64..1e-8,
        Just(0.0),
        Just(-0.0),
        Just(f64::MIN_POSITIVE),
        Just(1.0 / 3.0),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn screening_is_idempotent(
        values in prop::collection::vec(-5.0f64..5.0, 120),
        k in 1usize..6,
    ) {
        let data = dataset(&values, 20, 6);
        let kept = screen_features(&data, k).unwrap();
        prop_assert_eq!(kept.len(), k);
        prop_assert!(kept.windows(2).all(|w| w[0] < w[1]));
        let again = screen_features(&data.select_columns(&kept), k).unwrap();
        prop_assert_eq!(again, (0..k).collect::<Vec<_>>());
    }

    #[test]
    fn table_csv_round_trip(
        cells in prop::collection::vec((0.0f64..1.0, 0.0f64..0.5, 0usize..200, 0usize..5), 0..8),
    ) {
        let table = ErrorTable {
            rows: cells
                .iter()
                .enumerate()
                .map(|(i, &(mean, sd, reps, failed))| ErrorRow {
                    model: format!("model{}", 1 + i % 6),
                    p: 100 * (1 + i / 6),
                    method: ["sdar", "oracle", "csdar"][i % 3].to_string(),
                    mean,
                    sd,
                    reps,
                    failed,
                })
                .collect(),
        };
        let text = emit_table(&table, TableFormat::Csv);
        prop_assert_eq!(parse_table(&text).unwrap(), table);
    }

    #[test]
    fn model_json_round_trip_is_exact(
        values in prop::collection::vec(finite(), 1..40),
        p in 1usize..5,
    ) {
        let mut model = AnyModel::new(ModelKind::Sdar(sdar_model(&values, p)));
        model.feature_names = (0..p).map(|j| format!("f{j}")).collect();
        model.label_names = vec!["a".into(), "b,c".into()];
        let back = model_from_json(&model_to_json(&model)).unwrap();
        let ModelKind::Sdar(ref got) = back.kind else { panic!("kind changed") };
        let ModelKind::Sdar(ref want) = model.kind else { unreachable!() };
        let bits = |m: &SdarModel| -> Vec<u64> {
            m.mu1_hat.iter()
                .chain(m.mu2_hat.iter())
                .chain(m.d_hat.iter())
                .chain(m.beta_hat.iter())
                .chain([m.logdet_term, m.log_prior_ratio, m.lambda1, m.lambda2].iter())
                .map(|v| v.to_bits())
                .collect()
        };
        prop_assert_eq!(bits(got), bits(want));
        prop_assert_eq!(back.feature_names, model.feature_names);
        prop_assert_eq!(back.label_names, model.label_names);
    }

    #[test]
    fn ecdf_is_monotone_and_clipped(
        samples in prop::collection::vec(-10.0f64..10.0, 2..50),
        mut probes in prop::collection::vec(-20.0f64..20.0, 2..30),
    ) {
        let f = winsorized_ecdf(&samples).unwrap();
        let n = samples.len() as f64;
        probes.sort_by(|a, b| a.total_cmp(b));
        let values: Vec<f64> = probes.iter().map(|&t| f.evaluate(t)).collect();
        prop_assert!(values.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(values.iter().all(|&v| v >= 1.0 / (n * n) && v <= 1.0 - 1.0 / (n * n)));
        let scores: Vec<f64> = probes.iter().map(|&t| f.normal_score(t)).collect();
        prop_assert!(scores.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(scores.iter().all(|s| s.is_finite()));
    }
}
