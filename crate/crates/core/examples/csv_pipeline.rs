//! CSV in, screened features, fitted model saved to JSON, reloaded and used
//! to label new rows.

use sdar::bench::{ingest_csv, load_model, read_features, save_model, AnyModel, ModelKind};
use sdar::datagen::{gen_model, sample};
use sdar::estimate::{fit_sdar, FitConfig};

fn main() -> sdar::error::Result<()> {
    let dir = std::env::temp_dir().join("sdar_csv_pipeline");
    std::fs::create_dir_all(&dir)?;
    let csv = dir.join("train.csv");

    let data = sample(&gen_model(2, 30, 5)?, 60, 60, 6)?;
    let mut text = (0..30).map(|j| format!("g{j}")).collect::<Vec<_>>().join(",") + ",tissue\n";
    for i in 0..data.n() {
        let row: Vec<String> = data.features.row(i).iter().map(|v| v.to_string()).collect();
        let label = if data.labels[i] == 1 { "normal" } else { "tumour" };
        text.push_str(&format!("{},{label}\n", row.join(",")));
    }
    std::fs::write(&csv, text)?;

    let set = ingest_csv(&csv, "tissue", Some(10))?;
    println!("kept features: {:?}", set.feature_names);
    let n_min = set.data.class_counts().values().copied().min().unwrap_or(0);
    let fitted = fit_sdar(&set.data, &FitConfig::with_default_lambdas(set.data.p(), n_min))?;
    let model = AnyModel {
        kind: ModelKind::Sdar(fitted),
        feature_names: set.feature_names.clone(),
        label_names: set.label_names.clone(),
    };
    let path = dir.join("model.json");
    save_model(&model, &path)?;

    let loaded = load_model(&path)?;
    let x = read_features(&csv, &loaded.feature_names)?;
    let labels = loaded.classify_rows(&x)?;
    let wrong = labels.iter().zip(&set.data.labels).filter(|(a, b)| a != b).count();
    println!("training error after reload: {:.3}", wrong as f64 / labels.len() as f64);
    println!("model written to {}", path.display());
    Ok(())
}
