use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use sdar::bench::{
    emit_table, ingest_csv, load_model, load_spec, read_features, run_experiment_timed,
    save_model, tune_and_fit, tune_lambdas, AnyModel, ExperimentSpec, Fitted, LambdaGrid,
    LambdaScaling, Method, ModelKind, Rule, TableFormat, TuneConfig,
};
use sdar::classify::fit_multigroup;
use sdar::copula::fit_csdar;
use sdar::error::{Error, Result};
use sdar::estimate::{default_lambda, fit_sdar, FitConfig};

#[derive(Parser)]
#[command(name = "sdar", version, about = "Sparse quadratic discriminant analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Markdown,
}

impl From<Format> for TableFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => TableFormat::Csv,
            Format::Markdown => TableFormat::Markdown,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum RuleArg {
    Sdar,
    Csdar,
}

#[derive(Subcommand)]
enum Command {
    /// Replicated simulation for one model and dimension.
    Simulate {
        /// 1-6, or imp1 / imp2 for the two impossibility settings.
        #[arg(long)]
        model: String,
        #[arg(long)]
        p: usize,
        #[arg(long, default_value_t = 200)]
        n1: usize,
        #[arg(long, default_value_t = 200)]
        n2: usize,
        /// Defaults to 200 (100 for the impossibility settings).
        #[arg(long)]
        n_test: Option<usize>,
        #[arg(long, default_value_t = 100)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated: sdar, csdar, lda_plugin, qda_plugin, oracle, plugin.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Fit a classifier to a labelled CSV file.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        label_col: String,
        #[arg(long)]
        screen_top: Option<usize>,
        #[arg(long)]
        lambda1: Option<f64>,
        #[arg(long)]
        lambda2: Option<f64>,
        /// Choose both radii by 5-fold cross-validation.
        #[arg(long)]
        cv: bool,
        #[arg(long, value_enum, default_value_t = RuleArg::Sdar)]
        rule: RuleArg,
        #[arg(long)]
        model_out: PathBuf,
    },
    /// Label the rows of a CSV file with a saved model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an experiment described by a JSON spec.
    Bench {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Print the cross-validated radii for a labelled CSV file.
    Tune {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        label_col: String,
        /// Grid divisor: radii are (k / scale) sqrt(log p / n).
        #[arg(long, default_value_t = 2.0)]
        grid_scale: f64,
        #[arg(long, default_value_t = 15)]
        grid_max_k: usize,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long)]
        screen_top: Option<usize>,
        #[arg(long, value_enum, default_value_t = RuleArg::Sdar)]
        rule: RuleArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn write_out(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn rule(r: RuleArg) -> Rule {
    match r {
        RuleArg::Sdar => Rule::Sdar,
        RuleArg::Csdar => Rule::Csdar,
    }
}

fn run_table(spec: &ExperimentSpec, out: Option<&Path>, format: Format) -> Result<()> {
    let (table, seconds) = run_experiment_timed(spec)?;
    for (row, s) in table.rows.iter().zip(seconds) {
        eprintln!("{} {}: {:.1}s", row.model, row.method, s);
    }
    write_out(out, &emit_table(&table, format.into()))
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    model: &str,
    p: usize,
    n1: usize,
    n2: usize,
    n_test: Option<usize>,
    reps: usize,
    seed: u64,
    methods: Option<Vec<String>>,
) -> Result<ExperimentSpec> {
    let mut spec = match model.strip_prefix("imp") {
        Some(setting) => {
            let setting = setting
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("unknown model {model:?}")))?;
            ExperimentSpec::impossibility(setting, p, n1, reps, seed)
        }
        None => {
            let id = model
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("unknown model {model:?}")))?;
            ExperimentSpec::simulation(id, p, reps, seed)
        }
    };
    spec.n1 = n1;
    spec.n2 = n2;
    if let Some(n) = n_test {
        spec.n_test = n;
    }
    if let Some(m) = methods {
        spec.methods = m.iter().map(|s| Method::parse(s)).collect::<Result<_>>()?;
    }
    Ok(spec)
}

fn tune_config(divisor: f64, max_k: usize, folds: usize, seed: u64) -> TuneConfig {
    let mut fit = FitConfig::new(0.0, 0.0);
    fit.solver.duality_gap_tol = 1e-6;
    fit.solver.max_working_set = 600;
    TuneConfig {
        grid1: LambdaGrid::paper(divisor, max_k),
        grid2: LambdaGrid::paper(divisor, max_k),
        folds,
        seed,
        scaling: LambdaScaling::Variance,
        fit,
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            model,
            p,
            n1,
            n2,
            n_test,
            reps,
            seed,
            methods,
            out,
            format,
        } => {
            let spec = simulate(&model, p, n1, n2, n_test, reps, seed, methods)?;
            run_table(&spec, out.as_deref(), format)
        }
        Command::Bench { spec, out, format } => {
            let spec = load_spec(&spec)?;
            run_table(&spec, out.as_deref(), format)
        }
        Command::Fit {
            data,
            label_col,
            screen_top,
            lambda1,
            lambda2,
            cv,
            rule: which,
            model_out,
        } => {
            let csv = ingest_csv(&data, &label_col, screen_top)?;
            let d = &csv.data;
            let n_min = d.class_counts().values().copied().min().unwrap_or(0);
            let lam = default_lambda(d.p(), n_min);
            let cfg = FitConfig::new(lambda1.unwrap_or(lam), lambda2.unwrap_or(lam));
            let kind = if d.num_classes() > 2 {
                ModelKind::Multigroup(fit_multigroup(d, &cfg)?)
            } else if cv {
                let (fitted, tuned) = tune_and_fit(rule(which), d, &tune_config(2.0, 15, 5, 0))?;
                eprintln!("lambda1 {} lambda2 {}", tuned.lambda1, tuned.lambda2);
                match fitted {
                    Fitted::Sdar(m) => ModelKind::Sdar(m),
                    Fitted::Copula(m) => ModelKind::Copula(m),
                }
            } else {
                match which {
                    RuleArg::Sdar => ModelKind::Sdar(fit_sdar(d, &cfg)?),
                    RuleArg::Csdar => ModelKind::Copula(Box::new(fit_csdar(d, &cfg)?)),
                }
            };
            let model = AnyModel {
                kind,
                feature_names: csv.feature_names,
                label_names: csv.label_names,
            };
            save_model(&model, &model_out)
        }
        Command::Predict { model, data, out } => {
            let model = load_model(&model)?;
            if model.feature_names.len() != model.p() {
                return Err(Error::CorruptModel("model has no feature names".into()));
            }
            let x = read_features(&data, &model.feature_names)?;
            let labels = model.classify_rows(&x)?;
            let mut text = String::from("label\n");
            for l in labels {
                match model.label_names.get(l - 1) {
                    Some(name) => text.push_str(name),
                    None => text.push_str(&l.to_string()),
                }
                text.push('\n');
            }
            write_out(out.as_deref(), &text)
        }
        Command::Tune {
            data,
            label_col,
            grid_scale,
            grid_max_k,
            folds,
            screen_top,
            rule: which,
            seed,
        } => {
            let csv = ingest_csv(&data, &label_col, screen_top)?;
            let cfg = tune_config(grid_scale, grid_max_k, folds, seed);
            let tuned = tune_lambdas(rule(which), &csv.data, &cfg)?;
            println!("lambda1,lambda2,cv_error");
            println!("{},{},{}", tuned.lambda1, tuned.lambda2, tuned.cv_error);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
