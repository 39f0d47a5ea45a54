//! A small replicated experiment, printed as a markdown table.

use sdar::bench::{emit_table, run_experiment, ExperimentSpec, LambdaGrid, Method, TableFormat};

fn main() -> sdar::error::Result<()> {
    let mut spec = ExperimentSpec::simulation(2, 40, 5, 2024);
    spec.n1 = 100;
    spec.n2 = 100;
    spec.lambda_grid1 = LambdaGrid::paper(4.0, 6);
    spec.lambda_grid2 = LambdaGrid::paper(4.0, 6);
    spec.methods = vec![Method::Sdar, Method::LdaPlugin, Method::QdaPlugin, Method::Oracle];
    let mut table = run_experiment(&spec)?;

    table.extend(run_experiment(&ExperimentSpec::impossibility(1, 200, 100, 20, 2024))?);
    print!("{}", emit_table(&table, TableFormat::Markdown));
    Ok(())
}
