//! The l1 solver on its own, with an explicit matrix and with the
//! matrix-free Sylvester operator used for differential graphs.

use nalgebra::DMatrix;
use sdar::solver::{matrix_operator, solve_l1_dantzig, sylvester_operator};
use sdar::types::SolverConfig;

fn main() -> sdar::error::Result<()> {
    let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.0, 0.5, 2.0, 0.5, 0.0, 0.5, 2.0]);
    let b = [1.0, -0.2, 0.05];
    let rep = solve_l1_dantzig(&matrix_operator(a)?, &b, &SolverConfig::default().with_lambda(0.1))?;
    println!("x = {:?}", rep.solution);
    println!("|x|_1 = {:.6}, gap {:.1e}, {} iterations", rep.objective, rep.duality_gap, rep.iterations);

    let s1 = DMatrix::identity(4, 4);
    let s2 = DMatrix::from_fn(4, 4, |i, j| 0.5f64.powi((i as i32 - j as i32).abs()));
    let op = sylvester_operator(&s1, &s2)?;
    let target = &s1 - &s2;
    let rep = solve_l1_dantzig(&op, target.as_slice(), &SolverConfig::default().with_lambda(0.05))?;
    let d = DMatrix::from_column_slice(4, 4, &rep.solution);
    println!("differential graph estimate:{d:.3}");
    Ok(())
}
