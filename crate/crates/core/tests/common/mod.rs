#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sdar::solver::{matrix_operator, solve_weighted_l1_dantzig};
use sdar::types::{GaussianPairParams, SolverConfig};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

pub fn random_spd(rng: &mut ChaCha8Rng, p: usize) -> DMatrix<f64> {
    let a = random_matrix(rng, p, p);
    &a * a.transpose() + DMatrix::identity(p, p) * 0.5
}

pub fn random_theta(rng: &mut ChaCha8Rng, p: usize) -> GaussianPairParams {
    let pi1 = rng.random_range(0.2..0.8);
    let mu1 = DVector::from_fn(p, |_, _| rng.random_range(-1.0..1.0));
    let mu2 = DVector::from_fn(p, |_, _| rng.random_range(-1.0..1.0));
    let s1 = random_spd(rng, p);
    let s2 = random_spd(rng, p);
    GaussianPairParams::new(pi1, 1.0 - pi1, mu1, mu2, s1, s2).unwrap()
}

/// Minimize `c'x` subject to `A x = b`, `x >= 0` by the two-phase tableau
/// simplex method with Bland's rule. `None` if infeasible or unbounded.
pub fn simplex(a: &DMatrix<f64>, b: &[f64], c: &[f64]) -> Option<(f64, Vec<f64>)> {
    const EPS: f64 = 1e-11;
    let (m, n) = a.shape();
    // columns: n originals, m artificials, rhs
    let width = n + m + 1;
    let mut t = vec![vec![0.0; width]; m + 1];
    for i in 0..m {
        let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[i][j] = sign * a[(i, j)];
        }
        t[i][n + i] = 1.0;
        t[i][width - 1] = sign * b[i];
    }
    let mut basis: Vec<usize> = (n..n + m).collect();

    fn pivot(t: &mut [Vec<f64>], r: usize, c: usize) {
        let v = t[r][c];
        for x in t[r].iter_mut() {
            *x /= v;
        }
        let row = t[r].clone();
        for (i, other) in t.iter_mut().enumerate() {
            if i != r && other[c] != 0.0 {
                let f = other[c];
                for (x, y) in other.iter_mut().zip(&row) {
                    *x -= f * y;
                }
            }
        }
    }

    fn iterate(t: &mut [Vec<f64>], basis: &mut [usize], allowed: &[bool]) -> bool {
        let m = basis.len();
        let width = t[0].len();
        loop {
            let Some(col) = (0..width - 1).find(|&j| allowed[j] && t[m][j] < -EPS) else {
                return true;
            };
            let mut best: Option<(f64, usize)> = None;
            for i in 0..m {
                if t[i][col] > EPS {
                    let ratio = t[i][width - 1] / t[i][col];
                    best = match best {
                        None => Some((ratio, i)),
                        Some((r, k)) if ratio < r - EPS || (ratio <= r + EPS && basis[i] < basis[k]) => {
                            Some((ratio, i))
                        }
                        keep => keep,
                    };
                }
            }
            let Some((_, row)) = best else { return false };
            pivot(t, row, col);
            basis[row] = col;
        }
    }

    // phase 1: minimize the sum of artificials
    for j in 0..width {
        t[m][j] = -(0..m).map(|i| t[i][j]).sum::<f64>();
    }
    for i in 0..m {
        t[m][n + i] = 0.0;
    }
    let allowed1 = vec![true; n + m];
    iterate(&mut t, &mut basis, &allowed1);
    if -t[m][width - 1] > 1e-8 {
        return None;
    }
    for i in 0..m {
        if basis[i] >= n {
            if let Some(j) = (0..n).find(|&j| t[i][j].abs() > 1e-9) {
                pivot(&mut t, i, j);
                basis[i] = j;
            }
        }
    }

    // phase 2
    for j in 0..width {
        t[m][j] = if j < n { c[j] } else { 0.0 };
    }
    for i in 0..m {
        let cb = if basis[i] < n { c[basis[i]] } else { 0.0 };
        if cb != 0.0 {
            for j in 0..width {
                t[m][j] -= cb * t[i][j];
            }
        }
    }
    let allowed2: Vec<bool> = (0..n + m).map(|j| j < n).collect();
    if !iterate(&mut t, &mut basis, &allowed2) {
        return None;
    }
    let mut x = vec![0.0; n];
    for i in 0..m {
        if basis[i] < n {
            x[basis[i]] = t[i][width - 1];
        }
    }
    let obj = c.iter().zip(&x).map(|(a, b)| a * b).sum();
    Some((obj, x))
}

/// `min sum w_j |x_j|` subject to `|A x - b|_inf <= lambda`, as the LP over
/// `x = u - v` with slacks. Returns the optimal value and a minimizer.
pub fn dantzig_lp(a: &DMatrix<f64>, b: &[f64], weights: &[f64], lambda: f64) -> Option<(f64, Vec<f64>)> {
    let (m, n) = a.shape();
    // variables: u (n), v (n), s (2m)
    let mut g = DMatrix::zeros(2 * m, 2 * n + 2 * m);
    let mut rhs = vec![0.0; 2 * m];
    for i in 0..m {
        for j in 0..n {
            g[(i, j)] = a[(i, j)];
            g[(i, n + j)] = -a[(i, j)];
            g[(m + i, j)] = -a[(i, j)];
            g[(m + i, n + j)] = a[(i, j)];
        }
        g[(i, 2 * n + i)] = 1.0;
        g[(m + i, 2 * n + m + i)] = 1.0;
        rhs[i] = b[i] + lambda;
        rhs[m + i] = lambda - b[i];
    }
    let mut c = vec![0.0; 2 * n + 2 * m];
    for j in 0..n {
        c[j] = weights[j];
        c[n + j] = weights[j];
    }
    let (obj, z) = simplex(&g, &rhs, &c)?;
    Some((obj, (0..n).map(|j| z[j] - z[n + j]).collect()))
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Random instance of the oracle suite: `dim_out` rows, `dim_in <= 9` columns.
fn dantzig_instance(seed: u64) -> (DMatrix<f64>, Vec<f64>, Vec<f64>, f64) {
    let mut r = rng(1000 + seed);
    let n = r.random_range(1..=9);
    let m = r.random_range(1..=9);
    let a = random_matrix(&mut r, m, n);
    let b: Vec<f64> = (0..m).map(|_| r.random_range(-2.0..2.0)).collect();
    let w: Vec<f64> = (0..n).map(|_| r.random_range(0.5..2.0)).collect();
    let lambda = r.random_range(0.01..0.5);
    (a, b, w, lambda)
}

/// Objective within 1e-6 relative of the simplex optimum and the reported
/// certificate (feasibility, convergence, duality gap) holds.
pub fn check_instance(seed: u64) -> Result<(), String> {
    let (a, b, w, lambda) = dantzig_instance(seed);
    let cfg = SolverConfig::default().with_lambda(lambda);
    let oracle = dantzig_lp(&a, &b, &w, lambda);
    let got = solve_weighted_l1_dantzig(&matrix_operator(a.clone()).unwrap(), &b, &w, &cfg);
    match (oracle, got) {
        (None, Err(sdar::error::Error::Infeasible { .. })) => Ok(()),
        (None, other) => Err(format!("seed {seed}: LP infeasible, solver gave {other:?}")),
        (Some((want, _)), Ok(rep)) => {
            let x = nalgebra::DVector::from_column_slice(&rep.solution);
            let resid = &a * &x - nalgebra::DVector::from_column_slice(&b);
            let viol = resid.amax();
            if !rep.converged || viol > lambda * (1.0 + 1e-9) + 1e-12 {
                return Err(format!("seed {seed}: infeasible certificate {viol} > {lambda}"));
            }
            if rep.duality_gap > 10.0 * cfg.duality_gap_tol * (1.0 + want) {
                return Err(format!("seed {seed}: gap {}", rep.duality_gap));
            }
            if (rep.objective - want).abs() > 1e-6 * want.max(1.0) {
                return Err(format!("seed {seed}: objective {} vs {want}", rep.objective));
            }
            Ok(())
        }
        (Some(_), Err(e)) => Err(format!("seed {seed}: solver failed: {e}")),
    }
}

