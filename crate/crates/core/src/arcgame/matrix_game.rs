//! Zero-sum matrix games solved exactly by the simplex method.
//!
//! The payoff matrix is shifted so every entry is at least 1, after which
//! the column player's problem `max Σq  s.t.  A q ≤ 1, q ≥ 0` has the origin
//! as a feasible basis. The row player's mixture is read off the dual
//! values of the slack columns in the optimal tableau.

use crate::error::{Error, Result};

/// Equilibrium of a matrix game; the row player maximizes.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixGameSolution {
    pub row_mix: Vec<f64>,
    pub col_mix: Vec<f64>,
    pub value: f64,
    /// Largest gain any pure strategy of either player has over `value`.
    pub regret: f64,
}

const PIVOT_EPS: f64 = 1e-12;

pub fn solve_matrix_game(payoff: &[Vec<f64>], tol: f64) -> Result<MatrixGameSolution> {
    let m = payoff.len();
    if m == 0 || payoff[0].is_empty() {
        return Err(Error::validation("payoff matrix must be at least 1x1"));
    }
    let k = payoff[0].len();
    if payoff.iter().any(|row| row.len() != k) {
        return Err(Error::validation("payoff matrix rows differ in length"));
    }
    if payoff.iter().flatten().any(|a| !a.is_finite()) {
        return Err(Error::validation("payoff matrix has a non-finite entry"));
    }
    if !(tol > 0.0) {
        return Err(Error::validation(format!("tolerance must be positive, got {tol}")));
    }

    let min = payoff.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    let shift = 1.0 - min;

    // Tableau: m constraint rows then the objective row; columns are the
    // k game columns, m slacks, and the right-hand side.
    let width = k + m + 1;
    let mut tab = vec![0.0; (m + 1) * width];
    for i in 0..m {
        for j in 0..k {
            tab[i * width + j] = payoff[i][j] + shift;
        }
        tab[i * width + k + i] = 1.0;
        tab[i * width + k + m] = 1.0;
    }
    for j in 0..k {
        tab[m * width + j] = -1.0;
    }
    let mut basis: Vec<usize> = (k..k + m).collect();

    let budget = 50 * (m + k) + 100;
    let mut pivots = 0;
    // Bland's rule: lowest-index improving column.
    while let Some(enter) = (0..k + m).find(|&c| tab[m * width + c] < -PIVOT_EPS) {
        let mut leave: Option<usize> = None;
        let mut best_ratio = f64::INFINITY;
        for r in 0..m {
            let a = tab[r * width + enter];
            if a > PIVOT_EPS {
                let ratio = tab[r * width + k + m] / a;
                let better = match leave {
                    None => true,
                    Some(l) => ratio < best_ratio - 1e-15 || (ratio <= best_ratio + 1e-15 && basis[r] < basis[l]),
                };
                if better {
                    best_ratio = ratio;
                    leave = Some(r);
                }
            }
        }
        let Some(row) = leave else {
            // Unbounded cannot happen with a strictly positive matrix.
            return Err(Error::numeric("simplex found an unbounded direction"));
        };
        pivot(&mut tab, width, m + 1, row, enter);
        basis[row] = enter;
        pivots += 1;
        if pivots > budget {
            return Err(Error::Convergence {
                what: "matrix game simplex",
                iterations: pivots,
                regret: f64::NAN,
            });
        }
    }

    let mut col_mix = vec![0.0; k];
    for (r, &b) in basis.iter().enumerate() {
        if b < k {
            col_mix[b] = tab[r * width + k + m].max(0.0);
        }
    }
    let mut row_mix: Vec<f64> = (0..m).map(|i| tab[m * width + k + i].max(0.0)).collect();
    let total_q: f64 = col_mix.iter().sum();
    let total_p: f64 = row_mix.iter().sum();
    if !(total_q > 0.0) || !(total_p > 0.0) {
        return Err(Error::numeric("degenerate simplex solution"));
    }
    col_mix.iter_mut().for_each(|q| *q /= total_q);
    row_mix.iter_mut().for_each(|p| *p /= total_p);

    let value = expected_payoff(payoff, &row_mix, &col_mix);
    let regret = equilibrium_regret(payoff, &row_mix, &col_mix, value);
    if regret > tol {
        return Err(Error::Convergence {
            what: "matrix game",
            iterations: pivots,
            regret,
        });
    }
    Ok(MatrixGameSolution {
        row_mix,
        col_mix,
        value,
        regret,
    })
}

fn pivot(tab: &mut [f64], width: usize, rows: usize, row: usize, col: usize) {
    let p = tab[row * width + col];
    for c in 0..width {
        tab[row * width + c] /= p;
    }
    tab[row * width + col] = 1.0;
    for r in 0..rows {
        if r == row {
            continue;
        }
        let factor = tab[r * width + col];
        if factor == 0.0 {
            continue;
        }
        for c in 0..width {
            tab[r * width + c] -= factor * tab[row * width + c];
        }
        tab[r * width + col] = 0.0;
    }
}

pub fn expected_payoff(payoff: &[Vec<f64>], row_mix: &[f64], col_mix: &[f64]) -> f64 {
    payoff
        .iter()
        .zip(row_mix)
        .map(|(row, p)| p * row.iter().zip(col_mix).map(|(a, q)| a * q).sum::<f64>())
        .sum()
}

/// `max(best pure row payoff − value, value − best pure column payoff)`,
/// floored at zero.
pub fn equilibrium_regret(payoff: &[Vec<f64>], row_mix: &[f64], col_mix: &[f64], value: f64) -> f64 {
    let best_row = payoff
        .iter()
        .map(|row| row.iter().zip(col_mix).map(|(a, q)| a * q).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max);
    let k = col_mix.len();
    let best_col = (0..k)
        .map(|j| payoff.iter().zip(row_mix).map(|(row, p)| p * row[j]).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    (best_row - value).max(value - best_col).max(0.0)
}
