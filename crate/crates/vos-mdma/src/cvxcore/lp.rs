//! Dense primal simplex for small linear programs whose origin is feasible.
//!
//! Solves max cᵀy s.t. A y ≤ b, y ≥ 0 with b ≥ 0, so the slack basis is a
//! starting vertex and no phase one is needed. Bland's rule guards against
//! cycling on the degenerate vertices these feasibility problems produce.

use crate::error::{Error, Result};

const PIVOT_TOL: f64 = 1e-12;
const MAX_ITERS: usize = 20_000;

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

/// Maximizes `c·y` subject to `a y ≤ b`, `y ≥ 0`; requires `b ≥ 0`.
pub fn maximize(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> Result<LpSolution> {
    let rows = a.len();
    let cols = c.len();
    if b.len() != rows || a.iter().any(|r| r.len() != cols) {
        return Err(Error::Solver("LP shape mismatch".into()));
    }
    if let Some(i) = b.iter().position(|&v| !(v >= 0.0)) {
        return Err(Error::Solver(format!("LP right-hand side {i} is negative ({})", b[i])));
    }
    let width = cols + rows + 1;
    // Tableau rows 0..rows are constraints, row `rows` is the objective.
    let mut t = vec![0.0; (rows + 1) * width];
    for i in 0..rows {
        t[i * width..i * width + cols].copy_from_slice(&a[i]);
        t[i * width + cols + i] = 1.0;
        t[i * width + width - 1] = b[i];
    }
    for j in 0..cols {
        t[rows * width + j] = -c[j];
    }
    let mut basis: Vec<usize> = (cols..cols + rows).collect();

    let mut iterations = 0;
    loop {
        // Bland: smallest index with a negative reduced cost enters.
        let obj = &t[rows * width..rows * width + width - 1];
        let Some(enter) = obj.iter().position(|&v| v < -PIVOT_TOL) else { break };
        let mut leave: Option<usize> = None;
        let mut best = f64::INFINITY;
        for i in 0..rows {
            let piv = t[i * width + enter];
            if piv > PIVOT_TOL {
                let ratio = t[i * width + width - 1] / piv;
                let better = match leave {
                    None => true,
                    Some(l) => ratio < best - 1e-15 || (ratio <= best + 1e-15 && basis[i] < basis[l]),
                };
                if better {
                    best = ratio;
                    leave = Some(i);
                }
            }
        }
        let Some(r) = leave else {
            return Err(Error::Solver(format!("LP unbounded along column {enter}")));
        };
        pivot(&mut t, width, rows, r, enter);
        basis[r] = enter;
        iterations += 1;
        if iterations > MAX_ITERS {
            return Err(Error::Solver(format!("simplex exceeded {MAX_ITERS} pivots ({rows}x{cols})")));
        }
    }
    let mut x = vec![0.0; cols];
    for (i, &bv) in basis.iter().enumerate() {
        if bv < cols {
            x[bv] = t[i * width + width - 1].max(0.0);
        }
    }
    let objective = c.iter().zip(&x).map(|(a, b)| a * b).sum();
    Ok(LpSolution { x, objective, iterations })
}

fn pivot(t: &mut [f64], width: usize, rows: usize, r: usize, col: usize) {
    let p = t[r * width + col];
    for j in 0..width {
        t[r * width + j] /= p;
    }
    t[r * width + col] = 1.0;
    for i in 0..=rows {
        if i == r {
            continue;
        }
        let f = t[i * width + col];
        if f != 0.0 {
            for j in 0..width {
                t[i * width + j] -= f * t[r * width + j];
            }
            t[i * width + col] = 0.0;
        }
    }
}
