//! Log-barrier Newton method for small dense problems
//!
//!   maximize f(y)  s.t.  g_i(y) ≤ 0,
//!
//! with f concave and separable (value, gradient and Hessian diagonal are
//! supplied by the caller) and each g_i affine or a convex quadratic of the
//! rank-one form ¼(cᵀy + d)² + eᵀy + f. A phase-I problem finds a strictly
//! feasible start from any given point.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Inequality g(y) ≤ 0.
#[derive(Clone, Debug, PartialEq)]
pub enum Constraint {
    /// aᵀy − b ≤ 0.
    Linear { a: Vec<f64>, b: f64 },
    /// ¼(cᵀy + d)² + eᵀy + f ≤ 0.
    Quad { c: Vec<f64>, d: f64, e: Vec<f64>, f: f64 },
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Constraint {
    pub fn value(&self, y: &[f64]) -> f64 {
        match self {
            Constraint::Linear { a, b } => dot(a, y) - b,
            Constraint::Quad { c, d, e, f } => {
                let s = dot(c, y) + d;
                0.25 * s * s + dot(e, y) + f
            }
        }
    }

    fn gradient(&self, y: &[f64]) -> Vec<f64> {
        match self {
            Constraint::Linear { a, .. } => a.clone(),
            Constraint::Quad { c, d, e, .. } => {
                let s = 0.5 * (dot(c, y) + d);
                c.iter().zip(e).map(|(ci, ei)| s * ci + ei).collect()
            }
        }
    }

    /// Adds w·∇²g to `h`.
    fn add_hessian(&self, w: f64, h: &mut DMatrix<f64>) {
        if let Constraint::Quad { c, .. } = self {
            for i in 0..c.len() {
                if c[i] == 0.0 {
                    continue;
                }
                for j in 0..c.len() {
                    h[(i, j)] += 0.5 * w * c[i] * c[j];
                }
            }
        }
    }

    /// Divides the constraint by a positive factor.
    pub fn scaled(self, s: f64) -> Constraint {
        match self {
            Constraint::Linear { a, b } => Constraint::Linear { a: a.iter().map(|x| x / s).collect(), b: b / s },
            Constraint::Quad { c, d, e, f } => {
                let r = s.sqrt();
                Constraint::Quad { c: c.iter().map(|x| x / r).collect(), d: d / r, e: e.iter().map(|x| x / s).collect(), f: f / s }
            }
        }
    }

    /// Row magnitude used for normalization.
    pub fn magnitude(&self) -> f64 {
        let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        match self {
            Constraint::Linear { a, b } => inf(a).max(b.abs()),
            Constraint::Quad { c, d, e, f } => (0.25 * (inf(c) + d.abs()).powi(2)).max(inf(e)).max(f.abs()),
        }
    }

    /// Dimension extended by one zero column (phase-I slack).
    fn with_slack(&self) -> Constraint {
        match self {
            Constraint::Linear { a, b } => {
                let mut a = a.clone();
                a.push(-1.0);
                Constraint::Linear { a, b: *b }
            }
            Constraint::Quad { c, d, e, f } => {
                let mut c = c.clone();
                c.push(0.0);
                let mut e = e.clone();
                e.push(-1.0);
                Constraint::Quad { c, d: *d, e, f: *f }
            }
        }
    }
}

/// Concave objective: value, gradient and Hessian diagonal, or `None`
/// outside the domain.
pub type Objective<'a> = dyn Fn(&[f64]) -> Option<(f64, Vec<f64>, Vec<f64>)> + 'a;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BarrierOptions {
    /// Target duality gap m/t.
    pub gap: f64,
    pub mu: f64,
    pub t0: f64,
    pub max_newton: usize,
}

impl Default for BarrierOptions {
    fn default() -> Self {
        Self { gap: 1e-9, mu: 20.0, t0: 1.0, max_newton: 200 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BarrierResult {
    pub y: Vec<f64>,
    pub objective: f64,
    /// Final m/t.
    pub gap: f64,
    pub newton_steps: usize,
    /// False when a centering step hit its iteration cap.
    pub converged: bool,
}

/// Searches for y with every g_i(y) < 0, starting from `y0`. Returns
/// `Ok(None)` when the smallest achievable max g_i is not negative.
pub fn phase_one(constraints: &[Constraint], y0: &[f64]) -> Result<Option<Vec<f64>>> {
    let worst = constraints.iter().map(|c| c.value(y0)).fold(f64::NEG_INFINITY, f64::max);
    if worst < 0.0 {
        return Ok(Some(y0.to_vec()));
    }
    let n = y0.len();
    let lifted: Vec<Constraint> = constraints.iter().map(Constraint::with_slack).collect();
    let mut y = y0.to_vec();
    y.push(worst + 1.0);
    let obj = move |v: &[f64]| {
        let mut g = vec![0.0; n + 1];
        g[n] = -1.0;
        Some((-v[n], g, vec![0.0; n + 1]))
    };
    // Minimizing s; stop as soon as s < 0.
    let stop = |v: &[f64]| v[n] < 0.0;
    let opts = BarrierOptions { gap: 1e-10, ..Default::default() };
    let res = run(&obj, &lifted, y, &opts, Some(&stop))?;
    if res.y[n] < 0.0 {
        let y: Vec<f64> = res.y[..n].to_vec();
        if constraints.iter().all(|c| c.value(&y) < 0.0) {
            return Ok(Some(y));
        }
    }
    Ok(None)
}

/// Maximizes `f` from a strictly feasible `y0`.
pub fn maximize(f: &Objective, constraints: &[Constraint], y0: &[f64], opts: &BarrierOptions) -> Result<BarrierResult> {
    if let Some(i) = constraints.iter().position(|c| !(c.value(y0) < 0.0)) {
        return Err(Error::Contract(format!("barrier start violates constraint {i} ({:e})", constraints[i].value(y0))));
    }
    if f(y0).is_none() {
        return Err(Error::Contract("barrier start outside the objective domain".into()));
    }
    run(f, constraints, y0.to_vec(), opts, None)
}

type Stop<'a> = dyn Fn(&[f64]) -> bool + 'a;

fn run(f: &Objective, cons: &[Constraint], mut y: Vec<f64>, opts: &BarrierOptions, stop: Option<&Stop>) -> Result<BarrierResult> {
    let m = cons.len().max(1) as f64;
    let n = y.len();
    let mut t = opts.t0;
    let mut steps = 0;
    let mut converged = true;
    // φ(y) = −t f(y) − Σ ln(−g_i(y)); +∞ outside the domain.
    let phi = |y: &[f64], t: f64| -> f64 {
        let Some((fv, _, _)) = f(y) else { return f64::INFINITY };
        let mut s = -t * fv;
        for c in cons {
            let g = c.value(y);
            if !(g < 0.0) {
                return f64::INFINITY;
            }
            s -= (-g).ln();
        }
        s
    };
    loop {
        let mut inner = 0;
        loop {
            if let Some(stop) = stop {
                if stop(&y) {
                    let objective = f(&y).map(|v| v.0).unwrap_or(f64::NEG_INFINITY);
                    return Ok(BarrierResult { y, objective, gap: m / t, newton_steps: steps, converged });
                }
            }
            let (_, fg, fh) = f(&y).ok_or_else(|| Error::Solver("barrier iterate left the objective domain".into()))?;
            let mut grad = DVector::from_iterator(n, fg.iter().map(|g| -t * g));
            let mut hess = DMatrix::from_fn(n, n, |i, j| if i == j { (-t * fh[i]).max(0.0) } else { 0.0 });
            for c in cons {
                let g = c.value(&y);
                let w = 1.0 / (-g);
                let cg = c.gradient(&y);
                for i in 0..n {
                    grad[i] += w * cg[i];
                    if cg[i] == 0.0 {
                        continue;
                    }
                    for j in 0..n {
                        hess[(i, j)] += w * w * cg[i] * cg[j];
                    }
                }
                c.add_hessian(w, &mut hess);
            }
            let dir = newton_direction(&hess, &grad)?;
            let decrement = -grad.dot(&dir);
            let base = phi(&y, t);
            // Below this the decrease is lost in the rounding of φ itself.
            if decrement / 2.0 <= 1e-12 + 1e-14 * base.abs() {
                break;
            }
            let mut step = 1.0;
            let mut moved = false;
            while step > 1e-14 {
                let cand: Vec<f64> = y.iter().zip(dir.iter()).map(|(a, d)| a + step * d).collect();
                let v = phi(&cand, t);
                if v <= base - 0.25 * step * decrement {
                    moved = v < base;
                    y = cand;
                    break;
                }
                step *= 0.5;
            }
            steps += 1;
            inner += 1;
            if !moved {
                break;
            }
            if inner >= opts.max_newton {
                converged = false;
                break;
            }
        }
        if m / t <= opts.gap {
            break;
        }
        t *= opts.mu;
    }
    let objective = f(&y).map(|v| v.0).unwrap_or(f64::NEG_INFINITY);
    Ok(BarrierResult { y, objective, gap: m / t, newton_steps: steps, converged })
}

/// Solves H d = −g, adding diagonal regularization when H is not
/// numerically positive definite.
fn newton_direction(h: &DMatrix<f64>, g: &DVector<f64>) -> Result<DVector<f64>> {
    let scale = h.diagonal().iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
    let mut reg = 0.0;
    for _ in 0..30 {
        let mut hr = h.clone();
        for i in 0..hr.nrows() {
            hr[(i, i)] += reg;
        }
        if let Some(ch) = hr.cholesky() {
            return Ok(-ch.solve(g));
        }
        reg = if reg == 0.0 { 1e-14 * scale } else { reg * 10.0 };
    }
    Err(Error::Solver("Newton system is not positive definite".into()))
}
