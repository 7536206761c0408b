//! One SCA step for a single sub-frame.
//!
//! Around a feasible anchor (x₀, z₀) the bilinear SNR constraints are
//! replaced by their convex restrictions from [`crate::cvxcore::dc`], and
//! the separable concave objective Σ w ln V(Q(z)) is maximized over the
//! SNRs of the active services and the normalized powers by the barrier
//! method. A service is active when its anchor SNR lies strictly above its
//! zero-value threshold and it has a non-degenerate weighted range; other
//! services keep their anchor SNR (slightly relaxed) as a fixed target, so
//! their constraints are linear in the powers.
//!
//! The returned objective is evaluated from the SNRs the new powers induce,
//! which dominate the optimized z, and is never below the anchor's.

use crate::cvxcore::barrier::{self, BarrierOptions, Constraint};
use crate::cvxcore::dc::{self, OwnSignal};
use crate::cvxcore::feasibility::SubframeModel;
use crate::error::{Error, Result};
use crate::scenario::ServiceType;
use crate::vosmetric;

/// Relative relaxation of fixed SNR targets so that a strict interior exists.
const FIXED_RELAX: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct P4Options {
    pub barrier: BarrierOptions,
    /// Tolerance of the anchor feasibility check.
    pub anchor_tol: f64,
}

impl Default for P4Options {
    fn default() -> Self {
        Self { barrier: BarrierOptions::default(), anchor_tol: 1e-9 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct P4Solution {
    /// Normalized powers x = p/P_max of the powered users.
    pub x: Vec<f64>,
    /// SNR per slot induced by `x`.
    pub z: Vec<f64>,
    /// Floored sub-frame objective at `z`.
    pub objective: f64,
    /// Objective of the anchor.
    pub anchor_objective: f64,
    /// Value of the convex restriction at its optimum, summed over the
    /// active services only. Equals the anchor objective when the
    /// restriction was skipped.
    pub restricted_objective: f64,
    /// Barrier duality gap of the convex restriction.
    pub gap: f64,
    /// False when the barrier hit an iteration cap; the best point is kept.
    pub converged: bool,
}

enum ZVar {
    Var(usize),
    Fixed(f64),
}

/// Checks that (x₀, z₀) satisfies the sub-frame constraints.
fn check_anchor(model: &SubframeModel, x0: &[f64], z0: &[f64], tol: f64) -> Result<()> {
    if x0.len() != model.powered.len() || z0.len() != model.sub.slots.len() {
        return Err(Error::Contract("anchor shape does not match the sub-frame".into()));
    }
    if x0.iter().any(|&x| x < -tol) || x0.iter().sum::<f64>() > 1.0 + tol {
        return Err(Error::Contract("anchor powers violate the budget or sign constraints".into()));
    }
    for r in model.fairness_rows() {
        let lhs: f64 = r.coef.iter().map(|(v, c)| c * x0[*v]).sum();
        let scale = r.coef.iter().map(|(v, c)| (c * x0[*v]).abs()).fold(0.0, f64::max);
        if lhs < -tol * scale.max(1e-300) {
            return Err(Error::Contract(format!("anchor violates {}", r.label)));
        }
    }
    let induced = model.induced_z(x0);
    for (i, (&z, &zi)) in z0.iter().zip(&induced).enumerate() {
        if z > zi * (1.0 + tol) + tol {
            return Err(Error::Contract(format!("anchor SNR {z} of slot {i} exceeds the induced {zi}")));
        }
    }
    Ok(())
}

/// Solves the convex restriction of the sub-frame problem around the anchor.
pub fn solve_p4(model: &SubframeModel, x0: &[f64], z0: &[f64], opts: &P4Options) -> Result<P4Solution> {
    check_anchor(model, x0, z0, opts.anchor_tol)?;
    let sc = model.sc;
    let slots = &model.sub.slots;
    let np = model.powered.len();
    let anchor_z = model.induced_z(x0);
    let anchor_objective = model.objective_at(&anchor_z);
    let fallback = |gap: f64, converged: bool| P4Solution {
        x: x0.to_vec(),
        z: anchor_z.clone(),
        objective: anchor_objective,
        anchor_objective,
        restricted_objective: anchor_objective,
        gap,
        converged,
    };
    if np == 0 {
        return Ok(fallback(0.0, true));
    }

    // Variable layout y = (x, z of active slots).
    let mut zvars = Vec::with_capacity(slots.len());
    let mut ranges = Vec::with_capacity(slots.len());
    let mut na = 0;
    for (i, &(k, m)) in slots.iter().enumerate() {
        let (lo, hi) = vosmetric::weighted_snr_range(sc, k, m)?;
        ranges.push((lo, hi));
        if hi > lo && z0[i] > lo {
            zvars.push(ZVar::Var(np + na));
            na += 1;
        } else {
            zvars.push(ZVar::Fixed(z0[i] * (1.0 - FIXED_RELAX)));
        }
    }
    let dim = np + na;
    let mut y0 = x0.to_vec();
    for (i, zv) in zvars.iter().enumerate() {
        if let ZVar::Var(_) = zv {
            y0.push(z0[i].min(ranges[i].1));
        }
    }

    let mut cons: Vec<Constraint> = Vec::new();
    let unit = |j: usize, c: f64| {
        let mut a = vec![0.0; dim];
        a[j] = c;
        a
    };
    for j in 0..np {
        cons.push(Constraint::Linear { a: unit(j, -1.0), b: 0.0 });
    }
    let mut budget = vec![0.0; dim];
    budget[..np].fill(1.0);
    cons.push(Constraint::Linear { a: budget, b: 1.0 });
    for r in model.fairness_rows() {
        let mut a = vec![0.0; dim];
        for (v, c) in r.coef {
            a[v] -= c;
        }
        cons.push(Constraint::Linear { a, b: 0.0 });
    }
    for (i, zv) in zvars.iter().enumerate() {
        let (lo, hi) = ranges[i];
        if let ZVar::Var(j) = *zv {
            cons.push(Constraint::Linear { a: unit(j, -1.0), b: -lo });
            if hi.is_finite() {
                cons.push(Constraint::Linear { a: unit(j, 1.0), b: hi });
            }
        }
        if sc.service(slots[i].0) == ServiceType::Pos {
            // z ≤ Σ g x.
            let mut a = vec![0.0; dim];
            for (v, g) in model.pos_gains(i) {
                a[v] -= g;
            }
            let b = match *zv {
                ZVar::Var(j) => {
                    a[j] += 1.0;
                    0.0
                }
                ZVar::Fixed(z) => -z,
            };
            if a.iter().any(|&c| c != 0.0) {
                cons.push(Constraint::Linear { a, b });
            }
        }
    }

    // Full coordinates v = (z per slot, x) of the anchor for the DC terms.
    let mut v_anchor: Vec<f64> = (0..slots.len()).map(|i| z0[i].min(ranges[i].1)).collect();
    v_anchor.extend_from_slice(x0);
    for term in dc::dc_terms(model) {
        let own_lin = |a: &mut [f64]| -> f64 {
            match term.own {
                OwnSignal::Power { var, gain } => {
                    a[var] -= gain;
                    0.0
                }
                OwnSignal::Constant(e) => e,
            }
        };
        match zvars[term.slot] {
            ZVar::Fixed(z) => {
                if z <= 0.0 {
                    continue;
                }
                // z·u(x) − own ≤ 0 is affine in x.
                let mut a = vec![0.0; dim];
                for &(j, c) in &term.coef {
                    a[j] += z * c;
                }
                let rhs = own_lin(&mut a) - z * term.noise;
                if a.iter().all(|&c| c == 0.0) {
                    if rhs <= 0.0 {
                        return Err(Error::Contract(format!("fixed target of {} is unattainable", term.label)));
                    }
                    continue;
                }
                cons.push(Constraint::Linear { a, b: rhs });
            }
            ZVar::Var(jz) if term.is_linear() => {
                let mut a = vec![0.0; dim];
                a[jz] = term.noise;
                let rhs = own_lin(&mut a);
                cons.push(Constraint::Linear { a, b: rhs });
            }
            ZVar::Var(_) => {
                let (c_full, d, e_full, f) = dc::convexified(&term, np, &v_anchor);
                let mut c = vec![0.0; dim];
                let mut e = vec![0.0; dim];
                let mut d = d;
                let mut f = f;
                for (idx, (&cv, &ev)) in c_full.iter().zip(&e_full).enumerate() {
                    let target = if idx >= slots.len() {
                        Some(idx - slots.len())
                    } else {
                        match zvars[idx] {
                            ZVar::Var(j) => Some(j),
                            ZVar::Fixed(z) => {
                                d += cv * z;
                                f += ev * z;
                                None
                            }
                        }
                    };
                    if let Some(j) = target {
                        c[j] += cv;
                        e[j] += ev;
                    }
                }
                cons.push(Constraint::Quad { c, d, e, f });
            }
        }
    }
    let cons: Vec<Constraint> = cons
        .into_iter()
        .map(|c| {
            let s = c.magnitude();
            if s > 0.0 { c.scaled(s) } else { c }
        })
        .collect();

    let active: Vec<(usize, usize, usize)> = zvars
        .iter()
        .enumerate()
        .filter_map(|(i, zv)| match zv {
            ZVar::Var(j) => Some((*j, slots[i].0, slots[i].1)),
            ZVar::Fixed(_) => None,
        })
        .collect();
    if active.is_empty() {
        return Ok(fallback(0.0, true));
    }
    let objective = |y: &[f64]| -> Option<(f64, Vec<f64>, Vec<f64>)> {
        let mut val = 0.0;
        let mut g = vec![0.0; dim];
        let mut h = vec![0.0; dim];
        for &(j, k, m) in &active {
            let (lo, _) = vosmetric::weighted_snr_range(sc, k, m).ok()?;
            if !(y[j] > lo) {
                return None;
            }
            let (v, d1, d2) = vosmetric::user_snr_log_derivs(sc, k, m, y[j])?;
            val += v;
            g[j] = d1;
            h[j] = d2;
        }
        Some((val, g, h))
    };

    let Some(start) = barrier::phase_one(&cons, &y0)? else {
        return Ok(fallback(0.0, true));
    };
    if objective(&start).is_none() {
        return Ok(fallback(0.0, true));
    }
    let res = barrier::maximize(&objective, &cons, &start, &opts.barrier)?;
    let x: Vec<f64> = res.y[..np].iter().map(|v| v.max(0.0)).collect();
    let z = model.induced_z(&x);
    let obj = model.objective_at(&z);
    if obj >= anchor_objective {
        Ok(P4Solution { x, z, objective: obj, anchor_objective, restricted_objective: res.objective, gap: res.gap, converged: res.converged })
    } else {
        Ok(P4Solution { restricted_objective: res.objective, ..fallback(res.gap, res.converged) })
    }
}
