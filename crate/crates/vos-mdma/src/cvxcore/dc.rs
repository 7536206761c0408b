//! Difference-of-convex form of the bilinear SNR constraints.
//!
//! Every communication decode pair and every sensing user imposes
//! z·(Σ + σ) ≤ (own signal), whose left side is the product of the SNR and
//! an affine function u of the powers. With Q^A = (z + u)² and
//! Q^B = (z − u)² the product is ¼(Q^A − Q^B), a difference of convex
//! quadratics; replacing Q^B by its tangent plane gives a convex restriction.
//!
//! Coordinates: v = (z per slot, x per powered user) with x = p/P_max and
//! SNRs in units of the receiver noise. Each term is further divided by a
//! row scale `s` (the largest interferer gain, at least 1) so that u stays
//! O(1); the physical product is s·z·u.

use crate::cvxcore::feasibility::SubframeModel;
use crate::scenario::ServiceType;

/// Right-hand side of a bilinear SNR constraint.
#[derive(Clone, Debug, PartialEq)]
pub enum OwnSignal {
    /// Scaled gain times the user's own power variable.
    Power { var: usize, gain: f64 },
    /// Scaled echo energy of a sensing user.
    Constant(f64),
}

/// One bilinear constraint s·z·u(x) ≤ s·own in scaled units.
#[derive(Clone, Debug, PartialEq)]
pub struct DcTerm {
    pub label: String,
    /// Slot whose SNR multiplies u.
    pub slot: usize,
    /// Coefficients of u on the power variables, already divided by `scale`.
    pub coef: Vec<(usize, f64)>,
    /// Noise part of u, 1/scale.
    pub noise: f64,
    pub own: OwnSignal,
    pub scale: f64,
}

/// Values and gradients (over the full v) of Q^A and Q^B of one term.
#[derive(Clone, Debug, PartialEq)]
pub struct DcValue {
    pub qa: f64,
    pub qb: f64,
    pub grad_a: Vec<f64>,
    pub grad_b: Vec<f64>,
}

/// DC terms of a sub-frame: communication pairs (Q^A, Q^B) and sensing
/// users (Q^C, Q^D, stored in the same layout).
#[derive(Clone, Debug, PartialEq)]
pub struct DcTerms {
    pub comm: Vec<DcValue>,
    pub sense: Vec<DcValue>,
}

impl DcTerm {
    /// Number of slots; z of slot i sits at v[i], x_j at v[slots + j].
    fn x_offset(v_len: usize, vars: usize) -> usize {
        v_len - vars
    }

    /// u(v) = Σ c_j x_j + noise.
    pub fn u(&self, v: &[f64], x_off: usize) -> f64 {
        self.noise + self.coef.iter().map(|(j, c)| c * v[x_off + j]).sum::<f64>()
    }

    /// Scaled own-signal value at v.
    pub fn own_value(&self, v: &[f64], x_off: usize) -> f64 {
        match self.own {
            OwnSignal::Power { var, gain } => gain * v[x_off + var],
            OwnSignal::Constant(e) => e,
        }
    }

    /// True when u does not depend on any power, so the constraint is linear.
    pub fn is_linear(&self) -> bool {
        self.coef.iter().all(|c| c.1 == 0.0)
    }

    fn eval(&self, v: &[f64], x_off: usize) -> DcValue {
        let z = v[self.slot];
        let u = self.u(v, x_off);
        let (sa, sb) = (z + u, z - u);
        let mut grad_a = vec![0.0; v.len()];
        let mut grad_b = vec![0.0; v.len()];
        grad_a[self.slot] = 2.0 * sa;
        grad_b[self.slot] = 2.0 * sb;
        for &(j, c) in &self.coef {
            grad_a[x_off + j] += 2.0 * sa * c;
            grad_b[x_off + j] -= 2.0 * sb * c;
        }
        DcValue { qa: sa * sa, qb: sb * sb, grad_a, grad_b }
    }
}

/// Builds the bilinear terms of every active constraint of the sub-frame.
pub fn dc_terms(model: &SubframeModel) -> Vec<DcTerm> {
    let mut out = Vec::new();
    for (i, &(k, _)) in model.sub.slots.iter().enumerate() {
        match model.sc.service(k) {
            ServiceType::Comm => {
                let var = model.var(i).expect("comm user has a power variable");
                for (q, (interf, g)) in model.comm_pairs(i).into_iter().enumerate() {
                    let scale = interf.iter().map(|c| c.1).fold(1.0, f64::max);
                    out.push(DcTerm {
                        label: format!("comm k={k} pair={q}"),
                        slot: i,
                        coef: interf.into_iter().map(|(j, c)| (j, c / scale)).collect(),
                        noise: 1.0 / scale,
                        own: OwnSignal::Power { var, gain: g / scale },
                        scale,
                    });
                }
            }
            ServiceType::Sense => {
                let (interf, echo) = model.sense_terms(i);
                let scale = interf.iter().map(|c| c.1).fold(1.0, f64::max);
                out.push(DcTerm {
                    label: format!("sense k={k}"),
                    slot: i,
                    coef: interf.into_iter().map(|(j, c)| (j, c / scale)).collect(),
                    noise: 1.0 / scale,
                    own: OwnSignal::Constant(echo / scale),
                    scale,
                });
            }
            ServiceType::Pos => {}
        }
    }
    out
}

/// Exact values and gradients of every term at v = (z, x).
pub fn dc_eval(model: &SubframeModel, terms: &[DcTerm], v: &[f64]) -> DcTerms {
    let x_off = DcTerm::x_offset(v.len(), model.powered.len());
    let mut out = DcTerms { comm: Vec::new(), sense: Vec::new() };
    for t in terms {
        let val = t.eval(v, x_off);
        match t.own {
            OwnSignal::Power { .. } => out.comm.push(val),
            OwnSignal::Constant(_) => out.sense.push(val),
        }
    }
    out
}

/// First-order expansion of Q^B (or Q^D) of `term` around `anchor`,
/// evaluated at `query`. Never exceeds the true value by convexity.
pub fn taylor_lower_bound(term: &DcTerm, vars: usize, anchor: &[f64], query: &[f64]) -> f64 {
    let x_off = DcTerm::x_offset(anchor.len(), vars);
    let a = term.eval(anchor, x_off);
    a.qb + a.grad_b.iter().zip(query.iter().zip(anchor)).map(|(g, (q, p))| g * (q - p)).sum::<f64>()
}

/// Convex restriction of `term` around `anchor`, as (c, d, e, f) with
/// g(v) = ¼(cᵀv + d)² + eᵀv + f over the full v, and g ≤ 0 implying the
/// bilinear constraint.
///
/// The product is rewritten as (z/t)·(t·u) with t² = z/u at the anchor so
/// that both factors are equal there. Q^A and Q^B are formed from the
/// rescaled factors; the linearization error ¼((Δz/t) − tΔu)² then weighs
/// relative moves of z and u alike instead of freezing the larger factor.
pub fn convexified(term: &DcTerm, vars: usize, anchor: &[f64]) -> (Vec<f64>, f64, Vec<f64>, f64) {
    let n = anchor.len();
    let x_off = DcTerm::x_offset(n, vars);
    let (z0, u0) = (anchor[term.slot], term.u(anchor, x_off));
    let t = if z0 > 0.0 && u0 > 0.0 { (z0 / u0).sqrt() } else { 1.0 };
    // a·v is z/t, b·v + b0 is t·u.
    let mut a = vec![0.0; n];
    a[term.slot] = 1.0 / t;
    let mut b = vec![0.0; n];
    for &(j, cj) in &term.coef {
        b[x_off + j] += t * cj;
    }
    let b0 = t * term.noise;
    let c: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
    let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
    let sb0 = diff.iter().zip(anchor).map(|(g, v)| g * v).sum::<f64>() - b0;
    // −¼ [s_B(a)² + 2 s_B(a) (a − b)·(v − anchor)]
    let mut e: Vec<f64> = diff.iter().map(|g| -0.5 * sb0 * g).collect();
    let mut f = -0.25 * sb0 * sb0 + 0.5 * sb0 * diff.iter().zip(anchor).map(|(g, v)| g * v).sum::<f64>();
    match term.own {
        OwnSignal::Power { var, gain } => e[x_off + var] -= gain,
        OwnSignal::Constant(v) => f -= v,
    }
    (c, b0, e, f)
}
