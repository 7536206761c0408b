//! Elastic value normalization, per-user VoS and the log-objective.
//!
//! A KPI value Q is mapped to [0, 1] by a sigmoid segment between the hard
//! threshold βQ̃ (or Q̃/β for smaller-is-better KPIs) and the target Q̃, raised
//! to the slope elasticity α. The closed forms are evaluated through
//! `expm1` so that small α does not lose precision to cancellation.

use serde::{Deserialize, Serialize};

use crate::assignment::{Assignment, SinrVector};
use crate::error::{Error, Result};
use crate::kpi;
use crate::scenario::{Direction, KpiSpec, Scenario, ServiceType};

/// Finite stand-in for log 0 inside the solvers.
pub const LOG_FLOOR: f64 = -1e6;

/// log of a value in [0, 1]; `BelowRange` stands for log 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum LogValue {
    Finite(f64),
    BelowRange,
}

impl LogValue {
    pub fn is_below_range(self) -> bool {
        matches!(self, LogValue::BelowRange)
    }

    /// The finite value, with `BelowRange` mapped to [`LOG_FLOOR`].
    pub fn floored(self) -> f64 {
        match self {
            LogValue::Finite(v) => v,
            LogValue::BelowRange => LOG_FLOOR,
        }
    }

    pub fn add(self, other: LogValue) -> LogValue {
        match (self, other) {
            (LogValue::Finite(a), LogValue::Finite(b)) => LogValue::Finite(a + b),
            _ => LogValue::BelowRange,
        }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Position of Q on the normalization segment: (u, t, span) with u the
/// distance from the hard threshold in α-scaled units, t the sigmoid
/// argument and span the full segment length in the same units.
fn segment(q: f64, spec: &KpiSpec) -> (f64, f64, f64) {
    let x = q / spec.target;
    let a = spec.alpha;
    match spec.direction {
        Direction::High => (a * (x - spec.beta), a * (x - 1.0), a * (1.0 - spec.beta)),
        Direction::Low => (a * (1.0 / spec.beta - x), -a * (x - 1.0), a * (1.0 / spec.beta - 1.0)),
    }
}

enum Branch {
    Saturated,
    Zero,
    Middle,
}

fn branch(q: f64, spec: &KpiSpec) -> Branch {
    let t = spec.target;
    match spec.direction {
        Direction::High => {
            if q > t {
                Branch::Saturated
            } else if q <= spec.beta * t {
                Branch::Zero
            } else {
                Branch::Middle
            }
        }
        Direction::Low => {
            if q < t {
                Branch::Saturated
            } else if q >= t / spec.beta {
                Branch::Zero
            } else {
                Branch::Middle
            }
        }
    }
}

/// ln of the bracket (1/A)(σ(·) − B) on the middle branch.
fn log_ratio(q: f64, spec: &KpiSpec) -> f64 {
    let (u, t, span) = segment(q, spec);
    if u <= 0.0 {
        return f64::NEG_INFINITY;
    }
    std::f64::consts::LN_2 + u.exp_m1().ln() - softplus(t) - span.exp_m1().ln()
}

/// Normalized value of KPI `q` under `spec`.
pub fn normalize(q: f64, spec: &KpiSpec) -> f64 {
    match branch(q, spec) {
        Branch::Saturated => 1.0,
        Branch::Zero => 0.0,
        Branch::Middle => {
            let (u, t, span) = segment(q, spec);
            if u <= 0.0 {
                return 0.0;
            }
            // 2·expm1(u) / ((1 + e^t)·expm1(span)) equals (1/A)(σ − B).
            let r = 2.0 * u.exp_m1() / ((1.0 + t.exp()) * span.exp_m1());
            r.min(1.0).powf(spec.alpha)
        }
    }
}

/// ln of [`normalize`].
pub fn log_normalize(q: f64, spec: &KpiSpec) -> LogValue {
    match branch(q, spec) {
        Branch::Saturated => LogValue::Finite(0.0),
        Branch::Zero => LogValue::BelowRange,
        Branch::Middle => {
            let l = log_ratio(q, spec);
            if l == f64::NEG_INFINITY {
                LogValue::BelowRange
            } else {
                LogValue::Finite((spec.alpha * l).min(0.0))
            }
        }
    }
}

/// ln V and its first two derivatives with respect to Q; `None` when V = 0.
/// On the saturated branch all three are zero.
pub fn log_normalize_derivs(q: f64, spec: &KpiSpec) -> Option<(f64, f64, f64)> {
    match branch(q, spec) {
        Branch::Saturated => Some((0.0, 0.0, 0.0)),
        Branch::Zero => None,
        Branch::Middle => {
            let (u, t, _) = segment(q, spec);
            if u <= 0.0 {
                return None;
            }
            let a = spec.alpha;
            let v = (a * log_ratio(q, spec)).min(0.0);
            // d/du ln expm1(u) = 1/(1 − e^{−u}); d²/du² = −e^{−u}/(1 − e^{−u})².
            let g = -1.0 / (-u).exp_m1();
            let g2 = -(-u).exp() * g * g;
            let s = sigmoid(t);
            let sign = match spec.direction {
                Direction::High => 1.0,
                Direction::Low => -1.0,
            };
            let inv_t = 1.0 / spec.target;
            // u and t are both linear in Q with slopes ±α/Q̃.
            let d1 = a * (a * g - a * s) * sign * inv_t;
            let d2 = a * (a * a * g2 - a * a * s * (1.0 - s)) * inv_t * inv_t;
            Some((v, d1, d2))
        }
    }
}

/// Weighted log term w·ln V with its floored surrogate. Zero weight is
/// neutral regardless of the value.
pub fn weighted_log(q: f64, spec: &KpiSpec) -> (f64, LogValue) {
    if spec.weight == 0.0 {
        return (0.0, LogValue::Finite(0.0));
    }
    match log_normalize(q, spec) {
        LogValue::Finite(l) => {
            let v = spec.weight * l;
            (v.max(LOG_FLOOR), LogValue::Finite(v))
        }
        LogValue::BelowRange => (LOG_FLOOR, LogValue::BelowRange),
    }
}

/// ∏ value_i^{w_i} with 0^0 = 1.
pub fn user_vos(values: &[(f64, f64)]) -> f64 {
    let mut prod = 1.0;
    for &(v, w) in values {
        if w == 0.0 {
            continue;
        }
        if v == 0.0 {
            return 0.0;
        }
        prod *= v.powf(w);
    }
    prod
}

/// Indices of the SNR-driven KPIs of a service type.
pub fn snr_kpi_slots(s: ServiceType) -> &'static [usize] {
    match s {
        ServiceType::Comm => &[0],
        ServiceType::Pos => &[0, 1, 2],
        ServiceType::Sense => &[0],
    }
}

/// Smallest SNR at which the KPI in `slot` reaches `level`·Q̃ (high) or
/// Q̃/`level` (low). `level` = β gives the zero-value threshold, 1 gives
/// the target.
fn snr_for_level(sc: &Scenario, k: usize, slot: usize, m: usize, level: f64) -> Result<f64> {
    let spec = sc.kpi_spec(k, slot, m);
    let u = &sc.users[k];
    Ok(match u.service {
        ServiceType::Comm => 2f64.powf(level * spec.target) - 1.0,
        ServiceType::Pos => {
            let c = sc.crb(k, m)?;
            let i = [c.angle, c.distance, c.velocity][slot];
            level * i / spec.target
        }
        ServiceType::Sense => {
            let p = level * spec.target;
            if p >= 1.0 {
                if level < 1.0 {
                    return Err(Error::InvalidSpec(format!(
                        "sensing user {k}: β·Q̃ = {p} must stay below 1"
                    )));
                }
                return Ok(f64::INFINITY);
            }
            let w = kpi::detection_threshold(u.false_alarm);
            (w / kpi::chi2_inv(1.0 - p)? - 1.0).max(0.0)
        }
    })
}

/// Zero-value SNR threshold of user `k` on sub-band `m`; 0 when unassigned.
pub fn z_min(sc: &Scenario, k: usize, m: usize, assigned: bool) -> Result<f64> {
    if !assigned {
        return Ok(0.0);
    }
    let mut t: f64 = 0.0;
    for &slot in snr_kpi_slots(sc.service(k)) {
        let beta = sc.kpi_spec(k, slot, m).beta;
        t = t.max(snr_for_level(sc, k, slot, m, beta)?);
    }
    Ok(t)
}

/// Threshold and saturation SNR counting only KPIs with positive weight.
/// Beyond the saturation point every weighted SNR-driven KPI meets its target.
pub fn weighted_snr_range(sc: &Scenario, k: usize, m: usize) -> Result<(f64, f64)> {
    let (mut lo, mut hi): (f64, f64) = (0.0, 0.0);
    for &slot in snr_kpi_slots(sc.service(k)) {
        let spec = sc.kpi_spec(k, slot, m);
        if spec.weight == 0.0 {
            continue;
        }
        lo = lo.max(snr_for_level(sc, k, slot, m, spec.beta)?);
        hi = hi.max(snr_for_level(sc, k, slot, m, 1.0)?);
    }
    Ok((lo, hi))
}

/// Σ over the weighted SNR-driven KPIs of w·ln V(Q(z)) for user `k` on
/// sub-band `m`, with first and second derivatives in z; `None` when any
/// of those KPIs is below range.
pub fn user_snr_log_derivs(sc: &Scenario, k: usize, m: usize, z: f64) -> Option<(f64, f64, f64)> {
    let (mut v, mut d1, mut d2) = (0.0, 0.0, 0.0);
    for &slot in snr_kpi_slots(sc.service(k)) {
        let spec = sc.kpi_spec(k, slot, m);
        if spec.weight == 0.0 {
            continue;
        }
        let (q, q1, q2) = kpi::kpi_of_z_derivs(sc, k, slot, m, z);
        let (l, l1, l2) = log_normalize_derivs(q, &spec)?;
        v += spec.weight * l;
        d1 += spec.weight * l1 * q1;
        d2 += spec.weight * (l2 * q1 * q1 + l1 * q2);
    }
    Some((v, d1, d2))
}

/// Weighted log contribution of user `k` on RB (m, n) at SNR `z`.
pub fn user_log_terms(sc: &Scenario, k: usize, m: usize, n: usize, z: f64) -> (f64, LogValue) {
    let q = kpi::kpis_from_z(sc, k, m, n, z);
    let mut floored = 0.0;
    let mut exact = LogValue::Finite(0.0);
    for (i, qi) in q.iter().enumerate() {
        let (f, e) = weighted_log(*qi, &sc.kpi_spec(k, i, m));
        floored += f;
        exact = exact.add(e);
    }
    (floored, exact)
}

/// Floored and exact log-objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub floored: f64,
    pub exact: LogValue,
}

/// Σ over assigned services of Σ_i w_i ln V_i.
pub fn objective_l(a: &Assignment, z: &SinrVector, sc: &Scenario) -> Result<Objective> {
    a.validate(sc, false)?;
    if z.z.len() != sc.num_users() {
        return Err(Error::ConstraintViolation("SNR vector length does not match users".into()));
    }
    let mut floored = 0.0;
    let mut exact = LogValue::Finite(0.0);
    for k in 0..sc.num_users() {
        if let Some((m, n)) = a.rb_of(k) {
            let (f, e) = user_log_terms(sc, k, m, n, z.z[k]);
            floored += f;
            exact = exact.add(e);
        }
    }
    Ok(Objective { floored, exact })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(direction: Direction, alpha: f64, beta: f64) -> KpiSpec {
        KpiSpec::new(direction, 2.0, alpha, beta, 1.0)
    }

    #[test]
    fn high_breakpoints() {
        let s = spec(Direction::High, 0.3, 0.3);
        assert_eq!(normalize(2.0, &s), 1.0);
        assert_eq!(normalize(0.6, &s), 0.0);
        assert_eq!(normalize(0.5, &s), 0.0);
        assert_eq!(normalize(3.0, &s), 1.0);
    }

    #[test]
    fn low_breakpoints() {
        let s = spec(Direction::Low, 0.4, 0.25);
        assert_eq!(normalize(8.0, &s), 0.0);
        assert_eq!(normalize(1.0, &s), 1.0);
        assert_eq!(normalize(2.0, &s), 1.0);
        assert_eq!(normalize(9.0, &s), 0.0);
    }

    #[test]
    fn high_precision_reference() {
        // 40-digit evaluation of the closed form at Q = 0.7 Q̃, α = β = 0.3.
        let s = KpiSpec::new(Direction::High, 1.0, 0.3, 0.3, 1.0);
        assert!((normalize(0.7, &s) - 0.844_881_031_152_345_8).abs() < 1e-15);
        // Low KPI at Q = 1.5 Q̃, α = 0.5, β = 0.4.
        let l = KpiSpec::new(Direction::Low, 1.0, 0.5, 0.4, 1.0);
        assert!((normalize(1.5, &l) - 0.808_079_000_840_681_0).abs() < 1e-15);
    }

    #[test]
    fn matches_textbook_form() {
        // Direct sigmoid form with explicit A and B constants.
        for &(a, b, x) in &[(0.5, 0.2, 0.5), (2.0, 0.5, 0.8), (1.0, 0.1, 0.3)] {
            let s = KpiSpec::new(Direction::High, 1.0, a, b, 1.0);
            let bh = 1.0 / (1.0 + (-a * (b - 1.0)).exp());
            let ah = 0.5 - bh;
            let direct = ((1.0 / ah) * (1.0 / (1.0 + (-a * (x - 1.0)).exp()) - bh)).powf(a);
            assert!((normalize(x, &s) - direct).abs() < 1e-12);
            let sl = KpiSpec::new(Direction::Low, 1.0, a, b, 1.0);
            let xl = 1.0 + (1.0 / b - 1.0) * x;
            let bl = 1.0 / (1.0 + (a * (1.0 / b - 1.0)).exp());
            let al = 0.5 - bl;
            let direct = ((1.0 / al) * (1.0 / (1.0 + (a * (xl - 1.0)).exp()) - bl)).powf(a);
            assert!((normalize(xl, &sl) - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn log_values_and_sentinel() {
        let s = spec(Direction::High, 0.3, 0.3);
        assert_eq!(log_normalize(2.5, &s), LogValue::Finite(0.0));
        assert_eq!(log_normalize(0.1, &s), LogValue::BelowRange);
        let LogValue::Finite(v) = log_normalize(1.2, &s) else { panic!() };
        assert!((v - normalize(1.2, &s).ln()).abs() < 1e-13);
    }

    #[test]
    fn continuity_at_breakpoints() {
        for dir in [Direction::High, Direction::Low] {
            let s = spec(dir, 0.7, 0.35);
            let pts = match dir {
                Direction::High => [0.7, 2.0],
                Direction::Low => [2.0, 2.0 / 0.35],
            };
            for p in pts {
                let lo = normalize(p * (1.0 - 1e-13), &s);
                let hi = normalize(p * (1.0 + 1e-13), &s);
                assert!((lo - hi).abs() < 1e-9, "{dir:?} at {p}: {lo} vs {hi}");
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for dir in [Direction::High, Direction::Low] {
            let s = spec(dir, 0.8, 0.3);
            let qs: &[f64] = match dir {
                Direction::High => &[0.8, 1.2, 1.9],
                Direction::Low => &[2.5, 4.0, 6.0],
            };
            for &q in qs {
                let h = 1e-5;
                let (v, d1, d2) = log_normalize_derivs(q, &s).unwrap();
                let f = |x: f64| log_normalize(x, &s).floored();
                assert!((v - f(q)).abs() < 1e-14);
                let fd1 = (f(q + h) - f(q - h)) / (2.0 * h);
                let fd2 = (f(q + h) - 2.0 * f(q) + f(q - h)) / (h * h);
                assert!((d1 - fd1).abs() <= 1e-6 * d1.abs().max(1.0), "{dir:?} {q}: {d1} vs {fd1}");
                assert!((d2 - fd2).abs() <= 1e-3 * d2.abs().max(1.0), "{dir:?} {q}: {d2} vs {fd2}");
            }
        }
    }

    #[test]
    fn user_vos_examples() {
        assert_eq!(user_vos(&[(1.0, 0.3), (1.0, 2.0)]), 1.0);
        assert_eq!(user_vos(&[(0.0, 0.1), (1.0, 1.0)]), 0.0);
        assert_eq!(user_vos(&[(0.0, 0.0), (1.0, 1.0)]), 1.0);
        assert!((user_vos(&[(0.5, 1.0), (0.25, 0.5)]) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn weighted_log_uses_floor() {
        let s = KpiSpec::new(Direction::High, 2.0, 0.3, 0.3, 0.5);
        assert_eq!(weighted_log(0.1, &s), (LOG_FLOOR, LogValue::BelowRange));
        let z = KpiSpec { weight: 0.0, ..s };
        assert_eq!(weighted_log(0.1, &z), (0.0, LogValue::Finite(0.0)));
    }
}
