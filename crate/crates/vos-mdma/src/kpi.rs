//! Achieved KPIs of the three service types.
//!
//! Communication: SIC-decoded SINR, rate and latency. Positioning: Fisher
//! information of the OFDM echo and the resulting CRB numerators, scaled by
//! the positioning SNR. Sensing: detection probability of the energy
//! detector with a chi-square test statistic of two degrees of freedom.

use std::f64::consts::PI;

use nalgebra::{Matrix4, Matrix5, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::assignment::{Assignment, PowerAlloc, SinrVector};
use crate::error::{Error, Result};
use crate::scenario::{RbGrid, Scenario, ServiceType, SystemParams};

/// Condition number above which the Fisher information counts as singular.
pub const FIM_COND_LIMIT: f64 = 1e12;

/// z-independent CRB numerators: angle (rad²), distance (m²), velocity ((m/s)²).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrbConstants {
    pub angle: f64,
    pub distance: f64,
    pub velocity: f64,
}

/// log2(1 + z).
pub fn comm_rate(z: f64) -> f64 {
    (1.0 + z).log2()
}

/// Latency n·L·T of the 1-based sub-frame `n`.
pub fn latency(n: usize, grid: &RbGrid) -> Result<f64> {
    if n == 0 || n > grid.sub_frames {
        return Err(Error::InvalidQuery(format!("sub-frame {n} outside 1..={}", grid.sub_frames)));
    }
    Ok(n as f64 * grid.symbols as f64 * grid.symbol_duration)
}

fn power_sums(count: usize) -> (f64, f64) {
    let c = count as f64;
    (c * (c - 1.0) / 2.0, (c - 1.0) * c * (2.0 * c - 1.0) / 6.0)
}

/// Fisher information over (θ, τ, ν, ρ, φ) accumulated over antennas,
/// subcarriers and symbols, using closed-form index sums.
pub fn fim_closed_form(theta: f64, rho: f64, subcarriers: usize, symbols: usize, antennas: usize) -> Matrix5<f64> {
    let (b, l, lt) = (subcarriers as f64, symbols as f64, antennas as f64);
    let (sb, sb2) = power_sums(subcarriers);
    let (sl, sl2) = power_sums(symbols);
    let (st, st2) = power_sums(antennas);
    let c = theta.cos();
    let r2 = rho * rho;
    let mut j = Matrix5::zeros();
    j[(0, 0)] = c * c * st2 * b * l;
    j[(0, 1)] = c * st * sb * l;
    j[(0, 2)] = c * st * b * sl;
    j[(0, 4)] = c * st * b * l;
    j[(1, 1)] = sb2 * l * lt;
    j[(1, 2)] = sb * sl * lt;
    j[(1, 4)] = sb * l * lt;
    j[(2, 2)] = sl2 * b * lt;
    j[(2, 4)] = sl * b * lt;
    j[(4, 4)] = b * l * lt;
    for r in 0..5 {
        for cc in 0..r {
            j[(r, cc)] = j[(cc, r)];
        }
    }
    j *= r2;
    // The amplitude entry is 1/ρ² per term before the ρ² scaling.
    j[(3, 3)] = b * l * lt;
    j
}

/// Fisher information of positioning user `k` on RB (m, n).
pub fn fim(k: usize, m: usize, _n: usize, sc: &Scenario) -> Result<Matrix5<f64>> {
    let u = &sc.users[k];
    if u.service != ServiceType::Pos {
        return Err(Error::InvalidQuery(format!("user {k} is not a positioning user")));
    }
    Ok(fim_closed_form(u.angle, sc.rho(k, m), sc.grid.subcarriers, sc.grid.symbols, sc.params.antennas))
}

const PARAM_NAMES: [&str; 5] = ["angle", "delay (distance)", "Doppler (velocity)", "amplitude", "phase"];

/// Diagonal entries 1–3 of J⁻¹ for the ρ-free template (ρ = 1).
///
/// The amplitude row and column are decoupled, so the inverse is taken on
/// the 4×4 block over (θ, τ, ν, φ). Working without ρ keeps the condition
/// number meaningful when ρ² is tiny.
fn inverse_diag(theta: f64, grid: &RbGrid, params: &SystemParams) -> Result<[f64; 3]> {
    let t = fim_closed_form(theta, 1.0, grid.subcarriers, grid.symbols, params.antennas);
    let idx = [0usize, 1, 2, 4];
    let block = Matrix4::from_fn(|r, c| t[(idx[r], idx[c])]);
    let eig = SymmetricEigen::new(block);
    let (mut lo, mut lo_i, mut hi) = (f64::INFINITY, 0, 0.0f64);
    for (i, &e) in eig.eigenvalues.iter().enumerate() {
        if e < lo {
            lo = e;
            lo_i = i;
        }
        hi = hi.max(e.abs());
    }
    let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(cond <= FIM_COND_LIMIT) {
        let v = eig.eigenvectors.column(lo_i);
        let mut best = 0;
        for i in 1..4 {
            if v[i].abs() > v[best].abs() {
                best = i;
            }
        }
        return Err(Error::SingularFim { parameter: PARAM_NAMES[idx[best]], cond });
    }
    let inv = block
        .try_inverse()
        .ok_or(Error::SingularFim { parameter: PARAM_NAMES[0], cond: f64::INFINITY })?;
    Ok([inv[(0, 0)], inv[(1, 1)], inv[(2, 2)]])
}

/// CRB numerators for a target at angle `theta` with attenuation `rho` on
/// 0-based sub-band `m`.
pub fn crb_from_geometry(theta: f64, rho: f64, m: usize, grid: &RbGrid, params: &SystemParams) -> Result<CrbConstants> {
    let d = inverse_diag(theta, grid, params)?;
    let r2 = rho * rho;
    let c = params.speed_of_light;
    let fm = grid.freq(m);
    Ok(CrbConstants {
        angle: 0.5 * d[0] / r2,
        distance: c * c / (32.0 * (PI * grid.subcarrier_spacing).powi(2)) * d[1] / r2,
        velocity: c * c / (32.0 * (PI * grid.symbol_duration * fm).powi(2)) * d[2] / r2,
    })
}

/// CRB numerators of positioning user `k` on RB (m, n).
pub fn crb_constants(k: usize, m: usize, _n: usize, sc: &Scenario) -> Result<CrbConstants> {
    let u = &sc.users[k];
    if u.service != ServiceType::Pos {
        return Err(Error::InvalidQuery(format!("user {k} is not a positioning user")));
    }
    crb_from_geometry(u.angle, sc.rho(k, m), m, &sc.grid, &sc.params)
}

/// CRBs I/z; an infinite bound when z = 0.
pub fn pos_crb(z: f64, c: &CrbConstants) -> (f64, f64, f64) {
    if z <= 0.0 {
        return (f64::INFINITY, f64::INFINITY, f64::INFINITY);
    }
    (c.angle / z, c.distance / z, c.velocity / z)
}

/// Chi-square CDF with two degrees of freedom.
pub fn chi2_cdf(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        -(-x / 2.0).exp_m1()
    }
}

/// Inverse of [`chi2_cdf`].
pub fn chi2_inv(p: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidInput(format!("chi-square quantile needs p in [0,1), got {p}")));
    }
    Ok(-2.0 * (-p).ln_1p())
}

/// Detection threshold F⁻¹(1 − P_FA) = −2 ln P_FA.
pub fn detection_threshold(pfa: f64) -> f64 {
    -2.0 * pfa.ln()
}

/// 1 − F(F⁻¹(1 − P_FA)/(z + 1)).
pub fn detect_prob(z: f64, pfa: f64) -> f64 {
    // 1 − F(x) = exp(−x/2), and at z = 0 this is exp(ln P_FA) = P_FA.
    if z == 0.0 {
        return pfa;
    }
    (pfa.ln() / (z + 1.0)).exp()
}

fn assigned_rb(a: &Assignment, k: usize, m: usize, n: usize) -> Result<()> {
    if a.a(k, m, n) {
        Ok(())
    } else {
        Err(Error::InvalidQuery(format!("user {k} is not assigned to RB ({m},{n})")))
    }
}

/// SIC SINR of communication user `k` on RB (m, n): the worst decoding SINR
/// over the co-assigned communication users that are nearer than or equal to k.
pub fn comm_sinr(a: &Assignment, p: &PowerAlloc, m: usize, n: usize, k: usize, sc: &Scenario) -> Result<f64> {
    assigned_rb(a, k, m, n)?;
    if sc.service(k) != ServiceType::Comm {
        return Err(Error::InvalidQuery(format!("user {k} is not a communication user")));
    }
    let comm: Vec<usize> = a.users_in(m, n).into_iter().filter(|&j| sc.service(j) == ServiceType::Comm).collect();
    let mut z = f64::INFINITY;
    for &q in comm.iter().filter(|&&q| q <= k) {
        let interference: f64 = comm.iter().filter(|&&j| j < k).map(|&j| p.p[j] * sc.chi_c(q, j, m, n)).sum();
        let g = p.p[k] * sc.chi_c(q, k, m, n) / (interference + sc.users[q].noise);
        z = z.min(g);
    }
    Ok(z)
}

/// Positioning SNR: every BS signal on the RB illuminates the target.
pub fn pos_snr(a: &Assignment, p: &PowerAlloc, m: usize, n: usize, k: usize, sc: &Scenario) -> Result<f64> {
    assigned_rb(a, k, m, n)?;
    if sc.service(k) != ServiceType::Pos {
        return Err(Error::InvalidQuery(format!("user {k} is not a positioning user")));
    }
    let s: f64 = a
        .users_in(m, n)
        .into_iter()
        .filter(|&j| sc.bs_powered(j))
        .map(|j| p.p[j] * sc.chi_p(k, j, m, n))
        .sum();
    Ok(s / sc.params.bs_noise)
}

/// Post-matched-filter SNR of sensing user `k`; BS signals on the RB act as
/// interference, other sensing probes are orthogonal.
pub fn sense_snr(a: &Assignment, p: &PowerAlloc, m: usize, n: usize, k: usize, sc: &Scenario) -> Result<f64> {
    assigned_rb(a, k, m, n)?;
    if sc.service(k) != ServiceType::Sense {
        return Err(Error::InvalidQuery(format!("user {k} is not a sensing user")));
    }
    let u = &sc.users[k];
    let interference: f64 = a
        .users_in(m, n)
        .into_iter()
        .filter(|&j| sc.bs_powered(j))
        .map(|j| p.p[j] * sc.chi_s(k, j, m, n))
        .sum();
    let echo = (sc.grid.subcarriers * sc.grid.symbols) as f64 * u.sensing_power * sc.lambda(k, m);
    Ok(echo / (interference + u.noise))
}

/// SNR of every assigned user under powers `p`.
pub fn sinr_from_powers(a: &Assignment, p: &PowerAlloc, sc: &Scenario) -> Result<SinrVector> {
    let mut z = SinrVector::zeros(sc.num_users());
    for k in 0..sc.num_users() {
        if let Some((m, n)) = a.rb_of(k) {
            z.z[k] = match sc.service(k) {
                ServiceType::Comm => comm_sinr(a, p, m, n, k, sc)?,
                ServiceType::Pos => pos_snr(a, p, m, n, k, sc)?,
                ServiceType::Sense => sense_snr(a, p, m, n, k, sc)?,
            };
        }
    }
    Ok(z)
}

/// Achieved KPI values of user `k` on RB (m, n) given its SNR `z`, in the
/// order of the user's KPI list.
pub fn kpis_from_z(sc: &Scenario, k: usize, m: usize, n: usize, z: f64) -> Vec<f64> {
    let lat = sc.latency(n);
    let u = &sc.users[k];
    match u.service {
        ServiceType::Comm => vec![comm_rate(z), lat],
        ServiceType::Pos => {
            let c = sc.crb(k, m).expect("positioning user carries CRB constants");
            let (a, d, v) = pos_crb(z, &c);
            vec![a, d, v, lat]
        }
        ServiceType::Sense => vec![detect_prob(z, u.false_alarm), lat],
    }
}

/// Achieved KPI as a function of the SNR, with first and second derivatives.
/// `slot` is the position in the user's KPI list and must not be latency.
pub fn kpi_of_z_derivs(sc: &Scenario, k: usize, slot: usize, m: usize, z: f64) -> (f64, f64, f64) {
    let u = &sc.users[k];
    match u.service {
        ServiceType::Comm => {
            let ln2 = std::f64::consts::LN_2;
            ((1.0 + z).log2(), 1.0 / ((1.0 + z) * ln2), -1.0 / ((1.0 + z).powi(2) * ln2))
        }
        ServiceType::Pos => {
            let c = sc.crb(k, m).expect("positioning user carries CRB constants");
            let i = [c.angle, c.distance, c.velocity][slot];
            (i / z, -i / (z * z), 2.0 * i / (z * z * z))
        }
        ServiceType::Sense => {
            let w = detection_threshold(u.false_alarm);
            let q = detect_prob(z, u.false_alarm);
            let s = z + 1.0;
            (q, q * w / (2.0 * s * s), q * (w * w / (4.0 * s.powi(4)) - w / s.powi(3)))
        }
    }
}
