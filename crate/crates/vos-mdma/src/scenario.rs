//! Problem instances: users, resource grid, system parameters and the
//! precomputed channel-gain coefficients every KPI formula reads.
//!
//! A [`Scenario`] is frozen once built. Global user indices are 0-based in
//! code (the `id` field carries the 1-based label) and follow the block order
//! communication, positioning, sensing. Communication users are sorted by
//! distance so that nearer users carry smaller indices, which is the
//! decoding order assumed by successive interference cancellation.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kpi::{self, CrbConstants};

/// Service class of a user.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ServiceType {
    Comm,
    Pos,
    Sense,
}

impl ServiceType {
    /// Whether the base station transmits a data or positioning signal for
    /// this service (sensing users transmit their own probing signal).
    pub fn bs_powered(self) -> bool {
        !matches!(self, ServiceType::Sense)
    }
}

/// Whether larger or smaller KPI values are better.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    High,
    Low,
}

/// Target and elasticity parameters of one KPI.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KpiSpec {
    pub direction: Direction,
    pub target: f64,
    pub alpha: f64,
    pub beta: f64,
    pub weight: f64,
}

impl KpiSpec {
    pub fn new(direction: Direction, target: f64, alpha: f64, beta: f64, weight: f64) -> Self {
        Self { direction, target, alpha, beta, weight }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidSpec(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::InvalidSpec(format!("beta must lie in (0,1), got {}", self.beta)));
        }
        if !(self.target > 0.0 && self.target.is_finite()) {
            return Err(Error::InvalidSpec(format!("target must be positive, got {}", self.target)));
        }
        if !(self.weight >= 0.0 && self.weight.is_finite()) {
            return Err(Error::InvalidSpec(format!("weight must be nonnegative, got {}", self.weight)));
        }
        Ok(())
    }
}

/// KPI slots per service type.
pub mod kpi_index {
    pub const COMM_RATE: usize = 0;
    pub const COMM_LATENCY: usize = 1;
    pub const POS_ANGLE: usize = 0;
    pub const POS_DISTANCE: usize = 1;
    pub const POS_VELOCITY: usize = 2;
    pub const POS_LATENCY: usize = 3;
    pub const SENSE_DETECTION: usize = 0;
    pub const SENSE_LATENCY: usize = 1;
}

/// One user and its service request.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserService {
    /// 1-based label in the global block order.
    pub id: usize,
    pub service: ServiceType,
    /// Angle relative to the array broadside (rad).
    pub angle: f64,
    /// Distance to the base station (m).
    pub distance: f64,
    /// Radial velocity (m/s). No KPI depends on it.
    pub velocity: f64,
    /// Distance from a sensing user to its target (m).
    pub sensing_range: f64,
    /// Radar cross section (m²).
    pub rcs: f64,
    /// Receiver noise power (W).
    pub noise: f64,
    /// False-alarm probability of the detector (sensing only).
    pub false_alarm: f64,
    /// Transmit power of the sensing probe (W, sensing only).
    pub sensing_power: f64,
    /// Positioning only: CRB targets equal the RB's own CRB constants
    /// divided by this number.
    pub crb_target_divisor: Option<f64>,
    /// Comm: [rate, latency]; Pos: [angle CRB, distance CRB, velocity CRB,
    /// latency]; Sense: [detection probability, latency].
    pub kpis: Vec<KpiSpec>,
}

/// Time-frequency resource grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RbGrid {
    /// Number of sub-bands M.
    pub sub_bands: usize,
    /// Number of sub-frames N.
    pub sub_frames: usize,
    /// Subcarriers per RB, B.
    pub subcarriers: usize,
    /// OFDM symbols per RB, L.
    pub symbols: usize,
    /// Subcarrier spacing Δf (Hz).
    pub subcarrier_spacing: f64,
    /// Symbol duration T (s).
    pub symbol_duration: f64,
    /// Carrier frequency f_c (Hz).
    pub carrier_freq: f64,
}

impl RbGrid {
    pub fn rb_count(&self) -> usize {
        self.sub_bands * self.sub_frames
    }

    /// Flat index of RB (m, n), both 0-based.
    pub fn rb(&self, m: usize, n: usize) -> usize {
        m * self.sub_frames + n
    }

    /// Centre frequency of 0-based sub-band `m`: (m+1)·B·Δf + f_c.
    pub fn freq(&self, m: usize) -> f64 {
        (m + 1) as f64 * self.subcarriers as f64 * self.subcarrier_spacing + self.carrier_freq
    }

    pub fn validate(&self) -> Result<()> {
        if self.sub_bands == 0 || self.sub_frames == 0 || self.subcarriers == 0 || self.symbols == 0 {
            return Err(Error::InvalidInput("grid dimensions must be positive".into()));
        }
        for (name, v) in [
            ("subcarrier spacing", self.subcarrier_spacing),
            ("symbol duration", self.symbol_duration),
            ("carrier frequency", self.carrier_freq),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Base-station and propagation parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Transmit antennas L_tx.
    pub antennas: usize,
    /// Per-sub-frame power budget (W).
    pub p_max: f64,
    /// Maximum number of services per RB.
    pub a_max: usize,
    /// Base-station receive noise σ_0 (W).
    pub bs_noise: f64,
    /// Rician factor κ; `None` means pure line of sight.
    pub rician_k: Option<f64>,
    /// Propagation speed c_o (m/s).
    pub speed_of_light: f64,
    /// Use 2σ_0 instead of σ_0 in the positioning SNR constraints and the
    /// initial polyblock vertex.
    #[serde(default)]
    pub pos_snr_halved: bool,
}

impl SystemParams {
    pub fn validate(&self) -> Result<()> {
        if self.antennas == 0 {
            return Err(Error::InvalidInput("antenna count must be at least 1".into()));
        }
        if !(self.p_max > 0.0 && self.p_max.is_finite()) {
            return Err(Error::InvalidInput("p_max must be positive".into()));
        }
        if self.a_max == 0 {
            return Err(Error::InvalidInput("a_max must be at least 1".into()));
        }
        if !(self.bs_noise > 0.0) {
            return Err(Error::InvalidInput("bs_noise must be positive".into()));
        }
        if let Some(k) = self.rician_k {
            if !(k >= 0.0) {
                return Err(Error::InvalidInput("rician factor must be nonnegative".into()));
            }
        }
        Ok(())
    }

    /// Noise multiplier of the positioning SNR used by the optimizers.
    pub fn pos_noise_factor(&self) -> f64 {
        if self.pos_snr_halved {
            2.0
        } else {
            1.0
        }
    }
}

/// Precomputed channels, beamformers and gains.
///
/// Tensors are flattened; `rb` is the flat RB index of [`RbGrid::rb`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSet {
    /// Downlink channel of user k on RB rb at `h[k * rbs + rb]`.
    pub h: Vec<Vec<Complex64>>,
    /// Unit-norm beamformer of BS-powered user k at `w[k * rbs + rb]`;
    /// empty for sensing users.
    pub w: Vec<Vec<Complex64>>,
    /// |h_q^H w_k|² at `[(q * K + k) * rbs + rb]`; zero when k is a sensing user.
    pub gain_h: Vec<f64>,
    /// |v(θ_q)^H w_k|² at `[(q * K + k) * rbs + rb]`; zero when k is a sensing user.
    pub gain_v: Vec<f64>,
    /// Sensing echo strength λ at `[k * M + m]` (sensing users, zero otherwise).
    pub lambda: Vec<f64>,
    /// Round-trip attenuation ρ at `[k * M + m]` (positioning users, zero otherwise).
    pub rho: Vec<f64>,
    /// CRB numerators at `[k * M + m]` (positioning users only).
    pub crb: Vec<Option<CrbConstants>>,
}

/// A frozen problem instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub users: Vec<UserService>,
    pub grid: RbGrid,
    pub params: SystemParams,
    pub coeffs: CoefficientSet,
    pub seed: u64,
}

/// Rules that derive KPI targets from the instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TargetRules {
    /// Communication rate target (bits/s/Hz).
    pub comm_rate: f64,
    /// Positioning CRB targets are I/`pos_crb_divisor`.
    pub pos_crb_divisor: f64,
    /// Sensing detection-probability target.
    pub sense_detection: f64,
    /// Latency targets are this many multiples of L·T.
    pub latency_rbs: f64,
}

impl Default for TargetRules {
    fn default() -> Self {
        Self { comm_rate: 4.0, pos_crb_divisor: 20.0, sense_detection: 0.8, latency_rbs: 1.0 }
    }
}

/// Generation parameters. Powers are given in dBm and converted once.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub comm_users: usize,
    pub pos_users: usize,
    pub sense_users: usize,
    pub grid: RbGrid,
    pub antennas: usize,
    pub p_max_dbm: f64,
    pub a_max: usize,
    pub noise_dbm: f64,
    /// `None` gives pure line of sight.
    pub rician_k: Option<f64>,
    pub speed_of_light: f64,
    pub alpha_cap: f64,
    pub beta_cap: f64,
    pub angle_range: [f64; 2],
    pub comm_distance: [f64; 2],
    pub pos_distance: [f64; 2],
    pub sense_distance: [f64; 2],
    pub velocity_range: [f64; 2],
    pub sensing_range: f64,
    pub rcs: f64,
    pub false_alarm: f64,
    pub sensing_power_dbm: f64,
    pub targets: TargetRules,
    pub pos_snr_halved: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            comm_users: 3,
            pos_users: 2,
            sense_users: 1,
            grid: RbGrid {
                sub_bands: 1,
                sub_frames: 3,
                subcarriers: 8,
                symbols: 8,
                subcarrier_spacing: 156.25e3,
                symbol_duration: 8e-6,
                carrier_freq: 5.9e9,
            },
            antennas: 4,
            p_max_dbm: 30.0,
            a_max: 2,
            noise_dbm: -114.0,
            rician_k: Some(1.0),
            speed_of_light: 3e8,
            alpha_cap: 0.3,
            beta_cap: 0.3,
            angle_range: [-PI / 3.0, PI / 3.0],
            comm_distance: [30.0, 1000.0],
            pos_distance: [30.0, 200.0],
            sense_distance: [30.0, 1000.0],
            velocity_range: [-30.0, 30.0],
            sensing_range: 30.0,
            rcs: 1.0,
            false_alarm: 0.3,
            sensing_power_dbm: -5.0,
            targets: TargetRules::default(),
            pos_snr_halved: false,
        }
    }
}

impl ScenarioConfig {
    pub fn total_users(&self) -> usize {
        self.comm_users + self.pos_users + self.sense_users
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_users() == 0 {
            return Err(Error::InvalidInput("empty user set".into()));
        }
        self.grid.validate()?;
        if self.antennas == 0 {
            return Err(Error::InvalidInput("antenna count must be at least 1".into()));
        }
        if self.a_max == 0 {
            return Err(Error::InvalidInput("a_max must be at least 1".into()));
        }
        if !(self.alpha_cap >= 1e-3 && self.alpha_cap.is_finite()) {
            return Err(Error::InvalidInput("alpha_cap must be at least 1e-3".into()));
        }
        if !(self.beta_cap >= 1e-3 && self.beta_cap < 1.0) {
            return Err(Error::InvalidInput("beta_cap must lie in [1e-3, 1)".into()));
        }
        for (name, r) in [
            ("angle_range", self.angle_range),
            ("comm_distance", self.comm_distance),
            ("pos_distance", self.pos_distance),
            ("sense_distance", self.sense_distance),
            ("velocity_range", self.velocity_range),
        ] {
            if !(r[0] <= r[1] && r[0].is_finite() && r[1].is_finite()) {
                return Err(Error::InvalidInput(format!("{name} must be an ordered finite interval")));
            }
        }
        for (name, r) in [
            ("comm_distance", self.comm_distance),
            ("pos_distance", self.pos_distance),
            ("sense_distance", self.sense_distance),
        ] {
            if r[0] <= 0.0 {
                return Err(Error::InvalidInput(format!("{name} must be positive")));
            }
        }
        if !(self.false_alarm > 0.0 && self.false_alarm < 1.0) {
            return Err(Error::InvalidInput("false_alarm must lie in (0,1)".into()));
        }
        if !(self.sensing_range > 0.0 && self.rcs > 0.0 && self.speed_of_light > 0.0) {
            return Err(Error::InvalidInput("sensing range, RCS and c must be positive".into()));
        }
        let t = &self.targets;
        if !(t.comm_rate > 0.0 && t.pos_crb_divisor > 0.0 && t.latency_rbs > 0.0) {
            return Err(Error::InvalidInput("KPI target rules must be positive".into()));
        }
        if !(t.sense_detection > 0.0 && t.sense_detection < 1.0) {
            return Err(Error::InvalidInput("sensing detection target must lie in (0,1)".into()));
        }
        Ok(())
    }
}

/// Converts dBm to watts.
pub fn dbm_to_watt(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Array response of a half-wavelength uniform linear array, conjugated:
/// element ℓ is exp(−jπℓ sin θ).
pub fn steering_vector(theta: f64, antennas: usize) -> Vec<Complex64> {
    let s = theta.sin();
    (0..antennas).map(|l| Complex64::from_polar(1.0, -PI * l as f64 * s)).collect()
}

/// Linear path gain 10^(−(74.2 + 16.8 log10 d)/10).
pub fn path_loss_linear(d: f64) -> Result<f64> {
    if !(d > 0.0 && d.is_finite()) {
        return Err(Error::InvalidInput(format!("distance must be positive, got {d}")));
    }
    Ok(10f64.powf(-(74.2 + 16.8 * d.log10()) / 10.0))
}

/// Radar-equation echo factor c²δ/((4π)³ f² r⁴).
pub fn echo_factor(c: f64, rcs: f64, f: f64, r: f64) -> f64 {
    c * c * rcs / ((4.0 * PI).powi(3) * f * f * r.powi(4))
}

/// h^H w.
pub fn inner(h: &[Complex64], w: &[Complex64]) -> Complex64 {
    h.iter().zip(w).map(|(a, b)| a.conj() * b).sum()
}

fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    r[0] + (r[1] - r[0]) * rng.random::<f64>()
}

fn draw_spec(rng: &mut ChaCha8Rng, cfg: &ScenarioConfig, direction: Direction, target: f64) -> KpiSpec {
    let alpha = (rng.random::<f64>() * cfg.alpha_cap).clamp(1e-3, cfg.alpha_cap);
    let beta = (rng.random::<f64>() * cfg.beta_cap).clamp(1e-3, cfg.beta_cap);
    let weight = rng.random::<f64>();
    KpiSpec { direction, target, alpha, beta, weight }
}

/// Draws a scenario. Identical `(cfg, seed)` give bit-identical results.
pub fn generate(cfg: &ScenarioConfig, seed: u64) -> Result<Scenario> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = cfg.grid.clone();
    let params = SystemParams {
        antennas: cfg.antennas,
        p_max: dbm_to_watt(cfg.p_max_dbm),
        a_max: cfg.a_max,
        bs_noise: dbm_to_watt(cfg.noise_dbm),
        rician_k: cfg.rician_k,
        speed_of_light: cfg.speed_of_light,
        pos_snr_halved: cfg.pos_snr_halved,
    };
    params.validate()?;
    let noise = dbm_to_watt(cfg.noise_dbm);
    let latency_target = cfg.targets.latency_rbs * grid.symbols as f64 * grid.symbol_duration;

    let mut users = Vec::with_capacity(cfg.total_users());
    let blocks = [
        (ServiceType::Comm, cfg.comm_users, cfg.comm_distance),
        (ServiceType::Pos, cfg.pos_users, cfg.pos_distance),
        (ServiceType::Sense, cfg.sense_users, cfg.sense_distance),
    ];
    for (service, count, dist) in blocks {
        for _ in 0..count {
            let angle = uniform(&mut rng, cfg.angle_range);
            let distance = uniform(&mut rng, dist);
            let velocity = uniform(&mut rng, cfg.velocity_range);
            let mut kpis = Vec::new();
            match service {
                ServiceType::Comm => {
                    kpis.push(draw_spec(&mut rng, cfg, Direction::High, cfg.targets.comm_rate));
                }
                ServiceType::Pos => {
                    // Targets are filled in once the CRB constants are known.
                    for _ in 0..3 {
                        kpis.push(draw_spec(&mut rng, cfg, Direction::Low, 1.0));
                    }
                }
                ServiceType::Sense => {
                    kpis.push(draw_spec(&mut rng, cfg, Direction::High, cfg.targets.sense_detection));
                }
            }
            kpis.push(draw_spec(&mut rng, cfg, Direction::Low, latency_target));
            let is_sense = service == ServiceType::Sense;
            users.push(UserService {
                id: 0,
                service,
                angle,
                distance,
                velocity,
                sensing_range: if is_sense { cfg.sensing_range } else { 0.0 },
                rcs: cfg.rcs,
                noise,
                false_alarm: if is_sense { cfg.false_alarm } else { 0.0 },
                sensing_power: if is_sense { dbm_to_watt(cfg.sensing_power_dbm) } else { 0.0 },
                crb_target_divisor: (service == ServiceType::Pos).then_some(cfg.targets.pos_crb_divisor),
                kpis,
            });
        }
    }
    // Nearest communication users first. The sort is stable, so ties keep
    // draw order and the result stays deterministic.
    users[..cfg.comm_users].sort_by(|a, b| a.distance.total_cmp(&b.distance));
    for (i, u) in users.iter_mut().enumerate() {
        u.id = i + 1;
    }

    let coeffs = build_coefficients(&users, &grid, &params, &mut rng)?;
    for (k, u) in users.iter_mut().enumerate() {
        if let Some(div) = u.crb_target_divisor {
            let c = coeffs.crb[k * grid.sub_bands].expect("positioning CRB constants");
            u.kpis[0].target = c.angle / div;
            u.kpis[1].target = c.distance / div;
            u.kpis[2].target = c.velocity / div;
        }
    }
    let sc = Scenario { users, grid, params, coeffs, seed };
    for u in &sc.users {
        for s in &u.kpis {
            s.validate()?;
        }
    }
    Ok(sc)
}

fn build_coefficients(
    users: &[UserService],
    grid: &RbGrid,
    params: &SystemParams,
    rng: &mut ChaCha8Rng,
) -> Result<CoefficientSet> {
    let k_total = users.len();
    let rbs = grid.rb_count();
    let lt = params.antennas;
    let (los, nlos) = match params.rician_k {
        Some(k) => ((k / (1.0 + k)).sqrt(), (1.0 / (1.0 + k)).sqrt()),
        None => (1.0, 0.0),
    };
    let steer: Vec<Vec<Complex64>> = users.iter().map(|u| steering_vector(u.angle, lt)).collect();

    let mut h = Vec::with_capacity(k_total * rbs);
    for (k, u) in users.iter().enumerate() {
        let amp = path_loss_linear(u.distance)?.sqrt();
        for _rb in 0..rbs {
            let hv: Vec<Complex64> = (0..lt)
                .map(|l| {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    let e = Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2;
                    (steer[k][l] * los + e * nlos) * amp
                })
                .collect();
            h.push(hv);
        }
    }

    let mut w = Vec::with_capacity(k_total * rbs);
    for (k, u) in users.iter().enumerate() {
        for rb in 0..rbs {
            let v = match u.service {
                ServiceType::Comm => {
                    let hv = &h[k * rbs + rb];
                    let nrm = norm(hv);
                    hv.iter().map(|c| c / nrm).collect()
                }
                ServiceType::Pos => {
                    let nrm = (lt as f64).sqrt();
                    steer[k].iter().map(|c| c / nrm).collect()
                }
                ServiceType::Sense => Vec::new(),
            };
            w.push(v);
        }
    }

    let mut gain_h = vec![0.0; k_total * k_total * rbs];
    let mut gain_v = vec![0.0; k_total * k_total * rbs];
    for q in 0..k_total {
        for k in 0..k_total {
            if !users[k].service.bs_powered() {
                continue;
            }
            for rb in 0..rbs {
                let wk = &w[k * rbs + rb];
                let idx = (q * k_total + k) * rbs + rb;
                gain_h[idx] = inner(&h[q * rbs + rb], wk).norm_sqr();
                gain_v[idx] = inner(&steer[q], wk).norm_sqr();
            }
        }
    }

    let m_total = grid.sub_bands;
    let mut lambda = vec![0.0; k_total * m_total];
    let mut rho = vec![0.0; k_total * m_total];
    let mut crb = vec![None; k_total * m_total];
    for (k, u) in users.iter().enumerate() {
        for m in 0..m_total {
            let f = grid.freq(m);
            match u.service {
                ServiceType::Sense => {
                    lambda[k * m_total + m] = echo_factor(params.speed_of_light, u.rcs, f, u.sensing_range);
                }
                ServiceType::Pos => {
                    let r = echo_factor(params.speed_of_light, u.rcs, f, u.distance).sqrt();
                    rho[k * m_total + m] = r;
                    crb[k * m_total + m] = Some(kpi::crb_from_geometry(u.angle, r, m, grid, params)?);
                }
                ServiceType::Comm => {}
            }
        }
    }
    Ok(CoefficientSet { h, w, gain_h, gain_v, lambda, rho, crb })
}

impl Scenario {
    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_rbs(&self) -> usize {
        self.grid.rb_count()
    }

    pub fn service(&self, k: usize) -> ServiceType {
        self.users[k].service
    }

    pub fn bs_powered(&self, k: usize) -> bool {
        self.users[k].service.bs_powered()
    }

    pub fn count(&self, s: ServiceType) -> usize {
        self.users.iter().filter(|u| u.service == s).count()
    }

    fn gidx(&self, q: usize, k: usize, m: usize, n: usize) -> usize {
        (q * self.num_users() + k) * self.num_rbs() + self.grid.rb(m, n)
    }

    /// χ^C_{qkmn} = |h_q^H w_k|².
    pub fn chi_c(&self, q: usize, k: usize, m: usize, n: usize) -> f64 {
        self.coeffs.gain_h[self.gidx(q, k, m, n)]
    }

    /// χ^S_{kk'mn} = |h_k^H w_k'|² (interference at sensing user k).
    pub fn chi_s(&self, k: usize, kp: usize, m: usize, n: usize) -> f64 {
        self.coeffs.gain_h[self.gidx(k, kp, m, n)]
    }

    /// χ^P_{kk'mn} = |v(θ_k)^H w_k'|².
    pub fn chi_p(&self, k: usize, kp: usize, m: usize, n: usize) -> f64 {
        self.coeffs.gain_v[self.gidx(k, kp, m, n)]
    }

    pub fn channel(&self, k: usize, m: usize, n: usize) -> &[Complex64] {
        &self.coeffs.h[k * self.num_rbs() + self.grid.rb(m, n)]
    }

    pub fn beamformer(&self, k: usize, m: usize, n: usize) -> &[Complex64] {
        &self.coeffs.w[k * self.num_rbs() + self.grid.rb(m, n)]
    }

    pub fn lambda(&self, k: usize, m: usize) -> f64 {
        self.coeffs.lambda[k * self.grid.sub_bands + m]
    }

    pub fn rho(&self, k: usize, m: usize) -> f64 {
        self.coeffs.rho[k * self.grid.sub_bands + m]
    }

    pub fn crb(&self, k: usize, m: usize) -> Result<CrbConstants> {
        self.coeffs.crb[k * self.grid.sub_bands + m]
            .ok_or_else(|| Error::InvalidQuery(format!("user {k} has no CRB constants")))
    }

    /// KPI spec `i` of user `k` as it applies on sub-band `m`; positioning
    /// CRB targets follow the RB's own CRB constants.
    pub fn kpi_spec(&self, k: usize, i: usize, m: usize) -> KpiSpec {
        let u = &self.users[k];
        let mut s = u.kpis[i];
        if let (Some(div), ServiceType::Pos) = (u.crb_target_divisor, u.service) {
            if i < 3 {
                if let Ok(c) = self.crb(k, m) {
                    s.target = [c.angle, c.distance, c.velocity][i] / div;
                }
            }
        }
        s
    }

    /// Latency of 0-based sub-frame `n`: (n+1)·L·T.
    pub fn latency(&self, n: usize) -> f64 {
        (n + 1) as f64 * self.grid.symbols as f64 * self.grid.symbol_duration
    }

    /// Non-fatal observations about the instance.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        let cap = self.num_rbs() * self.params.a_max;
        if cap < self.num_users() {
            out.push(format!("capacity M·N·A_max = {cap} is below K = {}", self.num_users()));
        }
        let floor = (-2.0f64).exp();
        for u in &self.users {
            if u.service == ServiceType::Sense && u.false_alarm < floor {
                out.push(format!(
                    "user {} has P_FA = {} < e^-2; detection probability is not concave in z",
                    u.id, u.false_alarm
                ));
            }
        }
        out
    }

    /// Sub-instance keeping only the listed users (in the given order,
    /// which must keep the block order). Coefficients are copied, not redrawn.
    pub fn restrict(&self, keep: &[usize]) -> Scenario {
        let rbs = self.num_rbs();
        let k_old = self.num_users();
        let m_total = self.grid.sub_bands;
        let mut users: Vec<UserService> = keep.iter().map(|&k| self.users[k].clone()).collect();
        for (i, u) in users.iter_mut().enumerate() {
            u.id = i + 1;
        }
        let pick_rb = |src: &Vec<Vec<Complex64>>| -> Vec<Vec<Complex64>> {
            keep.iter().flat_map(|&k| (0..rbs).map(move |rb| k * rbs + rb)).map(|i| src[i].clone()).collect()
        };
        let pick_pair = |src: &Vec<f64>| -> Vec<f64> {
            let mut out = Vec::with_capacity(keep.len() * keep.len() * rbs);
            for &q in keep {
                for &k in keep {
                    for rb in 0..rbs {
                        out.push(src[(q * k_old + k) * rbs + rb]);
                    }
                }
            }
            out
        };
        let pick_m = |src: &Vec<f64>| -> Vec<f64> {
            keep.iter().flat_map(|&k| (0..m_total).map(move |m| src[k * m_total + m])).collect()
        };
        let crb = keep.iter().flat_map(|&k| (0..m_total).map(move |m| k * m_total + m)).map(|i| self.coeffs.crb[i]).collect();
        Scenario {
            users,
            grid: self.grid.clone(),
            params: self.params.clone(),
            coeffs: CoefficientSet {
                h: pick_rb(&self.coeffs.h),
                w: pick_rb(&self.coeffs.w),
                gain_h: pick_pair(&self.coeffs.gain_h),
                gain_v: pick_pair(&self.coeffs.gain_v),
                lambda: pick_m(&self.coeffs.lambda),
                rho: pick_m(&self.coeffs.rho),
                crb,
            },
            seed: self.seed,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Scenario> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Scenario> {
        Scenario::from_json(&std::fs::read_to_string(path)?)
    }
}
