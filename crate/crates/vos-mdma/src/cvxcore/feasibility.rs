//! Power feasibility for one sub-frame at fixed SNR targets.
//!
//! For fixed z every SNR requirement is affine in the powers, so existence
//! of a valid allocation is a linear program. Powers are normalized by
//! P_max and every row by its Euclidean norm; the LP then maximizes the
//! smallest row slack t. The targets are feasible iff t* ≥ −1e-9.

use std::io::Write;

use crate::cvxcore::lp;
use crate::error::Result;
use crate::scenario::{Scenario, ServiceType};
use crate::vosmetric;

/// Slack threshold of the feasibility decision.
pub const FEAS_TOL: f64 = 1e-9;

/// Placement of the services scheduled in one sub-frame.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SubframeAssignment {
    pub n: usize,
    /// (user, sub-band), sorted by user.
    pub slots: Vec<(usize, usize)>,
}

impl SubframeAssignment {
    pub fn new(n: usize, mut slots: Vec<(usize, usize)>) -> Self {
        slots.sort_unstable();
        Self { n, slots }
    }

    pub fn from_assignment(a: &crate::assignment::Assignment, n: usize) -> Self {
        let slots = (0..a.num_users()).filter_map(|k| a.rb_of(k).filter(|r| r.1 == n).map(|r| (k, r.0))).collect();
        Self { n, slots }
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn users(&self) -> Vec<usize> {
        self.slots.iter().map(|s| s.0).collect()
    }
}

/// Structure shared by the LP and the SCA subproblem: which users share a
/// sub-band and which of them carry a power variable.
#[derive(Clone, Debug)]
pub struct SubframeModel<'a> {
    pub sc: &'a Scenario,
    pub sub: SubframeAssignment,
    /// Users with a power variable, in slot order.
    pub powered: Vec<usize>,
    /// Power-variable index per slot (None for sensing users).
    pub var_of_slot: Vec<Option<usize>>,
}

/// One inequality `coef·x ≥ rhs` over normalized powers x = p/P_max.
#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub coef: Vec<(usize, f64)>,
    pub rhs: f64,
    pub label: String,
}

impl<'a> SubframeModel<'a> {
    pub fn new(sc: &'a Scenario, sub: SubframeAssignment) -> Self {
        let mut powered = Vec::new();
        let mut var_of_slot = Vec::with_capacity(sub.slots.len());
        for &(k, _) in &sub.slots {
            if sc.bs_powered(k) {
                var_of_slot.push(Some(powered.len()));
                powered.push(k);
            } else {
                var_of_slot.push(None);
            }
        }
        Self { sc, sub, powered, var_of_slot }
    }

    pub fn n(&self) -> usize {
        self.sub.n
    }

    fn var_of_user(&self, k: usize) -> Option<usize> {
        self.sub.slots.iter().position(|s| s.0 == k).and_then(|i| self.var_of_slot[i])
    }

    /// Slots sharing sub-band `m`, in user order.
    pub fn slots_in(&self, m: usize) -> Vec<usize> {
        (0..self.sub.slots.len()).filter(|&i| self.sub.slots[i].1 == m).collect()
    }

    fn comm_in(&self, m: usize) -> Vec<usize> {
        self.slots_in(m).into_iter().map(|i| self.sub.slots[i].0).filter(|&k| self.sc.service(k) == ServiceType::Comm).collect()
    }

    /// Decoding pairs of communication slot `i`: for each co-assigned comm
    /// decoder q ≤ k, the interferer gains P_max χ_{qj}/σ_q (j < k), the own
    /// gain P_max χ_{qk}/σ_q, all in units of the decoder noise.
    pub fn comm_pairs(&self, i: usize) -> Vec<(Vec<(usize, f64)>, f64)> {
        let sc = self.sc;
        let (k, m) = self.sub.slots[i];
        let n = self.sub.n;
        let pmax = sc.params.p_max;
        let comm = self.comm_in(m);
        let mut out = Vec::new();
        for &q in comm.iter().filter(|&&q| q <= k) {
            let s = sc.users[q].noise;
            let interf: Vec<(usize, f64)> = comm
                .iter()
                .filter(|&&j| j < k)
                .map(|&j| (self.var_of_user(j).unwrap(), pmax * sc.chi_c(q, j, m, n) / s))
                .collect();
            out.push((interf, pmax * sc.chi_c(q, k, m, n) / s));
        }
        out
    }

    /// Power variable of slot `i`.
    pub fn var(&self, i: usize) -> Option<usize> {
        self.var_of_slot[i]
    }

    /// Positioning gains P_max χ^P_{kk'}/(f σ_0) of slot `i` over the
    /// powered users of its sub-band, with f the configured noise factor.
    pub fn pos_gains(&self, i: usize) -> Vec<(usize, f64)> {
        let sc = self.sc;
        let (k, m) = self.sub.slots[i];
        let scale = sc.params.p_max / (sc.params.pos_noise_factor() * sc.params.bs_noise);
        self.slots_in(m)
            .into_iter()
            .filter_map(|j| self.var_of_slot[j].map(|v| (v, scale * sc.chi_p(k, self.sub.slots[j].0, m, self.sub.n))))
            .collect()
    }

    /// Sensing slot `i`: interferer gains P_max χ^S/σ_k and the echo term
    /// B·L·p·λ/σ_k, both in units of the user's noise.
    pub fn sense_terms(&self, i: usize) -> (Vec<(usize, f64)>, f64) {
        let sc = self.sc;
        let (k, m) = self.sub.slots[i];
        let u = &sc.users[k];
        let interf = self
            .slots_in(m)
            .into_iter()
            .filter_map(|j| {
                self.var_of_slot[j].map(|v| (v, sc.params.p_max * sc.chi_s(k, self.sub.slots[j].0, m, self.sub.n) / u.noise))
            })
            .collect();
        let echo = (sc.grid.subcarriers * sc.grid.symbols) as f64 * u.sensing_power * sc.lambda(k, m) / u.noise;
        (interf, echo)
    }

    /// SNR of every slot induced by normalized powers `x`.
    pub fn induced_z(&self, x: &[f64]) -> Vec<f64> {
        (0..self.sub.slots.len())
            .map(|i| match self.sc.service(self.sub.slots[i].0) {
                ServiceType::Comm => {
                    let own = x[self.var(i).unwrap()];
                    self.comm_pairs(i)
                        .into_iter()
                        .map(|(interf, g)| own * g / (1.0 + interf.iter().map(|(v, c)| c * x[*v]).sum::<f64>()))
                        .fold(f64::INFINITY, f64::min)
                }
                ServiceType::Pos => self.pos_gains(i).iter().map(|(v, c)| c * x[*v]).sum(),
                ServiceType::Sense => {
                    let (interf, echo) = self.sense_terms(i);
                    echo / (1.0 + interf.iter().map(|(v, c)| c * x[*v]).sum::<f64>())
                }
            })
            .collect()
    }

    /// Floored log-objective of the sub-frame at SNRs `z` (one per slot).
    pub fn objective_at(&self, z: &[f64]) -> f64 {
        self.sub.slots.iter().zip(z).map(|(&(k, m), &zi)| vosmetric::user_log_terms(self.sc, k, m, self.sub.n, zi).0).sum()
    }

    /// Floored log-objective of the sub-frame at normalized powers `x`.
    pub fn objective_at_powers(&self, x: &[f64]) -> f64 {
        self.objective_at(&self.induced_z(x))
    }

    /// Normalized powers x = p/P_max of the powered users taken from a
    /// full per-user power vector.
    pub fn normalized(&self, p: &[f64]) -> Vec<f64> {
        self.powered.iter().map(|&k| p[k] / self.sc.params.p_max).collect()
    }

    /// NOMA ordering rows p_q χ_{kq} ≥ p_j χ_{kj} for every co-assigned comm
    /// observer k and pair j < q, as `coef·x ≥ 0`.
    pub fn fairness_rows(&self) -> Vec<Row> {
        let sc = self.sc;
        let n = self.sub.n;
        let mut rows = Vec::new();
        for m in 0..sc.grid.sub_bands {
            let comm = self.comm_in(m);
            for &k in &comm {
                for (ji, &j) in comm.iter().enumerate() {
                    for &q in &comm[ji + 1..] {
                        let cq = sc.chi_c(k, q, m, n);
                        let cj = sc.chi_c(k, j, m, n);
                        rows.push(Row {
                            coef: vec![(self.var_of_user(q).unwrap(), cq), (self.var_of_user(j).unwrap(), -cj)],
                            rhs: 0.0,
                            label: format!("fair k={k} j={j} q={q}"),
                        });
                    }
                }
            }
        }
        rows
    }

    /// All rows of the power feasibility problem at targets `z` (one per slot).
    pub fn rows(&self, z: &[f64]) -> Vec<Row> {
        let mut rows = Vec::new();
        for (i, &(k, _)) in self.sub.slots.iter().enumerate() {
            let zi = z[i];
            if zi <= 0.0 {
                continue;
            }
            match self.sc.service(k) {
                ServiceType::Comm => {
                    let own = self.var(i).unwrap();
                    for (q_idx, (interf, g_own)) in self.comm_pairs(i).into_iter().enumerate() {
                        let mut coef = vec![(own, g_own)];
                        coef.extend(interf.into_iter().map(|(v, g)| (v, -zi * g)));
                        rows.push(Row { coef, rhs: zi, label: format!("comm k={k} pair={q_idx}") });
                    }
                }
                ServiceType::Pos => {
                    rows.push(Row { coef: self.pos_gains(i), rhs: zi, label: format!("pos k={k}") });
                }
                ServiceType::Sense => {
                    let (interf, echo) = self.sense_terms(i);
                    let coef = interf.into_iter().map(|(v, g)| (v, -zi * g)).collect();
                    rows.push(Row { coef, rhs: zi - echo, label: format!("sense k={k}") });
                }
            }
        }
        rows.extend(self.fairness_rows());
        rows
    }
}

/// Linear feasibility problem over the powers of one sub-frame.
#[derive(Clone, Debug)]
pub struct FeasibilityProblem<'a> {
    pub model: SubframeModel<'a>,
    /// SNR target per slot.
    pub z: Vec<f64>,
}

/// Outcome of [`feasible_power`].
#[derive(Clone, Debug, PartialEq)]
pub struct FeasibilityOutcome {
    pub feasible: bool,
    /// Optimal smallest normalized slack.
    pub slack: f64,
    /// Witness powers in watts, aligned with `model.powered`, when feasible.
    pub powers: Option<Vec<f64>>,
}

impl<'a> FeasibilityProblem<'a> {
    pub fn new(sc: &'a Scenario, sub: SubframeAssignment, z: Vec<f64>) -> Self {
        Self { model: SubframeModel::new(sc, sub), z }
    }

    /// Writes the normalized constraint rows as text.
    pub fn dump(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "# sub-frame {} slots {:?}", self.model.sub.n, self.model.sub.slots)?;
        writeln!(out, "# z {:?}", self.z)?;
        writeln!(out, "# variables x = p / P_max over users {:?}; budget sum(x) <= 1", self.model.powered)?;
        for r in self.model.rows(&self.z) {
            let terms: Vec<String> = r.coef.iter().map(|(v, c)| format!("{c:+.6e}*x{v}")).collect();
            writeln!(out, "{}: {} >= {:.6e}", r.label, terms.join(" "), r.rhs)?;
        }
        Ok(())
    }
}

/// Decides whether the targets admit a power allocation and returns a
/// max-min-slack witness.
pub fn feasible_power(problem: &FeasibilityProblem) -> Result<FeasibilityOutcome> {
    let model = &problem.model;
    let nv = model.powered.len();
    let rows = model.rows(&problem.z);
    if rows.is_empty() {
        return Ok(FeasibilityOutcome { feasible: true, slack: 1.0, powers: Some(vec![0.0; nv]) });
    }
    // Variables (x_0..x_{nv-1}, τ) with τ = t + 1 ≥ 0. Each soft row
    // coef·x − rhs ≥ t becomes τ − coef·x ≤ 1 − rhs after normalization.
    let mut a = Vec::with_capacity(rows.len() + 2);
    let mut b = Vec::with_capacity(rows.len() + 2);
    for r in &rows {
        let nrm = (r.coef.iter().map(|c| c.1 * c.1).sum::<f64>() + r.rhs * r.rhs).sqrt();
        if nrm == 0.0 {
            continue;
        }
        let mut row = vec![0.0; nv + 1];
        for &(v, c) in &r.coef {
            row[v] -= c / nrm;
        }
        row[nv] = 1.0;
        a.push(row);
        b.push((1.0 - r.rhs / nrm).max(0.0));
    }
    let mut budget = vec![1.0; nv + 1];
    budget[nv] = 0.0;
    a.push(budget);
    b.push(1.0);
    let mut cap = vec![0.0; nv + 1];
    cap[nv] = 1.0;
    a.push(cap);
    b.push(2.0);
    let mut c = vec![0.0; nv + 1];
    c[nv] = 1.0;
    let sol = lp::maximize(&a, &b, &c)?;
    let slack = sol.x[nv] - 1.0;
    let feasible = slack >= -FEAS_TOL;
    let pmax = model.sc.params.p_max;
    let powers = feasible.then(|| sol.x[..nv].iter().map(|x| x * pmax).collect());
    Ok(FeasibilityOutcome { feasible, slack, powers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{generate, ScenarioConfig};

    fn scenario() -> Scenario {
        generate(&ScenarioConfig::default(), 7).unwrap()
    }

    #[test]
    fn zero_targets_are_feasible() {
        let sc = scenario();
        let sub = SubframeAssignment::new(0, vec![(0, 0), (3, 0)]);
        let out = feasible_power(&FeasibilityProblem::new(&sc, sub, vec![0.0, 0.0])).unwrap();
        assert!(out.feasible);
    }

    #[test]
    fn single_comm_user_boundary() {
        let sc = scenario();
        let sub = SubframeAssignment::new(1, vec![(0, 0)]);
        let zmax = sc.params.p_max * sc.chi_c(0, 0, 0, 1) / sc.users[0].noise;
        let at = feasible_power(&FeasibilityProblem::new(&sc, sub.clone(), vec![zmax])).unwrap();
        assert!(at.feasible);
        let p = at.powers.unwrap()[0];
        assert!((p - sc.params.p_max).abs() <= 1e-8 * sc.params.p_max);
        let above = feasible_power(&FeasibilityProblem::new(&sc, sub, vec![zmax * (1.0 + 1e-6)])).unwrap();
        assert!(!above.feasible);
    }

    #[test]
    fn dump_lists_rows() {
        let sc = scenario();
        let sub = SubframeAssignment::new(0, vec![(0, 0), (1, 0), (5, 0)]);
        let mut buf = Vec::new();
        FeasibilityProblem::new(&sc, sub, vec![1.0, 1.0, 1.0]).dump(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("comm k=1 pair=1"));
        assert!(text.contains("sense k=5"));
        assert!(text.contains("fair k=0 j=0 q=1"));
    }
}
