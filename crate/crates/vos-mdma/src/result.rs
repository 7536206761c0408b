//! Solver output and its evaluation from (assignment, powers).

use serde::{Deserialize, Serialize};

use crate::assignment::{Assignment, PowerAlloc, SinrVector};
use crate::error::Result;
use crate::kpi;
use crate::scenario::{Scenario, ServiceType};
use crate::vosmetric::{self, LogValue, LOG_FLOOR};

/// KPI values and normalized values of one user.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserReport {
    /// 1-based label.
    pub id: usize,
    pub service: ServiceType,
    pub rb: Option<(usize, usize)>,
    pub z: f64,
    pub kpis: Vec<f64>,
    pub values: Vec<f64>,
    pub vos: f64,
}

/// Solver bookkeeping carried alongside the solution.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// MODP: every polyblock run on the chosen path met its certificate.
    pub certified: bool,
    pub iterations: usize,
    /// Some assigned KPI is below its β-range.
    pub below_range: bool,
    /// The instance has more users than resource capacity.
    pub infeasible: bool,
    /// Largest relative violation of the power constraints.
    pub max_violation: f64,
    pub notes: Vec<String>,
}

/// Assignment, powers and the VoS they achieve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub algo: String,
    pub assignment: Assignment,
    pub powers: PowerAlloc,
    pub z: SinrVector,
    /// Floored log-objective; every weighted KPI of an unassigned user adds
    /// [`LOG_FLOOR`].
    pub log_objective: f64,
    /// Exact log-objective, `BelowRange` when the product VoS is 0.
    pub exact_log_objective: LogValue,
    pub product_vos: f64,
    pub users: Vec<UserReport>,
    pub wall_ms: f64,
    pub diagnostics: Diagnostics,
}

impl SolveResult {
    /// Evaluates (a, p) on the scenario.
    pub fn evaluate(algo: &str, sc: &Scenario, a: &Assignment, p: &PowerAlloc, diagnostics: Diagnostics) -> Result<Self> {
        a.validate(sc, false)?;
        let z = kpi::sinr_from_powers(a, p, sc)?;
        let obj = vosmetric::objective_l(a, &z, sc)?;
        let mut log_objective = obj.floored;
        let mut exact = obj.exact;
        let mut users = Vec::with_capacity(sc.num_users());
        for k in 0..sc.num_users() {
            let u = &sc.users[k];
            let report = match a.rb_of(k) {
                Some((m, n)) => {
                    let kpis = kpi::kpis_from_z(sc, k, m, n, z.z[k]);
                    let values: Vec<f64> =
                        kpis.iter().enumerate().map(|(i, q)| vosmetric::normalize(*q, &sc.kpi_spec(k, i, m))).collect();
                    let weighted: Vec<(f64, f64)> =
                        values.iter().enumerate().map(|(i, v)| (*v, sc.kpi_spec(k, i, m).weight)).collect();
                    UserReport { id: u.id, service: u.service, rb: Some((m, n)), z: z.z[k], vos: vosmetric::user_vos(&weighted), kpis, values }
                }
                None => {
                    let weighted = u.kpis.iter().filter(|s| s.weight > 0.0).count();
                    if weighted > 0 {
                        log_objective += weighted as f64 * LOG_FLOOR;
                        exact = LogValue::BelowRange;
                    }
                    let vos = if weighted > 0 { 0.0 } else { 1.0 };
                    UserReport { id: u.id, service: u.service, rb: None, z: 0.0, kpis: vec![], values: vec![], vos }
                }
            };
            users.push(report);
        }
        let product_vos = match exact {
            LogValue::Finite(v) => v.exp(),
            LogValue::BelowRange => 0.0,
        };
        let mut diagnostics = diagnostics;
        diagnostics.below_range = exact.is_below_range();
        diagnostics.max_violation = p.max_violation(sc, a);
        Ok(Self {
            algo: algo.to_string(),
            assignment: a.clone(),
            powers: p.clone(),
            z,
            log_objective,
            exact_log_objective: exact,
            product_vos,
            users,
            wall_ms: 0.0,
            diagnostics,
        })
    }

    /// Mean VoS over the users of one service type (NaN when there are none).
    pub fn mean_vos(&self, s: ServiceType) -> f64 {
        let v: Vec<f64> = self.users.iter().filter(|u| u.service == s).map(|u| u.vos).collect();
        if v.is_empty() {
            f64::NAN
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    }
}
