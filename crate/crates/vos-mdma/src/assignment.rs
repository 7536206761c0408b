//! Assignment, power and auxiliary-SNR containers.
//!
//! Each service occupies at most one resource block, so the binary tensor
//! a_{kmn} is stored as one optional `(m, n)` slot per user. Powers and SNRs
//! are likewise one number per user, meaningful only on the user's own RB.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::Scenario;

/// Service-to-RB mapping.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Assignment {
    pub sub_bands: usize,
    pub sub_frames: usize,
    slots: Vec<Option<(usize, usize)>>,
}

impl Assignment {
    /// All users unassigned.
    pub fn empty(users: usize, sub_bands: usize, sub_frames: usize) -> Self {
        Self { sub_bands, sub_frames, slots: vec![None; users] }
    }

    pub fn for_scenario(sc: &Scenario) -> Self {
        Self::empty(sc.num_users(), sc.grid.sub_bands, sc.grid.sub_frames)
    }

    pub fn num_users(&self) -> usize {
        self.slots.len()
    }

    pub fn assign(&mut self, k: usize, m: usize, n: usize) {
        debug_assert!(m < self.sub_bands && n < self.sub_frames);
        self.slots[k] = Some((m, n));
    }

    pub fn unassign(&mut self, k: usize) {
        self.slots[k] = None;
    }

    pub fn rb_of(&self, k: usize) -> Option<(usize, usize)> {
        self.slots[k]
    }

    /// a_{kmn}.
    pub fn a(&self, k: usize, m: usize, n: usize) -> bool {
        self.slots[k] == Some((m, n))
    }

    /// Users on RB (m, n) in ascending index order.
    pub fn users_in(&self, m: usize, n: usize) -> Vec<usize> {
        (0..self.slots.len()).filter(|&k| self.slots[k] == Some((m, n))).collect()
    }

    pub fn count(&self, m: usize, n: usize) -> usize {
        self.slots.iter().filter(|s| **s == Some((m, n))).count()
    }

    /// Users in sub-frame `n` in ascending index order.
    pub fn users_in_subframe(&self, n: usize) -> Vec<usize> {
        (0..self.slots.len()).filter(|&k| matches!(self.slots[k], Some((_, nn)) if nn == n)).collect()
    }

    pub fn unassigned(&self) -> Vec<usize> {
        (0..self.slots.len()).filter(|&k| self.slots[k].is_none()).collect()
    }

    pub fn is_complete(&self) -> bool {
        self.slots.iter().all(Option::is_some)
    }

    /// Checks shapes and the per-RB cap. With `complete`, every user must be
    /// assigned as well.
    pub fn validate(&self, sc: &Scenario, complete: bool) -> Result<()> {
        if self.slots.len() != sc.num_users()
            || self.sub_bands != sc.grid.sub_bands
            || self.sub_frames != sc.grid.sub_frames
        {
            return Err(Error::ConstraintViolation("assignment shape does not match scenario".into()));
        }
        for (k, s) in self.slots.iter().enumerate() {
            match s {
                Some((m, n)) if *m >= self.sub_bands || *n >= self.sub_frames => {
                    return Err(Error::ConstraintViolation(format!("user {k} placed outside the grid")));
                }
                None if complete => {
                    return Err(Error::ConstraintViolation(format!("user {k} is not assigned")));
                }
                _ => {}
            }
        }
        for m in 0..self.sub_bands {
            for n in 0..self.sub_frames {
                let c = self.count(m, n);
                if c > sc.params.a_max {
                    return Err(Error::ConstraintViolation(format!(
                        "RB ({m},{n}) holds {c} services, cap is {}",
                        sc.params.a_max
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Base-station transmit power per user (W). Entries of sensing users and
/// of unassigned users are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerAlloc {
    pub p: Vec<f64>,
}

impl PowerAlloc {
    pub fn zeros(users: usize) -> Self {
        Self { p: vec![0.0; users] }
    }

    /// Largest violation of the budget, box and NOMA ordering constraints,
    /// each measured relative to the budget. Fairness rows are measured in
    /// received power relative to the row's larger term.
    pub fn max_violation(&self, sc: &Scenario, a: &Assignment) -> f64 {
        let pmax = sc.params.p_max;
        let mut worst: f64 = 0.0;
        for n in 0..sc.grid.sub_frames {
            let total: f64 =
                a.users_in_subframe(n).into_iter().filter(|&k| sc.bs_powered(k)).map(|k| self.p[k]).sum();
            worst = worst.max((total - pmax) / pmax);
        }
        for k in 0..sc.num_users() {
            if sc.bs_powered(k) && a.rb_of(k).is_some() {
                worst = worst.max(-self.p[k] / pmax).max((self.p[k] - pmax) / pmax);
            }
        }
        worst.max(fairness_violation(sc, a, &self.p))
    }
}

/// Largest relative violation of p_q χ_{kq} ≥ p_j χ_{kj} over co-assigned
/// communication triples (observer k, j < q).
pub fn fairness_violation(sc: &Scenario, a: &Assignment, p: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for m in 0..sc.grid.sub_bands {
        for n in 0..sc.grid.sub_frames {
            let comm: Vec<usize> = a
                .users_in(m, n)
                .into_iter()
                .filter(|&k| sc.service(k) == crate::scenario::ServiceType::Comm)
                .collect();
            for &k in &comm {
                for (ji, &j) in comm.iter().enumerate() {
                    for &q in &comm[ji + 1..] {
                        let lhs = p[q] * sc.chi_c(k, q, m, n);
                        let rhs = p[j] * sc.chi_c(k, j, m, n);
                        let scale = lhs.max(rhs);
                        if scale > 0.0 {
                            worst = worst.max((rhs - lhs) / scale);
                        }
                    }
                }
            }
        }
    }
    worst
}

/// Auxiliary SNR per user on its assigned RB (zero when unassigned).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinrVector {
    pub z: Vec<f64>,
}

impl SinrVector {
    pub fn zeros(users: usize) -> Self {
        Self { z: vec![0.0; users] }
    }
}
