//! Optimal solver: dynamic programming over the set of users served so far,
//! with a polyblock outer-approximation solver for the power problem of
//! each candidate sub-frame assignment.
//!
//! Sub-frames share no power budget and no interference, so the gain of
//! serving the set A_n in sub-frame n depends only on (n, A_n). The DP value
//! of a state is U*(S_n) = max over A_n ⊆ S_n of U*(S_n \ A_n) + ΔU(n, A_n),
//! where ΔU is the best polyblock value over every sub-band placement of
//! A_n. Each ΔU is computed once and cached.

use std::collections::HashMap;
use std::io::Write;

use crate::assignment::{Assignment, PowerAlloc};
use crate::cvxcore::feasibility::{feasible_power, FeasibilityProblem, SubframeAssignment, SubframeModel};
use crate::error::{Error, Result};
use crate::result::{Diagnostics, SolveResult};
use crate::scenario::{Scenario, ServiceType};
use crate::vosmetric::{self, LogValue, LOG_FLOOR};

/// Largest number of DP states explored before refusing the instance.
pub const STATE_BUDGET: u64 = 1 << 20;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModpOptions {
    /// Relative optimality tolerance of the polyblock certificate.
    pub eps: f64,
    /// Width of the bisection interval in the projection.
    pub bisect_tol: f64,
    pub max_iters: usize,
    /// Children whose coordinate falls below this fraction of the initial
    /// vertex are not created.
    pub tiny: f64,
    /// Remove vertices whose bound cannot beat the incumbent.
    pub prune: bool,
}

impl Default for ModpOptions {
    fn default() -> Self {
        Self { eps: 0.05, bisect_tol: 1e-4, max_iters: 5000, tiny: 1e-6, prune: true }
    }
}

/// Upper corner of the box that contains every achievable SNR vector of
/// the sub-frame, one entry per slot.
pub fn initial_vertex(model: &SubframeModel) -> Vec<f64> {
    (0..model.sub.slots.len())
        .map(|i| match model.sc.service(model.sub.slots[i].0) {
            ServiceType::Comm => model.comm_pairs(i).iter().map(|p| p.1).fold(0.0, f64::max),
            ServiceType::Pos => model.pos_gains(i).iter().map(|g| g.1).sum(),
            ServiceType::Sense => model.sense_terms(i).1,
        })
        .collect()
}

/// Result of projecting a vertex toward the origin onto the feasible set.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    /// Largest δ known feasible.
    pub delta: f64,
    /// Smallest δ known infeasible (> 1 when the vertex itself is feasible).
    pub delta_infeasible: f64,
    /// δ·vertex.
    pub point: Vec<f64>,
    /// Witness normalized powers for `point`.
    pub x: Vec<f64>,
    /// Feasibility LPs solved.
    pub oracle_calls: usize,
}

/// Bisection for δ* = max{δ ∈ [0, 1] : δ·vertex feasible}.
pub fn project(model: &SubframeModel, vertex: &[f64], bisect_tol: f64) -> Result<Projection> {
    let check = |d: f64| -> Result<Option<Vec<f64>>> {
        let z: Vec<f64> = vertex.iter().map(|v| v * d).collect();
        let out = feasible_power(&FeasibilityProblem { model: model.clone(), z })?;
        Ok(out.powers.map(|p| p.iter().map(|v| v / model.sc.params.p_max).collect()))
    };
    let mut calls = 1;
    if let Some(x) = check(1.0)? {
        return Ok(Projection { delta: 1.0, delta_infeasible: f64::INFINITY, point: vertex.to_vec(), x, oracle_calls: calls });
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    let mut x_lo = vec![0.0; model.powered.len()];
    while hi - lo > bisect_tol {
        let mid = 0.5 * (lo + hi);
        calls += 1;
        match check(mid)? {
            Some(x) => {
                lo = mid;
                x_lo = x;
            }
            None => hi = mid,
        }
    }
    Ok(Projection { delta: lo, delta_infeasible: hi, point: vertex.iter().map(|v| v * lo).collect(), x: x_lo, oracle_calls: calls })
}

/// Floored sub-frame objective at SNRs `z` and the number of floored terms.
fn scored(model: &SubframeModel, z: &[f64]) -> (f64, usize) {
    let mut total = 0.0;
    let mut floors = 0;
    for (&(k, m), &zi) in model.sub.slots.iter().zip(z) {
        let q = crate::kpi::kpis_from_z(model.sc, k, m, model.sub.n, zi);
        for (i, qi) in q.iter().enumerate() {
            let (f, e) = vosmetric::weighted_log(*qi, &model.sc.kpi_spec(k, i, m));
            total += f;
            if e.is_below_range() || f == LOG_FLOOR {
                floors += 1;
            }
        }
    }
    (total, floors)
}

/// Certificate test on floored values: the bound gap must be within ε of
/// the finite part of the incumbent plus a small absolute slack.
fn certified(ub: f64, lb: f64, lb_floors: usize, eps: f64) -> bool {
    let finite = lb - lb_floors as f64 * LOG_FLOOR;
    ub - lb <= eps * finite.abs() + 1e-6
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolyblockSolution {
    /// Floored objective of the returned point, including latency terms.
    pub value: f64,
    pub upper_bound: f64,
    /// SNRs induced by `x`.
    pub z: Vec<f64>,
    pub x: Vec<f64>,
    pub certified: bool,
    pub iterations: usize,
    pub oracle_calls: usize,
}

/// Polyblock maximization of the sub-frame objective over the feasible SNR
/// set. The objective is flat above each service's saturation SNR, so the
/// search box is clipped there.
pub fn polyblock_solve(model: &SubframeModel, opts: &ModpOptions) -> Result<PolyblockSolution> {
    let nslots = model.sub.slots.len();
    let np = model.powered.len();
    if nslots == 0 {
        return Ok(PolyblockSolution { value: 0.0, upper_bound: 0.0, z: vec![], x: vec![], certified: true, iterations: 0, oracle_calls: 0 });
    }
    let mut z0 = initial_vertex(model);
    for (i, &(k, m)) in model.sub.slots.iter().enumerate() {
        let (_, hi) = vosmetric::weighted_snr_range(model.sc, k, m)?;
        z0[i] = z0[i].min(hi);
    }
    let eval = |z: &[f64]| scored(model, z);

    // Incumbent from the origin, which is always feasible.
    let mut best_x = vec![0.0; np];
    let mut best_z = model.induced_z(&best_x);
    let (mut lb, mut lb_floors) = eval(&best_z);
    let mut vertices: Vec<(f64, Vec<f64>)> = vec![(eval(&z0).0, z0.clone())];
    let mut ub = vertices[0].0;
    let mut iterations = 0;
    let mut calls = 0;
    let mut cert = certified(ub, lb, lb_floors, opts.eps);
    while !cert && iterations < opts.max_iters {
        iterations += 1;
        // Highest vertex; ties go to the earliest.
        let idx = vertices.iter().enumerate().fold(0, |b, (i, v)| if v.0 > vertices[b].0 { i } else { b });
        let (_, v) = vertices.swap_remove(idx);
        let proj = project(model, &v, opts.bisect_tol)?;
        calls += proj.oracle_calls;
        let induced = model.induced_z(&proj.x);
        let (val, floors) = eval(&induced);
        if val > lb {
            lb = val;
            lb_floors = floors;
            best_x = proj.x.clone();
            best_z = induced;
        }
        if proj.delta_infeasible.is_finite() {
            let corner: Vec<f64> = v.iter().map(|c| c * proj.delta_infeasible).collect();
            for d in 0..nslots {
                if corner[d] < opts.tiny * z0[d] || corner[d] >= v[d] {
                    continue;
                }
                let mut child = v.clone();
                child[d] = corner[d];
                let score = eval(&child).0;
                vertices.push((score, child));
            }
        }
        if opts.prune {
            vertices.retain(|(s, _)| *s > lb);
        }
        ub = vertices.iter().map(|v| v.0).fold(lb, f64::max);
        cert = vertices.is_empty() || certified(ub, lb, lb_floors, opts.eps);
    }
    Ok(PolyblockSolution { value: lb, upper_bound: ub, z: best_z, x: best_x, certified: cert, iterations, oracle_calls: calls })
}

/// Every placement of `users` onto sub-bands (one sub-band index per user,
/// in the order of `users`) that respects the per-RB cap, in lexicographic
/// order.
pub fn enumerate_a_n(users: &[usize], sub_bands: usize, a_max: usize) -> Vec<Vec<usize>> {
    if users.len() > sub_bands * a_max {
        return vec![];
    }
    let mut out = Vec::new();
    let mut cur = vec![0usize; users.len()];
    let mut counts = vec![0usize; sub_bands];
    fn rec(i: usize, cur: &mut Vec<usize>, counts: &mut Vec<usize>, a_max: usize, out: &mut Vec<Vec<usize>>) {
        if i == cur.len() {
            out.push(cur.clone());
            return;
        }
        for m in 0..counts.len() {
            if counts[m] < a_max {
                counts[m] += 1;
                cur[i] = m;
                rec(i + 1, cur, counts, a_max, out);
                counts[m] -= 1;
            }
        }
    }
    rec(0, &mut cur, &mut counts, a_max, &mut out);
    out
}

/// Best transition value for serving `set` in sub-frame `n`.
#[derive(Clone, Debug)]
struct Transition {
    value: f64,
    placement: Vec<usize>,
    x: Vec<f64>,
    certified: bool,
    iterations: usize,
}

fn users_of(mask: u64) -> Vec<usize> {
    (0..64).filter(|&k| mask >> k & 1 == 1).collect()
}

fn transition(sc: &Scenario, n: usize, set: u64, opts: &ModpOptions) -> Result<Transition> {
    let users = users_of(set);
    let mut best: Option<Transition> = None;
    for placement in enumerate_a_n(&users, sc.grid.sub_bands, sc.params.a_max) {
        let slots: Vec<(usize, usize)> = users.iter().copied().zip(placement.iter().copied()).collect();
        let model = SubframeModel::new(sc, SubframeAssignment::new(n, slots));
        let sol = polyblock_solve(&model, opts)?;
        if best.as_ref().is_none_or(|b| sol.value > b.value) {
            best = Some(Transition { value: sol.value, placement, x: sol.x, certified: sol.certified, iterations: sol.iterations });
        }
    }
    best.ok_or_else(|| Error::Solver(format!("no placement for {} users in sub-frame {n}", users.len())))
}

fn binom(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    (0..k).fold(1u64, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

/// Number of DP states over all layers after reachability pruning.
fn state_count(k: usize, per_frame: usize, frames: usize) -> u64 {
    let mut total = 0u64;
    for n in 0..=frames {
        let lo = k.saturating_sub((frames - n) * per_frame);
        let hi = (n * per_frame).min(k);
        for s in lo..=hi {
            total = total.saturating_add(binom(k as u64, s as u64));
        }
    }
    total
}

/// Solves the joint assignment and power problem exactly (up to the
/// polyblock tolerance). `trace` receives one line per evaluated transition.
pub fn modp_solve(sc: &Scenario, opts: &ModpOptions, mut trace: Option<&mut dyn Write>) -> Result<SolveResult> {
    let k = sc.num_users();
    let (m_bands, frames) = (sc.grid.sub_bands, sc.grid.sub_frames);
    let per_frame = m_bands * sc.params.a_max;
    let mut diag = Diagnostics { certified: true, ..Default::default() };
    if k > per_frame * frames {
        diag.infeasible = true;
        diag.certified = false;
        diag.notes.push(format!("{k} users exceed the capacity of {} services", per_frame * frames));
        let a = Assignment::for_scenario(sc);
        return SolveResult::evaluate("MODP", sc, &a, &PowerAlloc::zeros(k), diag);
    }
    if k >= 64 {
        return Err(Error::StateBudget { states: u64::MAX, budget: STATE_BUDGET });
    }
    let states = state_count(k, per_frame, frames);
    if states > STATE_BUDGET {
        return Err(Error::StateBudget { states, budget: STATE_BUDGET });
    }
    let full: u64 = if k == 0 { 0 } else { (1u64 << k) - 1 };

    // layer[n]: S_n → (U*, predecessor, A_n).
    let mut layers: Vec<HashMap<u64, (f64, u64, u64)>> = vec![HashMap::new(); frames + 1];
    layers[0].insert(0, (0.0, 0, 0));
    let mut cache: HashMap<(usize, u64), Transition> = HashMap::new();
    for n in 0..frames {
        let remaining_after = (frames - n - 1) * per_frame;
        let mut prev: Vec<(u64, f64)> = layers[n].iter().map(|(s, v)| (*s, v.0)).collect();
        prev.sort_unstable_by_key(|p| p.0);
        for (s_prev, u_prev) in prev {
            let free = full & !s_prev;
            let free_users = users_of(free);
            // Subsets of the free users, smallest mask first.
            let mut sub = 0u64;
            loop {
                let size = sub.count_ones() as usize;
                let after = free_users.len() - size;
                if size <= per_frame && after <= remaining_after {
                    if !cache.contains_key(&(n, sub)) {
                        let t = transition(sc, n, sub, opts)?;
                        if let Some(w) = trace.as_deref_mut() {
                            writeln!(w, "n={n} A={:?} dU={:.9e} placement={:?} certified={} iters={}", users_of(sub), t.value, t.placement, t.certified, t.iterations)?;
                        }
                        cache.insert((n, sub), t);
                    }
                    let val = u_prev + cache[&(n, sub)].value;
                    let s_new = s_prev | sub;
                    let better = match layers[n + 1].get(&s_new) {
                        None => true,
                        Some(&(best, bp, ba)) => val > best || (val == best && (s_prev, sub) < (bp, ba)),
                    };
                    if better {
                        layers[n + 1].insert(s_new, (val, s_prev, sub));
                    }
                }
                if sub == free {
                    break;
                }
                sub = (sub.wrapping_sub(free)) & free;
            }
        }
    }

    // Backtrack from the full set.
    let mut a = Assignment::for_scenario(sc);
    let mut p = PowerAlloc::zeros(k);
    let mut s = full;
    for n in (0..frames).rev() {
        let &(_, prev, sub) = layers[n + 1].get(&s).ok_or_else(|| Error::Solver("DP lost the full state".into()))?;
        let t = &cache[&(n, sub)];
        diag.certified &= t.certified;
        diag.iterations += t.iterations;
        let users = users_of(sub);
        let slots: Vec<(usize, usize)> = users.iter().copied().zip(t.placement.iter().copied()).collect();
        let model = SubframeModel::new(sc, SubframeAssignment::new(n, slots.clone()));
        for &(u, m) in &slots {
            a.assign(u, m, n);
        }
        for (j, &u) in model.powered.iter().enumerate() {
            p.p[u] = t.x[j] * sc.params.p_max;
        }
        s = prev;
    }
    diag.notes.push(format!("{} DP states, {} transitions", layers.iter().map(|l| l.len()).sum::<usize>(), cache.len()));
    let res = SolveResult::evaluate("MODP", sc, &a, &p, diag)?;
    debug_assert!(!matches!(res.exact_log_objective, LogValue::Finite(v) if v.is_nan()));
    Ok(res)
}
