//! Suboptimal solver: VoS-prioritized assignment under distance-based fixed
//! power, followed by SCA power allocation and a swap search over the
//! assignment.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::assignment::{Assignment, PowerAlloc};
use crate::cvxcore::feasibility::{feasible_power, FeasibilityProblem, SubframeAssignment, SubframeModel};
use crate::cvxcore::p4::{solve_p4, P4Options};
use crate::error::Result;
use crate::kpi;
use crate::result::{Diagnostics, SolveResult};
use crate::scenario::{Scenario, ServiceType};
use crate::vosmetric;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaOptions {
    /// Stop when one SCA round improves the objective by less than this.
    pub eps_bar: f64,
    pub max_iters: usize,
    pub p4: P4Options,
    /// Try an LP anchor that lifts every service just above its threshold
    /// when the fixed-power anchor leaves some below range.
    pub recovery: bool,
    /// Cap on full sweeps of the swap search.
    pub max_sweeps: usize,
}

impl Default for ScaOptions {
    fn default() -> Self {
        Self { eps_bar: 1e-4, max_iters: 50, p4: P4Options::default(), recovery: true, max_sweeps: 20 }
    }
}

/// Distance-proportional powers of the BS-powered users on RB (m, n); the
/// denominator runs over the whole sub-frame.
pub fn fixed_power_rb(a: &Assignment, m: usize, n: usize, sc: &Scenario) -> Vec<(usize, f64)> {
    let denom: f64 = a.users_in_subframe(n).into_iter().filter(|&k| sc.bs_powered(k)).map(|k| sc.users[k].distance).sum();
    a.users_in(m, n)
        .into_iter()
        .filter(|&k| sc.bs_powered(k))
        .map(|k| (k, if denom > 0.0 { sc.users[k].distance * sc.params.p_max / denom } else { 0.0 }))
        .collect()
}

/// Distance-proportional powers for the whole assignment.
pub fn fixed_power(a: &Assignment, sc: &Scenario) -> PowerAlloc {
    let mut p = PowerAlloc::zeros(sc.num_users());
    for n in 0..sc.grid.sub_frames {
        for m in 0..sc.grid.sub_bands {
            for (k, v) in fixed_power_rb(a, m, n, sc) {
                p.p[k] = v;
            }
        }
    }
    p
}

/// Distance-proportional normalized powers of one sub-frame, raised in
/// index order until every NOMA ordering constraint holds and rescaled to
/// the budget if needed.
pub fn repaired_anchor(model: &SubframeModel) -> Vec<f64> {
    let sc = model.sc;
    let d: f64 = model.powered.iter().map(|&k| sc.users[k].distance).sum();
    let mut x: Vec<f64> = model.powered.iter().map(|&k| sc.users[k].distance / d).collect();
    let n = model.sub.n;
    for m in 0..sc.grid.sub_bands {
        let comm: Vec<(usize, usize)> = model
            .slots_in(m)
            .into_iter()
            .filter(|&i| sc.service(model.sub.slots[i].0) == ServiceType::Comm)
            .map(|i| (model.sub.slots[i].0, model.var(i).unwrap()))
            .collect();
        for (qi, &(q, vq)) in comm.iter().enumerate() {
            for &(k, _) in &comm {
                let ckq = sc.chi_c(k, q, m, n);
                for &(j, vj) in &comm[..qi] {
                    let need = x[vj] * sc.chi_c(k, j, m, n) / ckq;
                    if need > x[vq] {
                        x[vq] = need;
                    }
                }
            }
        }
    }
    let total: f64 = x.iter().sum();
    if total > 1.0 {
        x.iter_mut().for_each(|v| *v /= total);
    }
    x
}

/// SCA outcome for one sub-frame.
#[derive(Clone, Debug, PartialEq)]
pub struct SubframeSca {
    /// Normalized powers of the model's powered users.
    pub x: Vec<f64>,
    pub objective: f64,
    pub trace: Vec<f64>,
    pub iterations: usize,
    /// Whether the recovery LP supplied the anchor.
    pub recovered: bool,
}

/// Runs SCA on one sub-frame from the repaired fixed-power anchor.
pub fn sca_subframe(model: &SubframeModel, opts: &ScaOptions) -> Result<SubframeSca> {
    let sc = model.sc;
    if model.powered.is_empty() {
        let obj = model.objective_at_powers(&[]);
        return Ok(SubframeSca { x: vec![], objective: obj, trace: vec![obj], iterations: 0, recovered: false });
    }
    let mut x = repaired_anchor(model);
    let mut obj = model.objective_at_powers(&x);
    let mut recovered = false;
    if opts.recovery {
        let z = model.induced_z(&x);
        let mut targets = Vec::with_capacity(z.len());
        let mut below = false;
        for (i, &(k, m)) in model.sub.slots.iter().enumerate() {
            let (lo, hi) = vosmetric::weighted_snr_range(sc, k, m)?;
            if hi > lo {
                below |= z[i] <= lo;
                targets.push(lo * (1.0 + 1e-6) + 1e-12);
            } else {
                targets.push(0.0);
            }
        }
        if below {
            let out = feasible_power(&FeasibilityProblem { model: model.clone(), z: targets })?;
            if let Some(p) = out.powers {
                let xl: Vec<f64> = p.iter().map(|v| v / sc.params.p_max).collect();
                let ol = model.objective_at_powers(&xl);
                if ol > obj {
                    x = xl;
                    obj = ol;
                    recovered = true;
                }
            }
        }
    }
    let mut trace = vec![obj];
    let mut iterations = 0;
    while iterations < opts.max_iters {
        iterations += 1;
        let z = model.induced_z(&x);
        let sol = solve_p4(model, &x, &z, &opts.p4)?;
        if sol.objective <= obj {
            break;
        }
        let gain = sol.objective - obj;
        x = sol.x;
        obj = sol.objective;
        trace.push(obj);
        if gain < opts.eps_bar {
            break;
        }
    }
    Ok(SubframeSca { x, objective: obj, trace, iterations, recovered })
}

/// Memo of SCA results keyed by sub-frame assignment.
#[derive(Default)]
pub struct ScaCache {
    map: HashMap<SubframeAssignment, SubframeSca>,
}

impl ScaCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&mut self, sc: &Scenario, sub: SubframeAssignment, opts: &ScaOptions) -> Result<&SubframeSca> {
        if !self.map.contains_key(&sub) {
            let res = sca_subframe(&SubframeModel::new(sc, sub.clone()), opts)?;
            self.map.insert(sub.clone(), res);
        }
        Ok(&self.map[&sub])
    }
}

/// SCA over every sub-frame of an assignment.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaOutcome {
    pub powers: PowerAlloc,
    /// Sum over sub-frames of the per-iteration objectives.
    pub trace: Vec<f64>,
    pub iterations: usize,
}

fn assemble(sc: &Scenario, a: &Assignment, cache: &mut ScaCache, opts: &ScaOptions) -> Result<ScaOutcome> {
    let mut powers = PowerAlloc::zeros(sc.num_users());
    let mut traces = Vec::new();
    let mut iterations = 0;
    for n in 0..sc.grid.sub_frames {
        let sub = SubframeAssignment::from_assignment(a, n);
        let model = SubframeModel::new(sc, sub.clone());
        let r = cache.get(sc, sub, opts)?;
        for (j, &k) in model.powered.iter().enumerate() {
            powers.p[k] = r.x[j] * sc.params.p_max;
        }
        iterations = iterations.max(r.iterations);
        traces.push(r.trace.clone());
    }
    let len = traces.iter().map(Vec::len).max().unwrap_or(1);
    let trace = (0..len).map(|i| traces.iter().map(|t| t[i.min(t.len() - 1)]).sum()).collect();
    Ok(ScaOutcome { powers, trace, iterations })
}

/// SCA power allocation for a fixed assignment.
pub fn sca_power(a: &Assignment, sc: &Scenario, opts: &ScaOptions) -> Result<ScaOutcome> {
    assemble(sc, a, &mut ScaCache::new(), opts)
}

/// Floored log-value of the users in `users` on RB (m, n) under fixed
/// power for the tentative assignment `a`.
fn rb_value(sc: &Scenario, a: &Assignment, m: usize, n: usize, users: &[usize]) -> Result<f64> {
    let mut p = PowerAlloc::zeros(sc.num_users());
    for mm in 0..sc.grid.sub_bands {
        for (k, v) in fixed_power_rb(a, mm, n, sc) {
            p.p[k] = v;
        }
    }
    let mut total = 0.0;
    for &q in users {
        let z = match sc.service(q) {
            ServiceType::Comm => kpi::comm_sinr(a, &p, m, n, q, sc)?,
            ServiceType::Pos => kpi::pos_snr(a, &p, m, n, q, sc)?,
            ServiceType::Sense => kpi::sense_snr(a, &p, m, n, q, sc)?,
        };
        total += vosmetric::user_log_terms(sc, q, m, n, z).0;
    }
    Ok(total)
}

/// Counters of the prioritized assignment.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AssignmentStats {
    /// Loop iterations per capacity phase.
    pub iterations: Vec<usize>,
    /// Users placed by the final fallback pass.
    pub fallback: Vec<usize>,
}

/// VoS-prioritized assignment under distance-based fixed power.
pub fn vos_prioritized_assignment(sc: &Scenario, seed: u64) -> Result<Assignment> {
    vos_prioritized_assignment_with_stats(sc, seed).map(|r| r.0)
}

/// [`vos_prioritized_assignment`] with loop counters.
pub fn vos_prioritized_assignment_with_stats(sc: &Scenario, seed: u64) -> Result<(Assignment, AssignmentStats)> {
    let k_total = sc.num_users();
    let (m_bands, frames) = (sc.grid.sub_bands, sc.grid.sub_frames);
    let rbs = m_bands * frames;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = Assignment::for_scenario(sc);
    let mut unmatched: Vec<usize> = (0..k_total).collect();
    let mut stats = AssignmentStats::default();
    for cap in 1..=sc.params.a_max {
        // Available RBs per user, as flat indices m·N + n.
        let mut avail = vec![vec![true; rbs]; k_total];
        let mut stuck = vec![false; k_total];
        let floor = k_total.saturating_sub(cap * rbs);
        let mut iters = 0;
        while unmatched.len() > floor {
            let candidates: Vec<usize> = unmatched.iter().copied().filter(|&k| !stuck[k]).collect();
            if candidates.is_empty() {
                break;
            }
            iters += 1;
            let k = candidates[rng.random_range(0..candidates.len())];
            // Per RB: (value, resulting RB set, user returned to the pool).
            let mut best: Option<(f64, usize, Vec<usize>, Option<usize>)> = None;
            for rb in 0..rbs {
                let (m, n) = (rb / frames, rb % frames);
                if !avail[k][rb] {
                    continue;
                }
                let current = a.users_in(m, n);
                let (value, set, out) = if current.len() < cap {
                    let mut t = a.clone();
                    t.assign(k, m, n);
                    let mut set = current.clone();
                    set.push(k);
                    set.sort_unstable();
                    (rb_value(sc, &t, m, n, &set)?, set, None)
                } else {
                    let keep = rb_value(sc, &a, m, n, &current)?;
                    let mut swap: Option<(f64, usize, Vec<usize>)> = None;
                    for &j in &current {
                        let mut t = a.clone();
                        t.unassign(j);
                        t.assign(k, m, n);
                        let mut set: Vec<usize> = current.iter().copied().filter(|&q| q != j).collect();
                        set.push(k);
                        set.sort_unstable();
                        let v = rb_value(sc, &t, m, n, &set)?;
                        if swap.as_ref().is_none_or(|s| v > s.0) {
                            swap = Some((v, j, set));
                        }
                    }
                    let (vj, j, set) = swap.expect("full RB holds at least one user");
                    if keep > vj {
                        avail[k][rb] = false;
                        (f64::NEG_INFINITY, current, None)
                    } else {
                        avail[j][rb] = false;
                        (vj, set, Some(j))
                    }
                };
                if value > f64::NEG_INFINITY && best.as_ref().is_none_or(|b| value > b.0) {
                    best = Some((value, rb, set, out));
                }
            }
            match best {
                None => stuck[k] = true,
                Some((_, rb, _, out)) => {
                    let (m, n) = (rb / frames, rb % frames);
                    if let Some(j) = out {
                        a.unassign(j);
                        unmatched.push(j);
                    }
                    a.assign(k, m, n);
                    unmatched.retain(|&u| u != k);
                    unmatched.sort_unstable();
                }
            }
        }
        stats.iterations.push(iters);
    }
    // Users left over while capacity remains go to the best non-full RB.
    for k in unmatched.clone() {
        let mut best: Option<(f64, usize, usize)> = None;
        for m in 0..m_bands {
            for n in 0..frames {
                if a.count(m, n) >= sc.params.a_max {
                    continue;
                }
                let mut t = a.clone();
                t.assign(k, m, n);
                let v = rb_value(sc, &t, m, n, &t.users_in(m, n))?;
                if best.is_none_or(|b| v > b.0) {
                    best = Some((v, m, n));
                }
            }
        }
        if let Some((_, m, n)) = best {
            a.assign(k, m, n);
            stats.fallback.push(k);
        }
    }
    Ok((a, stats))
}

/// Swap search with SCA re-optimization of the affected sub-frames.
pub fn swap_refine(a0: &Assignment, sc: &Scenario, opts: &ScaOptions, seed: u64) -> Result<SolveResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cache = ScaCache::new();
    let mut a = a0.clone();
    let frames = sc.grid.sub_frames;
    let rbs = sc.grid.sub_bands * frames;
    let frame_value = |cache: &mut ScaCache, a: &Assignment, n: usize| -> Result<f64> {
        Ok(cache.get(sc, SubframeAssignment::from_assignment(a, n), opts)?.objective)
    };
    let mut values: Vec<f64> = (0..frames).map(|n| frame_value(&mut cache, &a, n)).collect::<Result<_>>()?;
    let mut accepted = 0;
    let mut sweeps = 0;
    while sweeps < opts.max_sweeps {
        sweeps += 1;
        let mut proposals: Vec<(usize, usize)> = (0..sc.num_users())
            .filter(|&k| a.rb_of(k).is_some())
            .flat_map(|k| (0..rbs).map(move |rb| (k, rb)))
            .collect();
        proposals.shuffle(&mut rng);
        let mut any = false;
        for (k, rb) in proposals {
            let target = (rb / frames, rb % frames);
            let Some(src) = a.rb_of(k) else { continue };
            if src == target {
                continue;
            }
            let mut candidates = Vec::new();
            if a.count(target.0, target.1) < sc.params.a_max {
                let mut t = a.clone();
                t.assign(k, target.0, target.1);
                candidates.push(t);
            } else {
                for j in a.users_in(target.0, target.1) {
                    let mut t = a.clone();
                    t.assign(k, target.0, target.1);
                    t.assign(j, src.0, src.1);
                    candidates.push(t);
                }
            }
            let frames_hit: Vec<usize> = if src.1 == target.1 { vec![src.1] } else { vec![src.1, target.1] };
            let before: f64 = frames_hit.iter().map(|&n| values[n]).sum();
            let mut best: Option<(f64, Assignment, Vec<f64>)> = None;
            for t in candidates {
                let vals: Vec<f64> = frames_hit.iter().map(|&n| frame_value(&mut cache, &t, n)).collect::<Result<_>>()?;
                let after: f64 = vals.iter().sum();
                if after > before + 1e-9 && best.as_ref().is_none_or(|b| after > b.0) {
                    best = Some((after, t, vals));
                }
            }
            if let Some((_, t, vals)) = best {
                for (&n, v) in frames_hit.iter().zip(vals) {
                    values[n] = v;
                }
                a = t;
                accepted += 1;
                any = true;
            }
        }
        if !any {
            break;
        }
    }
    let out = assemble(sc, &a, &mut cache, opts)?;
    let diag = Diagnostics {
        certified: false,
        iterations: out.iterations,
        notes: vec![format!("{accepted} swaps accepted over {sweeps} sweeps")],
        ..Default::default()
    };
    SolveResult::evaluate("VoS-SCA", sc, &a, &out.powers, diag)
}
