//! Acceptance checks for the primary criteria, one PASS/FAIL line each.
//!
//! Runs without the libtest harness so that the summary lines are always
//! printed. Pass criterion numbers as arguments to run a subset, e.g.
//! `cargo test --test acceptance -- 5 7`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::Instant;

use nalgebra::{Complex, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vos_mdma::assignment::Assignment;
use vos_mdma::cvxcore::dc::{convexified, dc_eval, dc_terms, taylor_lower_bound, OwnSignal};
use vos_mdma::cvxcore::{solve_p4, P4Options, SubframeAssignment, SubframeModel};
use vos_mdma::harness::stats::spearman;
use vos_mdma::harness::{random_assignment, sweep, write_table, Algo, ExperimentConfig, RunOptions, SweepTable};
use vos_mdma::kpi;
use vos_mdma::modp::{modp_solve, ModpOptions};
use vos_mdma::sca::{fixed_power, repaired_anchor, sca_power, vos_prioritized_assignment, ScaOptions};
use vos_mdma::scenario::{Direction, KpiSpec};
use vos_mdma::vosmetric::{self, LogValue};
use vos_mdma::{generate, Scenario, ScenarioConfig, ServiceType, SinrVector};

struct Outcome {
    pass: bool,
    detail: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Self { pass: true, detail: Vec::new() }
    }

    fn check(&mut self, ok: bool, msg: String) {
        if !ok {
            self.pass = false;
        }
        self.detail.push(format!("{} {msg}", if ok { "ok  " } else { "FAIL" }));
    }

    fn note(&mut self, msg: String) {
        self.detail.push(format!("     {msg}"));
    }
}

fn out_dir(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name)
}

fn cfg_with(comm: usize, pos: usize, sense: usize, m: usize, n: usize, a_max: usize) -> ScenarioConfig {
    let mut c = ScenarioConfig::default();
    (c.comm_users, c.pos_users, c.sense_users) = (comm, pos, sense);
    c.grid.sub_bands = m;
    c.grid.sub_frames = n;
    c.a_max = a_max;
    c
}

// ---------------------------------------------------------------------------
// 1. MODP against exhaustive assignment enumeration with a power grid.

const GRID: usize = 200;

/// Best floored sub-frame objective over the grid x_j ∈ {0, 1/199, …, 1}
/// with Σx ≤ 1 and the NOMA ordering rows.
fn grid_subframe(sc: &Scenario, sub: SubframeAssignment) -> f64 {
    let model = SubframeModel::new(sc, sub);
    let rows = model.fairness_rows();
    let d = model.powered.len();
    let mut best = f64::NEG_INFINITY;
    let mut idx = vec![0usize; d];
    let step = 1.0 / (GRID - 1) as f64;
    loop {
        let used: usize = idx.iter().sum();
        if used < GRID {
            let x: Vec<f64> = idx.iter().map(|&i| i as f64 * step).collect();
            let fair = rows.iter().all(|r| {
                let lhs: f64 = r.coef.iter().map(|(v, c)| c * x[*v]).sum();
                let mag: f64 = r.coef.iter().map(|(v, c)| (c * x[*v]).abs()).sum();
                lhs >= r.rhs - 1e-12 * mag
            });
            if fair {
                best = best.max(model.objective_at_powers(&x));
            }
        }
        // Odometer over the simplex grid.
        let mut j = 0;
        loop {
            if j == d {
                return best;
            }
            idx[j] += 1;
            if idx.iter().sum::<usize>() < GRID {
                break;
            }
            idx[j] = 0;
            j += 1;
        }
    }
}

fn exhaustive(sc: &Scenario) -> f64 {
    let k = sc.num_users();
    let (bands, frames) = (sc.grid.sub_bands, sc.grid.sub_frames);
    let rbs = bands * frames;
    let mut memo: HashMap<SubframeAssignment, f64> = HashMap::new();
    let mut best = f64::NEG_INFINITY;
    for code in 0..rbs.pow(k as u32) {
        let mut a = Assignment::for_scenario(sc);
        let mut c = code;
        for u in 0..k {
            let rb = c % rbs;
            c /= rbs;
            a.assign(u, rb / frames, rb % frames);
        }
        if (0..bands).any(|m| (0..frames).any(|n| a.count(m, n) > sc.params.a_max)) {
            continue;
        }
        let mut total = 0.0;
        for n in 0..frames {
            let sub = SubframeAssignment::from_assignment(&a, n);
            let v = *memo.entry(sub.clone()).or_insert_with(|| grid_subframe(sc, sub));
            total += v;
        }
        best = best.max(total);
    }
    best
}

fn criterion_1() -> Outcome {
    let mut o = Outcome::new();
    let start = Instant::now();
    let comps = [(1, 1, 1), (2, 1, 0), (1, 0, 1), (2, 0, 1), (1, 2, 0), (0, 1, 1), (3, 0, 0), (1, 1, 0), (0, 2, 1), (2, 0, 0)];
    let opts = ModpOptions::default();
    let mut worst: f64 = 0.0;
    let mut fails = 0;
    let mut uncertified = 0;
    for i in 0..30u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + i);
        let (c, p, s) = comps[i as usize % comps.len()];
        let k = c + p + s;
        let (m, n, a_max) = loop {
            let t = (rng.random_range(1..=2), rng.random_range(1..=2), rng.random_range(1..=2));
            if k <= t.0 * t.1 * t.2 {
                break t;
            }
        };
        let mut cfg = cfg_with(c, p, s, m, n, a_max);
        cfg.p_max_dbm = rng.random_range(15.0..35.0);
        let sc = generate(&cfg, 500 + i).unwrap();
        let res = modp_solve(&sc, &opts, None).unwrap();
        let oracle = exhaustive(&sc);
        let slack = res.log_objective - (oracle - opts.eps * oracle.abs());
        let ok = slack >= -1e-9;
        if !res.diagnostics.certified {
            uncertified += 1;
        }
        if !ok {
            fails += 1;
            o.note(format!("instance {i}: MODP {:.6} oracle {:.6}", res.log_objective, oracle));
        }
        worst = worst.max(oracle - res.log_objective);
    }
    let secs = start.elapsed().as_secs_f64();
    o.check(fails == 0, format!("30 instances, {fails} outside the (1+ε) band, largest shortfall vs oracle {worst:.3e}"));
    o.note(format!("{uncertified} MODP runs without a certificate"));
    o.check(secs < 600.0, format!("runtime {secs:.1}s < 600s"));
    o
}

// ---------------------------------------------------------------------------
// 2–4. Sweep trends.

fn run_sweep(cfg: &ExperimentConfig, name: &str) -> (SweepTable, f64) {
    let start = Instant::now();
    let t = sweep(cfg, &RunOptions::default()).unwrap();
    write_table(&t, &out_dir(name)).unwrap();
    (t, start.elapsed().as_secs_f64())
}

fn print_table(o: &mut Outcome, t: &SweepTable, algos: &[Algo]) {
    let values: Vec<f64> = t.curve(algos[0]).iter().map(|c| c.0).collect();
    let mut head = format!("{:>14}", "");
    for v in &values {
        head += &format!(" {v:>13}");
    }
    o.note(head);
    for &a in algos {
        let mut line = format!("{:>14}", a.name());
        for c in t.curve(a) {
            line += &format!(" {:>13.5}", c.1);
        }
        o.note(line);
    }
}

/// Checks the Spearman correlation of every algorithm's mean curve.
fn trend(o: &mut Outcome, t: &SweepTable, algos: &[Algo], label: &str, increasing: bool) {
    for &a in algos {
        let c = t.curve(a);
        let (x, y): (Vec<f64>, Vec<f64>) = c.into_iter().unzip();
        let rho = spearman(&x, &y);
        let ok = if increasing { rho >= 0.9 } else { rho <= -0.9 };
        let want = if increasing { "≥ 0.9" } else { "≤ −0.9" };
        o.check(ok, format!("{label}: {} Spearman ρ = {rho:.3} ({want})", a.name()));
    }
}

fn dominates(o: &mut Outcome, t: &SweepTable, hi: Algo, lo: Algo, tol_rel: f64) {
    let mut bad = Vec::new();
    for (v, h) in t.curve(hi) {
        let l = t.cell(v, lo).unwrap().mean_log_objective;
        if h < l - tol_rel * h.abs() {
            bad.push(format!("{v}: {h:.5} < {l:.5}"));
        }
    }
    o.check(bad.is_empty(), format!("{} ≥ {} at every point {}", hi.name(), lo.name(), bad.join(", ")));
}

fn criterion_2() -> Outcome {
    let mut o = Outcome::new();
    let cfg = ExperimentConfig::fig4();
    let (t, secs) = run_sweep(&cfg, "fig4");
    print_table(&mut o, &t, &cfg.algorithms);
    trend(&mut o, &t, &cfg.algorithms, "P_max", true);
    // MODP is optimal up to its certificate.
    let eps = ModpOptions::default().eps;
    dominates(&mut o, &t, Algo::Modp, Algo::VosSca, eps);
    dominates(&mut o, &t, Algo::VosSca, Algo::VosFixed, 0.0);
    dominates(&mut o, &t, Algo::VosSca, Algo::RandomSca, 0.0);
    dominates(&mut o, &t, Algo::VosFixed, Algo::RandomFixed, 0.0);
    dominates(&mut o, &t, Algo::RandomSca, Algo::RandomFixed, 0.0);
    o.check(t.errors.is_empty(), format!("{} failed runs", t.errors.len()));
    o.check(secs < 1800.0, format!("{} trials, runtime {secs:.1}s < 1800s", cfg.trials));
    o
}

/// Trials for the elasticity sweeps, where VoS-SCA costs about a second per instance.
const HEURISTIC_TRIALS: usize = 20;

fn criterion_3() -> Outcome {
    let mut o = Outcome::new();
    for (name, mut cfg, label) in [("fig5", ExperimentConfig::fig5(), "α-cap"), ("fig6", ExperimentConfig::fig6(), "β-cap")] {
        cfg.trials = HEURISTIC_TRIALS;
        let (t, secs) = run_sweep(&cfg, name);
        o.note(format!("{label} sweep, {} trials, {secs:.1}s", cfg.trials));
        print_table(&mut o, &t, &cfg.algorithms);
        trend(&mut o, &t, &cfg.algorithms, label, false);
        for lo in [Algo::VosFixed, Algo::RandomSca, Algo::RandomFixed] {
            dominates(&mut o, &t, Algo::VosSca, lo, 0.0);
        }
        o.check(t.errors.is_empty(), format!("{label}: {} failed runs", t.errors.len()));
    }
    o
}

fn criterion_4() -> Outcome {
    let mut o = Outcome::new();
    // Both sweeps are cheap enough for the default trial count.
    let cfg = ExperimentConfig::fig7();
    let (t, secs) = run_sweep(&cfg, "fig7");
    o.note(format!("user-count sweep, {} trials, {secs:.1}s", cfg.trials));
    print_table(&mut o, &t, &cfg.algorithms);
    trend(&mut o, &t, &cfg.algorithms, "K", false);
    o.check(t.errors.is_empty(), format!("K: {} failed runs", t.errors.len()));

    let cfg = ExperimentConfig::fig8();
    let (t, secs) = run_sweep(&cfg, "fig8");
    o.note(format!("sub-band sweep, {} trials, {secs:.1}s", cfg.trials));
    print_table(&mut o, &t, &cfg.algorithms);
    trend(&mut o, &t, &cfg.algorithms, "M", true);
    for &a in &cfg.algorithms {
        let c = t.curve(a);
        let first = c[1].1 - c[0].1;
        let last = c[c.len() - 1].1 - c[c.len() - 2].1;
        o.check(first > 0.0 && last <= 0.5 * first, format!("M: {} first gain {first:.4}, last gain {last:.4} (≤ 50%)", a.name()));
    }
    o.check(t.errors.is_empty(), format!("M: {} failed runs", t.errors.len()));
    o
}

// ---------------------------------------------------------------------------
// 5. Closed-form identities.

fn criterion_5() -> Outcome {
    let mut o = Outcome::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);

    let worst = (0..100)
        .map(|_| {
            let pfa: f64 = rng.random_range(1e-4..0.999);
            (kpi::detect_prob(0.0, pfa) - pfa).abs()
        })
        .fold(0.0, f64::max);
    o.check(worst <= 1e-12, format!("detect_prob(0, P_FA) = P_FA on 100 samples, max err {worst:.2e}"));

    let worst = (0..100)
        .map(|_| {
            let p: f64 = rng.random_range(0.0..0.999);
            (kpi::chi2_cdf(kpi::chi2_inv(p).unwrap()) - p).abs()
        })
        .fold(0.0, f64::max);
    o.check(worst <= 1e-12, format!("chi-square round trip on 100 samples, max err {worst:.2e}"));

    // DC identity against products formed from the raw gains.
    let sc = generate(&cfg_with(3, 1, 2, 1, 1, 6), 55).unwrap();
    let sub = SubframeAssignment::new(0, (0..6).map(|k| (k, 0)).collect());
    let model = SubframeModel::new(&sc, sub);
    let terms = dc_terms(&model);
    let mut phys = Vec::new();
    for i in 0..model.sub.slots.len() {
        match sc.service(model.sub.slots[i].0) {
            ServiceType::Comm => phys.extend(model.comm_pairs(i).into_iter().map(|p| (i, p.0))),
            ServiceType::Sense => phys.push((i, model.sense_terms(i).0)),
            ServiceType::Pos => {}
        }
    }
    let ns = model.sub.slots.len();
    let np = model.powered.len();
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let mut v: Vec<f64> = (0..ns).map(|_| 10f64.powf(rng.random_range(-2.0..4.0))).collect();
        v.extend((0..np).map(|_| rng.random::<f64>()));
        let vals = dc_eval(&model, &terms, &v);
        let all: Vec<_> = {
            let (mut c, mut s) = (vals.comm.into_iter(), vals.sense.into_iter());
            terms.iter().map(|t| if matches!(t.own, OwnSignal::Power { .. }) { c.next() } else { s.next() }.unwrap()).collect()
        };
        for ((t, d), (slot, interf)) in terms.iter().zip(&all).zip(&phys) {
            assert_eq!(t.slot, *slot);
            let prod = v[*slot] * (interf.iter().map(|(j, g)| g * v[ns + j]).sum::<f64>() + 1.0);
            let got = 0.25 * (d.qa - d.qb) * t.scale;
            worst = worst.max((got - prod).abs() / prod.abs());
        }
    }
    o.check(worst <= 1e-9, format!("¼(Q^A − Q^B) = z·(Σ+σ) on 10⁴ points, max rel err {worst:.2e}"));

    let mut worst: f64 = 0.0;
    for seed in 0..50 {
        let sc = generate(&cfg_with(3, 2, 1, 2, 3, 2), seed).unwrap();
        let a = random_assignment(&sc, seed);
        let p = fixed_power(&a, &sc);
        for n in 0..sc.grid.sub_frames {
            let users: Vec<usize> = a.users_in_subframe(n).into_iter().filter(|&k| sc.bs_powered(k)).collect();
            if users.is_empty() {
                continue;
            }
            let s: f64 = users.iter().map(|&k| p.p[k]).sum();
            worst = worst.max((s - sc.params.p_max).abs() / sc.params.p_max);
        }
    }
    o.check(worst <= 1e-12, format!("fixed_power sub-frame sums equal P_max, max rel err {worst:.2e}"));

    let mut exact = true;
    for _ in 0..200 {
        let target = 10f64.powf(rng.random_range(-3.0..3.0));
        let alpha = rng.random_range(1e-3..2.0);
        let beta = rng.random_range(1e-3..0.999);
        let h = KpiSpec::new(Direction::High, target, alpha, beta, 1.0);
        let l = KpiSpec::new(Direction::Low, target, alpha, beta, 1.0);
        exact &= vosmetric::normalize(beta * target, &h) == 0.0 && vosmetric::normalize(target, &h) == 1.0;
        exact &= vosmetric::normalize(target, &l) == 1.0 && vosmetric::normalize(target / beta, &l) == 0.0;
    }
    o.check(exact, "normalize breakpoints exactly {0, 1} on 200 random specs".into());
    o
}

// ---------------------------------------------------------------------------
// 6. Monotonicity and concavity suites.

/// Largest second difference of `f` on `xs` (uniform spacing).
fn max_second_diff(f: impl Fn(f64) -> f64, xs: &[f64]) -> f64 {
    xs.windows(3).map(|w| f(w[0]) - 2.0 * f(w[1]) + f(w[2])).fold(f64::NEG_INFINITY, f64::max)
}

/// Largest decrease between consecutive points.
fn max_drop(f: impl Fn(f64) -> f64, xs: &[f64]) -> f64 {
    xs.windows(2).map(|w| f(w[0]) - f(w[1])).fold(f64::NEG_INFINITY, f64::max)
}

fn grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|i| a + (b - a) * i as f64 / n as f64).collect()
}

fn criterion_6() -> Outcome {
    let mut o = Outcome::new();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let tol = 1e-6;

    // Lemma 1, communication rate.
    let mut ok = true;
    for _ in 0..20 {
        let hi = 10f64.powf(rng.random_range(0.0..3.0));
        let xs = grid(hi * 1e-3, hi, 4000);
        ok &= max_drop(kpi::comm_rate, &xs) <= 0.0 && max_second_diff(kpi::comm_rate, &xs) <= tol;
    }
    o.check(ok, "rate concave and nondecreasing in z (20 ranges)".into());

    // Lemma 1, positioning CRBs.
    let base = generate(&ScenarioConfig::default(), 6).unwrap();
    let mut ok = true;
    for _ in 0..20 {
        let theta = rng.random_range(-PI / 3.0..PI / 3.0);
        let rho = 10f64.powf(rng.random_range(-6.0..-2.0));
        let c = kpi::crb_from_geometry(theta, rho, 0, &base.grid, &base.params).unwrap();
        let xs = grid(1e-2, 100.0, 4000);
        for sel in 0..3 {
            let f = |z: f64| {
                let q = kpi::pos_crb(z, &c);
                [q.0, q.1, q.2][sel]
            };
            // Convex: second differences nonnegative up to rounding.
            let min_sd = xs.windows(3).map(|w| f(w[0]) - 2.0 * f(w[1]) + f(w[2])).fold(f64::INFINITY, f64::min);
            let scale = f(xs[0]);
            ok &= max_drop(|z| -f(z), &xs) <= 0.0 && min_sd >= -tol * scale;
        }
    }
    o.check(ok, "CRBs convex and nonincreasing in z (20 geometries)".into());

    // Lemma 1, detection probability and the P_FA ≥ e^{-2} switch.
    let e2 = (-2f64).exp();
    let xs = grid(0.0, 40.0, 800);
    let (mut mono, mut conc_ok, mut conc_fails) = (true, true, true);
    for i in 0..40 {
        let pfa = if i % 2 == 0 { rng.random_range(e2..0.95) } else { rng.random_range(1e-3..0.1) };
        let f = |z: f64| kpi::detect_prob(z, pfa);
        mono &= max_drop(f, &xs) <= 0.0;
        let sd = max_second_diff(f, &xs);
        if pfa >= e2 {
            conc_ok &= sd <= tol;
        } else {
            conc_fails &= sd > tol;
        }
    }
    o.check(mono, "detection probability nondecreasing (40 P_FA values)".into());
    o.check(conc_ok, "concavity check passes for 20 P_FA ≥ e^{-2}".into());
    o.check(conc_fails, "concavity check fails for 20 P_FA < e^{-2}".into());

    // Lemma 2, normalization.
    let (mut mono, mut conc) = (true, true);
    for _ in 0..20 {
        let target = 10f64.powf(rng.random_range(-2.0..2.0));
        let alpha = rng.random_range(1e-3..1.0);
        let beta = rng.random_range(0.05..0.9);
        for dir in [Direction::High, Direction::Low] {
            let spec = KpiSpec::new(dir, target, alpha, beta, 1.0);
            let sign = if dir == Direction::High { 1.0 } else { -1.0 };
            let all = grid(target * 1e-3, 3.0 * target / beta, 6000);
            mono &= max_drop(|q| sign * vosmetric::normalize(q, &spec), &all) <= 0.0;
            let (a, b) = if dir == Direction::High { (beta * target, target) } else { (target, target / beta) };
            let inner = grid(a + (b - a) * 1e-3, b - (b - a) * 1e-3, 2000);
            let lv = |q: f64| match vosmetric::log_normalize(q, &spec) {
                LogValue::Finite(v) => v,
                LogValue::BelowRange => f64::NEG_INFINITY,
            };
            conc &= max_second_diff(lv, &inner) <= tol;
        }
    }
    o.check(mono, "normalize monotone for high and low KPIs (20 specs each)".into());
    o.check(conc, "log-normalize concave on the open middle segment (20 specs each)".into());

    // Theorem 2.
    let (mut mono, mut conc) = (true, true);
    for seed in 0..20 {
        let sc = generate(&cfg_with(3, 2, 2, 2, 2, 3), 600 + seed).unwrap();
        let a = random_assignment(&sc, seed);
        let l = |z: &[f64]| vosmetric::objective_l(&a, &SinrVector { z: z.to_vec() }, &sc).unwrap().floored;
        let zmin: Vec<f64> = (0..sc.num_users())
            .map(|k| {
                let (m, _) = a.rb_of(k).unwrap();
                vosmetric::z_min(&sc, k, m, true).unwrap()
            })
            .collect();
        for _ in 0..50 {
            let z: Vec<f64> = (0..sc.num_users()).map(|_| 10f64.powf(rng.random_range(-3.0..5.0))).collect();
            let mut z2 = z.clone();
            let k = rng.random_range(0..z.len());
            z2[k] *= 1.0 + rng.random::<f64>();
            mono &= l(&z2) >= l(&z);

            let pick = |rng: &mut ChaCha8Rng| -> Vec<f64> {
                zmin.iter().map(|&t| t * (1.0 + 1e-6) + 10f64.powf(rng.random_range(-3.0..3.0))).collect()
            };
            let (p, q) = (pick(&mut rng), pick(&mut rng));
            let mid: Vec<f64> = p.iter().zip(&q).map(|(x, y)| 0.5 * (x + y)).collect();
            conc &= l(&mid) >= 0.5 * (l(&p) + l(&q)) - tol;
        }
    }
    o.check(mono, "L componentwise nondecreasing (20 instances × 50 moves)".into());
    o.check(conc, "L midpoint-concave above z_min (20 instances × 50 segments)".into());
    o
}

// ---------------------------------------------------------------------------
// 7. FIM assembly and CRB inversion oracle.

/// Sums Re(∂ᵢỹ · conj(∂ⱼỹ)) over antennas, subcarriers and symbols for the
/// echo model ρ e^{j(φ + ℓ sin θ̄ + l ν̄ + b τ̄)} with θ̄ = −θ.
fn fim_triple_loop(theta: f64, rho: f64, b_count: usize, l_count: usize, tx: usize) -> DMatrix<f64> {
    let (phi, tau, nu) = (0.3, -0.7, 1.1);
    let tb = -theta;
    let mut j = DMatrix::zeros(5, 5);
    for ell in 0..tx {
        for b in 0..b_count {
            for l in 0..l_count {
                let psi = phi + ell as f64 * tb.sin() + l as f64 * nu + b as f64 * tau;
                let e = Complex::from_polar(1.0, psi);
                let jj = Complex::new(0.0, 1.0);
                let d = [
                    jj * rho * ell as f64 * tb.cos() * e,
                    jj * rho * b as f64 * e,
                    jj * rho * l as f64 * e,
                    e,
                    jj * rho * e,
                ];
                for r in 0..5 {
                    for c in 0..5 {
                        j[(r, c)] += d[r].re * d[c].re + d[r].im * d[c].im;
                    }
                }
            }
        }
    }
    j
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn criterion_7() -> Outcome {
    let mut o = Outcome::new();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let base = generate(&ScenarioConfig::default(), 7).unwrap();
    let (mut worst_j, mut worst_c): (f64, f64) = (0.0, 0.0);
    let (mut worst_df, mut worst_rho): (f64, f64) = (0.0, 0.0);
    for _ in 0..20 {
        let mut grid = base.grid.clone();
        let mut params = base.params.clone();
        grid.subcarriers = rng.random_range(2..=12);
        grid.symbols = rng.random_range(2..=12);
        params.antennas = rng.random_range(2..=8);
        let theta = rng.random_range(-PI / 3.0..PI / 3.0);
        let rho = 10f64.powf(rng.random_range(-6.0..0.0));
        let m = rng.random_range(0..3);

        let oracle = fim_triple_loop(theta, rho, grid.subcarriers, grid.symbols, params.antennas);
        let closed = kpi::fim_closed_form(theta, rho, grid.subcarriers, grid.symbols, params.antennas);
        let scale = oracle.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        for r in 0..5 {
            for c in 0..5 {
                worst_j = worst_j.max((oracle[(r, c)] - closed[(r, c)]).abs() / scale);
            }
        }

        let inv = oracle.clone().try_inverse().unwrap();
        let c0 = params.speed_of_light;
        let want = [
            0.5 * inv[(0, 0)],
            c0 * c0 / (32.0 * (PI * grid.subcarrier_spacing).powi(2)) * inv[(1, 1)],
            c0 * c0 / (32.0 * (PI * grid.symbol_duration * grid.freq(m)).powi(2)) * inv[(2, 2)],
        ];
        let got = kpi::crb_from_geometry(theta, rho, m, &grid, &params).unwrap();
        for (g, w) in [got.angle, got.distance, got.velocity].into_iter().zip(want) {
            worst_c = worst_c.max(rel(g, w));
        }

        let mut g2 = grid.clone();
        g2.subcarrier_spacing *= 2.0;
        let d2 = kpi::crb_from_geometry(theta, rho, m, &g2, &params).unwrap();
        worst_df = worst_df.max(rel(d2.distance, got.distance / 4.0));
        let r2 = kpi::crb_from_geometry(theta, 2.0 * rho, m, &grid, &params).unwrap();
        for (a, b) in [(r2.angle, got.angle), (r2.distance, got.distance), (r2.velocity, got.velocity)] {
            worst_rho = worst_rho.max(rel(a, b / 4.0));
        }
    }
    o.check(worst_j <= 1e-8, format!("closed-form J vs triple loop, max rel err {worst_j:.2e}"));
    o.check(worst_c <= 1e-8, format!("CRB constants vs 5×5 inversion, max rel err {worst_c:.2e}"));
    o.check(worst_df <= 1e-9, format!("Δf⁻² law, max rel err {worst_df:.2e}"));
    o.check(worst_rho <= 1e-9, format!("ρ⁻² law, max rel err {worst_rho:.2e}"));
    o
}

// ---------------------------------------------------------------------------
// 8. SCA contracts.

/// Value of the convex restriction at powers `x`: each active SNR is raised
/// to the largest value the restricted constraints allow. `None` when `x`
/// is infeasible.
fn restricted_value(model: &SubframeModel, v_anchor: &[f64], x: &[f64]) -> Option<f64> {
    let sc = model.sc;
    if x.iter().any(|&v| v < 0.0) || x.iter().sum::<f64>() > 1.0 + 1e-12 {
        return None;
    }
    for r in model.fairness_rows() {
        let lhs: f64 = r.coef.iter().map(|(v, c)| c * x[*v]).sum();
        if lhs < r.rhs {
            return None;
        }
    }
    let ns = model.sub.slots.len();
    let np = model.powered.len();
    let terms = dc_terms(model);
    let mut total = 0.0;
    for i in 0..ns {
        let (k, m) = model.sub.slots[i];
        let (lo, mut hi) = vosmetric::weighted_snr_range(sc, k, m).unwrap();
        if sc.service(k) == ServiceType::Pos {
            hi = hi.min(model.pos_gains(i).iter().map(|(v, g)| g * x[*v]).sum());
        }
        let feasible = |z: f64| {
            let mut v = vec![0.0; ns + np];
            v[i] = z;
            v[ns..].copy_from_slice(x);
            terms.iter().filter(|t| t.slot == i).all(|t| {
                if t.is_linear() {
                    z * t.u(&v, ns) <= t.own_value(&v, ns)
                } else {
                    let (c, d, e, f) = convexified(t, np, v_anchor);
                    let lin: f64 = c.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() + d;
                    0.25 * lin * lin + e.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() + f <= 0.0
                }
            })
        };
        let probe = lo + 1e-12 * lo.max(1.0);
        if !(hi > probe) || !feasible(probe) {
            return None;
        }
        let z = if feasible(hi) {
            hi
        } else {
            let (mut a, mut b) = (probe, hi);
            for _ in 0..200 {
                let mid = 0.5 * (a + b);
                if feasible(mid) {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            a
        };
        total += vosmetric::user_snr_log_derivs(sc, k, m, z)?.0;
    }
    Some(total)
}

/// Grid search over two power variables with three zoom rounds.
fn grid_p4(model: &SubframeModel, v_anchor: &[f64]) -> f64 {
    let (mut lo, mut hi) = ([0.0, 0.0], [1.0, 1.0]);
    let mut best = (f64::NEG_INFINITY, [0.0, 0.0]);
    for _ in 0..4 {
        let step = [(hi[0] - lo[0]) / (GRID - 1) as f64, (hi[1] - lo[1]) / (GRID - 1) as f64];
        for i in 0..GRID {
            for j in 0..GRID {
                let x = [lo[0] + i as f64 * step[0], lo[1] + j as f64 * step[1]];
                if let Some(v) = restricted_value(model, v_anchor, &x) {
                    if v > best.0 {
                        best = (v, x);
                    }
                }
            }
        }
        for d in 0..2 {
            lo[d] = (best.1[d] - 3.0 * step[d]).max(0.0);
            hi[d] = (best.1[d] + 3.0 * step[d]).min(1.0);
        }
    }
    best.0
}

fn criterion_8() -> Outcome {
    let mut o = Outcome::new();
    let mut rng = ChaCha8Rng::seed_from_u64(8);

    let (mut errors, mut bad) = (0, 0);
    for i in 0..100u64 {
        let mut cfg = cfg_with(
            rng.random_range(1..=3),
            rng.random_range(0..=2),
            rng.random_range(0..=2),
            rng.random_range(1..=2),
            rng.random_range(1..=3),
            rng.random_range(1..=3),
        );
        cfg.p_max_dbm = rng.random_range(10.0..40.0);
        let sc = generate(&cfg, 800 + i).unwrap();
        let a = if i % 2 == 0 { random_assignment(&sc, i) } else { vos_prioritized_assignment(&sc, i).unwrap() };
        match sca_power(&a, &sc, &ScaOptions::default()) {
            Ok(out) => {
                if out.trace.windows(2).any(|w| w[1] < w[0]) {
                    bad += 1;
                }
            }
            Err(e) => {
                errors += 1;
                o.note(format!("instance {i}: {e}"));
            }
        }
    }
    o.check(errors == 0 && bad == 0, format!("trace nondecreasing on 100 instances ({bad} decreasing, {errors} errors)"));

    let sc = generate(&cfg_with(3, 1, 2, 1, 1, 6), 88).unwrap();
    let model = SubframeModel::new(&sc, SubframeAssignment::new(0, (0..6).map(|k| (k, 0)).collect()));
    let terms = dc_terms(&model);
    let (ns, np) = (model.sub.slots.len(), model.powered.len());
    let mut violations = 0;
    let sample = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let mut v: Vec<f64> = (0..ns).map(|_| 10f64.powf(rng.random_range(-2.0..4.0))).collect();
        v.extend((0..np).map(|_| rng.random::<f64>()));
        v
    };
    for _ in 0..10_000 {
        let (anchor, q) = (sample(&mut rng), sample(&mut rng));
        let t = &terms[rng.random_range(0..terms.len())];
        let exact = {
            let z = q[t.slot];
            let u = t.u(&q, ns);
            (z - u) * (z - u)
        };
        if taylor_lower_bound(t, np, &anchor, &q) > exact + 1e-9 * exact.abs().max(1.0) {
            violations += 1;
        }
    }
    o.check(violations == 0, format!("Taylor lower bound never exceeds Q^B on 10⁴ points ({violations} violations)"));

    let mut found = 0;
    let mut worst: f64 = 0.0;
    let mut seed = 0u64;
    let comps = [(2, 0, 0), (1, 1, 0), (2, 0, 1), (1, 1, 1), (0, 2, 0)];
    while found < 20 && seed < 2000 {
        seed += 1;
        let (c, p, s) = comps[seed as usize % comps.len()];
        let mut cfg = cfg_with(c, p, s, 1, 1, 3);
        cfg.p_max_dbm = 10.0 + (seed % 7) as f64 * 5.0;
        let sc = generate(&cfg, 880 + seed).unwrap();
        let model = SubframeModel::new(&sc, SubframeAssignment::new(0, (0..c + p + s).map(|k| (k, 0)).collect()));
        let x0: Vec<f64> = repaired_anchor(&model).iter().map(|v| 0.6 * v).collect();
        let z0 = model.induced_z(&x0);
        let active = model.sub.slots.iter().zip(&z0).all(|(&(k, m), &z)| {
            let (lo, hi) = vosmetric::weighted_snr_range(&sc, k, m).unwrap();
            hi > lo && z > lo && z < hi
        });
        if !active {
            continue;
        }
        let sol = solve_p4(&model, &x0, &z0, &P4Options::default()).unwrap();
        let mut v_anchor: Vec<f64> = z0.clone();
        v_anchor.extend_from_slice(&x0);
        let oracle = grid_p4(&model, &v_anchor);
        let err = (sol.restricted_objective - oracle).abs() / oracle.abs().max(1e-12);
        if err > 1e-3 {
            o.note(format!("seed {seed}: solve_p4 {:.6} grid {:.6}", sol.restricted_objective, oracle));
        }
        worst = worst.max(err);
        found += 1;
    }
    o.check(found == 20 && worst <= 1e-3, format!("solve_p4 vs grid search on {found} two-variable instances, max rel err {worst:.2e}"));
    o
}

// ---------------------------------------------------------------------------
// 9. Determinism.

fn criterion_9() -> Outcome {
    let mut o = Outcome::new();
    let mut cfg = ExperimentConfig::fig4();
    cfg.values = vec![10.0, 30.0];
    cfg.trials = 3;
    let dirs = [out_dir("determinism/a"), out_dir("determinism/b")];
    for d in &dirs {
        let t = sweep(&cfg, &RunOptions::default()).unwrap();
        write_table(&t, d).unwrap();
    }
    for f in ["results.csv", "summary.csv"] {
        let a = std::fs::read(dirs[0].join(f)).unwrap();
        let b = std::fs::read(dirs[1].join(f)).unwrap();
        o.check(a == b && !a.is_empty(), format!("{f} byte-identical across two runs ({} bytes)", a.len()));
    }
    o
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 9] = [
        (1, "MODP vs exhaustive oracle", criterion_1),
        (2, "power budget trend and ordering", criterion_2),
        (3, "elasticity trends", criterion_3),
        (4, "user count and sub-band trends", criterion_4),
        (5, "closed-form identities", criterion_5),
        (6, "monotonicity and concavity suites", criterion_6),
        (7, "FIM/CRB oracle", criterion_7),
        (8, "SCA contracts", criterion_8),
        (9, "sweep determinism", criterion_9),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    let mut summary = Vec::new();
    for (id, name, f) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Outcome { pass: false, detail: vec![format!("FAIL panicked: {}", msg.unwrap_or_default())] }
        });
        let secs = start.elapsed().as_secs_f64();
        let line = format!("criterion {id} ({name}): {} [{secs:.1}s]", if outcome.pass { "PASS" } else { "FAIL" });
        println!("{line}");
        for d in &outcome.detail {
            println!("    {d}");
        }
        summary.push(line);
        if !outcome.pass {
            failed.push(id);
        }
    }
    println!("\nsummary");
    for s in &summary {
        println!("  {s}");
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
