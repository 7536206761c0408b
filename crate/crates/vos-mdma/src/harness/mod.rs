//! Baselines, Monte-Carlo sweeps and CSV persistence.
//!
//! A sweep runs every (sweep value, trial, algorithm) triple on a fresh
//! scenario seeded with `base_seed + trial`, so all algorithms of one trial
//! see the same instance. Results are written as one row per triple:
//!
//! | column | meaning |
//! |---|---|
//! | `sweep_var` | name of the swept parameter |
//! | `sweep_value` | its value |
//! | `trial` | trial index |
//! | `algo` | algorithm name |
//! | `log_objective` | floored log-objective (NaN if the run failed) |
//! | `product_vos` | product of all user VoS |
//! | `vos_comm_mean`, `vos_pos_mean`, `vos_sense_mean` | mean VoS per service type |
//! | `wall_ms` | solve time, 0 unless timing is enabled |
//! | `certified` | MODP certificate flag |
//!
//! Aggregates per (sweep value, algorithm) go to a separate summary table.

pub mod stats;

use std::fmt;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assignment::Assignment;
use crate::error::{Error, Result};
use crate::modp::{modp_solve, ModpOptions};
use crate::result::{Diagnostics, SolveResult};
use crate::sca::{fixed_power, sca_power, swap_refine, vos_prioritized_assignment, ScaOptions};
use crate::scenario::{generate, Scenario, ScenarioConfig, ServiceType};

/// The optimal solver and the four heuristics compared in the sweeps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Algo {
    #[serde(rename = "MODP")]
    Modp,
    #[serde(rename = "VoS-SCA")]
    VosSca,
    #[serde(rename = "VoS-Fixed")]
    VosFixed,
    #[serde(rename = "Random-SCA")]
    RandomSca,
    #[serde(rename = "Random-Fixed")]
    RandomFixed,
}

impl Algo {
    pub const ALL: [Algo; 5] = [Algo::Modp, Algo::VosSca, Algo::VosFixed, Algo::RandomSca, Algo::RandomFixed];
    pub const HEURISTICS: [Algo; 4] = [Algo::VosSca, Algo::VosFixed, Algo::RandomSca, Algo::RandomFixed];

    pub fn name(self) -> &'static str {
        match self {
            Algo::Modp => "MODP",
            Algo::VosSca => "VoS-SCA",
            Algo::VosFixed => "VoS-Fixed",
            Algo::RandomSca => "Random-SCA",
            Algo::RandomFixed => "Random-Fixed",
        }
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algo::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidInput(format!("unknown algorithm {s:?}; expected one of MODP, VoS-SCA, VoS-Fixed, Random-SCA, Random-Fixed")))
    }
}

/// Parameter varied by a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVar {
    /// Power budget in dBm.
    PMaxDbm,
    AlphaCap,
    BetaCap,
    /// Total user count, split equally across the three types.
    Users,
    SubBands,
}

impl SweepVar {
    pub fn name(self) -> &'static str {
        match self {
            SweepVar::PMaxDbm => "p_max_dbm",
            SweepVar::AlphaCap => "alpha_cap",
            SweepVar::BetaCap => "beta_cap",
            SweepVar::Users => "users",
            SweepVar::SubBands => "sub_bands",
        }
    }

    /// Writes `value` into a copy of `template`.
    pub fn apply(self, template: &ScenarioConfig, value: f64) -> Result<ScenarioConfig> {
        let mut c = template.clone();
        let count = |v: f64| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::InvalidInput(format!("{} needs a non-negative integer, got {v}", self.name())))
            }
        };
        match self {
            SweepVar::PMaxDbm => c.p_max_dbm = value,
            SweepVar::AlphaCap => c.alpha_cap = value,
            SweepVar::BetaCap => c.beta_cap = value,
            SweepVar::Users => {
                let k = count(value)?;
                if k % 3 != 0 {
                    return Err(Error::InvalidInput(format!("user count {k} does not split equally over three types")));
                }
                c.comm_users = k / 3;
                c.pos_users = k / 3;
                c.sense_users = k / 3;
            }
            SweepVar::SubBands => c.grid.sub_bands = count(value)?,
        }
        Ok(c)
    }
}

/// A full sweep: scenario template, swept parameter, algorithms and trials.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub template: ScenarioConfig,
    pub sweep_var: SweepVar,
    pub values: Vec<f64>,
    pub algorithms: Vec<Algo>,
    pub trials: usize,
    pub base_seed: u64,
    /// Directory receiving `results.csv` and `summary.csv`.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    fn preset(template: ScenarioConfig, sweep_var: SweepVar, values: Vec<f64>, algorithms: &[Algo]) -> Self {
        Self { template, sweep_var, values, algorithms: algorithms.to_vec(), trials: 50, base_seed: 2024, output: None }
    }

    /// Power budget sweep on 3 comm, 2 positioning and 1 sensing user,
    /// M = 1, N = 3, A_max = 2, with MODP.
    pub fn fig4() -> Self {
        Self::preset(ScenarioConfig::default(), SweepVar::PMaxDbm, vec![10.0, 16.0, 22.0, 28.0, 34.0, 40.0], &Algo::ALL)
    }

    fn fig56_template(alpha: f64, beta: f64) -> ScenarioConfig {
        let mut c = ScenarioConfig::default();
        (c.comm_users, c.pos_users, c.sense_users) = (6, 5, 4);
        c.grid.sub_bands = 2;
        c.grid.sub_frames = 3;
        c.a_max = 4;
        c.alpha_cap = alpha;
        c.beta_cap = beta;
        c
    }

    /// α-cap sweep on 6/5/4 users, M = 2, N = 3, A_max = 4, β-cap 0.2.
    pub fn fig5() -> Self {
        let values = (1..=9).map(|i| i as f64 / 10.0).collect();
        Self::preset(Self::fig56_template(0.3, 0.2), SweepVar::AlphaCap, values, &Algo::HEURISTICS)
    }

    /// β-cap sweep on the same instances with α-cap 0.3.
    pub fn fig6() -> Self {
        let values = (1..=5).map(|i| i as f64 / 10.0).collect();
        Self::preset(Self::fig56_template(0.3, 0.2), SweepVar::BetaCap, values, &Algo::HEURISTICS)
    }

    /// User-count sweep with equal type split, M = 3, N = 3, A_max = 6.
    pub fn fig7() -> Self {
        let mut c = ScenarioConfig::default();
        c.grid.sub_bands = 3;
        c.grid.sub_frames = 3;
        c.a_max = 6;
        Self::preset(c, SweepVar::Users, vec![3.0, 6.0, 9.0, 12.0], &Algo::HEURISTICS)
    }

    /// Sub-band sweep on 3/3/3 users, N = 2, A_max = 3, α-cap 0.8, β-cap 0.1.
    pub fn fig8() -> Self {
        let mut c = ScenarioConfig::default();
        (c.comm_users, c.pos_users, c.sense_users) = (3, 3, 3);
        c.grid.sub_frames = 2;
        c.a_max = 3;
        c.alpha_cap = 0.8;
        c.beta_cap = 0.1;
        Self::preset(c, SweepVar::SubBands, vec![2.0, 3.0, 4.0, 5.0, 6.0], &Algo::HEURISTICS)
    }

    /// Looks up a preset by name (`fig4` … `fig8`).
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "fig4" => Ok(Self::fig4()),
            "fig5" => Ok(Self::fig5()),
            "fig6" => Ok(Self::fig6()),
            "fig7" => Ok(Self::fig7()),
            "fig8" => Ok(Self::fig8()),
            _ => Err(Error::InvalidInput(format!("unknown preset {name:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidInput("trial count must be at least 1".into()));
        }
        if self.values.is_empty() || self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("sweep values must be finite and non-empty".into()));
        }
        if self.values.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidInput("sweep values must be sorted".into()));
        }
        if self.algorithms.is_empty() {
            return Err(Error::InvalidInput("no algorithms selected".into()));
        }
        for &v in &self.values {
            self.sweep_var.apply(&self.template, v)?.validate()?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_reader(File::open(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        serde_json::to_writer_pretty(File::create(path)?, self)?;
        Ok(())
    }
}

/// Solver settings shared by every run of a sweep.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RunOptions {
    pub modp: ModpOptions,
    pub sca: ScaOptions,
    /// Record wall-clock times. Off by default so that output is
    /// reproducible byte for byte.
    pub timing: bool,
}

/// Places users in index order on uniformly drawn RBs, redrawing while the
/// drawn RB is full. Users that find no room stay unassigned.
pub fn random_assignment(sc: &Scenario, seed: u64) -> Assignment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = Assignment::for_scenario(sc);
    let (m_bands, frames) = (sc.grid.sub_bands, sc.grid.sub_frames);
    let rbs = m_bands * frames;
    for k in 0..sc.num_users() {
        let free = (0..rbs).filter(|&rb| a.count(rb / frames, rb % frames) < sc.params.a_max).count();
        if free == 0 {
            break;
        }
        loop {
            let rb = rng.random_range(0..rbs);
            if a.count(rb / frames, rb % frames) < sc.params.a_max {
                a.assign(k, rb / frames, rb % frames);
                break;
            }
        }
    }
    a
}

/// Runs one algorithm on one scenario. `seed` drives the randomized parts
/// (assignment order, random placement, swap proposals).
pub fn run_algorithm(algo: Algo, sc: &Scenario, seed: u64, opts: &RunOptions) -> Result<SolveResult> {
    let start = Instant::now();
    let mut res = match algo {
        Algo::Modp => modp_solve(sc, &opts.modp, None)?,
        Algo::VosSca => {
            let a = vos_prioritized_assignment(sc, seed)?;
            swap_refine(&a, sc, &opts.sca, seed)?
        }
        Algo::VosFixed => {
            let a = vos_prioritized_assignment(sc, seed)?;
            SolveResult::evaluate(algo.name(), sc, &a, &fixed_power(&a, sc), Diagnostics::default())?
        }
        Algo::RandomSca => {
            let a = random_assignment(sc, seed);
            let out = sca_power(&a, sc, &opts.sca)?;
            let diag = Diagnostics { iterations: out.iterations, ..Default::default() };
            SolveResult::evaluate(algo.name(), sc, &a, &out.powers, diag)?
        }
        Algo::RandomFixed => {
            let a = random_assignment(sc, seed);
            SolveResult::evaluate(algo.name(), sc, &a, &fixed_power(&a, sc), Diagnostics::default())?
        }
    };
    res.algo = algo.name().to_string();
    if opts.timing {
        res.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    }
    Ok(res)
}

/// One CSV row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub sweep_var: String,
    pub sweep_value: f64,
    pub trial: usize,
    pub algo: String,
    pub log_objective: f64,
    pub product_vos: f64,
    pub vos_comm_mean: f64,
    pub vos_pos_mean: f64,
    pub vos_sense_mean: f64,
    pub wall_ms: f64,
    pub certified: bool,
}

/// Mean and spread of one (sweep value, algorithm) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub sweep_var: String,
    pub sweep_value: f64,
    pub algo: String,
    /// Rows with a finite objective.
    pub trials: usize,
    pub failures: usize,
    pub mean_log_objective: f64,
    pub stderr_log_objective: f64,
    pub geomean_product_vos: f64,
}

/// Rows and aggregates of a sweep, plus the errors of failed runs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<Row>,
    pub aggregates: Vec<Aggregate>,
    pub errors: Vec<String>,
}

impl SweepTable {
    /// Aggregate of one cell, if present.
    pub fn cell(&self, value: f64, algo: Algo) -> Option<&Aggregate> {
        self.aggregates.iter().find(|g| g.sweep_value == value && g.algo == algo.name())
    }

    /// Mean log-objective of `algo` at every sweep value, in sweep order.
    pub fn curve(&self, algo: Algo) -> Vec<(f64, f64)> {
        self.aggregates.iter().filter(|g| g.algo == algo.name()).map(|g| (g.sweep_value, g.mean_log_objective)).collect()
    }
}

fn row_of(var: SweepVar, value: f64, trial: usize, algo: Algo, res: &Result<SolveResult>) -> Row {
    let mut row = Row {
        sweep_var: var.name().to_string(),
        sweep_value: value,
        trial,
        algo: algo.name().to_string(),
        log_objective: f64::NAN,
        product_vos: f64::NAN,
        vos_comm_mean: f64::NAN,
        vos_pos_mean: f64::NAN,
        vos_sense_mean: f64::NAN,
        wall_ms: 0.0,
        certified: false,
    };
    if let Ok(r) = res {
        row.log_objective = r.log_objective;
        row.product_vos = r.product_vos;
        row.vos_comm_mean = r.mean_vos(ServiceType::Comm);
        row.vos_pos_mean = r.mean_vos(ServiceType::Pos);
        row.vos_sense_mean = r.mean_vos(ServiceType::Sense);
        row.wall_ms = r.wall_ms;
        row.certified = r.diagnostics.certified;
    }
    row
}

/// Runs the sweep. Failed runs leave a NaN row and an entry in `errors`.
pub fn sweep(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<SweepTable> {
    cfg.validate()?;
    let mut table = SweepTable::default();
    for &value in &cfg.values {
        let sc_cfg = cfg.sweep_var.apply(&cfg.template, value)?;
        for trial in 0..cfg.trials {
            let seed = cfg.base_seed + trial as u64;
            let sc = generate(&sc_cfg, seed);
            for &algo in &cfg.algorithms {
                let res = sc.as_ref().map_err(|e| Error::InvalidInput(e.to_string())).and_then(|sc| run_algorithm(algo, sc, seed, opts));
                if let Err(e) = &res {
                    table.errors.push(format!("{}={value} trial {trial} {algo}: {e}", cfg.sweep_var.name()));
                }
                table.rows.push(row_of(cfg.sweep_var, value, trial, algo, &res));
            }
        }
    }
    table.aggregates = aggregate(&table.rows);
    Ok(table)
}

/// Groups rows by (sweep value, algorithm) in first-appearance order.
pub fn aggregate(rows: &[Row]) -> Vec<Aggregate> {
    let mut keys: Vec<(String, f64, String)> = Vec::new();
    for r in rows {
        let key = (r.sweep_var.clone(), r.sweep_value, r.algo.clone());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(var, value, algo)| {
            let cell: Vec<&Row> = rows.iter().filter(|r| r.sweep_var == var && r.sweep_value == value && r.algo == algo).collect();
            let ok: Vec<&Row> = cell.iter().copied().filter(|r| r.log_objective.is_finite()).collect();
            let logs: Vec<f64> = ok.iter().map(|r| r.log_objective).collect();
            let prods: Vec<f64> = ok.iter().map(|r| r.product_vos).collect();
            let (mean, se) = stats::mean_stderr(&logs);
            Aggregate {
                sweep_var: var,
                sweep_value: value,
                algo,
                trials: ok.len(),
                failures: cell.len() - ok.len(),
                mean_log_objective: mean,
                stderr_log_objective: se,
                geomean_product_vos: stats::geometric_mean(&prods),
            }
        })
        .collect()
}

fn write_records<T: Serialize>(items: &[T], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for it in items {
        w.serialize(it)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_rows(rows: &[Row], path: &Path) -> Result<()> {
    write_records(rows, path)
}

pub fn write_aggregates(aggs: &[Aggregate], path: &Path) -> Result<()> {
    write_records(aggs, path)
}

pub fn read_rows(path: &Path) -> Result<Vec<Row>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<Row>, _>>()?;
    Ok(rows)
}

/// Writes `results.csv` and `summary.csv` into `dir`.
pub fn write_table(table: &SweepTable, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let (rows, summary) = (dir.join("results.csv"), dir.join("summary.csv"));
    write_rows(&table.rows, &rows)?;
    write_aggregates(&table.aggregates, &summary)?;
    Ok((rows, summary))
}
