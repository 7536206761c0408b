use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use vos_mdma::harness::{run_algorithm, sweep, write_table, Algo, ExperimentConfig, RunOptions};
use vos_mdma::modp::modp_solve;
use vos_mdma::{generate, Error, Result, Scenario, ScenarioConfig};

#[derive(Parser)]
#[command(name = "vos-mdma", version, about = "Value-of-Service resource allocation for multi-service MDMA")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Draw a scenario and write it as JSON.
    Generate {
        /// Scenario generation config (JSON). Defaults to the built-in config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Halve the positioning SNR (alternative noise convention).
        #[arg(long)]
        pos_snr_halved: bool,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve one scenario with one algorithm and print the result as JSON.
    Solve {
        /// Scenario JSON written by `generate`. When absent a scenario is
        /// drawn from `--config` and `--seed`.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "VoS-SCA")]
        algo: Algo,
        /// MODP polyblock tolerance.
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        pos_snr_halved: bool,
        /// Write MODP transition evaluations to stderr.
        #[arg(long)]
        trace: bool,
        #[arg(long)]
        timing: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a Monte-Carlo sweep and write results.csv and summary.csv.
    Sweep {
        /// Preset name (fig4 … fig8) or path to an experiment JSON.
        #[arg(long)]
        config: String,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        pos_snr_halved: bool,
        #[arg(long)]
        timing: bool,
        /// Output directory; overrides the config's `output`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the resolved experiment config to this path and exit.
        #[arg(long)]
        dump_config: Option<PathBuf>,
    },
    /// Solve a small instance with every algorithm and check basic invariants.
    Selftest,
}

fn load_config(path: Option<&Path>, halved: bool) -> Result<ScenarioConfig> {
    let mut cfg = match path {
        Some(p) => serde_json::from_reader(File::open(p)?)?,
        None => ScenarioConfig::default(),
    };
    cfg.pos_snr_halved |= halved;
    cfg.validate()?;
    Ok(cfg)
}

fn emit(json: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, json)?,
        None => println!("{json}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Generate { config, seed, pos_snr_halved, out } => {
            let cfg = load_config(config.as_deref(), pos_snr_halved)?;
            let sc = generate(&cfg, seed)?;
            for w in sc.warnings() {
                eprintln!("warning: {w}");
            }
            emit(&sc.to_json()?, out.as_deref())
        }
        Cmd::Solve { scenario, config, seed, algo, eps, pos_snr_halved, trace, timing, out } => {
            let sc = match scenario {
                Some(p) => Scenario::load(&p)?,
                None => generate(&load_config(config.as_deref(), pos_snr_halved)?, seed)?,
            };
            let mut opts = RunOptions { timing, ..Default::default() };
            if let Some(e) = eps {
                opts.modp.eps = e;
            }
            let res = if trace && algo == Algo::Modp {
                let stderr = io::stderr();
                let mut w = BufWriter::new(stderr.lock());
                let r = modp_solve(&sc, &opts.modp, Some(&mut w));
                w.flush()?;
                r?
            } else {
                run_algorithm(algo, &sc, seed, &opts)?
            };
            eprintln!("{}: log-objective {:.6}, product VoS {:.6e}", res.algo, res.log_objective, res.product_vos);
            emit(&serde_json::to_string_pretty(&res)?, out.as_deref())
        }
        Cmd::Sweep { config, trials, seed, eps, pos_snr_halved, timing, out, dump_config } => {
            let mut cfg = match ExperimentConfig::by_name(&config) {
                Ok(c) => c,
                Err(_) if Path::new(&config).exists() => ExperimentConfig::load(Path::new(&config))?,
                Err(e) => return Err(e),
            };
            if let Some(t) = trials {
                cfg.trials = t;
            }
            if let Some(s) = seed {
                cfg.base_seed = s;
            }
            cfg.template.pos_snr_halved |= pos_snr_halved;
            if out.is_some() {
                cfg.output = out;
            }
            cfg.validate()?;
            if let Some(p) = dump_config {
                return cfg.save(&p);
            }
            let dir = cfg.output.clone().unwrap_or_else(|| PathBuf::from("results"));
            let mut opts = RunOptions { timing, ..Default::default() };
            if let Some(e) = eps {
                opts.modp.eps = e;
            }
            let table = sweep(&cfg, &opts)?;
            for e in &table.errors {
                eprintln!("run failed: {e}");
            }
            let (rows, summary) = write_table(&table, &dir)?;
            for a in &table.aggregates {
                println!(
                    "{}={:<8} {:<13} mean log-objective {:>12.5} ± {:.5}",
                    a.sweep_var, a.sweep_value, a.algo, a.mean_log_objective, a.stderr_log_objective
                );
            }
            eprintln!("wrote {} and {}", rows.display(), summary.display());
            Ok(())
        }
        Cmd::Selftest => selftest(),
    }
}

fn selftest() -> Result<()> {
    let sc = generate(&ScenarioConfig::default(), 1)?;
    let opts = RunOptions::default();
    let mut values = Vec::new();
    for algo in Algo::ALL {
        let r = run_algorithm(algo, &sc, 1, &opts)?;
        println!("{:<13} log-objective {:>12.5}", algo.name(), r.log_objective);
        values.push((algo, r.log_objective));
    }
    let get = |a: Algo| values.iter().find(|v| v.0 == a).map(|v| v.1).unwrap_or(f64::NAN);
    let modp = get(Algo::Modp);
    let bound = modp + opts.modp.eps * modp.abs();
    for algo in Algo::HEURISTICS {
        if get(algo) > bound + 1e-9 {
            return Err(Error::Contract(format!("{} exceeds the MODP bound {bound:.6}", algo.name())));
        }
    }
    if get(Algo::VosSca) < get(Algo::VosFixed) - 1e-9 {
        return Err(Error::Contract("VoS-SCA below VoS-Fixed".into()));
    }
    println!("selftest ok");
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
