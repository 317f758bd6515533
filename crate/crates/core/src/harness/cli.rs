//! Command-line interface. Exit codes: 0 = all assertions passed,
//! 1 = an assertion failed, 2 = configuration/geometry/usage error.

use crate::harness::config::ExperimentConfig;
use crate::harness::records::{read_records, RunRecord};
use crate::harness::suite::{self, SuiteContext};
use clap::{Args, Parser, Subcommand};
use std::fs;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "tilted-ri",
    about = "Confined-walk / tilted-interlacement simulation and verification toolkit",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Args, Clone)]
pub struct CommonArgs {
    /// Path to a flat key = value config file (defaults apply otherwise).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory for records, caches and CSV projections.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Trial-count override.
    #[arg(long, global = true)]
    pub trials: Option<usize>,
    /// Estimation mode for potential-theory quantities.
    #[arg(long, global = true, value_parser = ["mc", "bracket", "both"])]
    pub mode: Option<String>,
    /// Emit records as JSON lines on stdout.
    #[arg(long, global = true)]
    pub json: bool,
}

#[derive(Subcommand)]
pub enum Command {
    /// Spectral checks (eigenvalue asymptotics, Dirichlet residual, norms).
    Spectrum,
    /// Capacity / equilibrium-measure / vacancy checks.
    Capacity,
    /// Excursion-chain checks (invariant measure, counts, mixing).
    Chains,
    /// Soft-local-times engine checks on oracle chains.
    Slt,
    /// Random-walk estimate checks (gambler's ruin, tails, brackets).
    Estimates,
    /// The end-to-end coupling experiment.
    Couple,
    /// Everything, in dependency order.
    Suite,
    /// Re-run a recorded suite and compare deterministic payloads.
    Replay {
        /// Records file produced by a previous run.
        file: PathBuf,
    },
}

fn load_config(common: &CommonArgs) -> Result<ExperimentConfig, String> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| format!("config: {e}"))?;
            ExperimentConfig::from_text(&text).map_err(|e| e.to_string())?
        }
        None => ExperimentConfig::default(),
    };
    if let Ok(seed) = std::env::var("TILTED_RI_SEED") {
        cfg.master_seed = seed.parse().map_err(|e| format!("TILTED_RI_SEED: {e}"))?;
    }
    if let Some(seed) = common.seed {
        cfg.master_seed = seed;
    }
    if let Some(trials) = common.trials {
        if trials == 0 {
            return Err("trials must be ≥ 1".into());
        }
        cfg.trials = trials;
    }
    Ok(cfg)
}

fn out_dir(common: &CommonArgs) -> PathBuf {
    if let Some(o) = &common.out {
        return o.clone();
    }
    if let Ok(dir) = std::env::var("TILTED_RI_OUT") {
        return PathBuf::from(dir);
    }
    PathBuf::from("tilted-ri-out")
}

const SELECTIONS: &[(&str, &[&str])] = &[
    (
        "spectrum",
        &[
            "eigen-asymptotic",
            "dirichlet-residual",
            "norm-scaling",
            "lambda-bracket",
            "spectral-diagnostics",
        ],
    ),
    ("capacity", &["eigen-asymptotic", "vacancy-law", "capacity-scaling"]),
    (
        "chains",
        &[
            "chain-diagnostics",
            "excursion-count-identity",
            "invariant-measure",
            "mixing-couplings",
        ],
    ),
    ("slt", &["slt-oracle"]),
    (
        "estimates",
        &[
            "eigen-asymptotic",
            "confinement-decay",
            "exit-time-tail",
            "gamblers-ruin",
            "probability-bracket",
        ],
    ),
    ("couple", &["coupling-inclusion"]),
];

pub fn run(cli: Cli) -> i32 {
    let cfg = match load_config(&cli.common) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("configuration error: {e}");
            return 2;
        }
    };
    if let Err(e) = cfg.validate() {
        eprintln!("configuration error: {e}");
        return 2;
    }
    let out = out_dir(&cli.common);
    let cache = out.join("cache");
    let json = cli.common.json;

    let selection: Option<&[&str]> = match &cli.command {
        Command::Suite => None,
        Command::Spectrum => lookup("spectrum"),
        Command::Capacity => lookup("capacity"),
        Command::Chains => lookup("chains"),
        Command::Slt => lookup("slt"),
        Command::Estimates => lookup("estimates"),
        Command::Couple => lookup("couple"),
        Command::Replay { file } => return replay(&cfg, file, &cache, json),
    };

    let ctx = SuiteContext::new(cfg, Some(cache));
    let record = match suite::run_verification_suite(&ctx, selection, |o| {
        if json {
            println!("{}", serde_json::to_string(o).expect("outcome serialization"));
        } else {
            println!("{}", suite::outcome_line(o));
        }
    }) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    if let Err(e) = persist(&record, &out) {
        eprintln!("error writing records: {e}");
        return 2;
    }
    if record.any_failed() {
        1
    } else {
        0
    }
}

fn lookup(name: &str) -> Option<&'static [&'static str]> {
    SELECTIONS.iter().find(|(n, _)| *n == name).map(|(_, sel)| *sel)
}

fn persist(record: &RunRecord, out: &PathBuf) -> crate::Result<()> {
    fs::create_dir_all(out)?;
    let mut jsonl = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(out.join("records.jsonl"))?;
    record.write_jsonl(&mut jsonl)?;
    let mut csv = fs::File::create(out.join("last-run.csv"))?;
    record.write_csv(&mut csv)?;
    Ok(())
}

fn replay(cfg: &ExperimentConfig, file: &PathBuf, cache: &PathBuf, json: bool) -> i32 {
    let text = match fs::read_to_string(file) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("replay: {e}");
            return 2;
        }
    };
    let records = match read_records(&text) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("replay: {e}");
            return 2;
        }
    };
    let Some(last) = records.last() else {
        eprintln!("replay: no records in {}", file.display());
        return 2;
    };
    if last.config_hash != cfg.hash() {
        eprintln!(
            "replay: config hash mismatch (recorded {}, current {}); pass the original config",
            last.config_hash,
            cfg.hash()
        );
        return 2;
    }
    let ran: Vec<&str> = last.checks.iter().map(|c| c.name.as_str()).collect();
    let mut cfg = cfg.clone();
    cfg.master_seed = last.seed;
    let ctx = SuiteContext::new(cfg, Some(cache.clone()));
    let rerun = match suite::run_verification_suite(&ctx, Some(&ran), |o| {
        if json {
            println!("{}", serde_json::to_string(o).expect("outcome serialization"));
        } else {
            println!("{}", suite::outcome_line(o));
        }
    }) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("replay: {e}");
            return 2;
        }
    };
    if rerun.deterministic_payload() == last.deterministic_payload() {
        println!("replay: byte-identical deterministic payloads");
        0
    } else {
        eprintln!("replay: payload mismatch");
        1
    }
}
