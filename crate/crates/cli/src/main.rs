use std::ops::Range;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use priorlab::distill::RegimeKind;
use priorlab::orchestrate::{self, suite, ExperimentConfig, ResultStore, SuiteFilter};

#[derive(Parser)]
#[command(name = "priorlab", version, about = "Distillation from soft action priors in random gridworlds")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML experiment config; defaults apply to anything it omits.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set student.policy_lr=0.1`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample worlds and write them as text files.
    Gen {
        #[arg(long, value_parser = parse_worlds)]
        worlds: Option<Range<usize>>,
    },
    /// Train (or load) the expert of one world and write its table.
    TrainExpert {
        #[arg(long, default_value_t = 0)]
        world: usize,
    },
    /// Run the sweep, skipping runs already stored.
    Run {
        #[arg(long = "setting")]
        settings: Vec<String>,
        #[arg(long = "regime")]
        regimes: Vec<RegimeKind>,
        /// `N` for the first N worlds or `A..B` for a half-open range.
        #[arg(long, value_parser = parse_worlds)]
        worlds: Option<Range<usize>>,
    },
    /// Print IQM area ratios and prior-weight summaries.
    Aggregate,
    /// Write report CSVs into `<out>/report`.
    Report,
    /// Print the effective config as TOML.
    ShowConfig,
}

fn parse_worlds(s: &str) -> Result<Range<usize>, String> {
    let num = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("bad world count '{t}': {e}"));
    match s.split_once("..") {
        Some((a, b)) => {
            let r = num(a)?..num(b)?;
            if r.start > r.end {
                return Err(format!("empty range '{s}'"));
            }
            Ok(r)
        }
        None => Ok(0..num(s)?),
    }
}

fn load_config(g: &Global) -> Result<ExperimentConfig, orchestrate::ConfigError> {
    let mut overrides = g.overrides.clone();
    if let Some(seed) = g.seed {
        overrides.push(format!("master_seed={seed}"));
    }
    if let Some(jobs) = g.jobs {
        overrides.push(format!("jobs={jobs}"));
    }
    if let Some(out) = &g.out {
        overrides.push(format!("output_dir={:?}", out.display().to_string()));
    }
    ExperimentConfig::load(g.config.as_deref(), &overrides)
}

fn print_aggregate(agg: &orchestrate::Aggregate) {
    println!("{:<8} {:<9} {:>10} {:>10} {:>10} {:>6}", "setting", "regime", "iqm", "ci_lo", "ci_hi", "n");
    for r in &agg.summary {
        println!(
            "{:<8} {:<9} {:>10.4} {:>10.4} {:>10.4} {:>6}",
            r.setting, r.regime, r.iqm, r.ci_lo, r.ci_hi, r.n_runs
        );
    }
    if agg.undefined_ratios > 0 {
        println!("{} runs skipped: baseline area near zero", agg.undefined_ratios);
    }
    if !agg.weights.is_empty() {
        println!();
        println!("{:<8} {:<9} {:>8} {:>8} {:>8} {:>17}", "setting", "regime", "w_deg", "w_non", "gap", "gap 95% CI");
        for w in &agg.weights {
            println!(
                "{:<8} {:<9} {:>8.3} {:>8.3} {:>8.3} [{:>7.3},{:>7.3}]",
                w.setting, w.regime, w.mean_w_degraded, w.mean_w_nondegraded, w.gap, w.gap_ci_lo, w.gap_ci_hi
            );
        }
    }
}

fn execute(command: Command, config: ExperimentConfig) -> anyhow::Result<ExitCode> {
    let out = config.output_dir.clone();
    match command {
        Command::ShowConfig => print!("{}", config.to_toml()),
        Command::Gen { worlds } => {
            let dir = out.join("worlds");
            std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            for i in worlds.unwrap_or(0..config.n_worlds) {
                let seed = orchestrate::world_seed(config.master_seed, i);
                let env = suite::build_env(&config, seed).with_context(|| format!("world {i}"))?;
                let path = dir.join(format!("world-{i:06}.txt"));
                std::fs::write(&path, env.world.to_text()).with_context(|| format!("writing {}", path.display()))?;
            }
            println!("wrote worlds to {}", dir.display());
        }
        Command::TrainExpert { world } => {
            let seed = orchestrate::world_seed(config.master_seed, world);
            let store = ResultStore::open(&out, &config)?;
            let setup = suite::prepare_world(&config, seed, Some(&store.expert_dir())).map_err(anyhow::Error::msg)?;
            let visited = setup.expert.visits.iter().filter(|&&v| v > 0).count();
            println!(
                "world {world} seed {seed:016x}: {} observation states, {visited} visited by the expert; table in {}",
                setup.env.n_states(),
                store.expert_dir().display()
            );
        }
        Command::Run {
            settings,
            regimes,
            worlds,
        } => {
            let filter = SuiteFilter {
                settings: (!settings.is_empty()).then_some(settings),
                regimes: (!regimes.is_empty()).then_some(regimes),
                worlds,
            };
            let summary = orchestrate::run_suite(&config, &filter)?;
            println!(
                "{} worlds, {} runs trained, {} already stored, {} failed ({} failures in store)",
                summary.worlds_visited, summary.runs_trained, summary.runs_skipped, summary.runs_failed, summary.failures_in_store
            );
            if summary.failures_in_store > 0 {
                eprintln!("see {}", out.join("failures.csv").display());
                return Ok(ExitCode::from(2));
            }
        }
        Command::Aggregate | Command::Report => {
            let store = ResultStore::existing(&out);
            if store.manifest()?.is_none() {
                bail!("no results in {}", out.display());
            }
            let agg = orchestrate::aggregate(&store, &config)?;
            if matches!(command, Command::Report) {
                let dir = out.join("report");
                orchestrate::write_report(&agg, &dir)?;
                println!("wrote report files to {}", dir.display());
            } else {
                print_aggregate(&agg);
            }
            if store.manifest()?.is_some_and(|m| m.failed_runs > 0) {
                return Ok(ExitCode::from(2));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let config = match load_config(&cli.global) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match execute(cli.command, config) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
