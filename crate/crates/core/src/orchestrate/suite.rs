//! The sweep: worlds × settings × regimes, distributed over a worker pool.

use std::collections::BTreeSet;
use std::fs;
use std::io::BufReader;
use std::ops::Range;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;

use rayon::prelude::*;

use super::config::{ExperimentConfig, Setting};
use super::store::{FailureRow, ResultStore, RunKey, RunRow, StoreError, WeightRow, WorldRows};
use super::{world_seed, BASELINE_SETTING};
use crate::agents::{train_q_learning, ExpertTable};
use crate::distill::{run_training, RegimeKind, RunRecord};
use crate::env::{sample_gridworld, EnvError, TabularEnv};
use crate::priors::{
    adversarial_policy, expert_prior, expert_state_values, random_degrade, select_degraded_states, structural_degrade,
    ActionPrior, DegradationSpec, PriorError,
};
use crate::rng::{self, Stream};
use crate::table;

#[derive(Debug, thiserror::Error)]
pub enum SuiteError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("cannot build worker pool: {0}")]
    Pool(String),
    #[error("unknown setting '{0}'")]
    UnknownSetting(String),
}

/// Restricts a suite invocation to part of the configured sweep.
#[derive(Debug, Clone, Default)]
pub struct SuiteFilter {
    pub settings: Option<Vec<String>>,
    pub regimes: Option<Vec<RegimeKind>>,
    pub worlds: Option<Range<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SuiteSummary {
    pub worlds_visited: usize,
    pub runs_trained: usize,
    pub runs_skipped: usize,
    /// Failures recorded by this invocation.
    pub runs_failed: usize,
    /// Failures present in the store after merging.
    pub failures_in_store: usize,
}

/// An environment with its trained expert and the two undegraded priors.
pub struct WorldSetup {
    pub seed: u64,
    pub env: TabularEnv,
    pub expert: ExpertTable,
    pub expert_prior: ActionPrior,
    pub adversary: ActionPrior,
}

pub fn build_env(config: &ExperimentConfig, seed: u64) -> Result<TabularEnv, EnvError> {
    Ok(TabularEnv::new(sample_gridworld(seed, &config.objects, config.dynamics)?))
}

pub fn train_expert(config: &ExperimentConfig, env: &TabularEnv, seed: u64) -> ExpertTable {
    let mut rng = rng::stream(seed, Stream::Expert);
    train_q_learning(env, config.expert.budget, &config.expert.q_learning(), &mut rng)
}

fn expert_path(dir: &Path, seed: u64) -> std::path::PathBuf {
    dir.join(format!("{seed:016x}.table"))
}

/// Loads a cached expert or trains and (optionally) caches one.
fn expert_for(config: &ExperimentConfig, env: &TabularEnv, seed: u64, cache: Option<&Path>) -> Result<ExpertTable, String> {
    if let Some(dir) = cache {
        let path = expert_path(dir, seed);
        if let Ok(file) = fs::File::open(&path) {
            let (q, visits) = table::read_records(BufReader::new(file), &env.index).map_err(|e| e.to_string())?;
            return Ok(ExpertTable {
                q,
                visits,
                transitions: config.expert.budget,
            });
        }
    }
    let expert = train_expert(config, env, seed);
    if let Some(dir) = cache {
        fs::create_dir_all(dir).map_err(|e| e.to_string())?;
        let path = expert_path(dir, seed);
        let tmp = path.with_extension("tmp");
        let mut out = std::io::BufWriter::new(fs::File::create(&tmp).map_err(|e| e.to_string())?);
        table::write_records(&mut out, &env.index, &expert.q, &expert.visits).map_err(|e| e.to_string())?;
        drop(out);
        fs::rename(&tmp, &path).map_err(|e| e.to_string())?;
    }
    Ok(expert)
}

pub fn prepare_world(config: &ExperimentConfig, seed: u64, cache: Option<&Path>) -> Result<WorldSetup, String> {
    let env = build_env(config, seed).map_err(|e| e.to_string())?;
    let expert = expert_for(config, &env, seed, cache)?;
    let tau = config.prior.temperature;
    Ok(WorldSetup {
        seed,
        expert_prior: expert_prior(&expert.q, tau),
        adversary: adversarial_policy(&expert.q, tau),
        env,
        expert,
    })
}

/// The prior a setting yields in a prepared world.
pub fn build_prior(config: &ExperimentConfig, world: &WorldSetup, setting: &Setting) -> Result<ActionPrior, PriorError> {
    match setting.degradation {
        DegradationSpec::None => Ok(world.expert_prior.clone()),
        DegradationSpec::Random { noise_p, .. } => random_degrade(&world.expert_prior, &world.adversary, noise_p),
        DegradationSpec::Structural { n_states, seed } => {
            let parent = seed.map_or(world.seed, |s| rng::derive_seed(s, &[world.seed]));
            let mut rng = rng::keyed_stream(parent, Stream::Degradation, &[rng::label(&setting.name)]);
            let values = expert_state_values(&world.expert, config.prior.state_value, config.prior.temperature);
            let states = select_degraded_states(&values, n_states, config.prior.selection_temperature, &mut rng)?;
            structural_degrade(&world.expert_prior, &world.adversary, &states)
        }
    }
}

/// The runs a world must produce: one Baseline plus every prior regime under
/// every setting.
pub fn planned_runs(config: &ExperimentConfig, filter: &SuiteFilter) -> Vec<(Option<usize>, RegimeKind)> {
    let mut plan = vec![(None, RegimeKind::Baseline)];
    let wanted_regime = |r: &RegimeKind| filter.regimes.as_ref().map_or(true, |rs| rs.contains(r));
    for (i, setting) in config.settings.iter().enumerate() {
        if filter.settings.as_ref().is_some_and(|ss| !ss.contains(&setting.name)) {
            continue;
        }
        for regime in config.regimes.iter().filter(|r| r.uses_prior() && wanted_regime(r)) {
            plan.push((Some(i), *regime));
        }
    }
    plan
}

fn key_of(config: &ExperimentConfig, seed: u64, setting: Option<usize>, regime: RegimeKind) -> RunKey {
    RunKey {
        world_seed: seed,
        setting: setting.map_or(BASELINE_SETTING, |i| config.settings[i].name.as_str()).to_string(),
        regime,
    }
}

fn record_rows(key: &RunKey, record: &RunRecord, rows: &mut WorldRows) {
    for (eval_idx, e) in record.evals.iter().enumerate() {
        rows.runs.push(RunRow {
            world_seed: key.world_seed,
            setting: key.setting.clone(),
            regime: key.regime,
            eval_idx,
            update_step: e.update_step,
            eval_return: e.eval_return,
        });
        if let Some(w) = e.weights {
            rows.weights.push(WeightRow {
                world_seed: key.world_seed,
                setting: key.setting.clone(),
                regime: key.regime,
                eval_idx,
                mean_w_degraded: w.mean_degraded,
                mean_w_nondegraded: w.mean_nondegraded,
                n_deg_visited: w.n_degraded,
                n_nondeg_visited: w.n_nondegraded,
            });
        }
    }
}

fn panic_message(payload: Box<dyn std::any::Any + Send>) -> String {
    payload
        .downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| payload.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "panic".to_string())
}

/// Trains every pending run of one world. Failures are captured as rows.
fn process_world(
    config: &ExperimentConfig,
    seed: u64,
    pending: &[(Option<usize>, RegimeKind)],
    cache: Option<&Path>,
) -> WorldRows {
    let mut rows = WorldRows::default();
    let fail_all = |rows: &mut WorldRows, msg: &str| {
        for &(s, r) in pending {
            let key = key_of(config, seed, s, r);
            rows.failures.push(FailureRow {
                world_seed: seed,
                setting: key.setting,
                regime: r,
                error: msg.to_string(),
            });
        }
    };
    let world = match panic::catch_unwind(AssertUnwindSafe(|| prepare_world(config, seed, cache))) {
        Ok(Ok(w)) => w,
        Ok(Err(msg)) => {
            fail_all(&mut rows, &msg);
            return rows;
        }
        Err(p) => {
            fail_all(&mut rows, &panic_message(p));
            return rows;
        }
    };

    let mut priors: Vec<Option<Result<ActionPrior, String>>> = vec![None; config.settings.len()];
    for &(setting, regime) in pending {
        let key = key_of(config, seed, setting, regime);
        let prior = match setting {
            None => None,
            Some(i) => {
                let built = priors[i].get_or_insert_with(|| {
                    panic::catch_unwind(AssertUnwindSafe(|| build_prior(config, &world, &config.settings[i])))
                        .map_err(panic_message)
                        .and_then(|r| r.map_err(|e| e.to_string()))
                });
                match built {
                    Ok(p) => Some(&*p),
                    Err(msg) => {
                        rows.failures.push(FailureRow {
                            world_seed: seed,
                            setting: key.setting,
                            regime,
                            error: msg.clone(),
                        });
                        continue;
                    }
                }
            }
        };
        match panic::catch_unwind(AssertUnwindSafe(|| run_training(&world.env, regime, prior, &config.student, seed))) {
            Ok(record) => record_rows(&key, &record, &mut rows),
            Err(p) => rows.failures.push(FailureRow {
                world_seed: seed,
                setting: key.setting,
                regime,
                error: panic_message(p),
            }),
        }
    }
    rows
}

/// Runs the configured sweep into `config.output_dir`, skipping runs already
/// present in the store, then merges shards into the result files.
pub fn run_suite(config: &ExperimentConfig, filter: &SuiteFilter) -> Result<SuiteSummary, SuiteError> {
    if let Some(names) = &filter.settings {
        if let Some(bad) = names.iter().find(|n| config.setting(n).is_none()) {
            return Err(SuiteError::UnknownSetting(bad.clone()));
        }
    }
    let store = ResultStore::open(&config.output_dir, config)?;
    // fold in shards left behind by an interrupted invocation
    store.merge(config)?;
    let completed: BTreeSet<RunKey> = store.completed_runs(config.student.n_evals())?;
    let cache = config.save_experts.then(|| store.expert_dir());

    let worlds = filter.worlds.clone().unwrap_or(0..config.n_worlds);
    let worlds = worlds.start.min(config.n_worlds)..worlds.end.min(config.n_worlds);
    let mut summary = SuiteSummary::default();
    let mut jobs = Vec::new();
    for index in worlds {
        let seed = world_seed(config.master_seed, index);
        let plan = planned_runs(config, filter);
        let total = plan.len();
        let pending: Vec<_> = plan
            .into_iter()
            .filter(|&(s, r)| !completed.contains(&key_of(config, seed, s, r)))
            .collect();
        summary.runs_skipped += total - pending.len();
        if !pending.is_empty() {
            jobs.push((index, seed, pending));
        }
    }
    summary.worlds_visited = jobs.len();

    let threads = if config.jobs == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        config.jobs
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| SuiteError::Pool(e.to_string()))?;
    let outcomes: Vec<Result<(usize, usize), StoreError>> = pool.install(|| {
        jobs.par_iter()
            .map(|(index, seed, pending)| {
                let rows = process_world(config, *seed, pending, cache.as_deref());
                store.write_shard(*index, &rows)?;
                log::info!(
                    "world {index} ({seed:016x}): {} runs, {} failures",
                    pending.len() - rows.failures.len(),
                    rows.failures.len()
                );
                Ok((pending.len() - rows.failures.len(), rows.failures.len()))
            })
            .collect()
    });
    for outcome in outcomes {
        let (trained, failed) = outcome?;
        summary.runs_trained += trained;
        summary.runs_failed += failed;
    }
    let manifest = store.merge(config)?;
    summary.failures_in_store = manifest.failed_runs;
    Ok(summary)
}
