//! On-disk results: merged CSV files plus per-world shards.
//!
//! ```text
//! <dir>/runs.csv       world_seed,setting,regime,eval_idx,update_step,eval_return
//! <dir>/weights.csv    world_seed,setting,regime,eval_idx,mean_w_degraded,mean_w_nondegraded,n_deg_visited,n_nondeg_visited
//! <dir>/failures.csv   world_seed,setting,regime,error
//! <dir>/manifest.json  config hash, counts, full config
//! <dir>/shards/        per-world files awaiting merge
//! <dir>/experts/       cached expert tables
//! ```
//!
//! Merged files are sorted by key and hold each key once, so their bytes
//! depend only on what was computed, not on scheduling.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::distill::RegimeKind;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("malformed results file {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("malformed manifest {path}: {source}")]
    Manifest { path: PathBuf, source: serde_json::Error },
    #[error("{dir} holds results for config {found}, not {expected}; use another output directory")]
    ConfigMismatch { dir: PathBuf, found: String, expected: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Identifies one training run.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RunKey {
    pub world_seed: u64,
    pub setting: String,
    pub regime: RegimeKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub world_seed: u64,
    pub setting: String,
    pub regime: RegimeKind,
    pub eval_idx: usize,
    pub update_step: usize,
    pub eval_return: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightRow {
    pub world_seed: u64,
    pub setting: String,
    pub regime: RegimeKind,
    pub eval_idx: usize,
    pub mean_w_degraded: f64,
    pub mean_w_nondegraded: f64,
    pub n_deg_visited: u32,
    pub n_nondeg_visited: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRow {
    pub world_seed: u64,
    pub setting: String,
    pub regime: RegimeKind,
    pub error: String,
}

trait Keyed {
    type K: Ord;
    fn key(&self) -> Self::K;
}

impl Keyed for RunRow {
    type K = (RunKey, usize);
    fn key(&self) -> Self::K {
        (run_key(self.world_seed, &self.setting, self.regime), self.eval_idx)
    }
}

impl Keyed for WeightRow {
    type K = (RunKey, usize);
    fn key(&self) -> Self::K {
        (run_key(self.world_seed, &self.setting, self.regime), self.eval_idx)
    }
}

impl Keyed for FailureRow {
    type K = RunKey;
    fn key(&self) -> Self::K {
        run_key(self.world_seed, &self.setting, self.regime)
    }
}

fn run_key(world_seed: u64, setting: &str, regime: RegimeKind) -> RunKey {
    RunKey {
        world_seed,
        setting: setting.to_string(),
        regime,
    }
}

/// Rows produced by one world, written as a unit.
#[derive(Debug, Default, Clone)]
pub struct WorldRows {
    pub runs: Vec<RunRow>,
    pub weights: Vec<WeightRow>,
    pub failures: Vec<FailureRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub crate_version: String,
    pub config_hash: String,
    pub completed_runs: usize,
    pub failed_runs: usize,
    /// Canonical form; see [`ExperimentConfig::canonical`].
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone)]
pub struct ResultStore {
    dir: PathBuf,
}

const RUNS: &str = "runs.csv";
const WEIGHTS: &str = "weights.csv";
const FAILURES: &str = "failures.csv";
const MANIFEST: &str = "manifest.json";

fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, StoreError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let csv_err = |source| StoreError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    reader.deserialize().collect::<Result<Vec<T>, _>>().map_err(csv_err)
}

/// Writes via a temporary file and rename so readers never see half a file.
fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<(), StoreError> {
    let tmp = path.with_extension("csv.tmp");
    let csv_err = |source| StoreError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_path(&tmp).map_err(csv_err)?;
    writer.write_record(header).map_err(csv_err)?;
    for row in rows {
        writer.serialize(row).map_err(csv_err)?;
    }
    writer.flush().map_err(io_err(&tmp))?;
    drop(writer);
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub const RUNS_HEADER: [&str; 6] = ["world_seed", "setting", "regime", "eval_idx", "update_step", "eval_return"];
pub const WEIGHTS_HEADER: [&str; 8] = [
    "world_seed",
    "setting",
    "regime",
    "eval_idx",
    "mean_w_degraded",
    "mean_w_nondegraded",
    "n_deg_visited",
    "n_nondeg_visited",
];
pub const FAILURES_HEADER: [&str; 4] = ["world_seed", "setting", "regime", "error"];

fn merge_rows<T: Keyed>(rows: impl IntoIterator<Item = T>) -> Vec<T> {
    let map: BTreeMap<T::K, T> = rows.into_iter().map(|r| (r.key(), r)).collect();
    map.into_values().collect()
}

impl ResultStore {
    /// Opens (creating if needed) a store for `config`. A store written
    /// under a different results hash is refused.
    pub fn open(dir: &Path, config: &ExperimentConfig) -> Result<Self, StoreError> {
        fs::create_dir_all(dir.join("shards")).map_err(io_err(dir))?;
        let store = ResultStore { dir: dir.to_path_buf() };
        if let Some(m) = store.manifest()? {
            let expected = config.results_hash();
            if m.config_hash != expected {
                return Err(StoreError::ConfigMismatch {
                    dir: dir.to_path_buf(),
                    found: m.config_hash,
                    expected,
                });
            }
        }
        Ok(store)
    }

    /// Opens an existing store for reading.
    pub fn existing(dir: &Path) -> Self {
        ResultStore { dir: dir.to_path_buf() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn expert_dir(&self) -> PathBuf {
        self.dir.join("experts")
    }

    pub fn manifest(&self) -> Result<Option<Manifest>, StoreError> {
        let path = self.dir.join(MANIFEST);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|source| StoreError::Manifest { path, source })
    }

    pub fn runs(&self) -> Result<Vec<RunRow>, StoreError> {
        read_csv(&self.dir.join(RUNS))
    }

    pub fn weights(&self) -> Result<Vec<WeightRow>, StoreError> {
        read_csv(&self.dir.join(WEIGHTS))
    }

    pub fn failures(&self) -> Result<Vec<FailureRow>, StoreError> {
        read_csv(&self.dir.join(FAILURES))
    }

    /// Runs with all `n_evals` checkpoints present in the merged files.
    pub fn completed_runs(&self, n_evals: usize) -> Result<BTreeSet<RunKey>, StoreError> {
        let mut counts: BTreeMap<RunKey, usize> = BTreeMap::new();
        for row in self.runs()? {
            *counts.entry(row.key().0).or_default() += 1;
        }
        Ok(counts.into_iter().filter(|&(_, c)| c == n_evals).map(|(k, _)| k).collect())
    }

    fn shard_path(&self, world_index: usize, kind: &str) -> PathBuf {
        self.dir.join("shards").join(format!("w{world_index:06}.{kind}.csv"))
    }

    /// Persists one world's rows as shard files.
    pub fn write_shard(&self, world_index: usize, rows: &WorldRows) -> Result<(), StoreError> {
        // runs last: a world counts as present once its runs shard exists
        write_csv(&self.shard_path(world_index, "weights"), &rows.weights, &WEIGHTS_HEADER)?;
        write_csv(&self.shard_path(world_index, "failures"), &rows.failures, &FAILURES_HEADER)?;
        write_csv(&self.shard_path(world_index, "runs"), &rows.runs, &RUNS_HEADER)
    }

    /// Folds every shard into the merged files, then removes the shards and
    /// rewrites the manifest.
    pub fn merge(&self, config: &ExperimentConfig) -> Result<Manifest, StoreError> {
        let shard_dir = self.dir.join("shards");
        let mut shards: Vec<PathBuf> = fs::read_dir(&shard_dir)
            .map_err(io_err(&shard_dir))?
            .map(|e| e.map(|e| e.path()).map_err(io_err(&shard_dir)))
            .collect::<Result<_, _>>()?;
        shards.sort();
        let of_kind = |kind: &str| -> Vec<PathBuf> {
            let suffix = format!(".{kind}.csv");
            shards
                .iter()
                .filter(|p| p.to_string_lossy().ends_with(&suffix))
                .cloned()
                .collect()
        };

        let mut runs = self.runs()?;
        for p in of_kind("runs") {
            runs.extend(read_csv::<RunRow>(&p)?);
        }
        let runs = merge_rows(runs);
        let mut weights = self.weights()?;
        for p in of_kind("weights") {
            weights.extend(read_csv::<WeightRow>(&p)?);
        }
        let weights = merge_rows(weights);

        let n_evals = config.student.n_evals();
        let mut counts: BTreeMap<RunKey, usize> = BTreeMap::new();
        for row in &runs {
            *counts.entry(row.key().0).or_default() += 1;
        }
        let completed: BTreeSet<&RunKey> = counts.iter().filter(|&(_, &c)| c == n_evals).map(|(k, _)| k).collect();

        let mut failures = self.failures()?;
        for p in of_kind("failures") {
            failures.extend(read_csv::<FailureRow>(&p)?);
        }
        let failures: Vec<FailureRow> = merge_rows(failures)
            .into_iter()
            .filter(|f| !completed.contains(&f.key()))
            .collect();

        write_csv(&self.dir.join(RUNS), &runs, &RUNS_HEADER)?;
        write_csv(&self.dir.join(WEIGHTS), &weights, &WEIGHTS_HEADER)?;
        write_csv(&self.dir.join(FAILURES), &failures, &FAILURES_HEADER)?;
        for p in &shards {
            fs::remove_file(p).map_err(io_err(p))?;
        }

        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config.results_hash(),
            completed_runs: completed.len(),
            failed_runs: failures.len(),
            config: config.canonical(),
        };
        let path = self.dir.join(MANIFEST);
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
        fs::write(&path, json + "\n").map_err(io_err(&path))?;
        Ok(manifest)
    }
}
