//! Pairs prior runs with their Baseline, computes area ratios and summarises
//! them per setting and regime.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;

use super::config::ExperimentConfig;
use super::store::{ResultStore, RunKey, StoreError};
use super::BASELINE_SETTING;
use crate::distill::RegimeKind;
use crate::evalstats::{self, StatsError};
use crate::rng::{self, Stream};

/// Row label for statistics pooled over every setting.
pub const ALL_SETTINGS: &str = "ALL";

#[derive(Debug, thiserror::Error)]
pub enum AggregateError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("run {setting}/{regime} in world {world_seed:016x} has no paired Baseline run")]
    MissingBaseline {
        world_seed: u64,
        setting: String,
        regime: RegimeKind,
    },
    #[error("run {setting}/{regime} in world {world_seed:016x}: {source}")]
    Curve {
        world_seed: u64,
        setting: String,
        regime: RegimeKind,
        source: StatsError,
    },
    #[error("cannot write {path}: {source}")]
    Write { path: String, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Csv { path: String, source: csv::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioRow {
    pub world_seed: u64,
    pub setting: String,
    pub regime: RegimeKind,
    pub area_prior: f64,
    pub area_baseline: f64,
    /// Empty when the baseline area is too close to zero.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub setting: String,
    pub regime: RegimeKind,
    pub iqm: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n_runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileRow {
    pub setting: String,
    pub regime: RegimeKind,
    pub threshold: f64,
    pub fraction: f64,
}

/// Prior-weight means over runs with normal-approximation intervals.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightSummaryRow {
    pub setting: String,
    pub regime: RegimeKind,
    pub mean_w_degraded: f64,
    pub mean_w_nondegraded: f64,
    pub ci_lo_degraded: f64,
    pub ci_hi_degraded: f64,
    pub ci_lo_nondegraded: f64,
    pub ci_hi_nondegraded: f64,
    /// Mean over runs of (non-degraded minus degraded).
    pub gap: f64,
    pub gap_ci_lo: f64,
    pub gap_ci_hi: f64,
    pub n_runs: usize,
}

#[derive(Debug, Clone, Default)]
pub struct Aggregate {
    pub ratios: Vec<RatioRow>,
    pub summary: Vec<SummaryRow>,
    pub profiles: Vec<ProfileRow>,
    pub weights: Vec<WeightSummaryRow>,
    /// Prior runs whose ratio is undefined (near-zero baseline area).
    pub undefined_ratios: usize,
}

impl Aggregate {
    pub fn summary_for(&self, setting: &str, regime: RegimeKind) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.setting == setting && r.regime == regime)
    }

    pub fn weights_for(&self, setting: &str, regime: RegimeKind) -> Option<&WeightSummaryRow> {
        self.weights.iter().find(|r| r.setting == setting && r.regime == regime)
    }
}

const Z95: f64 = 1.96;

fn setting_order(config: &ExperimentConfig, name: &str) -> usize {
    config.settings.iter().position(|s| s.name == name).unwrap_or(usize::MAX)
}

/// Computes ratios, IQM summaries, profiles and weight summaries from the
/// merged result files.
pub fn aggregate(store: &ResultStore, config: &ExperimentConfig) -> Result<Aggregate, AggregateError> {
    let mut curves: BTreeMap<RunKey, Vec<(usize, f64, f64)>> = BTreeMap::new();
    for row in store.runs()? {
        let key = RunKey {
            world_seed: row.world_seed,
            setting: row.setting,
            regime: row.regime,
        };
        curves
            .entry(key)
            .or_default()
            .push((row.eval_idx, row.update_step as f64, row.eval_return));
    }
    let curve = |points: &Vec<(usize, f64, f64)>| -> Vec<(f64, f64)> {
        let mut p = points.clone();
        p.sort_by_key(|x| x.0);
        p.into_iter().map(|(_, s, v)| (s, v)).collect()
    };

    let mut agg = Aggregate::default();
    let mut grouped: BTreeMap<(usize, String, RegimeKind), Vec<f64>> = BTreeMap::new();
    for (key, points) in &curves {
        if key.setting == BASELINE_SETTING {
            continue;
        }
        let base_key = RunKey {
            world_seed: key.world_seed,
            setting: BASELINE_SETTING.to_string(),
            regime: RegimeKind::Baseline,
        };
        let base = curves.get(&base_key).ok_or_else(|| AggregateError::MissingBaseline {
            world_seed: key.world_seed,
            setting: key.setting.clone(),
            regime: key.regime,
        })?;
        let curve_err = |source| AggregateError::Curve {
            world_seed: key.world_seed,
            setting: key.setting.clone(),
            regime: key.regime,
            source,
        };
        let (prior_curve, base_curve) = (curve(points), curve(base));
        let area_prior = evalstats::normalized_area(&prior_curve).map_err(curve_err)?;
        let area_baseline = evalstats::normalized_area(&base_curve).map_err(curve_err)?;
        let ratio = match evalstats::area_ratio(&prior_curve, &base_curve) {
            Ok(r) => Some(r),
            Err(StatsError::UndefinedRatio(_)) => None,
            Err(e) => return Err(curve_err(e)),
        };
        match ratio {
            Some(r) => grouped
                .entry((setting_order(config, &key.setting), key.setting.clone(), key.regime))
                .or_default()
                .push(r),
            None => agg.undefined_ratios += 1,
        }
        agg.ratios.push(RatioRow {
            world_seed: key.world_seed,
            setting: key.setting.clone(),
            regime: key.regime,
            area_prior,
            area_baseline,
            ratio,
        });
    }

    let report = &config.report;
    let thresholds = evalstats::linspace(report.profile_min, report.profile_max, report.profile_points);
    let summarise = |setting: &str, regime: RegimeKind, strata: &[Vec<f64>], agg: &mut Aggregate| {
        let pooled: Vec<f64> = strata.iter().flatten().copied().collect();
        let mut rng = rng::keyed_stream(
            config.master_seed,
            Stream::Bootstrap,
            &[rng::label(setting), rng::label(regime.name())],
        );
        let iqm = evalstats::iqm(&pooled).expect("non-empty group");
        let (ci_lo, ci_hi) =
            evalstats::iqm_bootstrap_ci(strata, report.n_resamples, report.confidence, &mut rng).expect("non-empty strata");
        agg.summary.push(SummaryRow {
            setting: setting.to_string(),
            regime,
            iqm,
            ci_lo,
            ci_hi,
            n_runs: pooled.len(),
        });
        for (threshold, fraction) in evalstats::performance_profile(&pooled, &thresholds) {
            agg.profiles.push(ProfileRow {
                setting: setting.to_string(),
                regime,
                threshold,
                fraction,
            });
        }
    };
    let mut by_regime: BTreeMap<RegimeKind, Vec<Vec<f64>>> = BTreeMap::new();
    for ((_, setting, regime), ratios) in &grouped {
        summarise(setting, *regime, std::slice::from_ref(ratios), &mut agg);
        by_regime.entry(*regime).or_default().push(ratios.clone());
    }
    for (regime, strata) in &by_regime {
        summarise(ALL_SETTINGS, *regime, strata, &mut agg);
    }

    agg.weights = weight_summaries(store, config)?;
    Ok(agg)
}

fn weight_summaries(store: &ResultStore, config: &ExperimentConfig) -> Result<Vec<WeightSummaryRow>, AggregateError> {
    // per run: visit-weighted pooled means over all checkpoints
    #[derive(Default)]
    struct Acc {
        deg: f64,
        n_deg: f64,
        non: f64,
        n_non: f64,
    }
    let mut per_run: BTreeMap<RunKey, Acc> = BTreeMap::new();
    for row in store.weights()? {
        let acc = per_run
            .entry(RunKey {
                world_seed: row.world_seed,
                setting: row.setting,
                regime: row.regime,
            })
            .or_default();
        if row.n_deg_visited > 0 {
            acc.deg += row.mean_w_degraded * f64::from(row.n_deg_visited);
            acc.n_deg += f64::from(row.n_deg_visited);
        }
        if row.n_nondeg_visited > 0 {
            acc.non += row.mean_w_nondegraded * f64::from(row.n_nondeg_visited);
            acc.n_non += f64::from(row.n_nondeg_visited);
        }
    }

    #[derive(Default)]
    struct Group {
        deg: Vec<f64>,
        non: Vec<f64>,
        gap: Vec<f64>,
        runs: usize,
    }
    let mut groups: BTreeMap<(usize, String, RegimeKind), Group> = BTreeMap::new();
    for (key, acc) in per_run {
        let g = groups
            .entry((setting_order(config, &key.setting), key.setting, key.regime))
            .or_default();
        g.runs += 1;
        let deg = (acc.n_deg > 0.0).then(|| acc.deg / acc.n_deg);
        let non = (acc.n_non > 0.0).then(|| acc.non / acc.n_non);
        g.deg.extend(deg);
        g.non.extend(non);
        if let (Some(d), Some(n)) = (deg, non) {
            g.gap.push(n - d);
        }
    }

    let interval = |v: &[f64]| match evalstats::mean_with_sem_ci(v, Z95) {
        Some((m, h)) => (m, m - h, m + h),
        None => (f64::NAN, f64::NAN, f64::NAN),
    };
    Ok(groups
        .into_iter()
        .map(|((_, setting, regime), g)| {
            let (md, dlo, dhi) = interval(&g.deg);
            let (mn, nlo, nhi) = interval(&g.non);
            let (gap, glo, ghi) = interval(&g.gap);
            WeightSummaryRow {
                setting,
                regime,
                mean_w_degraded: md,
                mean_w_nondegraded: mn,
                ci_lo_degraded: dlo,
                ci_hi_degraded: dhi,
                ci_lo_nondegraded: nlo,
                ci_hi_nondegraded: nhi,
                gap,
                gap_ci_lo: glo,
                gap_ci_hi: ghi,
                n_runs: g.runs,
            }
        })
        .collect())
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), AggregateError> {
    let csv_err = |source| AggregateError::Csv {
        path: path.display().to_string(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().map_err(|source| AggregateError::Write {
        path: path.display().to_string(),
        source,
    })
}

/// Writes `report.csv`, `profile.csv`, `weights.csv` and `ratios.csv` into `dir`.
pub fn write_report(agg: &Aggregate, dir: &Path) -> Result<(), AggregateError> {
    fs::create_dir_all(dir).map_err(|source| AggregateError::Write {
        path: dir.display().to_string(),
        source,
    })?;
    write_rows(&dir.join("report.csv"), &agg.summary)?;
    write_rows(&dir.join("profile.csv"), &agg.profiles)?;
    write_rows(&dir.join("weights.csv"), &agg.weights)?;
    write_rows(&dir.join("ratios.csv"), &agg.ratios)
}
