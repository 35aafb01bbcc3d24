//! Multi-split experiments, grid search and single-parameter sweeps.

use std::cmp::Ordering;
use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ingest::{make_splits, SplitAssignment, TabularGraphDataset};
use crate::losses::LossReport;
use crate::metrics::EvalReport;

use super::config::{ConfigFile, ExperimentConfig, Grid, HyperParam, SweepSpec};
use super::run::{run_split, CfWarnings};

/// Mean or standard deviation of the four reported metrics.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricSummary {
    pub auc: f64,
    pub f1: f64,
    pub delta_sp: f64,
    pub delta_eo: f64,
}

impl MetricSummary {
    fn of(r: &EvalReport) -> Self {
        MetricSummary {
            auc: r.auc,
            f1: r.f1,
            delta_sp: r.delta_sp,
            delta_eo: r.delta_eo,
        }
    }

    fn values(&self) -> [f64; 4] {
        [self.auc, self.f1, self.delta_sp, self.delta_eo]
    }
}

#[derive(Clone, Debug)]
pub struct SplitResult {
    pub seed: u64,
    pub test: EvalReport,
    pub val_auc: f64,
    pub val_delta_sp: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub warnings: CfWarnings,
    pub pretrain_log: Vec<LossReport>,
    pub train_log: Vec<LossReport>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitFailure {
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub dataset: String,
    pub method: String,
    pub splits: Vec<SplitResult>,
    pub failures: Vec<SplitFailure>,
    pub mean: MetricSummary,
    /// Population standard deviation over the successful splits.
    pub std: MetricSummary,
    pub val_auc: f64,
    pub val_delta_sp: f64,
    pub fingerprint: String,
    pub elapsed: Duration,
}

impl RunResult {
    pub fn failed(&self) -> bool {
        !self.failures.is_empty()
    }

    fn aggregate(
        cfg: &ExperimentConfig,
        dataset: &str,
        splits: Vec<SplitResult>,
        failures: Vec<SplitFailure>,
        elapsed: Duration,
    ) -> Self {
        let per: Vec<[f64; 4]> = splits
            .iter()
            .map(|s| MetricSummary::of(&s.test).values())
            .collect();
        let n = per.len() as f64;
        let mut mean = [f64::NAN; 4];
        let mut std = [f64::NAN; 4];
        if !per.is_empty() {
            for k in 0..4 {
                // offset by the first value so equal inputs give an exact mean
                let first = per[0][k];
                let m = first + per.iter().map(|v| v[k] - first).sum::<f64>() / n;
                mean[k] = m;
                std[k] = (per.iter().map(|v| (v[k] - m).powi(2)).sum::<f64>() / n).sqrt();
            }
        }
        let avg = |f: fn(&SplitResult) -> f64| {
            if splits.is_empty() {
                f64::NAN
            } else {
                splits.iter().map(f).sum::<f64>() / n
            }
        };
        let summary = |v: [f64; 4]| MetricSummary {
            auc: v[0],
            f1: v[1],
            delta_sp: v[2],
            delta_eo: v[3],
        };
        RunResult {
            dataset: dataset.to_string(),
            method: cfg.method().to_string(),
            val_auc: avg(|s| s.val_auc),
            val_delta_sp: avg(|s| s.val_delta_sp),
            mean: summary(mean),
            std: summary(std),
            splits,
            failures,
            fingerprint: fingerprint(cfg),
            elapsed,
        }
    }
}

/// Short hash of the resolved configuration, excluding output location and
/// parallelism.
pub fn fingerprint(cfg: &ExperimentConfig) -> String {
    let mut e = cfg.clone();
    e.jobs = 1;
    e.out_dir = Default::default();
    let lock = ConfigFile {
        experiment: e,
        ..Default::default()
    }
    .to_lock_string();
    let mut h = DefaultHasher::new();
    lock.hash(&mut h);
    format!("{:016x}", h.finish())
}

fn with_pool<R: Send>(jobs: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} workers: {e}")))?;
    Ok(pool.install(f))
}

/// Runs every (config, split) pair on up to `jobs` workers and groups the
/// outcomes per config. Split failures are recorded, not propagated.
pub fn run_many(
    ds: &TabularGraphDataset,
    cfgs: &[ExperimentConfig],
    jobs: usize,
) -> Result<Vec<RunResult>> {
    let mut units: Vec<(usize, SplitAssignment)> = Vec::new();
    for (c, cfg) in cfgs.iter().enumerate() {
        cfg.validate()?;
        for split in make_splits(ds, cfg.ratios, &cfg.seeds)? {
            units.push((c, split));
        }
    }
    let outcomes = with_pool(jobs, || {
        units
            .par_iter()
            .map(|(c, split)| {
                let start = Instant::now();
                let r = run_split(ds, split, &cfgs[*c]).map(|(pre, out)| SplitResult {
                    seed: split.seed,
                    test: out.test,
                    val_auc: out.val_auc,
                    val_delta_sp: out.val_delta_sp,
                    best_epoch: out.best_epoch,
                    epochs_run: out.epochs_run,
                    warnings: CfWarnings {
                        empty_env_cf: out.warnings.empty_env_cf,
                        empty_content_cf: out.warnings.empty_content_cf,
                        empty_env_neighbors: pre.warnings.empty_env_neighbors
                            + out.warnings.empty_env_neighbors,
                        skipped_sc_anchors: pre.warnings.skipped_sc_anchors
                            + out.warnings.skipped_sc_anchors,
                    },
                    pretrain_log: pre.log,
                    train_log: out.log,
                });
                (r, start.elapsed())
            })
            .collect::<Vec<_>>()
    })?;

    let mut grouped: Vec<(Vec<SplitResult>, Vec<SplitFailure>, Duration)> =
        cfgs.iter().map(|_| Default::default()).collect();
    for ((c, split), (r, took)) in units.iter().zip(outcomes) {
        let g = &mut grouped[*c];
        g.2 += took;
        match r {
            Ok(s) => g.0.push(s),
            Err(e) => {
                log::warn!("split {} failed: {e}", split.seed);
                g.1.push(SplitFailure {
                    seed: split.seed,
                    error: e.to_string(),
                })
            }
        }
    }
    Ok(cfgs
        .iter()
        .zip(grouped)
        .map(|(cfg, (splits, failures, took))| {
            RunResult::aggregate(cfg, &ds.name, splits, failures, took)
        })
        .collect())
}

/// Pretrain and train on each split seed, then aggregate test metrics.
pub fn run_experiment(ds: &TabularGraphDataset, cfg: &ExperimentConfig) -> Result<RunResult> {
    Ok(run_many(ds, std::slice::from_ref(cfg), cfg.jobs)?.remove(0))
}

#[derive(Clone, Debug)]
pub struct GridRow {
    pub point: Vec<(HyperParam, f64)>,
    pub result: RunResult,
}

#[derive(Clone, Debug)]
pub struct GridOutcome {
    pub rows: Vec<GridRow>,
    /// Index of the selected row.
    pub best: usize,
}

impl GridOutcome {
    pub fn best(&self) -> &GridRow {
        &self.rows[self.best]
    }
}

fn apply_point(cfg: &ExperimentConfig, point: &[(HyperParam, f64)]) -> Result<ExperimentConfig> {
    let mut c = cfg.clone();
    for &(p, v) in point {
        p.set(&mut c.weights, v)?;
    }
    Ok(c)
}

/// Orders rows by mean validation AUC (higher first), then mean validation
/// Δ_SP (lower first), then parameter values. Failed rows sort last.
fn selection_order(a: &GridRow, b: &GridRow) -> Ordering {
    let key = |r: &GridRow| {
        let auc = if r.result.val_auc.is_nan() {
            f64::NEG_INFINITY
        } else {
            r.result.val_auc
        };
        let sp = if r.result.val_delta_sp.is_nan() {
            f64::INFINITY
        } else {
            r.result.val_delta_sp
        };
        (auc, sp)
    };
    let (aa, asp) = key(a);
    let (ba, bsp) = key(b);
    ba.total_cmp(&aa).then(asp.total_cmp(&bsp)).then_with(|| {
        let mut pa = a.point.clone();
        let mut pb = b.point.clone();
        pa.sort_by(|x, y| x.0.cmp(&y.0));
        pb.sort_by(|x, y| x.0.cmp(&y.0));
        pa.iter()
            .zip(&pb)
            .map(|(x, y)| x.0.cmp(&y.0).then(x.1.total_cmp(&y.1)))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

/// Every point of the grid as a full experiment; the table keeps grid order.
pub fn grid_search(
    ds: &TabularGraphDataset,
    cfg: &ExperimentConfig,
    grid: &Grid,
) -> Result<GridOutcome> {
    let points = grid.points()?;
    let cfgs = points
        .iter()
        .map(|p| apply_point(cfg, p))
        .collect::<Result<Vec<_>>>()?;
    let results = run_many(ds, &cfgs, cfg.jobs)?;
    let rows: Vec<GridRow> = points
        .into_iter()
        .zip(results)
        .map(|(point, result)| GridRow { point, result })
        .collect();
    let best = (0..rows.len())
        .min_by(|&a, &b| selection_order(&rows[a], &rows[b]))
        .expect("grid has at least one point");
    Ok(GridOutcome { rows, best })
}

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub value: f64,
    pub result: RunResult,
}

/// One experiment per value of a single hyperparameter, others held fixed.
/// Rows are sorted by value.
pub fn sweep(
    ds: &TabularGraphDataset,
    cfg: &ExperimentConfig,
    spec: &SweepSpec,
) -> Result<Vec<SweepRow>> {
    if spec.values.is_empty() {
        return Err(Error::Contract(format!(
            "sweep over {} has no values",
            spec.param.name()
        )));
    }
    let mut values = spec.values.clone();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let cfgs = values
        .iter()
        .map(|&v| apply_point(cfg, &[(spec.param, v)]))
        .collect::<Result<Vec<_>>>()?;
    Ok(values
        .into_iter()
        .zip(run_many(ds, &cfgs, cfg.jobs)?)
        .map(|(value, result)| SweepRow { value, result })
        .collect())
}
