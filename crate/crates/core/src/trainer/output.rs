//! CSV and text artifacts written by the command-line driver.

use std::path::Path;

use crate::error::{Error, Result};
use crate::losses::LossReport;

use super::config::HyperParam;
use super::experiment::{GridOutcome, MetricSummary, RunResult, SweepRow};

pub const RESULTS_HEADER: [&str; 11] = [
    "dataset",
    "method",
    "split_seed",
    "auc",
    "f1",
    "delta_sp",
    "delta_eo",
    "auc_std",
    "f1_std",
    "delta_sp_std",
    "delta_eo_std",
];

fn num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

fn metrics(m: &MetricSummary) -> [String; 4] {
    [num(m.auc), num(m.f1), num(m.delta_sp), num(m.delta_eo)]
}

/// One row per successful split, then one `aggregate` row with mean and
/// standard deviation, for every run.
pub fn write_results(path: &Path, runs: &[&RunResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(RESULTS_HEADER)?;
    for r in runs {
        for s in &r.splits {
            let m = MetricSummary {
                auc: s.test.auc,
                f1: s.test.f1,
                delta_sp: s.test.delta_sp,
                delta_eo: s.test.delta_eo,
            };
            let mut row = vec![r.dataset.clone(), r.method.clone(), s.seed.to_string()];
            row.extend(metrics(&m));
            row.extend(std::iter::repeat_n(String::new(), 4));
            w.write_record(&row)?;
        }
        let mut row = vec![r.dataset.clone(), r.method.clone(), "aggregate".to_string()];
        row.extend(metrics(&r.mean));
        row.extend(metrics(&r.std));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_epochs(path: &Path, pretrain: &[LossReport], train: &[LossReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "phase",
        "epoch",
        "pred",
        "inv",
        "suf",
        "sc",
        "env",
        "total",
        "skipped_inv",
        "skipped_sc",
        "skipped_env",
    ])?;
    for (phase, log) in [("pretrain", pretrain), ("train", train)] {
        for (e, r) in log.iter().enumerate() {
            w.write_record([
                phase.to_string(),
                (e + 1).to_string(),
                r.pred.to_string(),
                r.inv.to_string(),
                r.suf.to_string(),
                r.sc.to_string(),
                r.env.to_string(),
                r.total.to_string(),
                r.skipped_inv.to_string(),
                r.skipped_sc.to_string(),
                r.skipped_env.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Epoch logs for every split of a run, as `epochs_<seed>.csv` in `dir`.
pub fn write_run_epochs(dir: &Path, run: &RunResult) -> Result<()> {
    for s in &run.splits {
        write_epochs(
            &dir.join(format!("epochs_{}.csv", s.seed)),
            &s.pretrain_log,
            &s.train_log,
        )?;
    }
    Ok(())
}

/// Full grid table in enumeration order; `selected` marks the winner.
pub fn write_grid(path: &Path, grid: &GridOutcome) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let params: Vec<HyperParam> = grid.rows[0].point.iter().map(|(p, _)| *p).collect();
    let mut header: Vec<String> = params.iter().map(|p| p.name().to_string()).collect();
    header.extend(
        [
            "val_auc",
            "val_delta_sp",
            "auc",
            "f1",
            "delta_sp",
            "delta_eo",
            "failed_splits",
            "selected",
        ]
        .map(String::from),
    );
    w.write_record(&header)?;
    for (i, row) in grid.rows.iter().enumerate() {
        let mut rec: Vec<String> = row.point.iter().map(|(_, v)| v.to_string()).collect();
        rec.push(num(row.result.val_auc));
        rec.push(num(row.result.val_delta_sp));
        rec.extend(metrics(&row.result.mean));
        rec.push(row.result.failures.len().to_string());
        rec.push(u8::from(i == grid.best).to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_sweep(path: &Path, param: HyperParam, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        param.name(),
        "auc",
        "f1",
        "delta_sp",
        "delta_eo",
        "auc_std",
        "f1_std",
        "delta_sp_std",
        "delta_eo_std",
    ])?;
    for row in rows {
        let mut rec = vec![row.value.to_string()];
        rec.extend(metrics(&row.result.mean));
        rec.extend(metrics(&row.result.std));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
