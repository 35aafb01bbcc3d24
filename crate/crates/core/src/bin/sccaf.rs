use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::info;

use sccaf_core::encoder::{encode_sparse, positive_probabilities, predict};
use sccaf_core::ingest::{load_dataset, make_split, TabularGraphDataset};
use sccaf_core::metrics::{auc, equal_opportunity, f1, statistical_parity, threshold};
use sccaf_core::trainer::output::{
    write_epochs, write_grid, write_results, write_run_epochs, write_sweep,
};
use sccaf_core::trainer::{
    grid_search, prepare_dataset, run_experiment, run_split, sweep, ConfigFile, Grid, HyperParam,
    RunResult, SplitResult,
};
use sccaf_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "sccaf",
    version,
    about = "Fairness-aware node classification on attributed graphs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Flat `section.key = value` config file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dataset name (german, bail, credit, or any name with data.* keys set)
    #[arg(long, global = true)]
    dataset: Option<String>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Base seed: split seeds become N..N+4 and the model seed N
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Parallel runs
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    beta: Option<f64>,
    #[arg(long, global = true)]
    gamma: Option<f64>,
    #[arg(long, global = true)]
    omega: Option<f64>,
    #[arg(long, global = true)]
    eta: Option<f64>,
    #[arg(long, global = true)]
    tau: Option<f64>,
    #[arg(long = "K", global = true)]
    k: Option<usize>,
    #[arg(long = "Kprime", global = true)]
    k_prime: Option<usize>,
    /// Any config key, e.g. `--set train.epochs=200` (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain and train once, on the first split seed
    Train,
    /// Pretrain and train on every split seed and aggregate
    Experiment,
    /// Grid search over hyperparameters (grid.* keys, or the standard grid)
    Grid,
    /// Vary one of omega or eta with the other settings fixed
    Sweep {
        #[arg(long)]
        param: Option<String>,
        /// Comma-separated values
        #[arg(long)]
        values: Option<String>,
    },
    /// Metrics for a predictions file with columns y, s, score and optional pred
    Audit { predictions: PathBuf },
}

fn resolve(common: &Common) -> Result<ConfigFile> {
    let mut cfg = match &common.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    if let Some(name) = &common.dataset {
        cfg.set("data.name", name)?;
    }
    if let Some(out) = &common.out {
        cfg.experiment.out_dir = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg.experiment.seeds = (seed..seed + 5).collect();
        cfg.experiment.model_seed = seed;
    }
    if let Some(j) = common.jobs {
        cfg.experiment.jobs = j;
    }
    let w = &mut cfg.experiment.weights;
    let floats = [
        (HyperParam::Alpha, common.alpha),
        (HyperParam::Beta, common.beta),
        (HyperParam::Gamma, common.gamma),
        (HyperParam::Omega, common.omega),
        (HyperParam::Eta, common.eta),
        (HyperParam::Tau, common.tau),
        (HyperParam::K, common.k.map(|v| v as f64)),
        (HyperParam::KPrime, common.k_prime.map(|v| v as f64)),
    ];
    for (p, v) in floats {
        if let Some(v) = v {
            p.set(w, v)?;
        }
    }
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.experiment.validate()?;
    Ok(cfg)
}

fn load(cfg: &ConfigFile) -> Result<TabularGraphDataset> {
    let d = &cfg.experiment.data;
    let ds = load_dataset(&d.features_path(), &d.edges_path(), &d.meta()?)?;
    info!(
        "loaded {}: {} nodes, {} edges, {} features",
        ds.name,
        ds.num_nodes(),
        ds.graph.num_edges(),
        ds.num_features()
    );
    Ok(ds)
}

fn prepare_out(cfg: &ConfigFile) -> Result<PathBuf> {
    let dir = cfg.experiment.out_dir.clone();
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    let lock = dir.join("config.lock");
    fs::write(&lock, cfg.to_lock_string()).map_err(|e| io_err(&lock, e))?;
    Ok(dir)
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn summarize(r: &RunResult) {
    println!(
        "{} {}: AUC {:.2} ± {:.2}  F1 {:.2} ± {:.2}  ΔSP {:.2} ± {:.2}  ΔEO {:.2} ± {:.2}  ({} splits, {:.1}s, config {})",
        r.dataset,
        r.method,
        r.mean.auc,
        r.std.auc,
        r.mean.f1,
        r.std.f1,
        r.mean.delta_sp,
        r.std.delta_sp,
        r.mean.delta_eo,
        r.std.delta_eo,
        r.splits.len(),
        r.elapsed.as_secs_f64(),
        r.fingerprint,
    );
    for f in &r.failures {
        eprintln!("split {} failed: {}", f.seed, f.error);
    }
}

fn cmd_train(cfg: &ConfigFile) -> Result<bool> {
    let e = &cfg.experiment;
    let ds = load(cfg)?;
    let dir = prepare_out(cfg)?;
    let start = Instant::now();
    let split = make_split(&ds, e.ratios, e.seeds[0])?;
    let (pre, out) = run_split(&ds, &split, e)?;
    write_epochs(&dir.join("epochs.csv"), &pre.log, &out.log)?;
    out.params.save(&dir.join("model.txt"))?;

    let prepared = prepare_dataset(&ds, &split, e);
    let state = encode_sparse(
        &prepared.features,
        &prepared.graph.normalized_adjacency(),
        &out.params.encoder,
    )?;
    let scores = positive_probabilities(&predict(&state.content(), &out.params.head)?);
    let part = |i: usize| {
        if split.train_idx.binary_search(&i).is_ok() {
            "train"
        } else if split.val_idx.binary_search(&i).is_ok() {
            "val"
        } else if split.test_idx.binary_search(&i).is_ok() {
            "test"
        } else {
            ""
        }
    };
    let pred_path = dir.join("predictions.csv");
    let mut w = csv::Writer::from_path(&pred_path)?;
    w.write_record(["node", "split", "y", "s", "score", "pred"])?;
    let hard = threshold(&scores);
    for i in 0..ds.num_nodes() {
        w.write_record([
            i.to_string(),
            part(i).to_string(),
            ds.labels[i].map_or(String::new(), |y| y.to_string()),
            ds.sensitive[i].to_string(),
            scores[i].to_string(),
            hard[i].to_string(),
        ])?;
    }
    w.flush().map_err(|e| io_err(&pred_path, e))?;

    let split_result = SplitResult {
        seed: split.seed,
        test: out.test.clone(),
        val_auc: out.val_auc,
        val_delta_sp: out.val_delta_sp,
        best_epoch: out.best_epoch,
        epochs_run: out.epochs_run,
        warnings: out.warnings,
        pretrain_log: Vec::new(),
        train_log: Vec::new(),
    };
    let r = single_run(e, &ds.name, split_result, start);
    write_results(&dir.join("results.csv"), &[&r])?;
    summarize(&r);
    println!(
        "best epoch {} of {}, validation AUC {:.2}; outputs in {}",
        out.best_epoch,
        out.epochs_run,
        out.val_auc,
        dir.display()
    );
    Ok(true)
}

fn single_run(
    e: &sccaf_core::trainer::ExperimentConfig,
    name: &str,
    s: SplitResult,
    start: Instant,
) -> RunResult {
    let t = &s.test;
    let mean = sccaf_core::trainer::MetricSummary {
        auc: t.auc,
        f1: t.f1,
        delta_sp: t.delta_sp,
        delta_eo: t.delta_eo,
    };
    RunResult {
        dataset: name.to_string(),
        method: e.method().to_string(),
        mean,
        std: Default::default(),
        val_auc: s.val_auc,
        val_delta_sp: s.val_delta_sp,
        splits: vec![s],
        failures: Vec::new(),
        fingerprint: sccaf_core::trainer::fingerprint(e),
        elapsed: start.elapsed(),
    }
}

fn cmd_experiment(cfg: &ConfigFile) -> Result<bool> {
    let ds = load(cfg)?;
    let dir = prepare_out(cfg)?;
    let r = run_experiment(&ds, &cfg.experiment)?;
    write_results(&dir.join("results.csv"), &[&r])?;
    write_run_epochs(&dir, &r)?;
    summarize(&r);
    Ok(!r.failed())
}

fn cmd_grid(cfg: &ConfigFile) -> Result<bool> {
    let ds = load(cfg)?;
    let dir = prepare_out(cfg)?;
    let grid = cfg.grid.clone().unwrap_or_else(Grid::standard);
    let outcome = grid_search(&ds, &cfg.experiment, &grid)?;
    write_grid(&dir.join("grid.csv"), &outcome)?;
    let best = outcome.best();
    write_results(&dir.join("results.csv"), &[&best.result])?;
    write_run_epochs(&dir, &best.result)?;
    let point: Vec<String> = best
        .point
        .iter()
        .map(|(p, v)| format!("{}={v}", p.name()))
        .collect();
    println!(
        "selected {} of {} points: {}",
        outcome.best + 1,
        outcome.rows.len(),
        point.join(" ")
    );
    summarize(&best.result);
    Ok(outcome.rows.iter().all(|r| !r.result.failed()))
}

fn cmd_sweep(cfg: &mut ConfigFile, param: Option<&str>, values: Option<&str>) -> Result<bool> {
    if let Some(p) = param {
        cfg.set("sweep.param", p)?;
    }
    if let Some(v) = values {
        cfg.set("sweep.values", v)?;
    }
    if !matches!(cfg.sweep.param, HyperParam::Omega | HyperParam::Eta) {
        return Err(Error::Config("sweeps vary omega or eta".into()));
    }
    let ds = load(cfg)?;
    let dir = prepare_out(cfg)?;
    let rows = sweep(&ds, &cfg.experiment, &cfg.sweep)?;
    write_sweep(&dir.join("sweep.csv"), cfg.sweep.param, &rows)?;
    for row in &rows {
        print!("{}={}: ", cfg.sweep.param.name(), row.value);
        summarize(&row.result);
    }
    Ok(rows.iter().all(|r| !r.result.failed()))
}

fn cmd_audit(path: &Path) -> Result<bool> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let missing = |name: &str| Error::Ingest(format!("{} has no {name:?} column", path.display()));
    let (yc, sc, pc) = (
        col("y").ok_or_else(|| missing("y"))?,
        col("s").ok_or_else(|| missing("s"))?,
        col("score").ok_or_else(|| missing("score"))?,
    );
    let hard_col = col("pred");
    let (mut y, mut s, mut score, mut hard) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let cell = |c: usize| rec.get(c).unwrap_or("").trim().to_string();
        let bad = |c: usize| {
            Error::Ingest(format!(
                "row {}: bad value {:?} in column {}",
                row + 2,
                cell(c),
                &headers[c]
            ))
        };
        if cell(yc).is_empty() {
            continue;
        }
        let bit = |c: usize| match cell(c).as_str() {
            "0" => Ok(0u8),
            "1" => Ok(1u8),
            _ => Err(bad(c)),
        };
        y.push(bit(yc)?);
        s.push(bit(sc)?);
        score.push(cell(pc).parse::<f64>().map_err(|_| bad(pc))?);
        if let Some(h) = hard_col {
            hard.push(bit(h)?);
        }
    }
    if hard_col.is_none() {
        hard = threshold(&score);
    }
    let idx: Vec<usize> = (0..y.len()).collect();
    println!("nodes {}", idx.len());
    println!("auc {}", auc(&score, &y, &idx)?);
    println!("f1 {}", f1(&hard, &y, &idx)?);
    println!("delta_sp {}", statistical_parity(&hard, &s, &idx)?);
    println!("delta_eo {}", equal_opportunity(&hard, &y, &s, &idx)?);
    Ok(true)
}

fn run(cli: Cli) -> Result<bool> {
    if let Command::Audit { predictions } = &cli.command {
        return cmd_audit(predictions);
    }
    let mut cfg = resolve(&cli.common)?;
    match &cli.command {
        Command::Train => cmd_train(&cfg),
        Command::Experiment => cmd_experiment(&cfg),
        Command::Grid => cmd_grid(&cfg),
        Command::Sweep { param, values } => {
            cmd_sweep(&mut cfg, param.as_deref(), values.as_deref())
        }
        Command::Audit { .. } => unreachable!(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
