//! Flat `section.key = value` configuration files.
//!
//! Blank lines and `#` comments are ignored. Lists are comma separated.
//! Every key has a default, so an empty file is a valid configuration.
//! [`ConfigFile::to_lock_string`] echoes the fully resolved configuration in
//! a fixed key order; parsing that text gives back the same configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::ingest::{BinaryRule, DatasetMeta, SplitRatios};
use crate::losses::{Distance, LossWeights};

/// Space in which opposite-group neighbours for the environmental term are
/// searched.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NeighborSpace {
    /// Full latent rows `h`.
    Latent,
    /// Environment block `e` only.
    Environment,
}

impl FromStr for NeighborSpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "latent" => Ok(NeighborSpace::Latent),
            "environment" => Ok(NeighborSpace::Environment),
            other => Err(Error::Config(format!("unknown neighbour space {other:?}"))),
        }
    }
}

impl std::fmt::Display for NeighborSpace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NeighborSpace::Latent => "latent",
            NeighborSpace::Environment => "environment",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub name: String,
    /// Directory holding `features.csv` and `edges.csv`, used when the
    /// explicit paths are absent.
    pub dir: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub edges: Option<PathBuf>,
    pub label: Option<String>,
    pub label_rule: Option<BinaryRule>,
    pub sensitive: Option<String>,
    pub sensitive_rule: Option<BinaryRule>,
    pub drop: Option<Vec<String>>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            name: "german".into(),
            dir: None,
            features: None,
            edges: None,
            label: None,
            label_rule: None,
            sensitive: None,
            sensitive_rule: None,
            drop: None,
        }
    }
}

impl DataConfig {
    fn base_dir(&self) -> PathBuf {
        self.dir
            .clone()
            .unwrap_or_else(|| Path::new("data").join(&self.name))
    }

    pub fn features_path(&self) -> PathBuf {
        self.features
            .clone()
            .unwrap_or_else(|| self.base_dir().join("features.csv"))
    }

    pub fn edges_path(&self) -> PathBuf {
        self.edges
            .clone()
            .unwrap_or_else(|| self.base_dir().join("edges.csv"))
    }

    /// Preset column roles for known names, overridden by explicit keys.
    pub fn meta(&self) -> Result<DatasetMeta> {
        let mut meta = match DatasetMeta::preset(&self.name) {
            Some(m) => m,
            None => {
                let (Some(label), Some(sens)) = (&self.label, &self.sensitive) else {
                    return Err(Error::Config(format!(
                        "dataset {:?} has no preset; set data.label and data.sensitive",
                        self.name
                    )));
                };
                DatasetMeta::new(&self.name, label, sens)
            }
        };
        if let Some(v) = &self.label {
            meta.label_column = v.clone();
        }
        if let Some(v) = &self.label_rule {
            meta.label_rule = v.clone();
        }
        if let Some(v) = &self.sensitive {
            meta.sensitive_column = v.clone();
        }
        if let Some(v) = &self.sensitive_rule {
            meta.sensitive_rule = v.clone();
        }
        if let Some(v) = &self.drop {
            meta.drop_columns = v.clone();
        }
        Ok(meta)
    }
}

/// Everything that determines one experiment (five splits of pretrain then
/// train).
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub ratios: SplitRatios,
    pub seeds: Vec<u64>,
    pub weights: LossWeights,
    pub hidden: usize,
    pub content_dim: usize,
    pub dropout: f64,
    pub model_seed: u64,
    pub lr: f64,
    pub weight_decay: f64,
    pub pretrain_epochs: usize,
    pub train_epochs: usize,
    pub patience: usize,
    pub refresh_period: usize,
    /// Continue from the pretrained weights instead of re-initializing.
    pub warm_start: bool,
    pub neighbor_space: NeighborSpace,
    pub standardize: bool,
    pub jobs: usize,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataConfig::default(),
            ratios: SplitRatios::default(),
            seeds: vec![0, 1, 2, 3, 4],
            weights: LossWeights::default(),
            hidden: 16,
            content_dim: 8,
            dropout: 0.0,
            model_seed: 0,
            lr: 0.01,
            weight_decay: 1e-5,
            pretrain_epochs: 300,
            train_epochs: 1000,
            patience: 100,
            refresh_period: 1,
            warm_start: false,
            neighbor_space: NeighborSpace::Latent,
            standardize: true,
            jobs: 1,
            out_dir: PathBuf::from("runs"),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight decay must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        for (name, v) in [
            ("model.hidden", self.hidden),
            ("model.content_dim", self.content_dim),
            ("train.pretrain_epochs", self.pretrain_epochs),
            ("train.epochs", self.train_epochs),
            ("train.patience", self.patience),
            ("train.refresh_period", self.refresh_period),
            ("train.jobs", self.jobs),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("split.seeds is empty".into()));
        }
        Ok(())
    }

    /// `GCN`, `CAF` or `SCCAF` depending on which regularizers are active.
    pub fn method(&self) -> &'static str {
        let w = &self.weights;
        if w.omega != 0.0 || w.eta != 0.0 {
            "SCCAF"
        } else if w.alpha != 0.0 || w.beta != 0.0 {
            "CAF"
        } else {
            "GCN"
        }
    }
}

/// Hyperparameters that a grid or a sweep may vary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum HyperParam {
    K,
    KPrime,
    Alpha,
    Beta,
    Gamma,
    Omega,
    Eta,
    Tau,
}

impl HyperParam {
    pub const ALL: [HyperParam; 8] = [
        HyperParam::K,
        HyperParam::KPrime,
        HyperParam::Alpha,
        HyperParam::Beta,
        HyperParam::Gamma,
        HyperParam::Omega,
        HyperParam::Eta,
        HyperParam::Tau,
    ];

    pub fn name(self) -> &'static str {
        match self {
            HyperParam::K => "k",
            HyperParam::KPrime => "k_prime",
            HyperParam::Alpha => "alpha",
            HyperParam::Beta => "beta",
            HyperParam::Gamma => "gamma",
            HyperParam::Omega => "omega",
            HyperParam::Eta => "eta",
            HyperParam::Tau => "tau",
        }
    }

    pub fn get(self, w: &LossWeights) -> f64 {
        match self {
            HyperParam::K => w.k as f64,
            HyperParam::KPrime => w.k_prime as f64,
            HyperParam::Alpha => w.alpha,
            HyperParam::Beta => w.beta,
            HyperParam::Gamma => w.gamma,
            HyperParam::Omega => w.omega,
            HyperParam::Eta => w.eta,
            HyperParam::Tau => w.tau,
        }
    }

    pub fn set(self, w: &mut LossWeights, v: f64) -> Result<()> {
        let count = |v: f64| {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::Config(format!(
                    "{} must be a positive integer, got {v}",
                    self.name()
                )))
            }
        };
        match self {
            HyperParam::K => w.k = count(v)?,
            HyperParam::KPrime => w.k_prime = count(v)?,
            HyperParam::Alpha => w.alpha = v,
            HyperParam::Beta => w.beta = v,
            HyperParam::Gamma => w.gamma = v,
            HyperParam::Omega => w.omega = v,
            HyperParam::Eta => w.eta = v,
            HyperParam::Tau => w.tau = v,
        }
        Ok(())
    }
}

impl FromStr for HyperParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        let key = match key.as_str() {
            "kprime" | "k'" => "k_prime",
            other => other,
        };
        HyperParam::ALL
            .into_iter()
            .find(|p| p.name() == key)
            .ok_or_else(|| Error::Config(format!("unknown hyperparameter {s:?}")))
    }
}

/// Candidate values per hyperparameter; parameters not listed stay at the
/// experiment value.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Grid {
    pub axes: Vec<(HyperParam, Vec<f64>)>,
}

impl Grid {
    /// K ∈ {4, 6, 10}, K′ ∈ {10, 20}, α ∈ {0.2, 0.1, 0.07},
    /// β ∈ {0.1, 0.05, 0.01}, η ∈ {0.1, 0.03}; γ and ω stay fixed.
    pub fn standard() -> Self {
        Grid {
            axes: vec![
                (HyperParam::K, vec![4.0, 6.0, 10.0]),
                (HyperParam::KPrime, vec![10.0, 20.0]),
                (HyperParam::Alpha, vec![0.2, 0.1, 0.07]),
                (HyperParam::Beta, vec![0.1, 0.05, 0.01]),
                (HyperParam::Eta, vec![0.1, 0.03]),
            ],
        }
    }

    pub fn set(&mut self, p: HyperParam, values: Vec<f64>) {
        match self.axes.iter_mut().find(|(q, _)| *q == p) {
            Some(axis) => axis.1 = values,
            None => self.axes.push((p, values)),
        }
    }

    /// All points of the Cartesian product, first axis slowest.
    pub fn points(&self) -> Result<Vec<Vec<(HyperParam, f64)>>> {
        if self.axes.is_empty() || self.axes.iter().any(|(_, v)| v.is_empty()) {
            return Err(Error::Contract("grid has an empty axis".into()));
        }
        let mut points = vec![Vec::new()];
        for (p, values) in &self.axes {
            points = points
                .into_iter()
                .flat_map(|pt: Vec<(HyperParam, f64)>| {
                    values.iter().map(move |&v| {
                        let mut next = pt.clone();
                        next.push((*p, v));
                        next
                    })
                })
                .collect();
        }
        Ok(points)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub param: HyperParam,
    pub values: Vec<f64>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            param: HyperParam::Omega,
            values: vec![0.001, 0.01, 0.03, 0.1, 0.3, 1.0],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigFile {
    pub experiment: ExperimentConfig,
    pub grid: Option<Grid>,
    pub sweep: SweepSpec,
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: expected true or false, got {v:?}"
        ))),
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(", ")
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ConfigFile::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(cfg)
    }

    /// Sets one key. Used for file lines and command-line overrides alike.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let e = &mut self.experiment;
        let path = || Some(PathBuf::from(v));
        let text = || (!v.is_empty()).then(|| v.to_string());
        match key {
            "data.name" => e.data.name = v.to_string(),
            "data.dir" => e.data.dir = path(),
            "data.features" => e.data.features = path(),
            "data.edges" => e.data.edges = path(),
            "data.label" => e.data.label = text(),
            "data.label_rule" => e.data.label_rule = Some(BinaryRule::parse(v)?),
            "data.sensitive" => e.data.sensitive = text(),
            "data.sensitive_rule" => e.data.sensitive_rule = Some(BinaryRule::parse(v)?),
            "data.drop" => {
                e.data.drop = Some(
                    v.split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(String::from)
                        .collect(),
                )
            }
            "split.train" => e.ratios.train = parse_num(key, v)?,
            "split.val" => e.ratios.val = parse_num(key, v)?,
            "split.test" => e.ratios.test = parse_num(key, v)?,
            "split.seeds" => e.seeds = parse_list(key, v)?,
            "model.hidden" => e.hidden = parse_num(key, v)?,
            "model.content_dim" => e.content_dim = parse_num(key, v)?,
            "model.dropout" => e.dropout = parse_num(key, v)?,
            "model.seed" => e.model_seed = parse_num(key, v)?,
            "loss.distance" => e.weights.distance = v.parse::<Distance>()?,
            "optim.lr" => e.lr = parse_num(key, v)?,
            "optim.weight_decay" => e.weight_decay = parse_num(key, v)?,
            "train.pretrain_epochs" => e.pretrain_epochs = parse_num(key, v)?,
            "train.epochs" => e.train_epochs = parse_num(key, v)?,
            "train.patience" => e.patience = parse_num(key, v)?,
            "train.refresh_period" => e.refresh_period = parse_num(key, v)?,
            "train.warm_start" => e.warm_start = parse_bool(key, v)?,
            "train.neighbor_space" => e.neighbor_space = v.parse()?,
            "train.standardize" => e.standardize = parse_bool(key, v)?,
            "train.jobs" => e.jobs = parse_num(key, v)?,
            "output.dir" => e.out_dir = PathBuf::from(v),
            "sweep.param" => self.sweep.param = v.parse()?,
            "sweep.values" => self.sweep.values = parse_list(key, v)?,
            _ => {
                if let Some(p) = key.strip_prefix("loss.") {
                    let p: HyperParam = p.parse()?;
                    p.set(&mut e.weights, parse_num(key, v)?)?;
                } else if let Some(p) = key.strip_prefix("grid.") {
                    let p: HyperParam = p.parse()?;
                    self.grid
                        .get_or_insert_with(Grid::default)
                        .set(p, parse_list(key, v)?);
                } else {
                    return Err(Error::Config(format!("unknown key {key:?}")));
                }
            }
        }
        Ok(())
    }

    /// Resolved configuration in canonical key order.
    pub fn to_lock_string(&self) -> String {
        let e = &self.experiment;
        let d = &e.data;
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("data.name", d.name.clone());
        put("data.features", d.features_path().display().to_string());
        put("data.edges", d.edges_path().display().to_string());
        if let Ok(meta) = d.meta() {
            put("data.label", meta.label_column);
            put("data.label_rule", meta.label_rule.to_string());
            put("data.sensitive", meta.sensitive_column);
            put("data.sensitive_rule", meta.sensitive_rule.to_string());
            put("data.drop", meta.drop_columns.join(", "));
        }
        put("split.train", e.ratios.train.to_string());
        put("split.val", e.ratios.val.to_string());
        put("split.test", e.ratios.test.to_string());
        put("split.seeds", join(&e.seeds));
        put("model.hidden", e.hidden.to_string());
        put("model.content_dim", e.content_dim.to_string());
        put("model.dropout", e.dropout.to_string());
        put("model.seed", e.model_seed.to_string());
        for p in HyperParam::ALL {
            put(&format!("loss.{}", p.name()), p.get(&e.weights).to_string());
        }
        put("loss.distance", e.weights.distance.to_string());
        put("optim.lr", e.lr.to_string());
        put("optim.weight_decay", e.weight_decay.to_string());
        put("train.pretrain_epochs", e.pretrain_epochs.to_string());
        put("train.epochs", e.train_epochs.to_string());
        put("train.patience", e.patience.to_string());
        put("train.refresh_period", e.refresh_period.to_string());
        put("train.warm_start", e.warm_start.to_string());
        put("train.neighbor_space", e.neighbor_space.to_string());
        put("train.standardize", e.standardize.to_string());
        put("train.jobs", e.jobs.to_string());
        put("output.dir", e.out_dir.display().to_string());
        if let Some(g) = &self.grid {
            for (p, values) in &g.axes {
                put(&format!("grid.{}", p.name()), join(values));
            }
        }
        put("sweep.param", self.sweep.param.name().to_string());
        put("sweep.values", join(&self.sweep.values));
        s
    }
}
