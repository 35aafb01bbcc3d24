//! Tabular graph datasets: CSV loading, feature standardization and
//! stratified train/validation/test splits.
//!
//! On disk a dataset is two files. `features.csv` has a header and one row
//! per node; it holds the feature columns plus a label column and a
//! sensitive-attribute column (an empty label cell marks an unlabeled node).
//! `edges.csv` holds two 0-based node indices per row, with an optional
//! header.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::tensor::Tensor;

/// How a raw cell is mapped to {0, 1}.
#[derive(Clone, Debug, PartialEq)]
pub enum BinaryRule {
    /// Cell must already be numeric 0 or 1.
    ZeroOne,
    /// Numeric cell; values strictly above the threshold map to 1.
    Above(f64),
    /// Cells equal to the given text map to 1, anything else to 0.
    Equals(String),
}

impl BinaryRule {
    fn apply(&self, cell: &str) -> std::result::Result<u8, String> {
        match self {
            BinaryRule::ZeroOne => match cell.trim().parse::<f64>() {
                Ok(v) if v == 0.0 => Ok(0),
                Ok(v) if v == 1.0 => Ok(1),
                _ => Err(format!("expected 0 or 1, found {cell:?}")),
            },
            BinaryRule::Above(t) => cell
                .trim()
                .parse::<f64>()
                .map(|v| u8::from(v > *t))
                .map_err(|_| format!("expected a number, found {cell:?}")),
            BinaryRule::Equals(s) => Ok(u8::from(cell.trim() == s)),
        }
    }

    /// Parses `zero_one`, `above:<t>` or `equals:<text>`.
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        if text == "zero_one" {
            return Ok(BinaryRule::ZeroOne);
        }
        if let Some(t) = text.strip_prefix("above:") {
            return t
                .trim()
                .parse()
                .map(BinaryRule::Above)
                .map_err(|_| Error::Config(format!("bad threshold in rule {text:?}")));
        }
        if let Some(v) = text.strip_prefix("equals:") {
            return Ok(BinaryRule::Equals(v.to_string()));
        }
        Err(Error::Config(format!(
            "unknown binarization rule {text:?} (zero_one | above:<t> | equals:<text>)"
        )))
    }
}

impl fmt::Display for BinaryRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BinaryRule::ZeroOne => write!(f, "zero_one"),
            BinaryRule::Above(t) => write!(f, "above:{t}"),
            BinaryRule::Equals(s) => write!(f, "equals:{s}"),
        }
    }
}

/// Column roles for one dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetMeta {
    pub name: String,
    pub label_column: String,
    pub label_rule: BinaryRule,
    pub sensitive_column: String,
    pub sensitive_rule: BinaryRule,
    /// Columns ignored entirely (identifiers, free text).
    pub drop_columns: Vec<String>,
}

impl DatasetMeta {
    pub fn new(name: &str, label_column: &str, sensitive_column: &str) -> Self {
        DatasetMeta {
            name: name.into(),
            label_column: label_column.into(),
            label_rule: BinaryRule::ZeroOne,
            sensitive_column: sensitive_column.into(),
            sensitive_rule: BinaryRule::ZeroOne,
            drop_columns: Vec::new(),
        }
    }

    /// Column roles of the commonly distributed preprocessed versions of the
    /// German credit, bail and credit-defaulter graphs.
    pub fn preset(name: &str) -> Option<Self> {
        let meta = match name.to_ascii_lowercase().as_str() {
            "german" => DatasetMeta {
                label_rule: BinaryRule::Above(0.0),
                sensitive_rule: BinaryRule::Equals("Female".into()),
                drop_columns: vec!["PurposeOfLoan".into()],
                ..DatasetMeta::new("german", "GoodCustomer", "Gender")
            },
            "bail" => DatasetMeta::new("bail", "RECID", "WHITE"),
            "credit" => DatasetMeta {
                sensitive_rule: BinaryRule::Above(25.0),
                ..DatasetMeta::new("credit", "NoDefaultNextMonth", "Age")
            },
            _ => return None,
        };
        Some(meta)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TabularGraphDataset {
    pub name: String,
    pub features: Tensor,
    pub feature_names: Vec<String>,
    /// `None` marks an unlabeled node.
    pub labels: Vec<Option<u8>>,
    pub sensitive: Vec<u8>,
    pub graph: Graph,
    pub label_name: String,
    pub sensitive_name: String,
}

impl TabularGraphDataset {
    /// Validates the cross-field invariants.
    pub fn new(
        name: &str,
        features: Tensor,
        feature_names: Vec<String>,
        labels: Vec<Option<u8>>,
        sensitive: Vec<u8>,
        graph: Graph,
    ) -> Result<Self> {
        let n = graph.num_nodes();
        if features.rows() != n || labels.len() != n || sensitive.len() != n {
            return Err(Error::Ingest(format!(
                "{} feature rows, {} labels, {} sensitive values for {n} nodes",
                features.rows(),
                labels.len(),
                sensitive.len()
            )));
        }
        if feature_names.len() != features.cols() {
            return Err(Error::Ingest(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                features.cols()
            )));
        }
        if labels.iter().flatten().any(|&y| y > 1) || sensitive.iter().any(|&s| s > 1) {
            return Err(Error::Ingest(
                "labels and sensitive values must be 0 or 1".into(),
            ));
        }
        for g in 0..=1u8 {
            if !sensitive.contains(&g) {
                return Err(Error::Ingest(format!("sensitive group {g} is empty")));
            }
        }
        Ok(TabularGraphDataset {
            name: name.into(),
            features,
            feature_names,
            labels,
            sensitive,
            graph,
            label_name: "label".into(),
            sensitive_name: "sensitive".into(),
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn labeled_nodes(&self) -> Vec<usize> {
        (0..self.num_nodes())
            .filter(|&i| self.labels[i].is_some())
            .collect()
    }

    /// Labels with unknown entries filled by 0, for code paths that only
    /// read labeled positions.
    pub fn labels_or_zero(&self) -> Vec<u8> {
        self.labels.iter().map(|y| y.unwrap_or(0)).collect()
    }

    /// Writes `features.csv` and `edges.csv` into `dir` and returns the meta
    /// that reads them back.
    pub fn save(&self, dir: &Path) -> Result<DatasetMeta> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let fpath = dir.join("features.csv");
        let mut w = csv::Writer::from_path(&fpath)?;
        let mut header = self.feature_names.clone();
        header.push(self.label_name.clone());
        header.push(self.sensitive_name.clone());
        w.write_record(&header)?;
        for i in 0..self.num_nodes() {
            let mut rec: Vec<String> = self.features.row(i).iter().map(|v| v.to_string()).collect();
            rec.push(self.labels[i].map(|y| y.to_string()).unwrap_or_default());
            rec.push(self.sensitive[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(&fpath, e))?;

        let epath = dir.join("edges.csv");
        let mut w = csv::Writer::from_path(&epath)?;
        w.write_record(["source", "target"])?;
        for &(i, j) in self.graph.edges() {
            w.write_record([i.to_string(), j.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(&epath, e))?;

        Ok(DatasetMeta::new(
            &self.name,
            &self.label_name,
            &self.sensitive_name,
        ))
    }
}

pub fn load_dataset(
    features_path: &Path,
    edges_path: &Path,
    meta: &DatasetMeta,
) -> Result<TabularGraphDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(features_path)
        .map_err(|e| Error::Ingest(format!("{}: {e}", features_path.display())))?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let find = |col: &str| {
        header.iter().position(|h| h == col).ok_or_else(|| {
            Error::Ingest(format!(
                "missing column {col:?} in {}",
                features_path.display()
            ))
        })
    };
    let label_col = find(&meta.label_column)?;
    let sens_col = find(&meta.sensitive_column)?;
    let mut dropped = vec![label_col, sens_col];
    for d in &meta.drop_columns {
        dropped.push(find(d)?);
    }
    let feature_cols: Vec<usize> = (0..header.len()).filter(|c| !dropped.contains(c)).collect();

    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut sensitive = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        // data rows are 1-based after the header line
        let line = row + 2;
        for &c in &feature_cols {
            let cell = rec.get(c).unwrap_or("");
            let v: f64 = cell.parse().map_err(|_| {
                Error::Ingest(format!(
                    "non-numeric feature {cell:?} at row {line}, column {:?}",
                    header[c]
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::Ingest(format!(
                    "non-finite feature at row {line}, column {:?}",
                    header[c]
                )));
            }
            data.push(v);
        }
        let lcell = rec.get(label_col).unwrap_or("");
        labels.push(if lcell.is_empty() {
            None
        } else {
            Some(
                meta.label_rule
                    .apply(lcell)
                    .map_err(|e| Error::Ingest(format!("label at row {line}: {e}")))?,
            )
        });
        let scell = rec.get(sens_col).unwrap_or("");
        sensitive.push(
            meta.sensitive_rule
                .apply(scell)
                .map_err(|e| Error::Ingest(format!("sensitive attribute at row {line}: {e}")))?,
        );
    }
    let n = labels.len();
    let features = Tensor::new(n, feature_cols.len(), data)?;
    let edges = read_edges(edges_path, n)?;
    let graph = Graph::new(n, &edges)?;
    let mut ds = TabularGraphDataset::new(
        &meta.name,
        features,
        feature_cols.iter().map(|&c| header[c].clone()).collect(),
        labels,
        sensitive,
        graph,
    )?;
    ds.label_name = meta.label_column.clone();
    ds.sensitive_name = meta.sensitive_column.clone();
    Ok(ds)
}

fn read_edges(path: &Path, n: usize) -> Result<Vec<(usize, usize)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::Ingest(format!("{}: {e}", path.display())))?;
    let mut edges = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parsed = (
            rec.get(0).and_then(|s| s.parse::<usize>().ok()),
            rec.get(1).and_then(|s| s.parse::<usize>().ok()),
        );
        match parsed {
            (Some(i), Some(j)) => {
                if i >= n || j >= n {
                    return Err(Error::Ingest(format!(
                        "edge ({i}, {j}) on line {} of {} exceeds the {n} feature rows",
                        row + 1,
                        path.display()
                    )));
                }
                edges.push((i, j));
            }
            _ if row == 0 => continue, // header
            _ => {
                return Err(Error::Ingest(format!(
                    "line {} of {} is not a pair of node indices",
                    row + 1,
                    path.display()
                )))
            }
        }
    }
    Ok(edges)
}

/// Z-scores every feature column with mean and population standard
/// deviation taken from `train_idx` rows only. Zero-variance columns become
/// all zeros.
pub fn standardize_features(ds: &TabularGraphDataset, train_idx: &[usize]) -> TabularGraphDataset {
    let mut out = ds.clone();
    let x = &ds.features;
    let m = train_idx.len().max(1) as f64;
    for c in 0..x.cols() {
        let mean = train_idx.iter().map(|&i| x.get(i, c)).sum::<f64>() / m;
        let var = train_idx
            .iter()
            .map(|&i| (x.get(i, c) - mean).powi(2))
            .sum::<f64>()
            / m;
        let std = var.sqrt();
        for i in 0..x.rows() {
            let v = if std > 1e-12 {
                (x.get(i, c) - mean) / std
            } else {
                0.0
            };
            out.features.set(i, c, v);
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.5,
            val: 0.25,
            test: 0.25,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitAssignment {
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub seed: u64,
}

/// One stratified split per seed. Requires at least five seeds.
pub fn make_splits(
    ds: &TabularGraphDataset,
    ratios: SplitRatios,
    seeds: &[u64],
) -> Result<Vec<SplitAssignment>> {
    if seeds.len() < 5 {
        return Err(Error::Contract(format!(
            "at least 5 split seeds are required, got {}",
            seeds.len()
        )));
    }
    seeds.iter().map(|&s| make_split(ds, ratios, s)).collect()
}

/// Splits the labeled nodes, stratified jointly by (label, sensitive), so
/// every part holds both labels and both groups.
pub fn make_split(
    ds: &TabularGraphDataset,
    ratios: SplitRatios,
    seed: u64,
) -> Result<SplitAssignment> {
    let r = [ratios.train, ratios.val, ratios.test];
    if r.iter().any(|&v| !(v > 0.0) || !v.is_finite()) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(Error::Contract(format!(
            "split ratios must be positive and sum to 1, got {r:?}"
        )));
    }
    let mut strata: BTreeMap<(u8, u8), Vec<usize>> = BTreeMap::new();
    for i in 0..ds.num_nodes() {
        if let Some(y) = ds.labels[i] {
            strata.entry((y, ds.sensitive[i])).or_default().push(i);
        }
    }
    for y in 0..=1u8 {
        for s in 0..=1u8 {
            let size = strata.get(&(y, s)).map_or(0, Vec::len);
            if size < 3 {
                return Err(Error::Split(format!(
                    "stratum label={y}, sensitive={s} has {size} labeled nodes; \
                     at least 3 are needed to populate train, validation and test"
                )));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts: [Vec<usize>; 3] = Default::default();
    for members in strata.values_mut() {
        members.shuffle(&mut rng);
        let counts = part_sizes(members.len(), r);
        let mut start = 0;
        for (p, &c) in counts.iter().enumerate() {
            parts[p].extend_from_slice(&members[start..start + c]);
            start += c;
        }
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    let [train_idx, val_idx, test_idx] = parts;
    Ok(SplitAssignment {
        train_idx,
        val_idx,
        test_idx,
        seed,
    })
}

fn part_sizes(m: usize, r: [f64; 3]) -> [usize; 3] {
    let tr = (r[0] * m as f64).round() as usize;
    let va = ((r[1] * m as f64).round() as usize).min(m - tr.min(m));
    let mut c = [tr.min(m), va, 0];
    c[2] = m - c[0] - c[1];
    for p in 0..3 {
        while c[p] == 0 {
            let donor = (0..3).max_by_key(|&q| (c[q], 3 - q)).unwrap();
            c[donor] -= 1;
            c[p] += 1;
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::File::create(&p)
            .unwrap()
            .write_all(body.as_bytes())
            .unwrap();
        p
    }

    fn toy(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
        let f = write(
            dir,
            "features.csv",
            "a,b,y,s\n1.0,2.0,1,0\n0.5,-1,0,1\n3,4,,1\n",
        );
        let e = write(dir, "edges.csv", "0,1\n1,2\n");
        (f, e)
    }

    #[test]
    fn toy_fixture_loads() {
        let dir = tempfile::tempdir().unwrap();
        let (f, e) = toy(dir.path());
        let ds = load_dataset(&f, &e, &DatasetMeta::new("toy", "y", "s")).unwrap();
        assert_eq!(ds.num_nodes(), 3);
        assert_eq!(ds.num_features(), 2);
        assert_eq!(ds.feature_names, vec!["a", "b"]);
        assert_eq!(ds.labels, vec![Some(1), Some(0), None]);
        assert_eq!(ds.sensitive, vec![0, 1, 1]);
        assert_eq!(ds.graph.num_edges(), 2);
    }

    #[test]
    fn german_style_gender_is_binarized() {
        let dir = tempfile::tempdir().unwrap();
        let f = write(
            dir.path(),
            "features.csv",
            "Gender,Age,PurposeOfLoan,GoodCustomer\nFemale,30,car,1\nMale,45,tv,-1\nMale,22,car,1\n",
        );
        let e = write(dir.path(), "edges.csv", "0,1\n");
        let meta = DatasetMeta::preset("german").unwrap();
        let ds = load_dataset(&f, &e, &meta).unwrap();
        assert_eq!(ds.sensitive_name, "Gender");
        assert_eq!(ds.sensitive, vec![1, 0, 0]);
        assert_eq!(ds.labels, vec![Some(1), Some(0), Some(1)]);
        assert_eq!(ds.feature_names, vec!["Age"]);
    }

    #[test]
    fn duplicate_edges_collapse() {
        let dir = tempfile::tempdir().unwrap();
        let (f, _) = toy(dir.path());
        let e = write(dir.path(), "dup.csv", "source,target\n0,1\n0,1\n1,0\n");
        let ds = load_dataset(&f, &e, &DatasetMeta::new("toy", "y", "s")).unwrap();
        assert_eq!(ds.graph.edges(), &[(0, 1)]);
    }

    #[test]
    fn missing_column_named() {
        let dir = tempfile::tempdir().unwrap();
        let (f, e) = toy(dir.path());
        let err = load_dataset(&f, &e, &DatasetMeta::new("toy", "label", "s")).unwrap_err();
        assert!(err.to_string().contains("\"label\""), "{err}");
    }

    #[test]
    fn non_numeric_cell_located() {
        let dir = tempfile::tempdir().unwrap();
        let f = write(dir.path(), "f.csv", "a,y,s\n1,1,0\nabc,0,1\n");
        let e = write(dir.path(), "e.csv", "0,1\n");
        let err = load_dataset(&f, &e, &DatasetMeta::new("t", "y", "s")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 3") && msg.contains("\"a\""), "{msg}");
    }

    #[test]
    fn edge_beyond_rows_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (f, _) = toy(dir.path());
        let e = write(dir.path(), "e.csv", "0,5\n");
        assert!(matches!(
            load_dataset(&f, &e, &DatasetMeta::new("t", "y", "s")),
            Err(Error::Ingest(_))
        ));
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let (f, e) = toy(dir.path());
        let ds = load_dataset(&f, &e, &DatasetMeta::new("toy", "y", "s")).unwrap();
        let out = dir.path().join("saved");
        let meta = ds.save(&out).unwrap();
        let back = load_dataset(&out.join("features.csv"), &out.join("edges.csv"), &meta).unwrap();
        assert_eq!(back, ds);
    }

    fn column_dataset(col: &[f64]) -> TabularGraphDataset {
        let n = col.len();
        TabularGraphDataset::new(
            "c",
            Tensor::new(n, 2, col.iter().flat_map(|&v| [v, 5.0]).collect()).unwrap(),
            vec!["x".into(), "k".into()],
            vec![Some(0); n],
            (0..n).map(|i| (i % 2) as u8).collect(),
            Graph::new(n, &[]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn standardize_hand_values() {
        let ds = column_dataset(&[1.0, 2.0, 3.0]);
        let z = standardize_features(&ds, &[0, 1, 2]);
        let expect = 1.0 / (2.0f64 / 3.0).sqrt();
        assert!((z.features.get(0, 0) + expect).abs() < 1e-12);
        assert_eq!(z.features.get(1, 0), 0.0);
        assert!((z.features.get(2, 0) - expect).abs() < 1e-12);
        assert!((expect - 1.2247).abs() < 1e-4);
        // constant column
        assert!((0..3).all(|i| z.features.get(i, 1) == 0.0));
    }

    #[test]
    fn standardize_idempotent_on_train_rows() {
        let ds = column_dataset(&[0.3, -2.0, 7.5, 1.25, 4.0]);
        let train = [0, 2, 3];
        let once = standardize_features(&ds, &train);
        let twice = standardize_features(&once, &train);
        for &i in &train {
            assert!((once.features.get(i, 0) - twice.features.get(i, 0)).abs() < 1e-9);
        }
    }

    #[test]
    fn standardize_does_not_leak_test_rows() {
        let ds = column_dataset(&[0.3, -2.0, 7.5, 1.25, 4.0]);
        let train = [0, 1, 2];
        let base = standardize_features(&ds, &train);
        let mut perturbed = ds.clone();
        perturbed.features.set(4, 0, 1e6);
        let after = standardize_features(&perturbed, &train);
        for &i in &train {
            assert_eq!(base.features.get(i, 0), after.features.get(i, 0));
        }
    }

    pub(crate) fn labeled_fixture(n: usize, seed: u64) -> TabularGraphDataset {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels = (0..n)
            .map(|_| Some(u8::from(rng.random_bool(0.3))))
            .collect();
        let sensitive = (0..n).map(|_| u8::from(rng.random_bool(0.4))).collect();
        TabularGraphDataset::new(
            "fixture",
            Tensor::zeros(n, 1),
            vec!["x".into()],
            labels,
            sensitive,
            Graph::new(n, &[]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn split_sizes_follow_ratios() {
        let ds = labeled_fixture(100, 1);
        let s = make_split(&ds, SplitRatios::default(), 3).unwrap();
        // at most one node of rounding slack per stratum
        assert!((s.train_idx.len() as i64 - 50).abs() <= 4);
        assert!((s.val_idx.len() as i64 - 25).abs() <= 4);
        assert!((s.test_idx.len() as i64 - 25).abs() <= 4);
        assert_eq!(s.train_idx.len() + s.val_idx.len() + s.test_idx.len(), 100);
    }

    #[test]
    fn split_deterministic_and_disjoint() {
        let ds = labeled_fixture(200, 2);
        let seeds = [1, 2, 3, 4, 5];
        let a = make_splits(&ds, SplitRatios::default(), &seeds).unwrap();
        assert_eq!(a, make_splits(&ds, SplitRatios::default(), &seeds).unwrap());
        for s in &a {
            let mut all: Vec<_> = s
                .train_idx
                .iter()
                .chain(&s.val_idx)
                .chain(&s.test_idx)
                .collect();
            let total = all.len();
            all.sort();
            all.dedup();
            assert_eq!(all.len(), total);
            for part in [&s.train_idx, &s.val_idx, &s.test_idx] {
                for v in 0..=1 {
                    assert!(part.iter().any(|&i| ds.labels[i] == Some(v)));
                    assert!(part.iter().any(|&i| ds.sensitive[i] == v));
                }
            }
        }
    }

    #[test]
    fn split_preserves_label_balance() {
        let ds = labeled_fixture(1000, 4);
        let global = ds.labels.iter().filter(|y| **y == Some(1)).count() as f64 / 1000.0;
        let s = make_split(&ds, SplitRatios::default(), 11).unwrap();
        for part in [&s.train_idx, &s.val_idx, &s.test_idx] {
            let frac = part.iter().filter(|&&i| ds.labels[i] == Some(1)).count() as f64
                / part.len() as f64;
            assert!((frac - global).abs() < 0.05, "{frac} vs {global}");
        }
    }

    #[test]
    fn tiny_stratum_named() {
        let mut ds = labeled_fixture(40, 5);
        for i in 0..40 {
            if ds.labels[i] == Some(1) && ds.sensitive[i] == 1 {
                ds.labels[i] = Some(0);
            }
        }
        let err = make_split(&ds, SplitRatios::default(), 1).unwrap_err();
        assert!(err.to_string().contains("label=1, sensitive=1"), "{err}");
    }

    #[test]
    fn fewer_than_five_seeds_rejected() {
        let ds = labeled_fixture(100, 1);
        assert!(make_splits(&ds, SplitRatios::default(), &[1, 2]).is_err());
    }

    #[test]
    fn part_sizes_never_empty() {
        for m in 3..40 {
            for r in [[0.5, 0.25, 0.25], [0.8, 0.1, 0.1], [0.1, 0.1, 0.8]] {
                let c = part_sizes(m, r);
                assert_eq!(c.iter().sum::<usize>(), m);
                assert!(c.iter().all(|&v| v >= 1), "{m} {r:?} {c:?}");
            }
        }
    }
}
