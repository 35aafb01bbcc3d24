//! Seeded synthetic graphs with a planted sensitive attribute.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::graph::Graph;
use crate::ingest::TabularGraphDataset;
use crate::tensor::Tensor;

/// Two communities. The sensitive attribute follows the community, the
/// label follows a signal feature plus a push from the sensitive attribute.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoBlockSpec {
    pub n: usize,
    /// Probability that `s` equals the block index.
    pub block_agreement: f64,
    pub p_in: f64,
    pub p_out: f64,
    /// Weight of the sensitive attribute in the label score.
    pub leakage: f64,
    pub label_noise: f64,
    /// Std of the noise on the feature that proxies `s`.
    pub proxy_noise: f64,
    /// Pure-noise feature columns appended after the informative ones.
    pub noise_features: usize,
}

impl Default for TwoBlockSpec {
    fn default() -> Self {
        TwoBlockSpec {
            n: 400,
            block_agreement: 0.9,
            p_in: 0.05,
            p_out: 0.005,
            leakage: 1.0,
            label_noise: 0.5,
            proxy_noise: 0.5,
            noise_features: 3,
        }
    }
}

pub fn two_block(spec: &TwoBlockSpec, seed: u64) -> Result<TabularGraphDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.n;
    let d = 3 + spec.noise_features;
    let block: Vec<u8> = (0..n).map(|i| u8::from(i >= n / 2)).collect();
    let sensitive: Vec<u8> = block
        .iter()
        .map(|&b| {
            if rng.random_bool(spec.block_agreement) {
                b
            } else {
                1 - b
            }
        })
        .collect();
    let mut features = Tensor::zeros(n, d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let signal: f64 = rng.sample(StandardNormal);
        let second: f64 = rng.sample(StandardNormal);
        let s = if sensitive[i] == 1 { 1.0 } else { -1.0 };
        let noise: f64 = rng.sample(StandardNormal);
        let score = signal + 0.5 * second + spec.leakage * s + spec.label_noise * noise;
        labels.push(Some(u8::from(score > 0.0)));
        let proxy: f64 = rng.sample(StandardNormal);
        features.set(i, 0, signal);
        features.set(i, 1, second);
        features.set(i, 2, s + spec.proxy_noise * proxy);
        for k in 3..d {
            features.set(i, k, rng.sample(StandardNormal));
        }
    }
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if block[i] == block[j] {
                spec.p_in
            } else {
                spec.p_out
            };
            if rng.random_bool(p) {
                edges.push((i, j));
            }
        }
    }
    let mut names = vec![
        "signal".to_string(),
        "second".to_string(),
        "proxy".to_string(),
    ];
    names.extend((0..spec.noise_features).map(|k| format!("noise{k}")));
    TabularGraphDataset::new(
        "two_block",
        features,
        names,
        labels,
        sensitive,
        Graph::new(n, &edges)?,
    )
}

/// Small graph whose labels are a linear function of the features, with
/// edges only between same-label nodes.
pub fn separable(n: usize, seed: u64) -> Result<TabularGraphDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Tensor::zeros(n, 3);
    let mut labels = Vec::with_capacity(n);
    let mut sensitive = Vec::with_capacity(n);
    for i in 0..n {
        let y = (i % 2) as u8;
        let centre = if y == 1 { 2.0 } else { -2.0 };
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        features.set(i, 0, centre + 0.3 * a);
        features.set(i, 1, b);
        features.set(i, 2, rng.random_range(-1.0..1.0));
        labels.push(Some(y));
        sensitive.push(((i / 2) % 2) as u8);
    }
    let edges: Vec<(usize, usize)> = (0..n.saturating_sub(2)).map(|i| (i, i + 2)).collect();
    TabularGraphDataset::new(
        "separable",
        features,
        vec!["x0".into(), "x1".into(), "x2".into()],
        labels,
        sensitive,
        Graph::new(n, &edges)?,
    )
}
