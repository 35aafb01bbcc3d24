//! Classification quality and prediction-level group fairness, all as
//! percentages over an index subset.

use crate::error::{Error, Result};

fn gather<'a, T: Copy>(v: &'a [T], idx: &'a [usize], what: &'static str) -> Result<Vec<T>> {
    idx.iter()
        .map(|&i| {
            v.get(i).copied().ok_or_else(|| {
                Error::Metric(format!("index {i} outside {what} of length {}", v.len()))
            })
        })
        .collect()
}

/// Area under the ROC curve via the Mann–Whitney statistic, ties count half.
pub fn auc(scores: &[f64], y: &[u8], idx: &[usize]) -> Result<f64> {
    let sc = gather(scores, idx, "scores")?;
    let yy = gather(y, idx, "labels")?;
    let n_pos = yy.iter().filter(|&&v| v == 1).count();
    let n_neg = yy.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Metric(format!(
            "AUC needs both classes, got {n_pos} positive and {n_neg} negative"
        )));
    }
    if let Some(bad) = sc.iter().find(|v| v.is_nan()) {
        return Err(Error::Metric(format!("score {bad} is not a number")));
    }
    let mut order: Vec<usize> = (0..sc.len()).collect();
    order.sort_by(|&a, &b| sc[a].total_cmp(&sc[b]));
    // sum of mid-ranks of the positives
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && sc[order[end]] == sc[order[start]] {
            end += 1;
        }
        let mid = (start + end + 1) as f64 / 2.0;
        let pos_in_block = order[start..end].iter().filter(|&&k| yy[k] == 1).count();
        rank_sum += mid * pos_in_block as f64;
        start = end;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(100.0 * u / (n_pos as f64 * n_neg as f64))
}

/// Binary F1 for class 1; zero when precision and recall are both zero.
pub fn f1(yhat: &[u8], y: &[u8], idx: &[usize]) -> Result<f64> {
    if idx.is_empty() {
        return Err(Error::Metric("F1 over an empty index set".into()));
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (p, t) in gather(yhat, idx, "predictions")?
        .into_iter()
        .zip(gather(y, idx, "labels")?)
    {
        match (p, t) {
            (1, 1) => tp += 1,
            (1, _) => fp += 1,
            (_, 1) => fn_ += 1,
            _ => {}
        }
    }
    if tp == 0 {
        return Ok(0.0);
    }
    Ok(100.0 * 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64)
}

fn positive_rate(pairs: impl Iterator<Item = u8>) -> Option<f64> {
    let (mut hits, mut total) = (0usize, 0usize);
    for p in pairs {
        total += 1;
        hits += (p == 1) as usize;
    }
    (total > 0).then(|| hits as f64 / total as f64)
}

/// `|P(ŷ=1 | s=0) − P(ŷ=1 | s=1)|`.
pub fn statistical_parity(yhat: &[u8], s: &[u8], idx: &[usize]) -> Result<f64> {
    let p = gather(yhat, idx, "predictions")?;
    let g = gather(s, idx, "sensitive")?;
    let rate = |grp: u8| {
        positive_rate(
            p.iter()
                .zip(&g)
                .filter(|(_, &gi)| gi == grp)
                .map(|(&pi, _)| pi),
        )
        .ok_or_else(|| Error::Metric(format!("sensitive group s={grp} is absent")))
    };
    Ok(100.0 * (rate(0)? - rate(1)?).abs())
}

/// `|P(ŷ=1 | y=1, s=0) − P(ŷ=1 | y=1, s=1)|`.
pub fn equal_opportunity(yhat: &[u8], y: &[u8], s: &[u8], idx: &[usize]) -> Result<f64> {
    let p = gather(yhat, idx, "predictions")?;
    let t = gather(y, idx, "labels")?;
    let g = gather(s, idx, "sensitive")?;
    let tpr = |grp: u8| {
        positive_rate(
            (0..p.len())
                .filter(|&k| g[k] == grp && t[k] == 1)
                .map(|k| p[k]),
        )
        .ok_or_else(|| Error::Metric(format!("sensitive group s={grp} has no positive nodes")))
    };
    Ok(100.0 * (tpr(0)? - tpr(1)?).abs())
}

/// Hard labels by thresholding the positive-class probability at 0.5
/// (exactly 0.5 goes to class 0).
pub fn threshold(scores: &[f64]) -> Vec<u8> {
    scores.iter().map(|&p| (p > 0.5) as u8).collect()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub auc: f64,
    pub f1: f64,
    pub delta_sp: f64,
    pub delta_eo: f64,
    /// Counts indexed `[s][y][ŷ]`.
    pub group_counts: [[[usize; 2]; 2]; 2],
}

impl EvalReport {
    /// All four metrics from positive-class probabilities.
    pub fn evaluate(scores: &[f64], y: &[u8], s: &[u8], idx: &[usize]) -> Result<Self> {
        let yhat = threshold(scores);
        let mut group_counts = [[[0usize; 2]; 2]; 2];
        for &i in idx {
            let (si, yi) = (s[i] as usize, y[i] as usize);
            if si > 1 || yi > 1 {
                return Err(Error::Metric(format!(
                    "node {i} has non-binary label or group"
                )));
            }
            group_counts[si][yi][yhat[i] as usize] += 1;
        }
        Ok(EvalReport {
            auc: auc(scores, y, idx)?,
            f1: f1(&yhat, y, idx)?,
            delta_sp: statistical_parity(&yhat, s, idx)?,
            delta_eo: equal_opportunity(&yhat, y, s, idx)?,
            group_counts,
        })
    }

    pub fn evaluated(&self) -> usize {
        self.group_counts.iter().flatten().flatten().sum()
    }
}
