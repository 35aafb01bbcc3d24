//! Exact constrained nearest-neighbour search in latent space.
//!
//! For node `i` an environment counterfactual is a close node with the same
//! (pseudo-)label and the other sensitive value; a content counterfactual is
//! a close node with the same sensitive value and the other label. Distances
//! are squared L2 over full latent rows; ties go to the lower node index.

use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-node neighbour lists plus the number of searched nodes whose
/// candidate set was empty.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NeighborLists {
    pub lists: Vec<Vec<usize>>,
    pub empty: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CounterfactualIndex {
    pub env_cf: Vec<Vec<usize>>,
    pub content_cf: Vec<Vec<usize>>,
    pub env_neighbors: Vec<Vec<usize>>,
    pub empty_env_cf: usize,
    pub empty_content_cf: usize,
    pub empty_env_neighbors: usize,
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        s += d * d;
    }
    s
}

fn check_inputs(h: &Tensor, lens: &[usize], pool: &[usize]) -> Result<()> {
    let n = h.rows();
    if let Some(bad) = lens.iter().find(|&&l| l != n) {
        return Err(Error::Shape(format!(
            "per-node vector of length {bad} for {n} latent rows"
        )));
    }
    if let Some(bad) = pool.iter().find(|&&i| i >= n) {
        return Err(Error::Shape(format!("pool index {bad} outside 0..{n}")));
    }
    Ok(())
}

fn constrained_knn<F>(h: &Tensor, k: usize, pool: &[usize], admissible: F) -> NeighborLists
where
    F: Fn(usize, usize) -> bool + Sync,
{
    let n = h.rows();
    let mut in_pool = vec![false; n];
    for &i in pool {
        in_pool[i] = true;
    }
    let lists: Vec<Option<Vec<usize>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            if !in_pool[i] {
                return None;
            }
            let hi = h.row(i);
            let mut cands: Vec<(f64, usize)> = pool
                .iter()
                .copied()
                .filter(|&j| j != i && admissible(i, j))
                .map(|j| (squared_distance(hi, h.row(j)), j))
                .collect();
            let order =
                |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if k == 0 {
                cands.clear();
            } else if cands.len() > k {
                cands.select_nth_unstable_by(k - 1, order);
                cands.truncate(k);
            }
            cands.sort_unstable_by(order);
            Some(cands.into_iter().map(|(_, j)| j).collect())
        })
        .collect();
    let mut empty = 0;
    let lists = lists
        .into_iter()
        .map(|l| match l {
            Some(l) => {
                if l.is_empty() {
                    empty += 1;
                }
                l
            }
            None => Vec::new(),
        })
        .collect();
    NeighborLists { lists, empty }
}

/// K nearest pool nodes with `ŷ_j = ŷ_i` and `s_j ≠ s_i`.
pub fn find_env_counterfactuals(
    h: &Tensor,
    yhat: &[u8],
    s: &[u8],
    k: usize,
    pool: &[usize],
) -> Result<NeighborLists> {
    check_inputs(h, &[yhat.len(), s.len()], pool)?;
    Ok(constrained_knn(h, k, pool, |i, j| {
        yhat[j] == yhat[i] && s[j] != s[i]
    }))
}

/// K nearest pool nodes with `ŷ_j ≠ ŷ_i` and `s_j = s_i`.
pub fn find_content_counterfactuals(
    h: &Tensor,
    yhat: &[u8],
    s: &[u8],
    k: usize,
    pool: &[usize],
) -> Result<NeighborLists> {
    check_inputs(h, &[yhat.len(), s.len()], pool)?;
    Ok(constrained_knn(h, k, pool, |i, j| {
        yhat[j] != yhat[i] && s[j] == s[i]
    }))
}

/// K′ nearest pool nodes with `s_j ≠ s_i`.
pub fn find_env_neighbors(h: &Tensor, s: &[u8], k: usize, pool: &[usize]) -> Result<NeighborLists> {
    check_inputs(h, &[s.len()], pool)?;
    Ok(constrained_knn(h, k, pool, |i, j| s[j] != s[i]))
}

/// Both counterfactual kinds over the same pool. The env-neighbour lists
/// are left empty; fill them with [`find_env_neighbors`] when needed.
pub fn build_counterfactuals(
    h: &Tensor,
    yhat: &[u8],
    s: &[u8],
    k: usize,
    pool: &[usize],
) -> Result<CounterfactualIndex> {
    let env = find_env_counterfactuals(h, yhat, s, k, pool)?;
    let content = find_content_counterfactuals(h, yhat, s, k, pool)?;
    Ok(CounterfactualIndex {
        env_cf: env.lists,
        content_cf: content.lists,
        env_neighbors: vec![Vec::new(); h.rows()],
        empty_env_cf: env.empty,
        empty_content_cf: content.empty,
        empty_env_neighbors: 0,
    })
}

/// True labels on `train_idx`, argmax of the logits elsewhere (ties to 0).
pub fn assign_pseudo_labels(
    logits: &Tensor,
    true_labels: &[Option<u8>],
    train_idx: &[usize],
) -> Vec<u8> {
    let mut yhat: Vec<u8> = logits.argmax_rows().into_iter().map(|c| c as u8).collect();
    for &i in train_idx {
        if let Some(y) = true_labels.get(i).copied().flatten() {
            yhat[i] = y;
        }
    }
    yhat
}

/// Writes `node,kind,rank,neighbor,distance` rows for every list entry.
pub fn write_index_csv(path: &Path, index: &CounterfactualIndex, h: &Tensor) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["node", "kind", "rank", "neighbor", "distance"])?;
    let kinds = [
        ("env_cf", &index.env_cf),
        ("content_cf", &index.content_cf),
        ("env_neighbor", &index.env_neighbors),
    ];
    for i in 0..h.rows() {
        for (kind, lists) in kinds {
            for (rank, &j) in lists
                .get(i)
                .map(Vec::as_slice)
                .unwrap_or(&[])
                .iter()
                .enumerate()
            {
                w.write_record([
                    i.to_string(),
                    kind.to_string(),
                    rank.to_string(),
                    j.to_string(),
                    squared_distance(h.row(i), h.row(j)).to_string(),
                ])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
