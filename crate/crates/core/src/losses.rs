//! Loss terms and the two composite objectives.
//!
//! Every term is built on a [`Tape`](crate::tensor::Tape) so the trainer can
//! differentiate it. Each returns a [`Term`]: the 1x1 loss value and the
//! number of nodes/anchors that were skipped for lack of partners.
//!
//! Pretraining minimizes `pred + ω·sc − η·env`; training minimizes
//! `pred + α·inv + β·suf + ω·sc − η·env`.

use std::fmt;

use crate::counterfactual::CounterfactualIndex;
use crate::error::{Error, Result};
use crate::tensor::{Tensor, Var};

/// Per-pair clamp on the environmental L2 distance.
pub const ENV_L2_CAP: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Distance {
    /// `1 − cos(a, b)`, in [0, 2].
    Cosine,
    /// `‖a − b‖²`.
    L2,
}

impl fmt::Display for Distance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Distance::Cosine => "cosine",
            Distance::L2 => "l2",
        })
    }
}

impl std::str::FromStr for Distance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cosine" | "cos" => Ok(Distance::Cosine),
            "l2" => Ok(Distance::L2),
            other => Err(Error::Config(format!("unknown distance {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights {
    /// invariance
    pub alpha: f64,
    /// sufficiency
    pub beta: f64,
    /// orthogonality inside the invariance term
    pub gamma: f64,
    /// supervised contrastive
    pub omega: f64,
    /// environmental (subtracted)
    pub eta: f64,
    /// contrastive temperature
    pub tau: f64,
    /// counterfactuals per node
    pub k: usize,
    /// opposite-group neighbours per node for the environmental term
    pub k_prime: usize,
    pub distance: Distance,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 0.2,
            beta: 0.1,
            gamma: 0.01,
            omega: 0.01,
            eta: 0.1,
            tau: 0.5,
            k: 4,
            k_prime: 10,
            distance: Distance::Cosine,
        }
    }
}

impl LossWeights {
    /// All regularizers off: plain cross-entropy training.
    pub fn plain() -> Self {
        LossWeights {
            alpha: 0.0,
            beta: 0.0,
            omega: 0.0,
            eta: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let named = [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("omega", self.omega),
            ("eta", self.eta),
        ];
        for (name, v) in named {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::Config(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        if self.k == 0 || self.k_prime == 0 {
            return Err(Error::Config("K and K' must be at least 1".into()));
        }
        Ok(())
    }
}

/// A loss value on the tape and how many nodes it had to skip.
#[derive(Clone, Copy, Debug)]
pub struct Term<'t> {
    pub var: Var<'t>,
    pub skipped: usize,
}

impl<'t> Term<'t> {
    pub fn value(&self) -> f64 {
        self.var.item().expect("loss terms are 1x1")
    }
}

fn zero<'t>(like: Var<'t>) -> Var<'t> {
    like.tape().constant(Tensor::scalar(0.0))
}

/// Row-wise distance between paired rows of `a` and `b`, as an Rx1 column.
pub fn paired_distance<'t>(a: Var<'t>, b: Var<'t>, dis: Distance) -> Result<Var<'t>> {
    match dis {
        Distance::Cosine => Ok(a
            .row_l2_normalize()
            .row_dot(&b.row_l2_normalize())?
            .scale(-1.0)
            .add_scalar(1.0)),
        Distance::L2 => {
            let d = a.sub(&b)?;
            d.row_dot(&d)
        }
    }
}

/// Mean two-class cross-entropy over `idx`, via log-softmax.
pub fn prediction_loss<'t>(logits: Var<'t>, labels: &[u8], idx: &[usize]) -> Result<Term<'t>> {
    if idx.is_empty() {
        return Err(Error::Contract(
            "prediction loss over an empty index set".into(),
        ));
    }
    let (n, classes) = logits.shape();
    let mut onehot = Tensor::zeros(idx.len(), classes);
    for (r, &i) in idx.iter().enumerate() {
        let y = *labels
            .get(i)
            .ok_or_else(|| Error::Shape(format!("no label for node {i} (have {})", labels.len())))?
            as usize;
        if i >= n || y >= classes {
            return Err(Error::Shape(format!(
                "node {i} / class {y} outside logits {n}x{classes}"
            )));
        }
        onehot.set(r, y, 1.0);
    }
    let logp = logits.gather_rows(idx)?.log_softmax_rows(None)?;
    let picked = logp.mul(&logits.tape().constant(onehot))?.sum();
    Ok(Term {
        var: picked.scale(-1.0 / idx.len() as f64),
        skipped: 0,
    })
}

/// Pulls `c_i` toward the content of its environment counterfactuals and
/// `e_i` toward the environment of its content counterfactuals, plus
/// `γ·K·mean_i |cos(c_i, e_i)|`.
///
/// With full lists this is `1/(n·K) Σ_i Σ_k [dis(c_i, c_i^{e_k}) +
/// dis(e_i, e_i^{c_k}) + γ·K·|cos(c_i, e_i)|]`. Missing partners shrink the
/// denominators of the two distance sums to the pairs actually present.
pub fn invariance_loss<'t>(
    c: Var<'t>,
    e: Var<'t>,
    index: &CounterfactualIndex,
    k: usize,
    gamma: f64,
    dis: Distance,
) -> Result<Term<'t>> {
    let n = c.shape().0;
    if e.shape().0 != n || index.env_cf.len() != n || index.content_cf.len() != n {
        return Err(Error::Shape(format!(
            "invariance loss: {n} content rows, {} environment rows, {}/{} lists",
            e.shape().0,
            index.env_cf.len(),
            index.content_cf.len()
        )));
    }
    let pair_sum = |m: Var<'t>, lists: &[Vec<usize>]| -> Result<Option<Var<'t>>> {
        let (src, dst): (Vec<usize>, Vec<usize>) = lists
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.iter().map(move |&j| (i, j)))
            .unzip();
        if src.is_empty() {
            return Ok(None);
        }
        let d = paired_distance(m.gather_rows(&src)?, m.gather_rows(&dst)?, dis)?;
        Ok(Some(d.mean()))
    };
    let mut total = zero(c);
    if let Some(v) = pair_sum(c, &index.env_cf)? {
        total = total.add(&v)?;
    }
    if let Some(v) = pair_sum(e, &index.content_cf)? {
        total = total.add(&v)?;
    }
    if gamma != 0.0 && n > 0 {
        let cos = c
            .row_l2_normalize()
            .row_dot(&e.row_l2_normalize())?
            .abs()
            .mean();
        total = total.add(&cos.scale(gamma * k as f64))?;
    }
    let skipped = (0..n)
        .filter(|&i| index.env_cf[i].is_empty() || index.content_cf[i].is_empty())
        .count();
    Ok(Term {
        var: total,
        skipped,
    })
}

/// Link reconstruction cross-entropy with `p_ij = σ(h_i·h_j)`, averaged over
/// positive and negative pairs together.
pub fn sufficiency_loss<'t>(
    h: Var<'t>,
    positives: &[(usize, usize)],
    negatives: &[(usize, usize)],
) -> Result<Term<'t>> {
    let total = positives.len() + negatives.len();
    if total == 0 {
        return Err(Error::Contract("sufficiency loss with no edges".into()));
    }
    let side = |pairs: &[(usize, usize)], positive: bool| -> Result<Option<Var<'t>>> {
        if pairs.is_empty() {
            return Ok(None);
        }
        let (src, dst): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
        let logit = h.gather_rows(&src)?.row_dot(&h.gather_rows(&dst)?)?;
        // 1 − σ(x) = σ(−x)
        let p = if positive {
            logit.sigmoid()
        } else {
            logit.scale(-1.0).sigmoid()
        };
        Ok(Some(p.log()?.sum()))
    };
    let mut nll = zero(h);
    if let Some(v) = side(positives, true)? {
        nll = nll.add(&v)?;
    }
    if let Some(v) = side(negatives, false)? {
        nll = nll.add(&v)?;
    }
    Ok(Term {
        var: nll.scale(-1.0 / total as f64),
        skipped: 0,
    })
}

/// Supervised contrastive loss on row-normalized content vectors of the
/// anchors, averaged over anchors that have at least one positive.
pub fn supervised_contrastive_loss<'t>(
    c: Var<'t>,
    labels: &[u8],
    tau: f64,
    anchors: &[usize],
) -> Result<Term<'t>> {
    if anchors.len() < 2 {
        return Err(Error::Contract(format!(
            "contrastive loss needs at least 2 anchors, got {}",
            anchors.len()
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::Contract(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    if let Some(&bad) = anchors.iter().find(|&&i| i >= labels.len()) {
        return Err(Error::Shape(format!("anchor {bad} has no label")));
    }
    let m = anchors.len();
    let mut weights = Tensor::zeros(m, m);
    let mut contributing = 0usize;
    let mut positives_of = Vec::with_capacity(m);
    for a in 0..m {
        let ya = labels[anchors[a]];
        let pos: Vec<usize> = (0..m)
            .filter(|&p| p != a && labels[anchors[p]] == ya)
            .collect();
        if !pos.is_empty() {
            contributing += 1;
        }
        positives_of.push(pos);
    }
    let skipped = m - contributing;
    if contributing == 0 {
        return Ok(Term {
            var: zero(c),
            skipped,
        });
    }
    for (a, pos) in positives_of.iter().enumerate() {
        let w = 1.0 / (pos.len() * contributing) as f64;
        for &p in pos {
            weights.set(a, p, w);
        }
    }
    let mut diag = vec![false; m * m];
    for a in 0..m {
        diag[a * m + a] = true;
    }
    let z = c.gather_rows(anchors)?.row_l2_normalize();
    let sim = z.matmul(&z.transpose())?.scale(1.0 / tau);
    let logp = sim.log_softmax_rows(Some(&diag))?;
    let loss = logp.mul(&c.tape().constant(weights))?.sum().scale(-1.0);
    Ok(Term { var: loss, skipped })
}

/// Mean distance between each node's environment vector and those of its
/// opposite-group neighbours. Nodes without neighbours are left out of the
/// average. L2 distances are capped per pair at [`ENV_L2_CAP`].
pub fn environmental_loss<'t>(
    e: Var<'t>,
    neighbors: &[Vec<usize>],
    dis: Distance,
) -> Result<Term<'t>> {
    let n = e.shape().0;
    if neighbors.len() != n {
        return Err(Error::Shape(format!(
            "{} neighbour lists for {n} rows",
            neighbors.len()
        )));
    }
    let contributing = neighbors.iter().filter(|l| !l.is_empty()).count();
    let skipped = n - contributing;
    if contributing == 0 {
        return Ok(Term {
            var: zero(e),
            skipped,
        });
    }
    let mut src = Vec::new();
    let mut dst = Vec::new();
    let mut w = Vec::new();
    for (i, list) in neighbors.iter().enumerate() {
        for &j in list {
            src.push(i);
            dst.push(j);
            w.push(1.0 / (list.len() * contributing) as f64);
        }
    }
    let mut d = paired_distance(e.gather_rows(&src)?, e.gather_rows(&dst)?, dis)?;
    if dis == Distance::L2 {
        d = d.clamp(0.0, ENV_L2_CAP);
    }
    let loss = d.mul(&e.tape().constant(Tensor::column(&w)))?.sum();
    Ok(Term { var: loss, skipped })
}

/// Scalar values of the five terms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossComponents {
    pub pred: f64,
    pub inv: f64,
    pub suf: f64,
    pub sc: f64,
    pub env: f64,
}

pub fn pretrain_objective(c: &LossComponents, omega: f64, eta: f64) -> f64 {
    c.pred + omega * c.sc - eta * c.env
}

pub fn train_objective(c: &LossComponents, w: &LossWeights) -> f64 {
    c.pred + w.alpha * c.inv + w.beta * c.suf + w.omega * c.sc - w.eta * c.env
}

/// Invariance + sufficiency objective without the contrastive and
/// environmental regularizers.
pub fn caf_objective(c: &LossComponents, alpha: f64, beta: f64) -> f64 {
    c.pred + alpha * c.inv + beta * c.suf
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Pretrain,
    Train,
}

/// Terms computed for one step. Terms whose weight is zero are left out.
#[derive(Clone, Copy, Debug)]
pub struct Terms<'t> {
    pub pred: Term<'t>,
    pub inv: Option<Term<'t>>,
    pub suf: Option<Term<'t>>,
    pub sc: Option<Term<'t>>,
    pub env: Option<Term<'t>>,
}

impl<'t> Terms<'t> {
    pub fn components(&self) -> LossComponents {
        let v = |t: &Option<Term<'t>>| t.as_ref().map_or(0.0, Term::value);
        LossComponents {
            pred: self.pred.value(),
            inv: v(&self.inv),
            suf: v(&self.suf),
            sc: v(&self.sc),
            env: v(&self.env),
        }
    }

    /// Weighted objective on the tape.
    pub fn objective(&self, w: &LossWeights, phase: Phase) -> Result<Var<'t>> {
        let mut total = self.pred.var;
        let mut add = |t: &Option<Term<'t>>, k: f64| -> Result<()> {
            if let Some(t) = t {
                if k != 0.0 {
                    total = total.add(&t.var.scale(k))?;
                }
            }
            Ok(())
        };
        if phase == Phase::Train {
            add(&self.inv, w.alpha)?;
            add(&self.suf, w.beta)?;
        }
        add(&self.sc, w.omega)?;
        add(&self.env, -w.eta)?;
        Ok(total)
    }

    pub fn report(&self, total: f64) -> LossReport {
        let c = self.components();
        let skipped = |t: &Option<Term<'t>>| t.as_ref().map_or(0, |t| t.skipped);
        LossReport {
            pred: c.pred,
            inv: c.inv,
            suf: c.suf,
            sc: c.sc,
            env: c.env,
            total,
            skipped_inv: skipped(&self.inv),
            skipped_sc: skipped(&self.sc),
            skipped_env: skipped(&self.env),
        }
    }
}

/// Logged loss values for one epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub pred: f64,
    pub inv: f64,
    pub suf: f64,
    pub sc: f64,
    pub env: f64,
    pub total: f64,
    pub skipped_inv: usize,
    pub skipped_sc: usize,
    pub skipped_env: usize,
}

impl LossReport {
    pub fn components(&self) -> LossComponents {
        LossComponents {
            pred: self.pred,
            inv: self.inv,
            suf: self.suf,
            sc: self.sc,
            env: self.env,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.pred, self.inv, self.suf, self.sc, self.env, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;
    use proptest::prelude::*;

    const LN2: f64 = std::f64::consts::LN_2;

    fn ln1p_exp_neg1() -> f64 {
        (1.0 + (-1.0f64).exp()).ln()
    }

    fn rows<'t>(t: &'t Tape, r: &[&[f64]]) -> Var<'t> {
        t.constant(Tensor::from_rows(r).unwrap())
    }

    #[test]
    fn uniform_logits_give_ln2() {
        let t = Tape::new();
        let l = t.constant(Tensor::zeros(3, 2));
        let v = prediction_loss(l, &[0, 1, 1], &[0, 1, 2]).unwrap().value();
        assert!((v - LN2).abs() < 1e-15);
    }

    #[test]
    fn saturated_prediction() {
        let t = Tape::new();
        let l = rows(&t, &[&[20.0, 0.0], &[0.0, 20.0]]);
        assert!(prediction_loss(l, &[0, 1], &[0, 1]).unwrap().value() < 1e-8);
    }

    #[test]
    fn prediction_hand_value() {
        let t = Tape::new();
        let l = rows(&t, &[&[1.0, 0.0], &[0.0, 1.0]]);
        let v = prediction_loss(l, &[0, 1], &[0, 1]).unwrap().value();
        assert!((v - ln1p_exp_neg1()).abs() < 1e-12);
        assert!((v - 0.3133).abs() < 1e-4);
    }

    #[test]
    fn prediction_empty_set_rejected() {
        let t = Tape::new();
        let l = t.constant(Tensor::zeros(2, 2));
        assert!(matches!(
            prediction_loss(l, &[0, 1], &[]),
            Err(Error::Contract(_))
        ));
    }

    fn index(env: Vec<Vec<usize>>, content: Vec<Vec<usize>>) -> CounterfactualIndex {
        let n = env.len();
        CounterfactualIndex {
            env_cf: env,
            content_cf: content,
            env_neighbors: vec![vec![]; n],
            ..Default::default()
        }
    }

    #[test]
    fn invariance_zero_when_everything_matches() {
        let t = Tape::new();
        // c rows equal across the pair, e rows equal, each c ⟂ its e
        let c = rows(&t, &[&[1.0, 0.0], &[1.0, 0.0]]);
        let e = rows(&t, &[&[0.0, 2.0], &[0.0, 2.0]]);
        let idx = index(vec![vec![1], vec![0]], vec![vec![1], vec![0]]);
        for dis in [Distance::Cosine, Distance::L2] {
            let v = invariance_loss(c, e, &idx, 1, 0.01, dis).unwrap().value();
            assert!(v.abs() < 1e-15, "{dis}: {v}");
        }
    }

    #[test]
    fn invariance_parallel_content_environment() {
        let t = Tape::new();
        let c = rows(&t, &[&[0.6, 0.8]]);
        let e = rows(&t, &[&[0.6, 0.8]]);
        // one node, K = 1, its own row as partner so both dis terms vanish
        let idx = index(vec![vec![0]], vec![vec![0]]);
        let v = invariance_loss(c, e, &idx, 1, 0.01, Distance::Cosine)
            .unwrap()
            .value();
        assert!((v - 0.01).abs() < 1e-12);
    }

    #[test]
    fn distance_hand_values() {
        let t = Tape::new();
        let a = rows(&t, &[&[1.0, 0.0]]);
        let b = rows(&t, &[&[0.0, 1.0]]);
        assert!(
            (paired_distance(a, b, Distance::Cosine)
                .unwrap()
                .item()
                .unwrap()
                - 1.0)
                .abs()
                < 1e-15
        );
        assert!((paired_distance(a, b, Distance::L2).unwrap().item().unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn invariance_zero_iff_constructively() {
        let t = Tape::new();
        let c = rows(&t, &[&[1.0, 0.0], &[1.0, 0.0]]);
        let e_orth = rows(&t, &[&[0.0, 1.0], &[0.0, 1.0]]);
        let e_tilted = rows(&t, &[&[0.1, 1.0], &[0.1, 1.0]]);
        let idx = index(vec![vec![1], vec![0]], vec![vec![1], vec![0]]);
        assert_eq!(
            invariance_loss(c, e_orth, &idx, 1, 0.5, Distance::Cosine)
                .unwrap()
                .value(),
            0.0
        );
        assert!(
            invariance_loss(c, e_tilted, &idx, 1, 0.5, Distance::Cosine)
                .unwrap()
                .value()
                > 0.0
        );
        let c_moved = rows(&t, &[&[1.0, 0.0], &[0.0, -1.0]]);
        assert!(
            invariance_loss(c_moved, e_orth, &idx, 1, 0.0, Distance::Cosine)
                .unwrap()
                .value()
                > 0.0
        );
    }

    #[test]
    fn invariance_empty_lists_keep_orthogonality_only() {
        let t = Tape::new();
        let c = rows(&t, &[&[1.0, 0.0], &[0.0, 1.0]]);
        let e = rows(&t, &[&[1.0, 0.0], &[0.0, 1.0]]);
        let idx = index(vec![vec![], vec![]], vec![vec![], vec![]]);
        let term = invariance_loss(c, e, &idx, 4, 0.01, Distance::Cosine).unwrap();
        assert!((term.value() - 0.04).abs() < 1e-12);
        assert_eq!(term.skipped, 2);
    }

    #[test]
    fn sufficiency_zero_latent_is_ln2() {
        let t = Tape::new();
        let h = t.constant(Tensor::zeros(3, 2));
        let v = sufficiency_loss(h, &[(0, 1)], &[(0, 2)]).unwrap().value();
        assert!((v - LN2).abs() < 1e-15);
    }

    #[test]
    fn sufficiency_saturated() {
        let t = Tape::new();
        let s = 20f64.sqrt();
        let h = rows(&t, &[&[s], &[s], &[-s]]);
        assert!(sufficiency_loss(h, &[(0, 1)], &[(0, 2)]).unwrap().value() < 1e-8);
    }

    #[test]
    fn sufficiency_hand_value() {
        let t = Tape::new();
        let h = rows(&t, &[&[1.0, 0.0], &[1.0, 5.0]]);
        let v = sufficiency_loss(h, &[(0, 1)], &[]).unwrap().value();
        assert!((v - ln1p_exp_neg1()).abs() < 1e-12);
    }

    #[test]
    fn sufficiency_requires_pairs() {
        let t = Tape::new();
        let h = t.constant(Tensor::zeros(2, 2));
        assert!(matches!(
            sufficiency_loss(h, &[], &[]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn contrastive_identical_pair_is_zero() {
        let t = Tape::new();
        let c = rows(&t, &[&[0.3, 0.4], &[0.3, 0.4]]);
        let v = supervised_contrastive_loss(c, &[1, 1], 0.5, &[0, 1])
            .unwrap()
            .value();
        assert!(v.abs() < 1e-15);
    }

    #[test]
    fn contrastive_without_positives_skips() {
        let t = Tape::new();
        let c = rows(&t, &[&[1.0, 0.0], &[0.0, 1.0]]);
        let term = supervised_contrastive_loss(c, &[0, 1], 0.5, &[0, 1]).unwrap();
        assert_eq!(term.value(), 0.0);
        assert_eq!(term.skipped, 2);
    }

    #[test]
    fn contrastive_three_node_hand_value() {
        let t = Tape::new();
        let c = rows(&t, &[&[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]]);
        let term = supervised_contrastive_loss(c, &[0, 0, 1], 1.0, &[0, 1, 2]).unwrap();
        // anchors 0 and 1 each give −log(e/(e+1)); anchor 2 has no positive
        assert!((term.value() - ln1p_exp_neg1()).abs() < 1e-12);
        assert_eq!(term.skipped, 1);
    }

    #[test]
    fn contrastive_contract_errors() {
        let t = Tape::new();
        let c = rows(&t, &[&[1.0, 0.0], &[1.0, 0.0]]);
        assert!(supervised_contrastive_loss(c, &[0, 0], 0.5, &[0]).is_err());
        assert!(supervised_contrastive_loss(c, &[0, 0], 0.0, &[0, 1]).is_err());
    }

    #[test]
    fn environmental_hand_values() {
        let t = Tape::new();
        let e = rows(&t, &[&[1.0, 0.0], &[0.0, 1.0]]);
        let v = environmental_loss(e, &[vec![1], vec![]], Distance::Cosine).unwrap();
        assert!((v.value() - 1.0).abs() < 1e-15);
        assert_eq!(v.skipped, 1);
        let e = rows(&t, &[&[1.0, 0.0], &[-1.0, 0.0]]);
        let v = environmental_loss(e, &[vec![1], vec![0]], Distance::Cosine).unwrap();
        assert!((v.value() - 2.0).abs() < 1e-15);
        let e = rows(&t, &[&[0.5, 0.5], &[0.5, 0.5], &[0.5, 0.5]]);
        let v = environmental_loss(e, &[vec![1, 2], vec![0], vec![0]], Distance::Cosine).unwrap();
        assert!(v.value().abs() < 1e-15);
    }

    #[test]
    fn environmental_l2_is_capped() {
        let t = Tape::new();
        let e = rows(&t, &[&[10.0], &[-10.0]]);
        let v = environmental_loss(e, &[vec![1], vec![0]], Distance::L2)
            .unwrap()
            .value();
        assert_eq!(v, ENV_L2_CAP);
    }

    #[test]
    fn objective_arithmetic() {
        let c = LossComponents {
            pred: 0.5,
            sc: 0.2,
            env: 0.3,
            ..Default::default()
        };
        assert!((pretrain_objective(&c, 0.01, 0.1) - 0.472).abs() < 1e-12);
        assert_eq!(pretrain_objective(&c, 0.0, 0.0), c.pred);
        let bigger = LossComponents { env: 0.4, ..c };
        assert!(pretrain_objective(&bigger, 0.01, 0.1) < pretrain_objective(&c, 0.01, 0.1));

        let ones = LossComponents {
            pred: 1.0,
            inv: 1.0,
            suf: 1.0,
            sc: 1.0,
            env: 1.0,
        };
        let w = LossWeights {
            alpha: 0.2,
            beta: 0.1,
            omega: 0.01,
            eta: 0.1,
            ..Default::default()
        };
        assert!((train_objective(&ones, &w) - 1.21).abs() < 1e-12);
        assert_eq!(train_objective(&ones, &LossWeights::plain()), 1.0);
    }

    #[test]
    fn weight_validation() {
        assert!(LossWeights::default().validate().is_ok());
        assert!(LossWeights {
            tau: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(LossWeights {
            eta: -1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(LossWeights {
            k: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    fn arb_rows(n: usize, d: usize) -> impl Strategy<Value = Tensor> {
        proptest::collection::vec(-1.0f64..1.0, n * d)
            .prop_map(move |v| Tensor::new(n, d, v).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn contrastive_scale_invariant(c in arb_rows(6, 3), labels in proptest::collection::vec(0u8..2, 6)) {
            let t = Tape::new();
            let anchors: Vec<usize> = (0..6).collect();
            let base = supervised_contrastive_loss(t.constant(c.clone()), &labels, 0.5, &anchors).unwrap().value();
            let scaled = supervised_contrastive_loss(t.constant(c.map(|v| 7.0 * v)), &labels, 0.5, &anchors).unwrap().value();
            prop_assert!((base - scaled).abs() < 1e-9);
            prop_assert!(base >= 0.0);
        }

        #[test]
        fn prediction_permutation_invariant(l in arb_rows(5, 2), labels in proptest::collection::vec(0u8..2, 5)) {
            let t = Tape::new();
            let lv = t.constant(l);
            let a = prediction_loss(lv, &labels, &[0, 1, 2, 3, 4]).unwrap().value();
            let b = prediction_loss(lv, &labels, &[3, 1, 4, 0, 2]).unwrap().value();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!(a >= 0.0);
        }

        #[test]
        fn environmental_bounded(e in arb_rows(6, 3), k in 1usize..5) {
            let t = Tape::new();
            let lists: Vec<Vec<usize>> = (0..6).map(|i| (1..=k).map(|o| (i + o) % 6).collect()).collect();
            let v = environmental_loss(t.constant(e), &lists, Distance::Cosine).unwrap().value();
            prop_assert!((0.0..=2.0 + 1e-12).contains(&v));
        }

        #[test]
        fn nonnegative_terms(h in arb_rows(6, 4)) {
            let t = Tape::new();
            let hv = t.constant(h);
            let c = hv.slice_cols(0, 2).unwrap();
            let e = hv.slice_cols(2, 4).unwrap();
            let idx = index(vec![vec![1, 2]; 6], vec![vec![3]; 6]);
            for dis in [Distance::Cosine, Distance::L2] {
                prop_assert!(invariance_loss(c, e, &idx, 2, 0.01, dis).unwrap().value() >= 0.0);
            }
            prop_assert!(sufficiency_loss(hv, &[(0, 1), (2, 3)], &[(0, 5)]).unwrap().value() >= 0.0);
        }
    }
}
