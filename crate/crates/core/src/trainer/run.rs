//! One split: pretraining for pseudo-labels, then training with
//! counterfactual regularization and early stopping.

use std::rc::Rc;

use crate::counterfactual::{
    assign_pseudo_labels, build_counterfactuals, find_env_neighbors, CounterfactualIndex,
};
use crate::encoder::{
    content_block, dropout_mask, encode_on_tape, encode_sparse, environment_block, init_params,
    positive_probabilities, predict, predict_on_tape, LatentState, ModelParams, ParamVars,
    Propagation,
};
use crate::error::{Error, Result};
use crate::graph::{sample_negative_edges, Graph};
use crate::ingest::{standardize_features, SplitAssignment, TabularGraphDataset};
use crate::losses::{
    environmental_loss, invariance_loss, prediction_loss, sufficiency_loss,
    supervised_contrastive_loss, LossReport, LossWeights, Phase, Terms,
};
use crate::metrics::{auc, statistical_parity, threshold, EvalReport};
use crate::tensor::{SparseMatrix, Tape, Tensor, Var};

use super::config::{ExperimentConfig, NeighborSpace};
use super::optim::Adam;

/// Mixes integers into one seed (splitmix64 finalizer per part).
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut acc: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        let mut z = acc ^ p.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        acc = z ^ (z >> 31);
    }
    acc
}

const TAG_INIT: u64 = 1;
const TAG_DROPOUT_PRE: u64 = 2;
const TAG_DROPOUT: u64 = 3;
const TAG_NEGATIVES: u64 = 4;

/// Counts of nodes left without partners, summed over refreshes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CfWarnings {
    pub empty_env_cf: usize,
    pub empty_content_cf: usize,
    pub empty_env_neighbors: usize,
    pub skipped_sc_anchors: usize,
}

impl CfWarnings {
    pub fn total(&self) -> usize {
        self.empty_env_cf
            + self.empty_content_cf
            + self.empty_env_neighbors
            + self.skipped_sc_anchors
    }
}

#[derive(Clone, Debug)]
pub struct Pretrained {
    pub params: ModelParams,
    /// Latent state after pretraining, with pseudo-labels for every node.
    pub state: LatentState,
    pub log: Vec<LossReport>,
    pub warnings: CfWarnings,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Best checkpoint by validation AUC.
    pub params: ModelParams,
    pub test: EvalReport,
    pub val_auc: f64,
    pub val_delta_sp: f64,
    /// 1-based epoch of the best checkpoint.
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub final_val_auc: f64,
    pub final_val_delta_sp: f64,
    pub log: Vec<LossReport>,
    pub warnings: CfWarnings,
}

/// Read-only inputs shared by both phases.
struct Problem<'a> {
    x: &'a Tensor,
    adj: Rc<SparseMatrix>,
    graph: &'a Graph,
    labels: Vec<u8>,
    true_labels: &'a [Option<u8>],
    sensitive: &'a [u8],
    all: Vec<usize>,
}

impl<'a> Problem<'a> {
    fn new(ds: &'a TabularGraphDataset) -> Self {
        Problem {
            x: &ds.features,
            adj: ds.graph.normalized_adjacency(),
            graph: &ds.graph,
            labels: ds.labels_or_zero(),
            true_labels: &ds.labels,
            sensitive: &ds.sensitive,
            all: (0..ds.num_nodes()).collect(),
        }
    }

    fn scores(&self, params: &ModelParams) -> Result<Vec<f64>> {
        let state = encode_sparse(self.x, &self.adj, &params.encoder)?;
        Ok(positive_probabilities(&predict(
            &state.content(),
            &params.head,
        )?))
    }

    fn neighbor_rows(
        &self,
        h: &Tensor,
        content_dim: usize,
        space: NeighborSpace,
    ) -> Result<Tensor> {
        match space {
            NeighborSpace::Latent => Ok(h.clone()),
            NeighborSpace::Environment => h.slice_cols(content_dim, h.cols()),
        }
    }
}

fn check_finite(phase: &'static str, epoch: usize, report: &LossReport) -> Result<()> {
    if report.is_finite() {
        return Ok(());
    }
    Err(Error::Divergence {
        phase,
        epoch,
        detail: format!(
            "pred={} inv={} suf={} sc={} env={} total={}",
            report.pred, report.inv, report.suf, report.sc, report.env, report.total
        ),
    })
}

fn apply_step(
    tape: &Tape,
    total: Var<'_>,
    vars: &ParamVars<'_>,
    params: &mut ModelParams,
    adam: &mut Adam,
) -> Result<()> {
    let grads = tape.backward(total)?;
    let g: Vec<Tensor> = vars
        .all()
        .iter()
        .map(|v| grads.wrt(*v).expect("parameters are tracked"))
        .collect();
    adam.step(&mut params.tensors_mut(), &g)
}

fn new_adam(params: &ModelParams, cfg: &ExperimentConfig) -> Result<Adam> {
    let shapes: Vec<(usize, usize)> = params.tensors().iter().map(|t| t.shape()).collect();
    Adam::new(cfg.lr, cfg.weight_decay, &shapes)
}

fn hidden_mask(n: usize, cfg: &ExperimentConfig, seed: u64) -> Option<Tensor> {
    (cfg.dropout > 0.0).then(|| dropout_mask(n, cfg.hidden, cfg.dropout, seed))
}

/// Fixed per-epoch inputs of the objective: labels, partner lists and
/// edge pairs. Everything here is treated as a constant by the gradient.
#[derive(Clone, Copy, Debug)]
pub struct ObjectiveInputs<'a> {
    /// Per-node labels for the prediction term (read on `train_idx` only).
    pub labels: &'a [u8],
    pub train_idx: &'a [usize],
    /// Per-node labels for the contrastive term.
    pub contrastive_labels: &'a [u8],
    pub contrastive_anchors: &'a [usize],
    pub index: &'a CounterfactualIndex,
    pub positives: &'a [(usize, usize)],
    pub negatives: &'a [(usize, usize)],
}

/// Loss terms for one forward pass. Terms with a zero weight are skipped,
/// and the invariance and sufficiency terms only exist in training.
pub fn objective_terms<'t>(
    h: Var<'t>,
    vars: &ParamVars<'t>,
    inputs: &ObjectiveInputs<'_>,
    w: &LossWeights,
    phase: Phase,
) -> Result<Terms<'t>> {
    let dc = vars.content_dim();
    let c = content_block(h, dc)?;
    let e = environment_block(h, dc)?;
    let logits = predict_on_tape(c, vars)?;
    let train = phase == Phase::Train;
    let pred = prediction_loss(logits, inputs.labels, inputs.train_idx)?;
    let inv = if train && w.alpha != 0.0 {
        Some(invariance_loss(
            c,
            e,
            inputs.index,
            w.k,
            w.gamma,
            w.distance,
        )?)
    } else {
        None
    };
    let suf = if train && w.beta != 0.0 {
        Some(sufficiency_loss(h, inputs.positives, inputs.negatives)?)
    } else {
        None
    };
    let sc = if w.omega != 0.0 {
        Some(supervised_contrastive_loss(
            c,
            inputs.contrastive_labels,
            w.tau,
            inputs.contrastive_anchors,
        )?)
    } else {
        None
    };
    let env = if w.eta != 0.0 {
        Some(environmental_loss(
            e,
            &inputs.index.env_neighbors,
            w.distance,
        )?)
    } else {
        None
    };
    Ok(Terms {
        pred,
        inv,
        suf,
        sc,
        env,
    })
}

/// Standardizes features on the training nodes when the config asks for it.
pub fn prepare_dataset(
    ds: &TabularGraphDataset,
    split: &SplitAssignment,
    cfg: &ExperimentConfig,
) -> TabularGraphDataset {
    if cfg.standardize {
        standardize_features(ds, &split.train_idx)
    } else {
        ds.clone()
    }
}

/// Minimizes `pred + ω·sc − η·env` for a fixed number of epochs, then labels
/// every node with the pretrained classifier (true labels kept on the
/// training nodes).
pub fn pretrain(
    ds: &TabularGraphDataset,
    split: &SplitAssignment,
    cfg: &ExperimentConfig,
) -> Result<Pretrained> {
    cfg.validate()?;
    let prob = Problem::new(ds);
    let w = &cfg.weights;
    let n = ds.num_nodes();
    let mut params = init_params(
        ds.num_features(),
        cfg.hidden,
        cfg.content_dim,
        derive_seed(&[cfg.model_seed, split.seed, TAG_INIT]),
    )?;
    let mut adam = new_adam(&params, cfg)?;
    let mut log = Vec::with_capacity(cfg.pretrain_epochs);
    let mut warnings = CfWarnings::default();
    let mut index = CounterfactualIndex {
        env_neighbors: vec![Vec::new(); n],
        ..Default::default()
    };

    for epoch in 0..cfg.pretrain_epochs {
        let tape = Tape::new();
        let vars = params.on_tape(&tape);
        let mask = hidden_mask(
            n,
            cfg,
            derive_seed(&[cfg.model_seed, split.seed, TAG_DROPOUT_PRE, epoch as u64]),
        );
        let h = encode_on_tape(
            tape.constant(prob.x.clone()),
            Propagation::Sparse(&prob.adj),
            &vars,
            mask.as_ref(),
        )?;
        if w.eta != 0.0 && epoch % cfg.refresh_period == 0 {
            let rows = prob.neighbor_rows(&h.value(), cfg.content_dim, cfg.neighbor_space)?;
            let found = find_env_neighbors(&rows, prob.sensitive, w.k_prime, &prob.all)?;
            warnings.empty_env_neighbors += found.empty;
            index.env_neighbors = found.lists;
        }
        let inputs = ObjectiveInputs {
            labels: &prob.labels,
            train_idx: &split.train_idx,
            contrastive_labels: &prob.labels,
            contrastive_anchors: &split.train_idx,
            index: &index,
            positives: &[],
            negatives: &[],
        };
        let terms = objective_terms(h, &vars, &inputs, w, Phase::Pretrain)?;
        warnings.skipped_sc_anchors += terms.sc.map_or(0, |t| t.skipped);
        let total = terms.objective(w, Phase::Pretrain)?;
        let report = terms.report(total.item()?);
        check_finite("pretraining", epoch + 1, &report)?;
        apply_step(&tape, total, &vars, &mut params, &mut adam)?;
        log.push(report);
    }

    let mut state = encode_sparse(prob.x, &prob.adj, &params.encoder)?;
    let logits = predict(&state.content(), &params.head)?;
    state.pseudo_labels = Some(assign_pseudo_labels(
        &logits,
        prob.true_labels,
        &split.train_idx,
    ));
    Ok(Pretrained {
        params,
        state,
        log,
        warnings,
    })
}

/// Minimizes `pred + α·inv + β·suf + ω·sc − η·env` with a fresh optimizer,
/// starting from the pretrained weights when `cfg.warm_start` is set and
/// from the initial weights otherwise. Keeps the checkpoint with the best
/// validation AUC (ties: lower validation Δ_SP) and evaluates it on the
/// test nodes.
pub fn train(
    ds: &TabularGraphDataset,
    split: &SplitAssignment,
    pretrained: &Pretrained,
    cfg: &ExperimentConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let pseudo =
        pretrained.state.pseudo_labels.as_ref().ok_or_else(|| {
            Error::Contract("training needs pseudo-labels from pretraining".into())
        })?;
    let prob = Problem::new(ds);
    let w = &cfg.weights;
    let n = ds.num_nodes();
    let mut params = if cfg.warm_start {
        pretrained.params.clone()
    } else {
        init_params(
            ds.num_features(),
            cfg.hidden,
            cfg.content_dim,
            derive_seed(&[cfg.model_seed, split.seed, TAG_INIT]),
        )?
    };
    let mut adam = new_adam(&params, cfg)?;
    let mut log = Vec::new();
    let mut warnings = CfWarnings::default();
    let mut index = CounterfactualIndex {
        env_cf: vec![Vec::new(); n],
        content_cf: vec![Vec::new(); n],
        env_neighbors: vec![Vec::new(); n],
        ..Default::default()
    };
    let positives = prob.graph.edges().to_vec();
    let negative_count = positives.len().min(prob.graph.num_non_edges());

    let mut best: Option<(f64, f64, usize, ModelParams)> = None;
    let mut since_best = 0;
    let mut final_val_auc = f64::NAN;
    let mut final_val_delta_sp = f64::NAN;
    let mut epochs_run = 0;

    for epoch in 0..cfg.train_epochs {
        let tape = Tape::new();
        let vars = params.on_tape(&tape);
        let mask = hidden_mask(
            n,
            cfg,
            derive_seed(&[cfg.model_seed, split.seed, TAG_DROPOUT, epoch as u64]),
        );
        let h = encode_on_tape(
            tape.constant(prob.x.clone()),
            Propagation::Sparse(&prob.adj),
            &vars,
            mask.as_ref(),
        )?;
        if epoch % cfg.refresh_period == 0 && (w.alpha != 0.0 || w.eta != 0.0) {
            let hv = h.value();
            if w.alpha != 0.0 {
                let fresh = build_counterfactuals(&hv, pseudo, prob.sensitive, w.k, &prob.all)?;
                warnings.empty_env_cf += fresh.empty_env_cf;
                warnings.empty_content_cf += fresh.empty_content_cf;
                index.env_cf = fresh.env_cf;
                index.content_cf = fresh.content_cf;
            }
            if w.eta != 0.0 {
                let rows = prob.neighbor_rows(&hv, cfg.content_dim, cfg.neighbor_space)?;
                let found = find_env_neighbors(&rows, prob.sensitive, w.k_prime, &prob.all)?;
                warnings.empty_env_neighbors += found.empty;
                index.env_neighbors = found.lists;
            }
        }
        let negatives = if w.beta != 0.0 {
            sample_negative_edges(
                prob.graph,
                negative_count,
                derive_seed(&[cfg.model_seed, split.seed, TAG_NEGATIVES, epoch as u64]),
            )?
            .pairs()
            .to_vec()
        } else {
            Vec::new()
        };
        let inputs = ObjectiveInputs {
            labels: &prob.labels,
            train_idx: &split.train_idx,
            contrastive_labels: pseudo,
            contrastive_anchors: &prob.all,
            index: &index,
            positives: &positives,
            negatives: &negatives,
        };
        let terms = objective_terms(h, &vars, &inputs, w, Phase::Train)?;
        warnings.skipped_sc_anchors += terms.sc.map_or(0, |t| t.skipped);
        let total = terms.objective(w, Phase::Train)?;
        let report = terms.report(total.item()?);
        check_finite("training", epoch + 1, &report)?;
        apply_step(&tape, total, &vars, &mut params, &mut adam)?;
        log.push(report);
        epochs_run = epoch + 1;

        if !params.is_finite() {
            return Err(Error::Divergence {
                phase: "training",
                epoch: epoch + 1,
                detail: "parameters became non-finite".into(),
            });
        }
        let scores = prob.scores(&params)?;
        let val_auc = auc(&scores, &prob.labels, &split.val_idx)?;
        let val_sp = statistical_parity(&threshold(&scores), prob.sensitive, &split.val_idx)?;
        final_val_auc = val_auc;
        final_val_delta_sp = val_sp;
        let improved = match &best {
            None => true,
            Some((a, sp, _, _)) => val_auc > *a || (val_auc == *a && val_sp < *sp),
        };
        if improved {
            best = Some((val_auc, val_sp, epoch + 1, params.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }

    let (val_auc, val_delta_sp, best_epoch, best_params) = best.expect("at least one epoch ran");
    let scores = prob.scores(&best_params)?;
    let test = EvalReport::evaluate(&scores, &prob.labels, prob.sensitive, &split.test_idx)?;
    Ok(TrainOutcome {
        params: best_params,
        test,
        val_auc,
        val_delta_sp,
        best_epoch,
        epochs_run,
        final_val_auc,
        final_val_delta_sp,
        log,
        warnings,
    })
}

/// Pretrain then train on one split, with per-split standardization.
pub fn run_split(
    ds: &TabularGraphDataset,
    split: &SplitAssignment,
    cfg: &ExperimentConfig,
) -> Result<(Pretrained, TrainOutcome)> {
    let ds = prepare_dataset(ds, split, cfg);
    let pre = pretrain(&ds, split, cfg)?;
    let out = train(&ds, split, &pre, cfg)?;
    Ok((pre, out))
}
