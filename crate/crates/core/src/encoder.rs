//! Two-layer GCN encoder producing a latent split into a content block and
//! an environment block of equal width, and the linear head that reads the
//! content block only.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{SparseMatrix, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    /// d x h
    pub w1: Tensor,
    /// 1 x h
    pub b1: Tensor,
    /// h x (d_c + d_e)
    pub w2: Tensor,
    /// 1 x (d_c + d_e)
    pub b2: Tensor,
}

impl EncoderParams {
    pub fn input_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn latent_dim(&self) -> usize {
        self.w2.cols()
    }

    pub fn content_dim(&self) -> usize {
        self.w2.cols() / 2
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    /// d_c x 2
    pub w: Tensor,
    /// 1 x 2
    pub b: Tensor,
}

/// Encoder and head parameters of one model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub encoder: EncoderParams,
    pub head: HeadParams,
}

pub const PARAM_NAMES: [&str; 6] = ["w1", "b1", "w2", "b2", "head_w", "head_b"];

impl ModelParams {
    pub fn new(encoder: EncoderParams, head: HeadParams) -> Result<Self> {
        let e = &encoder;
        let (d, h) = e.w1.shape();
        let ok = e.b1.shape() == (1, h)
            && e.w2.rows() == h
            && e.w2.cols() % 2 == 0
            && e.w2.cols() > 0
            && e.b2.shape() == (1, e.w2.cols())
            && head.w.shape() == (e.content_dim(), 2)
            && head.b.shape() == (1, 2)
            && d > 0;
        if !ok {
            return Err(Error::Shape(
                "inconsistent encoder/head parameter shapes".into(),
            ));
        }
        Ok(ModelParams { encoder, head })
    }

    pub fn tensors(&self) -> [&Tensor; 6] {
        [
            &self.encoder.w1,
            &self.encoder.b1,
            &self.encoder.w2,
            &self.encoder.b2,
            &self.head.w,
            &self.head.b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 6] {
        [
            &mut self.encoder.w1,
            &mut self.encoder.b1,
            &mut self.encoder.w2,
            &mut self.encoder.b2,
            &mut self.head.w,
            &mut self.head.b,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    /// Registers every parameter on `tape`.
    pub fn on_tape<'t>(&self, tape: &'t Tape) -> ParamVars<'t> {
        let [w1, b1, w2, b2, hw, hb] = self.tensors().map(|t| tape.param(t.clone()));
        ParamVars {
            w1,
            b1,
            w2,
            b2,
            head_w: hw,
            head_b: hb,
            content_dim: self.encoder.content_dim(),
        }
    }

    /// Writes a text checkpoint: per matrix a `name rows cols` line followed
    /// by one line per row. Values use the shortest exact decimal form, so a
    /// reload is bit-identical.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::from("# sccaf checkpoint v1\n");
        for (name, t) in PARAM_NAMES.iter().zip(self.tensors()) {
            out.push_str(&format!("{name} {} {}\n", t.rows(), t.cols()));
            for i in 0..t.rows() {
                let row: Vec<String> = t.row(i).iter().map(|v| v.to_string()).collect();
                out.push_str(&row.join(" "));
                out.push('\n');
            }
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(out.as_bytes()))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file)
            .lines()
            .map(|l| l.map_err(|e| Error::io(path, e)))
            .filter(|l| !matches!(l, Ok(s) if s.starts_with('#') || s.trim().is_empty()));
        let bad = |what: String| Error::Ingest(format!("{}: {what}", path.display()));
        let mut tensors = Vec::with_capacity(6);
        for name in PARAM_NAMES {
            let head = lines
                .next()
                .ok_or_else(|| bad(format!("missing {name}")))??;
            let parts: Vec<&str> = head.split_whitespace().collect();
            if parts.len() != 3 || parts[0] != name {
                return Err(bad(format!("expected header for {name}, found {head:?}")));
            }
            let rows: usize = parts[1]
                .parse()
                .map_err(|_| bad(format!("bad rows in {head:?}")))?;
            let cols: usize = parts[2]
                .parse()
                .map_err(|_| bad(format!("bad cols in {head:?}")))?;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let line = lines
                    .next()
                    .ok_or_else(|| bad(format!("truncated {name}")))??;
                for tok in line.split_whitespace() {
                    data.push(
                        tok.parse::<f64>()
                            .map_err(|_| bad(format!("bad value {tok:?}")))?,
                    );
                }
            }
            tensors.push(Tensor::new(rows, cols, data)?);
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("six tensors parsed");
        let encoder = EncoderParams {
            w1: next(),
            b1: next(),
            w2: next(),
            b2: next(),
        };
        let head = HeadParams {
            w: next(),
            b: next(),
        };
        ModelParams::new(encoder, head)
    }
}

/// Parameters registered on a tape.
#[derive(Clone, Copy, Debug)]
pub struct ParamVars<'t> {
    pub w1: Var<'t>,
    pub b1: Var<'t>,
    pub w2: Var<'t>,
    pub b2: Var<'t>,
    pub head_w: Var<'t>,
    pub head_b: Var<'t>,
    content_dim: usize,
}

impl<'t> ParamVars<'t> {
    pub fn all(&self) -> [Var<'t>; 6] {
        [self.w1, self.b1, self.w2, self.b2, self.head_w, self.head_b]
    }

    pub fn content_dim(&self) -> usize {
        self.content_dim
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_params(d: usize, hidden: usize, content_dim: usize, seed: u64) -> Result<ModelParams> {
    if d == 0 || hidden == 0 || content_dim == 0 {
        return Err(Error::Contract(format!(
            "dimensions must be positive (d={d}, h={hidden}, d_c={content_dim})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let latent = 2 * content_dim;
    let encoder = EncoderParams {
        w1: glorot(d, hidden, &mut rng),
        b1: Tensor::zeros(1, hidden),
        w2: glorot(hidden, latent, &mut rng),
        b2: Tensor::zeros(1, latent),
    };
    let head = HeadParams {
        w: glorot(content_dim, 2, &mut rng),
        b: Tensor::zeros(1, 2),
    };
    ModelParams::new(encoder, head)
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn glorot(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let limit = glorot_bound(fan_in, fan_out);
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-limit..=limit))
        .collect();
    Tensor::new(fan_in, fan_out, data).expect("length matches shape")
}

/// Inverted-dropout mask with entries 0 or 1/(1-rate).
pub fn dropout_mask(rows: usize, cols: usize, rate: f64, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = 1.0 - rate;
    let data = (0..rows * cols)
        .map(|_| {
            if rng.random_bool(keep) {
                1.0 / keep
            } else {
                0.0
            }
        })
        .collect();
    Tensor::new(rows, cols, data).expect("length matches shape")
}

/// The normalized adjacency, dense or sparse.
#[derive(Clone, Copy)]
pub enum Propagation<'a> {
    Dense(&'a Tensor),
    Sparse(&'a Rc<SparseMatrix>),
}

impl Propagation<'_> {
    fn apply<'t>(&self, v: Var<'t>) -> Result<Var<'t>> {
        match self {
            Propagation::Dense(a) => v.tape().constant((*a).clone()).matmul(&v),
            Propagation::Sparse(s) => v.left_spmm(s),
        }
    }

    fn size(&self) -> usize {
        match self {
            Propagation::Dense(a) => a.rows(),
            Propagation::Sparse(s) => s.rows(),
        }
    }
}

fn add_row_bias<'t>(x: Var<'t>, bias: Var<'t>) -> Result<Var<'t>> {
    let ones = x.tape().constant(Tensor::ones(x.shape().0, 1));
    x.add(&ones.matmul(&bias)?)
}

/// `H = Â · relu(Â X W₁ + b₁) · W₂ + b₂` recorded on the tape. `hidden_mask`
/// is an optional dropout mask for the hidden layer.
pub fn encode_on_tape<'t>(
    x: Var<'t>,
    adj: Propagation<'_>,
    p: &ParamVars<'t>,
    hidden_mask: Option<&Tensor>,
) -> Result<Var<'t>> {
    let (n, d) = x.shape();
    if adj.size() != n || p.w1.shape().0 != d {
        return Err(Error::Shape(format!(
            "features {n}x{d} incompatible with adjacency of size {} and W1 {:?}",
            adj.size(),
            p.w1.shape()
        )));
    }
    let ax = adj.apply(x)?;
    let mut hidden = add_row_bias(ax.matmul(&p.w1)?, p.b1)?.relu();
    if let Some(mask) = hidden_mask {
        hidden = hidden.mul(&x.tape().constant(mask.clone()))?;
    }
    let propagated = adj.apply(hidden)?;
    add_row_bias(propagated.matmul(&p.w2)?, p.b2)
}

/// Content block of `h` (first `content_dim` columns).
pub fn content_block<'t>(h: Var<'t>, content_dim: usize) -> Result<Var<'t>> {
    h.slice_cols(0, content_dim)
}

pub fn environment_block<'t>(h: Var<'t>, content_dim: usize) -> Result<Var<'t>> {
    h.slice_cols(content_dim, h.shape().1)
}

/// Logits `C·W_y + b_y` on the tape.
pub fn predict_on_tape<'t>(c: Var<'t>, p: &ParamVars<'t>) -> Result<Var<'t>> {
    if c.shape().1 != p.head_w.shape().0 {
        return Err(Error::Shape(format!(
            "content width {} but head expects {}",
            c.shape().1,
            p.head_w.shape().0
        )));
    }
    add_row_bias(c.matmul(&p.head_w)?, p.head_b)
}

/// Latent matrix `H = [C | E]` and, after pretraining, pseudo-labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentState {
    pub h: Tensor,
    pub content_dim: usize,
    pub pseudo_labels: Option<Vec<u8>>,
}

impl LatentState {
    pub fn content(&self) -> Tensor {
        self.h
            .slice_cols(0, self.content_dim)
            .expect("content_dim within width")
    }

    pub fn environment(&self) -> Tensor {
        self.h
            .slice_cols(self.content_dim, self.h.cols())
            .expect("content_dim within width")
    }
}

fn encode_with(x: &Tensor, adj: Propagation<'_>, p: &EncoderParams) -> Result<LatentState> {
    let tape = Tape::new();
    let vars = ParamVars {
        w1: tape.constant(p.w1.clone()),
        b1: tape.constant(p.b1.clone()),
        w2: tape.constant(p.w2.clone()),
        b2: tape.constant(p.b2.clone()),
        head_w: tape.constant(Tensor::zeros(p.content_dim(), 2)),
        head_b: tape.constant(Tensor::zeros(1, 2)),
        content_dim: p.content_dim(),
    };
    let h = encode_on_tape(tape.constant(x.clone()), adj, &vars, None)?;
    let h = (*h.value()).clone();
    Ok(LatentState {
        h,
        content_dim: p.content_dim(),
        pseudo_labels: None,
    })
}

/// Forward pass with a dense normalized adjacency.
pub fn encode(x: &Tensor, a_hat: &Tensor, p: &EncoderParams) -> Result<LatentState> {
    encode_with(x, Propagation::Dense(a_hat), p)
}

/// Forward pass with a sparse normalized adjacency.
pub fn encode_sparse(
    x: &Tensor,
    a_hat: &Rc<SparseMatrix>,
    p: &EncoderParams,
) -> Result<LatentState> {
    encode_with(x, Propagation::Sparse(a_hat), p)
}

/// Logits from the content block.
pub fn predict(c: &Tensor, head: &HeadParams) -> Result<Tensor> {
    if c.cols() != head.w.rows() {
        return Err(Error::Shape(format!(
            "content width {} but head expects {}",
            c.cols(),
            head.w.rows()
        )));
    }
    let mut out = c.matmul(&head.w)?;
    for i in 0..out.rows() {
        for (o, b) in out.row_mut(i).iter_mut().zip(head.b.data()) {
            *o += b;
        }
    }
    Ok(out)
}

/// Probability of class 1 per row of two-class logits.
pub fn positive_probabilities(logits: &Tensor) -> Vec<f64> {
    let p = logits.softmax_rows();
    (0..p.rows()).map(|i| p.get(i, 1)).collect()
}

/// Argmax labels (ties to class 0).
pub fn hard_labels(logits: &Tensor) -> Vec<u8> {
    logits.argmax_rows().into_iter().map(|c| c as u8).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{sym_normalize, Graph};

    fn random_features(n: usize, d: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(
            n,
            d,
            (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    fn ring(n: usize) -> Graph {
        let e: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        Graph::new(n, &e).unwrap()
    }

    #[test]
    fn init_deterministic_and_bounded() {
        let a = init_params(5, 7, 3, 11).unwrap();
        assert_eq!(a, init_params(5, 7, 3, 11).unwrap());
        assert_ne!(a, init_params(5, 7, 3, 12).unwrap());
        let bound = glorot_bound(5, 7);
        assert!(a.encoder.w1.data().iter().all(|v| v.abs() <= bound));
        let bound = glorot_bound(7, 6);
        assert!(a.encoder.w2.data().iter().all(|v| v.abs() <= bound));
        assert!(a.encoder.b1.data().iter().all(|&v| v == 0.0));
        assert_eq!(a.encoder.content_dim(), 3);
        assert_eq!(a.encoder.latent_dim(), 6);
    }

    #[test]
    fn zero_weights_give_bias_rows() {
        let mut p = init_params(3, 4, 2, 1).unwrap();
        p.encoder.w1 = Tensor::zeros(3, 4);
        p.encoder.w2 = Tensor::zeros(4, 4);
        p.encoder.b2 = Tensor::from_rows(&[[0.5, -1.0, 2.0, 3.0]]).unwrap();
        let g = ring(5);
        let z = encode(&random_features(5, 3, 2), &sym_normalize(&g), &p.encoder).unwrap();
        for i in 0..5 {
            assert_eq!(z.h.row(i), &[0.5, -1.0, 2.0, 3.0]);
        }
        assert_eq!(z.content().row(3), &[0.5, -1.0]);
        assert_eq!(z.environment().row(3), &[2.0, 3.0]);
    }

    /// Row-wise two-layer MLP written directly with loops.
    fn mlp(x: &Tensor, p: &EncoderParams) -> Tensor {
        let (n, d) = x.shape();
        let h = p.hidden_dim();
        let l = p.latent_dim();
        let mut out = Tensor::zeros(n, l);
        for i in 0..n {
            let mut hid = vec![0.0; h];
            for (k, hk) in hid.iter_mut().enumerate() {
                let mut s = p.b1.get(0, k);
                for j in 0..d {
                    s += x.get(i, j) * p.w1.get(j, k);
                }
                *hk = s.max(0.0);
            }
            for m in 0..l {
                let mut s = p.b2.get(0, m);
                for k in 0..h {
                    s += hid[k] * p.w2.get(k, m);
                }
                out.set(i, m, s);
            }
        }
        out
    }

    #[test]
    fn isolated_node_is_plain_mlp() {
        let mut p = init_params(3, 4, 2, 5).unwrap();
        p.encoder.b1 = Tensor::from_rows(&[[0.1, -0.2, 0.3, 0.0]]).unwrap();
        let x = random_features(1, 3, 9);
        let z = encode(&x, &Tensor::identity(1), &p.encoder).unwrap();
        assert!(z.h.max_abs_diff(&mlp(&x, &p.encoder)) < 1e-14);
    }

    #[test]
    fn identity_adjacency_is_rowwise_mlp() {
        let p = init_params(4, 6, 3, 8).unwrap();
        let x = random_features(7, 4, 10);
        let z = encode(&x, &Tensor::identity(7), &p.encoder).unwrap();
        assert!(z.h.max_abs_diff(&mlp(&x, &p.encoder)) < 1e-14);
    }

    #[test]
    fn output_shape() {
        let p = init_params(4, 16, 8, 0).unwrap();
        let g = ring(12);
        let z = encode_sparse(
            &random_features(12, 4, 1),
            &g.normalized_adjacency(),
            &p.encoder,
        )
        .unwrap();
        assert_eq!(z.h.shape(), (12, 16));
    }

    #[test]
    fn sparse_and_dense_agree() {
        let p = init_params(4, 6, 3, 2).unwrap();
        let g = Graph::new(6, &[(0, 1), (1, 2), (3, 4), (2, 5), (0, 5)]).unwrap();
        let x = random_features(6, 4, 3);
        let dense = encode(&x, &sym_normalize(&g), &p.encoder).unwrap();
        let sparse = encode_sparse(&x, &g.normalized_adjacency(), &p.encoder).unwrap();
        assert!(dense.h.max_abs_diff(&sparse.h) < 1e-14);
    }

    #[test]
    fn permutation_equivariance() {
        let p = init_params(3, 5, 2, 4).unwrap();
        let g = Graph::new(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (1, 5)]).unwrap();
        let x = random_features(6, 3, 6);
        let perm = [3, 0, 5, 1, 4, 2];
        let mut xp = Tensor::zeros(6, 3);
        for i in 0..6 {
            xp.row_mut(perm[i]).copy_from_slice(x.row(i));
        }
        let gp = g.permuted(&perm).unwrap();
        let z = encode(&x, &sym_normalize(&g), &p.encoder).unwrap();
        let zp = encode(&xp, &sym_normalize(&gp), &p.encoder).unwrap();
        for i in 0..6 {
            for (a, b) in z.h.row(i).iter().zip(zp.h.row(perm[i])) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_head_uniform_probabilities() {
        let head = HeadParams {
            w: Tensor::zeros(3, 2),
            b: Tensor::zeros(1, 2),
        };
        let logits = predict(&random_features(4, 3, 1), &head).unwrap();
        assert!(positive_probabilities(&logits).iter().all(|&p| p == 0.5));
    }

    #[test]
    fn head_ignores_environment() {
        let p = init_params(3, 4, 2, 3).unwrap();
        let g = ring(5);
        let z = encode(&random_features(5, 3, 2), &sym_normalize(&g), &p.encoder).unwrap();
        let base = predict(&z.content(), &p.head).unwrap();
        let mut perturbed = z.clone();
        for i in 0..5 {
            perturbed.h.set(i, 2, 1e3 * (i as f64 + 1.0));
            perturbed.h.set(i, 3, -7.0);
        }
        assert_eq!(predict(&perturbed.content(), &p.head).unwrap(), base);
    }

    #[test]
    fn argmax_of_logits() {
        let l = Tensor::from_rows(&[[2.0, -1.0], [0.0, 0.0], [0.2, 0.9]]).unwrap();
        assert_eq!(hard_labels(&l), vec![0, 0, 1]);
    }

    #[test]
    fn width_mismatch_is_shape_error() {
        let p = init_params(3, 4, 2, 3).unwrap();
        assert!(matches!(
            predict(&Tensor::zeros(2, 3), &p.head),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            encode(&Tensor::zeros(2, 5), &Tensor::identity(2), &p.encoder),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn checkpoint_roundtrip_is_exact() {
        let p = init_params(4, 6, 3, 77).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        p.save(&path).unwrap();
        assert_eq!(ModelParams::load(&path).unwrap(), p);
    }

    #[test]
    fn tape_prediction_matches_plain() {
        let p = init_params(3, 4, 2, 3).unwrap();
        let g = ring(5);
        let x = random_features(5, 3, 2);
        let adj = g.normalized_adjacency();
        let tape = Tape::new();
        let vars = p.on_tape(&tape);
        let h = encode_on_tape(
            tape.constant(x.clone()),
            Propagation::Sparse(&adj),
            &vars,
            None,
        )
        .unwrap();
        let logits = predict_on_tape(content_block(h, 2).unwrap(), &vars).unwrap();
        let z = encode_sparse(&x, &adj, &p.encoder).unwrap();
        let plain = predict(&z.content(), &p.head).unwrap();
        assert!(logits.value().max_abs_diff(&plain) < 1e-14);
    }
}
