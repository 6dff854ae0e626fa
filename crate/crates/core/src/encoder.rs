//! Two-layer GCN encoder and MLP projection head with explicit backward
//! passes, plus the Adam optimizer and JSON checkpoints.
//!
//! Forward, per layer: `A_l = S·H_{l-1}·W_l`, `H_l = dropout(relu(A_l))`.
//! Head: `Z = relu(H·P1)·P2`. Every intermediate needed by the backward pass
//! is kept on a tape, including the dropout masks that were drawn.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::graph::NormalizedAdjacency;
use crate::linalg::DenseMatrix;
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderWeights {
    pub w1: DenseMatrix,
    pub w2: DenseMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadWeights {
    pub p1: DenseMatrix,
    pub p2: DenseMatrix,
}

/// All trainable matrices. Gradients share this layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    /// One encoder, or one per view when views do not share weights.
    pub encoders: Vec<EncoderWeights>,
    pub head: HeadWeights,
}

impl ParamSet {
    pub fn zeros_like(other: &Self) -> Self {
        let z = |m: &DenseMatrix| DenseMatrix::zeros(m.rows(), m.cols());
        Self {
            encoders: other
                .encoders
                .iter()
                .map(|e| EncoderWeights { w1: z(&e.w1), w2: z(&e.w2) })
                .collect(),
            head: HeadWeights {
                p1: z(&other.head.p1),
                p2: z(&other.head.p2),
            },
        }
    }

    pub fn matrices(&self) -> Vec<&DenseMatrix> {
        let mut v: Vec<&DenseMatrix> = self.encoders.iter().flat_map(|e| [&e.w1, &e.w2]).collect();
        v.push(&self.head.p1);
        v.push(&self.head.p2);
        v
    }

    pub fn matrices_mut(&mut self) -> Vec<&mut DenseMatrix> {
        let mut v: Vec<&mut DenseMatrix> = self
            .encoders
            .iter_mut()
            .flat_map(|e| [&mut e.w1, &mut e.w2])
            .collect();
        v.push(&mut self.head.p1);
        v.push(&mut self.head.p2);
        v
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.matrices_mut().into_iter().zip(other.matrices()) {
            a.add_assign(b);
        }
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        let a = self.matrices();
        let b = other.matrices();
        a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.shape() == y.shape())
    }

    pub fn is_finite(&self) -> bool {
        self.matrices().iter().all(|m| m.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.matrices().iter().fold(0.0, |m, x| m.max(x.max_abs()))
    }

    pub fn input_dim(&self) -> usize {
        self.encoders[0].w1.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.encoders[0].w2.cols()
    }

    pub fn encoder(&self, view: usize) -> &EncoderWeights {
        &self.encoders[view.min(self.encoders.len() - 1)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: ParamSet,
    pub v: ParamSet,
    pub t: u64,
}

/// Weights plus optimizer moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub weights: ParamSet,
    pub adam: AdamState,
}

fn glorot(rows: usize, cols: usize, rng: &mut SeededRng) -> DenseMatrix {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    DenseMatrix::from_fn(rows, cols, |_, _| a * (2.0 * rng.uniform() - 1.0))
}

impl ModelParams {
    /// Glorot-uniform initialization. `encoders` is 1 for shared weights or
    /// the number of views otherwise.
    pub fn init(input_dim: usize, hidden: usize, encoders: usize, rng: &mut SeededRng) -> Result<Self> {
        if input_dim == 0 || hidden == 0 || encoders == 0 {
            return invalid("model dimensions must be positive");
        }
        let encoders = (0..encoders)
            .map(|_| EncoderWeights {
                w1: glorot(input_dim, hidden, rng),
                w2: glorot(hidden, hidden, rng),
            })
            .collect();
        let head = HeadWeights {
            p1: glorot(hidden, hidden, rng),
            p2: glorot(hidden, hidden, rng),
        };
        Ok(Self::from_weights(ParamSet { encoders, head }))
    }

    pub fn from_weights(weights: ParamSet) -> Self {
        let adam = AdamState {
            m: ParamSet::zeros_like(&weights),
            v: ParamSet::zeros_like(&weights),
            t: 0,
        };
        Self { weights, adam }
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.weights;
        if w.encoders.is_empty() {
            return Err(Error::Schema("model has no encoder".into()));
        }
        let (d, h) = (w.input_dim(), w.hidden_dim());
        for e in &w.encoders {
            if e.w1.shape() != (d, h) || e.w2.shape() != (h, h) {
                return Err(Error::Schema("inconsistent encoder shapes".into()));
            }
        }
        if w.head.p1.shape() != (h, h) || w.head.p2.shape() != (h, h) {
            return Err(Error::Schema("inconsistent head shapes".into()));
        }
        if !w.same_shape(&self.adam.m) || !w.same_shape(&self.adam.v) {
            return Err(Error::Schema("optimizer state does not match weights".into()));
        }
        if !w.is_finite() {
            return Err(Error::Schema("non-finite weights".into()));
        }
        Ok(())
    }
}

const CHECKPOINT_FORMAT: &str = "costa-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    params: ModelParams,
}

pub fn save_checkpoint(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let ck = Checkpoint {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        params: params.clone(),
    };
    std::fs::write(path, serde_json::to_vec(&ck)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    let ck: Checkpoint = serde_json::from_slice(&std::fs::read(path)?)
        .map_err(|e| Error::Schema(format!("malformed checkpoint: {e}")))?;
    if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
        return Err(Error::Schema(format!(
            "unsupported checkpoint {} v{}",
            ck.format, ck.version
        )));
    }
    ck.params.validate()?;
    Ok(ck.params)
}

/// Per-layer cache for the encoder backward pass.
#[derive(Debug, Clone)]
pub struct EncoderTape {
    view: usize,
    adjacency: NormalizedAdjacency,
    x: DenseMatrix,
    a1: DenseMatrix,
    mask1: Option<DenseMatrix>,
    h1: DenseMatrix,
    a2: DenseMatrix,
    mask2: Option<DenseMatrix>,
    out_shape: (usize, usize),
}

impl EncoderTape {
    pub fn output_shape(&self) -> (usize, usize) {
        self.out_shape
    }

    pub fn dropout_masks(&self) -> (Option<&DenseMatrix>, Option<&DenseMatrix>) {
        (self.mask1.as_ref(), self.mask2.as_ref())
    }
}

#[derive(Debug, Clone)]
pub struct HeadTape {
    input: DenseMatrix,
    b1: DenseMatrix,
    r1: DenseMatrix,
}

/// Tape for a full encoder + head forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTape {
    pub encoder: EncoderTape,
    pub head: HeadTape,
}

/// How dropout masks are produced during a training-mode forward pass.
#[derive(Debug)]
pub enum Mode<'a> {
    Eval,
    Train { dropout: f64, rng: &'a mut SeededRng },
}

fn relu(m: &DenseMatrix) -> DenseMatrix {
    m.map(|v| v.max(0.0))
}

/// `g ⊙ 1[a > 0]`; the subgradient at 0 is taken as 0.
fn relu_backward(g: &DenseMatrix, a: &DenseMatrix) -> DenseMatrix {
    g.hadamard(&a.map(|v| if v > 0.0 { 1.0 } else { 0.0 }))
}

/// Inverted-dropout mask: entries `0` or `1/(1-p)`.
pub fn dropout_mask(rows: usize, cols: usize, p: f64, rng: &mut SeededRng) -> DenseMatrix {
    let keep = 1.0 / (1.0 - p);
    DenseMatrix::from_fn(rows, cols, |_, _| if rng.bernoulli(p) { 0.0 } else { keep })
}

fn maybe_dropout(h: DenseMatrix, mode: &mut Mode<'_>) -> Result<(DenseMatrix, Option<DenseMatrix>)> {
    match mode {
        Mode::Train { dropout, rng } if *dropout > 0.0 => {
            if *dropout >= 1.0 {
                return invalid("dropout rate must be below 1");
            }
            let mask = dropout_mask(h.rows(), h.cols(), *dropout, rng);
            Ok((h.hadamard(&mask), Some(mask)))
        }
        _ => Ok((h, None)),
    }
}

/// `H = relu(S·relu(S·X·W1)·W2)` with optional dropout after each
/// activation. `view` selects the encoder when weights are per-view.
pub fn gcn_forward(
    params: &ParamSet,
    view: usize,
    s: &NormalizedAdjacency,
    x: &DenseMatrix,
    mut mode: Mode<'_>,
) -> Result<(DenseMatrix, EncoderTape)> {
    let enc = params.encoder(view);
    if x.rows() != s.n() {
        return invalid(format!("features have {} rows, adjacency has {}", x.rows(), s.n()));
    }
    if x.cols() != enc.w1.rows() {
        return invalid(format!("features have {} columns, model expects {}", x.cols(), enc.w1.rows()));
    }
    let a1 = s.apply(&x.matmul(&enc.w1));
    let (h1, mask1) = maybe_dropout(relu(&a1), &mut mode)?;
    let a2 = s.apply(&h1.matmul(&enc.w2));
    let (h, mask2) = maybe_dropout(relu(&a2), &mut mode)?;
    let tape = EncoderTape {
        view,
        adjacency: s.clone(),
        x: x.clone(),
        a1,
        mask1,
        h1,
        a2,
        mask2,
        out_shape: h.shape(),
    };
    Ok((h, tape))
}

/// Eval-mode embedding `H`.
pub fn embed(params: &ParamSet, s: &NormalizedAdjacency, x: &DenseMatrix) -> Result<DenseMatrix> {
    Ok(gcn_forward(params, 0, s, x, Mode::Eval)?.0)
}

/// Eval-mode embedding with the propagation replaced by the identity, i.e.
/// the same weights used as a graph-blind MLP.
pub fn mlp_embed(params: &ParamSet, x: &DenseMatrix) -> Result<DenseMatrix> {
    embed(params, &NormalizedAdjacency::identity(x.rows()), x)
}

/// `Z = relu(H·P1)·P2`, no dropout.
pub fn projection_head(params: &ParamSet, h: &DenseMatrix) -> Result<(DenseMatrix, HeadTape)> {
    let head = &params.head;
    if h.cols() != head.p1.rows() {
        return invalid(format!("head expects {} columns, got {}", head.p1.rows(), h.cols()));
    }
    let b1 = h.matmul(&head.p1);
    let r1 = relu(&b1);
    let z = r1.matmul(&head.p2);
    Ok((
        z,
        HeadTape {
            input: h.clone(),
            b1,
            r1,
        },
    ))
}

/// Full forward pass: encoder then head.
pub fn forward(
    params: &ParamSet,
    s: &NormalizedAdjacency,
    x: &DenseMatrix,
    mode: Mode<'_>,
) -> Result<(DenseMatrix, ForwardTape)> {
    let (h, encoder) = gcn_forward(params, 0, s, x, mode)?;
    let (z, head) = projection_head(params, &h)?;
    Ok((z, ForwardTape { encoder, head }))
}

/// Head backward; accumulates into `grads.head` and returns `∂/∂input`.
pub fn head_backward(
    params: &ParamSet,
    tape: &HeadTape,
    grad_z: &DenseMatrix,
    grads: &mut ParamSet,
) -> Result<DenseMatrix> {
    let head = &params.head;
    if grad_z.shape() != (tape.r1.rows(), head.p2.cols()) || tape.input.cols() != head.p1.rows() {
        return invalid("stale head tape: shapes do not match the gradient or parameters");
    }
    grads.head.p2.add_assign(&tape.r1.t_matmul(grad_z));
    let d_b1 = relu_backward(&grad_z.matmul_t(&head.p2), &tape.b1);
    grads.head.p1.add_assign(&tape.input.t_matmul(&d_b1));
    Ok(d_b1.matmul_t(&head.p1))
}

/// Encoder backward; accumulates into the encoder gradients of the tape's
/// view.
pub fn encoder_backward(
    params: &ParamSet,
    tape: &EncoderTape,
    grad_h: &DenseMatrix,
    grads: &mut ParamSet,
) -> Result<()> {
    let enc = params.encoder(tape.view);
    if grad_h.shape() != tape.out_shape || enc.w1.rows() != tape.x.cols() || enc.w2.cols() != tape.out_shape.1 {
        return invalid("stale encoder tape: shapes do not match the gradient or parameters");
    }
    let s = &tape.adjacency;
    let mut g = grad_h.clone();
    if let Some(m) = &tape.mask2 {
        g = g.hadamard(m);
    }
    let d_t2 = s.apply(&relu_backward(&g, &tape.a2));
    let slot = tape.view.min(grads.encoders.len() - 1);
    grads.encoders[slot].w2.add_assign(&tape.h1.t_matmul(&d_t2));
    let mut g1 = d_t2.matmul_t(&enc.w2);
    if let Some(m) = &tape.mask1 {
        g1 = g1.hadamard(m);
    }
    let d_t1 = s.apply(&relu_backward(&g1, &tape.a1));
    grads.encoders[slot].w1.add_assign(&tape.x.t_matmul(&d_t1));
    Ok(())
}

/// Gradients of all weights given `∂loss/∂Z` for a [`forward`] tape.
pub fn backward(params: &ParamSet, tape: &ForwardTape, grad_z: &DenseMatrix) -> Result<ParamSet> {
    let mut grads = ParamSet::zeros_like(params);
    let grad_h = head_backward(params, &tape.head, grad_z, &mut grads)?;
    encoder_backward(params, &tape.encoder, &grad_h, &mut grads)?;
    Ok(grads)
}

/// One bias-corrected Adam update in place.
pub fn adam_step(params: &mut ModelParams, grads: &ParamSet, cfg: &AdamConfig) -> Result<()> {
    if !params.weights.same_shape(grads) {
        return invalid("gradient layout does not match parameters");
    }
    if !grads.is_finite() {
        return Err(Error::Divergence(format!(
            "non-finite gradient at optimizer step {}",
            params.adam.t + 1
        )));
    }
    let st = &mut params.adam;
    st.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(st.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(st.t as i32);
    let weights = params.weights.matrices_mut();
    let ms = st.m.matrices_mut();
    let vs = st.v.matrices_mut();
    for (((w, m), v), g) in weights.into_iter().zip(ms).zip(vs).zip(grads.matrices()) {
        let (w, m, v, g) = (w.data_mut(), m.data_mut(), v.data_mut(), g.data());
        for i in 0..w.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            w[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
