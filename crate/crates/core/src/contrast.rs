//! InfoNCE-style contrastive loss with its analytic gradient, and the
//! sketch-then-contrast training step for single- and multi-view setups.

use serde::{Deserialize, Serialize};

use crate::encoder::{encoder_backward, gcn_forward, head_backward, projection_head, EncoderTape, HeadTape, Mode, ParamSet};
use crate::error::{invalid, Result};
use crate::graph::{augment, normalize_adjacency, AugmentConfig, Graph, NormalizedAdjacency};
use crate::linalg::DenseMatrix;
use crate::rng::SeededRng;
use crate::sketch::{add_gaussian_noise, SketchConfig, SketchMethod, SketchOperator};

const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContrastMode {
    MultiView,
    SingleView,
}

/// Where the sketch acts relative to the projection head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SketchPosition {
    /// On the encoder output `H`; the head then sees the sketched rows.
    PreHead,
    /// On the head output `Z`.
    PostHead,
}

/// Source of the difference between the two single-view branches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SvBranch {
    /// Two independent inverted-dropout masks on the encoder output.
    Dropout,
    /// Two independent `N(0, eps)` noise draws after the shared sketch.
    Noise,
    /// Two independently drawn sketch matrices.
    IndependentSketch,
    /// Identical branches.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub tau: f64,
    /// Keep the `j = i` term in the intra-view negatives.
    pub include_intra_self: bool,
    /// Row-wise ℓ2 normalization before similarities.
    pub normalize: bool,
    pub mode: ContrastMode,
    pub sketch: SketchConfig,
    /// When set, `sketch.k` is replaced by `max(1, round(ratio·n))`.
    pub ratio: Option<f64>,
    pub resample_projection_every_step: bool,
    pub sketch_position: SketchPosition,
    pub sv_branch: SvBranch,
    /// Graph augmentation per view. Multi-view only unless `sv_graph_aug`.
    pub graph_aug: Option<AugmentConfig>,
    pub sv_graph_aug: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau: 0.5,
            include_intra_self: false,
            normalize: true,
            mode: ContrastMode::SingleView,
            sketch: SketchConfig {
                eps: 0.1,
                ..SketchConfig::new(SketchMethod::GaussianRp, 1)
            },
            ratio: Some(0.5),
            resample_projection_every_step: true,
            sketch_position: SketchPosition::PreHead,
            sv_branch: SvBranch::Noise,
            graph_aug: None,
            sv_graph_aug: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return invalid(format!("tau must be positive, got {}", self.tau));
        }
        if let Some(r) = self.ratio {
            if !(r > 0.0) || !r.is_finite() {
                return invalid(format!("reduction ratio must be positive, got {r}"));
            }
        }
        if let Some(a) = &self.graph_aug {
            a.validate()?;
        }
        let mut s = self.sketch.clone();
        s.k = s.k.max(1);
        s.validate()
    }

    /// The sketch configuration resolved for `n` input rows.
    pub fn sketch_for(&self, n: usize) -> Result<SketchConfig> {
        let mut s = self.sketch.clone();
        if let Some(r) = self.ratio {
            s.k = ((r * n as f64).round() as usize).max(1);
        }
        s.validate()?;
        let row_bound = matches!(s.method, SketchMethod::SvdSketch | SketchMethod::RowSelection);
        if row_bound && s.k > n {
            return invalid(format!("{} needs k <= n, got k = {} for n = {n}", s.method.name(), s.k));
        }
        Ok(s)
    }
}

struct Normalized {
    unit: DenseMatrix,
    norms: Vec<f64>,
}

fn normalize_rows(m: &DenseMatrix, on: bool) -> Normalized {
    if !on {
        return Normalized {
            unit: m.clone(),
            norms: vec![1.0; m.rows()],
        };
    }
    let mut unit = m.clone();
    let mut norms = Vec::with_capacity(m.rows());
    for i in 0..m.rows() {
        let r = m.row_norm_sq(i).sqrt().max(NORM_FLOOR);
        unit.row_mut(i).iter_mut().for_each(|v| *v /= r);
        norms.push(r);
    }
    Normalized { unit, norms }
}

/// Pullback through `u ↦ u / max(‖u‖, floor)`.
fn normalize_backward(n: &Normalized, grad: &DenseMatrix, on: bool) -> DenseMatrix {
    if !on {
        return grad.clone();
    }
    let mut out = grad.clone();
    for i in 0..grad.rows() {
        let r = n.norms[i];
        let u = n.unit.row(i);
        let g = grad.row(i);
        let row = out.row_mut(i);
        if r > NORM_FLOOR {
            let proj: f64 = u.iter().zip(g).map(|(a, b)| a * b).sum();
            for ((o, &gi), &ui) in row.iter_mut().zip(g).zip(u) {
                *o = (gi - ui * proj) / r;
            }
        } else {
            row.iter_mut().for_each(|o| *o /= r);
        }
    }
    out
}

fn check_inputs(u: &DenseMatrix, v: &DenseMatrix, cfg: &LossConfig) -> Result<()> {
    if !(cfg.tau > 0.0) {
        return invalid("tau must be positive");
    }
    if u.rows() == 0 {
        return invalid("contrastive loss needs at least one row");
    }
    if u.shape() != v.shape() {
        return invalid(format!("view shapes differ: {:?} vs {:?}", u.shape(), v.shape()));
    }
    if !u.is_finite() || !v.is_finite() {
        return invalid("non-finite input to contrastive loss");
    }
    Ok(())
}

struct Forward {
    loss: f64,
    nu: Normalized,
    nv: Normalized,
    /// Softmax weights over inter-view logits.
    p: DenseMatrix,
    /// Softmax weights over intra-view logits (zero where excluded).
    q: DenseMatrix,
}

fn loss_forward(u: &DenseMatrix, v: &DenseMatrix, cfg: &LossConfig) -> Result<Forward> {
    check_inputs(u, v, cfg)?;
    let k = u.rows();
    let nu = normalize_rows(u, cfg.normalize);
    let nv = normalize_rows(v, cfg.normalize);
    let inv_tau = 1.0 / cfg.tau;
    let mut a = nu.unit.matmul_t(&nv.unit);
    a.scale_mut(inv_tau);
    let mut b = nu.unit.matmul_t(&nu.unit);
    b.scale_mut(inv_tau);
    let mut p = DenseMatrix::zeros(k, k);
    let mut q = DenseMatrix::zeros(k, k);
    let mut total = 0.0;
    for i in 0..k {
        let keep = |j: usize| cfg.include_intra_self || j != i;
        let ar = a.row(i);
        let br = b.row(i);
        let mut mx = ar.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (j, &x) in br.iter().enumerate() {
            if keep(j) {
                mx = mx.max(x);
            }
        }
        let mut sum = 0.0;
        for (o, &x) in p.row_mut(i).iter_mut().zip(ar) {
            *o = (x - mx).exp();
            sum += *o;
        }
        for (j, (o, &x)) in q.row_mut(i).iter_mut().zip(br).enumerate() {
            if keep(j) {
                *o = (x - mx).exp();
                sum += *o;
            }
        }
        p.row_mut(i).iter_mut().for_each(|x| *x /= sum);
        q.row_mut(i).iter_mut().for_each(|x| *x /= sum);
        total += mx + sum.ln() - ar[i];
    }
    let loss = total / k as f64;
    if !loss.is_finite() {
        return invalid("contrastive loss is not finite");
    }
    Ok(Forward { loss, nu, nv, p, q })
}

/// Mean over anchors `i` of
/// `−sim(Uᵢ,Vᵢ)/τ + log(Σⱼ e^{sim(Uᵢ,Vⱼ)/τ} + Σ_{j≠i} e^{sim(Uᵢ,Uⱼ)/τ})`.
pub fn contrastive_loss(u: &DenseMatrix, v: &DenseMatrix, cfg: &LossConfig) -> Result<f64> {
    Ok(loss_forward(u, v, cfg)?.loss)
}

/// Loss and `(∂L/∂U, ∂L/∂V)`.
pub fn contrastive_loss_grad(u: &DenseMatrix, v: &DenseMatrix, cfg: &LossConfig) -> Result<(f64, DenseMatrix, DenseMatrix)> {
    let f = loss_forward(u, v, cfg)?;
    let k = u.rows();
    let c = 1.0 / (k as f64 * cfg.tau);
    // ∂L/∂logits, already folded with 1/τ
    let mut ga = f.p;
    for i in 0..k {
        let x = ga.get(i, i);
        ga.set(i, i, x - 1.0);
    }
    ga.scale_mut(c);
    let mut gb = f.q;
    gb.scale_mut(c);
    let gbs = gb.add(&gb.transpose());
    let mut du_hat = ga.matmul(&f.nv.unit);
    du_hat.add_assign(&gbs.matmul(&f.nu.unit));
    let dv_hat = ga.t_matmul(&f.nu.unit);
    let du = normalize_backward(&f.nu, &du_hat, cfg.normalize);
    let dv = normalize_backward(&f.nv, &dv_hat, cfg.normalize);
    Ok((f.loss, du, dv))
}

/// One encoder pass kept for the backward sweep.
struct ViewPass {
    tape: EncoderTape,
    h: DenseMatrix,
}

/// One branch of the contrast after the encoder: optional dropout mask on
/// `H`, then the sketch and head in configured order.
struct Branch {
    h_mask: Option<DenseMatrix>,
    op: usize,
    head: HeadTape,
    out: DenseMatrix,
}

/// Training objective with an optional cached projection for the
/// fixed-projection ablation.
#[derive(Debug, Clone)]
pub struct CostaObjective {
    pub cfg: LossConfig,
    /// Encoder dropout rate during training.
    pub dropout: f64,
    fixed: Option<Vec<SketchOperator>>,
}

/// Result of one objective evaluation.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub loss: f64,
    pub grads: ParamSet,
    /// Row count of each contrasted view.
    pub rows: usize,
}

impl CostaObjective {
    pub fn new(cfg: LossConfig, dropout: f64) -> Result<Self> {
        cfg.validate()?;
        if !(0.0..1.0).contains(&dropout) {
            return invalid(format!("dropout must be in [0, 1), got {dropout}"));
        }
        Ok(Self { cfg, dropout, fixed: None })
    }

    /// Supplies the sketch operators to use instead of drawing them. With
    /// `IndependentSketch` two operators are expected, otherwise one.
    pub fn with_fixed_projection(mut self, ops: Vec<SketchOperator>) -> Self {
        self.fixed = Some(ops);
        self
    }

    fn operators(&mut self, basis: &DenseMatrix, count: usize, rng: &mut SeededRng) -> Result<Vec<SketchOperator>> {
        if let Some(ops) = &self.fixed {
            if ops.len() < count || ops.iter().any(|o| o.n() != basis.rows()) {
                return invalid("fixed projection does not match the step");
            }
            return Ok(ops.clone());
        }
        let scfg = self.cfg.sketch_for(basis.rows())?;
        let ops = (0..count)
            .map(|_| SketchOperator::draw(&scfg, basis, rng))
            .collect::<Result<Vec<_>>>()?;
        if !self.cfg.resample_projection_every_step {
            self.fixed = Some(ops.clone());
        }
        Ok(ops)
    }

    fn noise_variance(&self) -> Option<f64> {
        let s = &self.cfg.sketch;
        let on = s.method == SketchMethod::NoiseInjection
            || (s.noise_with_projection && s.method != SketchMethod::Identity)
            || (self.cfg.mode == ContrastMode::SingleView && self.cfg.sv_branch == SvBranch::Noise);
        (on && s.eps > 0.0).then_some(s.eps)
    }

    fn encode(&self, params: &ParamSet, view: usize, g: &Graph, s: &NormalizedAdjacency, train_dropout: f64, augment_graph: bool, rng: &mut SeededRng) -> Result<ViewPass> {
        let (h, tape) = if augment_graph {
            let aug = augment(g, self.cfg.graph_aug.as_ref().expect("checked by caller"), rng)?;
            let sa = normalize_adjacency(&aug);
            gcn_forward(params, view, &sa, aug.features(), Mode::Train { dropout: train_dropout, rng })?
        } else {
            gcn_forward(params, view, s, g.features(), Mode::Train { dropout: train_dropout, rng })?
        };
        Ok(ViewPass { tape, h })
    }

    fn branch(&self, params: &ParamSet, h: &DenseMatrix, mask: Option<DenseMatrix>, ops: &[SketchOperator], op: usize, noise: Option<f64>, rng: &mut SeededRng) -> Result<Branch> {
        let h_in = match &mask {
            Some(m) => h.hadamard(m),
            None => h.clone(),
        };
        let sk = |x: &DenseMatrix, rng: &mut SeededRng| -> Result<DenseMatrix> {
            let mut y = ops[op].apply(x)?;
            if let Some(var) = noise {
                add_gaussian_noise(&mut y, var, rng);
            }
            Ok(y)
        };
        let (out, head) = match self.cfg.sketch_position {
            SketchPosition::PreHead => {
                let ht = sk(&h_in, rng)?;
                projection_head(params, &ht)?
            }
            SketchPosition::PostHead => {
                let (z, tape) = projection_head(params, &h_in)?;
                (sk(&z, rng)?, tape)
            }
        };
        Ok(Branch { h_mask: mask, op, head, out })
    }

    /// Pullback of a branch gradient to `∂L/∂H`.
    fn branch_backward(&self, params: &ParamSet, b: &Branch, ops: &[SketchOperator], grad: &DenseMatrix, grads: &mut ParamSet) -> Result<DenseMatrix> {
        let mut gh = match self.cfg.sketch_position {
            SketchPosition::PreHead => {
                let g_sk = head_backward(params, &b.head, grad, grads)?;
                ops[b.op].apply_transpose(&g_sk)?
            }
            SketchPosition::PostHead => {
                let gz = ops[b.op].apply_transpose(grad)?;
                head_backward(params, &b.head, &gz, grads)?
            }
        };
        if let Some(m) = &b.h_mask {
            gh = gh.hadamard(m);
        }
        Ok(gh)
    }

    /// Loss and gradients for one step. `s` must be the normalized
    /// adjacency of `g`.
    pub fn step(&mut self, params: &ParamSet, g: &Graph, s: &NormalizedAdjacency, rng: &mut SeededRng) -> Result<StepOutput> {
        if s.n() != g.n() {
            return invalid("adjacency does not match graph");
        }
        let noise = self.noise_variance();
        let mut grads = ParamSet::zeros_like(params);
        match self.cfg.mode {
            ContrastMode::MultiView => {
                let aug = self.cfg.graph_aug.is_some();
                let v1 = self.encode(params, 0, g, s, self.dropout, aug, rng)?;
                let v2 = self.encode(params, 1, g, s, self.dropout, aug, rng)?;
                let basis = self.sketch_basis(params, &v1.h)?;
                let ops = self.operators(&basis, 1, rng)?;
                let b1 = self.branch(params, &v1.h, None, &ops, 0, noise, rng)?;
                let b2 = self.branch(params, &v2.h, None, &ops, 0, noise, rng)?;
                let (loss, gu, gv) = contrastive_loss_grad(&b1.out, &b2.out, &self.cfg)?;
                let gh1 = self.branch_backward(params, &b1, &ops, &gu, &mut grads)?;
                let gh2 = self.branch_backward(params, &b2, &ops, &gv, &mut grads)?;
                encoder_backward(params, &v1.tape, &gh1, &mut grads)?;
                encoder_backward(params, &v2.tape, &gh2, &mut grads)?;
                Ok(StepOutput { loss, grads, rows: b1.out.rows() })
            }
            ContrastMode::SingleView => {
                let aug = self.cfg.graph_aug.is_some() && self.cfg.sv_graph_aug;
                let branch_dropout = self.cfg.sv_branch == SvBranch::Dropout && self.dropout > 0.0;
                let enc_dropout = if branch_dropout { 0.0 } else { self.dropout };
                let v = self.encode(params, 0, g, s, enc_dropout, aug, rng)?;
                let basis = self.sketch_basis(params, &v.h)?;
                let independent = self.cfg.sv_branch == SvBranch::IndependentSketch;
                let ops = self.operators(&basis, if independent { 2 } else { 1 }, rng)?;
                let (m1, m2) = if branch_dropout {
                    let (r, c) = v.h.shape();
                    (
                        Some(crate::encoder::dropout_mask(r, c, self.dropout, rng)),
                        Some(crate::encoder::dropout_mask(r, c, self.dropout, rng)),
                    )
                } else {
                    (None, None)
                };
                let b1 = self.branch(params, &v.h, m1, &ops, 0, noise, rng)?;
                let b2 = self.branch(params, &v.h, m2, &ops, usize::from(independent), noise, rng)?;
                let (loss, gu, gv) = contrastive_loss_grad(&b1.out, &b2.out, &self.cfg)?;
                let mut gh = self.branch_backward(params, &b1, &ops, &gu, &mut grads)?;
                gh.add_assign(&self.branch_backward(params, &b2, &ops, &gv, &mut grads)?);
                encoder_backward(params, &v.tape, &gh, &mut grads)?;
                Ok(StepOutput { loss, grads, rows: b1.out.rows() })
            }
        }
    }

    /// Matrix the data-dependent sketches are computed from: view-one `H`
    /// pre-head, or its head output post-head. Treated as a constant.
    fn sketch_basis(&self, params: &ParamSet, h: &DenseMatrix) -> Result<DenseMatrix> {
        let data_dependent = matches!(self.cfg.sketch.method, SketchMethod::SvdSketch | SketchMethod::RowSelection);
        match self.cfg.sketch_position {
            SketchPosition::PostHead if data_dependent => Ok(projection_head(params, h)?.0),
            _ => Ok(h.clone()),
        }
    }
}

/// One-off step with a freshly drawn projection.
pub fn costa_step(params: &ParamSet, g: &Graph, s: &NormalizedAdjacency, cfg: &LossConfig, dropout: f64, rng: &mut SeededRng) -> Result<(f64, ParamSet)> {
    let mut obj = CostaObjective::new(cfg.clone(), dropout)?;
    obj.fixed = None;
    obj.cfg.resample_projection_every_step = true;
    let out = obj.step(params, g, s, rng)?;
    Ok((out.loss, out.grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{forward, ModelParams};
    use crate::graph::normalize_adjacency;
    use crate::linalg::gaussian_draw;
    use proptest::prelude::*;

    fn base(tau: f64) -> LossConfig {
        LossConfig {
            tau,
            ..LossConfig::default()
        }
    }

    /// Straight double loop over the definition.
    fn brute_force(u: &DenseMatrix, v: &DenseMatrix, cfg: &LossConfig) -> f64 {
        let k = u.rows();
        let unit = |m: &DenseMatrix, i: usize| -> Vec<f64> {
            let r = m.row(i);
            if !cfg.normalize {
                return r.to_vec();
            }
            let n = r.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            r.iter().map(|x| x / n).collect()
        };
        let sim = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / cfg.tau;
        let mut total = 0.0;
        for i in 0..k {
            let ui = unit(u, i);
            let mut denom = 0.0;
            for j in 0..k {
                denom += sim(&ui, &unit(v, j)).exp();
                if j != i || cfg.include_intra_self {
                    denom += sim(&ui, &unit(u, j)).exp();
                }
            }
            total += -(sim(&ui, &unit(v, i)) - denom.ln());
        }
        total / k as f64
    }

    #[test]
    fn lone_positive_is_zero() {
        let u = DenseMatrix::from_rows(&[vec![0.6, 0.8]]).unwrap();
        assert!(contrastive_loss(&u, &u, &base(1.0)).unwrap().abs() < 1e-15);
    }

    #[test]
    fn orthonormal_pair_value() {
        let u = DenseMatrix::identity(2);
        let expected = (std::f64::consts::E + 2.0).ln() - 1.0;
        let got = contrastive_loss(&u, &u, &base(1.0)).unwrap();
        assert!((got - expected).abs() < 1e-14);
        assert!((got - 0.5514).abs() < 1e-4);
    }

    #[test]
    fn matches_brute_force_random() {
        let mut rng = SeededRng::new(11);
        for &(normalize, self_term) in &[(true, false), (false, false), (true, true)] {
            let cfg = LossConfig {
                normalize,
                include_intra_self: self_term,
                ..base(0.7)
            };
            let u = gaussian_draw(&mut rng, 6, 4).unwrap();
            let v = gaussian_draw(&mut rng, 6, 4).unwrap();
            let got = contrastive_loss(&u, &v, &cfg).unwrap();
            assert!((got - brute_force(&u, &v, &cfg)).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let cfg = base(0.5);
        assert!(contrastive_loss(&DenseMatrix::zeros(0, 3), &DenseMatrix::zeros(0, 3), &cfg).is_err());
        assert!(contrastive_loss(&DenseMatrix::zeros(2, 3), &DenseMatrix::zeros(3, 3), &cfg).is_err());
        let mut bad = DenseMatrix::identity(2);
        bad.data_mut()[0] = f64::NAN;
        assert!(contrastive_loss(&bad, &DenseMatrix::identity(2), &cfg).is_err());
    }

    #[test]
    fn stable_at_small_tau() {
        let mut rng = SeededRng::new(3);
        let u = gaussian_draw(&mut rng, 8, 3).unwrap();
        let l = contrastive_loss(&u, &u, &base(1e-3)).unwrap();
        assert!(l.is_finite());
    }

    fn fd_grad(u: &DenseMatrix, v: &DenseMatrix, cfg: &LossConfig) -> (DenseMatrix, DenseMatrix) {
        let h = 1e-6;
        let one = |m: &DenseMatrix, other: &DenseMatrix, first: bool| {
            let mut g = DenseMatrix::zeros(m.rows(), m.cols());
            let mut p = m.clone();
            for idx in 0..m.data().len() {
                let o = p.data()[idx];
                p.data_mut()[idx] = o + h;
                let up = if first { contrastive_loss(&p, other, cfg) } else { contrastive_loss(other, &p, cfg) }.unwrap();
                p.data_mut()[idx] = o - h;
                let dn = if first { contrastive_loss(&p, other, cfg) } else { contrastive_loss(other, &p, cfg) }.unwrap();
                p.data_mut()[idx] = o;
                g.data_mut()[idx] = (up - dn) / (2.0 * h);
            }
            g
        };
        (one(u, v, true), one(v, u, false))
    }

    fn rel_err(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-3))
            .fold(0.0, f64::max)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = SeededRng::new(12);
        for &(normalize, self_term) in &[(true, false), (false, false), (true, true), (false, true)] {
            let cfg = LossConfig {
                normalize,
                include_intra_self: self_term,
                ..base(0.8)
            };
            let u = gaussian_draw(&mut rng, 4, 3).unwrap();
            let v = gaussian_draw(&mut rng, 4, 3).unwrap();
            let (_, du, dv) = contrastive_loss_grad(&u, &v, &cfg).unwrap();
            let (fu, fv) = fd_grad(&u, &v, &cfg);
            assert!(rel_err(&du, &fu) < 1e-5, "{normalize} {self_term}");
            assert!(rel_err(&dv, &fv) < 1e-5, "{normalize} {self_term}");
        }
    }

    #[test]
    fn gradient_is_tangent_under_normalization() {
        // Scaling a row does not change the loss, so the gradient has no
        // component along the row itself.
        let mut rng = SeededRng::new(13);
        let u = gaussian_draw(&mut rng, 4, 3).unwrap();
        let (_, du, dv) = contrastive_loss_grad(&u, &u, &base(0.5)).unwrap();
        for i in 0..4 {
            let along: f64 = du.row(i).iter().zip(u.row(i)).map(|(a, b)| a * b).sum();
            let along_v: f64 = dv.row(i).iter().zip(u.row(i)).map(|(a, b)| a * b).sum();
            assert!(along.abs() < 1e-12 && along_v.abs() < 1e-12);
        }
        let (fu, _) = fd_grad(&u, &u, &base(0.5));
        assert!(rel_err(&du, &fu) < 1e-5);
    }

    #[test]
    fn tau_chain_factor() {
        // Raw dot products: every logit is a product of two rows over τ, so
        // L(U, V; 2τ) = L(U/√2, V/√2; τ) and the gradients differ by 1/√2.
        let mut rng = SeededRng::new(14);
        let u = gaussian_draw(&mut rng, 5, 3).unwrap();
        let v = gaussian_draw(&mut rng, 5, 3).unwrap();
        let cfg = |t| LossConfig {
            normalize: false,
            ..base(t)
        };
        let c = std::f64::consts::FRAC_1_SQRT_2;
        let (l2, du2, dv2) = contrastive_loss_grad(&u, &v, &cfg(1.0)).unwrap();
        let (l1, du1, dv1) = contrastive_loss_grad(&u.scale(c), &v.scale(c), &cfg(0.5)).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        assert!(du2.max_abs_diff(&du1.scale(c)) < 1e-12);
        assert!(dv2.max_abs_diff(&dv1.scale(c)) < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn prop_brute_force(k in 1usize..=32, d in 1usize..6, tau in 0.05f64..2.0, seed in any::<u64>()) {
            let mut rng = SeededRng::new(seed);
            let u = gaussian_draw(&mut rng, k, d).unwrap();
            let v = gaussian_draw(&mut rng, k, d).unwrap();
            let cfg = base(tau);
            let got = contrastive_loss(&u, &v, &cfg).unwrap();
            prop_assert!((got - brute_force(&u, &v, &cfg)).abs() < 1e-10);
        }

        #[test]
        fn prop_permutation_invariance(k in 2usize..12, seed in any::<u64>()) {
            let mut rng = SeededRng::new(seed);
            let u = gaussian_draw(&mut rng, k, 3).unwrap();
            let v = gaussian_draw(&mut rng, k, 3).unwrap();
            let perm: Vec<usize> = (0..k).rev().collect();
            let cfg = base(0.5);
            let a = contrastive_loss(&u, &v, &cfg).unwrap();
            let b = contrastive_loss(&u.select_rows(&perm), &v.select_rows(&perm), &cfg).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn prop_row_scale_invariance(k in 1usize..10, seed in any::<u64>(), scale in 0.01f64..100.0) {
            let mut rng = SeededRng::new(seed);
            let u = gaussian_draw(&mut rng, k, 3).unwrap();
            let v = gaussian_draw(&mut rng, k, 3).unwrap();
            let mut us = u.clone();
            us.row_mut(0).iter_mut().for_each(|x| *x *= scale);
            let cfg = base(0.5);
            let a = contrastive_loss(&u, &v, &cfg).unwrap();
            let b = contrastive_loss(&us, &v.scale(scale), &cfg).unwrap();
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    fn small_graph(n: usize, d: usize, seed: u64) -> Graph {
        let mut rng = SeededRng::new(seed);
        let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (i - 1, i)).collect();
        for _ in 0..n {
            edges.push((rng.index(n), rng.index(n)));
        }
        Graph::new(gaussian_draw(&mut rng, n, d).unwrap(), edges, None).unwrap()
    }

    #[test]
    fn identity_sketch_reduces_to_plain_loss() {
        let g = small_graph(6, 3, 1);
        let s = normalize_adjacency(&g);
        let params = ModelParams::init(3, 4, 1, &mut SeededRng::new(2)).unwrap().weights;
        let cfg = LossConfig {
            mode: ContrastMode::MultiView,
            sketch: SketchConfig::new(SketchMethod::Identity, 6),
            ratio: None,
            ..LossConfig::default()
        };
        let (loss, _) = costa_step(&params, &g, &s, &cfg, 0.0, &mut SeededRng::new(3)).unwrap();
        let (z, _) = forward(&params, &s, g.features(), Mode::Eval).unwrap();
        assert!((loss - contrastive_loss(&z, &z, &cfg).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn fixed_projection_is_deterministic_without_updates() {
        let g = small_graph(8, 3, 4);
        let s = normalize_adjacency(&g);
        let params = ModelParams::init(3, 4, 1, &mut SeededRng::new(5)).unwrap().weights;
        let cfg = LossConfig {
            resample_projection_every_step: false,
            sv_branch: SvBranch::None,
            ..LossConfig::default()
        };
        let mut obj = CostaObjective::new(cfg, 0.0).unwrap();
        let mut rng = SeededRng::new(6);
        let a = obj.step(&params, &g, &s, &mut rng).unwrap();
        let b = obj.step(&params, &g, &s, &mut rng).unwrap();
        assert_eq!(a.loss, b.loss);
        assert_eq!(a.rows, 4);
    }

    #[test]
    fn row_bound_sketch_rejects_large_k() {
        let g = small_graph(5, 3, 4);
        let s = normalize_adjacency(&g);
        let params = ModelParams::init(3, 4, 1, &mut SeededRng::new(5)).unwrap().weights;
        let cfg = LossConfig {
            sketch: SketchConfig::new(SketchMethod::RowSelection, 1),
            ratio: Some(1.5),
            ..LossConfig::default()
        };
        assert!(costa_step(&params, &g, &s, &cfg, 0.0, &mut SeededRng::new(1)).is_err());
    }

    fn pipeline_fd_check(cfg: LossConfig, dropout: f64, seed: u64) {
        let n = 8;
        let g = small_graph(n, 3, seed);
        let s = normalize_adjacency(&g);
        let params = ModelParams::init(3, 4, 1, &mut SeededRng::new(seed + 1)).unwrap().weights;
        let mut obj = CostaObjective::new(cfg, dropout).unwrap();
        let step_seed = seed + 2;
        let out = obj.step(&params, &g, &s, &mut SeededRng::new(step_seed)).unwrap();
        // Freeze P (and all other randomness) by replaying the same stream.
        let eval = |p: &ParamSet, obj: &mut CostaObjective| obj.step(p, &g, &s, &mut SeededRng::new(step_seed)).unwrap().loss;
        let h = 1e-6;
        let mut p = params.clone();
        let mut worst: f64 = 0.0;
        for mi in 0..out.grads.matrices().len() {
            for idx in 0..out.grads.matrices()[mi].data().len() {
                let o = p.matrices()[mi].data()[idx];
                p.matrices_mut()[mi].data_mut()[idx] = o + h;
                let up = eval(&p, &mut obj);
                p.matrices_mut()[mi].data_mut()[idx] = o - h;
                let dn = eval(&p, &mut obj);
                p.matrices_mut()[mi].data_mut()[idx] = o;
                let fd = (up - dn) / (2.0 * h);
                let an = out.grads.matrices()[mi].data()[idx];
                let err = (fd - an).abs();
                if err > 1e-7 {
                    worst = worst.max(err / fd.abs().max(an.abs()));
                }
            }
        }
        assert!(worst <= 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn pipeline_gradient_post_head_gaussian() {
        let cfg = LossConfig {
            sketch_position: SketchPosition::PostHead,
            sv_branch: SvBranch::Noise,
            sketch: SketchConfig { eps: 0.01, ..SketchConfig::new(SketchMethod::GaussianRp, 4) },
            ratio: Some(0.5),
            ..LossConfig::default()
        };
        pipeline_fd_check(cfg, 0.0, 20);
    }

    #[test]
    fn pipeline_gradient_pre_head_dropout() {
        let cfg = LossConfig {
            sv_branch: SvBranch::Dropout,
            ..LossConfig::default()
        };
        pipeline_fd_check(cfg, 0.2, 30);
    }

    #[test]
    fn pipeline_gradient_multi_view_sparse() {
        let cfg = LossConfig {
            mode: ContrastMode::MultiView,
            sketch: SketchConfig { s: 3.0, ..SketchConfig::new(SketchMethod::SparseRp, 4) },
            graph_aug: Some(AugmentConfig::default()),
            ..LossConfig::default()
        };
        pipeline_fd_check(cfg, 0.2, 40);
    }

    #[test]
    fn shared_projection_one_hot_selector() {
        // With P selecting node 2 into row 0 and node 5 into row 1, the
        // sketched rows of both branches must be the rows of those nodes.
        let g = small_graph(8, 3, 7);
        let s = normalize_adjacency(&g);
        let params = ModelParams::init(3, 4, 1, &mut SeededRng::new(8)).unwrap().weights;
        let op = SketchOperator::Selection { n: 8, picks: vec![(2, 1.0), (5, 1.0)] };
        let cfg = LossConfig {
            sketch_position: SketchPosition::PostHead,
            sv_branch: SvBranch::None,
            mode: ContrastMode::MultiView,
            ..LossConfig::default()
        };
        let mut obj = CostaObjective::new(cfg.clone(), 0.0).unwrap().with_fixed_projection(vec![op]);
        let out = obj.step(&params, &g, &s, &mut SeededRng::new(1)).unwrap();
        let (z, _) = forward(&params, &s, g.features(), Mode::Eval).unwrap();
        let picked = z.select_rows(&[2, 5]);
        assert_eq!(out.rows, 2);
        assert!((out.loss - contrastive_loss(&picked, &picked, &cfg).unwrap()).abs() < 1e-12);
        // gradients only flow through the selected nodes' head rows
        assert!(out.grads.is_finite());
    }
}
