//! Augmentation bias: the distance between the Monte-Carlo mean of
//! augmented embeddings and the clean embedding, per node.

use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{embed, mlp_embed, ParamSet};
use crate::error::{invalid, Error, Result};
use crate::graph::{augment_attribute_mask, augment_edge_perturbation, normalize_adjacency, AugmentConfig, Graph};
use crate::linalg::DenseMatrix;
use crate::rng::SeededRng;
use crate::sketch::{add_gaussian_noise, SketchOperator};

/// Samples evaluated together before being summed in index order.
const CHUNK: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasVariant {
    /// GCN with edge perturbation.
    GnnE,
    /// GCN with attribute masking.
    GnnA,
    /// GCN with both.
    GnnEa,
    /// Graph-blind MLP with attribute masking.
    NnA,
    /// Gaussian noise on the hidden features.
    FaNoise,
    /// Gaussian projection of the hidden features, mapped back by `Pᵀ`.
    FaSketch,
    Identity,
}

impl BiasVariant {
    pub const ALL: [Self; 7] = [
        Self::GnnE,
        Self::GnnA,
        Self::GnnEa,
        Self::NnA,
        Self::FaNoise,
        Self::FaSketch,
        Self::Identity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::GnnE => "gnn_e",
            Self::GnnA => "gnn_a",
            Self::GnnEa => "gnn_ea",
            Self::NnA => "nn_a",
            Self::FaNoise => "fa_noise",
            Self::FaSketch => "fa_sketch",
            Self::Identity => "identity",
        }
    }
}

impl fmt::Display for BiasVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BiasVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown bias variant `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BiasConfig {
    /// Augmented samples per node.
    pub samples: usize,
    pub augment: AugmentConfig,
    /// Variance of the hidden-feature noise.
    pub noise_eps: f64,
    /// Sketch rows as a fraction of `n` for `fa_sketch`.
    pub sketch_ratio: f64,
    /// Use the ℓ1 distance instead of ℓ2.
    pub l1: bool,
    pub threads: usize,
}

impl Default for BiasConfig {
    fn default() -> Self {
        Self {
            samples: 500,
            augment: AugmentConfig::default(),
            noise_eps: 0.01,
            sketch_ratio: 0.5,
            l1: false,
            threads: 1,
        }
    }
}

impl BiasConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return invalid("bias audit needs at least one sample");
        }
        self.augment.validate()?;
        if !(self.noise_eps >= 0.0) || !self.noise_eps.is_finite() {
            return invalid("noise_eps must be a finite non-negative variance");
        }
        if !(self.sketch_ratio > 0.0) || !self.sketch_ratio.is_finite() {
            return invalid("sketch_ratio must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiasReport {
    pub variant: BiasVariant,
    pub samples: usize,
    pub bias: Vec<f64>,
    pub degrees: Vec<usize>,
}

/// Bias statistics over the nodes sharing one degree.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DegreeBin {
    pub degree: usize,
    pub count: usize,
    pub mean: f64,
    pub median: f64,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

impl BiasReport {
    pub fn median(&self) -> f64 {
        median(&self.bias)
    }

    pub fn mean(&self) -> f64 {
        mean(&self.bias)
    }

    /// Mean bias over nodes whose degree satisfies `keep`; `None` if no
    /// node qualifies.
    pub fn cohort_mean(&self, keep: impl Fn(usize) -> bool) -> Option<f64> {
        let v: Vec<f64> = self
            .bias
            .iter()
            .zip(&self.degrees)
            .filter(|(_, &d)| keep(d))
            .map(|(&b, _)| b)
            .collect();
        (!v.is_empty()).then(|| mean(&v))
    }

    pub fn by_degree(&self) -> Vec<DegreeBin> {
        let mut groups: std::collections::BTreeMap<usize, Vec<f64>> = Default::default();
        for (&b, &d) in self.bias.iter().zip(&self.degrees) {
            groups.entry(d).or_default().push(b);
        }
        groups
            .into_iter()
            .map(|(degree, v)| DegreeBin {
                degree,
                count: v.len(),
                mean: mean(&v),
                median: median(&v),
            })
            .collect()
    }
}

fn distance(a: &[f64], b: &[f64], l1: bool) -> f64 {
    let it = a.iter().zip(b).map(|(x, y)| x - y);
    if l1 {
        it.map(f64::abs).sum()
    } else {
        it.map(|d| d * d).sum::<f64>().sqrt()
    }
}

/// Per-node bias of `samples` draws from `sample` against `reference`.
///
/// Draw `t` uses substream `t` of `seed`; draws are summed in index order,
/// so the result does not depend on `threads`.
pub fn bias_all_nodes<F>(reference: &DenseMatrix, sample: F, samples: usize, seed: u64, threads: usize, l1: bool) -> Result<Vec<f64>>
where
    F: Fn(&mut SeededRng) -> Result<DenseMatrix> + Sync,
{
    if samples == 0 {
        return invalid("bias needs at least one sample");
    }
    let draw = |t: usize| -> Result<DenseMatrix> {
        let m = sample(&mut SeededRng::substream(seed, t as u64))?;
        if m.shape() != reference.shape() {
            return invalid(format!("augmented embedding shape {:?} differs from {:?}", m.shape(), reference.shape()));
        }
        Ok(m)
    };
    let mut sum = DenseMatrix::zeros(reference.rows(), reference.cols());
    let pool = if threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?,
        )
    } else {
        None
    };
    let mut start = 0;
    while start < samples {
        let end = (start + CHUNK).min(samples);
        let batch: Vec<DenseMatrix> = match &pool {
            Some(p) => p.install(|| (start..end).into_par_iter().map(draw).collect::<Result<_>>())?,
            None => (start..end).map(draw).collect::<Result<_>>()?,
        };
        // deviations rather than raw draws, so exact samples give exact zeros
        for m in &batch {
            sum.add_assign(&m.sub(reference));
        }
        start = end;
    }
    sum.scale_mut(1.0 / samples as f64);
    let zero = vec![0.0; reference.cols()];
    Ok((0..reference.rows()).map(|i| distance(sum.row(i), &zero, l1)).collect())
}

/// Bias of a single node.
pub fn estimate_bias<F>(reference: &DenseMatrix, sample: F, node: usize, samples: usize, rng: &mut SeededRng) -> Result<f64>
where
    F: Fn(&mut SeededRng) -> Result<DenseMatrix> + Sync,
{
    if node >= reference.rows() {
        return invalid(format!("node {node} out of range for {} nodes", reference.rows()));
    }
    Ok(bias_all_nodes(reference, sample, samples, rng.next_u64(), 1, false)?[node])
}

/// Clean embedding and augmented sampler for `variant` under frozen
/// `params`.
#[allow(clippy::type_complexity)]
pub fn variant_sampler<'a>(
    variant: BiasVariant,
    g: &'a Graph,
    params: &'a ParamSet,
    cfg: &'a BiasConfig,
) -> Result<(DenseMatrix, Box<dyn Fn(&mut SeededRng) -> Result<DenseMatrix> + Sync + 'a>)> {
    let s = normalize_adjacency(g);
    let gnn_ref = || embed(params, &s, g.features());
    let a = cfg.augment;
    Ok(match variant {
        BiasVariant::GnnE => (
            gnn_ref()?,
            Box::new(move |rng| {
                let aug = augment_edge_perturbation(g, a.p_edge_drop, rng)?;
                embed(params, &normalize_adjacency(&aug), aug.features())
            }),
        ),
        BiasVariant::GnnA => {
            let s2 = s.clone();
            (
                gnn_ref()?,
                Box::new(move |rng| {
                    let aug = augment_attribute_mask(g, a.p_attr_mask, rng)?;
                    embed(params, &s2, aug.features())
                }),
            )
        }
        BiasVariant::GnnEa => (
            gnn_ref()?,
            Box::new(move |rng| {
                let aug = crate::graph::augment(g, &a, rng)?;
                embed(params, &normalize_adjacency(&aug), aug.features())
            }),
        ),
        BiasVariant::NnA => (
            mlp_embed(params, g.features())?,
            Box::new(move |rng| mlp_embed(params, augment_attribute_mask(g, a.p_attr_mask, rng)?.features())),
        ),
        BiasVariant::FaNoise => {
            let h = gnn_ref()?;
            let base = h.clone();
            let eps = cfg.noise_eps;
            (
                h,
                Box::new(move |rng| {
                    let mut m = base.clone();
                    add_gaussian_noise(&mut m, eps, rng);
                    Ok(m)
                }),
            )
        }
        BiasVariant::FaSketch => {
            let h = gnn_ref()?;
            let base = h.clone();
            let k = ((cfg.sketch_ratio * g.n() as f64).round() as usize).max(1);
            (
                h,
                Box::new(move |rng| {
                    let p = SketchOperator::gaussian(k, base.rows(), rng);
                    p.apply_transpose(&p.apply(&base)?)
                }),
            )
        }
        BiasVariant::Identity => {
            let h = gnn_ref()?;
            let base = h.clone();
            (h, Box::new(move |_| Ok(base.clone())))
        }
    })
}

/// One report per variant, all sharing the frozen `params`.
pub fn bias_audit(g: &Graph, params: &ParamSet, variants: &[BiasVariant], cfg: &BiasConfig, rng: &mut SeededRng) -> Result<Vec<BiasReport>> {
    cfg.validate()?;
    let degrees = g.degrees();
    variants
        .iter()
        .map(|&variant| {
            let seed = rng.next_u64();
            let (reference, sample) = variant_sampler(variant, g, params, cfg)?;
            let bias = bias_all_nodes(&reference, sample, cfg.samples, seed, cfg.threads, cfg.l1)?;
            Ok(BiasReport {
                variant,
                samples: cfg.samples,
                bias,
                degrees: degrees.clone(),
            })
        })
        .collect()
}

/// Parses a comma-separated variant list.
pub fn parse_variants(s: &str) -> Result<Vec<BiasVariant>> {
    s.split(',').map(|v| v.trim().parse()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::ModelParams;
    use crate::graph::{gen_power_law_graph, PowerLawSpec};
    use crate::linalg::{gaussian_draw, svd};

    fn frozen(d: usize, h: usize) -> ParamSet {
        ModelParams::init(d, h, 1, &mut SeededRng::new(2024)).unwrap().weights
    }

    fn star(leaves: usize, d: usize) -> Graph {
        let x = gaussian_draw(&mut SeededRng::new(1), leaves + 1, d).unwrap().map(f64::abs);
        Graph::new(x, (1..=leaves).map(|i| (0, i)), None).unwrap()
    }

    #[test]
    fn identity_has_zero_bias() {
        let g = star(5, 4);
        let p = frozen(4, 8);
        let r = bias_audit(&g, &p, &[BiasVariant::Identity], &BiasConfig { samples: 3, ..Default::default() }, &mut SeededRng::new(0)).unwrap();
        assert!(r[0].bias.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn noise_bias_within_standard_error_envelope() {
        let g = star(5, 4);
        let p = frozen(4, 8);
        let cfg = BiasConfig { samples: 500, noise_eps: 0.01, ..Default::default() };
        let r = bias_audit(&g, &p, &[BiasVariant::FaNoise], &cfg, &mut SeededRng::new(3)).unwrap();
        let envelope = 3.0 * (8.0 * 0.01 / 500.0f64).sqrt();
        assert!(r[0].bias.iter().all(|&b| b <= envelope), "{:?} > {envelope}", r[0].bias);
    }

    #[test]
    fn edge_drop_on_leaf_exceeds_noise_bias() {
        let g = star(6, 4);
        let p = frozen(4, 8);
        let cfg = BiasConfig { samples: 500, ..Default::default() };
        let r = bias_audit(&g, &p, &[BiasVariant::GnnE, BiasVariant::FaNoise], &cfg, &mut SeededRng::new(4)).unwrap();
        let leaf = 3;
        assert_eq!(g.degrees()[leaf], 1);
        assert!(r[0].bias[leaf] > 0.0);
        assert!(r[0].bias[leaf] > r[1].bias[leaf]);
    }

    #[test]
    fn single_sample_is_well_formed() {
        let g = star(4, 3);
        let p = frozen(3, 4);
        let cfg = BiasConfig { samples: 1, ..Default::default() };
        let r = bias_audit(&g, &p, &BiasVariant::ALL, &cfg, &mut SeededRng::new(5)).unwrap();
        assert_eq!(r.len(), 7);
        for rep in &r {
            assert_eq!(rep.bias.len(), 5);
            assert!(rep.bias.iter().all(|b| b.is_finite() && *b >= 0.0));
        }
    }

    #[test]
    fn mlp_variant_ignores_topology() {
        let g = star(5, 4);
        let bare = g.with_edges(Vec::new());
        let p = frozen(4, 8);
        let cfg = BiasConfig { samples: 20, ..Default::default() };
        let a = bias_audit(&g, &p, &[BiasVariant::NnA], &cfg, &mut SeededRng::new(6)).unwrap();
        let b = bias_audit(&bare, &p, &[BiasVariant::NnA], &cfg, &mut SeededRng::new(6)).unwrap();
        assert_eq!(a[0].bias, b[0].bias);
    }

    #[test]
    fn unknown_variant_rejected() {
        assert!(parse_variants("gnn_e,bogus").is_err());
        assert_eq!(parse_variants("gnn_ea, fa_noise").unwrap(), vec![BiasVariant::GnnEa, BiasVariant::FaNoise]);
    }

    #[test]
    fn thread_count_does_not_change_result() {
        let g = star(6, 4);
        let p = frozen(4, 8);
        let one = BiasConfig { samples: 40, ..Default::default() };
        let four = BiasConfig { threads: 4, ..one.clone() };
        let a = bias_audit(&g, &p, &[BiasVariant::GnnEa], &one, &mut SeededRng::new(7)).unwrap();
        let b = bias_audit(&g, &p, &[BiasVariant::GnnEa], &four, &mut SeededRng::new(7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rotation_invariance() {
        let mut rng = SeededRng::new(8);
        let reference = gaussian_draw(&mut rng, 6, 4).unwrap();
        let q = svd(&gaussian_draw(&mut rng, 4, 4).unwrap()).unwrap().u;
        let sampler = |r: &mut SeededRng| {
            let mut m = reference.clone();
            add_gaussian_noise(&mut m, 0.3, r);
            Ok(m)
        };
        let plain = bias_all_nodes(&reference, sampler, 50, 9, 1, false).unwrap();
        let rotated_ref = reference.matmul(&q);
        let rotated = bias_all_nodes(&rotated_ref, |r: &mut SeededRng| Ok(sampler(r)?.matmul(&q)), 50, 9, 1, false).unwrap();
        for (a, b) in plain.iter().zip(&rotated) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn noise_bias_shrinks_with_more_samples() {
        let reference = gaussian_draw(&mut SeededRng::new(10), 4, 6).unwrap();
        let sampler = |r: &mut SeededRng| {
            let mut m = reference.clone();
            add_gaussian_noise(&mut m, 0.01, r);
            Ok(m)
        };
        let reps = 40;
        let mut wins = vec![0; 4];
        for rep in 0..reps {
            let small = bias_all_nodes(&reference, sampler, 100, 2 * rep, 1, false).unwrap();
            let large = bias_all_nodes(&reference, sampler, 10_000, 2 * rep + 1, 1, false).unwrap();
            for i in 0..4 {
                wins[i] += usize::from(large[i] < small[i]);
            }
        }
        for w in wins {
            assert!(w as f64 >= 0.95 * reps as f64, "{w}/{reps}");
        }
    }

    #[test]
    fn fa_sketch_back_projection_is_unbiased() {
        let g = star(9, 3);
        let p = frozen(3, 4);
        let cfg = BiasConfig { samples: 2000, sketch_ratio: 0.5, ..Default::default() };
        let r = bias_audit(&g, &p, &[BiasVariant::FaSketch, BiasVariant::GnnE], &cfg, &mut SeededRng::new(11)).unwrap();
        assert!(r[0].median() < r[1].median());
    }

    #[test]
    fn low_degree_nodes_carry_more_edge_bias() {
        let spec = PowerLawSpec { n: 400, d: 16, ..Default::default() };
        let g = gen_power_law_graph(&spec, &mut SeededRng::new(12)).unwrap();
        let p = frozen(16, 32);
        let cfg = BiasConfig { samples: 100, ..Default::default() };
        let r = bias_audit(&g, &p, &[BiasVariant::GnnE], &cfg, &mut SeededRng::new(13)).unwrap();
        let low = r[0].cohort_mean(|d| d <= 3).unwrap();
        let high = r[0].cohort_mean(|d| d >= 10).unwrap();
        assert!(low > high, "{low} vs {high}");
        let bins = r[0].by_degree();
        assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), 400);
    }

    #[test]
    fn median_cases() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }
}
