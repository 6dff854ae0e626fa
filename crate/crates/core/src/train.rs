//! Training loop, run-mode presets and multi-seed probe evaluation.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::contrast::{ContrastMode, CostaObjective, LossConfig, SvBranch};
use crate::encoder::{adam_step, embed, AdamConfig, ModelParams};
use crate::error::{invalid, Error, Result};
use crate::graph::{normalize_adjacency, AugmentConfig, Graph};
use crate::probe::{evaluate, LambdaResult, ProbeConfig, SplitSpec};
use crate::rng::SeededRng;
use crate::sketch::SketchMethod;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    CostaSv,
    CostaMv,
    GraceLike,
    NoAug,
}

impl RunMode {
    pub const ALL: [Self; 4] = [Self::CostaSv, Self::CostaMv, Self::GraceLike, Self::NoAug];

    pub fn name(self) -> &'static str {
        match self {
            Self::CostaSv => "costa-sv",
            Self::CostaMv => "costa-mv",
            Self::GraceLike => "grace-like",
            Self::NoAug => "no-aug",
        }
    }

    /// Rewrites the fields of `cfg` that define this mode; everything else
    /// (τ, sketch method, ratio, rates) is left as configured.
    pub fn apply(self, cfg: &mut TrainConfig) {
        let loss = &mut cfg.loss;
        match self {
            Self::CostaSv => {
                loss.mode = ContrastMode::SingleView;
                if loss.sketch.method == SketchMethod::Identity {
                    loss.sketch.method = SketchMethod::GaussianRp;
                }
            }
            Self::CostaMv => {
                loss.mode = ContrastMode::MultiView;
                loss.graph_aug.get_or_insert_with(AugmentConfig::default);
                if loss.sketch.method == SketchMethod::Identity {
                    loss.sketch.method = SketchMethod::GaussianRp;
                }
            }
            Self::GraceLike => {
                loss.mode = ContrastMode::MultiView;
                loss.graph_aug.get_or_insert_with(AugmentConfig::default);
                loss.sketch.method = SketchMethod::Identity;
                loss.ratio = None;
            }
            Self::NoAug => {
                loss.mode = ContrastMode::SingleView;
                loss.graph_aug = None;
                loss.sketch.method = SketchMethod::Identity;
                loss.sketch.noise_with_projection = false;
                loss.ratio = None;
                loss.sv_branch = SvBranch::None;
                cfg.dropout = 0.0;
            }
        }
    }
}

impl fmt::Display for RunMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RunMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown mode `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub hidden: usize,
    pub dropout: f64,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub loss: LossConfig,
    /// Separate encoder weights per view in multi-view mode.
    pub per_view_weights: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            dropout: 0.2,
            epochs: 1000,
            adam: AdamConfig::default(),
            loss: LossConfig::default(),
            per_view_weights: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return invalid("hidden width must be positive");
        }
        if self.epochs == 0 {
            return invalid("epochs must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return invalid(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if !(self.adam.lr > 0.0) {
            return invalid("learning rate must be positive");
        }
        self.loss.validate()
    }

    fn encoder_count(&self) -> usize {
        if self.per_view_weights && self.loss.mode == ContrastMode::MultiView {
            2
        } else {
            1
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub losses: Vec<f64>,
    pub epoch_secs: Vec<f64>,
    /// Sketch rows contrasted per step.
    pub rows: usize,
    /// Set when training stopped on a non-finite loss or gradient; `params`
    /// then holds the last finite state.
    pub diverged: Option<String>,
}

impl TrainOutcome {
    pub fn mean_epoch_secs(&self) -> f64 {
        self.epoch_secs.iter().sum::<f64>() / self.epoch_secs.len().max(1) as f64
    }
}

/// Initializes weights from substream 0 of `seed` and trains with
/// substream 1.
pub fn train(g: &Graph, cfg: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut init_rng = SeededRng::substream(seed, 0);
    let params = ModelParams::init(g.feature_dim(), cfg.hidden, cfg.encoder_count(), &mut init_rng)?;
    train_from(g, cfg, params, seed)
}

pub fn train_from(g: &Graph, cfg: &TrainConfig, mut params: ModelParams, seed: u64) -> Result<TrainOutcome> {
    cfg.validate()?;
    params.validate()?;
    let s = normalize_adjacency(g);
    let mut obj = CostaObjective::new(cfg.loss.clone(), cfg.dropout)?;
    let mut rng = SeededRng::substream(seed, 1);
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut epoch_secs = Vec::with_capacity(cfg.epochs);
    let mut rows = 0;
    for epoch in 0..cfg.epochs {
        let t0 = Instant::now();
        let out = match obj.step(&params.weights, g, &s, &mut rng) {
            Ok(o) => o,
            Err(Error::InvalidInput(msg)) if msg.contains("not finite") || msg.contains("non-finite") => {
                return Ok(diverged(params, losses, epoch_secs, rows, format!("epoch {epoch}: {msg}")));
            }
            Err(e) => return Err(e),
        };
        let loss = out.loss;
        rows = out.rows;
        if !loss.is_finite() {
            return Ok(diverged(params, losses, epoch_secs, rows, format!("epoch {epoch}: loss {loss}")));
        }
        let backup = params.clone();
        match adam_step(&mut params, &out.grads, &cfg.adam) {
            Ok(()) if params.weights.is_finite() => {}
            Ok(()) => {
                return Ok(diverged(backup, losses, epoch_secs, rows, format!("epoch {epoch}: weights became non-finite")));
            }
            Err(Error::Divergence(msg)) => return Ok(diverged(backup, losses, epoch_secs, rows, msg)),
            Err(e) => return Err(e),
        }
        losses.push(loss);
        epoch_secs.push(t0.elapsed().as_secs_f64());
    }
    Ok(TrainOutcome {
        params,
        losses,
        epoch_secs,
        rows,
        diverged: None,
    })
}

fn diverged(params: ModelParams, losses: Vec<f64>, epoch_secs: Vec<f64>, rows: usize, msg: String) -> TrainOutcome {
    TrainOutcome {
        params,
        losses,
        epoch_secs,
        rows,
        diverged: Some(msg),
    }
}

/// One probe row per (seed, λ).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeRow {
    pub seed: u64,
    pub split_id: usize,
    #[serde(flatten)]
    pub result: LambdaResult,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeSummary {
    pub seeds: usize,
    pub mean_test_acc: f64,
    pub std_test_acc: f64,
    /// Test accuracy at the validation-selected λ, one per seed.
    pub test_acc: Vec<f64>,
    pub best_lambda: Vec<f64>,
}

impl ProbeSummary {
    pub fn from_accuracies(test_acc: Vec<f64>, best_lambda: Vec<f64>) -> Self {
        let n = test_acc.len() as f64;
        let mean = test_acc.iter().sum::<f64>() / n;
        let var = test_acc.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
        Self {
            seeds: test_acc.len(),
            mean_test_acc: mean,
            std_test_acc: var.sqrt(),
            test_acc,
            best_lambda,
        }
    }
}

/// Seed `i` of a multi-seed run keyed by `master`.
pub fn run_seed(master: u64, i: usize) -> u64 {
    SeededRng::substream(master, 1 << 32 | i as u64).next_u64()
}

/// Trains (once, or once per seed with `retrain`) and probes over
/// `seeds` random splits.
pub fn train_and_probe(
    g: &Graph,
    cfg: &TrainConfig,
    probe: &ProbeConfig,
    master: u64,
    seeds: usize,
    retrain: bool,
) -> Result<(Vec<TrainOutcome>, Vec<ProbeRow>, ProbeSummary)> {
    let labels = g.labels().ok_or_else(|| Error::Schema("graph has no labels to probe".into()))?;
    if seeds == 0 {
        return invalid("need at least one probe seed");
    }
    let s = normalize_adjacency(g);
    let mut runs = Vec::new();
    let mut rows = Vec::new();
    let mut accs = Vec::new();
    let mut lambdas = Vec::new();
    for i in 0..seeds {
        let seed = run_seed(master, i);
        if retrain || runs.is_empty() {
            let out = train(g, cfg, if retrain { seed } else { master })?;
            if let Some(msg) = &out.diverged {
                return Err(Error::Divergence(msg.clone()));
            }
            runs.push(out);
        }
        let params = &runs.last().expect("trained above").params;
        let z = embed(&params.weights, &s, g.features())?;
        let split = SplitSpec::random(g.n(), probe, &mut SeededRng::new(seed))?;
        let out = evaluate(&z, labels, &split, probe)?;
        for r in &out.per_lambda {
            rows.push(ProbeRow {
                seed,
                split_id: i,
                result: r.clone(),
            });
        }
        accs.push(out.test_acc);
        lambdas.push(out.best_lambda);
    }
    Ok((runs, rows, ProbeSummary::from_accuracies(accs, lambdas)))
}

/// Probes fixed embeddings over `seeds` random splits.
pub fn probe_embeddings(z: &crate::DenseMatrix, labels: &[usize], probe: &ProbeConfig, master: u64, seeds: usize) -> Result<(Vec<ProbeRow>, ProbeSummary)> {
    let mut rows = Vec::new();
    let mut accs = Vec::new();
    let mut lambdas = Vec::new();
    for i in 0..seeds {
        let seed = run_seed(master, i);
        let split = SplitSpec::random(z.rows(), probe, &mut SeededRng::new(seed))?;
        let out = evaluate(z, labels, &split, probe)?;
        for r in &out.per_lambda {
            rows.push(ProbeRow {
                seed,
                split_id: i,
                result: r.clone(),
            });
        }
        accs.push(out.test_acc);
        lambdas.push(out.best_lambda);
    }
    Ok((rows, ProbeSummary::from_accuracies(accs, lambdas)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{gen_power_law_graph, PowerLawSpec};

    fn tiny() -> Graph {
        let spec = PowerLawSpec { n: 60, d: 8, ..Default::default() };
        gen_power_law_graph(&spec, &mut SeededRng::new(1)).unwrap()
    }

    fn quick(mode: RunMode) -> TrainConfig {
        let mut cfg = TrainConfig { hidden: 8, epochs: 5, ..Default::default() };
        mode.apply(&mut cfg);
        cfg
    }

    #[test]
    fn every_mode_trains() {
        let g = tiny();
        for mode in RunMode::ALL {
            let out = train(&g, &quick(mode), 3).unwrap();
            assert_eq!(out.losses.len(), 5, "{mode}");
            assert!(out.diverged.is_none());
            assert!(out.losses.iter().all(|l| l.is_finite()));
        }
    }

    #[test]
    fn training_is_deterministic() {
        let g = tiny();
        let a = train(&g, &quick(RunMode::CostaMv), 4).unwrap();
        let b = train(&g, &quick(RunMode::CostaMv), 4).unwrap();
        assert_eq!(a.losses, b.losses);
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn sketch_rows_follow_ratio() {
        let g = tiny();
        let out = train(&g, &quick(RunMode::CostaSv), 5).unwrap();
        assert_eq!(out.rows, 30);
        let out = train(&g, &quick(RunMode::GraceLike), 5).unwrap();
        assert_eq!(out.rows, 60);
    }

    #[test]
    fn huge_learning_rate_is_reported() {
        let g = tiny();
        let mut cfg = quick(RunMode::NoAug);
        cfg.adam.lr = 1e300;
        cfg.epochs = 50;
        let out = train(&g, &cfg, 6).unwrap();
        if out.diverged.is_some() {
            assert!(out.params.weights.is_finite());
        }
    }

    #[test]
    fn mode_names_round_trip() {
        for m in RunMode::ALL {
            assert_eq!(m.name().parse::<RunMode>().unwrap(), m);
        }
        assert!("bogus".parse::<RunMode>().is_err());
    }

    #[test]
    fn probe_summary_stats() {
        let s = ProbeSummary::from_accuracies(vec![0.5, 0.7], vec![0.1, 0.1]);
        assert!((s.mean_test_acc - 0.6).abs() < 1e-15);
        assert!((s.std_test_acc - 0.1).abs() < 1e-15);
    }
}
