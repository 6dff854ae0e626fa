//! Experiment driver behind the `costa` binary: configuration, the four
//! subcommands and their CSV/JSON outputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use costa_core::bias::{bias_audit, BiasConfig, BiasVariant};
use costa_core::encoder::{embed, load_checkpoint, save_checkpoint, ModelParams};
use costa_core::graph::{gen_power_law_graph, load_graph, normalize_adjacency, Graph, PowerLawSpec};
use costa_core::linalg::{gaussian_draw, svd};
use costa_core::probe::ProbeConfig;
use costa_core::sketch::{failure_bound, monte_carlo_cov_errors, svd_sketch_bound, SketchConfig, SketchMethod, SketchOperator};
use costa_core::train::{probe_embeddings, train_and_probe, ProbeRow, ProbeSummary, RunMode, TrainConfig};
use costa_core::{DenseMatrix, SeededRng};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical divergence: {0}")]
    Divergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Data(_) => 3,
            Self::Divergence(_) => 4,
        }
    }
}

impl From<costa_core::Error> for CliError {
    fn from(e: costa_core::Error) -> Self {
        use costa_core::Error as E;
        match e {
            E::InvalidInput(_) | E::Json(_) => Self::Config(e.to_string()),
            E::Parse { .. } | E::Schema(_) | E::Io(_) => Self::Data(e.to_string()),
            E::Convergence { .. } | E::Divergence(_) => Self::Divergence(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Graph file in the documented text format; synthetic when absent.
    pub path: Option<PathBuf>,
    pub synthetic: PowerLawSpec,
    pub graph_seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            path: None,
            synthetic: PowerLawSpec::default(),
            graph_seed: 7,
        }
    }
}

impl DatasetConfig {
    pub fn load(&self) -> CliResult<Graph> {
        match &self.path {
            Some(p) => load_graph(p).map_err(|e| match e {
                costa_core::Error::Io(io) => io_err(p, io),
                other => other.into(),
            }),
            None => Ok(gen_power_law_graph(&self.synthetic, &mut SeededRng::new(self.graph_seed))?),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BiasAuditConfig {
    pub variants: Vec<BiasVariant>,
    pub sampling: BiasConfig,
    /// Seed of the frozen weights shared by every variant.
    pub frozen_seed: u64,
}

impl Default for BiasAuditConfig {
    fn default() -> Self {
        Self {
            variants: vec![
                BiasVariant::GnnE,
                BiasVariant::GnnA,
                BiasVariant::GnnEa,
                BiasVariant::NnA,
                BiasVariant::FaNoise,
                BiasVariant::FaSketch,
                BiasVariant::Identity,
            ],
            sampling: BiasConfig::default(),
            frozen_seed: 2024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub rows: usize,
    pub cols: usize,
    pub data_seed: u64,
    pub methods: Vec<SketchMethod>,
    pub ks: Vec<usize>,
    /// Values of `s` swept for the sparse projection.
    pub densities: Vec<f64>,
    pub trials: usize,
    /// Covariance-error threshold counted as a failure.
    pub eps: f64,
    pub noise_eps: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            rows: 512,
            cols: 64,
            data_seed: 11,
            methods: vec![
                SketchMethod::SvdSketch,
                SketchMethod::RowSelection,
                SketchMethod::GaussianRp,
                SketchMethod::SparseRp,
                SketchMethod::NoiseInjection,
            ],
            ks: vec![16, 64, 256],
            densities: vec![1.0, 3.0, 100.0],
            trials: 200,
            eps: 0.5,
            noise_eps: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub mode: RunMode,
    pub train: TrainConfig,
    pub probe: ProbeConfig,
    pub probe_seeds: usize,
    /// Re-initialize and retrain the encoder for every probe seed.
    pub retrain_per_seed: bool,
    pub seed: u64,
    pub threads: usize,
    pub out: PathBuf,
    pub bias: BiasAuditConfig,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            mode: RunMode::CostaSv,
            train: TrainConfig::default(),
            probe: ProbeConfig::default(),
            probe_seeds: 20,
            retrain_per_seed: false,
            seed: 0,
            threads: 1,
            out: PathBuf::from("out"),
            bias: BiasAuditConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

/// Defaults inherited from the training recipes the method builds on
/// rather than stated with the method itself.
pub const UNVERIFIED_DEFAULTS: &[&str] = &[
    "train.epochs = 1000",
    "train.adam.lr = 1e-3",
    "train.loss.tau = 0.5",
    "train.hidden = 128",
    "train.dropout = 0.2",
    "graph_aug.p_edge_drop = 0.4",
    "graph_aug.p_attr_mask = 0.3",
    "probe.standardize = true",
    "train.loss.sketch.method = gaussian_rp",
    "train.loss.sketch.eps = 0.1",
    "train.loss.ratio = 0.5",
    "train.loss.sketch_position = pre_head",
    "train.loss.sv_branch = noise",
    "retrain_per_seed = false",
];

/// Command-line values that take precedence over the JSON config.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub mode: Option<RunMode>,
    pub sketch_method: Option<SketchMethod>,
    pub ratio: Option<f64>,
    pub density: Option<f64>,
    pub epochs: Option<usize>,
    pub dataset: Option<PathBuf>,
    pub samples: Option<usize>,
    pub variants: Option<Vec<BiasVariant>>,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Applies overrides and the mode preset, then validates.
    pub fn resolve(mut self, o: &Overrides) -> CliResult<Self> {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = &o.out {
            self.out = v.clone();
        }
        if let Some(v) = o.threads {
            self.threads = v;
        }
        if let Some(v) = o.mode {
            self.mode = v;
        }
        if let Some(v) = o.sketch_method {
            self.train.loss.sketch.method = v;
        }
        if let Some(v) = o.ratio {
            self.train.loss.ratio = Some(v);
        }
        if let Some(v) = o.density {
            // density is 1/s
            if !(v > 0.0 && v <= 1.0) {
                return Err(CliError::Config(format!("density must lie in (0, 1], got {v}")));
            }
            self.train.loss.sketch.s = 1.0 / v;
        }
        if let Some(v) = o.epochs {
            self.train.epochs = v;
        }
        if let Some(v) = &o.dataset {
            self.dataset.path = Some(v.clone());
        }
        if let Some(v) = o.samples {
            self.bias.sampling.samples = v;
        }
        if let Some(v) = &o.variants {
            self.bias.variants = v.clone();
        }
        self.mode.apply(&mut self.train);
        self.bias.sampling.threads = self.threads;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.train.validate()?;
        self.probe.validate()?;
        self.bias.sampling.validate()?;
        if self.probe_seeds == 0 {
            return Err(CliError::Config("probe_seeds must be at least 1".into()));
        }
        if self.threads == 0 {
            return Err(CliError::Config("threads must be at least 1".into()));
        }
        if self.bias.variants.is_empty() {
            return Err(CliError::Config("no bias variants selected".into()));
        }
        let b = &self.bench;
        if b.rows == 0 || b.cols == 0 || b.trials == 0 || b.ks.contains(&0) {
            return Err(CliError::Config("bench dimensions, ks and trials must be positive".into()));
        }
        if b.densities.iter().any(|s| !(*s >= 1.0)) {
            return Err(CliError::Config("bench densities are values of s and must be >= 1".into()));
        }
        Ok(())
    }
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

fn write_csv<R: Serialize>(path: &Path, rows: impl IntoIterator<Item = R>) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

#[derive(Debug, Serialize)]
struct LossRow {
    seed: u64,
    epoch: usize,
    loss: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Stats {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Stats {
    pub fn of(v: &[f64]) -> Self {
        let n = v.len().max(1) as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Self {
            count: v.len(),
            mean,
            std: var.sqrt(),
            min: v.iter().copied().fold(f64::INFINITY, f64::min),
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub final_loss: Option<f64>,
    pub mean_epoch_secs: f64,
    pub rows_contrasted: usize,
    pub losses: Vec<f64>,
    pub epoch_secs: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct TrainReport {
    pub config: RunConfig,
    pub unverified_defaults: Vec<String>,
    pub runs: Vec<RunSummary>,
    pub probe: ProbeSummary,
    /// Covariance error of the configured sketch on the final embeddings.
    pub sketch_cov_error: Option<Stats>,
    pub wall_secs: f64,
}

fn unverified() -> Vec<String> {
    UNVERIFIED_DEFAULTS.iter().map(|s| s.to_string()).collect()
}

/// Trains per the config, writes `loss.csv`, `probe.csv`,
/// `checkpoint.json` and `report.json` under `cfg.out`.
pub fn cmd_train(cfg: &RunConfig) -> CliResult<TrainReport> {
    let t0 = Instant::now();
    let g = cfg.dataset.load()?;
    ensure_dir(&cfg.out)?;
    write_json(&cfg.out.join("config.json"), cfg)?;
    let result = train_and_probe(&g, &cfg.train, &cfg.probe, cfg.seed, cfg.probe_seeds, cfg.retrain_per_seed);
    let (runs, probe_rows, probe) = match result {
        Ok(r) => r,
        Err(costa_core::Error::Divergence(msg)) => {
            // keep the last finite state for diagnosis
            let out = costa_core::train::train(&g, &cfg.train, cfg.seed)?;
            save_checkpoint(&out.params, cfg.out.join("checkpoint.json"))?;
            write_csv(&cfg.out.join("loss.csv"), loss_rows(cfg.seed, &out.losses))?;
            return Err(CliError::Divergence(msg));
        }
        Err(e) => return Err(e.into()),
    };
    let seeds: Vec<u64> = if cfg.retrain_per_seed {
        (0..runs.len()).map(|i| costa_core::train::run_seed(cfg.seed, i)).collect()
    } else {
        vec![cfg.seed]
    };
    write_csv(&cfg.out.join("loss.csv"), seeds.iter().zip(&runs).flat_map(|(&s, r)| loss_rows(s, &r.losses)))?;
    write_csv(&cfg.out.join("probe.csv"), probe_rows.iter().map(probe_record))?;
    let first = &runs[0].params;
    save_checkpoint(first, cfg.out.join("checkpoint.json"))?;
    let sketch_cov_error = sketch_error_stats(&g, first, cfg)?;
    let report = TrainReport {
        config: cfg.clone(),
        unverified_defaults: unverified(),
        runs: seeds
            .iter()
            .zip(&runs)
            .map(|(&seed, r)| RunSummary {
                seed,
                final_loss: r.losses.last().copied(),
                mean_epoch_secs: r.mean_epoch_secs(),
                rows_contrasted: r.rows,
                losses: r.losses.clone(),
                epoch_secs: r.epoch_secs.clone(),
            })
            .collect(),
        probe,
        sketch_cov_error,
        wall_secs: t0.elapsed().as_secs_f64(),
    };
    write_json(&cfg.out.join("report.json"), &report)?;
    Ok(report)
}

fn loss_rows(seed: u64, losses: &[f64]) -> Vec<LossRow> {
    losses.iter().enumerate().map(|(epoch, &loss)| LossRow { seed, epoch, loss }).collect()
}

#[derive(Serialize)]
struct ProbeRecord {
    seed: u64,
    split_id: usize,
    lambda: f64,
    val_acc: f64,
    test_acc: f64,
}

fn probe_record(r: &ProbeRow) -> ProbeRecord {
    ProbeRecord {
        seed: r.seed,
        split_id: r.split_id,
        lambda: r.result.lambda,
        val_acc: r.result.val_acc,
        test_acc: r.result.test_acc,
    }
}

fn sketch_error_stats(g: &Graph, params: &ModelParams, cfg: &RunConfig) -> CliResult<Option<Stats>> {
    let loss = &cfg.train.loss;
    if loss.sketch.method == SketchMethod::Identity {
        return Ok(None);
    }
    let h = embed(&params.weights, &normalize_adjacency(g), g.features())?;
    if h.data().iter().all(|v| *v == 0.0) {
        return Ok(None);
    }
    let scfg = loss.sketch_for(h.rows())?;
    let errors = monte_carlo_cov_errors(&scfg, &h, 20, cfg.seed, cfg.threads)?;
    Ok(Some(Stats::of(&errors)))
}

#[derive(Debug, Serialize)]
pub struct BiasSummary {
    pub variant: BiasVariant,
    pub median: f64,
    pub mean: f64,
    pub mean_degree_le_3: Option<f64>,
    pub mean_degree_ge_10: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct BiasAuditReport {
    pub config: RunConfig,
    pub unverified_defaults: Vec<String>,
    pub summaries: Vec<BiasSummary>,
    pub wall_secs: f64,
}

#[derive(Serialize)]
struct BiasRecord {
    variant: BiasVariant,
    node: usize,
    degree: usize,
    bias: f64,
}

#[derive(Serialize)]
struct DegreeRecord {
    variant: BiasVariant,
    degree: usize,
    count: usize,
    mean_bias: f64,
    median_bias: f64,
}

/// Runs the bias audit; writes `bias.csv`, `bias_degree.csv` and
/// `bias_report.json`.
pub fn cmd_bias_audit(cfg: &RunConfig) -> CliResult<BiasAuditReport> {
    let t0 = Instant::now();
    let g = cfg.dataset.load()?;
    ensure_dir(&cfg.out)?;
    let frozen = ModelParams::init(g.feature_dim(), cfg.train.hidden, 1, &mut SeededRng::new(cfg.bias.frozen_seed))?;
    let reports = bias_audit(&g, &frozen.weights, &cfg.bias.variants, &cfg.bias.sampling, &mut SeededRng::new(cfg.seed))?;
    write_csv(
        &cfg.out.join("bias.csv"),
        reports.iter().flat_map(|r| {
            r.bias.iter().zip(&r.degrees).enumerate().map(move |(node, (&bias, &degree))| BiasRecord {
                variant: r.variant,
                node,
                degree,
                bias,
            })
        }),
    )?;
    write_csv(
        &cfg.out.join("bias_degree.csv"),
        reports.iter().flat_map(|r| {
            r.by_degree().into_iter().map(move |b| DegreeRecord {
                variant: r.variant,
                degree: b.degree,
                count: b.count,
                mean_bias: b.mean,
                median_bias: b.median,
            })
        }),
    )?;
    let report = BiasAuditReport {
        config: cfg.clone(),
        unverified_defaults: unverified(),
        summaries: reports
            .iter()
            .map(|r| BiasSummary {
                variant: r.variant,
                median: r.median(),
                mean: r.mean(),
                mean_degree_le_3: r.cohort_mean(|d| d <= 3),
                mean_degree_ge_10: r.cohort_mean(|d| d >= 10),
            })
            .collect(),
        wall_secs: t0.elapsed().as_secs_f64(),
    };
    write_json(&cfg.out.join("bias_report.json"), &report)?;
    Ok(report)
}

#[derive(Serialize)]
struct BenchRecord {
    method: SketchMethod,
    k: usize,
    s: f64,
    trial: usize,
    cov_error: f64,
}

/// Aggregate over the trials of one (method, k, s) cell.
#[derive(Debug, Clone, Serialize)]
pub struct BenchSummaryRow {
    pub method: SketchMethod,
    pub k: usize,
    pub s: f64,
    pub trials: usize,
    pub mean_cov_error: f64,
    pub max_cov_error: f64,
    /// Failure threshold for the probabilistic bounds, or the deterministic
    /// error bound for the SVD sketch.
    pub threshold: f64,
    pub bound: Option<f64>,
    /// Trials whose error exceeded `threshold`.
    pub failures: usize,
    /// Empirical nonzero fraction of `P` (sparse projection only).
    pub density: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct BenchReport {
    pub config: RunConfig,
    pub rows: Vec<BenchSummaryRow>,
    /// Wall-clock seconds per cell, in row order.
    pub cell_secs: Vec<f64>,
}

const SVD_SLACK: f64 = 1e-8;

/// Sketch-quality sweep; writes `bench.csv`, `bench_summary.csv` and
/// `bench_report.json`.
pub fn cmd_sketch_bench(cfg: &RunConfig) -> CliResult<BenchReport> {
    let b = &cfg.bench;
    ensure_dir(&cfg.out)?;
    let x = gaussian_draw(&mut SeededRng::new(b.data_seed), b.rows, b.cols)?;
    let sigma = svd(&x)?.sigma;
    let mut records = Vec::new();
    let mut rows = Vec::new();
    let mut cell_secs = Vec::new();
    for (mi, &method) in b.methods.iter().enumerate() {
        let ks: Vec<usize> = match method {
            SketchMethod::NoiseInjection | SketchMethod::Identity => vec![b.rows],
            SketchMethod::SvdSketch => b.ks.iter().copied().filter(|&k| k <= b.rows.min(b.cols)).collect(),
            _ => b.ks.clone(),
        };
        let ss: Vec<f64> = if method == SketchMethod::SparseRp { b.densities.clone() } else { vec![1.0] };
        for &k in &ks {
            for &s in &ss {
                let t0 = Instant::now();
                let scfg = SketchConfig { s, eps: b.noise_eps, ..SketchConfig::new(method, k) };
                let cell_seed = cfg.seed ^ ((mi as u64) << 48 | (k as u64) << 16 | s.to_bits() >> 48);
                let errors = monte_carlo_cov_errors(&scfg, &x, b.trials, cell_seed, cfg.threads)?;
                let (threshold, bound) = if method == SketchMethod::SvdSketch {
                    let bnd = svd_sketch_bound(&sigma, k);
                    (bnd + SVD_SLACK, Some(bnd))
                } else {
                    (b.eps, failure_bound(method, b.eps, scfg.output_rows(b.rows)))
                };
                let density = (method == SketchMethod::SparseRp).then(|| {
                    let mut nnz = 0usize;
                    for t in 0..b.trials {
                        let op = SketchOperator::sparse_sign(k, b.rows, s, &mut SeededRng::substream(!cell_seed, t as u64));
                        nnz += op.nnz();
                    }
                    nnz as f64 / (b.trials * k * b.rows) as f64
                });
                rows.push(BenchSummaryRow {
                    method,
                    k: scfg.output_rows(b.rows),
                    s,
                    trials: b.trials,
                    mean_cov_error: errors.iter().sum::<f64>() / errors.len() as f64,
                    max_cov_error: errors.iter().copied().fold(0.0, f64::max),
                    threshold,
                    bound,
                    failures: errors.iter().filter(|&&e| e > threshold).count(),
                    density,
                });
                for (trial, &cov_error) in errors.iter().enumerate() {
                    records.push(BenchRecord {
                        method,
                        k: scfg.output_rows(b.rows),
                        s,
                        trial,
                        cov_error,
                    });
                }
                cell_secs.push(t0.elapsed().as_secs_f64());
            }
        }
    }
    write_csv(&cfg.out.join("bench.csv"), records)?;
    write_csv(&cfg.out.join("bench_summary.csv"), rows.iter().map(summary_record))?;
    let report = BenchReport {
        config: cfg.clone(),
        rows,
        cell_secs,
    };
    write_json(&cfg.out.join("bench_report.json"), &report)?;
    Ok(report)
}

#[derive(Serialize)]
struct SummaryRecord {
    method: SketchMethod,
    k: usize,
    s: f64,
    trials: usize,
    mean_cov_error: f64,
    max_cov_error: f64,
    threshold: f64,
    bound: String,
    failures: usize,
    density: String,
}

fn summary_record(r: &BenchSummaryRow) -> SummaryRecord {
    let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
    SummaryRecord {
        method: r.method,
        k: r.k,
        s: r.s,
        trials: r.trials,
        mean_cov_error: r.mean_cov_error,
        max_cov_error: r.max_cov_error,
        threshold: r.threshold,
        bound: opt(r.bound),
        failures: r.failures,
        density: opt(r.density),
    }
}

#[derive(Debug, Serialize)]
pub struct EvalReport {
    pub config: RunConfig,
    pub checkpoint: PathBuf,
    pub probe: ProbeSummary,
}

/// Embeds the dataset with a checkpoint and probes it; writes
/// `eval_probe.csv` and `eval_report.json`.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path) -> CliResult<EvalReport> {
    let params = load_checkpoint(checkpoint).map_err(|e| match e {
        costa_core::Error::Io(io) => io_err(checkpoint, io),
        other => CliError::Data(other.to_string()),
    })?;
    let g = cfg.dataset.load()?;
    if params.weights.input_dim() != g.feature_dim() {
        return Err(CliError::Data(format!(
            "checkpoint expects {} features, dataset has {}",
            params.weights.input_dim(),
            g.feature_dim()
        )));
    }
    let labels = g.labels().ok_or_else(|| CliError::Data("dataset has no labels".into()))?;
    ensure_dir(&cfg.out)?;
    let z: DenseMatrix = embed(&params.weights, &normalize_adjacency(&g), g.features())?;
    let (rows, probe) = probe_embeddings(&z, labels, &cfg.probe, cfg.seed, cfg.probe_seeds)?;
    write_csv(&cfg.out.join("eval_probe.csv"), rows.iter().map(probe_record))?;
    let report = EvalReport {
        config: cfg.clone(),
        checkpoint: checkpoint.to_path_buf(),
        probe,
    };
    write_json(&cfg.out.join("eval_report.json"), &report)?;
    Ok(report)
}

/// Resolved-config echo for `--dry-run` style inspection.
pub fn describe(cfg: &RunConfig) -> serde_json::Value {
    json!({ "config": cfg, "unverified_defaults": UNVERIFIED_DEFAULTS })
}
