//! Linear evaluation: ℓ2-regularized multinomial logistic regression on
//! frozen embeddings, with λ picked on a validation split.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::DenseMatrix;
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub lambda_grid: Vec<f64>,
    pub train_frac: f64,
    pub val_frac: f64,
    pub max_iters: usize,
    /// Stop once the relative objective change falls below this.
    pub tol: f64,
    /// Standardize each dimension with train-split statistics.
    pub standardize: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            lambda_grid: (1..=10).rev().map(|e| 2f64.powi(-e)).collect(),
            train_frac: 0.1,
            val_frac: 0.1,
            max_iters: 5000,
            tol: 1e-7,
            standardize: true,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_grid.is_empty() {
            return invalid("lambda grid is empty");
        }
        if self.lambda_grid.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return invalid("lambda values must be finite and non-negative");
        }
        let (t, v) = (self.train_frac, self.val_frac);
        if !(t > 0.0 && v > 0.0 && t + v < 1.0) {
            return invalid(format!("split fractions {t}/{v} leave no test nodes"));
        }
        if self.max_iters == 0 || !(self.tol > 0.0) {
            return invalid("max_iters and tol must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitSpec {
    /// Shuffles `0..n` and cuts it by the configured fractions.
    pub fn random(n: usize, cfg: &ProbeConfig, rng: &mut SeededRng) -> Result<Self> {
        cfg.validate()?;
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        let nt = (cfg.train_frac * n as f64).round() as usize;
        let nv = (cfg.val_frac * n as f64).round() as usize;
        let split = Self {
            train: idx[..nt].to_vec(),
            val: idx[nt..nt + nv].to_vec(),
            test: idx[nt + nv..].to_vec(),
        };
        split.validate(n)?;
        Ok(split)
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.train.is_empty() || self.val.is_empty() || self.test.is_empty() {
            return invalid("every split partition must be non-empty");
        }
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.val).chain(&self.test) {
            if i >= n {
                return invalid(format!("split index {i} out of range for {n} nodes"));
            }
            if std::mem::replace(&mut seen[i], true) {
                return invalid(format!("node {i} appears in more than one partition"));
            }
        }
        Ok(())
    }
}

/// Multinomial logistic weights: `scores = x·W + b`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogisticModel {
    pub w: DenseMatrix,
    pub b: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// False when the iteration cap was hit before the tolerance.
    pub converged: bool,
}

impl LogisticModel {
    pub fn zeros(d: usize, classes: usize) -> Self {
        Self {
            w: DenseMatrix::zeros(d, classes),
            b: vec![0.0; classes],
            objective: f64::INFINITY,
            iterations: 0,
            converged: false,
        }
    }

    pub fn scores(&self, x: &DenseMatrix) -> DenseMatrix {
        let mut s = x.matmul(&self.w);
        for i in 0..s.rows() {
            s.row_mut(i).iter_mut().zip(&self.b).for_each(|(v, b)| *v += b);
        }
        s
    }

    /// Argmax class per row; ties go to the lowest index.
    pub fn predict(&self, x: &DenseMatrix) -> Vec<usize> {
        let s = self.scores(x);
        (0..s.rows())
            .map(|i| {
                s.row(i)
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (c, &v)| if v > best.1 { (c, v) } else { best })
                    .0
            })
            .collect()
    }
}

pub fn accuracy(pred: &[usize], y: &[usize]) -> f64 {
    let hits = pred.iter().zip(y).filter(|(a, b)| a == b).count();
    hits as f64 / y.len() as f64
}

/// Objective and gradient of mean cross-entropy plus `λ/2‖W‖²`.
fn objective_grad(m: &LogisticModel, x: &DenseMatrix, y: &[usize], lambda: f64, want_grad: bool) -> (f64, Option<(DenseMatrix, Vec<f64>)>) {
    let n = x.rows() as f64;
    let mut s = m.scores(x);
    let mut loss = 0.0;
    for i in 0..s.rows() {
        let row = s.row_mut(i);
        let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            sum += *v;
        }
        loss += mx + sum.ln() - (row[y[i]].ln() + mx);
        row.iter_mut().for_each(|v| *v /= sum);
    }
    let reg: f64 = m.w.data().iter().map(|v| v * v).sum();
    let obj = loss / n + 0.5 * lambda * reg;
    if !want_grad {
        return (obj, None);
    }
    // s now holds probabilities; subtract the one-hot targets
    for (i, &c) in y.iter().enumerate() {
        let v = s.get(i, c);
        s.set(i, c, v - 1.0);
    }
    s.scale_mut(1.0 / n);
    let mut gw = x.t_matmul(&s);
    gw.add_assign(&m.w.scale(lambda));
    let mut gb = vec![0.0; m.b.len()];
    for i in 0..s.rows() {
        gb.iter_mut().zip(s.row(i)).for_each(|(g, v)| *g += v);
    }
    (obj, Some((gw, gb)))
}

pub fn num_classes(y: &[usize]) -> usize {
    y.iter().max().map_or(0, |m| m + 1)
}

/// Full-batch gradient descent with step halving from `init`.
pub fn train_logistic_from(x: &DenseMatrix, y: &[usize], classes: usize, lambda: f64, cfg: &ProbeConfig, init: LogisticModel) -> Result<LogisticModel> {
    if x.rows() != y.len() || x.rows() == 0 {
        return invalid("probe needs one label per embedding row");
    }
    if y.iter().any(|&c| c >= classes) {
        return invalid("label exceeds class count");
    }
    let mut present = vec![false; classes];
    y.iter().for_each(|&c| present[c] = true);
    if present.iter().filter(|&&p| p).count() < 2 {
        return invalid("probe needs at least two classes in the training labels");
    }
    if init.w.shape() != (x.cols(), classes) || init.b.len() != classes {
        return invalid("initial weights do not match the data");
    }
    let mut m = init;
    let (mut obj, _) = objective_grad(&m, x, y, lambda, false);
    let mut step = 1.0;
    m.converged = false;
    for it in 1..=cfg.max_iters {
        let (_, g) = objective_grad(&m, x, y, lambda, true);
        let (gw, gb) = g.expect("gradient requested");
        let gnorm2: f64 = gw.data().iter().chain(&gb).map(|v| v * v).sum();
        m.iterations = it;
        if gnorm2 == 0.0 {
            m.converged = true;
            break;
        }
        step *= 2.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = LogisticModel {
                w: m.w.sub(&gw.scale(step)),
                b: m.b.iter().zip(&gb).map(|(b, g)| b - step * g).collect(),
                ..m.clone()
            };
            let (o, _) = objective_grad(&cand, x, y, lambda, false);
            if o <= obj - 0.5 * step * gnorm2 {
                accepted = Some((cand, o));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, o)) = accepted else {
            // no descent at machine precision: already at the optimum
            m.converged = true;
            break;
        };
        let rel = (obj - o).abs() / obj.abs().max(1e-300);
        m.w = cand.w;
        m.b = cand.b;
        obj = o;
        if rel < cfg.tol {
            m.converged = true;
            break;
        }
    }
    m.objective = obj;
    Ok(m)
}

pub fn train_logistic(x: &DenseMatrix, y: &[usize], lambda: f64, cfg: &ProbeConfig) -> Result<LogisticModel> {
    let c = num_classes(y);
    train_logistic_from(x, y, c, lambda, cfg, LogisticModel::zeros(x.cols(), c))
}

/// Per-dimension mean and standard deviation over `rows`.
fn standardizer(z: &DenseMatrix, rows: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let d = z.cols();
    let n = rows.len() as f64;
    let mut mu = vec![0.0; d];
    for &i in rows {
        mu.iter_mut().zip(z.row(i)).for_each(|(m, v)| *m += v / n);
    }
    let mut sd = vec![0.0; d];
    for &i in rows {
        sd.iter_mut().zip(z.row(i)).zip(&mu).for_each(|((s, v), m)| *s += (v - m).powi(2) / n);
    }
    // constant columns are centered but not scaled
    let sd = sd.into_iter().map(|v| if v > 1e-24 { v.sqrt() } else { 1.0 }).collect();
    (mu, sd)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LambdaResult {
    pub lambda: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeOutcome {
    pub best_lambda: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub per_lambda: Vec<LambdaResult>,
}

/// Trains one probe per λ on `split.train`, picks λ by validation accuracy
/// (ties go to the smaller λ) and reports its test accuracy.
pub fn evaluate(z: &DenseMatrix, y: &[usize], split: &SplitSpec, cfg: &ProbeConfig) -> Result<ProbeOutcome> {
    cfg.validate()?;
    if z.rows() != y.len() {
        return invalid(format!("{} embeddings but {} labels", z.rows(), y.len()));
    }
    split.validate(z.rows())?;
    let classes = num_classes(y);
    let z = if cfg.standardize {
        let (mu, sd) = standardizer(z, &split.train);
        let mut out = z.clone();
        for i in 0..out.rows() {
            out.row_mut(i).iter_mut().zip(&mu).zip(&sd).for_each(|((v, m), s)| *v = (*v - m) / s);
        }
        out
    } else {
        z.clone()
    };
    let part = |idx: &[usize]| (z.select_rows(idx), idx.iter().map(|&i| y[i]).collect::<Vec<_>>());
    let (xt, yt) = part(&split.train);
    let (xv, yv) = part(&split.val);
    let (xs, ys) = part(&split.test);
    let mut per_lambda = Vec::with_capacity(cfg.lambda_grid.len());
    for &lambda in &cfg.lambda_grid {
        let m = train_logistic_from(&xt, &yt, classes, lambda, cfg, LogisticModel::zeros(z.cols(), classes))?;
        per_lambda.push(LambdaResult {
            lambda,
            val_acc: accuracy(&m.predict(&xv), &yv),
            test_acc: accuracy(&m.predict(&xs), &ys),
            converged: m.converged,
        });
    }
    let best = per_lambda
        .iter()
        .fold(None::<&LambdaResult>, |acc, r| match acc {
            Some(b) if b.val_acc > r.val_acc || (b.val_acc == r.val_acc && b.lambda <= r.lambda) => Some(b),
            _ => Some(r),
        })
        .expect("grid is non-empty");
    Ok(ProbeOutcome {
        best_lambda: best.lambda,
        val_acc: best.val_acc,
        test_acc: best.test_acc,
        per_lambda,
    })
}
