//! Graph data model, symmetric normalized adjacency, the topology/attribute
//! augmentations, a preferential-attachment generator and the text format.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{CsrMatrix, DenseMatrix};
use crate::rng::SeededRng;

/// Undirected graph with node features and optional labels. Edges are
/// stored once as `(i, j)` with `i < j`, deduplicated, without self-loops.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
    features: DenseMatrix,
    labels: Option<Vec<usize>>,
    num_classes: usize,
}

impl Graph {
    /// Validates and canonicalizes edges. Self-loops are dropped, duplicates
    /// (in either orientation) are merged; first-seen order is kept.
    pub fn new(
        features: DenseMatrix,
        edges: impl IntoIterator<Item = (usize, usize)>,
        labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        let n = features.rows();
        let mut seen = BTreeSet::new();
        let mut canon = Vec::new();
        for (a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::Schema(format!("edge ({a}, {b}) references a node >= n = {n}")));
            }
            if a == b {
                continue;
            }
            let e = (a.min(b), a.max(b));
            if seen.insert(e) {
                canon.push(e);
            }
        }
        let num_classes = match &labels {
            Some(l) if l.len() != n => {
                return Err(Error::Schema(format!("{} labels for {n} nodes", l.len())));
            }
            Some(l) => l.iter().max().map_or(0, |m| m + 1),
            None => 0,
        };
        Ok(Self {
            n,
            edges: canon,
            features,
            labels,
            num_classes,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn features(&self) -> &DenseMatrix {
        &self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Overrides the class count recorded in a file header (it may exceed
    /// the largest label present).
    fn with_num_classes(mut self, c: usize) -> Self {
        self.num_classes = self.num_classes.max(c);
        self
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n];
        for &(a, b) in &self.edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }

    pub fn with_edges(&self, edges: Vec<(usize, usize)>) -> Self {
        Self {
            edges,
            ..self.clone()
        }
    }

    pub fn with_features(&self, features: DenseMatrix) -> Self {
        assert_eq!(features.rows(), self.n);
        Self {
            features,
            ..self.clone()
        }
    }
}

/// `S = D̂^{-1/2}(A + I)D̂^{-1/2}`, held sparse.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    s: CsrMatrix,
}

impl NormalizedAdjacency {
    pub fn n(&self) -> usize {
        self.s.rows()
    }

    pub fn csr(&self) -> &CsrMatrix {
        &self.s
    }

    pub fn to_dense(&self) -> DenseMatrix {
        self.s.to_dense()
    }

    /// `S · m` (S is symmetric, so this is also the backward product).
    pub fn apply(&self, m: &DenseMatrix) -> DenseMatrix {
        self.s.mul_dense(m)
    }

    /// The identity propagation, turning a GCN into an MLP.
    pub fn identity(n: usize) -> Self {
        Self {
            s: CsrMatrix::from_rows(n, (0..n).map(|i| vec![(i, 1.0)]).collect()),
        }
    }
}

pub fn normalize_adjacency(g: &Graph) -> NormalizedAdjacency {
    normalize_edges(g.n, &g.edges)
}

pub fn normalize_edges(n: usize, edges: &[(usize, usize)]) -> NormalizedAdjacency {
    let mut deg = vec![1.0f64; n];
    for &(a, b) in edges {
        deg[a] += 1.0;
        deg[b] += 1.0;
    }
    let inv_sqrt: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut rows: Vec<Vec<(usize, f64)>> = (0..n).map(|i| vec![(i, 1.0 / deg[i])]).collect();
    for &(a, b) in edges {
        let w = inv_sqrt[a] * inv_sqrt[b];
        rows[a].push((b, w));
        rows[b].push((a, w));
    }
    NormalizedAdjacency {
        s: CsrMatrix::from_rows(n, rows),
    }
}

/// Graph augmentation probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub p_edge_drop: f64,
    pub p_attr_mask: f64,
    /// Draw an independent mask per node instead of one shared mask.
    pub per_node_mask: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            p_edge_drop: 0.4,
            p_attr_mask: 0.3,
            per_node_mask: false,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_edge_drop", self.p_edge_drop), ("p_attr_mask", self.p_attr_mask)] {
            if !(0.0..=1.0).contains(&p) {
                return invalid(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        Ok(())
    }
}

fn check_probability(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return invalid(format!("probability must lie in [0, 1], got {p}"));
    }
    Ok(())
}

/// Drops each edge independently with probability `p`.
pub fn augment_edge_perturbation(g: &Graph, p: f64, rng: &mut SeededRng) -> Result<Graph> {
    check_probability(p)?;
    Ok(g.with_edges(drop_edges(&g.edges, p, rng)))
}

pub(crate) fn drop_edges(edges: &[(usize, usize)], p: f64, rng: &mut SeededRng) -> Vec<(usize, usize)> {
    if p == 0.0 {
        return edges.to_vec();
    }
    edges.iter().copied().filter(|_| !rng.bernoulli(p)).collect()
}

/// Zeroes each feature dimension with probability `p`, using one mask for
/// every node.
pub fn augment_attribute_mask(g: &Graph, p: f64, rng: &mut SeededRng) -> Result<Graph> {
    check_probability(p)?;
    Ok(g.with_features(mask_features(&g.features, p, false, rng)))
}

pub(crate) fn mask_features(x: &DenseMatrix, p: f64, per_node: bool, rng: &mut SeededRng) -> DenseMatrix {
    let mut out = x.clone();
    if p == 0.0 {
        return out;
    }
    let d = x.cols();
    if per_node {
        out.data_mut().iter_mut().for_each(|v| {
            if rng.bernoulli(p) {
                *v = 0.0;
            }
        });
    } else {
        let mask: Vec<bool> = (0..d).map(|_| rng.bernoulli(p)).collect();
        for i in 0..x.rows() {
            for (v, &m) in out.row_mut(i).iter_mut().zip(&mask) {
                if m {
                    *v = 0.0;
                }
            }
        }
    }
    out
}

/// Applies edge dropping then attribute masking as configured.
pub fn augment(g: &Graph, cfg: &AugmentConfig, rng: &mut SeededRng) -> Result<Graph> {
    cfg.validate()?;
    let edges = drop_edges(&g.edges, cfg.p_edge_drop, rng);
    let features = mask_features(&g.features, cfg.p_attr_mask, cfg.per_node_mask, rng);
    Ok(Graph {
        edges,
        features,
        ..g.clone()
    })
}

/// Parameters of the synthetic preferential-attachment generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerLawSpec {
    pub n: usize,
    pub m_attach: usize,
    pub d: usize,
    pub num_classes: usize,
    /// Probability that an attachment targets a node of the same class.
    pub homophily: f64,
    /// Scale of the class centroids relative to unit feature noise.
    pub class_separation: f64,
}

impl Default for PowerLawSpec {
    fn default() -> Self {
        Self {
            n: 1000,
            m_attach: 2,
            d: 64,
            num_classes: 4,
            homophily: 0.8,
            class_separation: 0.35,
        }
    }
}

/// Preferential-attachment graph with class-conditional Gaussian features.
///
/// Nodes `0..m_attach` form a complete seed graph; every later node links to
/// `m_attach` distinct earlier nodes chosen proportionally to degree, and
/// with probability `homophily` restricted to its own class.
pub fn gen_power_law_graph(spec: &PowerLawSpec, rng: &mut SeededRng) -> Result<Graph> {
    let PowerLawSpec {
        n,
        m_attach: m,
        d,
        num_classes,
        homophily,
        class_separation,
    } = *spec;
    if m == 0 || n < m {
        return invalid(format!("need n >= m_attach >= 1, got n = {n}, m_attach = {m}"));
    }
    if d == 0 || num_classes == 0 {
        return invalid("feature dimension and class count must be positive");
    }
    check_probability(homophily)?;

    let labels: Vec<usize> = (0..n).map(|_| rng.index(num_classes)).collect();

    let mut edges = Vec::new();
    // Each node appears once per incident edge end: degree-proportional pool.
    let mut pool: Vec<usize> = Vec::new();
    let mut class_pool: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    let add_edge = |a: usize, b: usize, edges: &mut Vec<(usize, usize)>, pool: &mut Vec<usize>, class_pool: &mut Vec<Vec<usize>>| {
        edges.push((a.min(b), a.max(b)));
        for v in [a, b] {
            pool.push(v);
            class_pool[labels[v]].push(v);
        }
    };
    for a in 0..m {
        for b in a + 1..m {
            add_edge(a, b, &mut edges, &mut pool, &mut class_pool);
        }
    }
    for v in m..n {
        let mut targets: Vec<usize> = Vec::with_capacity(m);
        let mut attempts = 0;
        while targets.len() < m {
            attempts += 1;
            let same = &class_pool[labels[v]];
            let t = if attempts > 50 * m || pool.is_empty() {
                // fall back to uniform over earlier nodes
                rng.index(v)
            } else if !same.is_empty() && rng.bernoulli(homophily) {
                same[rng.index(same.len())]
            } else {
                pool[rng.index(pool.len())]
            };
            if !targets.contains(&t) {
                targets.push(t);
            }
        }
        for t in targets {
            add_edge(v, t, &mut edges, &mut pool, &mut class_pool);
        }
    }

    let centroids = DenseMatrix::from_fn(num_classes, d, |_, _| class_separation * rng.normal());
    let features = DenseMatrix::from_fn(n, d, |i, j| centroids.get(labels[i], j) + rng.normal());
    Ok(Graph::new(features, edges, Some(labels))?.with_num_classes(num_classes))
}

/// Writes the text format: header `n d num_classes`, `n` feature lines,
/// one label line (or `-`), then `e i j` per edge. Floats use the shortest
/// representation that parses back to the identical value.
pub fn save_graph(g: &Graph, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    write_graph(g, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_graph(g: &Graph, w: &mut impl Write) -> Result<()> {
    writeln!(w, "{} {} {}", g.n, g.feature_dim(), g.num_classes)?;
    let mut line = String::new();
    for i in 0..g.n {
        line.clear();
        for (j, v) in g.features.row(i).iter().enumerate() {
            if j > 0 {
                line.push(' ');
            }
            write!(line, "{v:e}").expect("write to String");
        }
        writeln!(w, "{line}")?;
    }
    match &g.labels {
        Some(l) => {
            let s: Vec<String> = l.iter().map(usize::to_string).collect();
            writeln!(w, "{}", s.join(" "))?;
        }
        None => writeln!(w, "-")?,
    }
    for &(a, b) in &g.edges {
        writeln!(w, "e {a} {b}")?;
    }
    Ok(())
}

pub fn load_graph(path: impl AsRef<Path>) -> Result<Graph> {
    read_graph(BufReader::new(std::fs::File::open(path)?))
}

pub fn read_graph(r: impl BufRead) -> Result<Graph> {
    let mut lines = r.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut next = |what: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((no, Ok(l))) => Ok((no, l)),
            Some((_, Err(e))) => Err(e.into()),
            None => Err(Error::Schema(format!("unexpected end of file: missing {what}"))),
        }
    };
    let parse_err = |line: usize, message: String| Error::Parse { line, message };

    let (no, header) = next("header")?;
    let nums: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse().map_err(|e| parse_err(no, format!("bad header field `{t}`: {e}"))))
        .collect::<Result<_>>()?;
    let [n, d, num_classes] = nums[..] else {
        return Err(parse_err(no, "header must be `n d num_classes`".into()));
    };

    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        let (no, l) = next("feature line")?;
        let before = data.len();
        for t in l.split_whitespace() {
            let v: f64 = t.parse().map_err(|e| parse_err(no, format!("bad float `{t}`: {e}")))?;
            if !v.is_finite() {
                return Err(parse_err(no, format!("non-finite feature `{t}`")));
            }
            data.push(v);
        }
        if data.len() - before != d {
            return Err(Error::Schema(format!(
                "line {no}: expected {d} features, found {}",
                data.len() - before
            )));
        }
    }

    let (no, l) = next("label line")?;
    let labels = if l.trim() == "-" {
        None
    } else {
        if l.trim_start().starts_with('e') {
            return Err(Error::Schema(format!("line {no}: missing label line")));
        }
        let labels: Vec<usize> = l
            .split_whitespace()
            .map(|t| t.parse().map_err(|e| parse_err(no, format!("bad label `{t}`: {e}"))))
            .collect::<Result<_>>()?;
        if labels.len() != n {
            return Err(Error::Schema(format!("line {no}: expected {n} labels, found {}", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&c| c >= num_classes) {
            return Err(Error::Schema(format!("line {no}: label {bad} >= num_classes {num_classes}")));
        }
        Some(labels)
    };

    let mut edges = Vec::new();
    for (no, l) in lines {
        let l = l?;
        if l.trim().is_empty() {
            continue;
        }
        let toks: Vec<&str> = l.split_whitespace().collect();
        match toks[..] {
            ["e", a, b] => {
                let a: usize = a.parse().map_err(|e| parse_err(no, format!("bad node `{a}`: {e}")))?;
                let b: usize = b.parse().map_err(|e| parse_err(no, format!("bad node `{b}`: {e}")))?;
                if a >= n || b >= n {
                    return Err(Error::Schema(format!("line {no}: edge ({a}, {b}) references a node >= n = {n}")));
                }
                edges.push((a, b));
            }
            _ => return Err(parse_err(no, format!("expected `e i j`, found `{l}`"))),
        }
    }

    let features = DenseMatrix::from_vec(n, d, data)?;
    Ok(Graph::new(features, edges, labels)?.with_num_classes(num_classes))
}
