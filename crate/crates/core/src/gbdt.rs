//! Regularized second-order gradient boosting of regression trees with a
//! softmax objective.
//!
//! Each round fits one tree per class to the gradient `p - y` and hessian
//! `p (1 - p)` of the multiclass log-loss. A split is taken only when
//!
//! ```text
//! gain = 1/2 [G_L^2/(H_L+lambda) + G_R^2/(H_R+lambda) - G^2/(H+lambda)] - gamma > 0
//! ```
//!
//! and a leaf holding gradient sum `G` and hessian sum `H` gets the weight
//! `-G/(H+lambda)`, shrunk by the learning rate.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::LabeledDataset;

pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub rounds: usize,
    pub max_depth: usize,
    /// Per-leaf complexity penalty.
    pub gamma: f64,
    /// L2 penalty on leaf weights.
    pub lambda: f64,
    pub learning_rate: f64,
    /// Minimum hessian sum on each side of a split.
    pub min_child_weight: f64,
    /// Seeds fold shuffling in cross-validation; tree fitting itself is
    /// deterministic.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            rounds: 50,
            max_depth: 4,
            gamma: 0.0,
            lambda: 1.0,
            learning_rate: 0.3,
            min_child_weight: 1e-3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::invalid("rounds must be at least 1"));
        }
        if self.max_depth == 0 {
            return Err(Error::invalid("max_depth must be at least 1"));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::invalid(format!("gamma must be finite and >= 0, got {}", self.gamma)));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::invalid(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::invalid(format!(
                "learning_rate must lie in (0, 1], got {}",
                self.learning_rate
            )));
        }
        if !(self.min_child_weight >= 0.0) {
            return Err(Error::invalid("min_child_weight must be >= 0"));
        }
        Ok(())
    }

    pub fn tree_params(&self) -> TreeParams {
        TreeParams {
            max_depth: self.max_depth,
            gamma: self.gamma,
            lambda: self.lambda,
            min_child_weight: self.min_child_weight,
            shrinkage: self.learning_rate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    pub max_depth: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub min_child_weight: f64,
    /// Multiplier applied to every leaf weight.
    pub shrinkage: f64,
}

/// Unshrunk optimal leaf weight `-G/(H+lambda)`.
pub fn leaf_weight(grad_sum: f64, hess_sum: f64, lambda: f64) -> f64 {
    let denom = hess_sum + lambda;
    if denom > 0.0 {
        -grad_sum / denom
    } else {
        0.0
    }
}

fn score(grad_sum: f64, hess_sum: f64, lambda: f64) -> f64 {
    let denom = hess_sum + lambda;
    if denom > 0.0 {
        grad_sum * grad_sum / denom
    } else {
        0.0
    }
}

/// Regularized gain of splitting a node into the given children.
pub fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, lambda: f64, gamma: f64) -> f64 {
    0.5 * (score(gl, hl, lambda) + score(gr, hr, lambda) - score(gl + gr, hl + hr, lambda)) - gamma
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left. Learned thresholds sit
    /// halfway between adjacent training values.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        gain: f64,
    },
    Leaf {
        leaf: f64,
    },
}

/// Binary regression tree stored as a node array; node 0 is the root and
/// children always follow their parent.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn leaf(weight: f64) -> Self {
        RegressionTree {
            nodes: vec![Node::Leaf { leaf: weight }],
        }
    }

    pub fn from_nodes(nodes: Vec<Node>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Model("tree has no nodes".into()));
        }
        let mut referenced = vec![false; nodes.len()];
        for (i, node) in nodes.iter().enumerate() {
            match *node {
                Node::Split {
                    threshold, left, right, ..
                } => {
                    if !threshold.is_finite() {
                        return Err(Error::Model(format!("node {i} has a non-finite threshold")));
                    }
                    for child in [left, right] {
                        if child <= i || child >= nodes.len() {
                            return Err(Error::Model(format!("node {i} has invalid child {child}")));
                        }
                        if std::mem::replace(&mut referenced[child], true) {
                            return Err(Error::Model(format!("node {child} has two parents")));
                        }
                    }
                }
                Node::Leaf { leaf } => {
                    if !leaf.is_finite() {
                        return Err(Error::Model(format!("leaf {i} has a non-finite weight")));
                    }
                }
            }
        }
        if let Some(orphan) = referenced.iter().skip(1).position(|r| !r) {
            return Err(Error::Model(format!("node {} is unreachable", orphan + 1)));
        }
        Ok(RegressionTree { nodes })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    /// Index of the leaf that `x` routes to.
    pub fn route(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => i = if x[feature] <= threshold { left } else { right },
                Node::Leaf { .. } => return i,
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        match self.nodes[self.route(x)] {
            Node::Leaf { leaf } => leaf,
            Node::Split { .. } => unreachable!("route ends at a leaf"),
        }
    }

    fn max_feature(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf { .. } => None,
            })
            .max()
    }
}

/// Column-major feature matrix with per-column row orderings.
pub struct ColumnData {
    columns: Vec<Vec<f64>>,
    sorted: Vec<Vec<u32>>,
}

impl ColumnData {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        if width == 0 {
            return Err(Error::invalid("feature set is empty"));
        }
        let mut columns = vec![Vec::with_capacity(rows.len()); width];
        for (r, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(Error::DimensionMismatch {
                    expected: format!("{width} features"),
                    found: format!("{} in row {r}", row.len()),
                });
            }
            for (c, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::invalid(format!("non-finite feature value at row {r}, column {c}")));
                }
                columns[c].push(v);
            }
        }
        let sorted = columns
            .iter()
            .map(|col| {
                let mut idx: Vec<u32> = (0..col.len() as u32).collect();
                idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
                idx
            })
            .collect();
        Ok(ColumnData { columns, sorted })
    }

    pub fn n_rows(&self) -> usize {
        self.columns[0].len()
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }
}

struct BestSplit {
    gain: f64,
    feature: usize,
    threshold: f64,
}

struct TreeBuilder<'a> {
    data: &'a ColumnData,
    grad: &'a [f64],
    hess: &'a [f64],
    params: TreeParams,
    nodes: Vec<Node>,
    go_left: Vec<bool>,
}

impl TreeBuilder<'_> {
    fn build(&mut self, sorted: Vec<Vec<u32>>, depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { leaf: 0.0 });

        let rows = &sorted[0];
        let (g, h) = rows.iter().fold((0.0, 0.0), |(g, h), &r| {
            (g + self.grad[r as usize], h + self.hess[r as usize])
        });

        if depth < self.params.max_depth {
            if let Some(best) = self.find_split(&sorted, g, h) {
                let column = &self.data.columns[best.feature];
                for &r in rows {
                    self.go_left[r as usize] = column[r as usize] <= best.threshold;
                }
                let (left, right): (Vec<_>, Vec<_>) = sorted
                    .into_iter()
                    .map(|list| list.into_iter().partition::<Vec<u32>, _>(|&r| self.go_left[r as usize]))
                    .unzip();
                let left_id = self.build(left, depth + 1);
                let right_id = self.build(right, depth + 1);
                self.nodes[id] = Node::Split {
                    feature: best.feature,
                    threshold: best.threshold,
                    left: left_id,
                    right: right_id,
                    gain: best.gain,
                };
                return id;
            }
        }
        self.nodes[id] = Node::Leaf {
            leaf: leaf_weight(g, h, self.params.lambda) * self.params.shrinkage,
        };
        id
    }

    /// Exact greedy search. Features are scanned in index order and
    /// thresholds in ascending order, keeping only strict improvements, so
    /// ties go to the lower feature and then the lower threshold.
    fn find_split(&self, sorted: &[Vec<u32>], g: f64, h: f64) -> Option<BestSplit> {
        let TreeParams {
            lambda,
            gamma,
            min_child_weight,
            ..
        } = self.params;
        let mut best: Option<BestSplit> = None;
        for (feature, list) in sorted.iter().enumerate() {
            let column = &self.data.columns[feature];
            let (mut gl, mut hl) = (0.0, 0.0);
            for pair in list.windows(2) {
                let (r, next) = (pair[0] as usize, pair[1] as usize);
                gl += self.grad[r];
                hl += self.hess[r];
                if column[r] == column[next] {
                    continue;
                }
                let (gr, hr) = (g - gl, h - hl);
                if hl < min_child_weight || hr < min_child_weight {
                    continue;
                }
                let gain = split_gain(gl, hl, gr, hr, lambda, gamma);
                if gain > 0.0 && best.as_ref().is_none_or(|b| gain > b.gain) {
                    best = Some(BestSplit {
                        gain,
                        feature,
                        threshold: midpoint(column[r], column[next]),
                    });
                }
            }
        }
        best
    }
}

/// A cut strictly between two adjacent distinct values, falling back to the
/// lower one when they are neighbouring floats.
fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = 0.5 * lo + 0.5 * hi;
    if m >= lo && m < hi {
        m
    } else {
        lo
    }
}

/// Fits a single tree to per-row gradient statistics.
pub fn fit_tree(data: &ColumnData, grad: &[f64], hess: &[f64], params: &TreeParams) -> RegressionTree {
    assert_eq!(grad.len(), data.n_rows());
    assert_eq!(hess.len(), data.n_rows());
    let mut builder = TreeBuilder {
        data,
        grad,
        hess,
        params: *params,
        nodes: Vec::new(),
        go_left: vec![false; data.n_rows()],
    };
    builder.build(data.sorted.clone(), 0);
    RegressionTree { nodes: builder.nodes }
}

pub fn softmax(margins: &[f64]) -> Vec<f64> {
    let max = margins.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = margins.iter().map(|m| (m - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Trained multiclass ensemble: `rounds[k][c]` is the tree added for class
/// `c` in boosting round `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoostedEnsemble {
    classes: Vec<String>,
    feature_names: Vec<String>,
    learning_rate: f64,
    gamma: f64,
    lambda: f64,
    base_score: Vec<f64>,
    rounds: Vec<Vec<RegressionTree>>,
}

impl BoostedEnsemble {
    pub fn new(
        classes: Vec<String>,
        feature_names: Vec<String>,
        base_score: Vec<f64>,
        learning_rate: f64,
        gamma: f64,
        lambda: f64,
    ) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::Model("ensemble needs at least one class".into()));
        }
        if base_score.len() != classes.len() {
            return Err(Error::Model(format!(
                "{} base scores for {} classes",
                base_score.len(),
                classes.len()
            )));
        }
        if base_score.iter().any(|b| !b.is_finite()) {
            return Err(Error::Model("base scores must be finite".into()));
        }
        if !(learning_rate > 0.0 && learning_rate <= 1.0) || !(gamma >= 0.0) || !(lambda >= 0.0) {
            return Err(Error::Model("hyperparameters out of range".into()));
        }
        Ok(BoostedEnsemble {
            classes,
            feature_names,
            learning_rate,
            gamma,
            lambda,
            base_score,
            rounds: Vec::new(),
        })
    }

    /// Appends one round of per-class trees.
    pub fn push_round(&mut self, trees: Vec<RegressionTree>) -> Result<()> {
        if trees.len() != self.classes.len() {
            return Err(Error::Model(format!(
                "round has {} trees for {} classes",
                trees.len(),
                self.classes.len()
            )));
        }
        if let Some(f) = trees.iter().filter_map(RegressionTree::max_feature).max() {
            if f >= self.feature_names.len() {
                return Err(Error::Model(format!("tree splits on feature {f} beyond width")));
            }
        }
        self.rounds.push(trees);
        Ok(())
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn width(&self) -> usize {
        self.feature_names.len()
    }

    pub fn base_score(&self) -> &[f64] {
        &self.base_score
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn n_rounds(&self) -> usize {
        self.rounds.len()
    }

    pub fn rounds(&self) -> &[Vec<RegressionTree>] {
        &self.rounds
    }

    /// The ensemble restricted to its first `rounds` rounds.
    pub fn truncated(&self, rounds: usize) -> Self {
        let mut m = self.clone();
        m.rounds.truncate(rounds);
        m
    }

    /// `(feature, gain)` for every split node in the ensemble.
    pub fn split_gains(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.rounds.iter().flatten().flat_map(|t| {
            t.nodes.iter().filter_map(|n| match *n {
                Node::Split { feature, gain, .. } => Some((feature, gain)),
                Node::Leaf { .. } => None,
            })
        })
    }

    fn check_width(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.width() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} features", self.width()),
                found: x.len().to_string(),
            });
        }
        Ok(())
    }

    pub fn predict_margin(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_width(x)?;
        let mut margins = self.base_score.clone();
        for round in &self.rounds {
            for (m, tree) in margins.iter_mut().zip(round) {
                *m += tree.predict(x);
            }
        }
        Ok(margins)
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.predict_margin(x)?))
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.predict_margin(x)?))
    }

    /// Mean multiclass log-loss over a labeled dataset.
    pub fn log_loss(&self, data: &LabeledDataset) -> Result<f64> {
        let mut sum = 0.0;
        for (row, &label) in data.rows().iter().zip(data.labels()) {
            let p = self.predict_proba(row)?;
            sum -= p[label].max(f64::MIN_POSITIVE).ln();
        }
        Ok(sum / data.n_rows() as f64)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&ModelJson::from(self)).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: ModelJson = serde_json::from_str(text).map_err(|e| Error::format("model", e.to_string()))?;
        raw.try_into()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// On-disk layout. Trees are listed round-major: tree `t` belongs to class
/// `t % classes.len()`.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelJson {
    version: u32,
    classes: Vec<String>,
    feature_names: Vec<String>,
    learning_rate: f64,
    gamma: f64,
    lambda: f64,
    base_score: Vec<f64>,
    trees: Vec<Vec<Node>>,
}

impl From<&BoostedEnsemble> for ModelJson {
    fn from(m: &BoostedEnsemble) -> Self {
        ModelJson {
            version: MODEL_VERSION,
            classes: m.classes.clone(),
            feature_names: m.feature_names.clone(),
            learning_rate: m.learning_rate,
            gamma: m.gamma,
            lambda: m.lambda,
            base_score: m.base_score.clone(),
            trees: m.rounds.iter().flatten().map(|t| t.nodes.clone()).collect(),
        }
    }
}

impl TryFrom<ModelJson> for BoostedEnsemble {
    type Error = Error;

    fn try_from(raw: ModelJson) -> Result<Self> {
        if raw.version != MODEL_VERSION {
            return Err(Error::Model(format!(
                "unsupported model version {} (expected {MODEL_VERSION})",
                raw.version
            )));
        }
        let mut model = BoostedEnsemble::new(
            raw.classes,
            raw.feature_names,
            raw.base_score,
            raw.learning_rate,
            raw.gamma,
            raw.lambda,
        )?;
        let k = model.classes.len();
        if !raw.trees.len().is_multiple_of(k) {
            return Err(Error::Model(format!(
                "{} trees do not divide into rounds of {k} classes",
                raw.trees.len()
            )));
        }
        let mut trees = raw.trees.into_iter();
        while trees.len() > 0 {
            let round = trees
                .by_ref()
                .take(k)
                .map(RegressionTree::from_nodes)
                .collect::<Result<Vec<_>>>()?;
            model.push_round(round)?;
        }
        Ok(model)
    }
}

/// Training with the per-round training log-loss; entry 0 is the loss of the
/// prior alone.
pub fn train_traced(data: &LabeledDataset, cfg: &TrainConfig) -> Result<(BoostedEnsemble, Vec<f64>)> {
    cfg.validate()?;
    let n = data.n_rows();
    let k = data.n_classes();
    if n < 2 {
        return Err(Error::invalid(format!("training needs at least 2 rows, got {n}")));
    }
    let counts = data.class_counts();
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::invalid("training needs at least two distinct labels"));
    }
    if let Some(c) = counts.iter().position(|&c| c == 0) {
        return Err(Error::invalid(format!(
            "class {:?} has no training rows",
            data.class_names()[c]
        )));
    }
    let columns = ColumnData::from_rows(data.rows())?;

    let base: Vec<f64> = counts.iter().map(|&c| (c as f64 / n as f64).ln()).collect();
    let mut model = BoostedEnsemble::new(
        data.class_names().to_vec(),
        data.feature_names().to_vec(),
        base.clone(),
        cfg.learning_rate,
        cfg.gamma,
        cfg.lambda,
    )?;
    let params = cfg.tree_params();
    let labels = data.labels();
    let mut margins: Vec<Vec<f64>> = vec![base; n];
    let loss = |margins: &[Vec<f64>]| {
        margins
            .iter()
            .zip(labels)
            .map(|(m, &y)| -softmax(m)[y].max(f64::MIN_POSITIVE).ln())
            .sum::<f64>()
            / n as f64
    };
    let mut trace = vec![loss(&margins)];

    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    for _ in 0..cfg.rounds {
        let probs: Vec<Vec<f64>> = margins.iter().map(|m| softmax(m)).collect();
        let mut round = Vec::with_capacity(k);
        for class in 0..k {
            for (((g, h), row), &label) in grad.iter_mut().zip(hess.iter_mut()).zip(&probs).zip(labels) {
                let p = row[class];
                let y = if label == class { 1.0 } else { 0.0 };
                *g = p - y;
                *h = (p * (1.0 - p)).max(1e-16);
            }
            round.push(fit_tree(&columns, &grad, &hess, &params));
        }
        for (row, m) in data.rows().iter().zip(margins.iter_mut()) {
            for (class, tree) in round.iter().enumerate() {
                m[class] += tree.predict(row);
            }
        }
        model.push_round(round)?;
        trace.push(loss(&margins));
    }
    Ok((model, trace))
}

pub fn train(data: &LabeledDataset, cfg: &TrainConfig) -> Result<BoostedEnsemble> {
    train_traced(data, cfg).map(|(m, _)| m)
}
