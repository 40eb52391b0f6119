//! CART regression and classification trees.
//!
//! Trees are grown greedily (variance reduction or Gini gain), then pruned
//! back along the cost-complexity sequence using held-out folds and
//! the one-standard-error rule. Everything is deterministic and independent
//! of the order of the input rows.

use std::cmp::Ordering;

use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{AmirlError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeControls {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// A split must reduce the impurity by at least `cp` times the root
    /// impurity.
    pub cp: f64,
    /// Rows are split into this many folds for cost-complexity pruning;
    /// values below 2 disable pruning.
    pub cv_folds: usize,
    /// How many folds are held out in turn. 1 is a single internal
    /// train/validation split; `cv_folds` is full K-fold cross-validation.
    pub cv_rounds: usize,
}

impl Default for TreeControls {
    fn default() -> Self {
        Self {
            max_depth: 10,
            min_leaf: 5,
            cp: 0.01,
            cv_folds: 3,
            cv_rounds: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeKind {
    Regression,
    Classification,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Split {
    var: usize,
    threshold: f64,
    left: usize,
    right: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Node {
    split: Option<Split>,
    /// Mean response (regression) or share of ones (classification).
    value: f64,
    n: usize,
    /// Resubstitution risk used for pruning: SSE or misclassified count.
    risk: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    kind: TreeKind,
    nodes: Vec<Node>,
    /// `leaf_ordinal[node]` is `Some(k)` for the k-th leaf in node order.
    leaf_ordinal: Vec<Option<usize>>,
    leaf_nodes: Vec<usize>,
}

impl DecisionTree {
    fn from_nodes(kind: TreeKind, nodes: Vec<Node>) -> Self {
        let mut leaf_ordinal = vec![None; nodes.len()];
        let mut leaf_nodes = Vec::new();
        for (id, node) in nodes.iter().enumerate() {
            if node.split.is_none() {
                leaf_ordinal[id] = Some(leaf_nodes.len());
                leaf_nodes.push(id);
            }
        }
        Self {
            kind,
            nodes,
            leaf_ordinal,
            leaf_nodes,
        }
    }

    pub fn kind(&self) -> TreeKind {
        self.kind
    }

    pub fn n_leaves(&self) -> usize {
        self.leaf_nodes.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    fn route(&self, row: ArrayView1<f64>) -> usize {
        let mut id = 0;
        while let Some(s) = self.nodes[id].split {
            id = if row[s.var] <= s.threshold { s.left } else { s.right };
        }
        id
    }

    /// Ordinal (0..n_leaves) of the leaf a row lands in.
    pub fn leaf_of(&self, row: ArrayView1<f64>) -> usize {
        self.leaf_ordinal[self.route(row)].expect("routing ends at a leaf")
    }

    pub fn predict(&self, row: ArrayView1<f64>) -> f64 {
        self.nodes[self.route(row)].value
    }

    pub fn leaf_values(&self) -> Vec<f64> {
        self.leaf_nodes.iter().map(|&id| self.nodes[id].value).collect()
    }

    pub fn leaf_sizes(&self) -> Vec<usize> {
        self.leaf_nodes.iter().map(|&id| self.nodes[id].n).collect()
    }

    /// Replaces the stored prediction of every leaf (by ordinal).
    pub fn set_leaf_values(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.leaf_nodes.len() {
            return Err(AmirlError::DimensionMismatch(format!(
                "{} leaf values for {} leaves",
                values.len(),
                self.leaf_nodes.len()
            )));
        }
        for (&id, &v) in self.leaf_nodes.iter().zip(values) {
            self.nodes[id].value = v;
        }
        Ok(())
    }

    /// Variable index and threshold of the root split, if any.
    pub fn root_split(&self) -> Option<(usize, f64)> {
        self.nodes[0].split.map(|s| (s.var, s.threshold))
    }

    /// Structural fingerprint: (var, threshold bits) per internal node and
    /// value bits per leaf, in node order.
    pub fn structure(&self) -> Vec<(Option<(usize, u64)>, u64)> {
        self.nodes
            .iter()
            .map(|n| (n.split.map(|s| (s.var, s.threshold.to_bits())), n.value.to_bits()))
            .collect()
    }
}

/// Sum in ascending order, so the result does not depend on row order.
fn ordered_sum(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v.iter().sum()
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    x: f64,
    y: f64,
    row: usize,
}

/// Column-major copy of the training data plus growth settings.
struct Grower {
    cols: Vec<Vec<f64>>,
    y: Vec<f64>,
    kind: TreeKind,
    controls: TreeControls,
    /// `inv[k] = 1 / k`
    inv: Vec<f64>,
}

/// Maps a float to an integer with the same total order.
fn order_key(v: f64) -> u64 {
    let b = v.to_bits();
    if b >> 63 == 1 {
        !b
    } else {
        b | (1 << 63)
    }
}

impl Grower {
    fn new(x: ArrayView2<f64>, y: ArrayView1<f64>, kind: TreeKind, controls: TreeControls) -> Self {
        Self {
            cols: x.columns().into_iter().map(|c| c.to_vec()).collect(),
            y: y.to_vec(),
            kind,
            controls,
            inv: (0..=y.len()).map(|k| 1.0 / k as f64).collect(),
        }
    }

    fn node_stats(&self, rows: &[usize]) -> Node {
        let n = rows.len();
        let ys: Vec<f64> = rows.iter().map(|&r| self.y[r]).collect();
        match self.kind {
            TreeKind::Regression => {
                let mean = ordered_sum(ys.clone()) / n as f64;
                let sse = ordered_sum(ys.iter().map(|v| (v - mean) * (v - mean)).collect());
                Node {
                    split: None,
                    value: mean,
                    n,
                    risk: sse,
                }
            }
            TreeKind::Classification => {
                let ones = ys.iter().filter(|v| **v == 1.0).count();
                Node {
                    split: None,
                    value: ones as f64 / n as f64,
                    n,
                    risk: ones.min(n - ones) as f64,
                }
            }
        }
    }

    /// Impurity of a node from its sufficient statistics; `inv_n = 1/n`.
    fn impurity(&self, n: f64, inv_n: f64, s1: f64, s2: f64) -> f64 {
        match self.kind {
            TreeKind::Regression => (s2 - s1 * s1 * inv_n).max(0.0),
            // n * Gini = 2 n1 n0 / n
            TreeKind::Classification => 2.0 * s1 * (n - s1) * inv_n,
        }
    }

    /// Order-independent impurity of an already summarised node.
    fn node_impurity(&self, node: &Node) -> f64 {
        match self.kind {
            TreeKind::Regression => node.risk,
            TreeKind::Classification => {
                let n = node.n as f64;
                2.0 * node.value * n * (1.0 - node.value)
            }
        }
    }

    fn is_pure(&self, rows: &[usize], node: &Node) -> bool {
        match self.kind {
            TreeKind::Regression => {
                let scale = node.value.abs().max(1.0);
                node.risk <= rows.len() as f64 * 1e-20 * scale * scale
            }
            TreeKind::Classification => node.risk == 0.0,
        }
    }

    /// Node rows sorted by (x_var, y), one list per variable.
    fn presort(&self, rows: &[usize]) -> Vec<Vec<Entry>> {
        self.cols
            .iter()
            .map(|col| {
                let mut keyed: Vec<(u64, u64, usize)> = rows
                    .iter()
                    .map(|&r| (order_key(col[r]), order_key(self.y[r]), r))
                    .collect();
                keyed.sort_unstable();
                keyed
                    .into_iter()
                    .map(|k| Entry {
                        x: col[k.2],
                        y: self.y[k.2],
                        row: k.2,
                    })
                    .collect()
            })
            .collect()
    }

    /// Best split of a node given its rows presorted per variable.
    fn best_split(&self, sorted: &[Vec<Entry>], parent_impurity: f64, min_gain: f64) -> Option<(usize, f64, f64)> {
        let n = sorted.first().map_or(0, |s| s.len());
        let min_leaf = self.controls.min_leaf.max(1);
        let mut best: Option<(usize, f64, f64)> = None;
        for (var, order) in sorted.iter().enumerate() {
            let (mut t1, mut t2) = (0.0, 0.0);
            for e in order {
                t1 += e.y;
                t2 += e.y * e.y;
            }
            let (mut l1, mut l2) = (0.0, 0.0);
            for k in 0..n - 1 {
                let yr = order[k].y;
                l1 += yr;
                l2 += yr * yr;
                let nl = k + 1;
                if nl < min_leaf {
                    continue;
                }
                let nr = n - nl;
                if nr < min_leaf {
                    break;
                }
                let xa = order[k].x;
                let xb = order[k + 1].x;
                if xa == xb {
                    continue;
                }
                let child = self.impurity(nl as f64, self.inv[nl], l1, l2)
                    + self.impurity(nr as f64, self.inv[nr], t1 - l1, t2 - l2);
                let gain = parent_impurity - child;
                if gain < min_gain || gain <= 1e-12 * parent_impurity {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((_, _, g)) => gain > g,
                };
                if better {
                    let mut thr = xa + (xb - xa) / 2.0;
                    if !(thr >= xa && thr < xb) {
                        thr = xa;
                    }
                    best = Some((var, thr, gain));
                }
            }
        }
        best
    }

    /// Grows from the root's rows already sorted per variable.
    fn grow_sorted(&self, sorted: Vec<Vec<Entry>>, min_gain: f64) -> Vec<Node> {
        let rows_of = |list: &[Entry]| list.iter().map(|e| e.row).collect::<Vec<_>>();
        let mut nodes = vec![self.node_stats(&rows_of(&sorted[0]))];
        let mut goes_left = vec![false; self.y.len()];
        let mut stack = vec![(0usize, sorted, 0usize)];
        while let Some((id, sorted, depth)) = stack.pop() {
            let node = nodes[id].clone();
            let rows = rows_of(&sorted[0]);
            if depth >= self.controls.max_depth
                || rows.len() < 2 * self.controls.min_leaf.max(1)
                || self.is_pure(&rows, &node)
            {
                continue;
            }
            let parent = self.node_impurity(&node);
            let Some((var, threshold, _)) = self.best_split(&sorted, parent, min_gain) else {
                continue;
            };
            for &r in &rows {
                goes_left[r] = self.cols[var][r] <= threshold;
            }
            let mut left_sorted = Vec::with_capacity(sorted.len());
            let mut right_sorted = Vec::with_capacity(sorted.len());
            for order in &sorted {
                let (l, r): (Vec<Entry>, Vec<Entry>) = order.iter().partition(|e| goes_left[e.row]);
                left_sorted.push(l);
                right_sorted.push(r);
            }
            let left = nodes.len();
            nodes.push(self.node_stats(&rows_of(&left_sorted[0])));
            let right = nodes.len();
            nodes.push(self.node_stats(&rows_of(&right_sorted[0])));
            nodes[id].split = Some(Split {
                var,
                threshold,
                left,
                right,
            });
            // right pushed first so the left subtree is expanded first
            stack.push((right, right_sorted, depth + 1));
            stack.push((left, left_sorted, depth + 1));
        }
        nodes
    }
}

/// Cost-complexity sequence: `(alpha_k, collapsed_k)` with increasing alpha,
/// starting from the unpruned tree and ending at the root alone.
fn pruning_sequence(nodes: &[Node]) -> Vec<(f64, Vec<bool>)> {
    let mut collapsed = vec![false; nodes.len()];
    let mut seq = vec![(0.0, collapsed.clone())];

    // post-order subtree (risk, leaves)
    fn subtree(nodes: &[Node], collapsed: &[bool], id: usize, out: &mut Vec<(f64, usize)>) -> (f64, usize) {
        let res = match nodes[id].split {
            Some(s) if !collapsed[id] => {
                let (rl, ll) = subtree(nodes, collapsed, s.left, out);
                let (rr, lr) = subtree(nodes, collapsed, s.right, out);
                (rl + rr, ll + lr)
            }
            _ => (nodes[id].risk, 1),
        };
        out[id] = res;
        res
    }

    loop {
        let mut stats = vec![(0.0, 0usize); nodes.len()];
        subtree(nodes, &collapsed, 0, &mut stats);
        // active internal nodes: reachable, not collapsed
        let mut active = Vec::new();
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            if let Some(s) = nodes[id].split {
                if !collapsed[id] {
                    active.push(id);
                    stack.push(s.left);
                    stack.push(s.right);
                }
            }
        }
        if active.is_empty() {
            break;
        }
        let g = |id: usize| {
            let (r_sub, leaves) = stats[id];
            ((nodes[id].risk - r_sub) / (leaves as f64 - 1.0)).max(0.0)
        };
        let alpha = active.iter().map(|&id| g(id)).fold(f64::INFINITY, f64::min);
        let cut = alpha * (1.0 + 1e-10) + 1e-300;
        for &id in &active {
            if g(id) <= cut {
                collapsed[id] = true;
            }
        }
        let last_alpha = seq.last().map(|s| s.0).unwrap_or(0.0);
        if alpha <= last_alpha && seq.len() > 1 {
            seq.last_mut().expect("non-empty").1 = collapsed.clone();
        } else {
            seq.push((alpha, collapsed.clone()));
        }
    }
    seq
}

fn predict_collapsed(nodes: &[Node], collapsed: &[bool], row: ArrayView1<f64>) -> f64 {
    let mut id = 0;
    loop {
        match nodes[id].split {
            Some(s) if !collapsed[id] => {
                id = if row[s.var] <= s.threshold { s.left } else { s.right };
            }
            _ => return nodes[id].value,
        }
    }
}

fn compact(nodes: &[Node], collapsed: &[bool]) -> Vec<Node> {
    let mut out: Vec<Node> = Vec::new();
    let mut stack: Vec<(usize, Option<(usize, bool)>)> = vec![(0, None)];
    while let Some((id, parent)) = stack.pop() {
        let new_id = out.len();
        let mut node = nodes[id].clone();
        let children = match node.split {
            Some(s) if !collapsed[id] => Some((s.left, s.right)),
            _ => {
                node.split = None;
                None
            }
        };
        out.push(node);
        if let Some((pid, is_left)) = parent {
            let s = out[pid].split.as_mut().expect("parent is internal");
            if is_left {
                s.left = new_id;
            } else {
                s.right = new_id;
            }
        }
        if let Some((l, r)) = children {
            stack.push((r, Some((new_id, false))));
            stack.push((l, Some((new_id, true))));
        }
    }
    out
}

fn row_error(kind: TreeKind, y: f64, pred: f64) -> f64 {
    match kind {
        TreeKind::Regression => (y - pred) * (y - pred),
        TreeKind::Classification => {
            let class = if pred >= 0.5 { 1.0 } else { 0.0 };
            if class == y {
                0.0
            } else {
                1.0
            }
        }
    }
}

/// Fold label per row, assigned from a canonical (content-based) row order.
fn canonical_folds(x: ArrayView2<f64>, y: ArrayView1<f64>, folds: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.sort_by(|&a, &b| {
        let mut ord = y[a].total_cmp(&y[b]);
        let mut j = 0;
        while ord == Ordering::Equal && j < x.ncols() {
            ord = x[[a, j]].total_cmp(&x[[b, j]]);
            j += 1;
        }
        ord
    });
    let mut fold = vec![0; y.len()];
    for (rank, &r) in order.iter().enumerate() {
        fold[r] = rank % folds;
    }
    fold
}

fn fit_tree(x: ArrayView2<f64>, y: ArrayView1<f64>, kind: TreeKind, controls: TreeControls) -> Result<DecisionTree> {
    let n = y.len();
    if n == 0 || x.nrows() != n {
        return Err(AmirlError::Input(format!(
            "tree needs matching non-empty inputs ({} rows, {} responses)",
            x.nrows(),
            n
        )));
    }
    if x.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
        return Err(AmirlError::Input("tree inputs must be finite".into()));
    }
    // Regression responses are centred so split sums do not lose precision
    // on large-mean data; node values are shifted back at the end.
    let shift = match kind {
        TreeKind::Regression => ordered_sum(y.to_vec()) / n as f64,
        TreeKind::Classification => 0.0,
    };
    let centred = y.mapv(|v| v - shift);
    let y = centred.view();
    let finish = |mut nodes: Vec<Node>| {
        for node in nodes.iter_mut() {
            node.value += shift;
        }
        DecisionTree::from_nodes(kind, nodes)
    };
    let rows: Vec<usize> = (0..n).collect();
    let grower = Grower::new(x, y, kind, controls);
    let root = grower.node_stats(&rows);
    let min_gain = controls.cp * grower.node_impurity(&root);
    if x.ncols() == 0 {
        return Ok(finish(vec![root]));
    }
    let full_sorted = grower.presort(&rows);
    let nodes = grower.grow_sorted(full_sorted.clone(), min_gain);

    if controls.cv_folds < 2 || n < 2 * controls.cv_folds || nodes.len() == 1 {
        return Ok(finish(nodes));
    }

    let seq = pruning_sequence(&nodes);
    let k = seq.len();
    let probe: Vec<f64> = (0..k)
        .map(|i| if i + 1 < k { (seq[i].0 * seq[i + 1].0).sqrt() } else { seq[i].0 })
        .collect();
    let folds = canonical_folds(x, y, controls.cv_folds);
    let mut err_sum = vec![0.0; k];
    let mut err_sq = vec![0.0; k];
    // Per-row errors are accumulated per fold in a fixed order.
    let rounds = controls.cv_rounds.clamp(1, controls.cv_folds);
    let mut validated = 0usize;
    for f in 0..rounds {
        let train: Vec<usize> = (0..n).filter(|&r| folds[r] != f).collect();
        let test: Vec<usize> = (0..n).filter(|&r| folds[r] == f).collect();
        validated += test.len();
        let fold_root = grower.node_impurity(&grower.node_stats(&train));
        let mut in_train = vec![false; n];
        for &r in &train {
            in_train[r] = true;
        }
        let fold_sorted: Vec<Vec<Entry>> = full_sorted
            .iter()
            .map(|o| o.iter().copied().filter(|e| in_train[e.row]).collect())
            .collect();
        // fold trees reuse the full data, restricted to the training rows
        let fnodes = grower.grow_sorted(fold_sorted, controls.cp * fold_root);
        let fseq = pruning_sequence(&fnodes);
        for (i, &alpha) in probe.iter().enumerate() {
            let idx = fseq
                .iter()
                .rposition(|(a, _)| *a <= alpha)
                .unwrap_or(0);
            let coll = &fseq[idx].1;
            for &r in &test {
                let e = row_error(kind, y[r], predict_collapsed(&fnodes, coll, x.row(r)));
                err_sum[i] += e;
                err_sq[i] += e * e;
            }
        }
    }
    let nf = validated as f64;
    let xerr: Vec<f64> = err_sum.iter().map(|s| s / nf).collect();
    let se: Vec<f64> = (0..k)
        .map(|i| {
            let var = ((err_sq[i] - err_sum[i] * err_sum[i] / nf) / (nf - 1.0)).max(0.0);
            (var / nf).sqrt()
        })
        .collect();
    let best = (0..k)
        .min_by(|&a, &b| xerr[a].total_cmp(&xerr[b]).then(a.cmp(&b)))
        .expect("non-empty sequence");
    let limit = xerr[best] + se[best];
    let chosen = (0..k).rev().find(|&i| xerr[i] <= limit).unwrap_or(best);
    Ok(finish(compact(&nodes, &seq[chosen].1)))
}

/// Regression tree by greedy variance reduction with held-out pruning.
pub fn fit_regression_tree(x: ArrayView2<f64>, y: ArrayView1<f64>, controls: TreeControls) -> Result<DecisionTree> {
    fit_tree(x, y, TreeKind::Regression, controls)
}

/// Classification tree (Gini) for a 0/1 response; leaves hold the share of
/// ones.
pub fn fit_classification_tree(x: ArrayView2<f64>, y: ArrayView1<f64>, controls: TreeControls) -> Result<DecisionTree> {
    if let Some(v) = y.iter().find(|v| **v != 0.0 && **v != 1.0) {
        return Err(AmirlError::Input(format!(
            "classification response must be 0/1, found {v}"
        )));
    }
    fit_tree(x, y, TreeKind::Classification, controls)
}

/// Share of ones in the leaf the row lands in.
pub fn predict_class(tree: &DecisionTree, row: ArrayView1<f64>) -> f64 {
    tree.predict(row)
}

/// Hard class: 1 when the leaf share is at least 0.5.
pub fn predict_hard_class(tree: &DecisionTree, row: ArrayView1<f64>) -> f64 {
    if tree.predict(row) >= 0.5 {
        1.0
    } else {
        0.0
    }
}
