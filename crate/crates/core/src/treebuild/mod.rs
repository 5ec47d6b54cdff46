//! Token graphs and per-layer maximum spanning trees.
//!
//! Token `i` is connected to every later token `j > i` with weight
//! `1 / (1 + ||h_i - h_j||)`; backward edges and self-loops carry no weight.
//! The only node that can reach every other node along positive edges is the
//! first token, so every tree is rooted at position 0.
//!
//! Node ids are 0-based here. The JSON and S-expression renderings use the
//! 1-based positions that appear in printed reports.

mod edmonds;
mod sexpr;

use std::collections::BTreeSet;
use std::sync::Arc;

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use edmonds::max_arborescence;
pub use sexpr::{parse_sexpr, sanitize_token, ParsedTree};

/// Dense forward-only weight matrix over `n` tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGraph {
    weights: Array2<f64>,
}

impl TokenGraph {
    /// Wraps a weight matrix, checking that exactly the forward entries
    /// (`i < j`) are positive, finite and at most 1.
    pub fn from_weights(weights: Array2<f64>) -> Result<Self> {
        let (rows, cols) = weights.dim();
        if rows != cols {
            return Err(Error::DimensionMismatch(rows, cols));
        }
        for ((i, j), &w) in weights.indexed_iter() {
            let ok = if i < j {
                w.is_finite() && w > 0.0 && w <= 1.0
            } else {
                w == 0.0
            };
            if !ok {
                return Err(Error::InvalidArgument(format!(
                    "weight {w} at ({i}, {j}) breaks the forward-only invariant"
                )));
            }
        }
        Ok(TokenGraph { weights })
    }

    pub fn size(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weight(&self, from: usize, to: usize) -> f64 {
        self.weights[(from, to)]
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }
}

fn l2_distance(a: ArrayView1<'_, f32>, b: ArrayView1<'_, f32>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| {
            let diff = f64::from(x) - f64::from(y);
            diff * diff
        })
        .sum::<f64>()
        .sqrt()
}

/// Reciprocal-distance similarity of two token states, gated to forward edges.
pub fn edge_weight(
    h_i: ArrayView1<'_, f32>,
    h_j: ArrayView1<'_, f32>,
    i: usize,
    j: usize,
) -> Result<f64> {
    if h_i.len() != h_j.len() {
        return Err(Error::DimensionMismatch(h_i.len(), h_j.len()));
    }
    if h_i.iter().chain(h_j.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    if i >= j {
        return Ok(0.0);
    }
    Ok(1.0 / (1.0 + l2_distance(h_i, h_j)))
}

/// Builds the complete forward token graph for one layer (`n x d`).
pub fn build_graph(layer: ArrayView2<'_, f32>) -> Result<TokenGraph> {
    if layer.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let n = layer.nrows();
    let mut weights = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            weights[(i, j)] = 1.0 / (1.0 + l2_distance(layer.row(i), layer.row(j)));
        }
    }
    Ok(TokenGraph { weights })
}

/// A forward spanning arborescence over one layer's tokens, rooted at token 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerTree {
    parent: Vec<Option<usize>>,
    tokens: Arc<[String]>,
}

impl LayerTree {
    /// Checks the forward-arborescence invariants: node 0 is the only root and
    /// every other node's parent precedes it.
    pub fn new(parent: Vec<Option<usize>>, tokens: Arc<[String]>) -> Result<Self> {
        if parent.is_empty() {
            return Err(Error::InvalidTree("empty tree".into()));
        }
        if parent.len() != tokens.len() {
            return Err(Error::InvalidTree(format!(
                "{} parents for {} tokens",
                parent.len(),
                tokens.len()
            )));
        }
        if parent[0].is_some() {
            return Err(Error::InvalidTree("node 0 must be the root".into()));
        }
        for (i, p) in parent.iter().enumerate().skip(1) {
            match p {
                Some(p) if *p < i => {}
                Some(p) => {
                    return Err(Error::InvalidTree(format!(
                        "parent {p} of node {i} is not earlier"
                    )))
                }
                None => return Err(Error::InvalidTree(format!("second root at node {i}"))),
            }
        }
        Ok(LayerTree { parent, tokens })
    }

    /// Tree with token labels `"t0", "t1", ...`, handy for structure-only work.
    pub fn unlabeled(parent: Vec<Option<usize>>) -> Result<Self> {
        let tokens: Arc<[String]> = (0..parent.len()).map(|i| format!("t{i}")).collect();
        LayerTree::new(parent, tokens)
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn parent(&self, node: usize) -> Option<usize> {
        self.parent[node]
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parent
    }

    pub fn tokens(&self) -> &Arc<[String]> {
        &self.tokens
    }

    /// Child lists in ascending token order.
    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut children = vec![Vec::new(); self.len()];
        for (v, p) in self.parent.iter().enumerate() {
            if let Some(p) = p {
                children[*p].push(v);
            }
        }
        children
    }

    /// Report label `"<1-based position>_<token>"` with parentheses in the
    /// token text turned into square brackets.
    pub fn label(&self, node: usize) -> String {
        format!("{}_{}", node + 1, sanitize_token(&self.tokens[node]))
    }

    pub fn total_weight(&self, graph: &TokenGraph) -> f64 {
        self.parent
            .iter()
            .enumerate()
            .filter_map(|(v, p)| p.map(|p| graph.weight(p, v)))
            .sum()
    }

    /// `(child, parent)` pairs, one per non-root node.
    pub fn edge_set(&self) -> BTreeSet<(usize, usize)> {
        self.parent
            .iter()
            .enumerate()
            .filter_map(|(v, p)| p.map(|p| (v, p)))
            .collect()
    }

    pub fn to_sexpr(&self) -> String {
        sexpr::render(self)
    }

    /// Rebuilds a tree from [`LayerTree::to_sexpr`] output. Token text comes
    /// back in its bracket-sanitized form.
    pub fn from_sexpr(text: &str) -> Result<Self> {
        sexpr::to_layer_tree(&parse_sexpr(text)?)
    }

    pub fn to_json(&self) -> TreeJson {
        TreeJson {
            root: 1,
            parent: self.parent.iter().map(|p| p.map_or(0, |p| p + 1)).collect(),
            tokens: self.tokens.to_vec(),
        }
    }

    pub fn from_json(json: &TreeJson) -> Result<Self> {
        if json.root != 1 {
            return Err(Error::InvalidTree(format!(
                "root must be 1, got {}",
                json.root
            )));
        }
        let parent = json.parent.iter().map(|&p| p.checked_sub(1)).collect();
        LayerTree::new(parent, json.tokens.iter().cloned().collect())
    }
}

/// JSON form of a tree: 1-based positions with `0` marking the root's parent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeJson {
    pub root: usize,
    pub parent: Vec<usize>,
    pub tokens: Vec<String>,
}

/// Maximum spanning arborescence of a token graph, computed with the general
/// Chu-Liu/Edmonds routine. Backward edges are not candidates at all.
pub fn max_spanning_tree(graph: &TokenGraph, tokens: Arc<[String]>) -> Result<LayerTree> {
    let n = graph.size();
    let scores = Array2::from_shape_fn((n, n), |(i, j)| {
        if i < j {
            graph.weight(i, j)
        } else {
            f64::NEG_INFINITY
        }
    });
    let parent = max_arborescence(scores.view(), 0)?;
    LayerTree::new(parent, tokens)
}

/// Forward fast path: each token takes its heaviest incoming edge, ties going
/// to the nearest preceding token.
pub fn greedy_forward_tree(graph: &TokenGraph, tokens: Arc<[String]>) -> Result<LayerTree> {
    let n = graph.size();
    let mut parent = vec![None; n];
    for (j, slot) in parent.iter_mut().enumerate().skip(1) {
        let mut best = 0;
        for i in 1..j {
            if graph.weight(i, j) >= graph.weight(best, j) {
                best = i;
            }
        }
        *slot = Some(best);
    }
    LayerTree::new(parent, tokens)
}

/// Tree of one layer slice using the forward fast path.
pub fn layer_tree(layer: ArrayView2<'_, f32>, tokens: Arc<[String]>) -> Result<LayerTree> {
    greedy_forward_tree(&build_graph(layer)?, tokens)
}
