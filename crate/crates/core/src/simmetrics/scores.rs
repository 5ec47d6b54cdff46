//! Scalar inter-layer scores.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::treebuild::LayerTree;

/// Zero-diagonal linear Gram matrix with the sums the unbiased HSIC needs.
#[derive(Debug, Clone)]
pub struct CenteredGram {
    gram: Array2<f64>,
    row_sums: Array1<f64>,
    total: f64,
}

impl CenteredGram {
    pub fn new(h: ArrayView2<'_, f32>) -> Self {
        let h = h.mapv(f64::from);
        let mut gram = h.dot(&h.t());
        gram.diag_mut().fill(0.0);
        let row_sums = gram.sum_axis(ndarray::Axis(1));
        let total = row_sums.sum();
        CenteredGram {
            gram,
            row_sums,
            total,
        }
    }

    pub fn size(&self) -> usize {
        self.gram.nrows()
    }
}

/// Unbiased HSIC estimator on two zero-diagonal Gram matrices.
pub fn hsic_unbiased(k: &CenteredGram, l: &CenteredGram) -> Result<f64> {
    let n = k.size();
    if l.size() != n {
        return Err(Error::NodeCountMismatch(n, l.size()));
    }
    if n < 4 {
        return Err(Error::TooFewTokens { needed: 4, got: n });
    }
    let nf = n as f64;
    // both matrices are symmetric, so tr(KL) is the elementwise product sum
    // and 1'KL1 is the dot product of the row sums
    let trace: f64 = k.gram.iter().zip(l.gram.iter()).map(|(a, b)| a * b).sum();
    let cross = k.row_sums.dot(&l.row_sums);
    Ok(
        (trace + k.total * l.total / ((nf - 1.0) * (nf - 2.0)) - 2.0 / (nf - 2.0) * cross)
            / (nf * (nf - 3.0)),
    )
}

pub(crate) fn cka_from_grams(k: &CenteredGram, l: &CenteredGram) -> Result<f64> {
    let denom = hsic_unbiased(k, k)? * hsic_unbiased(l, l)?;
    if denom.is_nan() || denom <= 0.0 {
        return Err(Error::Degenerate(format!(
            "self-HSIC product {denom} is not positive"
        )));
    }
    Ok(hsic_unbiased(k, l)? / denom.sqrt())
}

/// Linear CKA with the unbiased HSIC estimator. Needs at least 4 tokens.
/// Finite-sample values may fall slightly outside `[0, 1]`; they are not clamped.
pub fn score_cka(ha: ArrayView2<'_, f32>, hb: ArrayView2<'_, f32>) -> Result<f64> {
    if ha.nrows() != hb.nrows() {
        return Err(Error::NodeCountMismatch(ha.nrows(), hb.nrows()));
    }
    if ha.iter().chain(hb.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    cka_from_grams(&CenteredGram::new(ha), &CenteredGram::new(hb))
}

/// How the positionwise cosines of two layers are combined.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum CosBaseMode {
    /// Mean over tokens, in `[-1, 1]`.
    #[default]
    Mean,
    /// Plain sum over tokens, in `[-n, n]`.
    Sum,
}

fn cosine(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Option<f64> {
    let na = a.dot(&a);
    let nb = b.dot(&b);
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some(a.dot(&b) / (na * nb).sqrt())
}

pub fn score_cos_base(
    ha: ArrayView2<'_, f32>,
    hb: ArrayView2<'_, f32>,
    mode: CosBaseMode,
) -> Result<f64> {
    if ha.dim() != hb.dim() {
        return Err(Error::MatrixMismatch(format!(
            "{:?} vs {:?}",
            ha.dim(),
            hb.dim()
        )));
    }
    let a = ha.mapv(f64::from);
    let b = hb.mapv(f64::from);
    let mut sum = 0.0;
    for (i, (ra, rb)) in a.outer_iter().zip(b.outer_iter()).enumerate() {
        sum += cosine(ra, rb).ok_or(Error::ZeroNorm(i))?;
    }
    Ok(match mode {
        CosBaseMode::Mean => sum / a.nrows() as f64,
        CosBaseMode::Sum => sum,
    })
}

/// Bottom-up average of unit-normalized token states: each node becomes the
/// mean of its own normalized state and its children's aggregates. Returns
/// the root's aggregate.
pub fn aggregate_root(tree: &LayerTree, layer: ArrayView2<'_, f32>) -> Result<Array1<f64>> {
    let n = tree.len();
    if layer.nrows() != n {
        return Err(Error::NodeCountMismatch(n, layer.nrows()));
    }
    let d = layer.ncols();
    let mut child_sum = Array2::<f64>::zeros((n, d));
    let mut child_count = vec![0usize; n];
    let mut agg = Array1::<f64>::zeros(d);
    // parents precede children, so a reverse sweep is a post-order
    for v in (0..n).rev() {
        let h = layer.row(v).mapv(f64::from);
        let norm = h.dot(&h).sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroNorm(v));
        }
        agg = (&h / norm + child_sum.row(v)) / (child_count[v] + 1) as f64;
        if let Some(p) = tree.parent(v) {
            let mut row = child_sum.row_mut(p);
            row += &agg;
            child_count[p] += 1;
        }
    }
    Ok(agg)
}

pub fn score_cos_struct(
    tree_a: &LayerTree,
    ha: ArrayView2<'_, f32>,
    tree_b: &LayerTree,
    hb: ArrayView2<'_, f32>,
) -> Result<f64> {
    if tree_a.len() != tree_b.len() {
        return Err(Error::NodeCountMismatch(tree_a.len(), tree_b.len()));
    }
    let a = aggregate_root(tree_a, ha)?;
    let b = aggregate_root(tree_b, hb)?;
    cosine(a.view(), b.view()).ok_or_else(|| Error::Degenerate("zero-norm aggregate".into()))
}

/// Size of the symmetric difference of two edge sets given as parent arrays
/// over the same nodes. Roots may differ.
pub fn edge_edit_distance(a: &[Option<usize>], b: &[Option<usize>]) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::NodeCountMismatch(a.len(), b.len()));
    }
    // each node contributes at most one (child, parent) pair per tree
    let only_in = |x: &[Option<usize>], y: &[Option<usize>]| {
        x.iter()
            .zip(y)
            .filter(|(p, q)| p.is_some() && p != q)
            .count()
    };
    Ok(only_in(a, b) + only_in(b, a))
}

/// Negative edge-set symmetric difference, `-2 * (differing parents)` for two
/// layer trees.
pub fn score_edge_edit(tree_a: &LayerTree, tree_b: &LayerTree) -> Result<f64> {
    Ok(-(edge_edit_distance(tree_a.parents(), tree_b.parents())? as f64))
}
