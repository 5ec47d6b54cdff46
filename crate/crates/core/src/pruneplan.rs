//! Block Influence per transformer block and ranked layer-removal plans.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dumpio::HiddenStateDump;
use crate::error::{Error, Result};
use crate::simmetrics::{
    edge_edit_distance, score_cos_base, score_cos_struct, tree_edit_distance, CosBaseMode,
    EditCosts,
};
use crate::treebuild::{layer_tree, LayerTree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BiMetric {
    CosBaseBi,
    CosStructBi,
    TreeBi,
    EdgeBi,
}

impl BiMetric {
    pub const ALL: [BiMetric; 4] = [
        BiMetric::CosBaseBi,
        BiMetric::CosStructBi,
        BiMetric::TreeBi,
        BiMetric::EdgeBi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BiMetric::CosBaseBi => "cos-base-bi",
            BiMetric::CosStructBi => "cos-struct-bi",
            BiMetric::TreeBi => "tree-bi",
            BiMetric::EdgeBi => "edge-bi",
        }
    }

    /// Name used in report tables.
    pub fn display_name(self) -> &'static str {
        match self {
            BiMetric::CosBaseBi => "CosBaseBI",
            BiMetric::CosStructBi => "CosStructBI",
            BiMetric::TreeBi => "TreeBI",
            BiMetric::EdgeBi => "EdgeBI",
        }
    }
}

impl fmt::Display for BiMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BiMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BiMetric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown block-influence metric {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrunePlan {
    pub metric: BiMetric,
    pub k: usize,
    /// Entry `i` belongs to block `i + 1`.
    pub per_layer_bi: Vec<f64>,
    pub removal_order: Vec<usize>,
    pub removed: Vec<usize>,
    pub calibration_ids: Vec<String>,
}

/// Edit distance between two `n`-node trees scaled by its upper bound
/// `2(n-1)`: every non-root node deleted and reinserted.
pub fn normalized_edit_influence(distance: f64, n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::TooFewTokens { needed: 2, got: n });
    }
    Ok(distance / (2.0 * (n as f64 - 1.0)))
}

/// BI of every block `1..=L`: one minus the similarity between the block's
/// output and its input.
pub fn block_influence(dump: &HiddenStateDump, metric: BiMetric) -> Result<Vec<f64>> {
    let layers = dump.num_snapshots();
    let n = dump.num_tokens();
    if layers < 2 {
        return Err(Error::InvalidArgument(
            "block influence needs at least one block".into(),
        ));
    }
    let trees: Option<Vec<LayerTree>> = match metric {
        BiMetric::CosBaseBi => None,
        _ => {
            let tokens: Arc<[String]> = dump.tokens().iter().cloned().collect();
            Some(
                (0..layers)
                    .map(|l| layer_tree(dump.layer_slice(l)?, tokens.clone()))
                    .collect::<Result<_>>()?,
            )
        }
    };
    (1..layers)
        .map(|l| {
            let (cur, prev) = (dump.layer_slice(l)?, dump.layer_slice(l - 1)?);
            let tree = |i: usize| &trees.as_ref().expect("trees built for tree metrics")[i];
            match metric {
                // cosines can overshoot 1 by an ulp; keep BI inside [0, 2]
                BiMetric::CosBaseBi => {
                    Ok((1.0 - score_cos_base(cur, prev, CosBaseMode::Mean)?).clamp(0.0, 2.0))
                }
                BiMetric::CosStructBi => {
                    Ok((1.0 - score_cos_struct(tree(l), cur, tree(l - 1), prev)?).clamp(0.0, 2.0))
                }
                BiMetric::TreeBi => {
                    let d = tree_edit_distance(
                        tree(l).parents(),
                        tree(l - 1).parents(),
                        EditCosts::default(),
                    );
                    normalized_edit_influence(d, n)
                }
                BiMetric::EdgeBi => {
                    let d = edge_edit_distance(tree(l).parents(), tree(l - 1).parents())?;
                    normalized_edit_influence(d as f64, n)
                }
            }
        })
        .collect()
}

/// Averages BI over the calibration dumps and ranks blocks for removal,
/// lowest BI first with ties going to the smaller index. Calibration ids come
/// from each dump's `sample_id` metadata, or its position.
pub fn build_plan(dumps: &[HiddenStateDump], metric: BiMetric, k: usize) -> Result<PrunePlan> {
    let first = dumps
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty calibration set".into()))?;
    let blocks = first.num_blocks();
    if let Some(d) = dumps.iter().find(|d| d.num_blocks() != blocks) {
        return Err(Error::Inconsistent(format!(
            "dump with {} blocks vs {blocks}",
            d.num_blocks()
        )));
    }
    if k > blocks {
        return Err(Error::InvalidArgument(format!(
            "cannot remove {k} of {blocks} blocks"
        )));
    }
    let per_dump: Vec<Vec<f64>> = dumps
        .par_iter()
        .map(|d| block_influence(d, metric))
        .collect::<Result<_>>()?;
    let per_layer_bi: Vec<f64> = (0..blocks)
        .map(|i| {
            // summing in sorted order makes the mean independent of dump order
            let mut column: Vec<f64> = per_dump.iter().map(|bi| bi[i]).collect();
            column.sort_by(f64::total_cmp);
            column.iter().sum::<f64>() / column.len() as f64
        })
        .collect();
    let mut removal_order: Vec<usize> = (1..=blocks).collect();
    removal_order.sort_by(|&a, &b| {
        per_layer_bi[a - 1]
            .total_cmp(&per_layer_bi[b - 1])
            .then(a.cmp(&b))
    });
    let removed = removal_order[..k].to_vec();
    let calibration_ids = dumps
        .iter()
        .enumerate()
        .map(|(i, d)| d.sample_id().unwrap_or_else(|| i.to_string()))
        .collect();
    Ok(PrunePlan {
        metric,
        k,
        per_layer_bi,
        removal_order,
        removed,
        calibration_ids,
    })
}

impl PrunePlan {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plan serializes")
    }

    pub fn removed_ascending(&self) -> Vec<usize> {
        let mut removed = self.removed.clone();
        removed.sort_unstable();
        removed
    }
}

/// Removal ratio line plus a `Metric | layers` row, layers ascending and
/// `---` when nothing is removed.
pub fn plan_report(plan: &PrunePlan) -> String {
    let blocks = plan.per_layer_bi.len();
    let ratio = if blocks == 0 {
        0.0
    } else {
        plan.k as f64 / blocks as f64 * 100.0
    };
    let layers = if plan.removed.is_empty() {
        "---".to_string()
    } else {
        plan.removed_ascending()
            .iter()
            .map(|l| l.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    };
    format!(
        "Removed {}/{} layers ({ratio:.1}%)\n{} | {layers}\n",
        plan.k,
        blocks,
        plan.metric.display_name()
    )
}
