//! Inter-layer similarity: five scores, full layer-by-layer matrices,
//! cross-sample averaging and CSV/PGM/JSON export.

mod scores;
mod tree_edit;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dumpio::HiddenStateDump;
use crate::error::{Error, Result};
use crate::treebuild::{layer_tree, LayerTree};

pub use scores::{
    aggregate_root, edge_edit_distance, hsic_unbiased, score_cka, score_cos_base, score_cos_struct,
    score_edge_edit, CenteredGram, CosBaseMode,
};
pub use tree_edit::{score_tree_edit, score_tree_edit_with, tree_edit_distance, EditCosts};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Cka,
    CosBase,
    CosStruct,
    TreeEdit,
    EdgeEdit,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::Cka,
        Metric::CosBase,
        Metric::CosStruct,
        Metric::TreeEdit,
        Metric::EdgeEdit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Cka => "cka",
            Metric::CosBase => "cos-base",
            Metric::CosStruct => "cos-struct",
            Metric::TreeEdit => "tree-edit",
            Metric::EdgeEdit => "edge-edit",
        }
    }

    pub fn uses_trees(self) -> bool {
        matches!(
            self,
            Metric::CosStruct | Metric::TreeEdit | Metric::EdgeEdit
        )
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown similarity metric {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MatrixOptions {
    pub cos_base: CosBaseMode,
    pub edit_costs: EditCosts,
}

/// Square matrix of one metric's scores over all layer pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub metric: Metric,
    pub values: Array2<f64>,
    pub sample_count: usize,
}

#[derive(Serialize, Deserialize)]
struct MatrixJson {
    metric: Metric,
    sample_count: usize,
    values: Vec<Vec<f64>>,
}

impl SimilarityMatrix {
    pub fn size(&self) -> usize {
        self.values.nrows()
    }

    pub fn to_csv(&self) -> String {
        let n = self.size();
        let mut out = String::from("layer");
        for l in 0..n {
            out.push_str(&format!(",{l}"));
        }
        out.push('\n');
        for (l, row) in self.values.outer_iter().enumerate() {
            out.push_str(&l.to_string());
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    /// Binary 8-bit PGM heatmap; values are min-max scaled so that the most
    /// similar pair is white. A constant matrix renders black.
    pub fn to_pgm(&self) -> Vec<u8> {
        let n = self.size();
        let (min, max) = self
            .values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let mut out = format!("P5\n{n} {n}\n255\n").into_bytes();
        let range = max - min;
        out.extend(self.values.iter().map(|&v| {
            if range > 0.0 {
                (((v - min) / range) * 255.0).round() as u8
            } else {
                0
            }
        }));
        out
    }

    pub fn to_json(&self) -> String {
        let json = MatrixJson {
            metric: self.metric,
            sample_count: self.sample_count,
            values: self.values.outer_iter().map(|r| r.to_vec()).collect(),
        };
        serde_json::to_string(&json).expect("matrix serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let json: MatrixJson =
            serde_json::from_str(text).map_err(|e| Error::MatrixMismatch(e.to_string()))?;
        let n = json.values.len();
        if n == 0 || json.values.iter().any(|r| r.len() != n) {
            return Err(Error::MatrixMismatch(
                "matrix must be square and non-empty".into(),
            ));
        }
        let values = Array2::from_shape_fn((n, n), |(i, j)| json.values[i][j]);
        Ok(SimilarityMatrix {
            metric: json.metric,
            values,
            sample_count: json.sample_count,
        })
    }
}

/// Score a layer pair gets against itself.
pub fn self_score(metric: Metric, num_tokens: usize, opts: &MatrixOptions) -> f64 {
    match metric {
        Metric::Cka | Metric::CosStruct => 1.0,
        Metric::CosBase => match opts.cos_base {
            CosBaseMode::Mean => 1.0,
            CosBaseMode::Sum => num_tokens as f64,
        },
        Metric::TreeEdit | Metric::EdgeEdit => 0.0,
    }
}

/// Trees for every snapshot of a dump, in layer order.
pub fn dump_trees(dump: &HiddenStateDump) -> Result<Vec<LayerTree>> {
    let tokens: Arc<[String]> = dump.tokens().iter().cloned().collect();
    (0..dump.num_snapshots())
        .into_par_iter()
        .map(|l| layer_tree(dump.layer_slice(l)?, tokens.clone()))
        .collect()
}

/// Scores one pair of layers of a dump; `trees` must come from [`dump_trees`]
/// when the metric is tree-based.
pub(crate) fn pair_score(
    metric: Metric,
    ha: ArrayView2<'_, f32>,
    hb: ArrayView2<'_, f32>,
    trees: Option<(&LayerTree, &LayerTree)>,
    opts: &MatrixOptions,
) -> Result<f64> {
    let trees = || trees.ok_or_else(|| Error::InvalidArgument("tree metric needs trees".into()));
    match metric {
        Metric::Cka => score_cka(ha, hb),
        Metric::CosBase => score_cos_base(ha, hb, opts.cos_base),
        Metric::CosStruct => {
            let (ta, tb) = trees()?;
            score_cos_struct(ta, ha, tb, hb)
        }
        Metric::TreeEdit => {
            let (ta, tb) = trees()?;
            Ok(score_tree_edit_with(ta, tb, opts.edit_costs))
        }
        Metric::EdgeEdit => {
            let (ta, tb) = trees()?;
            score_edge_edit(ta, tb)
        }
    }
}

pub fn layer_similarity_matrix(dump: &HiddenStateDump, metric: Metric) -> Result<SimilarityMatrix> {
    layer_similarity_matrix_with(dump, metric, &MatrixOptions::default())
}

/// Full `(L+1) x (L+1)` matrix. The upper triangle is scored (pairs in
/// parallel, each pair independently) and mirrored; the diagonal holds the
/// metric's exact self-score.
pub fn layer_similarity_matrix_with(
    dump: &HiddenStateDump,
    metric: Metric,
    opts: &MatrixOptions,
) -> Result<SimilarityMatrix> {
    let layers = dump.num_snapshots();
    let trees = if metric.uses_trees() {
        Some(dump_trees(dump)?)
    } else {
        None
    };
    let grams: Option<Vec<CenteredGram>> = (metric == Metric::Cka).then(|| {
        (0..layers)
            .into_par_iter()
            .map(|l| CenteredGram::new(dump.layer_slice(l).expect("layer in range")))
            .collect()
    });

    let pairs: Vec<(usize, usize)> = (0..layers)
        .flat_map(|a| ((a + 1)..layers).map(move |b| (a, b)))
        .collect();
    let scored: Vec<f64> = pairs
        .par_iter()
        .map(|&(a, b)| {
            if let Some(grams) = &grams {
                return scores::cka_from_grams(&grams[a], &grams[b]);
            }
            let pair_trees = trees.as_ref().map(|t| (&t[a], &t[b]));
            pair_score(
                metric,
                dump.layer_slice(a)?,
                dump.layer_slice(b)?,
                pair_trees,
                opts,
            )
        })
        .collect::<Result<_>>()?;

    let mut values = Array2::from_elem(
        (layers, layers),
        self_score(metric, dump.num_tokens(), opts),
    );
    for (&(a, b), &v) in pairs.iter().zip(&scored) {
        values[(a, b)] = v;
        values[(b, a)] = v;
    }
    Ok(SimilarityMatrix {
        metric,
        values,
        sample_count: 1,
    })
}

/// Elementwise mean, weighted by each input's sample count so that averaging
/// averages composes.
pub fn average_matrices(mats: &[SimilarityMatrix]) -> Result<SimilarityMatrix> {
    let first = mats
        .first()
        .ok_or_else(|| Error::MatrixMismatch("no matrices to average".into()))?;
    for m in mats {
        if m.metric != first.metric {
            return Err(Error::MatrixMismatch(format!(
                "metric {} vs {}",
                m.metric, first.metric
            )));
        }
        if m.values.dim() != first.values.dim() {
            return Err(Error::MatrixMismatch(format!(
                "shape {:?} vs {:?}",
                m.values.dim(),
                first.values.dim()
            )));
        }
    }
    if mats.len() == 1 {
        return Ok(first.clone());
    }
    let total: usize = mats.iter().map(|m| m.sample_count).sum();
    let mut values = Array2::<f64>::zeros(first.values.dim());
    for m in mats {
        values.scaled_add(m.sample_count as f64, &m.values);
    }
    values /= total as f64;
    Ok(SimilarityMatrix {
        metric: first.metric,
        values,
        sample_count: total,
    })
}

/// Mean L2 distance over all unordered token pairs of one layer.
pub fn mean_pairwise_distance(layer: ArrayView2<'_, f32>) -> Result<f64> {
    let n = layer.nrows();
    if n < 2 {
        return Err(Error::TooFewTokens { needed: 2, got: n });
    }
    let rows: Vec<Vec<f64>> = layer
        .outer_iter()
        .map(|r| r.iter().map(|&v| f64::from(v)).collect())
        .collect();
    let mut sum = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            sum += rows[i]
                .iter()
                .zip(&rows[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
        }
    }
    Ok(sum / (n * (n - 1) / 2) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dump(seed: u64, layers: usize, n: usize, d: usize) -> HiddenStateDump {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let acts = Array3::from_shape_fn((layers, n, d), |_| rng.random_range(-1.0f32..1.0));
        HiddenStateDump::new((0..n).map(|i| format!("t{i}")).collect(), acts, None).unwrap()
    }

    #[test]
    fn diagonal_and_duplicate_layers() {
        let mut dump = random_dump(1, 4, 6, 3);
        let copy = dump
            .activations()
            .index_axis(ndarray::Axis(0), 1)
            .to_owned();
        dump.activations_mut()
            .index_axis_mut(ndarray::Axis(0), 2)
            .assign(&copy);
        for metric in Metric::ALL {
            let m = layer_similarity_matrix(&dump, metric).unwrap();
            let own = self_score(metric, 6, &MatrixOptions::default());
            for l in 0..4 {
                assert_eq!(m.values[(l, l)], own, "{metric}");
            }
            assert_eq!(m.values[(1, 2)], own, "{metric}");
            assert_eq!(m.values, m.values.t(), "{metric}");
        }
    }

    #[test]
    fn entries_match_scalar_scorers() {
        let dump = random_dump(2, 4, 6, 3);
        let trees = dump_trees(&dump).unwrap();
        for metric in Metric::ALL {
            let m = layer_similarity_matrix(&dump, metric).unwrap();
            for a in 0..4 {
                for b in 0..4 {
                    if a == b {
                        continue;
                    }
                    let (ha, hb) = (dump.layer_slice(a).unwrap(), dump.layer_slice(b).unwrap());
                    let expected = match metric {
                        Metric::Cka => score_cka(ha, hb).unwrap(),
                        Metric::CosBase => score_cos_base(ha, hb, CosBaseMode::Mean).unwrap(),
                        Metric::CosStruct => {
                            score_cos_struct(&trees[a], ha, &trees[b], hb).unwrap()
                        }
                        Metric::TreeEdit => score_tree_edit(&trees[a], &trees[b]),
                        Metric::EdgeEdit => score_edge_edit(&trees[a], &trees[b]).unwrap(),
                    };
                    assert!(
                        (m.values[(a, b)] - expected).abs() <= 1e-9,
                        "{metric} {a} {b}"
                    );
                }
            }
        }
    }

    #[test]
    fn raw_sum_mode() {
        let dump = random_dump(3, 3, 5, 2);
        let opts = MatrixOptions {
            cos_base: CosBaseMode::Sum,
            ..Default::default()
        };
        let sum = layer_similarity_matrix_with(&dump, Metric::CosBase, &opts).unwrap();
        let mean = layer_similarity_matrix(&dump, Metric::CosBase).unwrap();
        assert_eq!(sum.values[(0, 0)], 5.0);
        assert!((sum.values[(0, 1)] / 5.0 - mean.values[(0, 1)]).abs() < 1e-12);
    }

    #[test]
    fn averaging() {
        let m = SimilarityMatrix {
            metric: Metric::CosBase,
            values: array![[1.0, 0.25], [0.25, 1.0]],
            sample_count: 1,
        };
        assert_eq!(average_matrices(std::slice::from_ref(&m)).unwrap(), m);
        let neg = SimilarityMatrix {
            values: -&m.values,
            ..m.clone()
        };
        let avg = average_matrices(&[m.clone(), neg]).unwrap();
        assert_eq!(avg.values, Array2::<f64>::zeros((2, 2)));
        assert_eq!(avg.sample_count, 2);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mats: Vec<SimilarityMatrix> = (0..3)
            .map(|_| SimilarityMatrix {
                metric: Metric::Cka,
                values: Array2::from_shape_fn((3, 3), |_| rng.random_range(-1.0..1.0)),
                sample_count: 1,
            })
            .collect();
        let avg = average_matrices(&mats).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let mean =
                    (mats[0].values[(i, j)] + mats[1].values[(i, j)] + mats[2].values[(i, j)])
                        / 3.0;
                assert!((avg.values[(i, j)] - mean).abs() < 1e-12);
            }
        }

        let other = SimilarityMatrix {
            metric: Metric::EdgeEdit,
            ..m.clone()
        };
        assert!(average_matrices(&[m, other]).is_err());
        assert!(average_matrices(&[]).is_err());
    }

    #[test]
    fn pairwise_distance() {
        assert_eq!(
            mean_pairwise_distance(array![[1.0f32, 1.0], [1.0, 1.0]].view()).unwrap(),
            0.0
        );
        assert_eq!(
            mean_pairwise_distance(array![[0.0f32, 0.0], [3.0, 4.0]].view()).unwrap(),
            5.0
        );
        assert!(mean_pairwise_distance(array![[0.0f32, 0.0]].view()).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let layer = Array2::from_shape_fn((7, 3), |_| rng.random_range(-5.0f32..5.0));
        let mut total = 0.0;
        let mut count = 0;
        for i in 0..7 {
            for j in 0..7 {
                if i != j {
                    let d: f64 = (0..3)
                        .map(|k| (layer[(i, k)] as f64 - layer[(j, k)] as f64).powi(2))
                        .sum();
                    total += d.sqrt();
                    count += 1;
                }
            }
        }
        assert!(
            (mean_pairwise_distance(layer.view()).unwrap() - total / count as f64).abs() < 1e-9
        );
    }

    #[test]
    fn exports() {
        let m = SimilarityMatrix {
            metric: Metric::EdgeEdit,
            values: array![[0.0, -2.0], [-2.0, 0.0]],
            sample_count: 1,
        };
        assert_eq!(m.to_csv(), "layer,0,1\n0,0,-2\n1,-2,0\n");
        assert_eq!(m.to_pgm(), b"P5\n2 2\n255\n\xff\x00\x00\xff".to_vec());
        let json = m.to_json();
        assert_eq!(
            json,
            r#"{"metric":"edge-edit","sample_count":1,"values":[[0.0,-2.0],[-2.0,0.0]]}"#
        );
        assert_eq!(SimilarityMatrix::from_json(&json).unwrap(), m);
        assert_eq!("tree-edit".parse::<Metric>().unwrap(), Metric::TreeEdit);
        assert!("knn".parse::<Metric>().is_err());
    }
}
