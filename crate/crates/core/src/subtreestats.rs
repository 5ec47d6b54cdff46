//! Contiguous 4-node subtree statistics per layer tree.

use std::collections::BTreeSet;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::dumpio::HiddenStateDump;
use crate::error::{Error, Result};
use crate::treebuild::{layer_tree, LayerTree};

pub const SUBTREE_SIZE: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubtreeStats {
    pub layer: usize,
    pub layer_pct: f64,
    pub contiguous_count: u64,
    pub total_count: u64,
    pub subtree_ratio: f64,
    pub token_ratio: f64,
}

/// Per-layer means over several samples. Ratios are formed per sample first.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanSubtreeStats {
    pub layer: usize,
    pub layer_pct: f64,
    pub contiguous_count: f64,
    pub total_count: f64,
    pub subtree_ratio: f64,
    pub token_ratio: f64,
}

/// Windows of `size` consecutive positions whose nodes form a connected
/// subtree, and the positions covered by any such window.
pub fn contiguous_windows(parents: &[Option<usize>], size: usize) -> (u64, BTreeSet<usize>) {
    let n = parents.len();
    let mut count = 0;
    let mut covered = BTreeSet::new();
    if size == 0 || n < size {
        return (0, covered);
    }
    for start in 0..=(n - size) {
        let window = start..start + size;
        // a set of s nodes is connected iff exactly s-1 of them hang from a
        // parent inside the set
        let inner = window
            .clone()
            .filter(|&v| parents[v].is_some_and(|p| window.contains(&p)))
            .count();
        if inner == size - 1 {
            count += 1;
            covered.extend(window);
        }
    }
    (count, covered)
}

/// Number of connected `size`-node vertex subsets. Each subset is counted at
/// its topmost node: per node, the counts of connected pieces of each size
/// rooted there are combined child by child.
pub fn connected_subset_count(parents: &[Option<usize>], size: usize) -> u64 {
    let n = parents.len();
    if size == 0 || n < size {
        return 0;
    }
    let mut children = vec![Vec::new(); n];
    for (v, p) in parents.iter().enumerate() {
        if let Some(p) = p {
            children[*p].push(v);
        }
    }
    let order = post_order(parents, &children);
    let mut rooted = vec![Vec::new(); n];
    let mut total = 0u64;
    for v in order {
        let mut acc = vec![0u64; size + 1];
        acc[1] = 1;
        for &c in &children[v] {
            let child: &Vec<u64> = &rooted[c];
            let mut next = acc.clone();
            for a in 1..=size {
                if acc[a] == 0 {
                    continue;
                }
                for b in 1..=(size - a) {
                    next[a + b] += acc[a] * child[b];
                }
            }
            acc = next;
        }
        total += acc[size];
        rooted[v] = acc;
    }
    total
}

fn post_order(parents: &[Option<usize>], children: &[Vec<usize>]) -> Vec<usize> {
    let mut order = Vec::with_capacity(parents.len());
    let mut stack: Vec<usize> = (0..parents.len())
        .filter(|&v| parents[v].is_none())
        .collect();
    while let Some(v) = stack.pop() {
        order.push(v);
        stack.extend(&children[v]);
    }
    order.reverse();
    order
}

pub fn count_contiguous_4subtrees(tree: &LayerTree) -> (u64, BTreeSet<usize>) {
    contiguous_windows(tree.parents(), SUBTREE_SIZE)
}

pub fn count_all_4subtrees(tree: &LayerTree) -> u64 {
    connected_subset_count(tree.parents(), SUBTREE_SIZE)
}

/// Stats for one tree; trees too small to hold a 4-node subtree get zeros.
pub fn tree_stats(tree: &LayerTree, layer: usize, num_blocks: usize) -> SubtreeStats {
    let (contiguous_count, covered) = count_contiguous_4subtrees(tree);
    let total_count = count_all_4subtrees(tree);
    let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { 0.0 };
    SubtreeStats {
        layer,
        layer_pct: layer_percentage(layer, num_blocks),
        contiguous_count,
        total_count,
        subtree_ratio: ratio(contiguous_count as f64, total_count as f64),
        token_ratio: ratio(covered.len() as f64, tree.len() as f64),
    }
}

fn layer_percentage(layer: usize, num_blocks: usize) -> f64 {
    if num_blocks == 0 {
        0.0
    } else {
        layer as f64 / num_blocks as f64 * 100.0
    }
}

pub fn layer_profile(dump: &HiddenStateDump) -> Result<Vec<SubtreeStats>> {
    let tokens: Arc<[String]> = dump.tokens().iter().cloned().collect();
    let blocks = dump.num_blocks();
    (0..dump.num_snapshots())
        .into_par_iter()
        .map(|l| {
            Ok(tree_stats(
                &layer_tree(dump.layer_slice(l)?, tokens.clone())?,
                l,
                blocks,
            ))
        })
        .collect()
}

/// Averages several samples' profiles layer by layer.
pub fn mean_profile(profiles: &[Vec<SubtreeStats>]) -> Result<Vec<MeanSubtreeStats>> {
    let first = profiles
        .first()
        .ok_or_else(|| Error::Inconsistent("no profiles to average".into()))?;
    if let Some(p) = profiles.iter().find(|p| p.len() != first.len()) {
        return Err(Error::Inconsistent(format!(
            "profile with {} layers vs {}",
            p.len(),
            first.len()
        )));
    }
    let count = profiles.len() as f64;
    Ok((0..first.len())
        .map(|l| {
            let mean = |f: &dyn Fn(&SubtreeStats) -> f64| {
                profiles.iter().map(|p| f(&p[l])).sum::<f64>() / count
            };
            MeanSubtreeStats {
                layer: first[l].layer,
                layer_pct: first[l].layer_pct,
                contiguous_count: mean(&|s| s.contiguous_count as f64),
                total_count: mean(&|s| s.total_count as f64),
                subtree_ratio: mean(&|s| s.subtree_ratio),
                token_ratio: mean(&|s| s.token_ratio),
            }
        })
        .collect())
}

pub const CSV_HEADER: &str =
    "layer,layer_pct,contiguous_count,total_count,subtree_ratio,token_ratio";

pub fn profile_csv(rows: &[SubtreeStats]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.layer, r.layer_pct, r.contiguous_count, r.total_count, r.subtree_ratio, r.token_ratio
        ));
    }
    out
}

pub fn mean_profile_csv(rows: &[MeanSubtreeStats]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.layer, r.layer_pct, r.contiguous_count, r.total_count, r.subtree_ratio, r.token_ratio
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use layertree_testkit::{connected_subsets, random_forward_parents};
    use ndarray::Array3;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn chain(n: usize) -> Vec<Option<usize>> {
        (0..n).map(|v| v.checked_sub(1)).collect()
    }

    fn star(n: usize) -> Vec<Option<usize>> {
        (0..n).map(|v| (v > 0).then_some(0)).collect()
    }

    #[test]
    fn chain_of_five() {
        let (count, covered) = contiguous_windows(&chain(5), 4);
        assert_eq!(count, 2);
        assert_eq!(covered, (0..5).collect());
        assert_eq!(connected_subset_count(&chain(5), 4), 2);
    }

    #[test]
    fn star_with_four_leaves() {
        let (count, covered) = contiguous_windows(&star(5), 4);
        assert_eq!(count, 1);
        assert_eq!(covered, (0..4).collect());
        assert_eq!(connected_subset_count(&star(5), 4), 4);
        let stats = tree_stats(&LayerTree::unlabeled(star(5)).unwrap(), 0, 1);
        assert_eq!(stats.subtree_ratio, 0.25);
        assert_eq!(stats.token_ratio, 0.8);
    }

    #[test]
    fn two_branch_tree() {
        let parents = vec![None, Some(0), Some(0), Some(1), Some(2)];
        assert_eq!(contiguous_windows(&parents, 4).0, 1);
    }

    #[test]
    fn small_trees_give_zero_stats() {
        let tree = LayerTree::unlabeled(chain(3)).unwrap();
        let stats = tree_stats(&tree, 2, 4);
        assert_eq!((stats.contiguous_count, stats.total_count), (0, 0));
        assert_eq!((stats.subtree_ratio, stats.token_ratio), (0.0, 0.0));
        assert_eq!(stats.layer_pct, 50.0);
    }

    #[test]
    fn dp_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let n = rng.random_range(1..=9);
            let parents = random_forward_parents(&mut rng, n);
            for size in 1..=5 {
                assert_eq!(
                    connected_subset_count(&parents, size),
                    connected_subsets(&parents, size).len() as u64,
                    "{parents:?} size {size}"
                );
            }
        }
    }

    #[test]
    fn profile_matches_direct_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let acts = Array3::from_shape_fn((3, 7, 3), |_| rng.random_range(-1.0f32..1.0));
        let dump =
            HiddenStateDump::new((0..7).map(|i| format!("w{i}")).collect(), acts, None).unwrap();
        let profile = layer_profile(&dump).unwrap();
        assert_eq!(profile.len(), 3);
        let tokens: Arc<[String]> = dump.tokens().iter().cloned().collect();
        for (l, row) in profile.iter().enumerate() {
            let tree = layer_tree(dump.layer_slice(l).unwrap(), tokens.clone()).unwrap();
            let (c, covered) = count_contiguous_4subtrees(&tree);
            assert_eq!(row.contiguous_count, c);
            assert_eq!(row.total_count, count_all_4subtrees(&tree));
            assert_eq!(row.token_ratio, covered.len() as f64 / 7.0);
            assert_eq!(row.layer_pct, l as f64 * 50.0);
        }
    }

    #[test]
    fn chain_dump_has_unit_ratios() {
        // points on a line, each step shorter than the last, so every token
        // attaches to its predecessor
        let positions = [0.0f32, 8.0, 12.0, 14.0, 15.0, 15.5];
        let acts = Array3::from_shape_fn((2, 6, 1), |(_, t, _)| positions[t]);
        let dump =
            HiddenStateDump::new((0..6).map(|i| format!("w{i}")).collect(), acts, None).unwrap();
        for row in layer_profile(&dump).unwrap() {
            assert_eq!((row.subtree_ratio, row.token_ratio), (1.0, 1.0));
        }
    }

    #[test]
    fn averaging_and_csv() {
        let a = tree_stats(&LayerTree::unlabeled(star(5)).unwrap(), 0, 1);
        let b = tree_stats(&LayerTree::unlabeled(chain(5)).unwrap(), 0, 1);
        let mean = mean_profile(&[vec![a.clone()], vec![b]]).unwrap();
        assert_eq!(mean[0].subtree_ratio, 0.625);
        assert_eq!(mean[0].total_count, 3.0);
        assert!(mean_profile(&[vec![a.clone()], vec![]]).is_err());
        assert_eq!(
            profile_csv(&[a]),
            "layer,layer_pct,contiguous_count,total_count,subtree_ratio,token_ratio\n0,0,1,4,0.25,0.8\n"
        );
    }

    proptest! {
        #[test]
        fn stats_are_bounded(seed in any::<u64>(), n in 1usize..40) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let tree = LayerTree::unlabeled(random_forward_parents(&mut rng, n)).unwrap();
            let s = tree_stats(&tree, 0, 1);
            prop_assert!(s.contiguous_count <= s.total_count);
            prop_assert!(s.contiguous_count <= n.saturating_sub(3) as u64);
            prop_assert!((0.0..=1.0).contains(&s.subtree_ratio));
            prop_assert!((0.0..=1.0).contains(&s.token_ratio));
        }

        #[test]
        fn chains_are_fully_contiguous(n in 4usize..60) {
            let s = tree_stats(&LayerTree::unlabeled(chain(n)).unwrap(), 0, 1);
            prop_assert_eq!(s.subtree_ratio, 1.0);
            prop_assert_eq!(s.token_ratio, 1.0);
        }
    }
}
