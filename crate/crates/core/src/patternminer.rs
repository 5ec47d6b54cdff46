//! Frequent ordered subtree mining across the layer trees of one sample.
//!
//! Patterns grow by rightmost-path extension: a new node is only ever added
//! as the last child of a node on the current rightmost path, which produces
//! every ordered tree exactly once.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::treebuild::LayerTree;
use crate::treebuild::{parse_sexpr, ParsedTree};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum MineMode {
    /// Only patterns with exactly the requested node count.
    #[default]
    Exact,
    /// Every frequent pattern with at most the requested node count.
    UpTo,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubtreePattern {
    pub sexpr: String,
    pub node_count: usize,
    pub supporting_layers: Vec<usize>,
    pub absence_interval: usize,
}

#[derive(Serialize, Deserialize)]
struct PatternJson {
    sexpr: String,
    size: usize,
    layers: Vec<usize>,
    absence_interval: usize,
    support: usize,
}

impl SubtreePattern {
    pub fn support(&self) -> usize {
        self.supporting_layers.len()
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&PatternJson {
            sexpr: self.sexpr.clone(),
            size: self.node_count,
            layers: self.supporting_layers.clone(),
            absence_interval: self.absence_interval,
            support: self.support(),
        })
        .expect("pattern serializes")
    }

    pub fn from_json_line(line: &str) -> Result<Self> {
        let json: PatternJson =
            serde_json::from_str(line).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(SubtreePattern {
            sexpr: json.sexpr,
            node_count: json.size,
            supporting_layers: json.layers,
            absence_interval: json.absence_interval,
        })
    }
}

/// Largest gap between consecutive entries of a sorted layer list.
pub fn absence_interval(layers: &[usize]) -> usize {
    layers.windows(2).map(|w| w[1] - w[0]).max().unwrap_or(0)
}

/// A pattern as its preorder node list (tree positions) with depths.
#[derive(Clone)]
struct Candidate {
    nodes: Vec<usize>,
    depths: Vec<usize>,
    trees: Vec<usize>,
}

impl Candidate {
    fn rightmost_path(&self) -> Vec<usize> {
        let last = *self.depths.last().expect("non-empty pattern");
        let mut path = vec![0; last + 1];
        let mut need = last + 1;
        for (&node, &depth) in self.nodes.iter().zip(&self.depths).rev() {
            if depth < need {
                path[depth] = node;
                need = depth;
                if need == 0 {
                    break;
                }
            }
        }
        path
    }
}

struct Miner<'a> {
    children: Vec<Vec<Vec<usize>>>,
    labels: &'a [String],
    size: usize,
    min_support: usize,
    mode: MineMode,
}

impl Miner<'_> {
    fn grow(&self, cand: &Candidate, out: &mut Vec<SubtreePattern>) {
        let count = cand.nodes.len();
        if count == self.size || self.mode == MineMode::UpTo {
            out.push(self.finish(cand));
        }
        if count == self.size {
            return;
        }
        let path = cand.rightmost_path();
        let mut extensions: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for &t in &cand.trees {
            for (depth, &x) in path.iter().enumerate() {
                let after = path.get(depth + 1).copied();
                for &c in &self.children[t][x] {
                    if after.is_none_or(|a| c > a) {
                        extensions.entry((depth + 1, c)).or_default().push(t);
                    }
                }
            }
        }
        for ((depth, node), trees) in extensions {
            if trees.len() < self.min_support {
                continue;
            }
            let mut next = Candidate {
                nodes: cand.nodes.clone(),
                depths: cand.depths.clone(),
                trees,
            };
            next.nodes.push(node);
            next.depths.push(depth);
            self.grow(&next, out);
        }
    }

    fn finish(&self, cand: &Candidate) -> SubtreePattern {
        let mut sexpr = String::new();
        let mut open = 0;
        for (&node, &depth) in cand.nodes.iter().zip(&cand.depths) {
            while open > depth {
                sexpr.push(')');
                open -= 1;
            }
            sexpr.push('(');
            sexpr.push_str(&self.labels[node]);
            open += 1;
        }
        sexpr.extend(std::iter::repeat_n(')', open));
        SubtreePattern {
            sexpr,
            node_count: cand.nodes.len(),
            absence_interval: absence_interval(&cand.trees),
            supporting_layers: cand.trees.clone(),
        }
    }
}

pub fn mine_frequent_subtrees(
    trees: &[LayerTree],
    size: usize,
    min_support: usize,
) -> Result<Vec<SubtreePattern>> {
    mine_frequent_subtrees_with(trees, size, min_support, MineMode::Exact)
}

/// Frequent induced ordered subtrees over `trees`, where tree `i` is layer
/// `i`. A layer supports a pattern when the pattern embeds in it at least
/// once. Results are sorted by support (descending), first supporting layer,
/// then S-expression.
pub fn mine_frequent_subtrees_with(
    trees: &[LayerTree],
    size: usize,
    min_support: usize,
    mode: MineMode,
) -> Result<Vec<SubtreePattern>> {
    if size == 0 || min_support == 0 {
        return Err(Error::InvalidArgument(
            "pattern size and minimum support must be positive".into(),
        ));
    }
    let Some(first) = trees.first() else {
        return Ok(Vec::new());
    };
    if let Some(t) = trees.iter().find(|t| t.tokens() != first.tokens()) {
        return Err(Error::Inconsistent(format!(
            "trees over different token sequences ({} vs {} tokens)",
            t.len(),
            first.len()
        )));
    }
    if trees.len() < min_support {
        return Ok(Vec::new());
    }

    let labels: Vec<String> = (0..first.len()).map(|v| first.label(v)).collect();
    let miner = Miner {
        children: trees.iter().map(|t| t.children()).collect(),
        labels: &labels,
        size,
        min_support,
        mode,
    };
    let all_trees: Vec<usize> = (0..trees.len()).collect();
    let mut patterns: Vec<SubtreePattern> = (0..first.len())
        .into_par_iter()
        .flat_map_iter(|root| {
            let seed = Candidate {
                nodes: vec![root],
                depths: vec![0],
                trees: all_trees.clone(),
            };
            let mut found = Vec::new();
            miner.grow(&seed, &mut found);
            found
        })
        .collect();
    patterns.sort_by(|a, b| {
        b.support()
            .cmp(&a.support())
            .then(a.supporting_layers[0].cmp(&b.supporting_layers[0]))
            .then_with(|| a.sexpr.cmp(&b.sexpr))
    });
    Ok(patterns)
}

/// Number of ordered induced embeddings of `pattern` into a labeled tree:
/// labels must match, pattern edges map to tree edges, and siblings keep
/// their order.
pub fn count_embeddings(pattern: &ParsedTree, parents: &[Option<usize>], labels: &[String]) -> u64 {
    if pattern.is_empty() || parents.is_empty() {
        return 0;
    }
    let p_children = pattern.children();
    let mut t_children = vec![Vec::new(); parents.len()];
    for (v, p) in parents.iter().enumerate() {
        if let Some(p) = p {
            t_children[*p].push(v);
        }
    }
    // pattern nodes are in preorder, so a reverse sweep sees children first
    let mut ways = vec![vec![0u64; parents.len()]; pattern.len()];
    for p in (0..pattern.len()).rev() {
        for x in 0..parents.len() {
            if pattern.labels[p] != labels[x] {
                continue;
            }
            // ordered matching of p's children into an increasing
            // subsequence of x's children
            let kids = &p_children[p];
            let slots = &t_children[x];
            let mut row = vec![1u64; slots.len() + 1];
            for &pc in kids {
                let mut next = vec![0u64; slots.len() + 1];
                for (j, &tc) in slots.iter().enumerate() {
                    next[j + 1] = next[j] + row[j] * ways[pc][tc];
                }
                row = next;
            }
            ways[p][x] = row[slots.len()];
        }
    }
    ways[0].iter().sum()
}

pub fn pattern_occurrences(pattern: &SubtreePattern, tree: &LayerTree) -> Result<u64> {
    let parsed = parse_sexpr(&pattern.sexpr)?;
    let labels: Vec<String> = (0..tree.len()).map(|v| tree.label(v)).collect();
    Ok(count_embeddings(&parsed, tree.parents(), &labels))
}

/// Plain-text listing: pattern, supporting layers and absence interval.
pub fn pattern_report(patterns: &[SubtreePattern]) -> String {
    let mut out = String::new();
    for p in patterns {
        let layers: Vec<String> = p.supporting_layers.iter().map(|l| l.to_string()).collect();
        out.push_str(&format!(
            "{}\nLayers: {}\nAbsence interval: {}\n\n",
            p.sexpr,
            layers.join(", "),
            p.absence_interval
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use layertree_testkit::{brute_force_mine, count_embeddings_brute, random_forward_parents};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;
    use std::sync::Arc;

    fn trees_over(tokens: &Arc<[String]>, parents: &[Vec<Option<usize>>]) -> Vec<LayerTree> {
        parents
            .iter()
            .map(|p| LayerTree::new(p.clone(), tokens.clone()).unwrap())
            .collect()
    }

    fn words(n: usize) -> Arc<[String]> {
        (0..n).map(|i| format!("w{}", i % 3)).collect()
    }

    fn oracle(
        trees: &[LayerTree],
        size: usize,
        min_support: usize,
    ) -> BTreeMap<String, Vec<usize>> {
        let input: Vec<_> = trees
            .iter()
            .map(|t| {
                (
                    t.parents().to_vec(),
                    (0..t.len()).map(|v| t.label(v)).collect(),
                )
            })
            .collect();
        brute_force_mine(&input, size, min_support)
    }

    fn as_map(patterns: &[SubtreePattern]) -> BTreeMap<String, Vec<usize>> {
        patterns
            .iter()
            .map(|p| (p.sexpr.clone(), p.supporting_layers.clone()))
            .collect()
    }

    #[test]
    fn absence_interval_examples() {
        assert_eq!(absence_interval(&[3, 6, 8]), 3);
        assert_eq!(absence_interval(&[5]), 0);
        assert_eq!(absence_interval(&[1, 2, 3, 4]), 1);
        assert_eq!(absence_interval(&[1, 5, 32]), 27);
    }

    #[test]
    fn identical_chains() {
        let n = 8;
        let chain: Vec<Option<usize>> = (0..n).map(|v: usize| v.checked_sub(1)).collect();
        let trees = trees_over(&words(n), &[chain.clone(), chain]);
        let found = mine_frequent_subtrees(&trees, 8, 2).unwrap();
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].sexpr, trees[0].to_sexpr());
        assert_eq!(found[0].supporting_layers, [0, 1]);
        assert_eq!(as_map(&found), oracle(&trees, 8, 2));

        let fours = mine_frequent_subtrees(&trees, 4, 2).unwrap();
        assert_eq!(as_map(&fours), oracle(&trees, 4, 2));
        assert_eq!(fours.len(), 5);
    }

    #[test]
    fn support_above_tree_count_is_empty() {
        let trees = trees_over(&words(4), &[vec![None, Some(0), Some(0), Some(1)]]);
        assert!(mine_frequent_subtrees(&trees, 2, 2).unwrap().is_empty());
        assert!(mine_frequent_subtrees(&[], 2, 1).unwrap().is_empty());
        assert!(mine_frequent_subtrees(&trees, 0, 1).is_err());
    }

    #[test]
    fn mismatched_tokens_are_rejected() {
        let a = LayerTree::unlabeled(vec![None, Some(0)]).unwrap();
        let b = LayerTree::new(vec![None, Some(0)], words(2)).unwrap();
        assert!(matches!(
            mine_frequent_subtrees(&[a, b], 1, 1),
            Err(Error::Inconsistent(_))
        ));
    }

    #[test]
    fn ordering_and_report() {
        let tokens = words(4);
        let trees = trees_over(
            &tokens,
            &[
                vec![None, Some(0), Some(1), Some(2)],
                vec![None, Some(0), Some(0), Some(2)],
                vec![None, Some(0), Some(1), Some(2)],
            ],
        );
        let found = mine_frequent_subtrees(&trees, 3, 1).unwrap();
        let support: Vec<usize> = found.iter().map(|p| p.support()).collect();
        assert!(support.windows(2).all(|w| w[0] >= w[1]));
        assert_eq!(found[0].sexpr, "(1_w0(2_w1(3_w2)))");
        assert_eq!(found[0].supporting_layers, [0, 2]);
        assert_eq!(found[0].absence_interval, 2);
        let report = pattern_report(&found[..1]);
        assert_eq!(
            report,
            "(1_w0(2_w1(3_w2)))\nLayers: 0, 2\nAbsence interval: 2\n\n"
        );
        let line = found[0].to_json_line();
        assert_eq!(
            line,
            r#"{"sexpr":"(1_w0(2_w1(3_w2)))","size":3,"layers":[0,2],"absence_interval":2,"support":2}"#
        );
        assert_eq!(SubtreePattern::from_json_line(&line).unwrap(), found[0]);
    }

    #[test]
    fn up_to_mode_includes_smaller_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let parents: Vec<_> = (0..3)
            .map(|_| random_forward_parents(&mut rng, 7))
            .collect();
        let trees = trees_over(&words(7), &parents);
        let all = mine_frequent_subtrees_with(&trees, 4, 2, MineMode::UpTo).unwrap();
        let mut expected = BTreeMap::new();
        for size in 1..=4 {
            expected.extend(oracle(&trees, size, 2));
        }
        assert_eq!(as_map(&all), expected);
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..30 {
            let n = rng.random_range(4..=10);
            let parents: Vec<_> = (0..3)
                .map(|_| random_forward_parents(&mut rng, n))
                .collect();
            let trees = trees_over(&words(n), &parents);
            for size in 1..=4 {
                let found = mine_frequent_subtrees(&trees, size, 2).unwrap();
                assert_eq!(as_map(&found), oracle(&trees, size, 2));
            }
        }
    }

    #[test]
    fn occurrences() {
        let tree =
            LayerTree::new(vec![None, Some(0), Some(0), Some(1), Some(1)], words(5)).unwrap();
        let whole = SubtreePattern {
            sexpr: tree.to_sexpr(),
            node_count: 5,
            supporting_layers: vec![0],
            absence_interval: 0,
        };
        assert_eq!(pattern_occurrences(&whole, &tree).unwrap(), 1);
        let single = SubtreePattern {
            sexpr: "(5_w1)".into(),
            node_count: 1,
            ..whole.clone()
        };
        assert_eq!(pattern_occurrences(&single, &tree).unwrap(), 1);
        let absent = SubtreePattern {
            sexpr: "(1_w0(4_w0))".into(),
            node_count: 2,
            ..whole
        };
        assert_eq!(pattern_occurrences(&absent, &tree).unwrap(), 0);
    }

    #[test]
    fn embeddings_match_backtracking() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let alphabet = ["a", "b"];
        for _ in 0..300 {
            let nt = rng.random_range(1..=7);
            let np = rng.random_range(1..=4);
            let tree = random_forward_parents(&mut rng, nt);
            let tree_labels: Vec<String> = (0..nt)
                .map(|_| alphabet[rng.random_range(0..2)].to_string())
                .collect();
            let pattern = random_forward_parents(&mut rng, np);
            let pattern_labels: Vec<String> = (0..np)
                .map(|_| alphabet[rng.random_range(0..2)].to_string())
                .collect();
            // forward parent arrays are not preorder in general; go through
            // the S-expression so the pattern is numbered the way it is parsed
            let text = LayerTree::unlabeled(pattern.clone()).unwrap().to_sexpr();
            let parsed = parse_sexpr(&text).unwrap();
            let relabeled: Vec<String> = parsed
                .labels
                .iter()
                .map(|l| {
                    let pos: usize = l.split_once('_').unwrap().0.parse().unwrap();
                    pattern_labels[pos - 1].clone()
                })
                .collect();
            let parsed = ParsedTree {
                labels: relabeled,
                parent: parsed.parent,
            };
            assert_eq!(
                count_embeddings(&parsed, &tree, &tree_labels),
                count_embeddings_brute(&parsed.parent, &parsed.labels, &tree, &tree_labels) as u64
            );
        }
    }

    proptest! {
        #[test]
        fn prefixes_of_frequent_patterns_are_frequent(seed in any::<u64>(), n in 3usize..9, support in 1usize..3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let parents: Vec<_> = (0..3).map(|_| random_forward_parents(&mut rng, n)).collect();
            let trees = trees_over(&words(n), &parents);
            let big = mine_frequent_subtrees(&trees, 3, support).unwrap();
            let small: BTreeSet<String> = mine_frequent_subtrees(&trees, 2, support)
                .unwrap()
                .into_iter()
                .map(|p| p.sexpr)
                .collect();
            for p in &big {
                // drop the last node in preorder: the rightmost leaf
                let parsed = parse_sexpr(&p.sexpr).unwrap();
                let keep = parsed.len() - 1;
                let prefix = ParsedTree { labels: parsed.labels[..keep].to_vec(), parent: parsed.parent[..keep].to_vec() };
                let mut text = String::new();
                let children = prefix.children();
                fn render(v: usize, t: &ParsedTree, c: &[Vec<usize>], out: &mut String) {
                    out.push('(');
                    out.push_str(&t.labels[v]);
                    for &k in &c[v] {
                        render(k, t, c, out);
                    }
                    out.push(')');
                }
                render(0, &prefix, &children, &mut text);
                prop_assert!(small.contains(&text), "{} lacks prefix {}", p.sexpr, text);
                for &l in &p.supporting_layers {
                    prop_assert_eq!(pattern_occurrences(p, &trees[l]).unwrap(), 1);
                }
            }
        }
    }
}
