//! Zhang-Shasha ordered tree edit distance.

use crate::treebuild::LayerTree;

/// Per-operation costs. Relabeling a node to an identical label is always free.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EditCosts {
    pub insert: f64,
    pub delete: f64,
    pub relabel: f64,
}

impl Default for EditCosts {
    fn default() -> Self {
        EditCosts {
            insert: 1.0,
            delete: 1.0,
            relabel: 1.0,
        }
    }
}

/// A tree flattened into post-order, children in ascending index order.
struct PostOrder {
    /// label (original node id) of the i-th node in post-order
    labels: Vec<usize>,
    /// post-order index of the leftmost leaf below the i-th node
    leftmost: Vec<usize>,
    keyroots: Vec<usize>,
}

impl PostOrder {
    fn new(parents: &[Option<usize>]) -> Self {
        let n = parents.len();
        let mut children = vec![Vec::new(); n];
        let mut root = 0;
        for (v, p) in parents.iter().enumerate() {
            match p {
                Some(p) => children[*p].push(v),
                None => root = v,
            }
        }
        for c in &mut children {
            c.sort_unstable();
        }

        let mut labels = Vec::with_capacity(n);
        let mut leftmost = Vec::with_capacity(n);
        // (node, next child to visit, post index of its leftmost leaf)
        let mut stack: Vec<(usize, usize, Option<usize>)> = vec![(root, 0, None)];
        while let Some(top) = stack.last_mut() {
            let (v, next, _) = *top;
            if next < children[v].len() {
                top.1 += 1;
                stack.push((children[v][next], 0, None));
                continue;
            }
            let (_, _, lm) = stack.pop().expect("non-empty");
            let idx = labels.len();
            let lm = lm.unwrap_or(idx);
            labels.push(v);
            leftmost.push(lm);
            if let Some(parent) = stack.last_mut() {
                // first finished child fixes the parent's leftmost leaf
                parent.2.get_or_insert(lm);
            }
        }

        // keyroots: the highest node for each distinct leftmost leaf
        let mut seen = vec![false; n];
        let mut keyroots = Vec::new();
        for i in (0..n).rev() {
            if !seen[leftmost[i]] {
                seen[leftmost[i]] = true;
                keyroots.push(i);
            }
        }
        keyroots.reverse();
        PostOrder {
            labels,
            leftmost,
            keyroots,
        }
    }
}

/// Minimum edit-script cost turning tree `a` into tree `b`, both given as
/// parent arrays whose node ids double as labels.
pub fn tree_edit_distance(a: &[Option<usize>], b: &[Option<usize>], costs: EditCosts) -> f64 {
    if a.is_empty() {
        return costs.insert * b.len() as f64;
    }
    if b.is_empty() {
        return costs.delete * a.len() as f64;
    }
    let ta = PostOrder::new(a);
    let tb = PostOrder::new(b);
    let (na, nb) = (ta.labels.len(), tb.labels.len());
    let mut tree_dist = vec![vec![0.0f64; nb]; na];
    let mut forest = vec![vec![0.0f64; nb + 1]; na + 1];

    for &i in &ta.keyroots {
        for &j in &tb.keyroots {
            let (li, lj) = (ta.leftmost[i], tb.leftmost[j]);
            // forest[x - li + 1][y - lj + 1] covers post-order ranges li..=x, lj..=y
            forest[0][0] = 0.0;
            for x in li..=i {
                forest[x - li + 1][0] = forest[x - li][0] + costs.delete;
            }
            for y in lj..=j {
                forest[0][y - lj + 1] = forest[0][y - lj] + costs.insert;
            }
            for x in li..=i {
                for y in lj..=j {
                    let (fx, fy) = (x - li + 1, y - lj + 1);
                    let delete = forest[fx - 1][fy] + costs.delete;
                    let insert = forest[fx][fy - 1] + costs.insert;
                    if ta.leftmost[x] == li && tb.leftmost[y] == lj {
                        let relabel = if ta.labels[x] == tb.labels[y] {
                            0.0
                        } else {
                            costs.relabel
                        };
                        let best = delete.min(insert).min(forest[fx - 1][fy - 1] + relabel);
                        forest[fx][fy] = best;
                        tree_dist[x][y] = best;
                    } else {
                        let px = ta.leftmost[x] - li;
                        let py = tb.leftmost[y] - lj;
                        forest[fx][fy] = delete.min(insert).min(forest[px][py] + tree_dist[x][y]);
                    }
                }
            }
        }
    }
    tree_dist[na - 1][nb - 1]
}

/// Negative unit-cost tree edit distance between two layer trees.
pub fn score_tree_edit(tree_a: &LayerTree, tree_b: &LayerTree) -> f64 {
    score_tree_edit_with(tree_a, tree_b, EditCosts::default())
}

pub fn score_tree_edit_with(tree_a: &LayerTree, tree_b: &LayerTree, costs: EditCosts) -> f64 {
    -tree_edit_distance(tree_a.parents(), tree_b.parents(), costs)
}
