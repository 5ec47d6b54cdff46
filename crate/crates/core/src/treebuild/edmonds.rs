//! Maximum spanning arborescence on dense directed graphs (Chu-Liu/Edmonds).
//!
//! This is the dense-graph variant of Tarjan's formulation: every super-node
//! keeps an array of its best incoming edge per original source, cycles are
//! contracted by merging those arrays, and the final tree is recovered by
//! unwinding the contraction forest top-down. With union-find bookkeeping the
//! whole run is `O(n^2)` up to an inverse-Ackermann factor.

use ndarray::ArrayView2;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
struct Candidate {
    /// Weight reduced by the cycle edges it would replace.
    weight: f64,
    src: usize,
    dst: usize,
}

impl Candidate {
    /// Higher weight wins; equal weights go to the larger source index.
    fn beats(&self, other: &Candidate) -> bool {
        self.weight > other.weight || (self.weight == other.weight && self.src > other.src)
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(size: usize) -> Self {
        UnionFind {
            parent: (0..size).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[x] != root {
            let next = self.parent[x];
            self.parent[x] = root;
            x = next;
        }
        root
    }

    /// Attaches `child`'s set under `root`.
    fn attach(&mut self, child: usize, root: usize) {
        let c = self.find(child);
        let r = self.find(root);
        if c != r {
            self.parent[c] = r;
        }
    }
}

/// Maximum-weight spanning arborescence rooted at `root`.
///
/// `scores[(u, v)]` is the weight of the edge `u -> v`. Non-finite entries and
/// the diagonal are treated as missing edges. Returns the parent of every
/// vertex (`None` at the root). Among equal-weight incoming edges the one with
/// the larger source index is preferred.
pub fn max_arborescence(scores: ArrayView2<'_, f64>, root: usize) -> Result<Vec<Option<usize>>> {
    let n = scores.nrows();
    if scores.ncols() != n {
        return Err(Error::DimensionMismatch(scores.nrows(), scores.ncols()));
    }
    if root >= n {
        return Err(Error::InvalidArgument(format!(
            "root {root} outside a {n}-node graph"
        )));
    }
    if n == 1 {
        return Ok(vec![None]);
    }

    let cap = 2 * n;
    let mut incoming: Vec<Option<Vec<Option<Candidate>>>> = vec![None; cap];
    for (v, slot) in incoming.iter_mut().enumerate().take(n) {
        let arr = (0..n)
            .map(|u| {
                let w = scores[(u, v)];
                (u != v && w.is_finite()).then_some(Candidate {
                    weight: w,
                    src: u,
                    dst: v,
                })
            })
            .collect();
        *slot = Some(arr);
    }

    // strongly connected super-nodes; find(original) gives the current super-node id
    let mut strong = UnionFind::new(cap);
    // weakly connected components over original nodes
    let mut weak = UnionFind::new(n);
    let mut representative: Vec<usize> = (0..cap).map(|v| v.min(n - 1)).collect();
    let mut chosen: Vec<Option<Candidate>> = vec![None; cap];
    let mut forest_parent: Vec<Option<usize>> = vec![None; cap];
    let mut forest_children: Vec<Vec<usize>> = vec![Vec::new(); cap];
    let mut in_cycle = vec![false; cap];
    let mut next_id = n;

    let mut queue: Vec<usize> = (0..n).rev().filter(|&v| v != root).collect();
    while let Some(v) = queue.pop() {
        let arr = incoming[v]
            .as_ref()
            .expect("queued super-node owns its array");
        let mut best: Option<Candidate> = None;
        for cand in arr.iter().flatten() {
            if strong.find(cand.src) == v {
                continue;
            }
            if best.is_none_or(|b| cand.beats(&b)) {
                best = Some(*cand);
            }
        }
        let edge = best.ok_or(Error::Unreachable(representative[v]))?;
        chosen[v] = Some(edge);

        let (a, b) = (weak.find(edge.src), weak.find(representative[v]));
        if a != b {
            weak.attach(b, a);
            continue;
        }

        // the chosen edge closes a cycle: walk it back to v
        let mut cycle = vec![v];
        let mut x = strong.find(edge.src);
        while x != v {
            cycle.push(x);
            x = strong.find(chosen[x].expect("cycle member has an edge").src);
        }
        for &m in &cycle {
            in_cycle[m] = true;
        }

        let c = next_id;
        next_id += 1;
        let mut merged: Vec<Option<Candidate>> = vec![None; n];
        for &m in &cycle {
            let replaced = chosen[m].expect("cycle member has an edge").weight;
            let arr = incoming[m].take().expect("cycle member owns its array");
            for (u, cand) in arr.into_iter().enumerate() {
                let Some(cand) = cand else { continue };
                if in_cycle[strong.find(u)] {
                    continue;
                }
                let reduced = Candidate {
                    weight: cand.weight - replaced,
                    ..cand
                };
                if merged[u].is_none_or(|cur| reduced.beats(&cur)) {
                    merged[u] = Some(reduced);
                }
            }
        }
        for &m in &cycle {
            in_cycle[m] = false;
            strong.attach(m, c);
            forest_parent[m] = Some(c);
            forest_children[c].push(m);
        }
        representative[c] = representative[v];
        incoming[c] = Some(merged);
        queue.push(c);
    }

    // unwind: each forest root keeps its chosen edge, which breaks open every
    // cycle on the path down to the edge's head
    let mut parent = vec![None; n];
    let mut stack: Vec<usize> = (0..next_id)
        .filter(|&s| s != root && forest_parent[s].is_none())
        .collect();
    while let Some(r) = stack.pop() {
        let edge = chosen[r].expect("every non-root super-node chose an edge");
        parent[edge.dst] = Some(edge.src);
        let mut p = edge.dst;
        while p != r {
            let up = forest_parent[p].expect("head lies inside the super-node");
            stack.extend(forest_children[up].iter().copied().filter(|&c| c != p));
            p = up;
        }
    }
    Ok(parent)
}

#[cfg(test)]
mod tests {
    use super::*;
    use layertree_testkit::brute_force_arborescence_max;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn total(scores: &Array2<f64>, parent: &[Option<usize>]) -> f64 {
        parent
            .iter()
            .enumerate()
            .filter_map(|(v, p)| p.map(|p| scores[(p, v)]))
            .sum()
    }

    fn assert_arborescence(parent: &[Option<usize>], root: usize) {
        assert!(parent[root].is_none());
        for start in 0..parent.len() {
            let mut v = start;
            let mut steps = 0;
            while v != root {
                v = parent[v].expect("non-root has a parent");
                steps += 1;
                assert!(steps <= parent.len(), "cycle through {start}");
            }
        }
    }

    #[test]
    fn contracts_a_two_cycle() {
        // 1 <-> 2 are each other's best parents; the root edge into 1 is cheaper
        let mut s = Array2::from_elem((3, 3), f64::NEG_INFINITY);
        s[(0, 1)] = 5.0;
        s[(0, 2)] = 1.0;
        s[(1, 2)] = 10.0;
        s[(2, 1)] = 11.0;
        let parent = max_arborescence(s.view(), 0).unwrap();
        assert_eq!(parent, vec![None, Some(0), Some(1)]);
        assert_eq!(total(&s, &parent), 15.0);
    }

    #[test]
    fn unreachable_node_is_an_error() {
        let mut s = Array2::from_elem((3, 3), f64::NEG_INFINITY);
        s[(0, 1)] = 1.0;
        assert!(matches!(
            max_arborescence(s.view(), 0),
            Err(Error::Unreachable(2))
        ));
    }

    #[test]
    fn matches_brute_force_on_general_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..300 {
            let n = rng.random_range(1..=6);
            let root = rng.random_range(0..n);
            let mut s = Array2::from_elem((n, n), f64::NEG_INFINITY);
            let mut oracle = vec![vec![None; n]; n];
            for u in 0..n {
                for v in 0..n {
                    // sparse-ish with integer weights so ties happen
                    if u != v && rng.random_bool(0.7) {
                        let w = rng.random_range(0..6) as f64;
                        s[(u, v)] = w;
                        oracle[u][v] = Some(w);
                    }
                }
            }
            let expected = brute_force_arborescence_max(&oracle, root);
            match max_arborescence(s.view(), root) {
                Ok(parent) => {
                    assert_arborescence(&parent, root);
                    assert_eq!(Some(total(&s, &parent)), expected, "trial {trial}");
                }
                Err(Error::Unreachable(_)) => assert_eq!(expected, None, "trial {trial}"),
                Err(e) => panic!("{e}"),
            }
        }
    }
}
