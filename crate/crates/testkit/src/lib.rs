//! Brute-force reference implementations used as test oracles.
//!
//! Nothing in here shares code with the `layertree` crate. Trees are plain
//! parent arrays (`None` at the root, 0-based node ids) and matrices are
//! nested `Vec`s, so every oracle is an independent route to the same answer.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;

pub type Parents = Vec<Option<usize>>;

/// Random tree with `parent[j] < j`, rooted at node 0.
pub fn random_forward_parents<R: Rng>(rng: &mut R, n: usize) -> Parents {
    (0..n)
        .map(|j| {
            if j == 0 {
                None
            } else {
                Some(rng.random_range(0..j))
            }
        })
        .collect()
}

/// Dense forward weights: `w[i][j] in (0, 1]` for `i < j`, zero elsewhere.
pub fn random_forward_weights<R: Rng>(rng: &mut R, n: usize) -> Vec<Vec<f64>> {
    let mut w = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            w[i][j] = 1.0 / (1.0 + rng.random_range(0.0..10.0));
        }
    }
    w
}

fn children_of(parents: &[Option<usize>]) -> Vec<Vec<usize>> {
    let mut ch = vec![Vec::new(); parents.len()];
    for (v, p) in parents.iter().enumerate() {
        if let Some(p) = p {
            ch[*p].push(v);
        }
    }
    for c in &mut ch {
        c.sort_unstable();
    }
    ch
}

fn root_of(parents: &[Option<usize>]) -> usize {
    parents
        .iter()
        .position(|p| p.is_none())
        .expect("tree has a root")
}

/// Every forward arborescence rooted at 0, as the maximum total weight.
pub fn brute_force_forward_max(w: &[Vec<f64>]) -> f64 {
    let n = w.len();
    if n <= 1 {
        return 0.0;
    }
    let mut best = f64::NEG_INFINITY;
    let mut choice = vec![0usize; n];
    loop {
        let total: f64 = (1..n).map(|j| w[choice[j]][j]).sum();
        if total > best {
            best = total;
        }
        // odometer over parent[j] in 0..j
        let mut j = 1;
        loop {
            if j == n {
                return best;
            }
            choice[j] += 1;
            if choice[j] < j {
                break;
            }
            choice[j] = 0;
            j += 1;
        }
    }
}

/// Maximum arborescence weight of a general directed graph (`None` = no edge),
/// by enumerating every parent assignment and keeping the acyclic ones.
pub fn brute_force_arborescence_max(w: &[Vec<Option<f64>>], root: usize) -> Option<f64> {
    let n = w.len();
    let others: Vec<usize> = (0..n).filter(|&v| v != root).collect();
    let mut parent = vec![usize::MAX; n];
    let mut best: Option<f64> = None;

    fn is_arborescence(parent: &[usize], root: usize) -> bool {
        let n = parent.len();
        for start in 0..n {
            let mut v = start;
            let mut steps = 0;
            while v != root {
                v = parent[v];
                steps += 1;
                if steps > n {
                    return false;
                }
            }
        }
        true
    }

    fn rec(
        idx: usize,
        others: &[usize],
        w: &[Vec<Option<f64>>],
        parent: &mut Vec<usize>,
        root: usize,
        best: &mut Option<f64>,
    ) {
        if idx == others.len() {
            if is_arborescence(parent, root) {
                let total: f64 = others.iter().map(|&v| w[parent[v]][v].unwrap()).sum();
                if best.is_none_or(|b| total > b) {
                    *best = Some(total);
                }
            }
            return;
        }
        let v = others[idx];
        for u in 0..w.len() {
            if u != v && w[u][v].is_some() {
                parent[v] = u;
                rec(idx + 1, others, w, parent, root, best);
            }
        }
    }

    rec(0, &others, w, &mut parent, root, &mut best);
    best
}

fn preorder_positions(parents: &[Option<usize>]) -> Vec<usize> {
    let ch = children_of(parents);
    let mut pos = vec![0; parents.len()];
    let mut stack = vec![root_of(parents)];
    let mut k = 0;
    while let Some(v) = stack.pop() {
        pos[v] = k;
        k += 1;
        for &c in ch[v].iter().rev() {
            stack.push(c);
        }
    }
    pos
}

fn is_ancestor(parents: &[Option<usize>], a: usize, mut d: usize) -> bool {
    while let Some(p) = parents[d] {
        if p == a {
            return true;
        }
        d = p;
    }
    false
}

/// Unit-cost ordered tree edit distance via exhaustive enumeration of Tai
/// mappings (one-to-one, ancestor- and left-to-right-order preserving).
/// Node labels are the node ids themselves.
pub fn tree_edit_by_mappings(a: &[Option<usize>], b: &[Option<usize>]) -> usize {
    let (na, nb) = (a.len(), b.len());
    let pre_a = preorder_positions(a);
    let pre_b = preorder_positions(b);
    let anc_a: Vec<Vec<bool>> = (0..na)
        .map(|x| (0..na).map(|y| is_ancestor(a, x, y)).collect())
        .collect();
    let anc_b: Vec<Vec<bool>> = (0..nb)
        .map(|x| (0..nb).map(|y| is_ancestor(b, x, y)).collect())
        .collect();
    let left_a = |x: usize, y: usize| !anc_a[x][y] && !anc_a[y][x] && pre_a[x] < pre_a[y];
    let left_b = |x: usize, y: usize| !anc_b[x][y] && !anc_b[y][x] && pre_b[x] < pre_b[y];

    let mut best = na + nb;
    let mut mapping: Vec<(usize, usize)> = Vec::new();
    let mut used = vec![false; nb];

    #[allow(clippy::too_many_arguments)]
    fn rec(
        x: usize,
        na: usize,
        nb: usize,
        mapping: &mut Vec<(usize, usize)>,
        used: &mut Vec<bool>,
        best: &mut usize,
        compatible: &dyn Fn(usize, usize, usize, usize) -> bool,
    ) {
        if x == na {
            let relabel = mapping.iter().filter(|(p, q)| p != q).count();
            let cost = relabel + (na - mapping.len()) + (nb - mapping.len());
            *best = (*best).min(cost);
            return;
        }
        rec(x + 1, na, nb, mapping, used, best, compatible);
        for y in 0..nb {
            if used[y] {
                continue;
            }
            if mapping.iter().all(|&(p, q)| compatible(p, q, x, y)) {
                used[y] = true;
                mapping.push((x, y));
                rec(x + 1, na, nb, mapping, used, best, compatible);
                mapping.pop();
                used[y] = false;
            }
        }
    }

    let compatible = |p: usize, q: usize, x: usize, y: usize| {
        anc_a[p][x] == anc_b[q][y]
            && anc_a[x][p] == anc_b[y][q]
            && left_a(p, x) == left_b(q, y)
            && left_a(x, p) == left_b(y, q)
    };
    rec(0, na, nb, &mut mapping, &mut used, &mut best, &compatible);
    best
}

fn gram(h: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = h.len();
    let mut k = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            k[i][j] = h[i].iter().zip(&h[j]).map(|(a, b)| a * b).sum();
        }
    }
    k
}

fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut c = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            for t in 0..n {
                c[i][j] += a[i][t] * b[t][j];
            }
        }
    }
    c
}

/// Unbiased HSIC evaluated term by term with explicit matrix products.
pub fn hsic_unbiased_direct(k: &[Vec<f64>], l: &[Vec<f64>]) -> f64 {
    let n = k.len();
    let mut kt = k.to_vec();
    let mut lt = l.to_vec();
    for i in 0..n {
        kt[i][i] = 0.0;
        lt[i][i] = 0.0;
    }
    let kl = matmul(&kt, &lt);
    let trace: f64 = (0..n).map(|i| kl[i][i]).sum();
    let sum_k: f64 = kt.iter().flatten().sum();
    let sum_l: f64 = lt.iter().flatten().sum();
    let ones_kl_ones: f64 = kl.iter().flatten().sum();
    let nf = n as f64;
    (trace + sum_k * sum_l / ((nf - 1.0) * (nf - 2.0)) - 2.0 / (nf - 2.0) * ones_kl_ones)
        / (nf * (nf - 3.0))
}

pub fn cka_direct(ha: &[Vec<f64>], hb: &[Vec<f64>]) -> f64 {
    let k = gram(ha);
    let l = gram(hb);
    hsic_unbiased_direct(&k, &l)
        / (hsic_unbiased_direct(&k, &k) * hsic_unbiased_direct(&l, &l)).sqrt()
}

fn combinations(n: usize, size: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, size: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == size {
            out.push(cur.clone());
            return;
        }
        for v in start..n {
            cur.push(v);
            rec(v + 1, n, size, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, size, &mut Vec::new(), &mut out);
    out
}

fn is_connected_subset(parents: &[Option<usize>], subset: &[usize]) -> bool {
    // a forest on k nodes is connected iff it has k - 1 edges
    let inside = |v: usize| subset.contains(&v);
    let edges = subset
        .iter()
        .filter(|&&v| parents[v].is_some_and(inside))
        .count();
    !subset.is_empty() && edges + 1 == subset.len()
}

/// All connected vertex subsets of the given size, by checking every
/// combination.
pub fn connected_subsets(parents: &[Option<usize>], size: usize) -> Vec<Vec<usize>> {
    combinations(parents.len(), size)
        .into_iter()
        .filter(|s| is_connected_subset(parents, s))
        .collect()
}

/// Nested-paren rendering of the induced ordered subtree on `subset`.
pub fn induced_sexpr(parents: &[Option<usize>], labels: &[String], subset: &[usize]) -> String {
    let inside = |v: usize| subset.contains(&v);
    let top = *subset
        .iter()
        .find(|&&v| !parents[v].is_some_and(inside))
        .unwrap();
    fn render(
        v: usize,
        parents: &[Option<usize>],
        labels: &[String],
        subset: &[usize],
        out: &mut String,
    ) {
        out.push('(');
        out.push_str(&labels[v]);
        let mut kids: Vec<usize> = subset
            .iter()
            .copied()
            .filter(|&c| parents[c] == Some(v))
            .collect();
        kids.sort_unstable();
        for c in kids {
            render(c, parents, labels, subset, out);
        }
        out.push(')');
    }
    let mut s = String::new();
    render(top, parents, labels, subset, &mut s);
    s
}

/// Every induced ordered subtree pattern of `size` nodes with the sorted list
/// of tree indices that contain it, keeping those with at least `min_support`.
pub fn brute_force_mine(
    trees: &[(Parents, Vec<String>)],
    size: usize,
    min_support: usize,
) -> BTreeMap<String, Vec<usize>> {
    let mut support: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
    for (t, (parents, labels)) in trees.iter().enumerate() {
        for s in connected_subsets(parents, size) {
            support
                .entry(induced_sexpr(parents, labels, &s))
                .or_default()
                .insert(t);
        }
    }
    support
        .into_iter()
        .filter(|(_, s)| s.len() >= min_support)
        .map(|(k, s)| (k, s.into_iter().collect()))
        .collect()
}

/// Number of embeddings of a pattern tree into a tree, by trying every
/// assignment of pattern nodes to tree nodes.
pub fn count_embeddings_brute(
    pattern: &[Option<usize>],
    pattern_labels: &[String],
    tree: &[Option<usize>],
    tree_labels: &[String],
) -> usize {
    let np = pattern.len();
    let nt = tree.len();
    let mut assign = vec![0usize; np];
    let mut count = 0;
    fn rec(
        x: usize,
        assign: &mut Vec<usize>,
        count: &mut usize,
        pattern: &[Option<usize>],
        pl: &[String],
        tree: &[Option<usize>],
        tl: &[String],
    ) {
        let np = pattern.len();
        if x == np {
            let ok_injective = (0..np).all(|i| (0..i).all(|j| assign[i] != assign[j]));
            let ok_edges = (0..np).all(|i| match pattern[i] {
                Some(p) => tree[assign[i]] == Some(assign[p]),
                None => true,
            });
            // siblings keep their relative order
            let ok_order = (0..np).all(|i| {
                (0..np).all(|j| {
                    if i < j && pattern[i].is_some() && pattern[i] == pattern[j] {
                        assign[i] < assign[j]
                    } else {
                        true
                    }
                })
            });
            if ok_injective && ok_edges && ok_order {
                *count += 1;
            }
            return;
        }
        for v in 0..tree.len() {
            if pl[x] == tl[v] {
                assign[x] = v;
                rec(x + 1, assign, count, pattern, pl, tree, tl);
            }
        }
    }
    if np == 0 || nt == 0 {
        return 0;
    }
    rec(
        0,
        &mut assign,
        &mut count,
        pattern,
        pattern_labels,
        tree,
        tree_labels,
    );
    count
}

/// Adjusted Rand index through pair counting over all `C(n, 2)` pairs.
pub fn ari_pair_counting(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    let (mut n11, mut n10, mut n01, mut n00) = (0f64, 0f64, 0f64, 0f64);
    for i in 0..n {
        for j in (i + 1)..n {
            match (a[i] == a[j], b[i] == b[j]) {
                (true, true) => n11 += 1.0,
                (true, false) => n10 += 1.0,
                (false, true) => n01 += 1.0,
                (false, false) => n00 += 1.0,
            }
        }
    }
    let denom = (n11 + n01) * (n01 + n00) + (n11 + n10) * (n10 + n00);
    if denom == 0.0 {
        return 1.0;
    }
    2.0 * (n11 * n00 - n01 * n10) / denom
}

pub fn conductance_double_loop(w: &[Vec<f64>], members: &[usize]) -> f64 {
    let n = w.len();
    let inside: Vec<bool> = (0..n).map(|i| members.contains(&i)).collect();
    let mut cut = 0.0;
    let mut vol_in = 0.0;
    let mut vol_out = 0.0;
    for i in 0..n {
        for j in 0..n {
            if inside[i] {
                vol_in += w[i][j];
                if !inside[j] {
                    cut += w[i][j];
                }
            } else {
                vol_out += w[i][j];
            }
        }
    }
    cut / vol_in.min(vol_out)
}
