//! Rooted trees, ancestor/descendant/level-set queries and spanning-tree
//! utilities.
//!
//! Node 0 is always the root (the substation). Depth is the number of edges
//! on the root path, so `d_0 = 0` and the ancestor list of `m` runs
//! `α_m^0 = 0, …, α_m^{d_m} = m`.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{bail, Error, Result};
use crate::nodeset::NodeSet;

/// A spanning tree over nodes `0..node_count` rooted at node 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeGraph {
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
}

impl TreeGraph {
    /// Builds a tree from `parent[m]` for every node; `parent[0]` must be `None`.
    pub fn from_parents(parent: Vec<Option<usize>>) -> Result<Self> {
        let n = parent.len();
        if n == 0 {
            bail!(Structure, "a tree needs at least the root node");
        }
        if parent[0].is_some() {
            bail!(Structure, "node 0 is the root and cannot have a parent");
        }
        let mut children = vec![Vec::new(); n];
        for (m, p) in parent.iter().enumerate().skip(1) {
            match *p {
                None => bail!(Structure, "node {m} has no parent"),
                Some(p) if p >= n => bail!(Structure, "parent {p} of node {m} is out of range"),
                Some(p) if p == m => bail!(Structure, "node {m} is its own parent"),
                Some(p) => children[p].push(m),
            }
        }
        // Every node must reach the root in fewer than n steps.
        for start in 1..n {
            let mut cur = start;
            let mut steps = 0;
            while let Some(p) = parent[cur] {
                cur = p;
                steps += 1;
                if steps > n {
                    bail!(Structure, "parent relation has a cycle through node {start}");
                }
            }
        }
        Ok(Self { parent, children })
    }

    /// Orients an undirected edge list away from node 0.
    pub fn from_edges(node_count: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if node_count == 0 {
            bail!(Structure, "a tree needs at least the root node");
        }
        if edges.len() + 1 != node_count {
            bail!(
                Structure,
                "{} edges cannot span {} nodes as a tree",
                edges.len(),
                node_count
            );
        }
        let mut adj = vec![Vec::new(); node_count];
        for &(u, v) in edges {
            if u >= node_count || v >= node_count || u == v {
                bail!(Structure, "invalid edge ({u}, {v})");
            }
            adj[u].push(v);
            adj[v].push(u);
        }
        let mut parent = vec![None; node_count];
        let mut seen = vec![false; node_count];
        seen[0] = true;
        let mut queue = VecDeque::from([0usize]);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    parent[v] = Some(u);
                    queue.push_back(v);
                }
            }
        }
        if let Some(m) = seen.iter().position(|s| !s) {
            bail!(Structure, "node {m} is not connected to the root");
        }
        Self::from_parents(parent)
    }

    pub fn node_count(&self) -> usize {
        self.parent.len()
    }

    pub fn parent(&self, m: usize) -> Option<usize> {
        self.parent[m]
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parent
    }

    pub fn children(&self, m: usize) -> &[usize] {
        &self.children[m]
    }

    /// `(parent, child)` pairs, ordered by child index.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.parent
            .iter()
            .enumerate()
            .filter_map(|(m, p)| p.map(|p| (p, m)))
    }

    /// Undirected edges as `(min, max)` pairs, sorted.
    pub fn edge_set(&self) -> Vec<(usize, usize)> {
        let mut e: Vec<_> = self.edges().map(|(a, b)| (a.min(b), a.max(b))).collect();
        e.sort_unstable();
        e
    }

    /// Nodes in breadth-first order from the root.
    pub fn bfs_order(&self) -> Vec<usize> {
        let mut order = Vec::with_capacity(self.node_count());
        order.push(0);
        let mut i = 0;
        while i < order.len() {
            order.extend_from_slice(&self.children[order[i]]);
            i += 1;
        }
        order
    }
}

/// Precomputed ancestor, descendant and depth structure of a [`TreeGraph`].
#[derive(Debug, Clone)]
pub struct LevelSetIndex {
    depth: Vec<usize>,
    ancestors: Vec<Vec<usize>>,
    descendants: Vec<NodeSet>,
    leaves: NodeSet,
}

/// Builds the level-set index. Work is proportional to the sum of root-path
/// lengths plus one set union per edge.
pub fn build_index(g: &TreeGraph) -> LevelSetIndex {
    let n = g.node_count();
    let order = g.bfs_order();
    let mut depth = vec![0; n];
    let mut ancestors: Vec<Vec<usize>> = vec![Vec::new(); n];
    ancestors[0] = vec![0];
    for &m in order.iter().skip(1) {
        let p = g.parent(m).expect("non-root node has a parent");
        depth[m] = depth[p] + 1;
        let mut a = Vec::with_capacity(depth[m] + 1);
        a.extend_from_slice(&ancestors[p]);
        a.push(m);
        ancestors[m] = a;
    }
    let mut descendants: Vec<NodeSet> = (0..n).map(|m| NodeSet::singleton(n, m)).collect();
    for &m in order.iter().rev() {
        if let Some(p) = g.parent(m) {
            let merged = descendants[p].union(&descendants[m]);
            descendants[p] = merged;
        }
    }
    let leaves = NodeSet::from_nodes(n, (0..n).filter(|&m| descendants[m].len() == 1));
    LevelSetIndex {
        depth,
        ancestors,
        descendants,
        leaves,
    }
}

impl LevelSetIndex {
    pub fn node_count(&self) -> usize {
        self.depth.len()
    }

    pub fn depth(&self, m: usize) -> usize {
        self.depth[m]
    }

    /// `α_m^0, …, α_m^{d_m}`.
    pub fn ancestors(&self, m: usize) -> &[usize] {
        &self.ancestors[m]
    }

    /// `α_m^k`; panics if `k > d_m`.
    pub fn ancestor(&self, m: usize, k: usize) -> usize {
        self.ancestors[m][k]
    }

    pub fn descendants(&self, m: usize) -> &NodeSet {
        &self.descendants[m]
    }

    pub fn leaves(&self) -> &NodeSet {
        &self.leaves
    }

    pub fn is_leaf(&self, m: usize) -> bool {
        self.leaves.contains(m)
    }

    /// `N_m^k = D_{α_m^k} \ D_{α_m^{k+1}}` for `k < d_m`, and `D_m` for `k = d_m`.
    pub fn level_set(&self, m: usize, k: usize) -> Result<NodeSet> {
        let d = self.depth[m];
        if k > d {
            bail!(Argument, "level {k} exceeds depth {d} of node {m}");
        }
        if k == d {
            return Ok(self.descendants[m].clone());
        }
        let a = &self.ancestors[m];
        Ok(self.descendants[a[k]].difference(&self.descendants[a[k + 1]]))
    }

    /// All level sets `N_m^0, …, N_m^{d_m}`.
    pub fn level_sets(&self, m: usize) -> Vec<NodeSet> {
        (0..=self.depth[m])
            .map(|k| self.level_set(m, k).expect("k within depth"))
            .collect()
    }
}

/// Disjoint-set forest with path halving and union by size.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Merges the sets of `a` and `b`; returns `false` if they were already joined.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            core::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedEdge {
    pub u: usize,
    pub v: usize,
    pub weight: f64,
}

/// Kruskal's algorithm. Edges are ranked by `(weight, min endpoint, max
/// endpoint, input position)`, so ties resolve the same way on every run.
/// Returns the input positions of the selected edges.
pub fn kruskal(node_count: usize, edges: &[WeightedEdge]) -> Result<Vec<usize>> {
    let mut order: Vec<usize> = (0..edges.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (&edges[i], &edges[j]);
        a.weight
            .total_cmp(&b.weight)
            .then(a.u.min(a.v).cmp(&b.u.min(b.v)))
            .then(a.u.max(a.v).cmp(&b.u.max(b.v)))
            .then(i.cmp(&j))
    });
    let mut uf = UnionFind::new(node_count);
    let mut chosen = Vec::with_capacity(node_count.saturating_sub(1));
    for i in order {
        let e = &edges[i];
        if e.u != e.v && uf.union(e.u, e.v) {
            chosen.push(i);
            if chosen.len() + 1 == node_count {
                break;
            }
        }
    }
    if chosen.len() + 1 != node_count {
        bail!(
            Infeasible,
            "graph is disconnected: spanning forest has {} of {} edges",
            chosen.len(),
            node_count.saturating_sub(1)
        );
    }
    Ok(chosen)
}

/// Minimum spanning tree of the complete graph with symmetric weights
/// `weights[(m, n)]`, restricted to pairs with `mask[(m, n)] == true` when a
/// mask is given. Only the upper triangle is read.
pub fn minimum_spanning_tree(
    weights: &DMatrix<f64>,
    mask: Option<&DMatrix<bool>>,
) -> Result<TreeGraph> {
    let n = weights.nrows();
    if weights.ncols() != n {
        bail!(Dimension, "weight matrix must be square");
    }
    if let Some(mask) = mask {
        if mask.shape() != weights.shape() {
            bail!(Dimension, "edge mask shape differs from the weight matrix");
        }
    }
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            if mask.map_or(true, |m| m[(u, v)]) {
                edges.push(WeightedEdge {
                    u,
                    v,
                    weight: weights[(u, v)],
                });
            }
        }
    }
    let chosen = kruskal(n, &edges)?;
    let pairs: Vec<_> = chosen.iter().map(|&i| (edges[i].u, edges[i].v)).collect();
    TreeGraph::from_edges(n, &pairs)
}

/// Enumerates every spanning tree of the multigraph `edges` over
/// `node_count` nodes that contains all edges flagged in `forced`.
/// Each result is an inclusion vector over `edges`, in lexicographic
/// include-first order. Fails once more than `budget` trees are found.
pub fn enumerate_spanning_trees(
    node_count: usize,
    edges: &[(usize, usize)],
    forced: &[bool],
    budget: usize,
) -> Result<Vec<Vec<bool>>> {
    if forced.len() != edges.len() {
        bail!(Dimension, "forced flags must match the edge list");
    }
    struct Search<'a> {
        n: usize,
        edges: &'a [(usize, usize)],
        forced: &'a [bool],
        budget: usize,
        current: Vec<bool>,
        out: Vec<Vec<bool>>,
    }
    impl Search<'_> {
        fn go(&mut self, i: usize, taken: usize, uf: &UnionFind) -> Result<()> {
            let need = self.n - 1;
            if taken == need {
                if self.forced[i..].iter().any(|&f| f) {
                    return Ok(());
                }
                if self.out.len() == self.budget {
                    return Err(Error::Budget {
                        budget: self.budget,
                    });
                }
                self.out.push(self.current.clone());
                return Ok(());
            }
            if i == self.edges.len() || taken + (self.edges.len() - i) < need {
                return Ok(());
            }
            let (u, v) = self.edges[i];
            let mut with = uf.clone();
            if with.union(u, v) {
                self.current[i] = true;
                self.go(i + 1, taken + 1, &with)?;
                self.current[i] = false;
            }
            if !self.forced[i] {
                self.go(i + 1, taken, uf)?;
            }
            Ok(())
        }
    }
    if node_count == 0 {
        bail!(Argument, "empty graph");
    }
    if edges.iter().any(|&(u, v)| u >= node_count || v >= node_count) {
        bail!(Argument, "edge endpoint out of range");
    }
    let mut s = Search {
        n: node_count,
        edges,
        forced,
        budget,
        current: vec![false; edges.len()],
        out: Vec::new(),
    };
    s.go(0, 0, &UnionFind::new(node_count))?;
    Ok(s.out)
}

/// Uniformly random labelled tree on `node_count` nodes (Prüfer decoding),
/// rooted at node 0.
pub fn random_tree<R: Rng + ?Sized>(rng: &mut R, node_count: usize) -> TreeGraph {
    assert!(node_count >= 1);
    if node_count <= 2 {
        let parent = (0..node_count).map(|m| (m > 0).then_some(0)).collect();
        return TreeGraph::from_parents(parent).expect("trivial tree");
    }
    let code: Vec<usize> = (0..node_count - 2)
        .map(|_| rng.random_range(0..node_count))
        .collect();
    let mut degree = vec![1usize; node_count];
    for &c in &code {
        degree[c] += 1;
    }
    let mut edges = Vec::with_capacity(node_count - 1);
    for &c in &code {
        let leaf = (0..node_count).find(|&m| degree[m] == 1).expect("a leaf exists");
        edges.push((leaf, c));
        degree[leaf] -= 1;
        degree[c] -= 1;
    }
    let rest: Vec<usize> = (0..node_count).filter(|&m| degree[m] == 1).collect();
    edges.push((rest[0], rest[1]));
    TreeGraph::from_edges(node_count, &edges).expect("Prüfer decoding yields a tree")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn path3() -> TreeGraph {
        TreeGraph::from_parents(vec![None, Some(0), Some(1)]).unwrap()
    }

    #[test]
    fn path_index() {
        let idx = build_index(&path3());
        assert_eq!((0..3).map(|m| idx.depth(m)).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!(idx.ancestors(2), &[0, 1, 2]);
        assert_eq!(idx.descendants(1).to_vec(), vec![1, 2]);
        assert_eq!(idx.leaves().to_vec(), vec![2]);
        let ls: Vec<_> = idx.level_sets(2).iter().map(NodeSet::to_vec).collect();
        assert_eq!(ls, vec![vec![0], vec![1], vec![2]]);
    }

    #[test]
    fn star_index() {
        let g = TreeGraph::from_parents(vec![None, Some(0), Some(0), Some(0)]).unwrap();
        let idx = build_index(&g);
        assert_eq!(idx.leaves().to_vec(), vec![1, 2, 3]);
        assert!((1..4).all(|m| idx.depth(m) == 1));
    }

    // Root 0 feeds a = 1; a feeds m = 2 and a side branch 3; m feeds 4 and 5;
    // 5 feeds the leaf n = 6. This mirrors the usual picture of an internal
    // node m with a leaf n beneath it.
    #[test]
    fn internal_node_and_leaf() {
        let g = TreeGraph::from_parents(vec![
            None,
            Some(0),
            Some(1),
            Some(1),
            Some(2),
            Some(2),
            Some(5),
        ])
        .unwrap();
        let idx = build_index(&g);
        let (m, n) = (2, 6);
        assert!(idx.is_leaf(n));
        assert!(!idx.is_leaf(m));
        assert_eq!(idx.ancestors(m), &[0, 1, 2]);
        assert_eq!(idx.descendants(m).to_vec(), vec![2, 4, 5, 6]);
        // N_m^1: α_m^1 plus its subtrees except the one holding m.
        assert_eq!(idx.level_set(m, 1).unwrap().to_vec(), vec![1, 3]);
        assert_eq!(idx.level_set(n, 3).unwrap().to_vec(), vec![5]);
        assert_eq!(idx.level_set(n, 4).unwrap().to_vec(), vec![6]);
    }

    #[test]
    fn level_set_out_of_range() {
        let idx = build_index(&path3());
        assert!(matches!(idx.level_set(1, 2), Err(Error::Argument(_))));
    }

    #[test]
    fn rejects_bad_parent_arrays() {
        assert!(TreeGraph::from_parents(vec![None, Some(2), Some(1)]).is_err());
        assert!(TreeGraph::from_parents(vec![Some(0), Some(0)]).is_err());
        assert!(TreeGraph::from_parents(vec![None, None]).is_err());
        assert!(TreeGraph::from_edges(4, &[(0, 1), (2, 3), (3, 2)]).is_err());
        assert!(TreeGraph::from_edges(4, &[(0, 1), (1, 2), (2, 0)]).is_err());
    }

    fn brute_level_set(idx: &LevelSetIndex, m: usize, k: usize) -> Vec<usize> {
        let n = idx.node_count();
        let d = idx.depth(m);
        let in_d = |a: usize, x: usize| idx.ancestors(x).contains(&a);
        (0..n)
            .filter(|&x| {
                let a = idx.ancestor(m, k);
                if k == d {
                    in_d(m, x)
                } else {
                    in_d(a, x) && !in_d(idx.ancestor(m, k + 1), x)
                }
            })
            .collect()
    }

    #[test]
    fn level_sets_match_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let n = rng.random_range(1..=9);
            let g = random_tree(&mut rng, n);
            let idx = build_index(&g);
            for m in 0..n {
                let d = idx.depth(m);
                let mut cover = NodeSet::empty(n);
                for k in 0..=d {
                    let ls = idx.level_set(m, k).unwrap();
                    assert_eq!(ls.to_vec(), brute_level_set(&idx, m, k));
                    // α_m^k is the unique depth-k member.
                    let a = idx.ancestor(m, k);
                    assert_eq!(idx.depth(a), k);
                    for x in ls.iter() {
                        assert!(x == a || idx.depth(x) > k);
                        // every member descends from α_m^k
                        assert_eq!(idx.ancestor(x, k), a);
                    }
                    assert!(cover.intersection(&ls).is_empty());
                    cover = cover.union(&ls);
                }
                assert_eq!(cover.len(), n, "level sets partition the nodes");
                if idx.is_leaf(m) {
                    assert_eq!(idx.level_set(m, d).unwrap().to_vec(), vec![m]);
                }
            }
        }
    }

    fn intersect_level(idx: &LevelSetIndex, w: &[usize], k: usize) -> Option<NodeSet> {
        let mut acc: Option<NodeSet> = None;
        for &x in w {
            if k > idx.depth(x) {
                return None;
            }
            let ls = idx.level_set(x, k).unwrap();
            acc = Some(match acc {
                None => ls,
                Some(a) => a.intersection(&ls),
            });
        }
        acc
    }

    #[test]
    fn leaf_ancestors_are_singleton_intersections() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..150 {
            let n = rng.random_range(2..=10);
            let g = random_tree(&mut rng, n);
            let idx = build_index(&g);
            let leaves = idx.leaves().to_vec();
            // The leaves below n isolate n at its own depth.
            for x in 0..n {
                let w: Vec<_> = idx.descendants(x).intersection(idx.leaves()).to_vec();
                let inter = intersect_level(&idx, &w, idx.depth(x)).unwrap();
                assert_eq!(inter.to_vec(), vec![x]);
            }
            // Converse: any leaf subset W ∋ m with a singleton k-level
            // intersection names α_m^k.
            for &m in &leaves {
                let others: Vec<_> = leaves.iter().copied().filter(|&l| l != m).collect();
                for mask in 0u32..(1 << others.len()) {
                    let mut w = vec![m];
                    w.extend(
                        others
                            .iter()
                            .enumerate()
                            .filter(|(i, _)| mask >> i & 1 == 1)
                            .map(|(_, &l)| l),
                    );
                    for k in 0..=idx.depth(m) {
                        if let Some(s) = intersect_level(&idx, &w, k).and_then(|s| s.single()) {
                            assert_eq!(s, idx.ancestor(m, k));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn mst_triangle() {
        let w = DMatrix::from_row_slice(3, 3, &[0., 1., 3., 1., 0., 2., 3., 2., 0.]);
        let t = minimum_spanning_tree(&w, None).unwrap();
        assert_eq!(t.edge_set(), vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn mst_ties_are_deterministic() {
        let w = DMatrix::from_element(3, 3, 1.0);
        let first = minimum_spanning_tree(&w, None).unwrap();
        for _ in 0..5 {
            assert_eq!(minimum_spanning_tree(&w, None).unwrap(), first);
        }
        assert_eq!(first.edge_set(), vec![(0, 1), (0, 2)]);
    }

    #[test]
    fn mst_matches_exhaustive_enumeration_on_k4() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pairs: Vec<(usize, usize)> = (0..4)
            .flat_map(|u| ((u + 1)..4).map(move |v| (u, v)))
            .collect();
        for _ in 0..50 {
            let mut w = DMatrix::zeros(4, 4);
            for &(u, v) in &pairs {
                let x: f64 = rng.random();
                w[(u, v)] = x;
                w[(v, u)] = x;
            }
            let trees = enumerate_spanning_trees(4, &pairs, &[false; 6], 100).unwrap();
            assert_eq!(trees.len(), 16);
            let best = trees
                .iter()
                .min_by(|a, b| {
                    let cost = |t: &Vec<bool>| -> f64 {
                        pairs.iter().zip(t).filter(|(_, &on)| on).map(|(&(u, v), _)| w[(u, v)]).sum()
                    };
                    cost(a).total_cmp(&cost(b))
                })
                .unwrap();
            let mut expect: Vec<_> = pairs.iter().zip(best).filter(|(_, &on)| on).map(|(&p, _)| p).collect();
            expect.sort_unstable();
            assert_eq!(minimum_spanning_tree(&w, None).unwrap().edge_set(), expect);
        }
    }

    #[test]
    fn mst_respects_mask_and_reports_disconnection() {
        let w = DMatrix::from_row_slice(3, 3, &[0., 1., 3., 1., 0., 2., 3., 2., 0.]);
        let mut mask = DMatrix::from_element(3, 3, true);
        mask[(0, 1)] = false;
        mask[(1, 0)] = false;
        assert_eq!(
            minimum_spanning_tree(&w, Some(&mask)).unwrap().edge_set(),
            vec![(0, 2), (1, 2)]
        );
        mask[(1, 2)] = false;
        assert!(matches!(
            minimum_spanning_tree(&w, Some(&mask)),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn enumeration_counts_and_forced_edges() {
        // A 5-cycle has 5 spanning trees; forcing one edge leaves 4.
        let cyc: Vec<_> = (0..5).map(|i| (i, (i + 1) % 5)).collect();
        assert_eq!(enumerate_spanning_trees(5, &cyc, &[false; 5], 100).unwrap().len(), 5);
        let mut forced = [false; 5];
        forced[2] = true;
        let t = enumerate_spanning_trees(5, &cyc, &forced, 100).unwrap();
        assert_eq!(t.len(), 4);
        assert!(t.iter().all(|b| b[2]));
        assert!(matches!(
            enumerate_spanning_trees(5, &cyc, &[false; 5], 3),
            Err(Error::Budget { budget: 3 })
        ));
    }
}
