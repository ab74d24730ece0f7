//! Finite trees, their wrist decomposition, and exact multilinear energies
//!
//! ```text
//! T(mu) = sum_{x^1..x^n} prod_{(i,j) in E_T} K(x^i, x^j) prod_i w(x^i)
//! ```
//!
//! evaluated by leaf-to-root message passing.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::KernelMatrix;
use crate::measures::DiscreteMeasure;
use crate::operators::apply_uk;

/// Default cap on `M^n` for [`tree_energy_bruteforce`].
pub const DEFAULT_BRUTEFORCE_BUDGET: u64 = 10_000_000;

/// A tree on vertices `0..n` (files use 1-based labels).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeGraph {
    n: usize,
    edges: Vec<(usize, usize)>,
    adj: Vec<Vec<usize>>,
}

impl TreeGraph {
    pub fn new(n: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidTree(format!("n = {n}: a tree needs at least 2 vertices")));
        }
        if edges.len() != n - 1 {
            return Err(Error::InvalidTree(format!(
                "{} edges on {n} vertices: a tree has exactly n - 1 edges",
                edges.len()
            )));
        }
        let mut adj = vec![Vec::new(); n];
        let mut seen = BTreeSet::new();
        for &(a, b) in &edges {
            if a >= n || b >= n {
                return Err(Error::InvalidTree(format!("edge ({a}, {b}) leaves the vertex range")));
            }
            if a == b {
                return Err(Error::InvalidTree(format!("self-loop at vertex {a}")));
            }
            if !seen.insert((a.min(b), a.max(b))) {
                return Err(Error::InvalidTree(format!("multi-edge between {a} and {b}")));
            }
            adj[a].push(b);
            adj[b].push(a);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        let tree = TreeGraph { n, edges, adj };
        if tree.bfs_order(0).len() != n {
            return Err(Error::InvalidTree("graph is not connected".into()));
        }
        Ok(tree)
    }

    /// Builds from 1-based edge labels.
    pub fn from_one_based(n: usize, edges: &[[usize; 2]]) -> Result<Self> {
        let mut zero = Vec::with_capacity(edges.len());
        for &[a, b] in edges {
            if a == 0 || b == 0 {
                return Err(Error::InvalidTree("vertex labels are 1-based".into()));
            }
            zero.push((a - 1, b - 1));
        }
        Self::new(n, zero)
    }

    pub fn path(n: usize) -> Result<Self> {
        Self::new(n, (1..n).map(|i| (i - 1, i)).collect())
    }

    /// Star with center 0.
    pub fn star(n: usize) -> Result<Self> {
        Self::new(n, (1..n).map(|i| (0, i)).collect())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adj[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj[v].len()
    }

    /// Edge map `E_T(i, j)`.
    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adj[i].binary_search(&j).is_ok()
    }

    pub fn is_path(&self) -> bool {
        (0..self.n).all(|v| self.degree(v) <= 2)
    }

    pub(crate) fn bfs_order(&self, root: usize) -> Vec<usize> {
        let mut order = Vec::with_capacity(self.n);
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([root]);
        seen[root] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            for &u in &self.adj[v] {
                if !seen[u] {
                    seen[u] = true;
                    queue.push_back(u);
                }
            }
        }
        order
    }

    /// Parent of each vertex when rooted at `root` (`None` at the root).
    pub(crate) fn parents(&self, root: usize) -> (Vec<usize>, Vec<Option<usize>>) {
        let order = self.bfs_order(root);
        let mut parent = vec![None; self.n];
        let mut placed = vec![false; self.n];
        placed[root] = true;
        for &v in &order {
            for &u in &self.adj[v] {
                if !placed[u] {
                    placed[u] = true;
                    parent[u] = Some(v);
                }
            }
        }
        (order, parent)
    }

    pub fn to_file(&self) -> TreeFile {
        TreeFile {
            n: self.n,
            edges: self.edges.iter().map(|&(a, b)| [a + 1, b + 1]).collect(),
        }
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let file: TreeFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        file.into_tree()
    }
}

/// On-disk form of a tree, 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeFile {
    pub n: usize,
    pub edges: Vec<[usize; 2]>,
}

impl TreeFile {
    pub fn into_tree(self) -> Result<TreeGraph> {
        TreeGraph::from_one_based(self.n, &self.edges)
    }
}

/// A wrist `w` of order `chains.len()`: `V1 = {w} + chain vertices` meets
/// `V2` only in `w`, and the tree restricted to `V1` is exactly the union of
/// the chains, each of which starts at `w`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Wrist {
    pub vertex: usize,
    pub order: usize,
    pub chains: Vec<Vec<usize>>,
    pub v2_part: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WristReport {
    pub wrists: Vec<Wrist>,
    pub is_chain: bool,
}

impl WristReport {
    /// Relabels every vertex `v` as `v + 1`.
    pub fn one_based(&self) -> WristReport {
        let shift = |vs: &[usize]| vs.iter().map(|v| v + 1).collect::<Vec<_>>();
        WristReport {
            wrists: self
                .wrists
                .iter()
                .map(|w| Wrist {
                    vertex: w.vertex + 1,
                    order: w.order,
                    chains: w.chains.iter().map(|c| shift(c)).collect(),
                    v2_part: shift(&w.v2_part),
                })
                .collect(),
            is_chain: self.is_chain,
        }
    }

    pub fn max_order(&self) -> usize {
        self.wrists.iter().map(|w| w.order).max().unwrap_or(0)
    }
}

/// Wrist decomposition.
///
/// Paths: endpoints are wrists of order 1 (one chain spanning the path),
/// interior vertices wrists of order 2. Otherwise every leaf walks inward to
/// the first vertex of degree >= 3; a vertex that collects two or more such
/// pendant chains is reported with order equal to their count.
pub fn find_wrists(tree: &TreeGraph) -> WristReport {
    let n = tree.n();
    if tree.is_path() {
        let start = (0..n).find(|&v| tree.degree(v) == 1).expect("a path has endpoints");
        let seq = walk_path(tree, start);
        let pos: Vec<usize> = {
            let mut p = vec![0; n];
            for (k, &v) in seq.iter().enumerate() {
                p[v] = k;
            }
            p
        };
        let wrists = (0..n)
            .map(|v| {
                let k = pos[v];
                let forward: Vec<usize> = seq[k..].to_vec();
                let backward: Vec<usize> = seq[..=k].iter().rev().copied().collect();
                let chains = if k == 0 {
                    vec![forward]
                } else if k == n - 1 {
                    vec![backward]
                } else {
                    vec![backward, forward]
                };
                Wrist {
                    vertex: v,
                    order: chains.len(),
                    chains,
                    v2_part: vec![v],
                }
            })
            .collect();
        return WristReport {
            wrists,
            is_chain: true,
        };
    }

    let mut meeting: BTreeMap<usize, Vec<Vec<usize>>> = BTreeMap::new();
    for leaf in (0..n).filter(|&v| tree.degree(v) == 1) {
        let mut walk = vec![leaf];
        let mut prev = leaf;
        let mut cur = tree.neighbors(leaf)[0];
        while tree.degree(cur) == 2 {
            walk.push(cur);
            let next = tree.neighbors(cur).iter().copied().find(|&u| u != prev).unwrap();
            prev = cur;
            cur = next;
        }
        walk.push(cur);
        walk.reverse();
        meeting.entry(cur).or_default().push(walk);
    }

    let wrists = meeting
        .into_iter()
        .filter(|(_, chains)| chains.len() >= 2)
        .map(|(w, chains)| {
            let in_chains: BTreeSet<usize> = chains.iter().flat_map(|c| c[1..].iter().copied()).collect();
            let v2_part = (0..n).filter(|v| !in_chains.contains(v)).collect();
            Wrist {
                vertex: w,
                order: chains.len(),
                chains,
                v2_part,
            }
        })
        .collect();
    WristReport {
        wrists,
        is_chain: false,
    }
}

fn walk_path(tree: &TreeGraph, start: usize) -> Vec<usize> {
    let mut seq = vec![start];
    let mut prev = usize::MAX;
    let mut cur = start;
    loop {
        let next = tree.neighbors(cur).iter().copied().find(|&u| u != prev);
        match next {
            Some(u) => {
                seq.push(u);
                prev = cur;
                cur = u;
            }
            None => break,
        }
    }
    seq
}

/// Checks the four wrist conditions for one reported wrist. Returns a
/// description of the first violated condition.
pub fn validate_wrist(tree: &TreeGraph, wrist: &Wrist) -> std::result::Result<(), String> {
    let n = tree.n();
    let w = wrist.vertex;
    // (i)
    if w >= n {
        return Err(format!("(i) wrist {w} is not a vertex"));
    }
    if wrist.order != wrist.chains.len() || wrist.chains.is_empty() {
        return Err(format!("order {} disagrees with {} chains", wrist.order, wrist.chains.len()));
    }
    // (iv) chains are paths from w meeting only at w
    let mut v1: BTreeSet<usize> = BTreeSet::from([w]);
    let mut chain_edges = BTreeSet::new();
    for chain in &wrist.chains {
        if chain.len() < 2 || chain[0] != w {
            return Err(format!("(iv) chain {chain:?} does not start at {w}"));
        }
        for pair in chain.windows(2) {
            if !tree.has_edge(pair[0], pair[1]) {
                return Err(format!("(iv) chain {chain:?} uses a non-edge {pair:?}"));
            }
            chain_edges.insert((pair[0].min(pair[1]), pair[0].max(pair[1])));
        }
        for &v in &chain[1..] {
            if v >= n || !v1.insert(v) {
                return Err(format!("(iv) vertex {v} repeats across chains"));
            }
        }
    }
    // (ii)
    let v2: BTreeSet<usize> = wrist.v2_part.iter().copied().collect();
    if v2.len() != wrist.v2_part.len() || v2.iter().any(|&v| v >= n) {
        return Err("(ii) V2 has repeated or invalid vertices".into());
    }
    let meet: Vec<usize> = v1.intersection(&v2).copied().collect();
    if meet != [w] {
        return Err(format!("(ii) V1 and V2 meet in {meet:?}, expected [{w}]"));
    }
    if v1.union(&v2).count() != n {
        return Err("(ii) V1 and V2 do not cover the vertex set".into());
    }
    // (iii)
    for &(a, b) in tree.edges() {
        let cross = |x: usize, y: usize| x != w && y != w && v1.contains(&x) && v2.contains(&y);
        if cross(a, b) || cross(b, a) {
            return Err(format!("(iii) edge ({a}, {b}) joins V1 and V2 away from {w}"));
        }
    }
    // (iv) G restricted to V1 is exactly the union of the chains
    let induced: BTreeSet<(usize, usize)> = tree
        .edges()
        .iter()
        .filter(|(a, b)| v1.contains(a) && v1.contains(b))
        .map(|&(a, b)| (a.min(b), a.max(b)))
        .collect();
    if induced != chain_edges {
        return Err("(iv) the tree restricted to V1 has edges outside the chains".into());
    }
    Ok(())
}

/// `C_k(mu) = <U_K^k 1, 1>`, the energy of a path with `k` edges.
pub fn chain_energy(kernel: &KernelMatrix, mu: &DiscreteMeasure, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidParameter("chain length k must be >= 1".into()));
    }
    let mut v = vec![1.0; mu.len()];
    for _ in 0..k {
        v = apply_uk(kernel, mu, &v)?;
    }
    Ok(v.iter().zip(mu.weights()).map(|(a, w)| a * w).sum())
}

/// Exact tree energy by message passing from the leaves to vertex 0.
pub fn tree_energy(kernel: &KernelMatrix, mu: &DiscreteMeasure, tree: &TreeGraph) -> Result<f64> {
    tree_energy_rooted(kernel, mu, tree, 0)
}

pub fn tree_energy_rooted(
    kernel: &KernelMatrix,
    mu: &DiscreteMeasure,
    tree: &TreeGraph,
    root: usize,
) -> Result<f64> {
    if kernel.size() != mu.len() {
        return Err(Error::SizeMismatch {
            expected: mu.len(),
            found: kernel.size(),
        });
    }
    if root >= tree.n() {
        return Err(Error::InvalidParameter(format!("root {root} is not a vertex")));
    }
    let m = mu.len();
    let (order, parent) = tree.parents(root);
    let mut messages: Vec<Option<Vec<f64>>> = vec![None; tree.n()];
    for &v in order.iter().rev() {
        let mut msg = vec![1.0; m];
        // children in ascending index order
        for &c in tree.neighbors(v) {
            if parent[c] != Some(v) {
                continue;
            }
            let child = messages[c].take().expect("children are processed first");
            let pushed = apply_uk(kernel, mu, &child)?;
            msg.iter_mut().zip(&pushed).for_each(|(a, b)| *a *= b);
        }
        messages[v] = Some(msg);
    }
    let top = messages[root].take().unwrap();
    Ok(top.iter().zip(mu.weights()).map(|(a, w)| a * w).sum())
}

/// Direct sum over all `M^n` vertex assignments.
pub fn tree_energy_bruteforce(
    kernel: &KernelMatrix,
    mu: &DiscreteMeasure,
    tree: &TreeGraph,
    budget: u64,
) -> Result<f64> {
    if kernel.size() != mu.len() {
        return Err(Error::SizeMismatch {
            expected: mu.len(),
            found: kernel.size(),
        });
    }
    let m = mu.len();
    let n = tree.n();
    let required = (m as f64).powi(n as i32);
    if required > budget as f64 {
        return Err(Error::BudgetExceeded {
            what: "brute-force tree energy",
            required,
            budget: budget as f64,
        });
    }
    // edges from each vertex back to lower-indexed vertices
    let back: Vec<Vec<usize>> = (0..n)
        .map(|v| tree.neighbors(v).iter().copied().filter(|&u| u < v).collect())
        .collect();
    let mut assign = vec![0usize; n];
    Ok(bruteforce_rec(kernel, mu.weights(), &back, &mut assign, 0, 1.0))
}

fn bruteforce_rec(
    kernel: &KernelMatrix,
    w: &[f64],
    back: &[Vec<usize>],
    assign: &mut [usize],
    v: usize,
    partial: f64,
) -> f64 {
    if v == assign.len() {
        return partial;
    }
    let mut total = 0.0;
    for p in 0..w.len() {
        let mut factor = w[p];
        for &u in &back[v] {
            factor *= kernel.get(assign[u], p);
        }
        if factor == 0.0 {
            continue;
        }
        assign[v] = p;
        total += bruteforce_rec(kernel, w, back, assign, v + 1, partial * factor);
    }
    total
}
