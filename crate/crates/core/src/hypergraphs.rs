//! Configuration graphs and the two-vertex hyperedge kernels obtained by
//! summing their interior vertices out against the measure.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{KernelMatrix, Mollifier, PhiSpec};
use crate::measures::DiscreteMeasure;
use crate::trees::{tree_energy, TreeGraph};

/// Largest number of interior (non-joint) vertices.
pub const MAX_INTERIOR: usize = 3;

/// Default cap on `M^(k-2)` interior assignments per kernel entry.
pub const DEFAULT_INTERIOR_BUDGET: u64 = 1_000_000;

/// A connected graph on `0..k` with a gap label on each edge and an ordered
/// pair of joint vertices where hyperedges attach.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigGraph {
    k: usize,
    labeled_edges: Vec<(usize, usize, f64)>,
    joint_pair: (usize, usize),
}

impl ConfigGraph {
    pub fn new(k: usize, labeled_edges: Vec<(usize, usize, f64)>, joint_pair: (usize, usize)) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidConfigGraph(format!("k = {k}: need at least 2 vertices")));
        }
        let (u, v) = joint_pair;
        if u >= k || v >= k || u == v {
            return Err(Error::InvalidConfigGraph(format!(
                "joint pair ({u}, {v}) must be two distinct vertices"
            )));
        }
        let mut seen = BTreeSet::new();
        let mut adj = vec![Vec::new(); k];
        for &(a, b, t) in &labeled_edges {
            if a >= k || b >= k || a == b {
                return Err(Error::InvalidConfigGraph(format!("edge ({a}, {b}) is not a pair of vertices")));
            }
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::InvalidConfigGraph(format!("label t = {t} on edge ({a}, {b}) must be > 0")));
            }
            if !seen.insert((a.min(b), a.max(b))) {
                return Err(Error::InvalidConfigGraph(format!("edge ({a}, {b}) is labeled twice")));
            }
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut reached = vec![false; k];
        let mut stack = vec![0];
        reached[0] = true;
        while let Some(x) = stack.pop() {
            for &y in &adj[x] {
                if !reached[y] {
                    reached[y] = true;
                    stack.push(y);
                }
            }
        }
        if reached.iter().any(|r| !r) {
            return Err(Error::InvalidConfigGraph("configuration graph is not connected".into()));
        }
        Ok(ConfigGraph {
            k,
            labeled_edges,
            joint_pair,
        })
    }

    /// `k = 2`: one edge with gap `t`, the plain distance kernel.
    pub fn single_edge(t: f64) -> Result<Self> {
        Self::new(2, vec![(0, 1, t)], (0, 1))
    }

    /// Triangle with the `a`-edge joining the two joint vertices.
    pub fn triangle(a: f64, b: f64, c: f64) -> Result<Self> {
        Self::new(3, vec![(0, 1, a), (0, 2, b), (1, 2, c)], (0, 1))
    }

    /// Rhombus `0-1-2-3-0` with all sides `t`, joined along the diagonal `(0, 2)`.
    pub fn square(t: f64) -> Result<Self> {
        Self::new(4, vec![(0, 1, t), (1, 2, t), (2, 3, t), (3, 0, t)], (0, 2))
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn labeled_edges(&self) -> &[(usize, usize, f64)] {
        &self.labeled_edges
    }

    pub fn joint_pair(&self) -> (usize, usize) {
        self.joint_pair
    }

    pub fn with_joint_pair(&self, joint_pair: (usize, usize)) -> Result<Self> {
        Self::new(self.k, self.labeled_edges.clone(), joint_pair)
    }

    pub fn interior(&self) -> Vec<usize> {
        let (u, v) = self.joint_pair;
        (0..self.k).filter(|&x| x != u && x != v).collect()
    }

    pub fn to_file(&self) -> ConfigFile {
        ConfigFile {
            k: self.k,
            labeled_edges: self
                .labeled_edges
                .iter()
                .map(|&(a, b, t)| ((a + 1) as f64, (b + 1) as f64, t))
                .map(|(a, b, t)| [a, b, t])
                .collect(),
            joint_pair: [self.joint_pair.0 + 1, self.joint_pair.1 + 1],
        }
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let file: ConfigFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        file.into_config()
    }
}

/// On-disk form, 1-based; edges are `[i, j, t]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigFile {
    pub k: usize,
    pub labeled_edges: Vec<[f64; 3]>,
    pub joint_pair: [usize; 2],
}

impl ConfigFile {
    pub fn into_config(self) -> Result<ConfigGraph> {
        let label = |x: f64| -> Result<usize> {
            if x >= 1.0 && x.fract() == 0.0 {
                Ok(x as usize - 1)
            } else {
                Err(Error::InvalidConfigGraph(format!("vertex label {x} is not a 1-based integer")))
            }
        };
        let mut edges = Vec::with_capacity(self.labeled_edges.len());
        for [a, b, t] in self.labeled_edges {
            edges.push((label(a)?, label(b)?, t));
        }
        let [u, v] = self.joint_pair;
        if u == 0 || v == 0 {
            return Err(Error::InvalidConfigGraph("joint pair labels are 1-based".into()));
        }
        ConfigGraph::new(self.k, edges, (u - 1, v - 1))
    }
}

/// Hyperedge kernel `K(p_i, p_j) = (W(i, j) + W(j, i)) / 2`, where `W(i, j)`
/// sums the product of edge shells over all assignments of interior vertices,
/// with the joint pair sent to `(p_i, p_j)`. Assignments placing both ends of
/// an edge on one point contribute nothing.
pub fn config_kernel_matrix(
    config: &ConfigGraph,
    phi: &PhiSpec,
    eps: f64,
    mu: &DiscreteMeasure,
    mollifier: Mollifier,
    budget: u64,
) -> Result<KernelMatrix> {
    phi.validate(mu.dim())?;
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidParameter(format!("eps = {eps} must be > 0")));
    }
    mu.require_width("eps", eps)?;
    let interior = config.interior();
    if interior.len() > MAX_INTERIOR {
        return Err(Error::InvalidConfigGraph(format!(
            "{} interior vertices; at most {MAX_INTERIOR} are enumerated",
            interior.len()
        )));
    }
    let m = mu.len();
    let required = (m as f64).powi(interior.len() as i32);
    if required > budget as f64 {
        return Err(Error::BudgetExceeded {
            what: "interior assignments per entry",
            required,
            budget: budget as f64,
        });
    }

    let shells: Vec<Vec<f64>> = config
        .labeled_edges
        .iter()
        .map(|&(_, _, t)| {
            let mut s = vec![0.0; m * m];
            for p in 0..m {
                for q in 0..m {
                    if p != q {
                        s[p * m + q] = mollifier.shell(eps, t, phi.eval(mu.point(p), mu.point(q)));
                    }
                }
            }
            s
        })
        .collect();

    // Vertices in assignment order: joint pair first, then interior. Each
    // edge is charged at the step where its later endpoint is placed.
    let (u, v) = config.joint_pair;
    let order: Vec<usize> = [u, v].into_iter().chain(interior.iter().copied()).collect();
    let mut step_of = vec![0; config.k];
    for (s, &x) in order.iter().enumerate() {
        step_of[x] = s;
    }
    let mut charges: Vec<Vec<(usize, usize, usize)>> = vec![Vec::new(); config.k];
    for (e, &(a, b, _)) in config.labeled_edges.iter().enumerate() {
        charges[step_of[a].max(step_of[b])].push((e, step_of[a], step_of[b]));
    }
    let plan = Plan {
        m,
        shells: &shells,
        charges: &charges,
        w: mu.weights(),
    };

    let provenance = format!(
        "config k={} edges={:?} joint={:?} phi={} eps={eps} mollifier={mollifier:?}",
        config.k,
        config.labeled_edges,
        config.joint_pair,
        phi.family()
    );
    Ok(KernelMatrix::from_upper(
        m,
        |i, j| 0.5 * (plan.joint_sum(i, j) + plan.joint_sum(j, i)),
        provenance,
    ))
}

struct Plan<'a> {
    m: usize,
    shells: &'a [Vec<f64>],
    charges: &'a [Vec<(usize, usize, usize)>],
    w: &'a [f64],
}

impl Plan<'_> {
    fn factor(&self, step: usize, assign: &[usize]) -> f64 {
        let mut f = 1.0;
        for &(e, sa, sb) in &self.charges[step] {
            f *= self.shells[e][assign[sa] * self.m + assign[sb]];
            if f == 0.0 {
                break;
            }
        }
        f
    }

    fn joint_sum(&self, i: usize, j: usize) -> f64 {
        let k = self.charges.len();
        let mut assign = vec![0; k];
        assign[0] = i;
        assign[1] = j;
        let base = self.factor(1, &assign);
        if base == 0.0 {
            return 0.0;
        }
        base * self.interior_sum(&mut assign, 2)
    }

    fn interior_sum(&self, assign: &mut [usize], step: usize) -> f64 {
        if step == assign.len() {
            return 1.0;
        }
        let mut total = 0.0;
        for p in 0..self.m {
            assign[step] = p;
            let f = self.factor(step, assign);
            if f == 0.0 {
                continue;
            }
            total += self.w[p] * f * self.interior_sum(assign, step + 1);
        }
        total
    }
}

/// Energy of a tree of hyperedges: `shape` edges become copies of the
/// configuration, adjacent copies sharing one joint vertex.
#[allow(clippy::too_many_arguments)]
pub fn config_tree_energy(
    config: &ConfigGraph,
    phi: &PhiSpec,
    eps: f64,
    mu: &DiscreteMeasure,
    mollifier: Mollifier,
    shape: &TreeGraph,
    budget: u64,
) -> Result<f64> {
    let k = config_kernel_matrix(config, phi, eps, mu, mollifier, budget)?;
    tree_energy(&k, mu, shape)
}
