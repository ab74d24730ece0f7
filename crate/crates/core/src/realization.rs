//! Gap scans of `J_eps(t) = <U_K 1, 1>` and explicit tree realizations.
//!
//! A positive scan value is a discrete certificate at the measure's
//! resolution; it says nothing about the continuum limit by itself.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{assemble_kernel_matrix_with, KernelSpec, Mollifier, PhiSpec, ResolutionCheck};
use crate::measures::DiscreteMeasure;
use crate::operators::lower_constant;
use crate::trees::TreeGraph;

pub const CERTIFICATE_LABEL: &str = "discrete certificate";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapInterval {
    pub t_lo: f64,
    pub t_hi: f64,
    pub min_j: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapScan {
    pub t_grid: Vec<f64>,
    pub j_values: Vec<f64>,
    pub eps: f64,
    pub mollifier: Mollifier,
    pub threshold: f64,
    pub intervals: Vec<GapInterval>,
    /// Set when `eps` sits below the measure's width floor.
    pub resolution_waived: bool,
    pub label: String,
    pub warnings: Vec<String>,
}

impl GapScan {
    pub fn max_j(&self) -> f64 {
        self.j_values.iter().copied().fold(0.0, f64::max)
    }

    pub fn j_at(&self, t: f64) -> Option<f64> {
        self.t_grid.iter().position(|&g| g == t).map(|k| self.j_values[k])
    }

    /// `t,J` table with `#` comment lines carrying the header and intervals.
    pub fn to_csv(&self, header: &[String]) -> String {
        let mut out = String::new();
        for line in header {
            out.push_str(&format!("# {line}\n"));
        }
        out.push_str(&format!(
            "# {} eps={} mollifier={:?} threshold={} resolution_waived={}\n",
            self.label, self.eps, self.mollifier, self.threshold, self.resolution_waived
        ));
        for w in &self.warnings {
            out.push_str(&format!("# warning: {w}\n"));
        }
        out.push_str("t,J\n");
        for (t, j) in self.t_grid.iter().zip(&self.j_values) {
            out.push_str(&format!("{t},{j}\n"));
        }
        out.push_str("# intervals\n# t_lo,t_hi,min_J\n");
        for iv in &self.intervals {
            out.push_str(&format!("# {},{},{}\n", iv.t_lo, iv.t_hi, iv.min_j));
        }
        out
    }
}

/// `steps` evenly spaced gaps from `t_min` to `t_max`, inclusive.
pub fn gap_grid(t_min: f64, t_max: f64, steps: usize) -> Result<Vec<f64>> {
    if !(t_min > 0.0 && t_min < t_max && t_max.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "need 0 < t_min < t_max, got [{t_min}, {t_max}]"
        )));
    }
    if steps < 2 {
        return Err(Error::InvalidParameter(format!("steps = {steps} must be >= 2")));
    }
    let h = (t_max - t_min) / (steps - 1) as f64;
    Ok((0..steps)
        .map(|k| if k == steps - 1 { t_max } else { t_min + h * k as f64 })
        .collect())
}

pub fn scan_gap(
    phi: &PhiSpec,
    mu: &DiscreteMeasure,
    grid: (f64, f64, usize),
    eps: f64,
    threshold: f64,
    mollifier: Mollifier,
) -> Result<GapScan> {
    scan_gap_with(phi, mu, grid, eps, threshold, mollifier, ResolutionCheck::Enforce)
}

/// As [`scan_gap`]; `Waive` admits `eps` below the width floor for
/// convergence comparisons and marks the scan accordingly.
pub fn scan_gap_with(
    phi: &PhiSpec,
    mu: &DiscreteMeasure,
    (t_min, t_max, steps): (f64, f64, usize),
    eps: f64,
    threshold: f64,
    mollifier: Mollifier,
    check: ResolutionCheck,
) -> Result<GapScan> {
    let t_grid = gap_grid(t_min, t_max, steps)?;
    KernelSpec::new(phi.clone(), t_min, eps, mollifier).validate(mu.dim())?;
    if check == ResolutionCheck::Enforce {
        mu.require_width("eps", eps)?;
    }
    let resolution_waived = mu.width_floor().is_some_and(|f| eps < f);
    let j_values = t_grid
        .par_iter()
        .map(|&t| {
            let spec = KernelSpec::new(phi.clone(), t, eps, mollifier);
            let k = assemble_kernel_matrix_with(&spec, mu, 0.0, ResolutionCheck::Waive)?;
            lower_constant(&k, mu)
        })
        .collect::<Result<Vec<f64>>>()?;

    let intervals = threshold_runs(&t_grid, &j_values, threshold);
    let mut warnings = Vec::new();
    if resolution_waived {
        warnings.push(format!(
            "eps = {eps} is below the resolution floor {}: sub-resolution diagnostic",
            mu.resolution_scale()
        ));
    }
    Ok(GapScan {
        t_grid,
        j_values,
        eps,
        mollifier,
        threshold,
        intervals,
        resolution_waived,
        label: CERTIFICATE_LABEL.to_string(),
        warnings,
    })
}

fn threshold_runs(t: &[f64], j: &[f64], threshold: f64) -> Vec<GapInterval> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for k in 0..=t.len() {
        let above = k < t.len() && j[k] >= threshold;
        match (above, start) {
            (true, None) => start = Some(k),
            (false, Some(s)) => {
                out.push(GapInterval {
                    t_lo: t[s],
                    t_hi: t[k - 1],
                    min_j: j[s..k].iter().copied().fold(f64::INFINITY, f64::min),
                });
                start = None;
            }
            _ => {}
        }
    }
    out
}

/// Relative change of `J` between two scans on one grid, over the grid
/// points strictly inside an interval of `coarse`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalStability {
    pub interval: GapInterval,
    pub interior_points: usize,
    pub max_rel_change: f64,
}

pub fn interval_stability(coarse: &GapScan, fine: &GapScan) -> Result<Vec<IntervalStability>> {
    if coarse.t_grid != fine.t_grid {
        return Err(Error::InvalidParameter("scans must share one t grid".into()));
    }
    Ok(coarse
        .intervals
        .iter()
        .map(|iv| {
            let mut interior_points = 0;
            let mut max_rel_change: f64 = 0.0;
            for (k, &t) in coarse.t_grid.iter().enumerate() {
                if t > iv.t_lo && t < iv.t_hi {
                    interior_points += 1;
                    let c = coarse.j_values[k];
                    max_rel_change = max_rel_change.max((fine.j_values[k] - c).abs() / c);
                }
            }
            IntervalStability {
                interval: *iv,
                interior_points,
                max_rel_change,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizationResult {
    /// Point index for each tree vertex; empty unless `found`.
    pub assignment: Vec<usize>,
    /// `|phi(p_a, p_b) - t|` for each tree edge `(a, b)`, in edge order.
    pub residuals: Vec<f64>,
    pub t: f64,
    pub tol: f64,
    pub found: bool,
}

/// Searches for distinct points `x^1..x^n` with `|phi(x^a, x^b) - t| <= tol`
/// on every tree edge.
pub fn realize_tree(mu: &DiscreteMeasure, phi: &PhiSpec, t: f64, tol: f64, tree: &TreeGraph) -> Result<RealizationResult> {
    phi.validate(mu.dim())?;
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::InvalidParameter(format!("tol = {tol} must be > 0")));
    }
    if !t.is_finite() {
        return Err(Error::InvalidParameter(format!("gap t = {t} must be finite")));
    }
    let m = mu.len();
    let n = tree.n();
    let adj: Vec<Vec<usize>> = (0..m)
        .into_par_iter()
        .map(|p| {
            (0..m)
                .filter(|&q| q != p && (phi.eval(mu.point(p), mu.point(q)) - t).abs() <= tol)
                .collect()
        })
        .collect();
    let mut is_adj = vec![false; m * m];
    for (p, list) in adj.iter().enumerate() {
        for &q in list {
            is_adj[p * m + q] = true;
        }
    }
    let not_found = RealizationResult {
        assignment: Vec::new(),
        residuals: Vec::new(),
        t,
        tol,
        found: false,
    };
    if n > m {
        return Ok(not_found);
    }

    let (order, parent) = tree.parents(0);
    let mut cand: Vec<Vec<bool>> = vec![vec![true; m]; n];
    // leaves up: keep points with a neighbor in every child's set
    for &v in order.iter().rev() {
        for &c in tree.neighbors(v) {
            if parent[c] != Some(v) {
                continue;
            }
            let child = cand[c].clone();
            for p in 0..m {
                if cand[v][p] && !adj[p].iter().any(|&q| child[q]) {
                    cand[v][p] = false;
                }
            }
        }
    }
    // root down: keep points with a neighbor in the parent's set
    for &v in &order {
        if let Some(par) = parent[v] {
            let up = cand[par].clone();
            for p in 0..m {
                if cand[v][p] && !adj[p].iter().any(|&q| up[q]) {
                    cand[v][p] = false;
                }
            }
        }
    }
    let cand: Vec<Vec<usize>> = cand
        .into_iter()
        .map(|row| (0..m).filter(|&p| row[p]).collect())
        .collect();
    if cand.iter().any(|c| c.is_empty()) {
        return Ok(not_found);
    }

    let mut seq: Vec<usize> = (0..n).collect();
    seq.sort_by_key(|&v| (std::cmp::Reverse(tree.degree(v)), cand[v].len(), v));
    let mut search = Search {
        tree,
        m,
        is_adj: &is_adj,
        cand: &cand,
        seq: &seq,
        assign: vec![usize::MAX; n],
        used: vec![false; m],
    };
    if !search.extend(0) {
        return Ok(not_found);
    }
    let assignment = search.assign;
    let residuals = edge_residuals(mu, phi, t, tree, &assignment);
    Ok(RealizationResult {
        assignment,
        residuals,
        t,
        tol,
        found: true,
    })
}

struct Search<'a> {
    tree: &'a TreeGraph,
    m: usize,
    is_adj: &'a [bool],
    cand: &'a [Vec<usize>],
    seq: &'a [usize],
    assign: Vec<usize>,
    used: Vec<bool>,
}

impl Search<'_> {
    fn extend(&mut self, depth: usize) -> bool {
        if depth == self.seq.len() {
            return true;
        }
        let v = self.seq[depth];
        for k in 0..self.cand[v].len() {
            let p = self.cand[v][k];
            if self.used[p] {
                continue;
            }
            let fits = self.tree.neighbors(v).iter().all(|&u| {
                let q = self.assign[u];
                q == usize::MAX || self.is_adj[p * self.m + q]
            });
            if !fits {
                continue;
            }
            self.assign[v] = p;
            self.used[p] = true;
            if self.extend(depth + 1) {
                return true;
            }
            self.used[p] = false;
            self.assign[v] = usize::MAX;
        }
        false
    }
}

fn edge_residuals(mu: &DiscreteMeasure, phi: &PhiSpec, t: f64, tree: &TreeGraph, assignment: &[usize]) -> Vec<f64> {
    tree.edges()
        .iter()
        .map(|&(a, b)| (phi.eval(mu.point(assignment[a]), mu.point(assignment[b])) - t).abs())
        .collect()
}

/// Independent replay: recomputes every edge residual and checks that the
/// assignment is injective and in range.
pub fn verify_realization(result: &RealizationResult, mu: &DiscreteMeasure, phi: &PhiSpec, tree: &TreeGraph) -> bool {
    if !result.found || result.assignment.len() != tree.n() {
        return false;
    }
    let mut seen = std::collections::HashSet::new();
    if !result.assignment.iter().all(|&p| p < mu.len() && seen.insert(p)) {
        return false;
    }
    tree.edges().iter().all(|&(a, b)| {
        let x = mu.point(result.assignment[a]);
        let y = mu.point(result.assignment[b]);
        (phi.eval(x, y) - result.t).abs() <= result.tol
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{assemble_kernel_matrix, KernelSpec};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_square() -> DiscreteMeasure {
        DiscreteMeasure::uniform(
            2,
            vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]],
        )
        .unwrap()
    }

    #[test]
    fn grid_is_inclusive_and_increasing() {
        let g = gap_grid(0.1, 1.0, 91).unwrap();
        assert_eq!(g.len(), 91);
        assert_eq!(g[0], 0.1);
        assert_eq!(g[90], 1.0);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert!(gap_grid(0.0, 1.0, 5).is_err());
        assert!(gap_grid(1.0, 0.5, 5).is_err());
        assert!(gap_grid(0.5, 1.0, 1).is_err());
    }

    #[test]
    fn unit_square_scan() {
        let mu = unit_square();
        let scan = scan_gap(&PhiSpec::Euclidean, &mu, (0.5, 1.5, 11), 0.2, 1.0, Mollifier::Box).unwrap();
        // grid 0.5, 0.6, ..., 1.5
        let one = scan.t_grid.iter().position(|&t| (t - 1.0).abs() < 1e-12).unwrap();
        assert_eq!(scan.j_values[one], 2.5);
        // direct double sum at each grid point
        for (t, j) in scan.t_grid.iter().zip(&scan.j_values) {
            let mut direct = 0.0;
            for a in 0..4 {
                for b in 0..4 {
                    if a != b {
                        direct += Mollifier::Box.shell(0.2, *t, mu.distance(a, b)) / 16.0;
                    }
                }
            }
            assert_eq!(*j, direct);
        }
        assert_eq!(scan.j_values[0], 0.0);
        assert!(scan.intervals.iter().all(|iv| iv.min_j >= 1.0));
        assert_eq!(scan.label, CERTIFICATE_LABEL);
    }

    #[test]
    fn two_points_single_interval() {
        let mu = DiscreteMeasure::uniform(1, vec![vec![0.0], vec![1.0]]).unwrap();
        let eps = 0.1;
        let scan = scan_gap(&PhiSpec::Euclidean, &mu, (0.5, 1.5, 201), eps, 1e-9, Mollifier::Box).unwrap();
        assert_eq!(scan.intervals.len(), 1);
        let iv = scan.intervals[0];
        assert!(iv.t_lo <= 1.0 && iv.t_hi >= 1.0);
        // endpoints may round out of the shell: allow two grid steps
        assert!((iv.t_hi - iv.t_lo - eps).abs() <= 0.01 + 1e-9);
        let none = scan_gap(&PhiSpec::Euclidean, &mu, (0.5, 1.5, 201), eps, 1e9, Mollifier::Box).unwrap();
        assert!(none.intervals.is_empty());
    }

    #[test]
    fn runs_are_maximal() {
        let t = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let j = [0.0, 2.0, 3.0, 0.5, 4.0, 5.0];
        let runs = threshold_runs(&t, &j, 1.0);
        assert_eq!(
            runs,
            vec![
                GapInterval { t_lo: 2.0, t_hi: 3.0, min_j: 2.0 },
                GapInterval { t_lo: 5.0, t_hi: 6.0, min_j: 4.0 }
            ]
        );
    }

    #[test]
    fn scan_enforces_floor_unless_waived() {
        let p = crate::measures::CantorParams {
            dim: 1,
            branches: 2,
            ratio: 1.0 / 3.0,
            depth: 3,
            jitter_seed: None,
        };
        let mu = crate::measures::gen_cantor_measure(&p, 1 << 10).unwrap();
        assert!(scan_gap(&PhiSpec::Euclidean, &mu, (0.1, 1.0, 5), 0.01, 0.1, Mollifier::Box).is_err());
        let s = scan_gap_with(&PhiSpec::Euclidean, &mu, (0.1, 1.0, 5), 0.01, 0.1, Mollifier::Box, ResolutionCheck::Waive)
            .unwrap();
        assert!(s.resolution_waived);
        assert_eq!(s.warnings.len(), 1);
    }

    #[test]
    fn stability_uses_interior_points() {
        let mu = DiscreteMeasure::uniform(1, vec![vec![0.0], vec![1.0], vec![2.5]]).unwrap();
        let a = scan_gap(&PhiSpec::Euclidean, &mu, (0.5, 1.5, 101), 0.4, 1e-9, Mollifier::Box).unwrap();
        let b = scan_gap(&PhiSpec::Euclidean, &mu, (0.5, 1.5, 101), 0.2, 1e-9, Mollifier::Box).unwrap();
        let st = interval_stability(&a, &b).unwrap();
        assert!(!st.is_empty());
        // box shells of width 0.2 vanish on part of the wider interval
        assert!(st.iter().any(|s| s.max_rel_change >= 1.0));
        let c = scan_gap(&PhiSpec::Euclidean, &mu, (0.5, 1.5, 11), 0.2, 1e-9, Mollifier::Box).unwrap();
        assert!(interval_stability(&a, &c).is_err());
    }

    #[test]
    fn unit_square_path_and_star() {
        let mu = unit_square();
        let path = TreeGraph::path(3).unwrap();
        let r = realize_tree(&mu, &PhiSpec::Euclidean, 1.0, 0.01, &path).unwrap();
        assert!(r.found);
        assert!(verify_realization(&r, &mu, &PhiSpec::Euclidean, &path));
        assert!(r.residuals.iter().all(|&x| x <= 0.01));

        let star = TreeGraph::star(4).unwrap();
        let r = realize_tree(&mu, &PhiSpec::Euclidean, 1.0, 0.01, &star).unwrap();
        assert!(!r.found);
        assert!(!verify_realization(&r, &mu, &PhiSpec::Euclidean, &star));
    }

    #[test]
    fn single_edge_finds_the_pair() {
        let mu = DiscreteMeasure::uniform(1, vec![vec![0.0], vec![0.3], vec![1.0]]).unwrap();
        let edge = TreeGraph::path(2).unwrap();
        let r = realize_tree(&mu, &PhiSpec::Euclidean, 0.7, 1e-9, &edge).unwrap();
        assert!(r.found);
        let mut pair = r.assignment.clone();
        pair.sort();
        assert_eq!(pair, vec![1, 2]);
    }

    #[test]
    fn tampering_is_detected() {
        let mu = unit_square();
        let path = TreeGraph::path(3).unwrap();
        let r = realize_tree(&mu, &PhiSpec::Euclidean, 1.0, 0.01, &path).unwrap();
        let mut dup = r.clone();
        dup.assignment[2] = dup.assignment[0];
        assert!(!verify_realization(&dup, &mu, &PhiSpec::Euclidean, &path));
        let mut shifted = r.clone();
        shifted.t += 10.0 * r.tol;
        assert!(!verify_realization(&shifted, &mu, &PhiSpec::Euclidean, &path));
    }

    fn brute_force_exists(mu: &DiscreteMeasure, t: f64, tol: f64, tree: &TreeGraph) -> bool {
        fn rec(mu: &DiscreteMeasure, t: f64, tol: f64, tree: &TreeGraph, assign: &mut Vec<usize>) -> bool {
            if assign.len() == tree.n() {
                return tree
                    .edges()
                    .iter()
                    .all(|&(a, b)| (mu.distance(assign[a], assign[b]) - t).abs() <= tol);
            }
            for p in 0..mu.len() {
                if assign.contains(&p) {
                    continue;
                }
                assign.push(p);
                if rec(mu, t, tol, tree, assign) {
                    return true;
                }
                assign.pop();
            }
            false
        }
        rec(mu, t, tol, tree, &mut Vec::new())
    }

    fn random_tree(n: usize, rng: &mut ChaCha8Rng) -> TreeGraph {
        TreeGraph::new(n, (1..n).map(|v| (rng.gen_range(0..v), v)).collect()).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn search_is_complete(seed in 0u64..1_000_000, m in 2usize..13, n in 2usize..6, t in 0.2f64..0.8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts = (0..m).map(|_| vec![rng.gen::<f64>(), rng.gen::<f64>()]).collect();
            let mu = DiscreteMeasure::uniform(2, pts).unwrap();
            let tree = random_tree(n, &mut rng);
            let tol = 0.15;
            let r = realize_tree(&mu, &PhiSpec::Euclidean, t, tol, &tree).unwrap();
            prop_assert_eq!(r.found, brute_force_exists(&mu, t, tol, &tree));
            if r.found {
                prop_assert!(verify_realization(&r, &mu, &PhiSpec::Euclidean, &tree));
                // a realization at tol = eps / 2 puts box-kernel mass at t
                let k = assemble_kernel_matrix(&KernelSpec::new(PhiSpec::Euclidean, t, 2.0 * tol, Mollifier::Box), &mu, 0.0).unwrap();
                prop_assert!(lower_constant(&k, &mu).unwrap() > 0.0);
            }
        }
    }
}
