//! The integral operator `U_K f(x) = sum_y K(x, y) f(y) w_y` on `L2(mu)`,
//! the two hypotheses of the tree-building argument, and the pruning step
//! that caps `U_K 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::KernelMatrix;
use crate::measures::{restrict_measure, DiscreteMeasure};

fn check_sizes(kernel: &KernelMatrix, mu: &DiscreteMeasure) -> Result<()> {
    if kernel.size() != mu.len() {
        return Err(Error::SizeMismatch {
            expected: mu.len(),
            found: kernel.size(),
        });
    }
    Ok(())
}

/// `out[i] = sum_j K[i][j] f[j] w_j`.
pub fn apply_uk(kernel: &KernelMatrix, mu: &DiscreteMeasure, f: &[f64]) -> Result<Vec<f64>> {
    check_sizes(kernel, mu)?;
    if f.len() != mu.len() {
        return Err(Error::SizeMismatch {
            expected: mu.len(),
            found: f.len(),
        });
    }
    let w = mu.weights();
    Ok((0..mu.len())
        .map(|i| {
            kernel
                .row(i)
                .iter()
                .zip(f.iter().zip(w))
                .map(|(k, (fj, wj))| k * fj * wj)
                .sum()
        })
        .collect())
}

/// `U_K 1`.
pub fn uk_one(kernel: &KernelMatrix, mu: &DiscreteMeasure) -> Result<Vec<f64>> {
    apply_uk(kernel, mu, &vec![1.0; mu.len()])
}

/// `<f, g>_{L2(mu)}`.
pub fn l2_inner(mu: &DiscreteMeasure, f: &[f64], g: &[f64]) -> f64 {
    mu.weights()
        .iter()
        .zip(f.iter().zip(g))
        .map(|(w, (a, b))| w * a * b)
        .sum()
}

/// `c_lower = sum_{i,j} w_i w_j K[i][j] = <U_K 1, 1>`.
pub fn lower_constant(kernel: &KernelMatrix, mu: &DiscreteMeasure) -> Result<f64> {
    let u = uk_one(kernel, mu)?;
    Ok(l2_inner(mu, &u, &vec![1.0; mu.len()]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub c_lower: f64,
    pub c_norm: f64,
    pub iterations: usize,
    pub norm_residual: f64,
}

impl AssumptionReport {
    pub fn lower_bound_holds(&self) -> bool {
        self.c_lower > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NormOptions {
    fn default() -> Self {
        NormOptions {
            tol: 1e-9,
            max_iter: 100_000,
        }
    }
}

/// Estimates `||U_K||_{L2(mu) -> L2(mu)}` as the top eigenvalue of
/// `S = diag(sqrt w) K diag(sqrt w)`.
///
/// The iteration starts from the constant function (`sqrt w` in these
/// coordinates) and steps `v <- (S + sigma) v` with `sigma` the current
/// Rayleigh quotient. For nonnegative `S` this keeps `v` nonnegative and
/// annihilates the `-rho` eigenvalue that makes plain power iteration
/// oscillate on bipartite kernels. Every Rayleigh quotient is a lower bound
/// on the norm; the largest one seen is reported, so `c_lower <= c_norm`.
pub fn operator_norm(
    kernel: &KernelMatrix,
    mu: &DiscreteMeasure,
    opts: NormOptions,
) -> Result<AssumptionReport> {
    check_sizes(kernel, mu)?;
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tol = {} must be > 0", opts.tol)));
    }
    let c_lower = lower_constant(kernel, mu)?;
    let n = mu.len();
    let sw: Vec<f64> = mu.weights().iter().map(|w| w.sqrt()).collect();
    let apply_s = |v: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| {
                let acc: f64 = kernel
                    .row(i)
                    .iter()
                    .zip(sw.iter().zip(v))
                    .map(|(k, (s, x))| k * s * x)
                    .sum();
                sw[i] * acc
            })
            .collect()
    };
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();

    let mut v = sw.clone();
    let n0 = norm(&v);
    v.iter_mut().for_each(|x| *x /= n0);

    let mut best = 0.0f64;
    let mut residual = f64::INFINITY;
    for it in 1..=opts.max_iter {
        let y = apply_s(&v);
        let sigma: f64 = v.iter().zip(&y).map(|(a, b)| a * b).sum();
        best = best.max(sigma);
        residual = y
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - sigma * b) * (a - sigma * b))
            .sum::<f64>()
            .sqrt();
        if residual <= opts.tol * sigma || norm(&y) == 0.0 {
            return Ok(AssumptionReport {
                c_lower,
                c_norm: best,
                iterations: it,
                norm_residual: residual,
            });
        }
        let mut z: Vec<f64> = y.iter().zip(&v).map(|(a, b)| a + sigma * b).collect();
        let nz = norm(&z);
        z.iter_mut().for_each(|x| *x /= nz);
        v = z;
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        residual,
        last_iterate: v,
    })
}

/// `mu{ i : U_K 1(p_i) > lambda }`.
pub fn exceedance_mass(u_k1: &[f64], mu: &DiscreteMeasure, lambda: f64) -> f64 {
    u_k1.iter()
        .zip(mu.weights())
        .filter(|(u, _)| **u > lambda)
        .map(|(_, w)| w)
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementReport {
    pub n_param: f64,
    pub lambda: f64,
    pub removed_mass: f64,
    /// `sum_{i,j kept} w_i w_j K[i][j]` on the original weights.
    pub c_lower_after: f64,
    pub kept_indices: Vec<usize>,
    pub c_lower: f64,
    pub c_norm: f64,
    pub max_kept_uk1: f64,
    /// Whether `c_lower_after >= c_lower / 2`. Not guaranteed: removing a
    /// heavy hub can take most of the pair mass with it.
    pub retains_half_lower: bool,
}

/// Drops the points where `U_K 1 > N * c_norm` and renormalizes.
///
/// `N` defaults to `max(2, sqrt(2 c_norm / c_lower))`. By Chebyshev the
/// removed mass is at most `1 / N^2`.
pub fn refine_measure(
    kernel: &KernelMatrix,
    mu: &DiscreteMeasure,
    n_param: Option<f64>,
    opts: NormOptions,
) -> Result<(DiscreteMeasure, RefinementReport)> {
    let norm = operator_norm(kernel, mu, opts)?;
    refine_with_norm(kernel, mu, n_param, &norm)
}

/// [`refine_measure`] with an already computed norm estimate.
pub fn refine_with_norm(
    kernel: &KernelMatrix,
    mu: &DiscreteMeasure,
    n_param: Option<f64>,
    norm: &AssumptionReport,
) -> Result<(DiscreteMeasure, RefinementReport)> {
    let c_lower = norm.c_lower;
    let c_norm = norm.c_norm;
    if !(c_lower > 0.0) {
        return Err(Error::AssumptionFailed(format!(
            "double integral of K is {c_lower}, refinement needs it positive"
        )));
    }
    let n = match n_param {
        Some(n) if n > 0.0 && n.is_finite() => n,
        Some(n) => {
            return Err(Error::InvalidParameter(format!("N = {n} must be positive")));
        }
        None => (2.0 * c_norm / c_lower).sqrt().max(2.0),
    };
    let lambda = n * c_norm;
    let u = uk_one(kernel, mu)?;
    let kept: Vec<usize> = (0..mu.len()).filter(|&i| u[i] <= lambda).collect();
    if kept.is_empty() {
        return Err(Error::AssumptionFailed(format!(
            "every point has U_K 1 > lambda = {lambda}"
        )));
    }
    let w = mu.weights();
    let removed_mass = exceedance_mass(&u, mu, lambda);
    let mut c_lower_after = 0.0;
    for &i in &kept {
        let mut row = 0.0;
        for &j in &kept {
            row += kernel.get(i, j) * w[j];
        }
        c_lower_after += w[i] * row;
    }
    let max_kept_uk1 = kept.iter().map(|&i| u[i]).fold(0.0, f64::max);
    let refined = restrict_measure(mu, &kept, true)?;
    let report = RefinementReport {
        n_param: n,
        lambda,
        removed_mass,
        c_lower_after,
        kept_indices: kept,
        c_lower,
        c_norm,
        max_kept_uk1,
        retains_half_lower: c_lower_after >= c_lower / 2.0 - 1e-12,
    };
    Ok((refined, report))
}

/// Restricts a kernel to the given indices (same order).
pub fn restrict_kernel(kernel: &KernelMatrix, keep: &[usize]) -> KernelMatrix {
    let m = keep.len();
    let mut values = Vec::with_capacity(m * m);
    for &i in keep {
        for &j in keep {
            values.push(kernel.get(i, j));
        }
    }
    KernelMatrix::from_dense(m, values, format!("{} (restricted)", kernel.provenance()))
        .expect("restriction of a valid kernel is valid")
}
