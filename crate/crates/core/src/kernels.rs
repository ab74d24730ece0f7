//! Configuration functions `phi`, mollified level-set kernels and the
//! triangle hyperedge kernel.
//!
//! A kernel here is `sigma_t^eps(x, y) = eps^-1 beta((phi(x, y) - t) / eps)`
//! with `beta` a unit-mass profile. It approximates `delta(phi(x, y) - t)`,
//! which is the surface measure on `{phi(x, .) = t}` weighted by
//! `1 / |grad_y phi|`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{euclidean_distance, DiscreteMeasure};

/// Symmetric configuration function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case")]
pub enum PhiSpec {
    /// `|x - y|`
    Euclidean,
    /// `sqrt((x - y)^T Q (x - y))` for symmetric positive-definite `Q`,
    /// given as matrix rows.
    QuadraticForm(Vec<Vec<f64>>),
    /// `|x - y| (1 + eta cos(kappa . (x + y)))` with `|eta| < 1/2`.
    PerturbedEuclidean { eta: f64, kappa: Vec<f64> },
}

impl PhiSpec {
    pub fn family(&self) -> &'static str {
        match self {
            PhiSpec::Euclidean => "euclidean",
            PhiSpec::QuadraticForm(_) => "quadratic_form",
            PhiSpec::PerturbedEuclidean { .. } => "perturbed_euclidean",
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            PhiSpec::Euclidean => Ok(()),
            PhiSpec::QuadraticForm(q) => {
                if q.len() != dim || q.iter().any(|row| row.len() != dim) {
                    return Err(Error::InvalidParameter(format!(
                        "quadratic form must be {dim}x{dim}"
                    )));
                }
                for i in 0..dim {
                    for j in 0..i {
                        if q[i][j] != q[j][i] {
                            return Err(Error::InvalidParameter(
                                "quadratic form is not symmetric".into(),
                            ));
                        }
                    }
                }
                let m = DMatrix::from_fn(dim, dim, |i, j| q[i][j]);
                if m.iter().any(|v| !v.is_finite()) || m.cholesky().is_none() {
                    return Err(Error::InvalidParameter(
                        "quadratic form is not positive definite".into(),
                    ));
                }
                Ok(())
            }
            PhiSpec::PerturbedEuclidean { eta, kappa } => {
                if !(eta.abs() < 0.5) {
                    return Err(Error::InvalidParameter(format!(
                        "perturbation amplitude |eta| = {} must be < 1/2",
                        eta.abs()
                    )));
                }
                if kappa.len() != dim || kappa.iter().any(|k| !k.is_finite()) {
                    return Err(Error::InvalidParameter(format!(
                        "frequency vector must have {dim} finite entries"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Evaluates `phi(x, y)`. Bitwise symmetric in its arguments.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            PhiSpec::Euclidean => euclidean_distance(x, y),
            PhiSpec::QuadraticForm(q) => {
                let d = x.len();
                let mut acc = 0.0;
                for i in 0..d {
                    let di = x[i] - y[i];
                    for j in 0..d {
                        acc += di * q[i][j] * (x[j] - y[j]);
                    }
                }
                acc.max(0.0).sqrt()
            }
            PhiSpec::PerturbedEuclidean { eta, kappa } => {
                let phase: f64 = kappa.iter().zip(x.iter().zip(y)).map(|(k, (a, b))| k * (a + b)).sum();
                euclidean_distance(x, y) * (1.0 + eta * phase.cos())
            }
        }
    }
}

/// `int_{-1}^{1} exp(-1 / (1 - u^2)) du`.
pub const SMOOTH_BUMP_MASS: f64 = 0.443_993_816_168_079_4;

/// Unit-mass one-dimensional profile `beta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mollifier {
    /// Indicator of `[-1/2, 1/2]`.
    #[default]
    Box,
    /// Hat function on `[-1, 1]`.
    Triangle,
    /// `exp(-1 / (1 - u^2))` on `(-1, 1)`, normalized.
    SmoothBump,
}

impl Mollifier {
    pub fn profile(self, u: f64) -> f64 {
        match self {
            Mollifier::Box => {
                if u.abs() <= 0.5 {
                    1.0
                } else {
                    0.0
                }
            }
            Mollifier::Triangle => (1.0 - u.abs()).max(0.0),
            Mollifier::SmoothBump => {
                if u.abs() < 1.0 {
                    (-1.0 / (1.0 - u * u)).exp() / SMOOTH_BUMP_MASS
                } else {
                    0.0
                }
            }
        }
    }

    /// `sigma_r^eps(u) = eps^-1 beta((u - r) / eps)`.
    pub fn shell(self, eps: f64, r: f64, u: f64) -> f64 {
        self.profile((u - r) / eps) / eps
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub phi: PhiSpec,
    pub t: f64,
    pub eps: f64,
    #[serde(default)]
    pub mollifier: Mollifier,
}

impl KernelSpec {
    pub fn new(phi: PhiSpec, t: f64, eps: f64, mollifier: Mollifier) -> Self {
        KernelSpec {
            phi,
            t,
            eps,
            mollifier,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.t > 0.0 && self.t.is_finite()) {
            return Err(Error::InvalidParameter(format!("gap t = {} must be > 0", self.t)));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "mollification width eps = {} must be > 0",
                self.eps
            )));
        }
        self.phi.validate(dim)
    }

    fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        self.mollifier.shell(self.eps, self.t, self.phi.eval(x, y))
    }
}

/// `K_{t,eps}(x, y)` for distinct points.
pub fn eval_kernel(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::SizeMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    spec.validate(x.len())?;
    if x == y {
        return Err(Error::CoincidentPoints);
    }
    Ok(spec.value(x, y))
}

/// Dense symmetric nonnegative kernel on the support of a measure, with zero
/// diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    size: usize,
    values: Vec<f64>,
    drop_below: f64,
    dropped_mass_bound: f64,
    provenance: String,
    warnings: Vec<String>,
}

/// Serializable digest of a kernel matrix; matrices themselves are never
/// written out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSummary {
    pub size: usize,
    pub max_entry: f64,
    pub nonzero_count: usize,
    pub drop_below: f64,
    pub dropped_mass_bound: f64,
    pub provenance: String,
    pub warnings: Vec<String>,
}

impl KernelMatrix {
    /// Checks symmetry, sign and zero diagonal on a row-major matrix.
    pub fn from_dense(size: usize, values: Vec<f64>, provenance: impl Into<String>) -> Result<Self> {
        if values.len() != size * size {
            return Err(Error::SizeMismatch {
                expected: size * size,
                found: values.len(),
            });
        }
        for i in 0..size {
            if values[i * size + i] != 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "kernel diagonal entry ({i}, {i}) must be zero"
                )));
            }
            for j in 0..size {
                let v = values[i * size + j];
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(Error::InvalidParameter(format!(
                        "kernel entry ({i}, {j}) = {v} must be finite and nonnegative"
                    )));
                }
                if v != values[j * size + i] {
                    return Err(Error::InvalidParameter(format!(
                        "kernel is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(KernelMatrix {
            size,
            values,
            drop_below: 0.0,
            dropped_mass_bound: 0.0,
            provenance: provenance.into(),
            warnings: Vec::new(),
        })
    }

    /// Builds a matrix from the strict upper triangle, mirrored.
    pub(crate) fn from_upper(
        size: usize,
        upper: impl Fn(usize, usize) -> f64 + Sync,
        provenance: String,
    ) -> Self {
        let rows: Vec<Vec<f64>> = (0..size)
            .into_par_iter()
            .map(|i| ((i + 1)..size).map(|j| upper(i, j)).collect())
            .collect();
        let mut values = vec![0.0; size * size];
        for (i, row) in rows.into_iter().enumerate() {
            for (off, v) in row.into_iter().enumerate() {
                let j = i + 1 + off;
                values[i * size + j] = v;
                values[j * size + i] = v;
            }
        }
        KernelMatrix {
            size,
            values,
            drop_below: 0.0,
            dropped_mass_bound: 0.0,
            provenance,
            warnings: Vec::new(),
        }
    }

    pub fn zeros(size: usize) -> Self {
        KernelMatrix {
            size,
            values: vec![0.0; size * size],
            drop_below: 0.0,
            dropped_mass_bound: 0.0,
            provenance: "zero".into(),
            warnings: Vec::new(),
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.size..(i + 1) * self.size]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max_entry(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn nonzero_count(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0.0).count()
    }

    pub fn dropped_mass_bound(&self) -> f64 {
        self.dropped_mass_bound
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub(crate) fn warn(&mut self, msg: String) {
        self.warnings.push(msg);
    }

    /// Zeroes entries below `threshold` and records
    /// `sum_{dropped (i, j)} w_i w_j * threshold`.
    pub fn drop_small(&mut self, threshold: f64, weights: &[f64]) {
        let n = self.size;
        let mut bound = 0.0;
        for i in 0..n {
            for j in 0..n {
                let v = &mut self.values[i * n + j];
                if *v > 0.0 && *v < threshold {
                    *v = 0.0;
                    bound += weights[i] * weights[j] * threshold;
                }
            }
        }
        self.drop_below = threshold;
        self.dropped_mass_bound += bound;
    }

    pub fn summary(&self) -> KernelSummary {
        KernelSummary {
            size: self.size,
            max_entry: self.max_entry(),
            nonzero_count: self.nonzero_count(),
            drop_below: self.drop_below,
            dropped_mass_bound: self.dropped_mass_bound,
            provenance: self.provenance.clone(),
            warnings: self.warnings.clone(),
        }
    }
}

/// Whether kernel assembly insists on `eps >= resolution scale`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResolutionCheck {
    Enforce,
    /// Sub-resolution widths are allowed; the matrix carries a warning.
    /// Only meant for convergence diagnostics.
    Waive,
}

/// `values[i][j] = K_{t,eps}(p_i, p_j)` for `i != j`.
pub fn assemble_kernel_matrix(
    spec: &KernelSpec,
    mu: &DiscreteMeasure,
    drop_below: f64,
) -> Result<KernelMatrix> {
    assemble_kernel_matrix_with(spec, mu, drop_below, ResolutionCheck::Enforce)
}

pub fn assemble_kernel_matrix_with(
    spec: &KernelSpec,
    mu: &DiscreteMeasure,
    drop_below: f64,
    check: ResolutionCheck,
) -> Result<KernelMatrix> {
    spec.validate(mu.dim())?;
    let floor = mu.width_floor().unwrap_or(0.0);
    let below = spec.eps < floor;
    if below && check == ResolutionCheck::Enforce {
        mu.require_width("eps", spec.eps)?;
    }
    let provenance = format!(
        "{} t={} eps={} mollifier={:?}",
        spec.phi.family(),
        spec.t,
        spec.eps,
        spec.mollifier
    );
    let mut k = KernelMatrix::from_upper(mu.len(), |i, j| spec.value(mu.point(i), mu.point(j)), provenance);
    if below {
        k.warn(format!(
            "eps = {} is below the resolution floor {floor}: sub-resolution diagnostic",
            spec.eps
        ));
    }
    if drop_below > 0.0 {
        k.drop_small(drop_below, mu.weights());
    }
    Ok(k)
}

/// Finite-difference step relative to the gap.
pub const MONGE_AMPERE_STEP: f64 = 1e-5;

/// `|det|` of the bordered matrix
///
/// ```text
/// [ 0            grad_x phi          ]
/// [ -grad_y phi  d^2 phi / dx_i dy_j ]
/// ```
///
/// at `(x, y)`, all derivatives by central differences with step `h`.
pub fn monge_ampere_det_at(phi: &PhiSpec, x: &[f64], y: &[f64], h: f64) -> f64 {
    let d = x.len();
    let mut m = DMatrix::<f64>::zeros(d + 1, d + 1);
    let mut xp = x.to_vec();
    let mut yp = y.to_vec();
    for i in 0..d {
        xp[i] = x[i] + h;
        let fp = phi.eval(&xp, y);
        xp[i] = x[i] - h;
        let fm = phi.eval(&xp, y);
        xp[i] = x[i];
        m[(0, i + 1)] = (fp - fm) / (2.0 * h);

        yp[i] = y[i] + h;
        let gp = phi.eval(x, &yp);
        yp[i] = y[i] - h;
        let gm = phi.eval(x, &yp);
        yp[i] = y[i];
        m[(i + 1, 0)] = -(gp - gm) / (2.0 * h);
    }
    for i in 0..d {
        for j in 0..d {
            let mut mixed = 0.0;
            for (sx, sy, sign) in [(1.0, 1.0, 1.0), (1.0, -1.0, -1.0), (-1.0, 1.0, -1.0), (-1.0, -1.0, 1.0)] {
                xp[i] = x[i] + sx * h;
                yp[j] = y[j] + sy * h;
                mixed += sign * phi.eval(&xp, &yp);
            }
            xp[i] = x[i];
            yp[j] = y[j];
            m[(i + 1, j + 1)] = mixed / (4.0 * h * h);
        }
    }
    m.determinant().abs()
}

/// Solves `phi(x, x + rho u) = t` for `rho > 0` by bracketing and bisection.
fn project_to_level_set(phi: &PhiSpec, x: &[f64], u: &[f64], t: f64) -> Option<Vec<f64>> {
    let along = |rho: f64| -> Vec<f64> { x.iter().zip(u).map(|(a, b)| a + rho * b).collect() };
    let g = |rho: f64| phi.eval(x, &along(rho)) - t;
    let mut lo = 0.0;
    let mut hi = t;
    let mut expansions = 0;
    while g(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
        expansions += 1;
        if expansions > 60 {
            return None;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let y = along(hi);
    if (phi.eval(x, &y) - t).abs() <= 1e-12 * t.max(1.0) {
        Some(y)
    } else {
        None
    }
}

/// Minimum over random level-set samples of the bordered Monge-Ampere
/// determinant.
pub fn monge_ampere_min_det(
    phi: &PhiSpec,
    dim: usize,
    t: f64,
    sample_count: usize,
    seed: u64,
) -> Result<f64> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidParameter(format!("gap t = {t} must be > 0")));
    }
    if sample_count == 0 {
        return Err(Error::InvalidParameter("sample_count must be >= 1".into()));
    }
    phi.validate(dim)?;
    let h = MONGE_AMPERE_STEP * t;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = f64::INFINITY;
    for _ in 0..sample_count {
        let x: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>()).collect();
        let u = loop {
            let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let n = v.iter().map(|c| c * c).sum::<f64>().sqrt();
            if n > 1e-3 && n <= 1.0 {
                break v.into_iter().map(|c| c / n).collect::<Vec<_>>();
            }
        };
        if let Some(y) = project_to_level_set(phi, &x, &u, t) {
            best = best.min(monge_ampere_det_at(phi, &x, &y, h));
        }
    }
    if best.is_finite() {
        Ok(best)
    } else {
        Err(Error::InvalidParameter(format!(
            "no sample reached the level set phi = {t}"
        )))
    }
}

/// Side lengths of a triangle hyperedge: `a` joins the two joint vertices,
/// `b` and `c` join them to the interior vertex.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriangleSides {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

/// `K(x, y) = sigma_a(|x - y|) * 1/2 [ sum_z w_z sigma_b(|x - z|) sigma_c(|y - z|)
///                                  + sum_z w_z sigma_c(|x - z|) sigma_b(|y - z|) ]`
pub fn triangle_kernel_matrix(
    sides: TriangleSides,
    eps: f64,
    mu: &DiscreteMeasure,
    mollifier: Mollifier,
) -> Result<KernelMatrix> {
    let TriangleSides { a, b, c } = sides;
    if !(a > 0.0 && b > 0.0 && c > 0.0) || ![a, b, c].iter().all(|s| s.is_finite()) {
        return Err(Error::InvalidParameter("triangle sides must be positive".into()));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidParameter(format!("eps = {eps} must be > 0")));
    }
    let margin = (b + c - a).min(a + c - b).min(a + b - c);
    if margin <= -2.0 * eps {
        return Err(Error::InvalidParameter(format!(
            "sides ({a}, {b}, {c}) violate the triangle inequality by more than 2 eps"
        )));
    }
    mu.require_width("eps", eps)?;

    let m = mu.len();
    let shells = |r: f64| -> Vec<f64> {
        let mut s = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    s[i * m + j] = mollifier.shell(eps, r, mu.distance(i, j));
                }
            }
        }
        s
    };
    let sa = shells(a);
    let sb = shells(b);
    let sc = shells(c);
    let w = mu.weights();

    let mut k = KernelMatrix::from_upper(
        m,
        |i, j| {
            let outer = sa[i * m + j];
            if outer == 0.0 {
                return 0.0;
            }
            let mut fwd = 0.0;
            let mut rev = 0.0;
            for z in 0..m {
                fwd += w[z] * sb[i * m + z] * sc[j * m + z];
                rev += w[z] * sc[i * m + z] * sb[j * m + z];
            }
            outer * 0.5 * (fwd + rev)
        },
        format!("triangle a={a} b={b} c={c} eps={eps} mollifier={mollifier:?}"),
    );
    if margin < 2.0 * eps {
        k.warn(format!(
            "sides ({a}, {b}, {c}) are degenerate within the 2 eps slack"
        ));
    }
    Ok(k)
}
