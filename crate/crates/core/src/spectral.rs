//! Scale-by-scale diagnostics: dyadic annulus energies of the Fourier
//! transform of a binned measure, and norms of the localized operators
//!
//! ```text
//! U_j f(x) = sum_y 2^(dj) rho(2^j (x - y)) f(y) w_y
//! ```
//!
//! with their Schur row-sum bounds.

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{KernelMatrix, Mollifier};
use crate::measures::{euclidean_distance, least_squares_slope, DiscreteMeasure};
use crate::operators::{operator_norm, uk_one, NormOptions};

/// Default cap on the number of grid cells `2^(L d)`.
pub const DEFAULT_GRID_BUDGET: usize = 1 << 24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub kind: String,
    pub scales: Vec<i32>,
    pub quantities: Vec<f64>,
    /// `max_i sum_i' w_i' K_j[i][i']` per scale, for operator norms.
    pub schur_bounds: Option<Vec<f64>>,
    pub fit_slope: Option<f64>,
    pub target_slope: Option<f64>,
    pub s_declared: Option<f64>,
    pub warnings: Vec<String>,
}

impl SpectralReport {
    fn finish(mut self, mu: &DiscreteMeasure) -> Self {
        self.fit_slope = decay_slope(&self).ok();
        self.s_declared = mu.declared_dimension();
        self.target_slope = self.s_declared.map(|s| mu.dim() as f64 - s);
        self
    }

    /// `j,quantity` rows followed by a `fit_slope,target_slope,s_declared`
    /// summary; missing values are written as `nan`.
    pub fn to_csv(&self, header: &[String]) -> String {
        let opt = |x: Option<f64>| x.map_or("nan".to_string(), |v| v.to_string());
        let mut out = String::new();
        for line in header {
            out.push_str(&format!("# {line}\n"));
        }
        out.push_str(&format!("# {}\n", self.kind));
        for w in &self.warnings {
            out.push_str(&format!("# warning: {w}\n"));
        }
        out.push_str("j,quantity\n");
        for (j, q) in self.scales.iter().zip(&self.quantities) {
            out.push_str(&format!("{j},{q}\n"));
        }
        out.push_str("fit_slope,target_slope,s_declared\n");
        out.push_str(&format!(
            "{},{},{}\n",
            opt(self.fit_slope),
            opt(self.target_slope),
            opt(self.s_declared)
        ));
        out
    }
}

/// Least-squares slope of `log2(quantity)` against `j` over nonzero entries.
pub fn decay_slope(report: &SpectralReport) -> Result<f64> {
    let pts: Vec<(f64, f64)> = report
        .scales
        .iter()
        .zip(&report.quantities)
        .filter(|(_, &q)| q > 0.0)
        .map(|(&j, &q)| (j as f64, q.log2()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "{} usable scales; a slope needs at least 2",
            pts.len()
        )));
    }
    least_squares_slope(&pts).ok_or_else(|| Error::InvalidParameter("degenerate scale set".into()))
}

/// Mass of `mu` moved to the cell of `[0, 1]^d` containing each point
/// (`floor(x N)`, with `x = 1` sent to the last cell). Row-major, axis 0
/// slowest.
pub fn bin_measure(mu: &DiscreteMeasure, log2_n: u32, budget: usize) -> Result<Vec<f64>> {
    let d = mu.dim();
    let n = 1usize << log2_n;
    let cells = (n as f64).powi(d as i32);
    if cells > budget as f64 {
        return Err(Error::BudgetExceeded {
            what: "frequency grid cells",
            required: cells,
            budget: budget as f64,
        });
    }
    let mut grid = vec![0.0; cells as usize];
    for (p, &w) in mu.points().zip(mu.weights()) {
        let mut idx = 0;
        for &x in p {
            if !(0.0..=1.0).contains(&x) {
                return Err(Error::InvalidParameter(format!(
                    "coordinate {x} lies outside the unit cube"
                )));
            }
            idx = idx * n + ((x * n as f64).floor() as usize).min(n - 1);
        }
        grid[idx] += w;
    }
    Ok(grid)
}

/// `|hat mu(xi)|^2` on the full `N^d` frequency grid.
pub fn power_spectrum(grid: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut data: Vec<Complex64> = grid.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    let fft = FftPlanner::new().plan_fft_forward(n);
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    for axis in 0..d {
        let stride = n.pow((d - 1 - axis) as u32);
        let block = stride * n;
        for start in (0..data.len()).step_by(block) {
            for off in 0..stride {
                for k in 0..n {
                    line[k] = data[start + off + k * stride];
                }
                fft.process(&mut line);
                for k in 0..n {
                    data[start + off + k * stride] = line[k];
                }
            }
        }
    }
    data.iter().map(|z| z.norm_sqr()).collect()
}

/// `|xi|` in grid units for every cell, with signed frequencies in
/// `(-N/2, N/2]`.
fn frequency_radii(n: usize, d: usize) -> Vec<f64> {
    let total = n.pow(d as u32);
    (0..total)
        .map(|mut idx| {
            let mut r2 = 0.0;
            for _ in 0..d {
                let k = idx % n;
                idx /= n;
                let f = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
                r2 += f * f;
            }
            r2.sqrt()
        })
        .collect()
}

/// Zero-frequency energy and energies of the disjoint shells
/// `2^j <= |xi| < 2^(j+1)`, `j = 0, 1, ...`, covering every frequency.
pub fn shell_partition(power: &[f64], n: usize, d: usize) -> (f64, Vec<f64>) {
    let radii = frequency_radii(n, d);
    let mut zero = 0.0;
    let mut shells: Vec<f64> = Vec::new();
    for (&r, &e) in radii.iter().zip(power) {
        if r == 0.0 {
            zero += e;
            continue;
        }
        let j = r.log2().floor() as usize;
        if shells.len() <= j {
            shells.resize(j + 1, 0.0);
        }
        shells[j] += e;
    }
    (zero, shells)
}

/// Largest `j` with `2^(j+1) <= min(N / 2, 1 / resolution)`.
fn max_annulus_scale(mu: &DiscreteMeasure, n: usize) -> i32 {
    let mut cap = (n / 2) as f64;
    let res = mu.resolution_scale();
    if res > 0.0 {
        cap = cap.min(1.0 / res);
    }
    cap.log2().floor() as i32 - 1
}

/// Energies `sum |hat mu(xi)|^2` over `2^(j-1) <= |xi| < 2^(j+1)`. Without an
/// explicit range, `j` runs from 1 while the annulus stays within both the
/// grid Nyquist radius and the inverse resolution scale.
pub fn annulus_energies(
    mu: &DiscreteMeasure,
    log2_n: u32,
    j_range: Option<(i32, i32)>,
    budget: usize,
) -> Result<SpectralReport> {
    let d = mu.dim();
    let n = 1usize << log2_n;
    let (lo, hi) = j_range.unwrap_or((1, max_annulus_scale(mu, n)));
    if lo < 0 || hi < lo {
        return Err(Error::InvalidParameter(format!("scale range [{lo}, {hi}] is empty")));
    }
    if 2f64.powi(hi + 1) > (n / 2) as f64 {
        return Err(Error::InvalidParameter(format!(
            "scale {hi} reaches past the Nyquist radius {} of a 2^{log2_n} grid",
            n / 2
        )));
    }
    let grid = bin_measure(mu, log2_n, budget)?;
    let power = power_spectrum(&grid, n, d);
    let radii = frequency_radii(n, d);
    let scales: Vec<i32> = (lo..=hi).collect();
    let quantities = scales
        .iter()
        .map(|&j| {
            let (a, b) = (2f64.powi(j - 1), 2f64.powi(j + 1));
            radii
                .iter()
                .zip(&power)
                .filter(|(&r, _)| r >= a && r < b)
                .map(|(_, &e)| e)
                .sum()
        })
        .collect();
    Ok(SpectralReport {
        kind: "annulus_energy".into(),
        scales,
        quantities,
        schur_bounds: None,
        fit_slope: None,
        target_slope: None,
        s_declared: None,
        warnings: Vec::new(),
    }
    .finish(mu))
}

/// Radial bump `rho(x) = g(|x| / radius) / Z` built from a mollifier
/// profile, with `g(r) = beta(r h)` for the profile's half-width `h`, so `g`
/// is supported in `[0, 1]`. `Z` makes `rho` unit-mass at `radius = 1`;
/// other radii keep the height and widen the support.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialBump {
    pub profile: Mollifier,
    pub radius: f64,
}

impl RadialBump {
    pub fn new(profile: Mollifier) -> Self {
        RadialBump { profile, radius: 1.0 }
    }

    fn half_width(&self) -> f64 {
        match self.profile {
            Mollifier::Box => 0.5,
            Mollifier::Triangle | Mollifier::SmoothBump => 1.0,
        }
    }

    fn shape(&self, r: f64) -> f64 {
        if r > 1.0 {
            return 0.0;
        }
        self.profile.profile(r * self.half_width())
    }

    /// `Z = |S^(d-1)| int_0^1 g(r) r^(d-1) dr`.
    pub fn normalization(&self, d: usize) -> f64 {
        let steps = 20_000;
        let h = 1.0 / steps as f64;
        let f = |r: f64| self.shape(r) * r.powi(d as i32 - 1);
        // composite Simpson on [0, 1]
        let mut acc = f(0.0) + f(1.0 - 1e-15);
        for k in 1..steps {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * f(k as f64 * h);
        }
        sphere_area(d) * acc * h / 3.0
    }

    pub fn eval(&self, r: f64, z: f64) -> f64 {
        self.shape(r / self.radius) / z
    }
}

/// Surface area of the unit sphere in `R^d`, `2 pi^(d/2) / Gamma(d/2)`.
pub fn sphere_area(d: usize) -> f64 {
    // Gamma at half-integers by recursion from Gamma(1) = 1, Gamma(1/2) = sqrt(pi)
    let mut g = if d.is_multiple_of(2) { 1.0 } else { std::f64::consts::PI.sqrt() };
    let mut x = if d.is_multiple_of(2) { 1.0 } else { 0.5 };
    while x < d as f64 / 2.0 {
        g *= x;
        x += 1.0;
    }
    2.0 * std::f64::consts::PI.powf(d as f64 / 2.0) / g
}

/// Kernel `2^(dj) rho(2^j (p_i - p_i'))` off the diagonal.
pub fn scale_kernel(mu: &DiscreteMeasure, j: i32, bump: RadialBump) -> KernelMatrix {
    let d = mu.dim();
    let z = bump.normalization(d);
    let scale = 2f64.powi(j);
    let height = scale.powi(d as i32);
    KernelMatrix::from_upper(
        mu.len(),
        |a, b| height * bump.eval(scale * euclidean_distance(mu.point(a), mu.point(b)), z),
        format!("scale j={j} bump={:?} radius={}", bump.profile, bump.radius),
    )
}

/// Operator norms of `U_j` on `L^2(mu)`. Without an explicit range, `j`
/// runs from 1 while `2^-j` stays above the width floor. Scales below the
/// floor are skipped with a warning.
pub fn scale_operator_norms(
    mu: &DiscreteMeasure,
    j_range: Option<(i32, i32)>,
    bump: RadialBump,
    opts: NormOptions,
) -> Result<SpectralReport> {
    let floor = mu.width_floor();
    let (lo, hi) = match (j_range, floor) {
        (Some(r), _) => r,
        (None, Some(f)) if f > 0.0 => (1, (1.0 / f).log2().floor() as i32),
        (None, _) => {
            return Err(Error::InvalidParameter(
                "a scale range is required for measures without a declared dimension".into(),
            ))
        }
    };
    if hi < lo {
        return Err(Error::InvalidParameter(format!("scale range [{lo}, {hi}] is empty")));
    }
    let mut warnings = Vec::new();
    let mut scales = Vec::new();
    for j in lo..=hi {
        match floor {
            Some(f) if 2f64.powi(-j) < f => {
                warnings.push(format!("scale j={j} skipped: 2^-j is below the resolution floor {f}"))
            }
            _ => scales.push(j),
        }
    }
    if scales.is_empty() {
        return Err(Error::BelowResolution {
            what: "every scale 2^-j",
            value: 2f64.powi(-lo),
            floor: floor.unwrap_or(0.0),
        });
    }
    let per_scale = scales
        .par_iter()
        .map(|&j| {
            let k = scale_kernel(mu, j, bump);
            let schur = uk_one(&k, mu)?.into_iter().fold(0.0, f64::max);
            let norm = operator_norm(&k, mu, opts)?.c_norm;
            Ok((norm, schur))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    Ok(SpectralReport {
        kind: "scale_operator_norm".into(),
        scales,
        quantities: per_scale.iter().map(|p| p.0).collect(),
        schur_bounds: Some(per_scale.iter().map(|p| p.1).collect()),
        fit_slope: None,
        target_slope: None,
        s_declared: None,
        warnings,
    }
    .finish(mu))
}
