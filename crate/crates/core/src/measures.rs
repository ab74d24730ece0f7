//! Weighted point clouds approximating compactly supported probability
//! measures, plus the product-Cantor family used as test sets of prescribed
//! dimension.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `sum(weights) == 1`.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Default cap on the number of generated points.
pub const DEFAULT_POINT_BUDGET: usize = 1 << 20;

/// A probability (or, after restriction, sub-probability) measure given by
/// finitely many distinct weighted points in `R^d`.
#[derive(Debug, Clone)]
pub struct DiscreteMeasure {
    dim: usize,
    coords: Vec<f64>,
    weights: Vec<f64>,
    meta: BTreeMap<String, String>,
    resolution: OnceLock<f64>,
}

impl DiscreteMeasure {
    /// Builds a probability measure. Duplicate points are merged by summing
    /// their weights; the weights must sum to one.
    pub fn new(dim: usize, points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::InvalidMeasure(format!(
                "every point must have {dim} coordinates"
            )));
        }
        let coords = points.into_iter().flatten().collect();
        Self::from_flat(dim, coords, weights)
    }

    /// Same as [`DiscreteMeasure::new`] with row-major coordinates.
    pub fn from_flat(dim: usize, coords: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let measure = Self::build(dim, coords, weights)?;
        measure.check_mass(1.0)?;
        Ok(measure)
    }

    /// Uniform probability measure on the given points.
    pub fn uniform(dim: usize, points: Vec<Vec<f64>>) -> Result<Self> {
        let m = points.len().max(1) as f64;
        let weights = vec![1.0 / m; points.len()];
        Self::new(dim, points, weights)
    }

    fn build(dim: usize, coords: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidMeasure("ambient dimension must be >= 1".into()));
        }
        if !coords.len().is_multiple_of(dim) || coords.len() / dim != weights.len() {
            return Err(Error::InvalidMeasure(format!(
                "{} coordinates do not describe {} points in dimension {dim}",
                coords.len(),
                weights.len()
            )));
        }
        if weights.is_empty() {
            return Err(Error::InvalidMeasure("a measure needs at least one point".into()));
        }
        if let Some(c) = coords.iter().find(|c| !c.is_finite()) {
            return Err(Error::InvalidMeasure(format!("non-finite coordinate {c}")));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::InvalidMeasure(format!(
                "weights must be finite and nonnegative, found {w}"
            )));
        }

        // merge duplicates, keeping the first occurrence's position
        let mut seen: HashMap<Vec<u64>, usize> = HashMap::with_capacity(weights.len());
        let mut merged_coords = Vec::with_capacity(coords.len());
        let mut merged_weights: Vec<f64> = Vec::with_capacity(weights.len());
        for (p, &w) in coords.chunks_exact(dim).zip(&weights) {
            // +0.0 and -0.0 are the same point
            let key: Vec<u64> = p.iter().map(|c| (c + 0.0).to_bits()).collect();
            match seen.get(&key) {
                Some(&idx) => merged_weights[idx] += w,
                None => {
                    seen.insert(key, merged_weights.len());
                    merged_coords.extend(p.iter().map(|c| c + 0.0));
                    merged_weights.push(w);
                }
            }
        }

        Ok(DiscreteMeasure {
            dim,
            coords: merged_coords,
            weights: merged_weights,
            meta: BTreeMap::new(),
            resolution: OnceLock::new(),
        })
    }

    fn check_mass(&self, expected: f64) -> Result<()> {
        let mass = self.mass();
        if (mass - expected).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidMeasure(format!(
                "weights sum to {mass}, expected {expected} within {WEIGHT_SUM_TOL:e}"
            )));
        }
        Ok(())
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.meta.insert(key.into(), value.to_string());
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn meta(&self) -> &BTreeMap<String, String> {
        &self.meta
    }

    /// Total mass; one unless the measure came out of an unnormalized
    /// restriction.
    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Dimension recorded by the generator, if any.
    pub fn declared_dimension(&self) -> Option<f64> {
        self.meta.get("s").and_then(|s| s.parse().ok())
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        euclidean_distance(self.point(i), self.point(j))
    }

    /// Smallest nearest-neighbor distance. Mollification widths and ball
    /// radii must not go below it. A single point has floor zero.
    pub fn resolution_scale(&self) -> f64 {
        *self.resolution.get_or_init(|| {
            let m = self.len();
            if m < 2 {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for i in 0..m {
                for j in (i + 1)..m {
                    best = best.min(self.distance(i, j));
                }
            }
            best
        })
    }

    /// Errors if `value` is below the resolution floor.
    /// Floor for mollification widths: the resolution scale for measures
    /// that declare a dimension `s` (discretized fractals), none for exact
    /// finite configurations.
    pub fn width_floor(&self) -> Option<f64> {
        self.declared_dimension().map(|_| self.resolution_scale())
    }

    /// Rejects a mollification width below [`DiscreteMeasure::width_floor`].
    pub fn require_width(&self, what: &'static str, value: f64) -> Result<()> {
        match self.width_floor() {
            Some(floor) if value < floor => Err(Error::BelowResolution { what, value, floor }),
            _ => Ok(()),
        }
    }

    pub fn require_resolved(&self, what: &'static str, value: f64) -> Result<()> {
        let floor = self.resolution_scale();
        if value < floor {
            return Err(Error::BelowResolution { what, value, floor });
        }
        Ok(())
    }

    pub fn to_file(&self) -> MeasureFile {
        let mass = self.mass();
        MeasureFile {
            ambient_dim: self.dim,
            points: self.points().map(|p| p.to_vec()).collect(),
            weights: self.weights.iter().map(|w| w / mass).collect(),
            meta: if self.meta.is_empty() {
                None
            } else {
                Some(self.meta.clone())
            },
        }
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_file())?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: MeasureFile = serde_json::from_str(&text)?;
        file.into_measure()
    }
}

pub(crate) fn euclidean_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// On-disk form of a measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureFile {
    pub ambient_dim: usize,
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<BTreeMap<String, String>>,
}

impl MeasureFile {
    pub fn into_measure(self) -> Result<DiscreteMeasure> {
        let mut mu = DiscreteMeasure::new(self.ambient_dim, self.points, self.weights)?;
        if let Some(meta) = self.meta {
            mu.meta = meta;
        }
        Ok(mu)
    }
}

/// Axis-product Cantor construction: each axis keeps `branches` subintervals
/// of relative length `ratio` per level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CantorParams {
    pub dim: usize,
    pub branches: usize,
    pub ratio: f64,
    pub depth: u32,
    #[serde(default)]
    pub jitter_seed: Option<u64>,
}

impl CantorParams {
    /// Similarity dimension `d * log m / log(1/r)`.
    pub fn dimension(&self) -> f64 {
        self.dim as f64 * (self.branches as f64).ln() / (1.0 / self.ratio).ln()
    }
}

/// Level-`depth` product Cantor measure with equal weights.
pub fn gen_cantor_measure(params: &CantorParams, point_budget: usize) -> Result<DiscreteMeasure> {
    let CantorParams {
        dim,
        branches: m,
        ratio: r,
        depth,
        jitter_seed,
    } = *params;
    if dim == 0 {
        return Err(Error::InvalidParameter("ambient dimension must be >= 1".into()));
    }
    if m < 2 {
        return Err(Error::InvalidParameter(format!("branches_per_axis = {m} must be >= 2")));
    }
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::InvalidParameter(format!("ratio = {r} must lie in (0, 1)")));
    }
    if m as f64 * r > 1.0 {
        return Err(Error::InvalidParameter(format!(
            "branches * ratio = {} > 1: cells overlap",
            m as f64 * r
        )));
    }
    if depth == 0 {
        return Err(Error::InvalidParameter("depth must be >= 1".into()));
    }
    let count = (m as u128)
        .checked_pow(depth * dim as u32)
        .filter(|&c| c <= point_budget as u128)
        .ok_or(Error::BudgetExceeded {
            what: "cantor construction",
            required: (m as f64).powf(depth as f64 * dim as f64),
            budget: point_budget as f64,
        })? as usize;

    let mut rng = jitter_seed.map(ChaCha8Rng::seed_from_u64);
    let axes: Vec<Vec<f64>> = (0..dim)
        .map(|_| cantor_axis(m, r, depth, rng.as_mut()))
        .collect();

    let mut coords = Vec::with_capacity(count * dim);
    let per_axis = axes[0].len();
    for flat in 0..count {
        // axis 0 varies slowest
        let mut rem = flat;
        let mut idx = vec![0; dim];
        for a in (0..dim).rev() {
            idx[a] = rem % per_axis;
            rem /= per_axis;
        }
        coords.extend(idx.iter().enumerate().map(|(a, &k)| axes[a][k]));
    }
    let weights = vec![1.0 / count as f64; count];

    let mu = DiscreteMeasure::build(dim, coords, weights)?;
    if mu.len() != count {
        return Err(Error::InvalidMeasure(
            "cantor construction produced coincident points".into(),
        ));
    }
    mu.check_mass(1.0)?;
    let mut mu = mu
        .with_meta("family", "product_cantor")
        .with_meta("s", params.dimension())
        .with_meta("depth", depth)
        .with_meta("branches", m)
        .with_meta("ratio", r);
    if let Some(seed) = jitter_seed {
        mu = mu.with_meta("jitter_seed", seed);
    }
    Ok(mu)
}

/// Left endpoints of the level-`depth` intervals of a one-dimensional
/// construction on [0, 1].
fn cantor_axis(m: usize, r: f64, depth: u32, mut rng: Option<&mut ChaCha8Rng>) -> Vec<f64> {
    let mut points = vec![0.0];
    let mut len = 1.0;
    let slot = 1.0 / m as f64;
    for _ in 0..depth {
        let mut next = Vec::with_capacity(points.len() * m);
        for &left in &points {
            for i in 0..m {
                let offset = match rng.as_deref_mut() {
                    // child interval of length r stays inside [i/m, (i+1)/m]
                    Some(g) => i as f64 * slot + g.gen::<f64>() * (slot - r),
                    None => i as f64 * (1.0 - r) / (m - 1) as f64,
                };
                next.push(left + offset * len);
            }
        }
        points = next;
        len *= r;
    }
    points
}

/// How ball centers are chosen in [`frostman_constant`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenterSampling {
    AllPoints,
    Random { count: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrostmanReport {
    pub exponent: f64,
    pub constant: f64,
    pub samples: usize,
    /// `(r, sup_x mu(B(x, r)) / r^s)` per radius.
    pub per_radius: Vec<(f64, f64)>,
    /// Least-squares slope of `log(ratio)` against `log(1/r)`; positive when
    /// the ratio blows up at small radii.
    pub excess_exponent: f64,
    pub non_uniform: bool,
}

/// Excess exponent above which a Frostman report is flagged.
pub const NON_UNIFORM_EXCESS: f64 = 0.1;

/// `sup mu(B(x, r)) / r^s` over sampled support points and the given radii.
pub fn frostman_constant(
    mu: &DiscreteMeasure,
    s: f64,
    radii: &[f64],
    centers: CenterSampling,
) -> Result<FrostmanReport> {
    if !(s >= 0.0 && s.is_finite()) {
        return Err(Error::InvalidParameter(format!("exponent s = {s} must be >= 0")));
    }
    if radii.is_empty() {
        return Err(Error::InvalidParameter("radii list is empty".into()));
    }
    for &r in radii {
        if !(r > 0.0) {
            return Err(Error::InvalidParameter(format!("radius {r} must be positive")));
        }
        mu.require_resolved("radius", r)?;
    }
    let center_idx: Vec<usize> = match centers {
        CenterSampling::AllPoints => (0..mu.len()).collect(),
        CenterSampling::Random { count, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..count).map(|_| rng.gen_range(0..mu.len())).collect()
        }
    };

    let mut per_radius = Vec::with_capacity(radii.len());
    for &r in radii {
        let mut sup: f64 = 0.0;
        for &c in &center_idx {
            let x = mu.point(c);
            let mass: f64 = (0..mu.len())
                .filter(|&i| euclidean_distance(mu.point(i), x) <= r)
                .map(|i| mu.weight(i))
                .sum();
            sup = sup.max(mass / r.powf(s));
        }
        per_radius.push((r, sup));
    }
    let constant = per_radius.iter().map(|p| p.1).fold(0.0, f64::max);

    let fit: Vec<(f64, f64)> = per_radius
        .iter()
        .filter(|p| p.1 > 0.0)
        .map(|&(r, q)| ((1.0 / r).ln(), q.ln()))
        .collect();
    let excess_exponent = least_squares_slope(&fit).unwrap_or(0.0);

    Ok(FrostmanReport {
        exponent: s,
        constant,
        samples: center_idx.len() * radii.len(),
        per_radius,
        excess_exponent,
        non_uniform: excess_exponent > NON_UNIFORM_EXCESS,
    })
}

/// Ordinary least-squares slope; `None` without two distinct abscissae.
pub(crate) fn least_squares_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(sxy / sxx)
}

/// Off-diagonal Riesz energy `sum_{i != j} w_i w_j |p_i - p_j|^-s`.
pub fn riesz_energy(mu: &DiscreteMeasure, s: f64) -> Result<f64> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::InvalidParameter(format!("energy exponent s = {s} must be > 0")));
    }
    let m = mu.len();
    let mut total = 0.0;
    for i in 0..m {
        let mut row = 0.0;
        for j in 0..m {
            if i != j {
                row += mu.weight(j) * mu.distance(i, j).powf(-s);
            }
        }
        total += mu.weight(i) * row;
    }
    Ok(total)
}

/// Sub-measure on `keep`. Without renormalization the result has mass below
/// one; the removed mass is recorded in the metadata either way.
pub fn restrict_measure(
    mu: &DiscreteMeasure,
    keep: &[usize],
    renormalize: bool,
) -> Result<DiscreteMeasure> {
    let mut keep = keep.to_vec();
    keep.sort_unstable();
    keep.dedup();
    if keep.is_empty() {
        return Err(Error::InvalidParameter("kept index set is empty".into()));
    }
    if let Some(&bad) = keep.iter().find(|&&i| i >= mu.len()) {
        return Err(Error::InvalidParameter(format!(
            "index {bad} out of range for a measure with {} points",
            mu.len()
        )));
    }
    let kept_mass: f64 = keep.iter().map(|&i| mu.weight(i)).sum();
    if !(kept_mass > 0.0) {
        return Err(Error::InvalidParameter("kept set carries zero mass".into()));
    }
    let removed = mu.mass() - kept_mass;
    let scale = if renormalize { kept_mass } else { 1.0 };

    let coords = keep.iter().flat_map(|&i| mu.point(i).iter().copied()).collect();
    let weights = keep.iter().map(|&i| mu.weight(i) / scale).collect();
    let mut out = DiscreteMeasure::build(mu.dim, coords, weights)?;
    out.meta = mu.meta.clone();
    let prior: f64 = mu
        .meta
        .get("removed_mass")
        .and_then(|s| s.parse().ok())
        .unwrap_or(0.0);
    out.meta
        .insert("removed_mass".into(), (prior + removed).to_string());
    if renormalize {
        out.check_mass(1.0)?;
    }
    Ok(out)
}
