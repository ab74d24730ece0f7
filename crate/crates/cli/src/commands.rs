use std::path::Path;

use ftree_core::hypergraphs::{config_kernel_matrix, DEFAULT_INTERIOR_BUDGET};
use ftree_core::kernels::KernelSummary;
use ftree_core::operators::{refine_with_norm, restrict_kernel};
use ftree_core::realization::CERTIFICATE_LABEL;
use ftree_core::spectral::{RadialBump, DEFAULT_GRID_BUDGET};
use ftree_core::trees::WristReport;
use ftree_core::{
    assemble_kernel_matrix, find_wrists, gen_cantor_measure, lower_constant, monge_ampere_min_det, operator_norm,
    realize_tree, scan_gap, tree_energy, AssumptionReport, CantorParams, DiscreteMeasure, KernelMatrix, KernelSpec,
    RealizationResult, RefinementReport, TreeGraph,
};
use serde::Serialize;

use crate::config::{missing, ExperimentConfig};
use crate::report::{emit, record_json, suffixed, Provenance};
use crate::{CliError, Command, Outcome};

pub fn execute(command: Command, cfg: &ExperimentConfig, out: Option<&Path>) -> Result<Outcome, CliError> {
    let prov = Provenance::new(command, cfg);
    match command {
        Command::GenMeasure => gen_measure(cfg, &prov, out),
        Command::Check => check(cfg, &prov, out),
        Command::Scan => scan(cfg, &prov, out),
        Command::TreeEnergy => energy(cfg, &prov, out),
        Command::Realize => realize(cfg, &prov, out),
        Command::Wrist => wrist(cfg, &prov, out),
        Command::ConfigEnergy => config_energy(cfg, &prov, out),
        Command::Spectral => spectral(cfg, &prov, out),
    }
}

#[derive(Serialize)]
struct MeasureSummary {
    points: usize,
    ambient_dim: usize,
    resolution_scale: f64,
    s_declared: Option<f64>,
}

fn summarize(mu: &DiscreteMeasure) -> MeasureSummary {
    MeasureSummary {
        points: mu.len(),
        ambient_dim: mu.dim(),
        resolution_scale: mu.resolution_scale(),
        s_declared: mu.declared_dimension(),
    }
}

fn kernel(cfg: &ExperimentConfig, mu: &DiscreteMeasure) -> Result<(KernelSpec, KernelMatrix), CliError> {
    let spec = KernelSpec::new(cfg.phi(), cfg.t()?, cfg.eps()?, cfg.mollifier());
    let k = assemble_kernel_matrix(&spec, mu, 0.0)?;
    Ok((spec, k))
}

fn gen_measure(cfg: &ExperimentConfig, prov: &Provenance, out: Option<&Path>) -> Result<Outcome, CliError> {
    let mut params = cfg.cantor.unwrap_or(CantorParams {
        dim: 1,
        branches: 2,
        ratio: 1.0 / 3.0,
        depth: 5,
        jitter_seed: None,
    });
    if params.jitter_seed.is_none() {
        params.jitter_seed = cfg.seed;
    }
    let mut mu = gen_cantor_measure(&params, cfg.budget_or(1 << 20) as usize)?;
    for (k, v) in [
        ("command", &prov.command),
        ("config_digest", &prov.config_digest),
        ("version", &prov.version),
    ] {
        mu = mu.with_meta(format!("provenance.{k}"), v);
    }
    mu = mu.with_meta("provenance.seed", prov.seed);
    let mut text = serde_json::to_string_pretty(&mu.to_file()).expect("measure serializes");
    text.push('\n');
    emit(out, &text)?;
    Ok(Outcome::Success)
}

#[derive(Serialize)]
struct Thresholds {
    ambient_dim: usize,
    /// `(d + 1) / 2`
    euclidean_distance: f64,
    alpha: f64,
    /// `d - alpha`
    sobolev: f64,
    /// `(2d + 3) / 3`, reported for `d >= 4`
    triangle_interior: Option<f64>,
    s_declared: Option<f64>,
    s_exceeds_euclidean: Option<bool>,
    s_exceeds_sobolev: Option<bool>,
}

fn thresholds(cfg: &ExperimentConfig, mu: &DiscreteMeasure) -> Thresholds {
    let d = mu.dim() as f64;
    let alpha = cfg.alpha.unwrap_or((d - 1.0) / 2.0);
    let s = mu.declared_dimension();
    Thresholds {
        ambient_dim: mu.dim(),
        euclidean_distance: (d + 1.0) / 2.0,
        alpha,
        sobolev: d - alpha,
        triangle_interior: (mu.dim() >= 4).then_some((2.0 * d + 3.0) / 3.0),
        s_declared: s,
        s_exceeds_euclidean: s.map(|s| s > (d + 1.0) / 2.0),
        s_exceeds_sobolev: s.map(|s| s > d - alpha),
    }
}

#[derive(Serialize)]
struct CheckReport {
    measure: MeasureSummary,
    kernel: KernelSummary,
    spec: KernelSpec,
    assumption: AssumptionReport,
    lower_bound_holds: bool,
    bounded_operator: bool,
    refinement: Option<RefinementReport>,
    monge_ampere_min_det: f64,
    monge_ampere_samples: usize,
    nondegenerate: bool,
    thresholds: Thresholds,
    label: &'static str,
}

fn check(cfg: &ExperimentConfig, prov: &Provenance, out: Option<&Path>) -> Result<Outcome, CliError> {
    let mu = cfg.measure()?;
    let (spec, k) = kernel(cfg, &mu)?;
    let assumption = operator_norm(&k, &mu, cfg.norm_options())?;
    let lower_bound_holds = assumption.lower_bound_holds();
    let refinement = if lower_bound_holds {
        Some(refine_with_norm(&k, &mu, cfg.n_param, &assumption)?.1)
    } else {
        None
    };
    let samples = cfg.ma_samples.unwrap_or(64);
    let det = monge_ampere_min_det(&spec.phi, mu.dim(), spec.t, samples, cfg.seed())?;
    let report = CheckReport {
        measure: summarize(&mu),
        kernel: k.summary(),
        bounded_operator: assumption.c_norm.is_finite(),
        assumption,
        lower_bound_holds,
        refinement,
        monge_ampere_min_det: det,
        monge_ampere_samples: samples,
        nondegenerate: det > 0.0,
        thresholds: thresholds(cfg, &mu),
        spec,
        label: CERTIFICATE_LABEL,
    };
    emit(out, &record_json(prov, &report))?;
    if !lower_bound_holds {
        return Ok(Outcome::Negative("lower bound fails: c_lower = 0".into()));
    }
    Ok(Outcome::Success)
}

fn scan(cfg: &ExperimentConfig, prov: &Provenance, out: Option<&Path>) -> Result<Outcome, CliError> {
    let mu = cfg.measure()?;
    let t_min = cfg.t_min.ok_or_else(|| missing("--t-min", "t_min"))?;
    let t_max = cfg.t_max.ok_or_else(|| missing("--t-max", "t_max"))?;
    let steps = cfg.steps.ok_or_else(|| missing("--steps", "steps"))?;
    let threshold = cfg.threshold.ok_or_else(|| missing("--threshold", "threshold"))?;
    let result = scan_gap(&cfg.phi(), &mu, (t_min, t_max, steps), cfg.eps()?, threshold, cfg.mollifier())?;
    emit(out, &result.to_csv(&prov.lines()))?;
    if result.intervals.is_empty() {
        return Ok(Outcome::Negative(format!("no grid interval with J >= {threshold}")));
    }
    Ok(Outcome::Success)
}

#[derive(Serialize)]
struct EnergyReport {
    measure: MeasureSummary,
    kernel: KernelSummary,
    tree: ftree_core::trees::TreeFile,
    tree_energy: f64,
    refinement: Option<RefinementReport>,
    refined_tree_energy: Option<f64>,
}

fn energy(cfg: &ExperimentConfig, prov: &Provenance, out: Option<&Path>) -> Result<Outcome, CliError> {
    let mu = cfg.measure()?;
    let tree = cfg.require_tree()?;
    let (_, k) = kernel(cfg, &mu)?;
    let total = tree_energy(&k, &mu, &tree)?;
    let (refinement, refined_tree_energy) = if lower_constant(&k, &mu)? > 0.0 {
        let norm = operator_norm(&k, &mu, cfg.norm_options())?;
        let (refined, rep) = refine_with_norm(&k, &mu, cfg.n_param, &norm)?;
        let kr = restrict_kernel(&k, &rep.kept_indices);
        let e = tree_energy(&kr, &refined, &tree)?;
        (Some(rep), Some(e))
    } else {
        (None, None)
    };
    let report = EnergyReport {
        measure: summarize(&mu),
        kernel: k.summary(),
        tree: tree.to_file(),
        tree_energy: total,
        refinement,
        refined_tree_energy,
    };
    emit(out, &record_json(prov, &report))?;
    Ok(Outcome::Success)
}

#[derive(Serialize)]
struct RealizeReport {
    #[serde(flatten)]
    result: RealizationResult,
    /// `[vertex (1-based), point index, coordinates]`
    points: Vec<(usize, usize, Vec<f64>)>,
    verified: bool,
}

fn realize(cfg: &ExperimentConfig, prov: &Provenance, out: Option<&Path>) -> Result<Outcome, CliError> {
    let mu = cfg.measure()?;
    let tree = cfg.require_tree()?;
    let t = cfg.t()?;
    let tol = match (cfg.tol, cfg.kernel.eps) {
        (Some(tol), _) => tol,
        (None, Some(eps)) => eps / 2.0,
        (None, None) => return Err(missing("--tol", "tol")),
    };
    let phi = cfg.phi();
    let result = realize_tree(&mu, &phi, t, tol, &tree)?;
    let verified = ftree_core::verify_realization(&result, &mu, &phi, &tree);
    let points = result
        .assignment
        .iter()
        .enumerate()
        .map(|(v, &p)| (v + 1, p, mu.point(p).to_vec()))
        .collect();
    let found = result.found;
    emit(out, &record_json(prov, &RealizeReport { result, points, verified }))?;
    if !found {
        return Ok(Outcome::Negative(format!("no realization at t = {t} within tol = {tol}")));
    }
    Ok(Outcome::Success)
}

fn wrist(cfg: &ExperimentConfig, prov: &Provenance, out: Option<&Path>) -> Result<Outcome, CliError> {
    let tree = cfg.require_tree()?;
    let report: WristReport = find_wrists(&tree).one_based();
    emit(out, &record_json(prov, &report))?;
    Ok(Outcome::Success)
}

#[derive(Serialize)]
struct ConfigEnergyReport {
    measure: MeasureSummary,
    config_graph: ftree_core::hypergraphs::ConfigFile,
    shape: ftree_core::trees::TreeFile,
    kernel: KernelSummary,
    lower_constant: f64,
    config_tree_energy: f64,
}

fn config_energy(cfg: &ExperimentConfig, prov: &Provenance, out: Option<&Path>) -> Result<Outcome, CliError> {
    let mu = cfg.measure()?;
    let graph = cfg.config_graph()?;
    let shape = match cfg.tree()? {
        Some(t) => t,
        None => TreeGraph::path(2)?,
    };
    let k = config_kernel_matrix(
        &graph,
        &cfg.phi(),
        cfg.eps()?,
        &mu,
        cfg.mollifier(),
        cfg.budget_or(DEFAULT_INTERIOR_BUDGET),
    )?;
    let report = ConfigEnergyReport {
        measure: summarize(&mu),
        config_graph: graph.to_file(),
        lower_constant: lower_constant(&k, &mu)?,
        config_tree_energy: tree_energy(&k, &mu, &shape)?,
        shape: shape.to_file(),
        kernel: k.summary(),
    };
    emit(out, &record_json(prov, &report))?;
    Ok(Outcome::Success)
}

fn spectral(cfg: &ExperimentConfig, prov: &Provenance, out: Option<&Path>) -> Result<Outcome, CliError> {
    let mu = cfg.measure()?;
    let budget = cfg.budget_or(DEFAULT_GRID_BUDGET as u64) as usize;
    let log2_n = cfg
        .grid_log2
        .unwrap_or_else(|| 12.min(((budget as f64).log2() / mu.dim() as f64).floor() as u32));
    let annulus = ftree_core::annulus_energies(&mu, log2_n, cfg.annulus_range.map(|[a, b]| (a, b)), budget)?;
    let bump = RadialBump::new(cfg.bump.unwrap_or_default());
    let norms = ftree_core::scale_operator_norms(
        &mu,
        cfg.norm_range.map(|[a, b]| (a, b)),
        bump,
        cfg.norm_options(),
    )?;
    let mut header = prov.lines();
    header.push(format!("grid_log2={log2_n}"));
    let a = annulus.to_csv(&header);
    let mut norm_header = prov.lines();
    norm_header.push(format!("bump={:?}", bump.profile));
    let n = norms.to_csv(&norm_header);
    match out {
        Some(p) => {
            emit(Some(&suffixed(p, "annulus")), &a)?;
            emit(Some(&suffixed(p, "norms")), &n)?;
        }
        None => {
            emit(None, &a)?;
            emit(None, &n)?;
        }
    }
    Ok(Outcome::Success)
}
