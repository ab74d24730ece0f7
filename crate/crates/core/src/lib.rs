//! Numerical laboratory for realizing trees of point configurations in
//! fractal sets.
//!
//! The crate turns the ingredients of a tree-building argument into finite,
//! checkable computations on weighted point clouds:
//!
//! * [`measures`] builds discrete Frostman-type measures (product Cantor
//!   families) and checks their ball-mass and energy behaviour.
//! * [`kernels`] evaluates mollified generalized-distance kernels
//!   `K_{t,eps}(x, y) = eps^-1 beta((phi(x, y) - t) / eps)`, the bordered
//!   Monge-Ampere determinant and the triangle hyperedge kernel.
//! * [`operators`] realizes `U_K f(x) = sum_y K(x, y) f(y) w_y`, checks the
//!   lower bound and L2 boundedness hypotheses, and prunes the measure to a
//!   set where `U_K 1` is not too large.
//! * [`trees`] holds tree graphs, the wrist decomposition, and exact chain
//!   and tree energies.
//! * [`hypergraphs`] marginalizes configuration graphs into two-vertex
//!   hyperedge kernels.
//! * [`realization`] scans the gap parameter and searches for explicit
//!   realizations of a tree.
//! * [`spectral`] provides scale-wise Fourier and Schur-test diagnostics.
//!
//! Every positive number produced here is a discrete certificate at a fixed
//! resolution, not a statement about the continuum limit.

pub mod error;
pub mod hypergraphs;
pub mod kernels;
pub mod measures;
pub mod operators;
pub mod realization;
pub mod spectral;
pub mod trees;

pub use error::{Error, Result};

pub use kernels::{
    assemble_kernel_matrix, eval_kernel, monge_ampere_min_det, triangle_kernel_matrix,
    KernelMatrix, KernelSpec, Mollifier, PhiSpec,
};
pub use measures::{
    frostman_constant, gen_cantor_measure, restrict_measure, riesz_energy, CantorParams,
    DiscreteMeasure, FrostmanReport,
};
pub use operators::{
    apply_uk, lower_constant, operator_norm, refine_measure, AssumptionReport, NormOptions,
    RefinementReport,
};

pub use hypergraphs::{config_kernel_matrix, config_tree_energy, ConfigGraph};
pub use realization::{realize_tree, scan_gap, verify_realization, GapScan, RealizationResult};
pub use spectral::{annulus_energies, decay_slope, scale_operator_norms, SpectralReport};
pub use trees::{chain_energy, find_wrists, tree_energy, tree_energy_bruteforce, TreeGraph};

/// Library version recorded in report provenance headers.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
