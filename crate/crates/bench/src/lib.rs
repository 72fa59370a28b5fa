//! Fixtures shared by the benchmarks.

use cglblow_core::simulator::{MeshConfig, SolverConfig};
use cglblow_core::{Complex64, GridFunction, Parameters};

/// Default parameters used by every benchmark.
pub fn params() -> Parameters {
    Parameters::default()
}

/// A smooth complex field on the default spectral mesh at time `s`.
pub fn smooth_field(s: f64) -> GridFunction {
    let mesh = cglblow_core::hermite::default_spectral_mesh(s, params().k);
    GridFunction::from_fn(mesh, |y| Complex64::new((1.0 + y).cos(), 0.3 * y.sin()))
}

/// Solver settings at the default mesh focus with `nodes` nodes.
pub fn solver_config(nodes: usize) -> SolverConfig {
    SolverConfig { mesh: MeshConfig { nodes, ..MeshConfig::default() }, ..SolverConfig::default() }
}
