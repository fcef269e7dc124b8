//! Image reconstruction: CG-SENSE on extended or collapsed grids, uniform
//! GRAPPA, and slice-GRAPPA for CAIPI data.

mod cg;
mod column;
mod encoding;
mod grappa;
mod slice_grappa;

pub use cg::{conjugate_residual, SolveOutcome};
pub use column::ColumnSense;
pub use encoding::{mask_kernel, SenseOperator};
pub use grappa::{apply_grappa, grappa_uniform, grappa_with_calibration, train_grappa, GrappaKernels};
pub use slice_grappa::{slice_grappa, SliceGrappaOutput};

use std::time::{Duration, Instant};

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::{CoilMapSet, KSpaceData, SliceStack, C64};
use crate::sampling::SamplingMask;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconMethod {
    CgSense,
    GrappaUniform,
    SliceGrappa,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconConfig {
    pub method: ReconMethod,
    /// Tikhonov weight. SENSE adds it to the normal matrix; kernel training
    /// scales it by the mean diagonal of the training normal matrix.
    pub lambda: f64,
    pub max_iters: usize,
    pub cg_tolerance: f64,
    /// `[E_x, E_y]` for slice-GRAPPA (or GRAPPA when it is the method).
    pub kernel: [usize; 2],
    /// `[E_x, E_y]` for the in-plane GRAPPA stage after slice separation.
    pub inplane_kernel: [usize; 2],
    pub inplane_lambda: f64,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            method: ReconMethod::CgSense,
            lambda: 0.0,
            max_iters: 200,
            cg_tolerance: 1e-8,
            kernel: [5, 5],
            inplane_kernel: [5, 4],
            inplane_lambda: 1e-4,
        }
    }
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cg_tolerance <= 0.0 || !self.cg_tolerance.is_finite() {
            return invalid(format!("cg_tolerance {} must be positive", self.cg_tolerance));
        }
        if self.max_iters < 1 {
            return invalid("max_iters must be >= 1");
        }
        if self.lambda < 0.0 || self.inplane_lambda < 0.0 {
            return invalid("lambda must be non-negative");
        }
        if self.kernel.contains(&0) || self.inplane_kernel.contains(&0) {
            return invalid("kernel extents must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ReconResult {
    pub slices: SliceStack,
    pub iterations: usize,
    pub residual: f64,
    pub residual_history: Vec<f64>,
    pub converged: bool,
    pub wall_time: Duration,
    pub warnings: Vec<String>,
}

/// Regularized least squares by conjugate residual iterations on
/// `(A^H A + lambda I) x = A^H k`; unknowns are the per-slice images.
pub fn cg_sense(k: &KSpaceData, maps: &CoilMapSet, mask: &SamplingMask, cfg: &ReconConfig) -> Result<ReconResult> {
    cfg.validate()?;
    let start = Instant::now();
    let op = SenseOperator::new(maps, &k.grid, mask)?;
    let mut warnings = Vec::new();
    if op.overlapping() {
        warnings.push("slice segments overlap; per-slice unknowns share PE rows".to_string());
    }
    let rhs = op.adjoint(&k.data)?;
    let lambda = cfg.lambda;
    let out = conjugate_residual(
        |v: &Array3<C64>| {
            let mut h = op.normal(v);
            if lambda > 0.0 {
                h.scaled_add(C64::new(lambda, 0.0), v);
            }
            h
        },
        &rhs,
        cfg.cg_tolerance,
        cfg.max_iters,
    );
    if !out.converged {
        warnings.push(format!("no convergence after {} iterations (relative residual {:.3e})", out.iterations, out.residual));
    }
    Ok(ReconResult {
        slices: SliceStack::new(out.x)?,
        iterations: out.iterations,
        residual: out.residual,
        residual_history: out.history,
        converged: out.converged,
        wall_time: start.elapsed(),
        warnings,
    })
}
