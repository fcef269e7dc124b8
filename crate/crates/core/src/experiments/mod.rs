//! Experiment recipes shared by the command-line driver, the benches and
//! the acceptance suite.

mod compare;
mod sampling_study;
mod theory;

pub use compare::{
    acs_region, caipi_mask, compare, evaluate, method_leakage, noise_sigma, placement, quantize, recon_maps, reconstruct,
    smile_mask, Acquired, CompareOutcome, MethodOutput, Scene,
};
pub use sampling_study::{
    optimize_mask, sampling_study, seed_masks, GFactorBench, StudyEntry, StudyOutcome, UNRESOLVED_THRESHOLD,
};
pub use theory::{kernel_pe_scaling, theory_sweep, ScalingOutcome, SweepRow, SweepTable};
