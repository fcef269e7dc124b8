//! Simulation, calibration and reconstruction for simultaneous multislice
//! MRI with slices stacked in an extended phase-encoding field of view.

pub mod calib;
pub mod config;
pub mod error;
pub mod experiments;
pub mod fft;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod phantom;
pub mod recon;
pub mod rng;
pub mod sampling;

pub use error::{Error, Result};
pub use model::{
    assemble_extended, caipi_forward, smile_forward, CoilMapSet, ExtendedImage, Grid, KSpaceData, PhaseTable, Placement,
    SliceStack, C64,
};
pub use phantom::{make_coil_maps, make_phantom, CoilSpec, PhantomSpec, PhantomStyle};
pub use sampling::{MaskGenerator, SamplingMask};
