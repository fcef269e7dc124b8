//! Image quality, noise amplification and slice leakage.

mod gfactor;
mod leakage;
mod quality;
mod report;

pub use gfactor::{
    g_factor_pseudo_replica, g_factor_with_reference, noise_kspace, reference_noise_std, GFactorMap, ReplicaGeometry,
};
pub use leakage::leakage_matrix;
pub use quality::{
    error_map, object_support, ser, ser_per_slice, ssim, ssim_2d, ssim_components, ErrorMap, SsimComponents, SsimParams,
    SER_CAP_DB, SUPPORT_FRACTION,
};
pub use report::MetricsReport;
