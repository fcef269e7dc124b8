//! Experiment configuration: TOML with one section per subsystem. Every
//! field has a default, and the resolved form (all defaults written out)
//! is what runs record next to their outputs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::io::WindowMode;
use crate::metrics::{SsimParams, SUPPORT_FRACTION};
use crate::phantom::{CoilSpec, PhantomSpec};
use crate::recon::ReconConfig;
use crate::sampling::{GaConfig, SamplingMask};

/// Mask family for the extended grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    Full,
    Uniform,
    Random,
    Poisson,
    Cava,
}

impl MaskKind {
    pub fn generate(self, n_pe: usize, accel: usize, seed: u64) -> Result<SamplingMask> {
        match self {
            MaskKind::Full => Ok(SamplingMask::full(n_pe)),
            MaskKind::Uniform => SamplingMask::uniform(n_pe, accel, 0),
            MaskKind::Random => SamplingMask::random(n_pe, accel, seed),
            MaskKind::Poisson => SamplingMask::poisson(n_pe, accel, seed),
            MaskKind::Cava => SamplingMask::cava(n_pe, accel, 0, seed),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Acquisition {
    /// Simultaneously excited slices.
    pub mb: usize,
    /// PE extension factor of the stacked field of view.
    pub extension: usize,
    /// Net acceleration: readouts of one full single-slice scan per MB
    /// slices, divided by readouts acquired.
    pub accel: usize,
    pub mask: MaskKind,
    /// Noise standard deviation as a fraction of the largest coil-image
    /// magnitude.
    pub noise: f64,
    /// Fully sampled central lines of the single-slice calibration scans.
    pub acs_lines: usize,
}

impl Default for Acquisition {
    fn default() -> Self {
        Self { mb: 3, extension: 3, accel: 6, mask: MaskKind::Uniform, noise: 0.01, acs_lines: 32 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsOptions {
    pub support_fraction: f64,
    pub ssim: SsimParams,
    pub g_trials: usize,
    /// Display gain applied to error maps.
    pub error_scale: f64,
}

impl Default for MetricsOptions {
    fn default() -> Self {
        Self { support_fraction: SUPPORT_FRACTION, ssim: SsimParams::default(), g_trials: 64, error_scale: 5.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoryConfig {
    pub n_coils: Vec<usize>,
    /// Candidate values for each of `C_x` and `C_y`.
    pub supports: Vec<usize>,
    /// Candidate values for each of `E_x` and `E_y`.
    pub extents: Vec<usize>,
    /// Side of the square synthetic grid.
    pub grid: usize,
    /// Singular-value ratio below which a kernel counts as found.
    pub threshold: f64,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self { n_coils: vec![2, 4, 8], supports: vec![3, 5, 7], extents: (1..=8).collect(), grid: 32, threshold: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingStudyConfig {
    pub accels: Vec<usize>,
    /// Accelerations that also get a GA-optimized mask.
    pub ga_accels: Vec<usize>,
    /// Single-slice grid of the study (smaller than the main phantom so the
    /// GA stays affordable).
    pub ny: usize,
    pub nx: usize,
    /// Inter-slice map similarity for the study.
    pub similarity: f64,
    /// Relative PSF level counted as a lobe.
    pub psf_threshold: f64,
    pub ga: GaConfig,
}

impl Default for SamplingStudyConfig {
    fn default() -> Self {
        Self {
            accels: vec![3, 4, 5, 6, 7, 8],
            ga_accels: vec![3, 4, 5, 6, 7, 8],
            ny: 40,
            nx: 32,
            similarity: 0.9,
            psf_threshold: 0.1,
            ga: GaConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapSource {
    /// The simulation's own maps.
    True,
    /// Estimated from the single-slice calibration scans.
    Estimated,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompareMethod {
    /// Extended-FOV acquisition, CG-SENSE.
    Smile,
    /// CAIPI acquisition, slice-GRAPPA (plus in-plane GRAPPA).
    Caipi,
}

impl CompareMethod {
    pub fn name(self) -> &'static str {
        match self {
            CompareMethod::Smile => "smile",
            CompareMethod::Caipi => "caipi",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    pub methods: Vec<CompareMethod>,
    pub maps: MapSource,
    pub leakage: bool,
    /// Kernel settings for the CAIPI pipeline.
    pub caipi: ReconConfig,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            methods: vec![CompareMethod::Smile, CompareMethod::Caipi],
            maps: MapSource::True,
            leakage: true,
            caipi: ReconConfig {
                method: crate::recon::ReconMethod::SliceGrappa,
                lambda: 1e-3,
                kernel: [7, 7],
                ..ReconConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportOptions {
    pub images: bool,
    pub window: WindowMode,
}

impl Default for ExportOptions {
    fn default() -> Self {
        Self { images: true, window: WindowMode::MinMax }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct ExperimentConfig {
    /// Master seed for masks, noise, the GA and pseudo-replicas. Phantom
    /// and coils carry their own seeds.
    pub seed: u64,
    pub phantom: PhantomSpec,
    pub coils: CoilSpec,
    pub acquisition: Acquisition,
    pub recon: ReconConfig,
    pub metrics: MetricsOptions,
    pub theory: TheoryConfig,
    pub sampling: SamplingStudyConfig,
    pub compare: CompareConfig,
    pub export: ExportOptions,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("config: {e}")))?;
        cfg.phantom.mb = cfg.acquisition.mb;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidArgument(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Every field written out, defaults included.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidArgument(format!("config serialization: {e}")))
    }

    /// Phantom spec with the slice count taken from the acquisition.
    pub fn phantom_spec(&self) -> PhantomSpec {
        PhantomSpec { mb: self.acquisition.mb, ..self.phantom.clone() }
    }

    /// CAIPI in-plane acceleration matching the net acceleration.
    pub fn caipi_inplane_accel(&self) -> Result<usize> {
        let a = &self.acquisition;
        if !a.accel.is_multiple_of(a.mb) {
            return invalid(format!("net acceleration {} is not a multiple of MB {}", a.accel, a.mb));
        }
        Ok(a.accel / a.mb)
    }

    pub fn validate(&self) -> Result<()> {
        let a = &self.acquisition;
        self.phantom_spec().validate()?;
        self.coils.validate(self.phantom.nx, self.phantom.ny)?;
        self.recon.validate()?;
        self.compare.caipi.validate()?;
        self.sampling.ga.validate()?;
        if a.extension < 1 {
            return invalid("extension factor must be at least 1");
        }
        if a.extension < a.mb {
            return invalid(format!("uniform placement without overlap needs extension >= MB ({} < {})", a.extension, a.mb));
        }
        let lines = a.extension * self.phantom.ny;
        if a.accel < 1 || a.accel > lines {
            return invalid(format!("acceleration {} outside [1, {lines}]", a.accel));
        }
        if !(0.0..1.0).contains(&a.noise) {
            return invalid(format!("noise fraction {} outside [0, 1)", a.noise));
        }
        if a.acs_lines < 2 || a.acs_lines > self.phantom.ny {
            return invalid(format!("calibration lines {} outside [2, {}]", a.acs_lines, self.phantom.ny));
        }
        if self.metrics.g_trials < 2 {
            return invalid("g-factor needs at least 2 trials");
        }
        if !(0.0..1.0).contains(&self.metrics.support_fraction) {
            return invalid("support fraction outside [0, 1)");
        }
        let t = &self.theory;
        crate::calib::check_sweep(&t.n_coils, &t.supports, &t.extents, t.grid)?;
        let s = &self.sampling;
        if s.accels.is_empty() || s.accels.iter().any(|&r| r < 1 || r > s.ny * a.extension) {
            return invalid("sampling-study accelerations must lie in [1, extended lines]");
        }
        if s.ga_accels.iter().any(|r| !s.accels.contains(r)) {
            return invalid("GA accelerations must be a subset of the study accelerations");
        }
        if s.ny < 16 || s.nx < 16 {
            return invalid("sampling-study grid must be at least 16x16");
        }
        if self.compare.methods.is_empty() {
            return invalid("compare needs at least one method");
        }
        Ok(())
    }
}
