use std::fmt::Write as _;
use std::path::Path;

use ndarray::{s, Array3, Array4, Axis};

use crate::calib::{estimate_coil_maps_from_acs, AcsRegion};
use crate::config::{CompareMethod, ExperimentConfig, MapSource};
use crate::error::{invalid, Error, Result};
use crate::io::{export_mosaic, read_array, read_masks, write_array, write_masks, write_text, WindowMode};
use crate::metrics::{error_map, leakage_matrix, object_support, MetricsReport};
use crate::model::{
    assemble_extended, caipi_forward, smile_forward, CoilMapSet, Grid, KSpaceData, PhaseTable, Placement, SliceStack, C64,
};
use crate::phantom::{coil_images, make_coil_maps, make_phantom};
use crate::recon::{cg_sense, slice_grappa, ReconResult};
use crate::rng::derive_seed;
use crate::sampling::SamplingMask;

const NOISE_SMILE: u64 = 0x736d_696c;
const NOISE_CAIPI: u64 = 0x6361_6970;
const NOISE_CALIB: u64 = 0x6361_6c69;
const MASK_STREAM: u64 = 0x6d61_736b;

/// Round every component to single precision, the file interchange
/// precision, so in-memory runs and file-based runs see identical inputs.
pub fn quantize<D: ndarray::Dimension>(a: &ndarray::Array<C64, D>) -> ndarray::Array<C64, D> {
    a.mapv(|v| C64::new(v.re as f32 as f64, v.im as f32 as f64))
}

/// Ground truth: slices and coil maps, already at interchange precision.
#[derive(Clone, Debug)]
pub struct Scene {
    pub slices: SliceStack,
    pub maps: CoilMapSet,
}

impl Scene {
    pub fn generate(cfg: &ExperimentConfig) -> Result<Self> {
        let p = make_phantom(&cfg.phantom_spec())?;
        let maps = make_coil_maps(&cfg.coils, cfg.acquisition.mb, p.ny(), p.nx())?;
        Ok(Self {
            slices: SliceStack::new(quantize(p.data()))?,
            maps: CoilMapSet::new(quantize(maps.maps()), maps.declared_support)?,
        })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_array(&dir.join("slices.smle"), self.slices.data().view())?;
        write_array(&dir.join("maps.smle"), self.maps.maps().view())
    }

    pub fn read(dir: &Path, cfg: &ExperimentConfig) -> Result<Self> {
        let slices = read_array(&dir.join("slices.smle"))?
            .into_dimensionality()
            .map_err(|e| Error::CorruptFile { path: dir.join("slices.smle"), reason: e.to_string() })?;
        let maps = read_array(&dir.join("maps.smle"))?
            .into_dimensionality()
            .map_err(|e| Error::CorruptFile { path: dir.join("maps.smle"), reason: e.to_string() })?;
        let scene = Self { slices: SliceStack::new(slices)?, maps: CoilMapSet::new(maps, cfg.coils.support)? };
        if scene.slices.mb() != cfg.acquisition.mb {
            return invalid(format!("scene has {} slices, config says {}", scene.slices.mb(), cfg.acquisition.mb));
        }
        Ok(scene)
    }
}

/// Noise level from the configured fraction of the largest coil-image
/// magnitude.
pub fn noise_sigma(cfg: &ExperimentConfig, scene: &Scene) -> Result<f64> {
    let ci = coil_images(&scene.slices, &scene.maps)?;
    Ok(cfg.acquisition.noise * ci.iter().map(|v| v.norm()).fold(0.0, f64::max))
}

/// Extended-grid mask whose line count matches the CAIPI budget at the
/// configured net acceleration.
pub fn smile_mask(cfg: &ExperimentConfig) -> Result<SamplingMask> {
    let a = &cfg.acquisition;
    let lines = a.extension * cfg.phantom.ny;
    if !(a.extension * a.accel).is_multiple_of(a.mb) {
        return invalid(format!("extension {} x acceleration {} is not a multiple of MB {}", a.extension, a.accel, a.mb));
    }
    a.mask.generate(lines, a.extension * a.accel / a.mb, derive_seed(cfg.seed, MASK_STREAM))
}

pub fn caipi_mask(cfg: &ExperimentConfig) -> Result<SamplingMask> {
    SamplingMask::uniform(cfg.phantom.ny, cfg.caipi_inplane_accel()?, 0)
}

pub fn placement(cfg: &ExperimentConfig) -> Result<Placement> {
    Placement::uniform(cfg.acquisition.mb, cfg.phantom.ny, cfg.acquisition.extension)
}

pub fn acs_region(cfg: &ExperimentConfig) -> Result<AcsRegion> {
    AcsRegion::centered(cfg.phantom.ny, cfg.phantom.nx, cfg.acquisition.acs_lines, cfg.phantom.nx)
}

/// Simulated acquisitions for every configured method plus the
/// single-slice calibration scans.
#[derive(Clone, Debug)]
pub struct Acquired {
    pub smile: Option<KSpaceData>,
    pub caipi: Option<KSpaceData>,
    /// One fully sampled single-slice scan per slice.
    pub calibration: Vec<KSpaceData>,
}

fn single_slice(slices: &SliceStack, maps: &CoilMapSet, s: usize, sigma: f64, seed: u64) -> Result<KSpaceData> {
    let one = SliceStack::new(slices.data().slice(s![s..s + 1, .., ..]).to_owned())?;
    let ext = assemble_extended(&one, &maps.select_slice(s), &Placement::uniform(1, slices.ny(), 1)?)?;
    smile_forward(&ext, &SamplingMask::full(slices.ny()), sigma, seed)
}

fn quantized(k: KSpaceData) -> KSpaceData {
    KSpaceData { data: quantize(&k.data), ..k }
}

impl Acquired {
    pub fn simulate(cfg: &ExperimentConfig, slices: &SliceStack, maps: &CoilMapSet, sigma: f64) -> Result<Self> {
        let methods = &cfg.compare.methods;
        let smile = if methods.contains(&CompareMethod::Smile) {
            let ext = assemble_extended(slices, maps, &placement(cfg)?)?;
            Some(quantized(smile_forward(&ext, &smile_mask(cfg)?, sigma, derive_seed(cfg.seed, NOISE_SMILE))?))
        } else {
            None
        };
        let caipi = if methods.contains(&CompareMethod::Caipi) {
            let phases = PhaseTable::caipi(slices.ny(), slices.mb());
            Some(quantized(caipi_forward(slices, maps, &phases, &caipi_mask(cfg)?, sigma, derive_seed(cfg.seed, NOISE_CAIPI))?))
        } else {
            None
        };
        let calibration = (0..slices.mb())
            .map(|s| {
                single_slice(slices, maps, s, sigma, derive_seed(derive_seed(cfg.seed, NOISE_CALIB), s as u64)).map(quantized)
            })
            .collect::<Result<_>>()?;
        Ok(Self { smile, caipi, calibration })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        if let Some(k) = &self.smile {
            write_array(&dir.join("kspace_smile.smle"), k.data.view())?;
            write_masks(
                &dir.join("mask_smile.txt"),
                std::slice::from_ref(k.mask.as_ref().expect("simulated data carry a mask")),
            )?;
        }
        if let Some(k) = &self.caipi {
            write_array(&dir.join("kspace_caipi.smle"), k.data.view())?;
            write_masks(
                &dir.join("mask_caipi.txt"),
                std::slice::from_ref(k.mask.as_ref().expect("simulated data carry a mask")),
            )?;
        }
        let (nc, ny, nx) = self.calibration[0].data.dim();
        let mut cal = Array4::zeros((self.calibration.len(), nc, ny, nx));
        for (s, k) in self.calibration.iter().enumerate() {
            cal.index_axis_mut(Axis(0), s).assign(&k.data);
        }
        write_array(&dir.join("calibration.smle"), cal.view())
    }

    pub fn read(dir: &Path, cfg: &ExperimentConfig) -> Result<Self> {
        let load3 = |name: &str| -> Result<Array3<C64>> {
            let p = dir.join(name);
            read_array(&p)?.into_dimensionality().map_err(|e| Error::CorruptFile { path: p, reason: e.to_string() })
        };
        let one_mask = |name: &str| -> Result<SamplingMask> {
            read_masks(&dir.join(name))?.into_iter().next().ok_or_else(|| Error::InvalidArgument(format!("{name} holds no mask")))
        };
        let with = |data: Array3<C64>, grid: Grid, mask: SamplingMask| KSpaceData { data, grid, mask: None }.with_mask(mask);
        let methods = &cfg.compare.methods;
        let smile = if methods.contains(&CompareMethod::Smile) {
            Some(with(load3("kspace_smile.smle")?, Grid::Extended { placement: placement(cfg)? }, one_mask("mask_smile.txt")?)?)
        } else {
            None
        };
        let caipi = if methods.contains(&CompareMethod::Caipi) {
            let grid = Grid::Collapsed { n_y: cfg.phantom.ny, phases: PhaseTable::caipi(cfg.phantom.ny, cfg.acquisition.mb) };
            Some(with(load3("kspace_caipi.smle")?, grid, one_mask("mask_caipi.txt")?)?)
        } else {
            None
        };
        let p = dir.join("calibration.smle");
        let cal: Array4<C64> =
            read_array(&p)?.into_dimensionality().map_err(|e| Error::CorruptFile { path: p, reason: e.to_string() })?;
        let single = Grid::Extended { placement: Placement::uniform(1, cfg.phantom.ny, 1)? };
        let calibration = cal
            .outer_iter()
            .map(|k| KSpaceData { data: k.to_owned(), grid: single.clone(), mask: Some(SamplingMask::full(cfg.phantom.ny)) })
            .collect();
        Ok(Self { smile, caipi, calibration })
    }
}

/// Coil maps the reconstructions use.
pub fn recon_maps(cfg: &ExperimentConfig, truth: &CoilMapSet, calibration: &[KSpaceData]) -> Result<CoilMapSet> {
    match cfg.compare.maps {
        MapSource::True => Ok(truth.clone()),
        MapSource::Estimated => {
            let region = acs_region(cfg)?;
            let per: Vec<CoilMapSet> =
                calibration.iter().map(|k| estimate_coil_maps_from_acs(k, &region)).collect::<Result<_>>()?;
            let (nc, _, ny, nx) = per[0].maps().dim();
            let mut maps = Array4::zeros((nc, per.len(), ny, nx));
            for (s, m) in per.iter().enumerate() {
                maps.slice_mut(s![.., s, .., ..]).assign(&m.maps().index_axis(Axis(1), 0));
            }
            CoilMapSet::new(maps, per[0].declared_support)
        }
    }
}

pub fn reconstruct(cfg: &ExperimentConfig, method: CompareMethod, acquired: &Acquired, maps: &CoilMapSet) -> Result<ReconResult> {
    match method {
        CompareMethod::Smile => {
            let k = acquired.smile.as_ref().ok_or_else(|| Error::Experiment("no extended-grid data".into()))?;
            cg_sense(k, maps, k.mask.as_ref().expect("simulated data carry a mask"), &cfg.recon)
        }
        CompareMethod::Caipi => {
            let k = acquired.caipi.as_ref().ok_or_else(|| Error::Experiment("no CAIPI data".into()))?;
            Ok(slice_grappa(k, &acquired.calibration, &acs_region(cfg)?, maps, &cfg.compare.caipi)?.result)
        }
    }
}

/// Leakage of one method: noiseless single-slice inputs, kernels and maps
/// calibrated on noiseless scans of the full scene.
pub fn method_leakage(cfg: &ExperimentConfig, method: CompareMethod, scene: &Scene) -> Result<ndarray::Array2<f64>> {
    let mut only = cfg.clone();
    only.compare.methods = vec![method];
    let full = Acquired::simulate(&only, &scene.slices, &scene.maps, 0.0)?;
    let maps = recon_maps(&only, &scene.maps, &full.calibration)?;
    leakage_matrix(&scene.slices, |x| {
        let mut acq = Acquired::simulate(&only, x, &scene.maps, 0.0)?;
        acq.calibration = full.calibration.clone();
        Ok(reconstruct(&only, method, &acq, &maps)?.slices)
    })
}

pub struct MethodOutput {
    pub method: CompareMethod,
    pub recon: Option<ReconResult>,
    pub report: MetricsReport,
}

pub struct CompareOutcome {
    pub scene: Scene,
    pub sigma: f64,
    pub outputs: Vec<MethodOutput>,
    pub error_scale: f64,
}

impl CompareOutcome {
    pub fn report(&self, method: CompareMethod) -> Option<&MetricsReport> {
        self.outputs.iter().find(|o| o.method == method).map(|o| &o.report)
    }

    pub fn failures(&self) -> Vec<&MetricsReport> {
        self.outputs.iter().filter(|o| o.report.failure.is_some()).map(|o| &o.report).collect()
    }

    pub fn summary(&self) -> String {
        let mut out = format!("noise sigma {:.6e}\n", self.sigma);
        for o in &self.outputs {
            out.push_str(&o.report.summary());
        }
        if let (Some(a), Some(b)) = (self.report(CompareMethod::Smile), self.report(CompareMethod::Caipi)) {
            if a.failure.is_none() && b.failure.is_none() {
                let _ = writeln!(out, "SER gap smile - caipi {:.2} dB", a.ser_total_db - b.ser_total_db);
            }
        }
        out
    }

    pub fn write(&self, dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
        let reports: Vec<MetricsReport> = self.outputs.iter().map(|o| o.report.clone()).collect();
        write_text(&dir.join("metrics.csv"), &MetricsReport::to_csv(&reports))?;
        write_text(&dir.join("summary.txt"), &self.summary())?;
        write_array(&dir.join("reference.smle"), self.scene.slices.data().view())?;
        let reference = self.scene.slices.magnitude();
        let top = reference.iter().cloned().fold(0.0, f64::max);
        let window = WindowMode::Fixed { lo: 0.0, hi: top };
        if cfg.export.images {
            export_mosaic(&dir.join("reference.pgm"), &reference, window)?;
        }
        for o in &self.outputs {
            let name = o.method.name();
            if let Some(l) = o.report.leakage_csv() {
                write_text(&dir.join(format!("leakage_{name}.csv")), &l)?;
            }
            let Some(r) = &o.recon else { continue };
            write_array(&dir.join(format!("recon_{name}.smle")), r.slices.data().view())?;
            let err = error_map(&self.scene.slices, &r.slices, self.error_scale)?;
            write_text(
                &dir.join(format!("error_{name}.txt")),
                &format!("scale = {}\nmax = {:e}\n", err.scale, err.values.iter().cloned().fold(0.0, f64::max)),
            )?;
            if cfg.export.images {
                export_mosaic(&dir.join(format!("recon_{name}.pgm")), &r.slices.magnitude(), window)?;
                export_mosaic(&dir.join(format!("error_{name}.pgm")), &err.scaled(), window)?;
            }
        }
        Ok(())
    }
}

/// Evaluate reconstructions of `acquired` against `scene`.
pub fn evaluate(cfg: &ExperimentConfig, scene: Scene, acquired: &Acquired, sigma: f64) -> Result<CompareOutcome> {
    let maps = recon_maps(cfg, &scene.maps, &acquired.calibration)?;
    let support = object_support(&scene.slices, cfg.metrics.support_fraction);
    let mut outputs = Vec::new();
    for &method in &cfg.compare.methods {
        let name = method.name();
        let run = reconstruct(cfg, method, acquired, &maps).and_then(|r| {
            let mut report = MetricsReport::evaluate(name, &scene.slices, &r.slices, Some(&support), &cfg.metrics.ssim)?;
            report.runtime = r.wall_time;
            if cfg.compare.leakage {
                report.leakage = Some(method_leakage(cfg, method, &scene)?);
            }
            Ok((r, report))
        });
        outputs.push(match run {
            Ok((r, report)) => MethodOutput { method, recon: Some(r), report },
            Err(e) => MethodOutput { method, recon: None, report: MetricsReport::failed(name, e.to_string()) },
        });
    }
    Ok(CompareOutcome { scene, sigma, outputs, error_scale: cfg.metrics.error_scale })
}

/// Both acquisitions on one scene with matched readout counts, then
/// reconstruction and metrics.
pub fn compare(cfg: &ExperimentConfig) -> Result<CompareOutcome> {
    cfg.validate()?;
    let scene = Scene::generate(cfg)?;
    let sigma = noise_sigma(cfg, &scene)?;
    let acquired = Acquired::simulate(cfg, &scene.slices, &scene.maps, sigma)?;
    if let (Some(a), Some(b)) = (&acquired.smile, &acquired.caipi) {
        let (na, nb) = (a.mask.as_ref().map_or(0, |m| m.count()), b.mask.as_ref().map_or(0, |m| m.count()));
        if na != nb {
            return Err(Error::Experiment(format!("readout budgets differ: {na} extended-grid lines vs {nb} CAIPI lines")));
        }
    }
    evaluate(cfg, scene, &acquired, sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::MaskKind;

    fn small() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.phantom.nx = 32;
        cfg.phantom.ny = 32;
        cfg.coils.support = [5, 5];
        cfg.acquisition.acs_lines = 16;
        cfg.export.images = false;
        cfg
    }

    #[test]
    fn full_sampling_is_leakage_free_for_extended_grid() {
        let mut cfg = small();
        cfg.acquisition.accel = 3;
        cfg.acquisition.mask = MaskKind::Full;
        cfg.acquisition.noise = 0.0;
        cfg.recon.lambda = 0.0;
        cfg.compare.methods = vec![CompareMethod::Smile];
        let out = compare(&cfg).unwrap();
        let r = out.report(CompareMethod::Smile).unwrap();
        assert!(r.max_off_diagonal_leakage().unwrap() < 1e-6);
        assert!(r.ser_total_db > 100.0, "{}", r.ser_total_db);
    }

    #[test]
    fn budgets_match_and_files_reproduce_results() {
        let cfg = small();
        let mut quick = cfg.clone();
        quick.compare.leakage = false;
        let out = compare(&quick).unwrap();
        assert!(out.failures().is_empty(), "{:?}", out.failures());
        let dir = tempfile::tempdir().unwrap();
        let scene = Scene::generate(&quick).unwrap();
        scene.write(dir.path()).unwrap();
        let back = Scene::read(dir.path(), &quick).unwrap();
        let sigma = noise_sigma(&quick, &back).unwrap();
        Acquired::simulate(&quick, &back.slices, &back.maps, sigma).unwrap().write(dir.path()).unwrap();
        let acq = Acquired::read(dir.path(), &quick).unwrap();
        let again = evaluate(&quick, back, &acq, sigma).unwrap();
        for (a, b) in out.outputs.iter().zip(&again.outputs) {
            assert_eq!(a.recon.as_ref().unwrap().slices.data(), b.recon.as_ref().unwrap().slices.data());
            assert_eq!(a.report.ser_db, b.report.ser_db);
        }
    }
}
