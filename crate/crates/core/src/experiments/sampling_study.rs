use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array3;

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::io::{export_mosaic, write_masks, write_text, WindowMode};
use crate::metrics::{g_factor_with_reference, object_support, reference_noise_std, GFactorMap, ReplicaGeometry};
use crate::model::{CoilMapSet, Grid, Placement, SliceStack};
use crate::phantom::{make_coil_maps, make_phantom, CoilSpec, PhantomSpec};
use crate::recon::ColumnSense;
use crate::rng::derive_seed;
use crate::sampling::{alias_lobes, ga_optimize, mask_psf, peak_count, GaConfig, GaOutcome, SamplingMask};

/// Probe error above which a pixel counts as undetermined.
pub const UNRESOLVED_THRESHOLD: f64 = 1e-3;

const FITNESS_NOISE: u64 = 0x6669_746e;
const MAP_NOISE: u64 = 0x676d_6170;
const REFERENCE_NOISE: u64 = 0x7265_6673;

/// Everything needed to score a mask on the study geometry.
pub struct GFactorBench {
    pub slices: SliceStack,
    pub maps: CoilMapSet,
    pub grid: Grid,
    pub support: Array3<bool>,
    pub reference_std: Array3<f64>,
    pub seed: u64,
}

impl GFactorBench {
    pub fn new(
        phantom: &PhantomSpec,
        coils: &CoilSpec,
        extension: usize,
        support_fraction: f64,
        reference_trials: usize,
        seed: u64,
    ) -> Result<Self> {
        let slices = make_phantom(phantom)?;
        let maps = make_coil_maps(coils, phantom.mb, phantom.ny, phantom.nx)?;
        let grid = Grid::Extended { placement: Placement::uniform(phantom.mb, phantom.ny, extension)? };
        let support = object_support(&slices, support_fraction);
        let full = ColumnSense::new(&maps, &grid, &SamplingMask::full(grid.pe_lines()), 0.0)?;
        let geom = ReplicaGeometry { grid: grid.clone(), n_coils: maps.n_coils(), n_ro: maps.nx() };
        let reference_std =
            reference_noise_std(|k| full.solve(k), &geom, support.dim(), reference_trials, derive_seed(seed, REFERENCE_NOISE))?;
        Ok(Self { slices, maps, grid, support, reference_std, seed })
    }

    /// Study geometry from a config.
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        let s = &cfg.sampling;
        let phantom = PhantomSpec { nx: s.nx, ny: s.ny, ..cfg.phantom_spec() };
        let coils = CoilSpec { similarity: s.similarity, ..cfg.coils.clone() };
        Self::new(&phantom, &coils, cfg.acquisition.extension, cfg.metrics.support_fraction, cfg.metrics.g_trials, cfg.seed)
    }

    pub fn n_pe(&self) -> usize {
        self.grid.pe_lines()
    }

    /// g-factor map of `mask`; undetermined pixels are infinite.
    pub fn g_map(&self, mask: &SamplingMask, trials: usize, stream: u64) -> Result<GFactorMap> {
        let solver = ColumnSense::new(&self.maps, &self.grid, mask, 0.0)?;
        let unresolved = solver.unresolved(UNRESOLVED_THRESHOLD, self.seed);
        let geom = ReplicaGeometry { grid: self.grid.clone(), n_coils: self.maps.n_coils(), n_ro: self.maps.nx() };
        g_factor_with_reference(
            |k| solver.solve(k),
            &self.reference_std,
            &geom,
            mask,
            &self.support,
            Some(&unresolved),
            trials,
            derive_seed(self.seed, stream),
        )
    }

    /// Mean g over the support; failures score `+inf`.
    pub fn fitness(&self, mask: &SamplingMask, trials: usize) -> f64 {
        self.g_map(mask, trials, FITNESS_NOISE).map_or(f64::INFINITY, |g| g.mean())
    }
}

/// The standard families at one acceleration, in a fixed order.
pub fn seed_masks(n_pe: usize, accel: usize, seed: u64) -> Result<Vec<(String, SamplingMask)>> {
    Ok(vec![
        ("uniform".to_string(), SamplingMask::uniform(n_pe, accel, 0)?),
        ("poisson".to_string(), SamplingMask::poisson(n_pe, accel, derive_seed(seed, 0x706f))?),
        ("cava".to_string(), SamplingMask::cava(n_pe, accel, 0, derive_seed(seed, 0x6361))?),
        ("random".to_string(), SamplingMask::random(n_pe, accel, derive_seed(seed, 0x7261))?),
    ])
}

/// GA over masks at one acceleration, seeded with the standard families.
pub fn optimize_mask(bench: &GFactorBench, accel: usize, ga: &GaConfig, seed: u64) -> Result<GaOutcome> {
    let seeds: Vec<SamplingMask> = seed_masks(bench.n_pe(), accel, seed)?.into_iter().map(|(_, m)| m).collect();
    let cfg = GaConfig { seed: derive_seed(derive_seed(seed, accel as u64), ga.seed), ..ga.clone() };
    ga_optimize(&cfg, |m| bench.fitness(m, ga.fitness_trials), &seeds)
}

#[derive(Clone, Debug)]
pub struct StudyEntry {
    pub accel: usize,
    pub family: String,
    pub mask: SamplingMask,
    pub psf: Vec<f64>,
    pub peaks: usize,
    pub alias_above: usize,
    pub alias_amplitudes: Vec<f64>,
    pub max_sidelobe: f64,
    pub g: GFactorMap,
}

pub struct StudyOutcome {
    pub entries: Vec<StudyEntry>,
    pub ga: Vec<(usize, GaOutcome)>,
    pub psf_threshold: f64,
}

impl StudyOutcome {
    pub fn entry(&self, accel: usize, family: &str) -> Option<&StudyEntry> {
        self.entries.iter().find(|e| e.accel == accel && e.family == family)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("accel,family,lines,g_mean,g_max,unresolved,psf_peaks,alias_lobes_above,max_sidelobe\n");
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{},{},{},{:.6},{:.6},{},{},{},{:.6}",
                e.accel,
                e.family,
                e.mask.count(),
                e.g.mean(),
                e.g.max(),
                e.g.unresolved(),
                e.peaks,
                e.alias_above,
                e.max_sidelobe
            );
        }
        out
    }

    pub fn ga_csv(&self) -> String {
        let mut out = String::from("accel,generation,best_fitness\n");
        for (r, o) in &self.ga {
            for (g, f) in o.trace.iter().enumerate() {
                let _ = writeln!(out, "{r},{g},{f:.6}");
            }
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        for (r, o) in &self.ga {
            let best_seed = o.seed_fitness.iter().cloned().fold(f64::INFINITY, f64::min);
            let _ =
                writeln!(out, "R={r}: GA best {:.4}, best seed {:.4}, evaluations {}", o.best_fitness, best_seed, o.evaluations);
        }
        out
    }

    pub fn write(&self, dir: &Path, images: bool) -> Result<()> {
        for sub in ["masks", "psf", "gfactor"] {
            fs::create_dir_all(dir.join(sub))?;
        }
        write_text(&dir.join("study.csv"), &self.to_csv())?;
        write_text(&dir.join("ga_trace.csv"), &self.ga_csv())?;
        write_text(&dir.join("summary.txt"), &self.summary())?;
        for e in &self.entries {
            let stem = format!("R{}_{}", e.accel, e.family);
            write_masks(&dir.join("masks").join(format!("{stem}.txt")), std::slice::from_ref(&e.mask))?;
            let mut psf = String::from("line,magnitude\n");
            for (i, v) in e.psf.iter().enumerate() {
                let _ = writeln!(psf, "{i},{v:.6e}");
            }
            write_text(&dir.join("psf").join(format!("{stem}.csv")), &psf)?;
            if images {
                let finite_max = e.g.values.iter().filter(|v| v.is_finite()).cloned().fold(1.0, f64::max);
                let shown = e.g.values.mapv(|v| if v.is_finite() { v } else { finite_max });
                export_mosaic(
                    &dir.join("gfactor").join(format!("{stem}.pgm")),
                    &shown,
                    WindowMode::Fixed { lo: 0.0, hi: finite_max },
                )?;
            }
        }
        Ok(())
    }
}

fn entry(
    bench: &GFactorBench,
    accel: usize,
    family: &str,
    mask: SamplingMask,
    trials: usize,
    threshold: f64,
) -> Result<StudyEntry> {
    let psf = mask_psf(&mask);
    let lobes = alias_lobes(&psf, accel, threshold);
    Ok(StudyEntry {
        accel,
        family: family.to_string(),
        peaks: peak_count(&psf, threshold),
        alias_above: lobes.above,
        alias_amplitudes: lobes.amplitudes,
        max_sidelobe: lobes.max_sidelobe,
        psf: psf.iter().map(|v| v.norm()).collect(),
        g: bench.g_map(&mask, trials, MAP_NOISE)?,
        mask,
    })
}

/// Masks, PSFs and g-factor maps for every configured acceleration, plus
/// GA-optimized masks where requested.
pub fn sampling_study(cfg: &ExperimentConfig) -> Result<StudyOutcome> {
    cfg.validate()?;
    let bench = GFactorBench::from_config(cfg)?;
    let s = &cfg.sampling;
    let trials = cfg.metrics.g_trials;
    let mut entries = Vec::new();
    let mut ga = Vec::new();
    for &r in &s.accels {
        for (family, mask) in seed_masks(bench.n_pe(), r, cfg.seed)? {
            entries.push(entry(&bench, r, &family, mask, trials, s.psf_threshold)?);
        }
        if s.ga_accels.contains(&r) {
            let out = optimize_mask(&bench, r, &s.ga, cfg.seed)?;
            entries.push(entry(&bench, r, "ga", out.best.clone(), trials, s.psf_threshold)?);
            ga.push((r, out));
        }
    }
    Ok(StudyOutcome { entries, ga, psf_threshold: s.psf_threshold })
}
