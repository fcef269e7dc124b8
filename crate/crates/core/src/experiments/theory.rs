use std::fmt::Write as _;

use ndarray::Array3;
use rayon::prelude::*;

use crate::calib::{build_calibration_matrix, counting_bound_holds, AcsRegion, KernelSizeSpec};
use crate::config::TheoryConfig;
use crate::error::{invalid, Result};
use crate::model::{assemble_extended, smile_forward, CoilMapSet, KSpaceData, Placement, SliceStack};
use crate::phantom::{make_coil_maps, CoilSpec};
use crate::rng::{complex_normal, derive_seed, rng_from};
use crate::sampling::SamplingMask;

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub n_coils: usize,
    /// `[C_x, C_y]`
    pub support: [usize; 2],
    /// `[E_x, E_y]`
    pub extent: [usize; 2],
    pub holds: bool,
    pub unknowns: usize,
    pub equations: usize,
    pub min_ratio: f64,
    pub kernel_found: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub threshold: f64,
}

impl SweepTable {
    /// Rows where the counting bound holds but no kernel was found.
    pub fn violations(&self) -> Vec<&SweepRow> {
        self.rows.iter().filter(|r| r.holds && !r.kernel_found).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("n_coils,c_x,c_y,e_x,e_y,unknowns,equations,bound_holds,min_singular_ratio,kernel_found\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{:.6e},{}",
                r.n_coils,
                r.support[0],
                r.support[1],
                r.extent[0],
                r.extent[1],
                r.unknowns,
                r.equations,
                r.holds,
                r.min_ratio,
                r.kernel_found
            );
        }
        out
    }

    pub fn summary(&self) -> String {
        let holds = self.rows.iter().filter(|r| r.holds).count();
        let found = self.rows.iter().filter(|r| r.kernel_found).count();
        let extra = self.rows.iter().filter(|r| !r.holds && r.kernel_found).count();
        format!(
            "rows {}\nbound holds {holds}\nkernel found {found}\nfound without the bound {extra}\nviolations {}\nthreshold {:e}\n",
            self.rows.len(),
            self.violations().len(),
            self.threshold
        )
    }
}

/// Random complex content on every pixel: no structure for a kernel to
/// exploit beyond the coil maps.
fn random_content(mb: usize, ny: usize, nx: usize, seed: u64) -> Result<SliceStack> {
    let mut rng = rng_from(seed, 0x636f_6e74);
    SliceStack::new(Array3::from_shape_simple_fn((mb, ny, nx), || complex_normal(&mut rng, 1.0)))
}

/// Noiseless fully sampled k-space of random content under `maps` placed
/// with `extension` on the PE axis.
fn synthetic_kspace(maps: &CoilMapSet, extension: usize, seed: u64) -> Result<KSpaceData> {
    let x = random_content(maps.mb(), maps.ny(), maps.nx(), seed)?;
    let placement = Placement::uniform(maps.mb(), maps.ny(), extension)?;
    let ext = assemble_extended(&x, maps, &placement)?;
    smile_forward(&ext, &SamplingMask::full(placement.rows()), 0.0, 0)
}

/// Smallest-to-largest singular value ratio of the calibration matrix for
/// every (coil count, support, kernel extent) combination.
pub fn theory_sweep(cfg: &TheoryConfig, seed: u64) -> Result<SweepTable> {
    crate::calib::check_sweep(&cfg.n_coils, &cfg.supports, &cfg.extents, cfg.grid)?;
    let mut cases = Vec::new();
    for &nc in &cfg.n_coils {
        for &cx in &cfg.supports {
            for &cy in &cfg.supports {
                cases.push((nc, [cx, cy]));
            }
        }
    }
    let grid = cfg.grid;
    let per_case: Vec<Result<Vec<SweepRow>>> = cases
        .par_iter()
        .enumerate()
        .map(|(i, &(nc, c))| {
            let spec = CoilSpec { n_coils: nc, support: c, similarity: 0.0, seed: derive_seed(seed, i as u64) };
            let maps = make_coil_maps(&spec, 1, grid, grid)?;
            let k = synthetic_kspace(&maps, 1, derive_seed(seed, 1000 + i as u64))?;
            let region = AcsRegion::full(grid, grid);
            let mut rows = Vec::new();
            for &ey in &cfg.extents {
                for &ex in &cfg.extents {
                    let ks = KernelSizeSpec::single_slice(c, nc, [ex, ey]);
                    let ratio = build_calibration_matrix(&k, &region, [ex, ey])?.min_singular_ratio()?;
                    rows.push(SweepRow {
                        n_coils: nc,
                        support: c,
                        extent: [ex, ey],
                        holds: counting_bound_holds(&ks),
                        unknowns: ks.unknowns(),
                        equations: ks.equations(),
                        min_ratio: ratio,
                        kernel_found: ratio <= cfg.threshold,
                    });
                }
            }
            Ok(rows)
        })
        .collect();
    let mut rows = Vec::new();
    for r in per_case {
        rows.extend(r?);
    }
    Ok(SweepTable { rows, threshold: cfg.threshold })
}

/// Smallest `E_y` reaching the residual threshold on a single-slice grid
/// and on the extended grid of `extension` slices with identical maps.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalingOutcome {
    pub e_x: usize,
    pub single: Option<usize>,
    pub extended: Option<usize>,
    /// `(E_y, ratio)` per probed extent.
    pub single_ratios: Vec<(usize, f64)>,
    pub extended_ratios: Vec<(usize, f64)>,
}

impl ScalingOutcome {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("grid,e_x,e_y,min_singular_ratio\n");
        for (name, rows) in [("single", &self.single_ratios), ("extended", &self.extended_ratios)] {
            for (ey, r) in rows {
                let _ = writeln!(out, "{name},{},{ey},{r:.6e}", self.e_x);
            }
        }
        out
    }
}

/// Smallest extent reaching the threshold, and every `(E_y, ratio)` probed.
type ExtentSearch = (Option<usize>, Vec<(usize, f64)>);

fn minimal_extent(k: &KSpaceData, e_x: usize, max_ey: usize, threshold: f64) -> Result<ExtentSearch> {
    let region = AcsRegion::full(k.n_pe(), k.n_ro());
    let mut ratios = Vec::new();
    for ey in 1..=max_ey {
        let r = build_calibration_matrix(k, &region, [e_x, ey])?.min_singular_ratio()?;
        ratios.push((ey, r));
        if r <= threshold {
            return Ok((Some(ey), ratios));
        }
    }
    Ok((None, ratios))
}

pub fn kernel_pe_scaling(
    coils: &CoilSpec,
    extension: usize,
    grid: usize,
    e_x: usize,
    max_ey: usize,
    threshold: f64,
    seed: u64,
) -> Result<ScalingOutcome> {
    if extension < 1 {
        return invalid("extension must be at least 1");
    }
    let spec = CoilSpec { similarity: 1.0, ..coils.clone() };
    let maps = make_coil_maps(&spec, extension, grid, grid)?;
    let single_maps = maps.select_slice(0);
    let k1 = synthetic_kspace(&single_maps, 1, derive_seed(seed, 1))?;
    let kn = synthetic_kspace(&maps, extension, derive_seed(seed, 2))?;
    let (single, single_ratios) = minimal_extent(&k1, e_x, max_ey, threshold)?;
    let (extended, extended_ratios) = minimal_extent(&kn, e_x, max_ey, threshold)?;
    Ok(ScalingOutcome { e_x, single, extended, single_ratios, extended_ratios })
}
