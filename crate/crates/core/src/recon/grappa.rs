//! GRAPPA on a uniform PE lattice with circular source indexing.

use std::ops::Range;

use faer::Mat;
use ndarray::{s, Array3};

use super::ReconConfig;
use crate::calib::AcsRegion;
use crate::error::{invalid, Error, Result};
use crate::linalg::ridge_lstsq;
use crate::model::{KSpaceData, C64};
use crate::sampling::SamplingMask;

/// Prediction weights for each missing-line offset `j = 1..R` from the
/// nearest lattice line below.
#[derive(Clone, Debug)]
pub struct GrappaKernels {
    pub accel: usize,
    /// `[E_x, E_y]`: readout taps and source lattice lines.
    pub size: [usize; 2],
    pub n_coils: usize,
    /// `(N_c E_y E_x) x N_c` per offset.
    pub weights: Vec<Mat<C64>>,
}

/// Lattice-line displacement of the first source block.
pub(crate) fn first_block(ey: usize) -> isize {
    -((ey as isize - 1) / 2)
}

fn wrap(i: isize, n: usize) -> usize {
    i.rem_euclid(n as isize) as usize
}

/// Multi-coil source vector (coil, source line, readout tap) for a target
/// on line `base + j`, circularly indexed.
pub(crate) fn gather(data: &Array3<C64>, base: isize, stride: usize, ey: usize, ex: usize, kx: isize, out: &mut [C64]) {
    let (nc, nky, nkx) = data.dim();
    let f = first_block(ey);
    let half = (ex / 2) as isize;
    let mut i = 0;
    for c in 0..nc {
        for b in 0..ey {
            let ky = wrap(base + stride as isize * (f + b as isize), nky);
            for dx in 0..ex {
                out[i] = data[[c, ky, wrap(kx - half + dx as isize, nkx)]];
                i += 1;
            }
        }
    }
}

/// Training pairs drawn only from positions whose sources and target all lie
/// inside the region (no wrap-around during training).
pub(crate) fn training_rows(
    src: &Array3<C64>,
    dst: &Array3<C64>,
    ky: Range<usize>,
    kx: Range<usize>,
    stride: usize,
    offset: usize,
    e: [usize; 2],
) -> Result<(Mat<C64>, Mat<C64>)> {
    let [ex, ey] = e;
    let nc = src.dim().0;
    let nt = dst.dim().0;
    let f = first_block(ey);
    let half = (ex / 2) as isize;
    let mut bases = Vec::new();
    for base in ky.clone() {
        let lo = base as isize + stride as isize * f;
        let hi = base as isize + stride as isize * (f + ey as isize - 1);
        let t = base + offset;
        if lo >= ky.start as isize && hi < ky.end as isize && t < ky.end {
            bases.push(base);
        }
    }
    let cols: Vec<usize> = kx
        .clone()
        .filter(|&x| x as isize - half >= kx.start as isize && x as isize - half + ex as isize <= kx.end as isize)
        .collect();
    let rows = bases.len() * cols.len();
    let ntaps = nc * ey * ex;
    if rows == 0 {
        return invalid(format!(
            "calibration region {}x{} too small for a {ey}-line x {ex}-column kernel at stride {stride}: needs at least {} lines x {ex} columns",
            ky.len(),
            kx.len(),
            stride * (ey - 1) + offset.max(1) + 1
        ));
    }
    let mut a = Mat::<C64>::zeros(rows, ntaps);
    let mut b = Mat::<C64>::zeros(rows, nt);
    let mut buf = vec![C64::new(0.0, 0.0); ntaps];
    let mut r = 0;
    for &base in &bases {
        for &x in &cols {
            gather(src, base as isize, stride, ey, ex, x as isize, &mut buf);
            for (i, v) in buf.iter().enumerate() {
                a[(r, i)] = *v;
            }
            for c in 0..nt {
                b[(r, c)] = dst[[c, base + offset, x]];
            }
            r += 1;
        }
    }
    Ok((a, b))
}

/// Fit one kernel per missing-line offset on fully sampled calibration data.
pub fn train_grappa(calib: &Array3<C64>, region: &AcsRegion, accel: usize, e: [usize; 2], lambda: f64) -> Result<GrappaKernels> {
    if accel < 1 {
        return invalid("acceleration must be >= 1");
    }
    if e.contains(&0) {
        return invalid("kernel extents must be positive");
    }
    let (nc, nky, nkx) = calib.dim();
    if region.ky.end > nky || region.kx.end > nkx {
        return invalid("calibration region outside the calibration grid");
    }
    let mut weights = Vec::new();
    for j in 1..accel {
        let (a, b) = training_rows(calib, calib, region.ky.clone(), region.kx.clone(), accel, j, e)?;
        weights.push(ridge_lstsq(&a, &b, lambda)?);
    }
    Ok(GrappaKernels { accel, size: e, n_coils: nc, weights })
}

/// Residue class of the sampled lattice, ignoring lines inside `skip`.
fn lattice_offset(mask: &SamplingMask, accel: usize, skip: Option<&Range<usize>>) -> Result<usize> {
    let n = mask.n_pe();
    if !n.is_multiple_of(accel) {
        return invalid(format!("{n} PE lines are not a whole number of R={accel} lattice periods"));
    }
    let outside = |i: &usize| skip.is_none_or(|r| !r.contains(i));
    let first = (0..n).filter(outside).find(|&i| mask.is_sampled(i));
    let off = match first {
        Some(i) => i % accel,
        None => 0,
    };
    for i in (0..n).filter(outside) {
        if mask.is_sampled(i) != (i % accel == off) {
            return invalid(format!("mask is not a uniform R={accel} lattice (line {i})"));
        }
    }
    Ok(off)
}

/// Fill every unsampled line; sampled lines pass through untouched.
pub fn apply_grappa(k: &KSpaceData, kernels: &GrappaKernels, offset: usize) -> Result<KSpaceData> {
    let (nc, nky, nkx) = k.data.dim();
    if nc != kernels.n_coils {
        return invalid(format!("kernels for {} coils applied to {nc}-coil data", kernels.n_coils));
    }
    let r = kernels.accel;
    let [ex, ey] = kernels.size;
    let ntaps = nc * ey * ex;
    let mut out = k.data.clone();
    let mut buf = vec![C64::new(0.0, 0.0); ntaps];
    for ky in 0..nky {
        if k.is_sampled(ky) {
            continue;
        }
        let j = (ky + nky - offset % r) % r;
        if j == 0 {
            return Err(Error::InvalidArgument(format!("lattice line {ky} is not sampled")));
        }
        let base = ky as isize - j as isize;
        let mut src = Mat::<C64>::zeros(nkx, ntaps);
        for kx in 0..nkx {
            gather(&k.data, base, r, ey, ex, kx as isize, &mut buf);
            for (i, v) in buf.iter().enumerate() {
                src[(kx, i)] = *v;
            }
        }
        let pred = &src * &kernels.weights[j - 1];
        let mut row = out.slice_mut(s![.., ky, ..]);
        for kx in 0..nkx {
            for c in 0..nc {
                row[[c, kx]] = pred[(kx, c)];
            }
        }
    }
    Ok(KSpaceData { data: out, grid: k.grid.clone(), mask: Some(SamplingMask::full(nky)) })
}

/// GRAPPA trained on the fully sampled ACS block of the data itself. The
/// mask must be a uniform lattice outside the ACS.
pub fn grappa_uniform(k: &KSpaceData, acs: &AcsRegion, accel: usize, cfg: &ReconConfig) -> Result<KSpaceData> {
    let n = k.n_pe();
    let mask = k.mask.clone().unwrap_or_else(|| SamplingMask::full(n));
    if accel == 1 {
        return Ok(k.clone());
    }
    let off = lattice_offset(&mask, accel, Some(&acs.ky))?;
    if let Some(hole) = acs.ky.clone().find(|&i| !mask.is_sampled(i)) {
        return invalid(format!("ACS line {hole} is not sampled"));
    }
    let kernels = train_grappa(&k.data, acs, accel, cfg.kernel, cfg.lambda)?;
    apply_grappa(k, &kernels, off)
}

/// GRAPPA trained on separately acquired calibration k-space.
pub fn grappa_with_calibration(
    k: &KSpaceData,
    calib: &Array3<C64>,
    acs: &AcsRegion,
    accel: usize,
    e: [usize; 2],
    lambda: f64,
) -> Result<KSpaceData> {
    if accel == 1 {
        return Ok(k.clone());
    }
    if calib.dim() != k.data.dim() {
        return invalid("calibration and data grids differ");
    }
    let mask = k.mask.clone().unwrap_or_else(|| SamplingMask::full(k.n_pe()));
    let off = lattice_offset(&mask, accel, None)?;
    let kernels = train_grappa(calib, acs, accel, e, lambda)?;
    apply_grappa(k, &kernels, off)
}
