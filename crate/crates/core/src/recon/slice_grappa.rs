//! Slice-GRAPPA separation of CAIPI data with kernels trained on separately
//! acquired single-slice calibration k-space.

use std::time::Instant;

use faer::Mat;
use ndarray::{s, Array3, Array4, Axis};

use super::grappa::{gather, grappa_with_calibration, training_rows};
use super::{ReconConfig, ReconResult};
use crate::calib::AcsRegion;
use crate::error::{invalid, Result};
use crate::fft::Fft2c;
use crate::linalg::ridge_lstsq;
use crate::model::{CoilMapSet, Grid, KSpaceData, Placement, C64};
use crate::phantom::matched_filter;
use crate::sampling::SamplingMask;

pub struct SliceGrappaOutput {
    pub result: ReconResult,
    /// Separated (and in-plane filled) k-space per slice, `(coil, ky, kx)`.
    pub slice_kspace: Vec<Array3<C64>>,
}

/// Separate collapsed CAIPI k-space into slices.
///
/// Per slice, one kernel maps collapsed neighbourhoods (sampled lines at
/// the in-plane stride) to that slice's phase-modulated k-space on the
/// center line. Training pairs are synthesized from the calibration data.
/// With in-plane undersampling the separated slices are then filled by
/// GRAPPA trained on the same calibration. Images are combined with
/// `maps` by matched filtering.
pub fn slice_grappa(
    caipi: &KSpaceData,
    calibration: &[KSpaceData],
    acs: &AcsRegion,
    maps: &CoilMapSet,
    cfg: &ReconConfig,
) -> Result<SliceGrappaOutput> {
    cfg.validate()?;
    let start = Instant::now();
    let (n_y, phases) = match &caipi.grid {
        Grid::Collapsed { n_y, phases } => (*n_y, phases),
        Grid::Extended { .. } => return invalid("slice-GRAPPA needs collapsed CAIPI k-space"),
    };
    let mb = phases.mb();
    let (nc, nky, nkx) = caipi.data.dim();
    if calibration.len() != mb {
        return invalid(format!("{} calibration sets for {mb} slices", calibration.len()));
    }
    if calibration.iter().any(|c| c.data.dim() != (nc, nky, nkx)) {
        return invalid("calibration grids must match the collapsed grid");
    }
    if acs.ky.end > nky || acs.kx.end > nkx {
        return invalid("calibration region outside the grid");
    }
    let mask = caipi.mask.clone().unwrap_or_else(|| SamplingMask::full(n_y));
    let (stride, _) = if mask.count() == mask.n_pe() {
        (1, 0)
    } else {
        mask.uniform_offset().ok_or_else(|| crate::Error::InvalidArgument("in-plane mask must be uniform".into()))?
    };

    // phase-modulated calibration per slice and their collapsed sum
    let mut shifted = Vec::with_capacity(mb);
    let mut collapsed = Array3::<C64>::zeros((nc, nky, nkx));
    for (s, cal) in calibration.iter().enumerate() {
        let mut t = cal.data.clone();
        for m in 0..nky {
            let f = phases.factor(m, s);
            t.slice_mut(s![.., m, ..]).mapv_inplace(|v| v * f);
        }
        collapsed += &t;
        shifted.push(t);
    }

    let [ex, ey] = cfg.kernel;
    let ntaps = nc * ey * ex;
    let mut slice_kspace = Vec::with_capacity(mb);
    let mut buf = vec![C64::new(0.0, 0.0); ntaps];
    for (s, target) in shifted.iter().enumerate() {
        // offset 0: the target sits on a source line (the center block)
        let (a, b) = training_rows(&collapsed, target, acs.ky.clone(), acs.kx.clone(), stride, 0, [ex, ey])?;
        let w = ridge_lstsq(&a, &b, cfg.lambda)?;
        let mut out = Array3::<C64>::zeros((nc, nky, nkx));
        for m in (0..nky).filter(|&m| mask.is_sampled(m)) {
            let mut src = Mat::<C64>::zeros(nkx, ntaps);
            for kx in 0..nkx {
                gather(&caipi.data, m as isize, stride, ey, ex, kx as isize, &mut buf);
                for (i, v) in buf.iter().enumerate() {
                    src[(kx, i)] = *v;
                }
            }
            let pred = &src * &w;
            let unshift = phases.factor(m, s).conj();
            for kx in 0..nkx {
                for c in 0..nc {
                    out[[c, m, kx]] = pred[(kx, c)] * unshift;
                }
            }
        }
        let single = KSpaceData {
            data: out,
            grid: Grid::Extended { placement: Placement::uniform(1, n_y, 1)? },
            mask: Some(mask.clone()),
        };
        let filled = if stride > 1 {
            grappa_with_calibration(&single, &calibration[s].data, acs, stride, cfg.inplane_kernel, cfg.inplane_lambda)?
        } else {
            single
        };
        slice_kspace.push(filled.data);
    }

    let plan = Fft2c::new(nky, nkx);
    let mut coil_images = Array4::<C64>::zeros((nc, mb, nky, nkx));
    for (s, k) in slice_kspace.iter().enumerate() {
        for c in 0..nc {
            let mut img = k.index_axis(Axis(0), c).to_owned();
            plan.inverse_inplace(img.view_mut());
            coil_images.slice_mut(s![c, s, .., ..]).assign(&img);
        }
    }
    let slices = matched_filter(&coil_images, maps)?;
    Ok(SliceGrappaOutput {
        result: ReconResult {
            slices,
            iterations: 0,
            residual: 0.0,
            residual_history: Vec::new(),
            converged: true,
            wall_time: start.elapsed(),
            warnings: Vec::new(),
        },
        slice_kspace,
    })
}
