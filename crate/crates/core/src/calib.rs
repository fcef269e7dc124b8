//! Kernel-size bounds, calibration matrices, nullspace kernels and
//! ACS-based coil map estimates.

use std::ops::Range;

use faer::Mat;
use ndarray::{s, Array2, Array3, Array4, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fft::Fft2c;
use crate::linalg::{right_singular, singular_values, to_mat};
use crate::model::{CoilMapSet, Grid, KSpaceData, C64, ZERO};

/// Support and kernel extents for the counting bound. `d_y` is the PE
/// support on the grid in use (`C_y` on a single-slice grid).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelSizeSpec {
    pub c_x: usize,
    pub c_y: usize,
    pub d_y: usize,
    pub n_coils: usize,
    pub e_x: usize,
    pub e_y: usize,
}

impl KernelSizeSpec {
    pub fn single_slice(c: [usize; 2], n_coils: usize, e: [usize; 2]) -> Self {
        Self { c_x: c[0], c_y: c[1], d_y: c[1], n_coils, e_x: e[0], e_y: e[1] }
    }

    /// PE support grows to `n * C_y` on an `n`-times extended grid.
    pub fn extended(c: [usize; 2], n: usize, n_coils: usize, e: [usize; 2]) -> Self {
        Self { d_y: n * c[1], ..Self::single_slice(c, n_coils, e) }
    }

    pub fn unknowns(&self) -> usize {
        self.e_x * self.e_y * self.n_coils
    }

    pub fn equations(&self) -> usize {
        (self.c_x + self.e_x - 1) * (self.d_y + self.e_y - 1)
    }
}

/// `E_x E_y N_c > (C_x + E_x - 1)(D_y + E_y - 1)`: more kernel taps than the
/// support of the kernel-map convolution, so an annihilating kernel exists.
pub fn counting_bound_holds(spec: &KernelSizeSpec) -> bool {
    spec.unknowns() > spec.equations()
}

/// Real-valued kernel extent minimizing the tap count subject to the
/// bound: `(1 + sqrt(N_c)) / (N_c - 1) * [C_x - 1, C_y - 1]`.
pub fn optimal_kernel_size(c_x: usize, c_y: usize, n_coils: usize) -> Result<[f64; 2]> {
    if n_coils < 2 {
        return invalid(format!("optimal kernel size is undefined for {n_coils} coil(s)"));
    }
    if c_x < 2 || c_y < 2 {
        return invalid(format!("support [{c_x}, {c_y}] must be at least 2 in each direction"));
    }
    let f = (1.0 + (n_coils as f64).sqrt()) / (n_coils as f64 - 1.0);
    Ok([f * (c_x - 1) as f64, f * (c_y - 1) as f64])
}

/// Integer kernel size: the real optimum rounded up, at least 1.
pub fn default_kernel_size(c_x: usize, c_y: usize, n_coils: usize) -> Result<[usize; 2]> {
    let [x, y] = optimal_kernel_size(c_x, c_y, n_coils)?;
    Ok([(x.ceil() as usize).max(1), (y.ceil() as usize).max(1)])
}

/// Rectangle of fully sampled k-space, in array indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcsRegion {
    pub ky: Range<usize>,
    pub kx: Range<usize>,
}

impl AcsRegion {
    /// Centered block of `lines x cols` on an `n_ky x n_kx` grid.
    pub fn centered(n_ky: usize, n_kx: usize, lines: usize, cols: usize) -> Result<Self> {
        if lines > n_ky || cols > n_kx || lines == 0 || cols == 0 {
            return invalid(format!("ACS {lines}x{cols} does not fit a {n_ky}x{n_kx} grid"));
        }
        let y0 = n_ky / 2 - lines / 2;
        let x0 = n_kx / 2 - cols / 2;
        Ok(Self { ky: y0..y0 + lines, kx: x0..x0 + cols })
    }

    pub fn full(n_ky: usize, n_kx: usize) -> Self {
        Self { ky: 0..n_ky, kx: 0..n_kx }
    }

    pub fn lines(&self) -> usize {
        self.ky.len()
    }

    pub fn cols(&self) -> usize {
        self.kx.len()
    }

    fn check(&self, k: &KSpaceData) -> Result<()> {
        if self.ky.end > k.n_pe() || self.kx.end > k.n_ro() || self.ky.is_empty() || self.kx.is_empty() {
            return invalid(format!("ACS {:?}x{:?} outside the {}x{} k-space grid", self.ky, self.kx, k.n_pe(), k.n_ro()));
        }
        if let Some(hole) = self.ky.clone().find(|&ky| !k.is_sampled(ky)) {
            return invalid(format!("ACS line {hole} is not sampled"));
        }
        Ok(())
    }
}

/// Sliding-window matrix over an ACS region.
///
/// One row per window position fully inside the region (ky-major), one
/// column per kernel tap ordered coil-major, then ky, then kx.
#[derive(Clone, Debug, PartialEq)]
pub struct CalibrationMatrix {
    pub data: Array2<C64>,
    /// `[E_x, E_y]`
    pub kernel: [usize; 2],
    pub n_coils: usize,
}

impl CalibrationMatrix {
    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn cols(&self) -> usize {
        self.data.ncols()
    }

    /// Smallest over largest singular value; 0 when there are more taps than
    /// windows.
    pub fn min_singular_ratio(&self) -> Result<f64> {
        if self.rows() < self.cols() {
            return Ok(0.0);
        }
        let sv = singular_values(&to_mat(&self.data))?;
        let max = sv[0];
        Ok(if max > 0.0 { sv[sv.len() - 1] / max } else { 0.0 })
    }
}

/// Extract every `E_y x E_x` multi-coil window of `data` inside the region.
pub fn window_matrix(data: &Array3<C64>, ky: Range<usize>, kx: Range<usize>, e: [usize; 2]) -> Result<Array2<C64>> {
    let [ex, ey] = e;
    if ex == 0 || ey == 0 {
        return invalid("kernel extents must be positive");
    }
    if ky.len() < ey || kx.len() < ex {
        return invalid(format!(
            "region {}x{} too small for kernel {ey}x{ex}: needs at least {ey} lines x {ex} columns",
            ky.len(),
            kx.len()
        ));
    }
    let nc = data.dim().0;
    let (py, px) = (ky.len() - ey + 1, kx.len() - ex + 1);
    let mut m = Array2::zeros((py * px, nc * ey * ex));
    for wy in 0..py {
        for wx in 0..px {
            let mut row = m.row_mut(wy * px + wx);
            let mut col = 0;
            for c in 0..nc {
                for dy in 0..ey {
                    for dx in 0..ex {
                        row[col] = data[[c, ky.start + wy + dy, kx.start + wx + dx]];
                        col += 1;
                    }
                }
            }
        }
    }
    Ok(m)
}

pub fn build_calibration_matrix(k: &KSpaceData, region: &AcsRegion, e: [usize; 2]) -> Result<CalibrationMatrix> {
    region.check(k)?;
    let data = window_matrix(&k.data, region.ky.clone(), region.kx.clone(), e)?;
    Ok(CalibrationMatrix { data, kernel: e, n_coils: k.n_coils() })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Annihilating,
    Prediction,
}

/// Shift-invariant multi-coil kernels, each `(coil, E_y, E_x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelSet {
    pub kernels: Vec<Array3<C64>>,
    pub kind: KernelKind,
    /// Training residual per kernel (singular value for annihilating kernels).
    pub residuals: Vec<f64>,
    /// Largest singular value of the training matrix.
    pub sigma_max: f64,
    /// Coil whose center tap is pinned to -1, per kernel.
    pub designated: Vec<usize>,
    /// `[E_x, E_y]`
    pub size: [usize; 2],
    pub n_coils: usize,
}

impl KernelSet {
    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    /// Kernel taps stacked as `(kernel, coil, E_y, E_x)`.
    pub fn stacked(&self) -> Array4<C64> {
        let [ex, ey] = self.size;
        let mut out = Array4::zeros((self.kernels.len(), self.n_coils, ey, ex));
        for (i, k) in self.kernels.iter().enumerate() {
            out.index_axis_mut(Axis(0), i).assign(k);
        }
        out
    }
}

/// Center tap of an extent, matching the FFT center convention.
pub fn center_tap(e: [usize; 2]) -> (usize, usize) {
    (e[1] / 2, e[0] / 2)
}

/// Right singular vectors with singular value at most `threshold * sigma_max`
/// (columns past the row count count as zero), each scaled so the coil with
/// the largest center tap has center coefficient -1.
pub fn estimate_kernels(m: &CalibrationMatrix, threshold: f64) -> Result<KernelSet> {
    if m.rows() == 0 || m.cols() == 0 {
        return invalid("calibration matrix is empty");
    }
    let (sv, v) = right_singular(&to_mat(&m.data))?;
    let sigma_max = sv[0];
    let [ex, ey] = m.kernel;
    let (cy, cx) = center_tap(m.kernel);
    let mut set = KernelSet {
        kernels: Vec::new(),
        kind: KernelKind::Annihilating,
        residuals: Vec::new(),
        sigma_max,
        designated: Vec::new(),
        size: m.kernel,
        n_coils: m.n_coils,
    };
    for (j, &s) in sv.iter().enumerate() {
        if s > threshold * sigma_max {
            continue;
        }
        let mut k = Array3::from_shape_fn((m.n_coils, ey, ex), |(c, dy, dx)| v[(c * ey * ex + dy * ex + dx, j)]);
        let coil = (0..m.n_coils).max_by(|&a, &b| k[[a, cy, cx]].norm().total_cmp(&k[[b, cy, cx]].norm())).unwrap();
        let pivot = k[[coil, cy, cx]];
        if pivot.norm() > 0.0 {
            let scale = C64::new(-1.0, 0.0) / pivot;
            k.mapv_inplace(|t| t * scale);
            k[[coil, cy, cx]] = C64::new(-1.0, 0.0);
        }
        set.kernels.push(k);
        set.residuals.push(s);
        set.designated.push(coil);
    }
    Ok(set)
}

/// `|W a| / (|a| |k|)` where `W` is the window matrix of the whole grid and
/// `a` the flattened kernel.
pub fn annihilation_residual(k: &KSpaceData, kernel: &Array3<C64>) -> Result<f64> {
    let (_, ey, ex) = kernel.dim();
    let w = window_matrix(&k.data, 0..k.n_pe(), 0..k.n_ro(), [ex, ey])?;
    let a: Vec<C64> = kernel.iter().copied().collect();
    let wm = to_mat(&w);
    let av = Mat::from_fn(a.len(), 1, |i, _| a[i]);
    let r = (&wm * &av).norm_l2();
    let kn = k.data.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let an = av.norm_l2();
    Ok(r / (an * kn))
}

fn hann(len: usize) -> Vec<f64> {
    (0..len).map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * (i + 1) as f64 / (len + 1) as f64).cos()).collect()
}

/// Low-resolution maps from the ACS block: apodize along truncated
/// directions, zero-fill, inverse transform and normalize each pixel to
/// unit sum-of-squares. Extended-grid data are cut back into slices at the
/// placement offsets.
pub fn estimate_coil_maps_from_acs(k: &KSpaceData, region: &AcsRegion) -> Result<CoilMapSet> {
    region.check(k)?;
    let (nc, nky, nkx) = k.data.dim();
    let wy = if region.lines() < nky { hann(region.lines()) } else { vec![1.0; nky] };
    let wx = if region.cols() < nkx { hann(region.cols()) } else { vec![1.0; nkx] };
    let plan = Fft2c::new(nky, nkx);
    let mut img = Array3::zeros((nc, nky, nkx));
    for c in 0..nc {
        let mut buf = Array2::from_elem((nky, nkx), ZERO);
        for (iy, ky) in region.ky.clone().enumerate() {
            for (ix, kx) in region.kx.clone().enumerate() {
                buf[[ky, kx]] = k.data[[c, ky, kx]] * (wy[iy] * wx[ix]);
            }
        }
        plan.inverse_inplace(buf.view_mut());
        img.index_axis_mut(Axis(0), c).assign(&buf);
    }
    let sos = img.map_axis(Axis(0), |l| l.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt());
    let floor = sos.iter().cloned().fold(0.0, f64::max) * 1e-12;
    for c in 0..nc {
        let mut ci = img.index_axis_mut(Axis(0), c);
        ci.zip_mut_with(&sos, |v, &n| *v = if n > floor { *v / n } else { ZERO });
    }
    let support = [region.cols(), region.lines()];
    match &k.grid {
        Grid::Extended { placement } => {
            let mut maps = Array4::zeros((nc, placement.mb(), placement.n_y, nkx));
            for (s, &o) in placement.offsets.iter().enumerate() {
                maps.slice_mut(s![.., s, .., ..]).assign(&img.slice(s![.., o..o + placement.n_y, ..]));
            }
            CoilMapSet::new(maps, support)
        }
        Grid::Collapsed { .. } => CoilMapSet::new(img.insert_axis(Axis(1)), support),
    }
}

/// Validate a sweep range for the kernel-size study.
pub fn check_sweep(n_coils: &[usize], supports: &[usize], extents: &[usize], grid: usize) -> Result<()> {
    if n_coils.is_empty() || supports.is_empty() || extents.is_empty() {
        return Err(Error::InvalidArgument("sweep ranges must be non-empty".into()));
    }
    if let Some(&c) = supports.iter().find(|&&c| c < 1 || c > grid) {
        return invalid(format!("support {c} outside [1, {grid}]"));
    }
    if let Some(&e) = extents.iter().find(|&&e| e < 1 || e > grid) {
        return invalid(format!("kernel extent {e} outside [1, {grid}]"));
    }
    if n_coils.iter().any(|&n| n < 1) {
        return invalid("coil counts must be positive");
    }
    Ok(())
}
