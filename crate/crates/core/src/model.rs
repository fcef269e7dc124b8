//! Forward-model vocabulary: slice stacks, coil maps, extended-FOV assembly,
//! and the SMILE / CAIPI encodings.
//!
//! Array layouts:
//! - slice stacks are `(slice, y, x)`
//! - coil maps are `(coil, slice, y, x)`
//! - coil images and k-space are `(coil, row, col)` with rows along PE.

use std::f64::consts::PI;

use ndarray::{s, Array2, Array3, Array4, ArrayView2, Axis};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fft::Fft2c;
use crate::rng::{complex_normal, rng_from};
use crate::sampling::SamplingMask;

pub type C64 = Complex64;

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);

/// Per-slice complex images of the imaged object.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceStack {
    data: Array3<C64>,
    pub pixel_size: f64,
}

impl SliceStack {
    pub fn new(data: Array3<C64>) -> Result<Self> {
        let (mb, ny, nx) = data.dim();
        if mb < 1 || ny < 2 || nx < 2 {
            return invalid(format!("slice stack needs MB>=1, Ny>=2, Nx>=2, got {mb}x{ny}x{nx}"));
        }
        Ok(Self { data, pixel_size: 1.0 })
    }

    pub fn from_real(data: &Array3<f64>) -> Result<Self> {
        Self::new(data.mapv(|v| C64::new(v, 0.0)))
    }

    pub fn mb(&self) -> usize {
        self.data.dim().0
    }

    pub fn ny(&self) -> usize {
        self.data.dim().1
    }

    pub fn nx(&self) -> usize {
        self.data.dim().2
    }

    pub fn slice(&self, s: usize) -> ArrayView2<'_, C64> {
        self.data.index_axis(Axis(0), s)
    }

    pub fn data(&self) -> &Array3<C64> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array3<C64> {
        &mut self.data
    }

    pub fn into_data(self) -> Array3<C64> {
        self.data
    }

    pub fn magnitude(&self) -> Array3<f64> {
        self.data.mapv(|v| v.norm())
    }

    /// Copy with only slice `keep` retained, all other slices zeroed.
    pub fn isolate(&self, keep: usize) -> Self {
        let mut out = self.clone();
        for (s, mut sl) in out.data.outer_iter_mut().enumerate() {
            if s != keep {
                sl.fill(ZERO);
            }
        }
        out
    }
}

/// Complex coil sensitivity maps, one per coil and slice.
#[derive(Clone, Debug, PartialEq)]
pub struct CoilMapSet {
    maps: Array4<C64>,
    /// `[C_x, C_y]` k-space support bound on the single-slice grid.
    pub declared_support: [usize; 2],
}

impl CoilMapSet {
    pub fn new(maps: Array4<C64>, declared_support: [usize; 2]) -> Result<Self> {
        let (nc, mb, ny, nx) = maps.dim();
        if nc < 1 || mb < 1 || ny < 2 || nx < 2 {
            return invalid(format!("coil maps need Nc,MB>=1 and Ny,Nx>=2, got {nc}x{mb}x{ny}x{nx}"));
        }
        Ok(Self { maps, declared_support })
    }

    pub fn n_coils(&self) -> usize {
        self.maps.dim().0
    }

    pub fn mb(&self) -> usize {
        self.maps.dim().1
    }

    pub fn ny(&self) -> usize {
        self.maps.dim().2
    }

    pub fn nx(&self) -> usize {
        self.maps.dim().3
    }

    pub fn maps(&self) -> &Array4<C64> {
        &self.maps
    }

    pub fn map(&self, coil: usize, slice: usize) -> ArrayView2<'_, C64> {
        self.maps.slice(s![coil, slice, .., ..])
    }

    /// Maps of a single slice as a one-slice set.
    pub fn select_slice(&self, slice: usize) -> Self {
        let maps = self.maps.slice(s![.., slice..slice + 1, .., ..]).to_owned();
        Self { maps, declared_support: self.declared_support }
    }

    /// Per-pixel sum of squared magnitudes over coils, `(slice, y, x)`.
    pub fn sum_of_squares(&self) -> Array3<f64> {
        self.maps.map_axis(Axis(0), |lane| lane.iter().map(|v| v.norm_sqr()).sum())
    }

    /// Ratio of smallest to largest singular value of the `(pixels x coils)`
    /// matrix of vectorized maps.
    pub fn independence_ratio(&self) -> Result<f64> {
        let nc = self.n_coils();
        let npix = self.maps.len() / nc;
        let m = faer::Mat::<C64>::from_fn(npix, nc, |p, c| {
            let sub = self.maps.index_axis(Axis(0), c);
            sub.as_slice().map(|sl| sl[p]).unwrap_or_else(|| sub.iter().nth(p).copied().unwrap())
        });
        let sv = m.singular_values().map_err(|e| Error::Numerical(format!("svd failed: {e:?}")))?;
        let max = sv.first().copied().unwrap_or(0.0);
        let min = sv.last().copied().unwrap_or(0.0);
        Ok(if max > 0.0 { min / max } else { 0.0 })
    }

    fn check_against(&self, slices: &SliceStack) -> Result<()> {
        if (self.mb(), self.ny(), self.nx()) != (slices.mb(), slices.ny(), slices.nx()) {
            return invalid(format!(
                "coil maps cover {}x{}x{} but slices are {}x{}x{}",
                self.mb(),
                self.ny(),
                self.nx(),
                slices.mb(),
                slices.ny(),
                slices.nx()
            ));
        }
        Ok(())
    }
}

/// Where each slice sits along PE inside the `n * N_y` extended FOV.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub n_y: usize,
    pub extension: usize,
    pub offsets: Vec<usize>,
    pub allow_overlap: bool,
}

impl Placement {
    /// Slices at `s * N_y`, no overlap. Requires `extension >= mb`.
    pub fn uniform(mb: usize, n_y: usize, extension: usize) -> Result<Self> {
        let p = Self { n_y, extension, offsets: (0..mb).map(|s| s * n_y).collect(), allow_overlap: false };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.extension < 1 || self.n_y < 2 {
            return Err(Error::InvalidPlacement(format!(
                "extension {} and N_y {} must be >= 1 and >= 2",
                self.extension, self.n_y
            )));
        }
        if self.offsets.is_empty() {
            return Err(Error::InvalidPlacement("no slices placed".into()));
        }
        let rows = self.rows();
        for w in self.offsets.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::InvalidPlacement(format!("offsets not strictly increasing: {:?}", self.offsets)));
            }
            if !self.allow_overlap && w[1] < w[0] + self.n_y {
                return Err(Error::InvalidPlacement(format!(
                    "segments starting at {} and {} overlap (N_y = {})",
                    w[0], w[1], self.n_y
                )));
            }
        }
        let last = *self.offsets.last().unwrap();
        if last + self.n_y > rows {
            return Err(Error::InvalidPlacement(format!("segment at {last} exceeds the {rows}-row extended FOV")));
        }
        Ok(())
    }

    pub fn mb(&self) -> usize {
        self.offsets.len()
    }

    pub fn rows(&self) -> usize {
        self.extension * self.n_y
    }

    pub fn has_overlap(&self) -> bool {
        self.offsets.windows(2).any(|w| w[1] < w[0] + self.n_y)
    }

    /// Row-to-slice ownership; `None` for rows outside every segment.
    /// Only meaningful without overlap.
    pub fn row_owner(&self) -> Vec<Option<(usize, usize)>> {
        let mut owner = vec![None; self.rows()];
        for (s, &o) in self.offsets.iter().enumerate() {
            for y in 0..self.n_y {
                owner[o + y] = Some((s, y));
            }
        }
        owner
    }
}

/// Coil images over the extended FOV.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtendedImage {
    pub data: Array3<C64>,
    pub placement: Placement,
}

impl ExtendedImage {
    pub fn extension_factor(&self) -> usize {
        self.placement.extension
    }

    /// Copy of segment `s` for every coil, `(coil, y, x)`.
    pub fn segment(&self, s: usize) -> Array3<C64> {
        let o = self.placement.offsets[s];
        self.data.slice(s![.., o..o + self.placement.n_y, ..]).to_owned()
    }
}

/// Per-line, per-slice RF phases of a collapsed acquisition, `(line, slice)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseTable {
    pub phases: Array2<f64>,
}

impl PhaseTable {
    pub fn zeros(n_lines: usize, mb: usize) -> Self {
        Self { phases: Array2::zeros((n_lines, mb)) }
    }

    /// CAIPI cycle shifting slice `s` by `s * N / mb` pixels:
    /// `phase(m, s) = -2 pi s m_c / mb` with `m_c = m - n_lines/2`.
    pub fn caipi(n_lines: usize, mb: usize) -> Self {
        let c = (n_lines / 2) as f64;
        let phases = Array2::from_shape_fn((n_lines, mb), |(m, s)| -2.0 * PI * s as f64 * (m as f64 - c) / mb as f64);
        Self { phases }
    }

    pub fn n_lines(&self) -> usize {
        self.phases.dim().0
    }

    pub fn mb(&self) -> usize {
        self.phases.dim().1
    }

    pub fn factor(&self, line: usize, slice: usize) -> C64 {
        C64::from_polar(1.0, self.phases[[line, slice]])
    }
}

/// Which PE grid a k-space array lives on, with what is needed to invert it.
#[derive(Clone, Debug, PartialEq)]
pub enum Grid {
    Collapsed { n_y: usize, phases: PhaseTable },
    Extended { placement: Placement },
}

impl Grid {
    pub fn pe_lines(&self) -> usize {
        match self {
            Grid::Collapsed { n_y, .. } => *n_y,
            Grid::Extended { placement } => placement.rows(),
        }
    }

    pub fn mb(&self) -> usize {
        match self {
            Grid::Collapsed { phases, .. } => phases.mb(),
            Grid::Extended { placement } => placement.mb(),
        }
    }
}

/// Multi-coil k-space `(coil, ky, kx)`.
#[derive(Clone, Debug, PartialEq)]
pub struct KSpaceData {
    pub data: Array3<C64>,
    pub grid: Grid,
    pub mask: Option<SamplingMask>,
}

impl KSpaceData {
    pub fn n_coils(&self) -> usize {
        self.data.dim().0
    }

    pub fn n_pe(&self) -> usize {
        self.data.dim().1
    }

    pub fn n_ro(&self) -> usize {
        self.data.dim().2
    }

    /// Whether PE line `ky` holds measured data.
    pub fn is_sampled(&self, ky: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m.is_sampled(ky))
    }

    /// Apply a mask, zeroing unsampled lines.
    pub fn with_mask(mut self, mask: SamplingMask) -> Result<Self> {
        if mask.n_pe() != self.n_pe() {
            return invalid(format!("mask has {} PE lines, k-space has {}", mask.n_pe(), self.n_pe()));
        }
        for ky in 0..self.n_pe() {
            if !mask.is_sampled(ky) {
                self.data.slice_mut(s![.., ky, ..]).fill(ZERO);
            }
        }
        self.mask = Some(mask);
        Ok(self)
    }
}

/// Place coil-weighted slices into the extended FOV.
///
/// Row `offset_s + y` of coil `c` receives `maps(c, s, y, x) * slices(s, y, x)`;
/// overlapping segments (only when the placement allows it) add.
pub fn assemble_extended(slices: &SliceStack, maps: &CoilMapSet, placement: &Placement) -> Result<ExtendedImage> {
    maps.check_against(slices)?;
    placement.validate()?;
    if placement.mb() != slices.mb() || placement.n_y != slices.ny() {
        return invalid(format!(
            "placement describes {} slices of {} rows, stack has {} of {}",
            placement.mb(),
            placement.n_y,
            slices.mb(),
            slices.ny()
        ));
    }
    let nc = maps.n_coils();
    let mut data = Array3::zeros((nc, placement.rows(), slices.nx()));
    for c in 0..nc {
        for (s, &o) in placement.offsets.iter().enumerate() {
            let mut seg = data.slice_mut(s![c, o..o + slices.ny(), ..]);
            ndarray::Zip::from(&mut seg).and(&maps.map(c, s)).and(&slices.slice(s)).for_each(|d, &m, &x| *d += m * x);
        }
    }
    Ok(ExtendedImage { data, placement: placement.clone() })
}

fn add_noise(data: &mut Array3<C64>, mask: &SamplingMask, sigma: f64, seed: u64) {
    if sigma <= 0.0 {
        return;
    }
    let mut rng = rng_from(seed, 0x006e_6f69_7365);
    let (nc, nky, nkx) = data.dim();
    for c in 0..nc {
        for ky in 0..nky {
            if !mask.is_sampled(ky) {
                continue;
            }
            for kx in 0..nkx {
                data[[c, ky, kx]] += complex_normal(&mut rng, sigma);
            }
        }
    }
}

/// Per-coil centered FFT of the extended image, masked, plus complex
/// Gaussian noise of standard deviation `noise_sigma` on sampled entries.
pub fn smile_forward(ext: &ExtendedImage, mask: &SamplingMask, noise_sigma: f64, seed: u64) -> Result<KSpaceData> {
    let (nc, rows, nx) = ext.data.dim();
    if mask.n_pe() != rows {
        return invalid(format!("mask has {} PE lines, extended FOV has {rows}", mask.n_pe()));
    }
    let plan = Fft2c::new(rows, nx);
    let mut data = ext.data.clone();
    for c in 0..nc {
        plan.forward_inplace(data.index_axis_mut(Axis(0), c));
    }
    let mut k =
        KSpaceData { data, grid: Grid::Extended { placement: ext.placement.clone() }, mask: None }.with_mask(mask.clone())?;
    add_noise(&mut k.data, mask, noise_sigma, seed);
    Ok(k)
}

/// Collapsed single-slice-FOV acquisition: line `m` of coil `c` is
/// `sum_s exp(i phase(m, s)) * fft2c(maps(c, s) * slices(s))[m]`.
pub fn caipi_forward(
    slices: &SliceStack,
    maps: &CoilMapSet,
    phases: &PhaseTable,
    inplane_mask: &SamplingMask,
    noise_sigma: f64,
    seed: u64,
) -> Result<KSpaceData> {
    maps.check_against(slices)?;
    let (mb, ny, nx) = slices.data.dim();
    if phases.n_lines() != ny || phases.mb() != mb {
        return invalid(format!("phase table is {}x{}, expected {ny} lines x {mb} slices", phases.n_lines(), phases.mb()));
    }
    if inplane_mask.n_pe() != ny {
        return invalid(format!("in-plane mask has {} lines, expected {ny}", inplane_mask.n_pe()));
    }
    let nc = maps.n_coils();
    let plan = Fft2c::new(ny, nx);
    let mut data = Array3::zeros((nc, ny, nx));
    let mut buf = Array2::zeros((ny, nx));
    for c in 0..nc {
        for s in 0..mb {
            ndarray::Zip::from(&mut buf).and(&maps.map(c, s)).and(&slices.slice(s)).for_each(|b, &m, &x| *b = m * x);
            plan.forward_inplace(buf.view_mut());
            for m in 0..ny {
                let f = phases.factor(m, s);
                let mut dst = data.slice_mut(s![c, m, ..]);
                dst.zip_mut_with(&buf.row(m), |d, &v| *d += f * v);
            }
        }
    }
    let mut k = KSpaceData { data, grid: Grid::Collapsed { n_y: ny, phases: phases.clone() }, mask: None }
        .with_mask(inplane_mask.clone())?;
    add_noise(&mut k.data, inplane_mask, noise_sigma, seed);
    Ok(k)
}

/// Correspondence between a collapsed CAIPI line and the extended-FOV
/// spectrum with slices at `s * N_y` in an `n * N_y` FOV.
///
/// Collapsed line `m` (centered index `m_c`) corresponds to extended line
/// `n * m_c + r`, `r = m_c mod n`. That extended line sits `r / n` of a
/// collapsed line away from `m`, so the match is exact only after every
/// slice is multiplied by the image-domain ramp from [`subline_ramp`] for
/// residue `r`:
///
/// `caipi(ramp_r(slices))[m] = factor * ext[line]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineCorrespondence {
    pub extended_line: usize,
    pub residue: usize,
    pub factor: C64,
}

pub fn caipi_extended_line(m: usize, n_y: usize, n: usize) -> LineCorrespondence {
    let rows = (n * n_y) as i64;
    let m_c = m as i64 - (n_y / 2) as i64;
    let r = m_c.rem_euclid(n as i64);
    let k_c = n as i64 * m_c + r;
    let extended_line = (k_c + rows / 2).rem_euclid(rows) as usize;
    let delta = (n_y / 2) as f64 - (rows / 2) as f64;
    // conj(exp(-2 pi i K_c delta / L)) times the sqrt(n) normalization ratio
    let factor = C64::from_polar((n as f64).sqrt(), 2.0 * PI * k_c as f64 * delta / rows as f64);
    LineCorrespondence { extended_line, residue: r as usize, factor }
}

/// Multiply every slice by `exp(-2 pi i r y_c / (n N_y))`, `y_c = y - N_y/2`.
pub fn subline_ramp(slices: &SliceStack, n: usize, residue: usize) -> SliceStack {
    let ny = slices.ny();
    let c = (ny / 2) as f64;
    let mut out = slices.clone();
    for mut sl in out.data.outer_iter_mut() {
        for (y, mut row) in sl.outer_iter_mut().enumerate() {
            let f = C64::from_polar(1.0, -2.0 * PI * residue as f64 * (y as f64 - c) / (n * ny) as f64);
            row.mapv_inplace(|v| v * f);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fft::fft2c;
    use crate::rng::{complex_normal_array2, rng_from};

    fn random_stack(seed: u64, mb: usize, ny: usize, nx: usize) -> SliceStack {
        let mut rng = rng_from(seed, 1);
        let mut d = Array3::zeros((mb, ny, nx));
        for s in 0..mb {
            d.index_axis_mut(Axis(0), s).assign(&complex_normal_array2(&mut rng, (ny, nx), 1.0));
        }
        SliceStack::new(d).unwrap()
    }

    fn random_maps(seed: u64, nc: usize, mb: usize, ny: usize, nx: usize) -> CoilMapSet {
        let mut rng = rng_from(seed, 2);
        let maps = Array4::from_shape_simple_fn((nc, mb, ny, nx), || complex_normal(&mut rng, 1.0));
        CoilMapSet::new(maps, [nx, ny]).unwrap()
    }

    fn rel(a: &Array3<C64>, b: &Array3<C64>) -> f64 {
        let num: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm_sqr()).sum();
        let den: f64 = b.iter().map(|x| x.norm_sqr()).sum();
        (num / den).sqrt()
    }

    #[test]
    fn uniform_segments_equal_weighted_slices() {
        let sl = random_stack(0, 3, 6, 4);
        let maps = random_maps(0, 2, 3, 6, 4);
        let p = Placement::uniform(3, 6, 3).unwrap();
        let ext = assemble_extended(&sl, &maps, &p).unwrap();
        for s in 0..3 {
            let seg = ext.segment(s);
            for c in 0..2 {
                let expect = &maps.map(c, s) * &sl.slice(s);
                assert_eq!(seg.index_axis(Axis(0), c), expect);
            }
        }
    }

    #[test]
    fn single_slice_extension_is_identity() {
        let sl = random_stack(1, 1, 8, 8);
        let maps = random_maps(1, 3, 1, 8, 8);
        let ext = assemble_extended(&sl, &maps, &Placement::uniform(1, 8, 1).unwrap()).unwrap();
        for c in 0..3 {
            assert_eq!(ext.data.index_axis(Axis(0), c), &maps.map(c, 0) * &sl.slice(0));
        }
    }

    #[test]
    fn disjoint_energy_adds() {
        let sl = random_stack(2, 5, 4, 4);
        let maps = random_maps(2, 2, 5, 4, 4);
        let ext = assemble_extended(&sl, &maps, &Placement::uniform(5, 4, 5).unwrap()).unwrap();
        let total: f64 = ext.data.iter().map(|v| v.norm_sqr()).sum();
        let mut expect = 0.0;
        for s in 0..5 {
            for c in 0..2 {
                expect += (&maps.map(c, s) * &sl.slice(s)).iter().map(|v| v.norm_sqr()).sum::<f64>();
            }
        }
        assert!((total - expect).abs() < 1e-12 * expect);
    }

    #[test]
    fn overlapping_offsets_rejected() {
        let p = Placement { n_y: 8, extension: 3, offsets: vec![0, 4, 16], allow_overlap: false };
        assert!(matches!(p.validate(), Err(Error::InvalidPlacement(_))));
        let ok = Placement { allow_overlap: true, ..p };
        assert!(ok.validate().is_ok());
        assert!(ok.has_overlap());
    }

    #[test]
    fn placement_outside_fov_rejected() {
        let p = Placement { n_y: 8, extension: 2, offsets: vec![0, 9], allow_overlap: false };
        assert!(p.validate().is_err());
    }

    #[test]
    fn noiseless_full_sampling_is_exact_spectrum() {
        let sl = random_stack(3, 2, 8, 6);
        let maps = random_maps(3, 2, 2, 8, 6);
        let ext = assemble_extended(&sl, &maps, &Placement::uniform(2, 8, 2).unwrap()).unwrap();
        let k = smile_forward(&ext, &SamplingMask::full(16), 0.0, 0).unwrap();
        for c in 0..2 {
            let expect = fft2c(&ext.data.index_axis(Axis(0), c).to_owned()).unwrap();
            let got = k.data.index_axis(Axis(0), c);
            assert!(got.iter().zip(expect.iter()).all(|(a, b)| (a - b).norm() < 1e-12));
        }
        // energy per coil preserved
        let e_img: f64 = ext.data.iter().map(|v| v.norm_sqr()).sum();
        let e_k: f64 = k.data.iter().map(|v| v.norm_sqr()).sum();
        assert!((e_img - e_k).abs() < 1e-10 * e_img);
    }

    #[test]
    fn masking_zeroes_unsampled_rows() {
        let sl = random_stack(4, 3, 8, 4);
        let maps = random_maps(4, 2, 3, 8, 4);
        let ext = assemble_extended(&sl, &maps, &Placement::uniform(3, 8, 3).unwrap()).unwrap();
        let mask = SamplingMask::uniform(24, 3, 0).unwrap();
        let k = smile_forward(&ext, &mask, 0.0, 0).unwrap();
        let zero_rows = (0..24).filter(|&ky| k.data.slice(s![.., ky, ..]).iter().all(|v| *v == ZERO)).count();
        assert_eq!(zero_rows, 16);
    }

    #[test]
    fn noise_is_seed_deterministic() {
        let sl = random_stack(5, 2, 8, 4);
        let maps = random_maps(5, 2, 2, 8, 4);
        let ext = assemble_extended(&sl, &maps, &Placement::uniform(2, 8, 2).unwrap()).unwrap();
        let mask = SamplingMask::uniform(16, 2, 1).unwrap();
        let a = smile_forward(&ext, &mask, 0.1, 9).unwrap();
        let b = smile_forward(&ext, &mask, 0.1, 9).unwrap();
        let c = smile_forward(&ext, &mask, 0.1, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        // unsampled rows stay exactly zero with noise on
        assert!(a.data.slice(s![.., 0, ..]).iter().all(|v| *v == ZERO));
    }

    #[test]
    fn mask_length_mismatch_rejected() {
        let sl = random_stack(6, 2, 8, 4);
        let maps = random_maps(6, 2, 2, 8, 4);
        let ext = assemble_extended(&sl, &maps, &Placement::uniform(2, 8, 2).unwrap()).unwrap();
        assert!(smile_forward(&ext, &SamplingMask::full(8), 0.0, 0).is_err());
    }

    #[test]
    fn zero_phase_caipi_is_slice_sum() {
        let sl = random_stack(7, 2, 8, 6);
        let maps = random_maps(7, 3, 2, 8, 6);
        let k = caipi_forward(&sl, &maps, &PhaseTable::zeros(8, 2), &SamplingMask::full(8), 0.0, 0).unwrap();
        for c in 0..3 {
            let a = fft2c(&(&maps.map(c, 0) * &sl.slice(0))).unwrap();
            let b = fft2c(&(&maps.map(c, 1) * &sl.slice(1))).unwrap();
            let expect = a + b;
            assert!(k.data.index_axis(Axis(0), c).iter().zip(expect.iter()).all(|(x, y)| (x - y).norm() < 1e-12));
        }
    }

    #[test]
    fn single_slice_caipi_is_plain_acquisition() {
        let sl = random_stack(8, 1, 8, 6);
        let maps = random_maps(8, 2, 1, 8, 6);
        let k = caipi_forward(&sl, &maps, &PhaseTable::zeros(8, 1), &SamplingMask::full(8), 0.0, 0).unwrap();
        let ext = assemble_extended(&sl, &maps, &Placement::uniform(1, 8, 1).unwrap()).unwrap();
        let k2 = smile_forward(&ext, &SamplingMask::full(8), 0.0, 0).unwrap();
        assert!(rel(&k.data, &k2.data) < 1e-14);
    }

    #[test]
    fn phase_table_shape_checked() {
        let sl = random_stack(9, 2, 8, 4);
        let maps = random_maps(9, 2, 2, 8, 4);
        assert!(caipi_forward(&sl, &maps, &PhaseTable::zeros(8, 3), &SamplingMask::full(8), 0.0, 0).is_err());
    }

    /// Brute-force check of caipi_forward against an explicit O(N^2) DFT sum.
    #[test]
    fn caipi_matches_explicit_dft() {
        let (mb, ny, nx) = (2, 8, 4);
        let sl = random_stack(10, mb, ny, nx);
        let maps = random_maps(10, 1, mb, ny, nx);
        let ph = PhaseTable::caipi(ny, mb);
        let k = caipi_forward(&sl, &maps, &ph, &SamplingMask::full(ny), 0.0, 0).unwrap();
        let (cy, cx) = ((ny / 2) as f64, (nx / 2) as f64);
        for m in 0..ny {
            for kx in 0..nx {
                let mut acc = ZERO;
                for s in 0..mb {
                    let rot = C64::from_polar(1.0, -2.0 * PI * s as f64 * (m as f64 - cy) / mb as f64);
                    for y in 0..ny {
                        for x in 0..nx {
                            let arg = -2.0
                                * PI
                                * ((m as f64 - cy) * (y as f64 - cy) / ny as f64
                                    + (kx as f64 - cx) * (x as f64 - cx) / nx as f64);
                            acc += rot * maps.maps()[[0, s, y, x]] * sl.data()[[s, y, x]] * C64::from_polar(1.0, arg);
                        }
                    }
                }
                acc /= ((ny * nx) as f64).sqrt();
                assert!((acc - k.data[[0, m, kx]]).norm() < 1e-12);
            }
        }
    }

    fn check_equivalence(mb: usize, ny: usize, nx: usize, seed: u64) -> f64 {
        let sl = random_stack(seed, mb, ny, nx);
        let maps = random_maps(seed, 2, mb, ny, nx);
        let ph = PhaseTable::caipi(ny, mb);
        let ext = assemble_extended(&sl, &maps, &Placement::uniform(mb, ny, mb).unwrap()).unwrap();
        let kext = smile_forward(&ext, &SamplingMask::full(mb * ny), 0.0, 0).unwrap();
        let mut worst: f64 = 0.0;
        for r in 0..mb {
            let ramped = subline_ramp(&sl, mb, r);
            let kc = caipi_forward(&ramped, &maps, &ph, &SamplingMask::full(ny), 0.0, 0).unwrap();
            for m in 0..ny {
                let corr = caipi_extended_line(m, ny, mb);
                if corr.residue != r {
                    continue;
                }
                let a = kc.data.slice(s![.., m, ..]);
                let b = kext.data.slice(s![.., corr.extended_line, ..]).mapv(|v| v * corr.factor);
                let num: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm_sqr()).sum();
                let den: f64 = a.iter().map(|x| x.norm_sqr()).sum();
                worst = worst.max((num / den).sqrt());
            }
        }
        worst
    }

    #[test]
    fn caipi_extended_equivalence_toy() {
        assert!(check_equivalence(2, 8, 8, 11) < 1e-12);
        assert!(check_equivalence(3, 12, 5, 12) < 1e-12);
        assert!(check_equivalence(3, 13, 4, 13) < 1e-12);
        assert!(check_equivalence(5, 10, 3, 14) < 1e-12);
    }

    /// Without the sub-line ramp the shifted-line mapping is far from exact.
    #[test]
    fn bare_shifted_line_mapping_is_not_exact() {
        let (mb, ny, nx) = (2, 8, 8);
        let sl = random_stack(15, mb, ny, nx);
        let maps = random_maps(15, 2, mb, ny, nx);
        let ext = assemble_extended(&sl, &maps, &Placement::uniform(mb, ny, mb).unwrap()).unwrap();
        let kext = smile_forward(&ext, &SamplingMask::full(mb * ny), 0.0, 0).unwrap();
        let kc = caipi_forward(&sl, &maps, &PhaseTable::caipi(ny, mb), &SamplingMask::full(ny), 0.0, 0).unwrap();
        let mut worst: f64 = 0.0;
        for m in 0..ny {
            let corr = caipi_extended_line(m, ny, mb);
            let a = kc.data.slice(s![.., m, ..]);
            let b = kext.data.slice(s![.., corr.extended_line, ..]).mapv(|v| v * corr.factor);
            let num: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm_sqr()).sum();
            let den: f64 = a.iter().map(|x| x.norm_sqr()).sum();
            worst = worst.max((num / den).sqrt());
        }
        assert!(worst > 0.1, "{worst}");
    }

    #[test]
    fn forward_operators_are_linear() {
        let a = random_stack(16, 2, 8, 4);
        let b = random_stack(17, 2, 8, 4);
        let maps = random_maps(16, 2, 2, 8, 4);
        let alpha = C64::new(0.3, -1.2);
        let sum = SliceStack::new(a.data() * alpha + b.data()).unwrap();
        let p = Placement::uniform(2, 8, 2).unwrap();
        let mask = SamplingMask::uniform(16, 2, 0).unwrap();
        let f = |x: &SliceStack| smile_forward(&assemble_extended(x, &maps, &p).unwrap(), &mask, 0.0, 0).unwrap().data;
        let lhs = f(&sum);
        let rhs = f(&a) * alpha + f(&b);
        assert!(rel(&lhs, &rhs) < 1e-13);
        let ph = PhaseTable::caipi(8, 2);
        let m8 = SamplingMask::uniform(8, 2, 0).unwrap();
        let g = |x: &SliceStack| caipi_forward(x, &maps, &ph, &m8, 0.0, 0).unwrap().data;
        assert!(rel(&g(&sum), &(g(&a) * alpha + g(&b))) < 1e-13);
    }
}
