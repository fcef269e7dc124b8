//! Synthetic multi-slice phantoms and exactly band-limited coil maps.

use std::f64::consts::PI;

use ndarray::{Array2, Array3, Array4, Axis};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::fft::Fft2c;
use crate::model::{CoilMapSet, SliceStack, C64, ZERO};
use crate::rng::{complex_normal, rng_from};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhantomStyle {
    Ellipses,
    RingAndDisks,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub nx: usize,
    pub ny: usize,
    pub mb: usize,
    pub style: PhantomStyle,
    /// Largest per-slice in-plane rotation, degrees.
    pub max_rotation_deg: f64,
    /// Largest relative perturbation of inner-structure intensities.
    pub contrast_jitter: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self { nx: 128, ny: 128, mb: 3, style: PhantomStyle::Ellipses, max_rotation_deg: 20.0, contrast_jitter: 0.3, seed: 0 }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.nx < 16 || self.ny < 16 {
            return invalid(format!("phantom grid {}x{} is below 16x16", self.ny, self.nx));
        }
        if !(1..=8).contains(&self.mb) {
            return invalid(format!("phantom slice count {} outside [1, 8]", self.mb));
        }
        Ok(())
    }
}

struct Ellipse {
    value: f64,
    a: f64,
    b: f64,
    x0: f64,
    y0: f64,
    theta_deg: f64,
}

const fn e(value: f64, a: f64, b: f64, x0: f64, y0: f64, theta_deg: f64) -> Ellipse {
    Ellipse { value, a, b, x0, y0, theta_deg }
}

// Modified Shepp-Logan head.
const SHEPP_LOGAN: [Ellipse; 10] = [
    e(1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    e(-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    e(-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    e(-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    e(0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    e(0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    e(0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    e(0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    e(0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    e(0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
];

// Shapes are drawn in [-1, 1]^2 and then shrunk so nothing reaches the
// outer two pixels.
const FILL: f64 = 0.85;

fn rasterize(spec: &PhantomSpec, shapes: &[Ellipse], rot_deg: f64) -> Array2<f64> {
    let (ny, nx) = (spec.ny, spec.nx);
    let (c, s) = (rot_deg.to_radians().cos(), rot_deg.to_radians().sin());
    let mut img = Array2::zeros((ny, nx));
    for ((y, x), v) in img.indexed_iter_mut() {
        let px = (x as f64 + 0.5 - nx as f64 / 2.0) / (nx as f64 / 2.0) / FILL;
        let py = (ny as f64 / 2.0 - y as f64 - 0.5) / (ny as f64 / 2.0) / FILL;
        // rotate the sample point into the phantom frame
        let (qx, qy) = (c * px + s * py, -s * px + c * py);
        let mut acc = 0.0;
        for el in shapes {
            let (ct, st) = (el.theta_deg.to_radians().cos(), el.theta_deg.to_radians().sin());
            let (dx, dy) = (qx - el.x0, qy - el.y0);
            let u = ct * dx + st * dy;
            let w = -st * dx + ct * dy;
            if (u / el.a).powi(2) + (w / el.b).powi(2) <= 1.0 {
                acc += el.value;
            }
        }
        *v = acc;
    }
    img
}

fn slice_shapes<R: Rng>(spec: &PhantomSpec, rng: &mut R) -> Vec<Ellipse> {
    let jitter = spec.contrast_jitter;
    match spec.style {
        PhantomStyle::Ellipses => SHEPP_LOGAN
            .iter()
            .enumerate()
            .map(|(i, el)| {
                let scale = if i < 2 { 1.0 } else { 1.0 + jitter * rng.random_range(-1.0..1.0) };
                Ellipse { value: el.value * scale, ..*el }
            })
            .collect(),
        PhantomStyle::RingAndDisks => {
            let mut v = vec![e(1.0, 0.9, 0.9, 0.0, 0.0, 0.0), e(-0.7, 0.8, 0.8, 0.0, 0.0, 0.0)];
            let n = rng.random_range(3..7);
            for _ in 0..n {
                let r = rng.random_range(0.06..0.2);
                let ang = rng.random_range(0.0..2.0 * PI);
                let rho = rng.random_range(0.0..(0.75 - r));
                let val = 0.3 * (1.0 + jitter * rng.random_range(-1.0..1.0));
                v.push(e(val, r, r, rho * ang.cos(), rho * ang.sin(), 0.0));
            }
            v
        }
    }
}

/// Real, non-negative slices with peak magnitude 1 and a zero border of at
/// least two pixels.
pub fn make_phantom(spec: &PhantomSpec) -> Result<SliceStack> {
    spec.validate()?;
    let mut rng = rng_from(spec.seed, 0x7068_616e);
    let mut data = Array3::zeros((spec.mb, spec.ny, spec.nx));
    for s in 0..spec.mb {
        let rot = spec.max_rotation_deg * rng.random_range(-1.0..1.0);
        let shapes = slice_shapes(spec, &mut rng);
        let mut img = rasterize(spec, &shapes, rot);
        img.mapv_inplace(|v| v.max(0.0));
        for ((y, x), v) in img.indexed_iter_mut() {
            if y < 2 || x < 2 || y + 2 >= spec.ny || x + 2 >= spec.nx {
                *v = 0.0;
            }
        }
        let peak = img.iter().cloned().fold(0.0, f64::max);
        if peak > 0.0 {
            img /= peak;
        }
        data.index_axis_mut(Axis(0), s).assign(&img);
    }
    SliceStack::from_real(&data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoilSpec {
    pub n_coils: usize,
    /// `[C_x, C_y]`
    pub support: [usize; 2],
    /// 1 gives identical maps on every slice, 0 independent draws.
    pub similarity: f64,
    pub seed: u64,
}

impl Default for CoilSpec {
    fn default() -> Self {
        Self { n_coils: 8, support: [7, 7], similarity: 0.0, seed: 0 }
    }
}

impl CoilSpec {
    pub fn validate(&self, nx: usize, ny: usize) -> Result<()> {
        let [cx, cy] = self.support;
        if self.n_coils < 2 {
            return invalid(format!("need at least 2 coils, got {}", self.n_coils));
        }
        if cx < 1 || cy < 1 || cx > nx || cy > ny {
            return invalid(format!("support {cx}x{cy} must lie within the {nx}x{ny} grid"));
        }
        if self.n_coils > cx * cy {
            return invalid(format!("{} coils cannot be independent inside a {cx}x{cy} spectral support", self.n_coils));
        }
        if !(0.0..=1.0).contains(&self.similarity) {
            return invalid(format!("similarity {} outside [0, 1]", self.similarity));
        }
        Ok(())
    }
}

/// Maps whose centered 2D DFT is confined to the `[C_x, C_y]` rectangle.
///
/// Coefficients are `sim * shared + (1 - sim) * own` per slice. One global
/// scale brings the mean sum-of-squares to 1; per-pixel normalization would
/// break the band limit.
pub fn make_coil_maps(spec: &CoilSpec, mb: usize, ny: usize, nx: usize) -> Result<CoilMapSet> {
    spec.validate(nx, ny)?;
    let [cx, cy] = spec.support;
    let nc = spec.n_coils;
    let (y0, x0) = (ny / 2 - cy / 2, nx / 2 - cx / 2);
    let mut rng = rng_from(spec.seed, 0x636f_696c);
    let draw = |rng: &mut _| -> Array3<C64> { Array3::from_shape_simple_fn((nc, cy, cx), || complex_normal(rng, 1.0)) };
    let shared = draw(&mut rng);
    let plan = Fft2c::new(ny, nx);
    let mut maps = Array4::zeros((nc, mb, ny, nx));
    for s in 0..mb {
        let own = draw(&mut rng);
        let coef = &shared * Complex64::new(spec.similarity, 0.0) + &own * Complex64::new(1.0 - spec.similarity, 0.0);
        for c in 0..nc {
            let mut k = Array2::from_elem((ny, nx), ZERO);
            for ky in 0..cy {
                for kx in 0..cx {
                    k[[y0 + ky, x0 + kx]] = coef[[c, ky, kx]];
                }
            }
            plan.inverse_inplace(k.view_mut());
            maps.index_axis_mut(Axis(0), c).index_axis_mut(Axis(0), s).assign(&k);
        }
    }
    let mean_sos = maps.iter().map(|v| v.norm_sqr()).sum::<f64>() / (mb * ny * nx) as f64;
    maps.mapv_inplace(|v| v / mean_sos.sqrt());
    CoilMapSet::new(maps, spec.support)
}

/// Matched-filter combination with the true maps,
/// `|sum_c conj(S_c) S_c x| / sum_c |S_c|^2`, which is `|x|` wherever the
/// maps do not all vanish.
pub fn sum_of_squares_reference(slices: &SliceStack, maps: &CoilMapSet) -> Result<SliceStack> {
    let coil_images = coil_images(slices, maps)?;
    matched_filter(&coil_images, maps)
}

/// `maps * slices` per coil, `(coil, slice, y, x)`.
pub fn coil_images(slices: &SliceStack, maps: &CoilMapSet) -> Result<Array4<C64>> {
    if (maps.mb(), maps.ny(), maps.nx()) != (slices.mb(), slices.ny(), slices.nx()) {
        return invalid("coil maps and slices disagree in shape");
    }
    let mut out = maps.maps().clone();
    for mut coil in out.outer_iter_mut() {
        coil.zip_mut_with(slices.data(), |m, &x| *m *= x);
    }
    Ok(out)
}

/// Combine `(coil, slice, y, x)` coil images to magnitudes with the maps.
pub fn matched_filter(coil_images: &Array4<C64>, maps: &CoilMapSet) -> Result<SliceStack> {
    if coil_images.dim() != maps.maps().dim() {
        return invalid("coil images and maps disagree in shape");
    }
    let (nc, mb, ny, nx) = coil_images.dim();
    let mut out = Array3::zeros((mb, ny, nx));
    for ((s, y, x), v) in out.indexed_iter_mut() {
        let mut num = ZERO;
        let mut den = 0.0;
        for c in 0..nc {
            let m = maps.maps()[[c, s, y, x]];
            num += m.conj() * coil_images[[c, s, y, x]];
            den += m.norm_sqr();
        }
        *v = if den > 0.0 { C64::new(num.norm() / den, 0.0) } else { ZERO };
    }
    SliceStack::new(out)
}
