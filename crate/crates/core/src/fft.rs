//! Centered, unitary discrete Fourier transforms.
//!
//! Every k-space array in the crate uses the same convention: the DC bin
//! sits at index `n / 2` (integer division) along each axis, and transforms
//! are scaled by `1/sqrt(n)` so that they preserve the l2 norm. This is
//! `fftshift(fft(ifftshift(x))) / sqrt(n)` in NumPy terms.

use std::sync::Arc;

use ndarray::{Array2, ArrayViewMut2, Axis};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{invalid, Result};

/// Forward and inverse centered unitary transforms of one length.
#[derive(Clone)]
pub struct CenteredFft {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scale: f64,
}

impl std::fmt::Debug for CenteredFft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CenteredFft").field("len", &self.len).finish()
    }
}

impl CenteredFft {
    pub fn new(len: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            len,
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
            scale: 1.0 / (len as f64).sqrt(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn forward(&self, buf: &mut [Complex64]) {
        self.apply(buf, &self.forward);
    }

    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.apply(buf, &self.inverse);
    }

    fn apply(&self, buf: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        debug_assert_eq!(buf.len(), self.len);
        let half = self.len / 2;
        // ifftshift
        buf.rotate_left(half);
        plan.process(buf);
        // fftshift
        buf.rotate_right(half);
        for v in buf.iter_mut() {
            *v *= self.scale;
        }
    }

    /// Transform every lane of `data` along `axis` in place.
    pub fn along_axis(&self, data: &mut ArrayViewMut2<'_, Complex64>, axis: Axis, inverse: bool) {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.len];
        for mut lane in data.lanes_mut(axis) {
            for (b, v) in buf.iter_mut().zip(lane.iter()) {
                *b = *v;
            }
            if inverse {
                self.inverse(&mut buf);
            } else {
                self.forward(&mut buf);
            }
            for (v, b) in lane.iter_mut().zip(buf.iter()) {
                *v = *b;
            }
        }
    }
}

/// Plans for a 2D grid of shape `(rows, cols)`.
#[derive(Clone, Debug)]
pub struct Fft2c {
    rows: CenteredFft,
    cols: CenteredFft,
}

impl Fft2c {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self { rows: CenteredFft::new(rows), cols: CenteredFft::new(cols) }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows.len(), self.cols.len())
    }

    /// Transform along the phase-encoding (row index) axis only.
    pub fn pe(&self) -> &CenteredFft {
        &self.rows
    }

    pub fn forward_inplace(&self, mut data: ArrayViewMut2<'_, Complex64>) {
        debug_assert_eq!(data.dim(), self.shape());
        self.cols.along_axis(&mut data, Axis(1), false);
        self.rows.along_axis(&mut data, Axis(0), false);
    }

    pub fn inverse_inplace(&self, mut data: ArrayViewMut2<'_, Complex64>) {
        debug_assert_eq!(data.dim(), self.shape());
        self.cols.along_axis(&mut data, Axis(1), true);
        self.rows.along_axis(&mut data, Axis(0), true);
    }
}

fn check_dims(img: &Array2<Complex64>) -> Result<()> {
    let (r, c) = img.dim();
    if r < 2 || c < 2 {
        return invalid(format!("2D transform needs both dimensions >= 2, got {r}x{c}"));
    }
    Ok(())
}

/// Centered unitary 2D DFT.
pub fn fft2c(img: &Array2<Complex64>) -> Result<Array2<Complex64>> {
    check_dims(img)?;
    let (r, c) = img.dim();
    let mut out = img.clone();
    Fft2c::new(r, c).forward_inplace(out.view_mut());
    Ok(out)
}

/// Inverse of [`fft2c`].
pub fn ifft2c(ksp: &Array2<Complex64>) -> Result<Array2<Complex64>> {
    check_dims(ksp)?;
    let (r, c) = ksp.dim();
    let mut out = ksp.clone();
    Fft2c::new(r, c).inverse_inplace(out.view_mut());
    Ok(out)
}

/// Centered unitary inverse DFT of a 1D sequence.
pub fn ifftc(data: &[Complex64]) -> Vec<Complex64> {
    let mut buf = data.to_vec();
    CenteredFft::new(buf.len()).inverse(&mut buf);
    buf
}

/// Centered unitary forward DFT of a 1D sequence.
pub fn fftc(data: &[Complex64]) -> Vec<Complex64> {
    let mut buf = data.to_vec();
    CenteredFft::new(buf.len()).forward(&mut buf);
    buf
}
