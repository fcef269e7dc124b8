use num_complex::Complex64;

use super::SamplingMask;
use crate::fft::ifftc;

/// Centered inverse DFT of the 0/1 mask scaled so the main lobe is 1.
pub fn mask_psf(mask: &SamplingMask) -> Vec<Complex64> {
    let n = mask.n_pe();
    let ind: Vec<Complex64> = mask.keep().iter().map(|&k| Complex64::new(if k { 1.0 } else { 0.0 }, 0.0)).collect();
    let mut psf = ifftc(&ind);
    let main = psf[n / 2];
    for v in psf.iter_mut() {
        *v /= main;
    }
    psf
}

/// Circular local maxima of `|psf|` strictly above `threshold` (main lobe = 1).
pub fn peak_count(psf: &[Complex64], threshold: f64) -> usize {
    let n = psf.len();
    let mag: Vec<f64> = psf.iter().map(|v| v.norm()).collect();
    (0..n)
        .filter(|&i| {
            let prev = mag[(i + n - 1) % n];
            let next = mag[(i + 1) % n];
            // plateaus count once, at their first sample
            mag[i] > threshold && mag[i] > prev && mag[i] >= next
        })
        .count()
}

/// PSF magnitude at the `R - 1` coherent alias positions `center + j N / R`.
#[derive(Clone, Debug, PartialEq)]
pub struct AliasLobes {
    pub positions: Vec<usize>,
    pub amplitudes: Vec<f64>,
    /// Lobes strictly above the threshold.
    pub above: usize,
    /// Largest magnitude away from the main lobe (excluding its two
    /// neighbours), wherever it falls.
    pub max_sidelobe: f64,
}

/// Each alias amplitude is the maximum over the nearest bin and its two
/// neighbours, so non-integer `N / R` spacings are handled.
pub fn alias_lobes(psf: &[Complex64], accel: usize, threshold: f64) -> AliasLobes {
    let n = psf.len();
    let c = n / 2;
    let mag: Vec<f64> = psf.iter().map(|v| v.norm()).collect();
    let mut positions = Vec::new();
    let mut amplitudes = Vec::new();
    for j in 1..accel {
        let pos = (c as f64 + j as f64 * n as f64 / accel as f64).round() as usize % n;
        let amp = [n - 1, 0, 1].iter().map(|&d| mag[(pos + d) % n]).fold(0.0, f64::max);
        positions.push(pos);
        amplitudes.push(amp);
    }
    let above = amplitudes.iter().filter(|&&a| a > threshold).count();
    let max_sidelobe = (0..n)
        .filter(|&i| {
            let d = i.abs_diff(c);
            d.min(n - d) > 1
        })
        .map(|i| mag[i])
        .fold(0.0, f64::max);
    AliasLobes { positions, amplitudes, above, max_sidelobe }
}
