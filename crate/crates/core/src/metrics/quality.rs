use ndarray::{Array2, Array3, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::SliceStack;

/// Returned by [`ser`] when the reconstruction matches exactly.
pub const SER_CAP_DB: f64 = 300.0;

/// Pixels whose reference magnitude exceeds this fraction of the maximum
/// form the object support.
pub const SUPPORT_FRACTION: f64 = 0.05;

/// `|ref| > fraction * max|ref|`, over the whole stack.
pub fn object_support(reference: &SliceStack, fraction: f64) -> Array3<bool> {
    let mag = reference.magnitude();
    let max = mag.iter().cloned().fold(0.0, f64::max);
    mag.mapv(|v| v > fraction * max)
}

fn check_shapes(a: &SliceStack, b: &SliceStack) -> Result<()> {
    if a.data().dim() != b.data().dim() {
        return invalid(format!("shape mismatch: {:?} vs {:?}", a.data().dim(), b.data().dim()));
    }
    Ok(())
}

fn ser_from(signal: f64, error: f64) -> Result<f64> {
    if signal == 0.0 {
        return invalid("reference has no energy on the support");
    }
    if error == 0.0 {
        return Ok(SER_CAP_DB);
    }
    Ok((10.0 * (signal / error).log10()).min(SER_CAP_DB))
}

fn energies(
    reference: &SliceStack,
    recon: &SliceStack,
    support: Option<&Array3<bool>>,
    slice: Option<usize>,
) -> Result<(f64, f64)> {
    check_shapes(reference, recon)?;
    if support.is_some_and(|m| m.dim() != reference.data().dim()) {
        return invalid("support shape does not match the images");
    }
    let (mut sig, mut err) = (0.0, 0.0);
    for ((s, y, x), r) in reference.data().indexed_iter() {
        if slice.is_some_and(|k| k != s) || support.is_some_and(|m| !m[[s, y, x]]) {
            continue;
        }
        let (a, b) = (r.norm(), recon.data()[[s, y, x]].norm());
        sig += a * a;
        err += (a - b) * (a - b);
    }
    Ok((sig, err))
}

/// Signal-to-error ratio in dB of magnitude images,
/// `20 log10(|ref| / |ref - recon|)`, over `support` (all pixels if `None`).
pub fn ser(reference: &SliceStack, recon: &SliceStack, support: Option<&Array3<bool>>) -> Result<f64> {
    let (sig, err) = energies(reference, recon, support, None)?;
    ser_from(sig, err)
}

pub fn ser_per_slice(reference: &SliceStack, recon: &SliceStack, support: Option<&Array3<bool>>) -> Result<Vec<f64>> {
    (0..reference.mb())
        .map(|s| {
            let (sig, err) = energies(reference, recon, support, Some(s))?;
            ser_from(sig, err)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SsimParams {
    /// Side of the square uniform window.
    pub window: usize,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self { window: 7, k1: 0.01, k2: 0.03, dynamic_range: 1.0 }
    }
}

/// Mean luminance, contrast and structure terms; their product per window
/// averages to the SSIM.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimComponents {
    pub luminance: f64,
    pub contrast: f64,
    pub structure: f64,
    pub ssim: f64,
}

/// Local statistics for every window position: (mean a, mean b, var a,
/// var b, cov), window centered at `(y + w/2, x + w/2)`.
fn local_terms(
    a: ArrayView2<'_, f64>,
    b: ArrayView2<'_, f64>,
    p: &SsimParams,
    support: Option<ArrayView2<'_, bool>>,
) -> Result<Vec<[f64; 4]>> {
    let w = p.window;
    let (ny, nx) = a.dim();
    if b.dim() != a.dim() {
        return invalid(format!("shape mismatch: {:?} vs {:?}", a.dim(), b.dim()));
    }
    if w == 0 || w > ny || w > nx {
        return invalid(format!("SSIM window {w} does not fit a {ny}x{nx} image"));
    }
    let c1 = (p.k1 * p.dynamic_range).powi(2);
    let c2 = (p.k2 * p.dynamic_range).powi(2);
    let c3 = c2 / 2.0;
    let n = (w * w) as f64;
    let mut out = Vec::new();
    for y in 0..=ny - w {
        for x in 0..=nx - w {
            if support.as_ref().is_some_and(|m| !m[[y + w / 2, x + w / 2]]) {
                continue;
            }
            let wa = a.slice(ndarray::s![y..y + w, x..x + w]);
            let wb = b.slice(ndarray::s![y..y + w, x..x + w]);
            let ma = wa.sum() / n;
            let mb = wb.sum() / n;
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            Zip::from(&wa).and(&wb).for_each(|&u, &v| {
                va += (u - ma) * (u - ma);
                vb += (v - mb) * (v - mb);
                cov += (u - ma) * (v - mb);
            });
            // unbiased window statistics
            let (va, vb, cov) = (va / (n - 1.0), vb / (n - 1.0), cov / (n - 1.0));
            let (sa, sb) = (va.sqrt(), vb.sqrt());
            let l = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
            let c = (2.0 * sa * sb + c2) / (va + vb + c2);
            let s = (cov + c3) / (sa * sb + c3);
            out.push([l, c, s, l * c * s]);
        }
    }
    if out.is_empty() {
        return invalid("no SSIM window is centered on the support");
    }
    Ok(out)
}

/// Mean local SSIM of two real images, over windows whose center lies in
/// `support` when given.
pub fn ssim_2d(
    a: ArrayView2<'_, f64>,
    b: ArrayView2<'_, f64>,
    p: &SsimParams,
    support: Option<ArrayView2<'_, bool>>,
) -> Result<f64> {
    Ok(ssim_components(a, b, p, support)?.ssim)
}

pub fn ssim_components(
    a: ArrayView2<'_, f64>,
    b: ArrayView2<'_, f64>,
    p: &SsimParams,
    support: Option<ArrayView2<'_, bool>>,
) -> Result<SsimComponents> {
    let terms = local_terms(a, b, p, support)?;
    let n = terms.len() as f64;
    let mean = |k: usize| terms.iter().map(|t| t[k]).sum::<f64>() / n;
    Ok(SsimComponents { luminance: mean(0), contrast: mean(1), structure: mean(2), ssim: mean(3) })
}

/// Per-slice SSIM of magnitude images, both scaled by the reference maximum.
pub fn ssim(reference: &SliceStack, recon: &SliceStack, p: &SsimParams, support: Option<&Array3<bool>>) -> Result<Vec<f64>> {
    check_shapes(reference, recon)?;
    let ra = reference.magnitude();
    let max = ra.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return invalid("reference is identically zero");
    }
    let ra = ra / max;
    let rb = recon.magnitude() / max;
    (0..reference.mb())
        .map(|s| ssim_2d(ra.index_axis(Axis(0), s), rb.index_axis(Axis(0), s), p, support.map(|m| m.index_axis(Axis(0), s))))
        .collect()
}

/// Absolute magnitude difference per slice, with the display gain recorded
/// alongside.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorMap {
    pub values: Array3<f64>,
    pub scale: f64,
}

impl ErrorMap {
    pub fn scaled(&self) -> Array3<f64> {
        &self.values * self.scale
    }

    pub fn slice(&self, s: usize) -> Array2<f64> {
        self.values.index_axis(Axis(0), s).to_owned()
    }
}

pub fn error_map(reference: &SliceStack, recon: &SliceStack, scale: f64) -> Result<ErrorMap> {
    check_shapes(reference, recon)?;
    let mut values = reference.magnitude();
    Zip::from(&mut values).and(recon.data()).for_each(|v, x| *v = (*v - x.norm()).abs());
    Ok(ErrorMap { values, scale })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::C64;
    use crate::phantom::{make_phantom, PhantomSpec};

    fn phantom() -> SliceStack {
        make_phantom(&PhantomSpec { nx: 64, ny: 64, ..PhantomSpec::default() }).unwrap()
    }

    #[test]
    fn ser_reference_values() {
        let p = phantom();
        assert_eq!(ser(&p, &p, None).unwrap(), SER_CAP_DB);
        let zero = SliceStack::new(Array3::zeros(p.data().dim())).unwrap();
        assert!(ser(&p, &zero, None).unwrap().abs() < 1e-12);
        let off = SliceStack::new(p.data() * C64::new(1.1, 0.0)).unwrap();
        assert!((ser(&p, &off, None).unwrap() - 20.0).abs() < 1e-9);
        assert!(ser(&zero, &p, None).is_err());
    }

    #[test]
    fn ser_ignores_global_phase() {
        let p = phantom();
        let noisy = SliceStack::new(p.data().mapv(|v| v * 0.9 + 0.01)).unwrap();
        let rotated = SliceStack::new(noisy.data() * C64::from_polar(1.0, 1.3)).unwrap();
        let a = ser(&p, &noisy, None).unwrap();
        let b = ser(&p, &rotated, None).unwrap();
        assert!((a - b).abs() < 1e-9);
        let per = ser_per_slice(&p, &noisy, None).unwrap();
        assert_eq!(per.len(), 3);
    }

    #[test]
    fn ssim_reference_values() {
        let p = phantom();
        let sup = object_support(&p, SUPPORT_FRACTION);
        assert!(ssim(&p, &p, &SsimParams::default(), Some(&sup)).unwrap().iter().all(|&v| (v - 1.0).abs() < 1e-12));
        let mag = p.magnitude();
        let a = mag.index_axis(Axis(0), 0);
        let inverted = a.mapv(|v| 1.0 - v);
        assert!(ssim_2d(a, inverted.view(), &SsimParams::default(), None).unwrap() < 0.5);
    }

    #[test]
    fn constant_shift_keeps_structure() {
        let p = phantom();
        let mag = p.magnitude();
        let a = mag.index_axis(Axis(0), 0);
        let shifted = a.mapv(|v| v + 0.3);
        let c = ssim_components(a, shifted.view(), &SsimParams::default(), None).unwrap();
        assert!(c.luminance < 1.0);
        assert!((c.structure - 1.0).abs() < 1e-12);
        assert!((c.contrast - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_window_must_fit() {
        let a = Array2::<f64>::zeros((5, 5));
        assert!(ssim_2d(a.view(), a.view(), &SsimParams::default(), None).is_err());
    }

    #[test]
    fn error_map_consistent_with_ser() {
        let r = SliceStack::new(
            Array3::from_shape_vec(
                (1, 2, 2),
                vec![C64::new(3.0, 0.0), C64::new(4.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0)],
            )
            .unwrap(),
        )
        .unwrap();
        let x = SliceStack::new(
            Array3::from_shape_vec(
                (1, 2, 2),
                vec![C64::new(3.0, 0.0), C64::new(3.5, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0)],
            )
            .unwrap(),
        )
        .unwrap();
        let e = error_map(&r, &x, 1.24).unwrap();
        assert_eq!(e.scale, 1.24);
        let err: f64 = e.values.iter().map(|v| v * v).sum();
        let expected = 20.0 * (5.0 / err.sqrt()).log10();
        assert!((ser(&r, &x, None).unwrap() - expected).abs() < 1e-12);
        assert!(error_map(&r, &r, 1.0).unwrap().values.iter().all(|&v| v == 0.0));
    }
}
