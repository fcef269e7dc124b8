use std::path::Path;

use ndarray::{s, Array2, Array3};
use serde::{Deserialize, Serialize};

use super::{write_atomic, write_text};
use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum WindowMode {
    /// Image minimum to maximum.
    MinMax,
    /// Fixed range.
    Fixed { lo: f64, hi: f64 },
    /// Percentiles in `[0, 100]`.
    Percentile { lo: f64, hi: f64 },
}

/// Resolved gray-level window: `lo` maps to 0, `hi` to 255.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Window {
    pub mode: WindowMode,
    pub lo: f64,
    pub hi: f64,
}

impl Window {
    pub fn resolve(mode: WindowMode, img: &Array2<f64>) -> Result<Self> {
        check_finite(img)?;
        let (lo, hi) = match mode {
            WindowMode::MinMax => img.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v))),
            WindowMode::Fixed { lo, hi } => (lo, hi),
            WindowMode::Percentile { lo, hi } => {
                if !(0.0..=100.0).contains(&lo) || !(0.0..=100.0).contains(&hi) {
                    return invalid(format!("percentiles {lo}, {hi} outside [0, 100]"));
                }
                let mut v: Vec<f64> = img.iter().cloned().collect();
                v.sort_by(f64::total_cmp);
                let at = |p: f64| v[((p / 100.0) * (v.len() - 1) as f64).round() as usize];
                (at(lo), at(hi))
            }
        };
        if !(lo.is_finite() && hi.is_finite()) || hi < lo {
            return invalid(format!("bad window [{lo}, {hi}]"));
        }
        Ok(Self { mode, lo, hi })
    }

    fn sidecar(&self) -> String {
        let mode = match self.mode {
            WindowMode::MinMax => "min_max".to_string(),
            WindowMode::Fixed { .. } => "fixed".to_string(),
            WindowMode::Percentile { lo, hi } => format!("percentile({lo}, {hi})"),
        };
        format!("mode = {mode}\nlo = {:e}\nhi = {:e}\n", self.lo, self.hi)
    }
}

fn check_finite(img: &Array2<f64>) -> Result<()> {
    let bad: Vec<String> =
        img.indexed_iter().filter(|(_, v)| !v.is_finite()).take(10).map(|((y, x), _)| format!("({y}, {x})")).collect();
    if bad.is_empty() {
        return Ok(());
    }
    let total = img.iter().filter(|v| !v.is_finite()).count();
    Err(Error::NonFinite(format!("{total} pixel(s), first {}", bad.join(" "))))
}

/// 8-bit gray levels; a zero-width window maps everything to 0.
pub fn to_gray(img: &Array2<f64>, w: &Window) -> Vec<u8> {
    let span = w.hi - w.lo;
    img.iter().map(|&v| if span > 0.0 { ((v - w.lo) / span * 255.0).round().clamp(0.0, 255.0) as u8 } else { 0 }).collect()
}

/// Binary PGM at `path` plus `<path>.window.txt` recording the window.
pub fn export_magnitude(path: &Path, img: &Array2<f64>, mode: WindowMode) -> Result<Window> {
    let w = Window::resolve(mode, img)?;
    let (h, wd) = img.dim();
    let mut bytes = format!("P5\n{wd} {h}\n255\n").into_bytes();
    bytes.extend(to_gray(img, &w));
    write_atomic(path, &bytes)?;
    let mut side = path.as_os_str().to_owned();
    side.push(".window.txt");
    write_text(Path::new(&side), &w.sidecar())?;
    Ok(w)
}

/// Slices side by side: `N_y x (MB * N_x)`.
pub fn mosaic(stack: &Array3<f64>) -> Array2<f64> {
    let (mb, ny, nx) = stack.dim();
    let mut out = Array2::zeros((ny, mb * nx));
    for sl in 0..mb {
        out.slice_mut(s![.., sl * nx..(sl + 1) * nx]).assign(&stack.slice(s![sl, .., ..]));
    }
    out
}

pub fn export_mosaic(path: &Path, stack: &Array3<f64>, mode: WindowMode) -> Result<Window> {
    export_magnitude(path, &mosaic(stack), mode)
}
