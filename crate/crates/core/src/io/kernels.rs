use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Axis, Ix4};

use super::{read_array, write_array, write_text};
use crate::calib::{KernelKind, KernelSet};
use crate::error::{Error, Result};

fn meta_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".meta");
    PathBuf::from(p)
}

/// Kernel taps as a `(kernel, coil, E_y, E_x)` container at `path` and the
/// remaining fields as `key = value` text at `<path>.meta`.
pub fn write_kernels(path: &Path, set: &KernelSet) -> Result<()> {
    if set.is_empty() {
        return Err(Error::InvalidArgument("kernel set is empty".into()));
    }
    write_array(path, set.stacked().view())?;
    let kind = match set.kind {
        KernelKind::Annihilating => "annihilating",
        KernelKind::Prediction => "prediction",
    };
    let mut meta = format!(
        "kind = {kind}\nsize = {} {}\nn_coils = {}\nsigma_max = {:e}\n",
        set.size[0], set.size[1], set.n_coils, set.sigma_max
    );
    let _ = writeln!(meta, "designated = {}", set.designated.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(" "));
    let _ = writeln!(meta, "residuals = {}", set.residuals.iter().map(|r| format!("{r:e}")).collect::<Vec<_>>().join(" "));
    write_text(&meta_path(path), &meta)
}

pub fn read_kernels(path: &Path) -> Result<KernelSet> {
    let corrupt = |reason: String| Error::CorruptFile { path: meta_path(path), reason };
    let taps = read_array(path)?
        .into_dimensionality::<Ix4>()
        .map_err(|e| Error::CorruptFile { path: path.to_path_buf(), reason: format!("kernel container must be 4-D: {e}") })?;
    let text = fs::read_to_string(meta_path(path))?;
    let mut kind = None;
    let mut size = None;
    let mut n_coils = None;
    let mut sigma_max = None;
    let mut designated = Vec::new();
    let mut residuals = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line.split_once('=').ok_or_else(|| corrupt(format!("malformed line '{line}'")))?;
        let v = v.trim();
        let nums = |v: &str| v.split_whitespace().map(|t| t.parse::<f64>()).collect::<std::result::Result<Vec<_>, _>>();
        let bad = |e: std::num::ParseFloatError| corrupt(format!("bad number in '{line}': {e}"));
        match k.trim() {
            "kind" => {
                kind = Some(match v {
                    "annihilating" => KernelKind::Annihilating,
                    "prediction" => KernelKind::Prediction,
                    other => return Err(corrupt(format!("unknown kernel kind '{other}'"))),
                })
            }
            "size" => {
                let s = nums(v).map_err(bad)?;
                size = (s.len() == 2).then(|| [s[0] as usize, s[1] as usize]);
            }
            "n_coils" => n_coils = Some(nums(v).map_err(bad)?.first().copied().unwrap_or(0.0) as usize),
            "sigma_max" => sigma_max = nums(v).map_err(bad)?.first().copied(),
            "designated" => designated = nums(v).map_err(bad)?.into_iter().map(|d| d as usize).collect(),
            "residuals" => residuals = nums(v).map_err(bad)?,
            other => return Err(corrupt(format!("unknown key '{other}'"))),
        }
    }
    let (Some(kind), Some(size), Some(n_coils), Some(sigma_max)) = (kind, size, n_coils, sigma_max) else {
        return Err(corrupt("missing header fields".into()));
    };
    let (nk, nc, ey, ex) = taps.dim();
    if nc != n_coils || [ex, ey] != size || designated.len() != nk || residuals.len() != nk {
        return Err(corrupt("metadata does not match the kernel container".into()));
    }
    Ok(KernelSet {
        kernels: taps.axis_iter(Axis(0)).map(|k| k.to_owned()).collect(),
        kind,
        residuals,
        sigma_max,
        designated,
        size,
        n_coils,
    })
}
