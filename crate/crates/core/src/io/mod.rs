//! Files: the binary array container, grayscale image export, mask and
//! kernel files, text reports. Every write goes through a temporary file
//! in the target directory followed by a rename.

mod container;
mod image;
mod kernels;

pub use container::{decode_array, encode_array, read_array, write_array, DTYPE_COMPLEX64, MAGIC, VERSION};
pub use image::{export_magnitude, export_mosaic, mosaic, to_gray, Window, WindowMode};
pub use kernels::{read_kernels, write_kernels};

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::Result;
use crate::sampling::{masks_from_text, masks_to_text, SamplingMask};

/// Write `bytes` to `path` via a sibling temporary file and a rename, so
/// readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let mut f = fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    drop(f);
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}

pub fn write_masks(path: &Path, masks: &[SamplingMask]) -> Result<()> {
    write_text(path, &masks_to_text(masks)?)
}

pub fn read_masks(path: &Path) -> Result<Vec<SamplingMask>> {
    masks_from_text(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_and_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        write_text(&p, "one").unwrap();
        write_text(&p, "two").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn masks_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.txt");
        let masks: Vec<_> = (0..3).map(|f| SamplingMask::cava(60, 4, f, 9).unwrap()).collect();
        write_masks(&p, &masks).unwrap();
        assert_eq!(read_masks(&p).unwrap(), masks);
    }
}
