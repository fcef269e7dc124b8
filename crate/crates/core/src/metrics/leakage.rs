use ndarray::Array2;

use crate::error::{Error, Result};
use crate::model::SliceStack;

/// Slice-leakage matrix from single-slice inputs.
///
/// For each slice `s`, `run` simulates and reconstructs `content` with
/// every other slice zeroed. `L[s][t] = |recon_t| / |recon_s|`, so the
/// diagonal is 1.
pub fn leakage_matrix<F>(content: &SliceStack, run: F) -> Result<Array2<f64>>
where
    F: Fn(&SliceStack) -> Result<SliceStack>,
{
    let mb = content.mb();
    let mut out = Array2::zeros((mb, mb));
    for s in 0..mb {
        let recon = run(&content.isolate(s))?;
        if recon.mb() != mb {
            return Err(Error::Experiment(format!("reconstruction has {} slices, expected {mb}", recon.mb())));
        }
        let energy: Vec<f64> = (0..mb).map(|t| recon.slice(t).iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()).collect();
        if energy[s] == 0.0 || !energy[s].is_finite() {
            return Err(Error::Experiment(format!("no signal recovered in slice {s}")));
        }
        for t in 0..mb {
            out[[s, t]] = energy[t] / energy[s];
        }
    }
    Ok(out)
}
