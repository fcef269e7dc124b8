use std::fmt::Write as _;
use std::time::Duration;

use ndarray::Array2;

use super::quality::{ser, ser_per_slice, ssim, SsimParams};
use crate::error::Result;
use crate::model::SliceStack;
use ndarray::Array3;

/// Quality numbers for one reconstruction method. `runtime` is reported on
/// the console only, so that written files stay reproducible.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub method: String,
    pub ser_db: Vec<f64>,
    pub ser_total_db: f64,
    pub ssim: Vec<f64>,
    pub ssim_params: SsimParams,
    pub g_mean: Option<f64>,
    pub g_max: Option<f64>,
    pub leakage: Option<Array2<f64>>,
    pub runtime: Duration,
    pub failure: Option<String>,
}

impl MetricsReport {
    pub fn evaluate(
        method: &str,
        reference: &SliceStack,
        recon: &SliceStack,
        support: Option<&Array3<bool>>,
        params: &SsimParams,
    ) -> Result<Self> {
        Ok(Self {
            method: method.to_string(),
            ser_db: ser_per_slice(reference, recon, support)?,
            ser_total_db: ser(reference, recon, support)?,
            ssim: ssim(reference, recon, params, support)?,
            ssim_params: *params,
            g_mean: None,
            g_max: None,
            leakage: None,
            runtime: Duration::ZERO,
            failure: None,
        })
    }

    /// Placeholder row for a method that did not produce an image.
    pub fn failed(method: &str, reason: impl Into<String>) -> Self {
        Self {
            method: method.to_string(),
            ser_db: Vec::new(),
            ser_total_db: f64::NAN,
            ssim: Vec::new(),
            ssim_params: SsimParams::default(),
            g_mean: None,
            g_max: None,
            leakage: None,
            runtime: Duration::ZERO,
            failure: Some(reason.into()),
        }
    }

    pub fn mean_ssim(&self) -> f64 {
        self.ssim.iter().sum::<f64>() / self.ssim.len() as f64
    }

    pub fn max_off_diagonal_leakage(&self) -> Option<f64> {
        self.leakage.as_ref().map(|l| l.indexed_iter().filter(|((s, t), _)| s != t).map(|(_, &v)| v).fold(0.0, f64::max))
    }

    pub fn csv_header() -> &'static str {
        "method,slice,ser_db,ssim,g_mean,g_max,status"
    }

    /// One row per slice and an `all` row.
    pub fn csv_rows(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        let status = self.failure.as_deref().map_or("ok".to_string(), |f| format!("failed: {}", f.replace(',', ";")));
        let mut out = String::new();
        for (s, (e, q)) in self.ser_db.iter().zip(&self.ssim).enumerate() {
            let _ = writeln!(out, "{},{s},{e:.6},{q:.6},,,{status}", self.method);
        }
        let agg_ssim = if self.ssim.is_empty() { String::new() } else { format!("{:.6}", self.mean_ssim()) };
        let agg_ser = if self.ser_total_db.is_finite() { format!("{:.6}", self.ser_total_db) } else { String::new() };
        let _ = writeln!(out, "{},all,{agg_ser},{agg_ssim},{},{},{status}", self.method, opt(self.g_mean), opt(self.g_max));
        out
    }

    pub fn to_csv(reports: &[MetricsReport]) -> String {
        let mut out = format!("{}\n", Self::csv_header());
        for r in reports {
            out.push_str(&r.csv_rows());
        }
        out
    }

    /// Leakage matrix as CSV, rows = source slice.
    pub fn leakage_csv(&self) -> Option<String> {
        let l = self.leakage.as_ref()?;
        let mut out = String::from("source");
        for t in 0..l.ncols() {
            let _ = write!(out, ",slice{t}");
        }
        out.push('\n');
        for (s, row) in l.outer_iter().enumerate() {
            let _ = write!(out, "{s}");
            for v in row {
                let _ = write!(out, ",{v:.6e}");
            }
            out.push('\n');
        }
        Some(out)
    }

    pub fn summary(&self) -> String {
        if let Some(f) = &self.failure {
            return format!("{}: failed: {f}\n", self.method);
        }
        let p = &self.ssim_params;
        let mut out = format!(
            "{}: SER {:.2} dB, mean SSIM {:.4} (window {}, k1 {}, k2 {}, range {})\n",
            self.method,
            self.ser_total_db,
            self.mean_ssim(),
            p.window,
            p.k1,
            p.k2,
            p.dynamic_range
        );
        if let (Some(m), Some(x)) = (self.g_mean, self.g_max) {
            let _ = writeln!(out, "  g-factor mean {m:.3}, max {x:.3}");
        }
        if let Some(l) = self.max_off_diagonal_leakage() {
            let _ = writeln!(out, "  max off-diagonal leakage {l:.3e}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{make_phantom, PhantomSpec};

    #[test]
    fn csv_has_row_per_slice_and_aggregate() {
        let p = make_phantom(&PhantomSpec { nx: 32, ny: 32, ..PhantomSpec::default() }).unwrap();
        let mut r = MetricsReport::evaluate("smile", &p, &p, None, &SsimParams::default()).unwrap();
        r.leakage = Some(Array2::eye(3));
        let csv = MetricsReport::to_csv(&[r.clone(), MetricsReport::failed("caipi", "singular, badly")]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 1 + 4 + 1);
        assert!(lines[4].starts_with("smile,all,300.000000,1.000000"));
        assert!(lines[5].contains("failed: singular; badly"));
        assert_eq!(r.max_off_diagonal_leakage(), Some(0.0));
        assert_eq!(r.leakage_csv().unwrap().lines().count(), 4);
        assert!(!r.summary().contains("runtime"));
    }
}
