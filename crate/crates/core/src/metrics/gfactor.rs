use ndarray::{Array2, Array3, Zip};
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::model::{Grid, KSpaceData, C64};
use crate::rng::{complex_normal, derive_seed, rng_from};
use crate::sampling::SamplingMask;

/// Shape of the k-space a reconstruction consumes.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplicaGeometry {
    pub grid: Grid,
    pub n_coils: usize,
    pub n_ro: usize,
}

/// Pure noise k-space: white complex Gaussian of power `sigma^2` on the
/// sampled lines, zero elsewhere.
pub fn noise_kspace(geom: &ReplicaGeometry, mask: &SamplingMask, sigma: f64, seed: u64) -> Result<KSpaceData> {
    let n_pe = geom.grid.pe_lines();
    if mask.n_pe() != n_pe {
        return invalid(format!("mask has {} lines, grid has {n_pe}", mask.n_pe()));
    }
    let mut rng = rng_from(seed, 0x7265_706c);
    let mut data = Array3::zeros((geom.n_coils, n_pe, geom.n_ro));
    for c in 0..geom.n_coils {
        for m in (0..n_pe).filter(|&m| mask.is_sampled(m)) {
            for x in 0..geom.n_ro {
                data[[c, m, x]] = complex_normal(&mut rng, sigma);
            }
        }
    }
    Ok(KSpaceData { data, grid: geom.grid.clone(), mask: Some(mask.clone()) })
}

/// Noise amplification per pixel, `(slice, y, x)`. Zero off the support;
/// `+inf` where the accelerated problem does not determine the pixel.
#[derive(Clone, Debug)]
pub struct GFactorMap {
    pub values: Array3<f64>,
    pub support: Array3<bool>,
    pub trials: usize,
    pub dropped: usize,
    /// Lines on the full grid over sampled lines.
    pub accel: f64,
    pub mask: String,
}

impl GFactorMap {
    fn on_support(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().zip(self.support.iter()).filter(|(_, &s)| s).map(|(&v, _)| v)
    }

    pub fn mean(&self) -> f64 {
        let (sum, n) = self.on_support().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
        sum / n as f64
    }

    pub fn max(&self) -> f64 {
        self.on_support().fold(0.0, f64::max)
    }

    /// Support pixels with infinite g.
    pub fn unresolved(&self) -> usize {
        self.on_support().filter(|v| v.is_infinite()).count()
    }

    /// Values on the given slice, for export.
    pub fn slice(&self, s: usize) -> Array2<f64> {
        self.values.index_axis(ndarray::Axis(0), s).to_owned()
    }
}

struct Moments {
    sum: Array3<C64>,
    power: Array3<f64>,
}

impl Moments {
    fn new(shape: (usize, usize, usize)) -> Self {
        Self { sum: Array3::zeros(shape), power: Array3::zeros(shape) }
    }

    fn add(&mut self, x: &Array3<C64>) -> Result<()> {
        if x.dim() != self.sum.dim() {
            return invalid(format!("reconstruction shape {:?}, expected {:?}", x.dim(), self.sum.dim()));
        }
        self.sum += x;
        Zip::from(&mut self.power).and(x).for_each(|p, v| *p += v.norm_sqr());
        Ok(())
    }

    /// Sample standard deviation of the complex values.
    fn std(&self, n: usize) -> Array3<f64> {
        let t = n as f64;
        let mut out = self.power.clone();
        Zip::from(&mut out).and(&self.sum).for_each(|p, s| *p = ((*p - s.norm_sqr() / t).max(0.0) / (t - 1.0)).sqrt());
        out
    }
}

/// Restrict full-grid k-space to the sampled lines of `mask`.
fn undersample(full: &KSpaceData, mask: &SamplingMask) -> KSpaceData {
    let mut data = full.data.clone();
    for (m, &keep) in mask.keep().iter().enumerate() {
        if !keep {
            data.index_axis_mut(ndarray::Axis(1), m).fill(C64::new(0.0, 0.0));
        }
    }
    KSpaceData { data, grid: full.grid.clone(), mask: Some(mask.clone()) }
}

/// Run `trials` noise reconstructions in parallel batches; results are
/// accumulated in trial order. Returns (moments per output, kept trials).
fn replicate<T>(trials: usize, shape: (usize, usize, usize), outputs: usize, trial: T) -> Result<(Vec<Moments>, usize)>
where
    T: Fn(usize) -> Option<Vec<Array3<C64>>> + Sync,
{
    let mut moments: Vec<Moments> = (0..outputs).map(|_| Moments::new(shape)).collect();
    let mut kept = 0;
    let chunk = 2 * rayon::current_num_threads().max(1);
    let mut start = 0;
    while start < trials {
        let end = (start + chunk).min(trials);
        let batch: Vec<Option<Vec<Array3<C64>>>> = (start..end).into_par_iter().map(&trial).collect();
        for xs in batch.into_iter().flatten() {
            if xs.iter().any(|x| x.iter().any(|v| !v.is_finite())) {
                continue;
            }
            for (m, x) in moments.iter_mut().zip(&xs) {
                m.add(x)?;
            }
            kept += 1;
        }
        start = end;
    }
    let dropped = trials - kept;
    if dropped * 4 > trials || kept < 2 {
        return Err(Error::Experiment(format!("{dropped} of {trials} replica trials failed")));
    }
    Ok((moments, kept))
}

fn g_from(
    sa: &Array3<f64>,
    sf: &Array3<f64>,
    mask: &SamplingMask,
    support: &Array3<bool>,
    unresolved: Option<&Array3<bool>>,
) -> Result<Array3<f64>> {
    if sa.dim() != support.dim() || sf.dim() != support.dim() {
        return invalid("support shape does not match the reconstructions");
    }
    let r = mask.n_pe() as f64 / mask.count() as f64;
    let mut values = Array3::zeros(support.dim());
    Zip::indexed(&mut values).and(sa).and(sf).for_each(|(s, y, x), g, &a, &f| {
        if !support[[s, y, x]] {
            return;
        }
        *g = if unresolved.is_some_and(|u| u[[s, y, x]]) || f == 0.0 { f64::INFINITY } else { a / (f * r.sqrt()) };
    });
    Ok(values)
}

fn check_trials(trials: usize, mask: &SamplingMask) -> Result<()> {
    if trials < 2 {
        return invalid(format!("need at least 2 trials, got {trials}"));
    }
    if mask.count() == 0 {
        return invalid("mask samples no lines");
    }
    Ok(())
}

/// Pseudo-multiple-replica g-factor.
///
/// Each trial draws unit-variance noise on the full grid, reconstructs it
/// with `full`, and reconstructs its sampled lines with `accelerated`.
/// `g = std_acc / (std_full * sqrt(R))` with `R = lines / sampled lines`.
/// A trial whose reconstruction fails is dropped; more than a quarter
/// dropped is an error. Pixels flagged in `unresolved` get `+inf`.
#[allow(clippy::too_many_arguments)]
pub fn g_factor_pseudo_replica<A, F>(
    accelerated: A,
    full: F,
    geom: &ReplicaGeometry,
    mask: &SamplingMask,
    support: &Array3<bool>,
    unresolved: Option<&Array3<bool>>,
    trials: usize,
    seed: u64,
) -> Result<GFactorMap>
where
    A: Fn(&KSpaceData) -> Result<Array3<C64>> + Sync,
    F: Fn(&KSpaceData) -> Result<Array3<C64>> + Sync,
{
    check_trials(trials, mask)?;
    let full_mask = SamplingMask::full(mask.n_pe());
    let (m, kept) = replicate(trials, support.dim(), 2, |t| {
        let f = noise_kspace(geom, &full_mask, 1.0, derive_seed(seed, t as u64)).ok()?;
        let xa = accelerated(&undersample(&f, mask)).ok()?;
        let xf = full(&f).ok()?;
        Some(vec![xa, xf])
    })?;
    let values = g_from(&m[0].std(kept), &m[1].std(kept), mask, support, unresolved)?;
    Ok(GFactorMap {
        values,
        support: support.clone(),
        trials: kept,
        dropped: trials - kept,
        accel: mask.n_pe() as f64 / mask.count() as f64,
        mask: mask.generator().to_string(),
    })
}

/// Per-pixel noise standard deviation of fully sampled reconstructions,
/// for reuse across many masks.
pub fn reference_noise_std<F>(
    full: F,
    geom: &ReplicaGeometry,
    shape: (usize, usize, usize),
    trials: usize,
    seed: u64,
) -> Result<Array3<f64>>
where
    F: Fn(&KSpaceData) -> Result<Array3<C64>> + Sync,
{
    let full_mask = SamplingMask::full(geom.grid.pe_lines());
    check_trials(trials, &full_mask)?;
    let (m, kept) = replicate(trials, shape, 1, |t| {
        let f = noise_kspace(geom, &full_mask, 1.0, derive_seed(seed, t as u64)).ok()?;
        Some(vec![full(&f).ok()?])
    })?;
    Ok(m[0].std(kept))
}

/// g-factor against a precomputed fully sampled noise level.
#[allow(clippy::too_many_arguments)]
pub fn g_factor_with_reference<A>(
    accelerated: A,
    reference_std: &Array3<f64>,
    geom: &ReplicaGeometry,
    mask: &SamplingMask,
    support: &Array3<bool>,
    unresolved: Option<&Array3<bool>>,
    trials: usize,
    seed: u64,
) -> Result<GFactorMap>
where
    A: Fn(&KSpaceData) -> Result<Array3<C64>> + Sync,
{
    check_trials(trials, mask)?;
    let (m, kept) = replicate(trials, support.dim(), 1, |t| {
        let a = noise_kspace(geom, mask, 1.0, derive_seed(seed, t as u64)).ok()?;
        Some(vec![accelerated(&a).ok()?])
    })?;
    let values = g_from(&m[0].std(kept), reference_std, mask, support, unresolved)?;
    Ok(GFactorMap {
        values,
        support: support.clone(),
        trials: kept,
        dropped: trials - kept,
        accel: mask.n_pe() as f64 / mask.count() as f64,
        mask: mask.generator().to_string(),
    })
}
