//! Phase-encoding sampling masks, point spread functions and the genetic
//! mask optimizer.

mod ga;
mod psf;

pub use ga::{ga_optimize, GaConfig, GaOutcome};
pub use psf::{alias_lobes, mask_psf, peak_count, AliasLobes};

use std::fmt;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::rng_from;

/// Golden-ratio fraction used for the CAVA increment.
pub const GOLDEN_FRACTION: f64 = 0.618_033_988_749_894_8;

/// Center-density exponent of the CAVA warp. 1 is uniform density.
pub const CAVA_WARP: f64 = 1.5;

/// How a mask was produced.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MaskGenerator {
    Full,
    Uniform { offset: usize },
    Random { seed: u64 },
    Poisson { seed: u64, min_gap: usize, gap_reduced: bool },
    Cava { seed: u64, frame: usize },
    Ga { seed: u64 },
    Custom,
}

impl MaskGenerator {
    pub fn name(&self) -> &'static str {
        match self {
            MaskGenerator::Full => "full",
            MaskGenerator::Uniform { .. } => "uniform",
            MaskGenerator::Random { .. } => "random",
            MaskGenerator::Poisson { .. } => "poisson",
            MaskGenerator::Cava { .. } => "cava",
            MaskGenerator::Ga { .. } => "ga",
            MaskGenerator::Custom => "custom",
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match *self {
            MaskGenerator::Random { seed }
            | MaskGenerator::Poisson { seed, .. }
            | MaskGenerator::Cava { seed, .. }
            | MaskGenerator::Ga { seed } => Some(seed),
            _ => None,
        }
    }
}

impl fmt::Display for MaskGenerator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MaskGenerator::Full | MaskGenerator::Custom => write!(f, "{}", self.name()),
            MaskGenerator::Uniform { offset } => write!(f, "uniform(offset={offset})"),
            MaskGenerator::Random { seed } => write!(f, "random(seed={seed})"),
            MaskGenerator::Poisson { seed, min_gap, gap_reduced } => {
                write!(f, "poisson(seed={seed},min_gap={min_gap},gap_reduced={gap_reduced})")
            }
            MaskGenerator::Cava { seed, frame } => write!(f, "cava(seed={seed},frame={frame})"),
            MaskGenerator::Ga { seed } => write!(f, "ga(seed={seed})"),
        }
    }
}

/// Boolean keep-vector over PE lines with its declared acceleration.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SamplingMask {
    keep: Vec<bool>,
    accel: usize,
    generator: MaskGenerator,
}

/// Sample budget for `n_pe` lines at acceleration `accel`: `N/R` rounded to
/// nearest, exact halves rounded down.
pub fn budget(n_pe: usize, accel: usize) -> usize {
    (2 * n_pe + accel - 1) / (2 * accel)
}

fn check_accel(n_pe: usize, accel: usize) -> Result<()> {
    if accel < 1 || accel > n_pe {
        return invalid(format!("acceleration {accel} outside [1, {n_pe}]"));
    }
    Ok(())
}

impl SamplingMask {
    pub fn new(keep: Vec<bool>, accel: usize, generator: MaskGenerator) -> Result<Self> {
        if !keep.iter().any(|&k| k) {
            return invalid("mask samples no lines");
        }
        if accel < 1 {
            return invalid("acceleration must be >= 1");
        }
        Ok(Self { keep, accel, generator })
    }

    pub fn from_indices(n_pe: usize, indices: &[usize], accel: usize, generator: MaskGenerator) -> Result<Self> {
        let mut keep = vec![false; n_pe];
        for &i in indices {
            if i >= n_pe {
                return invalid(format!("index {i} outside {n_pe} PE lines"));
            }
            keep[i] = true;
        }
        Self::new(keep, accel, generator)
    }

    pub fn full(n_pe: usize) -> Self {
        Self { keep: vec![true; n_pe], accel: 1, generator: MaskGenerator::Full }
    }

    /// Lines congruent to `offset` modulo `accel`.
    pub fn uniform(n_pe: usize, accel: usize, offset: usize) -> Result<Self> {
        check_accel(n_pe, accel)?;
        if offset >= accel {
            return invalid(format!("offset {offset} must be below the acceleration {accel}"));
        }
        let keep = (0..n_pe).map(|i| i % accel == offset).collect();
        Self::new(keep, accel, MaskGenerator::Uniform { offset })
    }

    /// Budget lines drawn uniformly without replacement.
    pub fn random(n_pe: usize, accel: usize, seed: u64) -> Result<Self> {
        check_accel(n_pe, accel)?;
        let mut rng = rng_from(seed, 0x7261_6e64);
        let idx = sample(&mut rng, n_pe, budget(n_pe, accel)).into_vec();
        Self::from_indices(n_pe, &idx, accel, MaskGenerator::Random { seed })
    }

    /// Random lines with consecutive samples at least `floor(R/2)` apart.
    ///
    /// Drawn uniformly over all admissible configurations: pick positions in a
    /// shortened line and stretch each by the gap. When the budget cannot
    /// honor the gap the largest feasible gap is used and flagged.
    pub fn poisson(n_pe: usize, accel: usize, seed: u64) -> Result<Self> {
        check_accel(n_pe, accel)?;
        let k = budget(n_pe, accel);
        let wanted = (accel / 2).max(1);
        let feasible = if k > 1 { ((n_pe - 1) / (k - 1)).max(1) } else { wanted };
        let gap = wanted.min(feasible);
        let span = n_pe - (k - 1) * (gap - 1);
        let mut rng = rng_from(seed, 0x706f_6973);
        let mut idx = sample(&mut rng, span, k).into_vec();
        idx.sort_unstable();
        for (i, v) in idx.iter_mut().enumerate() {
            *v += i * (gap - 1);
        }
        Self::from_indices(n_pe, &idx, accel, MaskGenerator::Poisson { seed, min_gap: gap, gap_reduced: gap < wanted })
    }

    /// Golden-ratio variable-density lines for one frame.
    ///
    /// Sample `j = frame * K + i` sits at `u_j = frac(u_0 + j * phi)` with
    /// `phi = (sqrt(5) - 1) / 2` and `u_0` drawn from the seed. With
    /// `v = 2 u - 1`, the line is `floor((w + 1) / 2 * N)` where
    /// `w = sign(v) |v|^CAVA_WARP`, which packs lines toward the center.
    /// A line already taken in the frame moves to the nearest free line,
    /// lower side first on ties.
    pub fn cava(n_pe: usize, accel: usize, frame: usize, seed: u64) -> Result<Self> {
        check_accel(n_pe, accel)?;
        let idx = cava_indices(n_pe, budget(n_pe, accel), frame, seed);
        Self::from_indices(n_pe, &idx, accel, MaskGenerator::Cava { seed, frame })
    }

    pub fn n_pe(&self) -> usize {
        self.keep.len()
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    pub fn accel(&self) -> usize {
        self.accel
    }

    pub fn generator(&self) -> &MaskGenerator {
        &self.generator
    }

    pub fn with_generator(mut self, generator: MaskGenerator) -> Self {
        self.generator = generator;
        self
    }

    pub fn is_sampled(&self, i: usize) -> bool {
        self.keep[i]
    }

    pub fn count(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.keep.iter().enumerate().filter(|(_, &k)| k).map(|(i, _)| i).collect()
    }

    /// `N_PE / popcount`.
    pub fn effective_accel(&self) -> f64 {
        self.n_pe() as f64 / self.count() as f64
    }

    pub fn meets_budget(&self) -> bool {
        self.count() == budget(self.n_pe(), self.accel)
    }

    /// `0`/`1` characters, one per line.
    pub fn to_bits(&self) -> String {
        self.keep.iter().map(|&k| if k { '1' } else { '0' }).collect()
    }

    /// Uniform mask parameters if the kept lines form one residue class.
    pub fn uniform_offset(&self) -> Option<(usize, usize)> {
        let idx = self.indices();
        let r = if idx.len() > 1 { idx[1] - idx[0] } else { self.n_pe() };
        let off = idx[0];
        if off >= r {
            return None;
        }
        let expect: Vec<usize> = (off..self.n_pe()).step_by(r).collect();
        (expect == idx).then_some((r, off))
    }
}

fn cava_indices(n_pe: usize, k: usize, frame: usize, seed: u64) -> Vec<usize> {
    let u0: f64 = rng_from(seed, 0x6361_7661).random();
    let mut taken = vec![false; n_pe];
    let mut out = Vec::with_capacity(k);
    for i in 0..k {
        let j = (frame * k + i) as f64;
        let u = (u0 + j * GOLDEN_FRACTION).fract();
        let v = 2.0 * u - 1.0;
        let w = v.signum() * v.abs().powf(CAVA_WARP);
        let line = (((w + 1.0) / 2.0 * n_pe as f64).floor() as usize).min(n_pe - 1);
        let line = nearest_free(&taken, line);
        taken[line] = true;
        out.push(line);
    }
    out
}

fn nearest_free(taken: &[bool], at: usize) -> usize {
    if !taken[at] {
        return at;
    }
    for d in 1..taken.len() {
        if at >= d && !taken[at - d] {
            return at - d;
        }
        if at + d < taken.len() && !taken[at + d] {
            return at + d;
        }
    }
    unreachable!("no free line left")
}

/// Text format: a header of `key = value` lines, a blank line, then one
/// row of `0`/`1` characters per frame.
pub fn masks_to_text(masks: &[SamplingMask]) -> Result<String> {
    let first = masks.first().ok_or_else(|| Error::InvalidArgument("no masks to write".into()))?;
    if masks.iter().any(|m| m.n_pe() != first.n_pe()) {
        return invalid("all frames must share the PE length");
    }
    let mut s = String::new();
    s.push_str(&format!("n_pe = {}\n", first.n_pe()));
    s.push_str(&format!("accel = {}\n", first.accel()));
    s.push_str(&format!("generator = {}\n", first.generator()));
    match first.generator().seed() {
        Some(seed) => s.push_str(&format!("seed = {seed}\n")),
        None => s.push_str("seed = none\n"),
    }
    s.push_str(&format!("frames = {}\n\n", masks.len()));
    for m in masks {
        s.push_str(&m.to_bits());
        s.push('\n');
    }
    Ok(s)
}

/// Parse the text format. Generators other than the first frame's are
/// recorded as custom unless they are consecutive CAVA frames.
pub fn masks_from_text(text: &str) -> Result<Vec<SamplingMask>> {
    let mut lines = text.lines();
    let mut n_pe = None;
    let mut accel = None;
    let mut generator = String::new();
    let mut frames = None;
    for line in lines.by_ref() {
        let line = line.trim();
        if line.is_empty() {
            break;
        }
        let (k, v) =
            line.split_once('=').ok_or_else(|| Error::InvalidArgument(format!("malformed mask header line '{line}'")))?;
        let v = v.trim();
        let parse = |v: &str| v.parse::<usize>().map_err(|e| Error::InvalidArgument(format!("bad number '{v}': {e}")));
        match k.trim() {
            "n_pe" => n_pe = Some(parse(v)?),
            "accel" => accel = Some(parse(v)?),
            "frames" => frames = Some(parse(v)?),
            "generator" => generator = v.to_string(),
            "seed" => {}
            other => return invalid(format!("unknown mask header key '{other}'")),
        }
    }
    let n_pe = n_pe.ok_or_else(|| Error::InvalidArgument("mask header lacks n_pe".into()))?;
    let accel = accel.ok_or_else(|| Error::InvalidArgument("mask header lacks accel".into()))?;
    let gen = parse_generator(&generator)?;
    let mut out = Vec::new();
    for (f, row) in lines.filter(|l| !l.trim().is_empty()).enumerate() {
        let row = row.trim();
        if row.len() != n_pe {
            return invalid(format!("frame {f} has {} entries, header says {n_pe}", row.len()));
        }
        let keep = row
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => invalid(format!("unexpected mask character '{other}'")),
            })
            .collect::<Result<Vec<_>>>()?;
        let g = match &gen {
            MaskGenerator::Cava { seed, frame } => MaskGenerator::Cava { seed: *seed, frame: frame + f },
            g if f == 0 => g.clone(),
            _ => MaskGenerator::Custom,
        };
        out.push(SamplingMask::new(keep, accel, g)?);
    }
    if let Some(fr) = frames {
        if fr != out.len() {
            return invalid(format!("header declares {fr} frames, found {}", out.len()));
        }
    }
    Ok(out)
}

fn parse_generator(s: &str) -> Result<MaskGenerator> {
    let (name, args) = match s.split_once('(') {
        Some((n, rest)) => (n, rest.trim_end_matches(')')),
        None => (s, ""),
    };
    let mut kv = std::collections::HashMap::new();
    for part in args.split(',').filter(|p| !p.is_empty()) {
        if let Some((k, v)) = part.split_once('=') {
            kv.insert(k.trim(), v.trim());
        }
    }
    let num = |k: &str| -> Result<u64> {
        kv.get(k)
            .ok_or_else(|| Error::InvalidArgument(format!("generator '{s}' lacks {k}")))?
            .parse()
            .map_err(|e| Error::InvalidArgument(format!("generator '{s}': {e}")))
    };
    Ok(match name {
        "full" => MaskGenerator::Full,
        "custom" | "" => MaskGenerator::Custom,
        "uniform" => MaskGenerator::Uniform { offset: num("offset")? as usize },
        "random" => MaskGenerator::Random { seed: num("seed")? },
        "poisson" => MaskGenerator::Poisson {
            seed: num("seed")?,
            min_gap: num("min_gap")? as usize,
            gap_reduced: kv.get("gap_reduced") == Some(&"true"),
        },
        "cava" => MaskGenerator::Cava { seed: num("seed")?, frame: num("frame")? as usize },
        "ga" => MaskGenerator::Ga { seed: num("seed")? },
        other => return invalid(format!("unknown mask generator '{other}'")),
    })
}
