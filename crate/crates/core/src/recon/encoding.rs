//! Matrix-free SENSE encoding for extended and collapsed PE grids.
//!
//! Masks act on whole PE lines, so the readout transform cancels in the
//! normal operator and everything runs in the hybrid `(ky, x)` domain.

use ndarray::{s, Array2, Array3, Axis, Zip};
use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::fft::CenteredFft;
use crate::model::{CoilMapSet, Grid, KSpaceData, PhaseTable, Placement, C64, ZERO};
use crate::sampling::SamplingMask;

#[derive(Clone, Debug)]
enum Layout {
    Extended(Placement),
    Collapsed(PhaseTable),
}

/// Encoding of per-slice images `(slice, y, x)` into multi-coil k-space on
/// a given grid, restricted to the sampled PE lines.
#[derive(Clone, Debug)]
pub struct SenseOperator<'a> {
    maps: &'a CoilMapSet,
    keep: Vec<bool>,
    layout: Layout,
    pe: CenteredFft,
    ro: CenteredFft,
}

impl<'a> SenseOperator<'a> {
    pub fn new(maps: &'a CoilMapSet, grid: &Grid, mask: &SamplingMask) -> Result<Self> {
        let layout = match grid {
            Grid::Extended { placement } => {
                placement.validate()?;
                if placement.mb() != maps.mb() || placement.n_y != maps.ny() {
                    return invalid(format!(
                        "placement of {} slices x {} rows does not match maps of {} slices x {} rows",
                        placement.mb(),
                        placement.n_y,
                        maps.mb(),
                        maps.ny()
                    ));
                }
                Layout::Extended(placement.clone())
            }
            Grid::Collapsed { n_y, phases } => {
                if *n_y != maps.ny() || phases.mb() != maps.mb() || phases.n_lines() != *n_y {
                    return invalid(format!(
                        "collapsed grid of {n_y} lines with {}x{} phases does not match maps of {} slices x {} rows",
                        phases.n_lines(),
                        phases.mb(),
                        maps.mb(),
                        maps.ny()
                    ));
                }
                Layout::Collapsed(phases.clone())
            }
        };
        let n_pe = grid.pe_lines();
        if mask.n_pe() != n_pe {
            return invalid(format!("mask has {} PE lines, grid has {n_pe}", mask.n_pe()));
        }
        Ok(Self { maps, keep: mask.keep().to_vec(), layout, pe: CenteredFft::new(n_pe), ro: CenteredFft::new(maps.nx()) })
    }

    pub fn maps(&self) -> &CoilMapSet {
        self.maps
    }

    pub fn image_shape(&self) -> (usize, usize, usize) {
        (self.maps.mb(), self.maps.ny(), self.maps.nx())
    }

    pub fn n_pe(&self) -> usize {
        self.keep.len()
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    pub fn overlapping(&self) -> bool {
        matches!(&self.layout, Layout::Extended(p) if p.has_overlap())
    }

    fn zero_unsampled(&self, h: &mut Array2<C64>) {
        for (ky, mut row) in h.outer_iter_mut().enumerate() {
            if !self.keep[ky] {
                row.fill(ZERO);
            }
        }
    }

    /// Coil `c` hybrid data `(ky, x)` -> contribution to `A^H` in image space.
    fn adjoint_coil(&self, c: usize, mut h: Array2<C64>, out: &mut Array3<C64>) {
        let ny = self.maps.ny();
        match &self.layout {
            Layout::Extended(p) => {
                self.pe.along_axis(&mut h.view_mut(), Axis(0), true);
                for (s, &o) in p.offsets.iter().enumerate() {
                    let seg = h.slice(s![o..o + ny, ..]);
                    Zip::from(out.index_axis_mut(Axis(0), s))
                        .and(&self.maps.map(c, s))
                        .and(&seg)
                        .for_each(|acc, &m, &v| *acc += m.conj() * v);
                }
            }
            Layout::Collapsed(ph) => {
                for s in 0..self.maps.mb() {
                    let mut g = h.clone();
                    for (m, mut row) in g.outer_iter_mut().enumerate() {
                        let f = ph.factor(m, s).conj();
                        row.mapv_inplace(|v| v * f);
                    }
                    self.pe.along_axis(&mut g.view_mut(), Axis(0), true);
                    Zip::from(out.index_axis_mut(Axis(0), s))
                        .and(&self.maps.map(c, s))
                        .and(&g)
                        .for_each(|acc, &m, &v| *acc += m.conj() * v);
                }
            }
        }
    }

    /// Coil `c` image -> hybrid data `(ky, x)`, unsampled lines zeroed.
    fn forward_coil(&self, c: usize, x: &Array3<C64>) -> Array2<C64> {
        let (_, ny, nx) = x.dim();
        match &self.layout {
            Layout::Extended(p) => {
                let mut e = Array2::zeros((p.rows(), nx));
                for (s, &o) in p.offsets.iter().enumerate() {
                    let mut seg = e.slice_mut(s![o..o + ny, ..]);
                    Zip::from(&mut seg)
                        .and(&self.maps.map(c, s))
                        .and(&x.index_axis(Axis(0), s))
                        .for_each(|d, &m, &v| *d += m * v);
                }
                self.pe.along_axis(&mut e.view_mut(), Axis(0), false);
                self.zero_unsampled(&mut e);
                e
            }
            Layout::Collapsed(ph) => {
                let mut h = Array2::zeros((ny, nx));
                for s in 0..self.maps.mb() {
                    let mut v = &self.maps.map(c, s) * &x.index_axis(Axis(0), s);
                    self.pe.along_axis(&mut v.view_mut(), Axis(0), false);
                    for (m, (mut dst, src)) in h.outer_iter_mut().zip(v.outer_iter()).enumerate() {
                        let f = ph.factor(m, s);
                        dst.zip_mut_with(&src, |d, &w| *d += f * w);
                    }
                }
                self.zero_unsampled(&mut h);
                h
            }
        }
    }

    fn sum_over_coils<F>(&self, per_coil: F) -> Array3<C64>
    where
        F: Fn(usize) -> Array3<C64> + Sync + Send,
    {
        let parts: Vec<Array3<C64>> = (0..self.maps.n_coils()).into_par_iter().map(per_coil).collect();
        let mut acc = Array3::zeros(self.image_shape());
        for p in parts {
            acc += &p;
        }
        acc
    }

    /// `A^H A x`.
    pub fn normal(&self, x: &Array3<C64>) -> Array3<C64> {
        self.sum_over_coils(|c| {
            let mut out = Array3::zeros(self.image_shape());
            let h = self.forward_coil(c, x);
            self.adjoint_coil(c, h, &mut out);
            out
        })
    }

    /// `A x` as full k-space `(coil, ky, kx)`.
    pub fn forward(&self, x: &Array3<C64>) -> Array3<C64> {
        let nx = self.maps.nx();
        let mut out = Array3::zeros((self.maps.n_coils(), self.n_pe(), nx));
        let parts: Vec<Array2<C64>> = (0..self.maps.n_coils())
            .into_par_iter()
            .map(|c| {
                let mut h = self.forward_coil(c, x);
                self.ro.along_axis(&mut h.view_mut(), Axis(1), false);
                h
            })
            .collect();
        for (c, h) in parts.into_iter().enumerate() {
            out.index_axis_mut(Axis(0), c).assign(&h);
        }
        out
    }

    /// `A^H k` for k-space `(coil, ky, kx)`; unsampled lines are ignored.
    pub fn adjoint(&self, k: &Array3<C64>) -> Result<Array3<C64>> {
        let (nc, nky, nkx) = k.dim();
        if nc != self.maps.n_coils() || nky != self.n_pe() || nkx != self.maps.nx() {
            return invalid(format!(
                "k-space {nc}x{nky}x{nkx} does not match {} coils on a {}x{} grid",
                self.maps.n_coils(),
                self.n_pe(),
                self.maps.nx()
            ));
        }
        Ok(self.sum_over_coils(|c| {
            let mut h = k.index_axis(Axis(0), c).to_owned();
            self.zero_unsampled(&mut h);
            self.ro.along_axis(&mut h.view_mut(), Axis(1), true);
            let mut out = Array3::zeros(self.image_shape());
            self.adjoint_coil(c, h, &mut out);
            out
        }))
    }

    pub fn adjoint_data(&self, k: &KSpaceData) -> Result<Array3<C64>> {
        self.adjoint(&k.data)
    }
}

/// `(1/L) sum_k mask_k exp(2 pi i k_c d / L)` for `d` in `0..L`: the
/// circulant kernel of `F^H M F` along PE.
pub fn mask_kernel(keep: &[bool]) -> Vec<C64> {
    let n = keep.len();
    let c = (n / 2) as f64;
    (0..n)
        .map(|d| {
            keep.iter()
                .enumerate()
                .filter(|(_, &k)| k)
                .map(|(k, _)| C64::from_polar(1.0, 2.0 * std::f64::consts::PI * (k as f64 - c) * d as f64 / n as f64))
                .sum::<C64>()
                / n as f64
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{assemble_extended, caipi_forward, smile_forward, SliceStack};
    use crate::phantom::{make_coil_maps, CoilSpec};
    use crate::rng::{complex_normal, rng_from};

    fn rand3(shape: (usize, usize, usize), seed: u64) -> Array3<C64> {
        let mut rng = rng_from(seed, 0);
        Array3::from_shape_simple_fn(shape, || complex_normal(&mut rng, 1.0))
    }

    fn inner(a: &Array3<C64>, b: &Array3<C64>) -> C64 {
        a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
    }

    #[test]
    fn forward_matches_model_extended() {
        let maps = make_coil_maps(&CoilSpec { n_coils: 3, support: [3, 3], ..CoilSpec::default() }, 2, 8, 6).unwrap();
        let x = rand3((2, 8, 6), 1);
        let p = Placement::uniform(2, 8, 2).unwrap();
        let mask = SamplingMask::random(16, 2, 3).unwrap();
        let k =
            smile_forward(&assemble_extended(&SliceStack::new(x.clone()).unwrap(), &maps, &p).unwrap(), &mask, 0.0, 0).unwrap();
        let op = SenseOperator::new(&maps, &k.grid, &mask).unwrap();
        let fx = op.forward(&x);
        assert!(fx.iter().zip(k.data.iter()).all(|(a, b)| (a - b).norm() < 1e-12));
    }

    #[test]
    fn forward_matches_model_collapsed() {
        let maps = make_coil_maps(&CoilSpec { n_coils: 3, support: [3, 3], ..CoilSpec::default() }, 3, 9, 6).unwrap();
        let x = rand3((3, 9, 6), 2);
        let mask = SamplingMask::uniform(9, 2, 1).unwrap();
        let k = caipi_forward(&SliceStack::new(x.clone()).unwrap(), &maps, &PhaseTable::caipi(9, 3), &mask, 0.0, 0).unwrap();
        let op = SenseOperator::new(&maps, &k.grid, &mask).unwrap();
        let fx = op.forward(&x);
        assert!(fx.iter().zip(k.data.iter()).all(|(a, b)| (a - b).norm() < 1e-12));
    }

    #[test]
    fn adjoint_and_normal_are_consistent() {
        let maps = make_coil_maps(&CoilSpec { n_coils: 2, support: [3, 3], ..CoilSpec::default() }, 2, 8, 4).unwrap();
        for grid in [
            Grid::Extended { placement: Placement::uniform(2, 8, 3).unwrap() },
            Grid::Collapsed { n_y: 8, phases: PhaseTable::caipi(8, 2) },
        ] {
            let mask = SamplingMask::random(grid.pe_lines(), 2, 5).unwrap();
            let op = SenseOperator::new(&maps, &grid, &mask).unwrap();
            let x = rand3((2, 8, 4), 3);
            let k = rand3((2, grid.pe_lines(), 4), 4);
            let mut km = k.clone();
            for ky in 0..grid.pe_lines() {
                if !mask.is_sampled(ky) {
                    km.slice_mut(s![.., ky, ..]).fill(ZERO);
                }
            }
            let lhs = inner(&op.forward(&x), &km);
            let rhs = inner(&x, &op.adjoint(&k).unwrap());
            assert!((lhs - rhs).norm() < 1e-10 * lhs.norm());
            let n1 = op.normal(&x);
            let n2 = op.adjoint(&op.forward(&x)).unwrap();
            assert!(n1.iter().zip(n2.iter()).all(|(a, b)| (a - b).norm() < 1e-12));
        }
    }

    #[test]
    fn mask_kernel_full_is_delta() {
        let g = mask_kernel(&[true; 6]);
        assert!((g[0] - C64::new(1.0, 0.0)).norm() < 1e-12);
        assert!(g[1..].iter().all(|v| v.norm() < 1e-12));
        let g = mask_kernel(&[true, false, true, false]);
        assert!((g[2] - C64::new(0.5, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let maps = make_coil_maps(&CoilSpec { n_coils: 2, support: [3, 3], ..CoilSpec::default() }, 2, 8, 4).unwrap();
        let g = Grid::Extended { placement: Placement::uniform(3, 8, 3).unwrap() };
        assert!(SenseOperator::new(&maps, &g, &SamplingMask::full(24)).is_err());
        let g = Grid::Extended { placement: Placement::uniform(2, 8, 2).unwrap() };
        assert!(SenseOperator::new(&maps, &g, &SamplingMask::full(24)).is_err());
    }
}
