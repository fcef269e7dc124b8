//! Direct SENSE: one dense Hermitian system per readout column, factored
//! once per mask and reused for every right-hand side.

use faer::linalg::solvers::{Llt, Solve};
use faer::Mat;
use ndarray::Array3;
use rayon::prelude::*;

use super::encoding::{mask_kernel, SenseOperator};
use crate::error::{invalid, Result};
use crate::linalg::factor_hpd;
use crate::model::{CoilMapSet, Grid, KSpaceData, C64};
use crate::rng::{complex_normal, rng_from};
use crate::sampling::SamplingMask;

pub struct ColumnSense<'a> {
    op: SenseOperator<'a>,
    factors: Vec<Llt<C64>>,
    /// Largest diagonal load any column needed; 0 for a well-posed system.
    pub max_load: f64,
    pub lambda: f64,
}

/// PE coupling `G[(s, y), (t, y')]` of `A^H A` before coil weighting.
enum Coupling {
    Extended { kernel: Vec<C64>, offsets: Vec<usize> },
    Collapsed { kernels: Vec<Vec<C64>>, mb: usize },
}

impl Coupling {
    fn new(grid: &Grid, mask: &SamplingMask) -> Self {
        match grid {
            Grid::Extended { placement } => {
                Coupling::Extended { kernel: mask_kernel(mask.keep()), offsets: placement.offsets.clone() }
            }
            Grid::Collapsed { n_y, phases } => {
                let mb = phases.mb();
                let c = (n_y / 2) as f64;
                let mut kernels = Vec::with_capacity(mb * mb);
                for s in 0..mb {
                    for t in 0..mb {
                        let k = (0..*n_y)
                            .map(|d| {
                                (0..*n_y)
                                    .filter(|&m| mask.is_sampled(m))
                                    .map(|m| {
                                        let arg = phases.phases[[m, t]] - phases.phases[[m, s]]
                                            + 2.0 * std::f64::consts::PI * (m as f64 - c) * d as f64 / *n_y as f64;
                                        C64::from_polar(1.0, arg)
                                    })
                                    .sum::<C64>()
                                    / *n_y as f64
                            })
                            .collect();
                        kernels.push(k);
                    }
                }
                Coupling::Collapsed { kernels, mb }
            }
        }
    }

    fn get(&self, s: usize, y: usize, t: usize, y2: usize, ny: usize) -> C64 {
        match self {
            Coupling::Extended { kernel, offsets } => {
                let l = kernel.len();
                let d = (offsets[s] + y + l - offsets[t] - y2) % l;
                kernel[d]
            }
            Coupling::Collapsed { kernels, mb } => kernels[s * mb + t][(y + ny - y2) % ny],
        }
    }
}

impl<'a> ColumnSense<'a> {
    pub fn new(maps: &'a CoilMapSet, grid: &Grid, mask: &SamplingMask, lambda: f64) -> Result<Self> {
        if lambda < 0.0 {
            return invalid(format!("lambda {lambda} must be non-negative"));
        }
        let op = SenseOperator::new(maps, grid, mask)?;
        let (mb, ny, nx) = op.image_shape();
        let n = mb * ny;
        let nc = maps.n_coils();
        let coupling = Coupling::new(grid, mask);
        let mut g = Mat::<C64>::zeros(n, n);
        for s in 0..mb {
            for y in 0..ny {
                for t in 0..mb {
                    for y2 in 0..ny {
                        g[(s * ny + y, t * ny + y2)] = coupling.get(s, y, t, y2, ny);
                    }
                }
            }
        }
        let results: Vec<Result<(Llt<C64>, f64)>> = (0..nx)
            .into_par_iter()
            .map(|x| {
                let mut h = Mat::<C64>::zeros(n, n);
                let mut a = vec![C64::new(0.0, 0.0); n];
                for c in 0..nc {
                    for s in 0..mb {
                        for y in 0..ny {
                            a[s * ny + y] = maps.maps()[[c, s, y, x]];
                        }
                    }
                    for j in 0..n {
                        let aj = a[j];
                        if aj == C64::new(0.0, 0.0) {
                            continue;
                        }
                        for i in 0..n {
                            h[(i, j)] += a[i].conj() * g[(i, j)] * aj;
                        }
                    }
                }
                for i in 0..n {
                    h[(i, i)] += C64::new(lambda, 0.0);
                }
                factor_hpd(&h)
            })
            .collect();
        let mut factors = Vec::with_capacity(nx);
        let mut max_load: f64 = 0.0;
        for r in results {
            let (f, load) = r?;
            max_load = max_load.max(load);
            factors.push(f);
        }
        Ok(Self { op, factors, max_load, lambda })
    }

    pub fn operator(&self) -> &SenseOperator<'a> {
        &self.op
    }

    /// Solve `(A^H A + lambda I) x = A^H k`.
    pub fn solve_data(&self, k: &Array3<C64>) -> Result<Array3<C64>> {
        let rhs = self.op.adjoint(k)?;
        Ok(self.solve_normal(&rhs))
    }

    pub fn solve(&self, k: &KSpaceData) -> Result<Array3<C64>> {
        self.solve_data(&k.data)
    }

    /// Apply `(A^H A + lambda I)^-1` to an image-space right-hand side.
    pub fn solve_normal(&self, rhs: &Array3<C64>) -> Array3<C64> {
        let (mb, ny, nx) = rhs.dim();
        let n = mb * ny;
        let cols: Vec<Mat<C64>> = (0..nx)
            .into_par_iter()
            .map(|x| {
                let b = Mat::from_fn(n, 1, |i, _| rhs[[i / ny, i % ny, x]]);
                self.factors[x].solve(&b)
            })
            .collect();
        let mut out = Array3::zeros((mb, ny, nx));
        for (x, col) in cols.iter().enumerate() {
            for i in 0..n {
                out[[i / ny, i % ny, x]] = col[(i, 0)];
            }
        }
        out
    }

    /// Pixels a noiseless random probe does not come back from: relative
    /// error above `threshold` of the probe's RMS. These pixels are not
    /// determined by the data (the system is singular there).
    pub fn unresolved(&self, threshold: f64, seed: u64) -> Array3<bool> {
        let shape = self.op.image_shape();
        let mut rng = rng_from(seed, 0x7072_6f62);
        let probe = Array3::from_shape_simple_fn(shape, || complex_normal(&mut rng, 1.0));
        let mut rhs = self.op.normal(&probe);
        rhs.scaled_add(C64::new(self.lambda, 0.0), &probe);
        let back = self.solve_normal(&rhs);
        let mut out = Array3::from_elem(shape, false);
        ndarray::Zip::from(&mut out).and(&probe).and(&back).for_each(|o, &p, &b| *o = (p - b).norm() > threshold);
        out
    }
}
