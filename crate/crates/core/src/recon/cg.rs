use ndarray::Array3;

use crate::model::C64;

#[derive(Clone, Debug)]
pub struct SolveOutcome {
    pub x: Array3<C64>,
    pub iterations: usize,
    /// Final `|b - H x| / |b|`.
    pub residual: f64,
    /// Relative residual before the first and after every iteration.
    pub history: Vec<f64>,
    pub converged: bool,
}

fn dot(a: &Array3<C64>, b: &Array3<C64>) -> C64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

fn norm(a: &Array3<C64>) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

/// Conjugate residual iteration for Hermitian positive semidefinite `H`.
///
/// Each step minimizes `|b - H x|` over the Krylov space, so the residual
/// history is non-increasing; one application of `H` per iteration.
pub fn conjugate_residual<F>(apply: F, b: &Array3<C64>, tolerance: f64, max_iters: usize) -> SolveOutcome
where
    F: Fn(&Array3<C64>) -> Array3<C64>,
{
    let bn = norm(b);
    let mut x = Array3::zeros(b.dim());
    if bn == 0.0 {
        return SolveOutcome { x, iterations: 0, residual: 0.0, history: vec![0.0], converged: true };
    }
    let mut r = b.clone();
    let mut hr = apply(&r);
    let mut p = r.clone();
    let mut hp = hr.clone();
    let mut rhr = dot(&r, &hr).re;
    let mut history = vec![1.0];
    let mut residual = 1.0;
    let mut iterations = 0;
    while iterations < max_iters && residual > tolerance {
        let hp2 = dot(&hp, &hp).re;
        if hp2 <= 0.0 || rhr <= 0.0 {
            break;
        }
        let alpha = rhr / hp2;
        x.scaled_add(C64::new(alpha, 0.0), &p);
        r.scaled_add(C64::new(-alpha, 0.0), &hp);
        iterations += 1;
        residual = norm(&r) / bn;
        history.push(residual);
        if residual <= tolerance {
            break;
        }
        hr = apply(&r);
        let rhr_new = dot(&r, &hr).re;
        let beta = rhr_new / rhr;
        rhr = rhr_new;
        p.zip_mut_with(&r, |pv, &rv| *pv = rv + *pv * beta);
        hp.zip_mut_with(&hr, |hv, &v| *hv = v + *hv * beta);
    }
    SolveOutcome { x, iterations, residual, history, converged: residual <= tolerance }
}
