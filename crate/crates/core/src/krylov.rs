//! Lanczos with full reorthogonalization for operators that are
//! self-adjoint in a `B`-inner product `⟨x, y⟩_B = xᵀ B y`.

use nalgebra::DMatrix;

use crate::dense::sym_eigen_sorted;

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Ritz pairs from one Lanczos run, ascending by Ritz value.
#[derive(Clone, Debug)]
pub struct LanczosRun {
    pub values: Vec<f64>,
    /// `β_m |s_{m,i}|`, the usual residual estimate of each Ritz pair.
    pub bounds: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
    pub steps: usize,
    /// The Krylov space became invariant before `max_steps`.
    pub exhausted: bool,
}

/// A vector `B`-orthogonalized against `locked` (with `b_locked[i] = B·locked[i]`).
pub fn b_orthogonalize(v: &mut [f64], locked: &[Vec<f64>], b_locked: &[Vec<f64>]) {
    for _ in 0..2 {
        for (q, bq) in locked.iter().zip(b_locked) {
            let c = dot(v, bq);
            axpy(-c, q, v);
        }
    }
}

/// Runs up to `max_steps` Lanczos steps from `start`, keeping the basis
/// `B`-orthogonal to `locked`. `stop(values, bounds)` is consulted every few
/// steps. Ritz vectors are only formed when `want_vectors` is set.
#[allow(clippy::too_many_arguments)]
pub fn lanczos(
    op: &dyn Fn(&[f64]) -> Vec<f64>,
    b_apply: &dyn Fn(&[f64]) -> Vec<f64>,
    start: Vec<f64>,
    max_steps: usize,
    locked: &[Vec<f64>],
    b_locked: &[Vec<f64>],
    want_vectors: bool,
    stop: &dyn Fn(&[f64], &[f64]) -> bool,
) -> LanczosRun {
    let mut q = start;
    b_orthogonalize(&mut q, locked, b_locked);
    let mut bq = b_apply(&q);
    let nrm = dot(&q, &bq).max(0.0).sqrt();
    if nrm == 0.0 {
        return LanczosRun { values: vec![], bounds: vec![], vectors: vec![], steps: 0, exhausted: true };
    }
    q.iter_mut().for_each(|x| *x /= nrm);
    bq.iter_mut().for_each(|x| *x /= nrm);

    let mut basis: Vec<Vec<f64>> = vec![q];
    let mut b_basis: Vec<Vec<f64>> = vec![bq];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut exhausted = false;
    let mut scale = 0.0f64;

    let ritz = |alpha: &[f64], beta: &[f64], last_beta: f64| -> (Vec<f64>, Vec<f64>, DMatrix<f64>) {
        let m = alpha.len();
        let t = DMatrix::from_fn(m, m, |i, j| {
            if i == j {
                alpha[i]
            } else if i + 1 == j {
                beta[i]
            } else if j + 1 == i {
                beta[j]
            } else {
                0.0
            }
        });
        let (vals, s) = sym_eigen_sorted(t);
        let bounds = (0..m).map(|i| (last_beta * s[(m - 1, i)]).abs()).collect();
        (vals, bounds, s)
    };

    loop {
        let j = alpha.len();
        let mut w = op(&basis[j]);
        let a = dot(&w, &b_basis[j]);
        alpha.push(a);
        scale = scale.max(a.abs());
        // full reorthogonalization, twice
        for _ in 0..2 {
            for (qi, bqi) in basis.iter().zip(&b_basis) {
                let c = dot(&w, bqi);
                axpy(-c, qi, &mut w);
            }
            for (qi, bqi) in locked.iter().zip(b_locked) {
                let c = dot(&w, bqi);
                axpy(-c, qi, &mut w);
            }
        }
        let mut bw = b_apply(&w);
        let b = dot(&w, &bw).max(0.0).sqrt();
        let steps = alpha.len();
        let done = steps >= max_steps;
        if b <= 1e-13 * scale.max(f64::MIN_POSITIVE) {
            exhausted = true;
        }
        let check = exhausted || done || steps.is_multiple_of(5);
        if check {
            let last = if exhausted { 0.0 } else { b };
            let (vals, bounds, s) = ritz(&alpha, &beta, last);
            if exhausted || done || stop(&vals, &bounds) {
                let vectors = if want_vectors {
                    (0..steps)
                        .map(|i| {
                            let mut v = vec![0.0; basis[0].len()];
                            for (k, qk) in basis.iter().enumerate().take(steps) {
                                axpy(s[(k, i)], qk, &mut v);
                            }
                            v
                        })
                        .collect()
                } else {
                    vec![]
                };
                return LanczosRun { values: vals, bounds, vectors, steps, exhausted };
            }
        }
        beta.push(b);
        w.iter_mut().for_each(|x| *x /= b);
        bw.iter_mut().for_each(|x| *x /= b);
        basis.push(w);
        b_basis.push(bw);
    }
}
