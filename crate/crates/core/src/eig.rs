//! Reference eigensolvers and the inverse-iteration family.
//!
//! The oracles solve `A u = E M u` directly: a dense generalized
//! eigensolver for small systems and a shift-invert Lanczos method with
//! locking for larger ones. The iterations are scaled by the first
//! eigenvalue, `B = E¹ A⁻¹ M`, so that `u₁` is a fixed point; the
//! preconditioned variants replace `A⁻¹` by the composed Schwarz step `P̄`
//! and track ε-cell supports exactly.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dense::{fix_sign, generalized_eigen, inverse_one_norm};
use crate::error::{Error, Result};
use crate::fem::{vector_in_mask, AssembledSystem, SubgridSpec};
use crate::geometry::GeometryStats;
use crate::krylov::{b_orthogonalize, lanczos};
use crate::lattice::{CellMask, Coord, MAX_DIM};
use crate::potential::{Cuboid, PotentialField};
use crate::rng;
use crate::schwarz::SchwarzPreconditioner;
use crate::sparse::EnvelopeLdl;

/// Default size limit of [`dense_oracle`].
pub const DENSE_LIMIT: usize = 4096;

/// Largest system [`oracle`] hands to the dense solver; above this the
/// shift-invert method is much faster at equal accuracy.
pub const AUTO_DENSE_MAX: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMethod {
    Dense,
    ShiftInvert,
}

/// Lowest eigenpairs of `(A, M)`, ascending, with `M`-orthonormal vectors.
#[derive(Clone, Debug)]
pub struct Spectrum {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
    /// `‖Av − EMv‖ / (|E| ‖Mv‖)` per pair.
    pub residuals: Vec<f64>,
    pub method: OracleMethod,
    pub tol: f64,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Relative residual `‖Av − λMv‖ / (|λ| ‖Mv‖)`.
pub fn relative_residual(sys: &AssembledSystem, lambda: f64, v: &[f64]) -> f64 {
    let av = sys.a.matvec(v);
    let mv = sys.m.matvec(v);
    let r: Vec<f64> = av.iter().zip(&mv).map(|(a, m)| a - lambda * m).collect();
    norm2(&r) / (lambda.abs().max(f64::MIN_POSITIVE) * norm2(&mv).max(f64::MIN_POSITIVE))
}

pub fn dense_oracle(sys: &AssembledSystem, n_ev: usize) -> Result<Spectrum> {
    dense_oracle_with_limit(sys, n_ev, DENSE_LIMIT)
}

pub fn dense_oracle_with_limit(sys: &AssembledSystem, n_ev: usize, limit: usize) -> Result<Spectrum> {
    let n = sys.n();
    if n > limit {
        return Err(Error::TooLarge { n, limit, hint: "use the shift-invert oracle for this size" });
    }
    let n_ev = n_ev.min(n);
    let (vals, x) = generalized_eigen(&sys.a.to_dense(), &sys.m.to_dense())?;
    let vectors: Vec<Vec<f64>> = (0..n_ev).map(|j| x.column(j).iter().copied().collect()).collect();
    let residuals = vectors.iter().zip(&vals).map(|(v, &l)| relative_residual(sys, l, v)).collect();
    Ok(Spectrum { values: vals[..n_ev].to_vec(), vectors, residuals, method: OracleMethod::Dense, tol: 1e-8 })
}

/// Lowest `n_ev` eigenpairs by Lanczos on `(A − σM)⁻¹ M` in the
/// `M`-inner product. Converged pairs are locked and the iteration restarts
/// orthogonally to them until a fresh run finds nothing below the current
/// `n_ev`-th value, so repeated eigenvalues are resolved. A shift that hits
/// an eigenvalue is perturbed and retried.
pub fn shift_invert_oracle(sys: &AssembledSystem, n_ev: usize, shift: f64) -> Result<Spectrum> {
    let n = sys.n();
    let n_ev = n_ev.min(n);
    let tol = 1e-8;
    let mut sigma = shift;
    let mut factor = None;
    for attempt in 0..6 {
        match EnvelopeLdl::factor(&sys.shifted(sigma)) {
            Ok(f) => {
                factor = Some(f);
                break;
            }
            Err(Error::Singular(_)) => {
                sigma = shift - (attempt as f64 + 1.0) * 1e-6 * (shift.abs() + 1.0);
            }
            Err(e) => return Err(e),
        }
    }
    let factor = factor.ok_or_else(|| Error::Singular(format!("A - {shift} M stays singular under perturbation")))?;
    let below = factor.negative_pivots();

    let op = |x: &[f64]| factor.solve(&sys.m.matvec(x));
    let b = |x: &[f64]| sys.m.matvec(x);
    let mut locked: Vec<Vec<f64>> = Vec::new();
    let mut b_locked: Vec<Vec<f64>> = Vec::new();
    let mut lambdas: Vec<f64> = Vec::new();
    let mut r = rng::stream(0x5eed, rng::streams::LANCZOS);
    let mut idle = 0;

    // eigenvalues below the shift are found too (their θ is negative), so
    // the target count includes them
    let need = n_ev.max(below.min(n));
    for _restart in 0..200 {
        let want = need.saturating_sub(locked.len()).max(1);
        let room = n - locked.len();
        if room == 0 {
            break;
        }
        let max_steps = room.min((3 * want + 40).max(80));
        let start: Vec<f64> = (0..n).map(|_| r.random::<f64>() - 0.5).collect();
        let stop = |vals: &[f64], bounds: &[f64]| {
            let m = vals.len();
            m > want && (m - want..m).all(|i| bounds[i] <= 1e-3 * tol * vals[i].abs())
        };
        let run = lanczos(&op, &b, start, max_steps, &locked, &b_locked, true, &stop);
        if run.values.is_empty() {
            break;
        }
        // largest θ ↔ eigenvalue nearest above the shift
        let mut found: Vec<(f64, Vec<f64>)> = Vec::new();
        for (theta, v) in run.values.iter().zip(run.vectors).rev() {
            if theta.abs() < f64::EPSILON {
                continue;
            }
            let lambda = sigma + 1.0 / theta;
            let mut v = v;
            let nrm = sys.m.inner(&v, &v).sqrt();
            v.iter_mut().for_each(|x| *x /= nrm);
            if relative_residual(sys, lambda, &v) <= tol {
                found.push((lambda, v));
            }
        }
        let mut current: Vec<f64> = lambdas.clone();
        current.sort_by(f64::total_cmp);
        let threshold = if current.len() >= n_ev { current[n_ev - 1] } else { f64::INFINITY };
        let fresh_min = found.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let finished = current.len() >= n_ev && (found.is_empty() || fresh_min >= threshold * (1.0 - 1e-12));
        if found.is_empty() {
            idle += 1;
            if idle > 5 {
                if current.len() >= n_ev {
                    break;
                }
                return Err(Error::NoConvergence(format!("shift-invert Lanczos certified {} of {n_ev} pairs", current.len())));
            }
            continue;
        }
        if finished && run.bounds.last().is_some_and(|&bd| bd <= tol * run.values.last().unwrap().abs()) {
            break;
        }
        for (lambda, mut v) in found {
            b_orthogonalize(&mut v, &locked, &b_locked);
            let bv = sys.m.matvec(&v);
            let nrm = v.iter().zip(&bv).map(|(a, b)| a * b).sum::<f64>().sqrt();
            if nrm < 0.5 {
                continue;
            }
            v.iter_mut().for_each(|x| *x /= nrm);
            let bv: Vec<f64> = bv.iter().map(|x| x / nrm).collect();
            lambdas.push(lambda);
            locked.push(v);
            b_locked.push(bv);
        }
    }
    let mut order: Vec<usize> = (0..lambdas.len()).collect();
    order.sort_by(|&i, &j| lambdas[i].total_cmp(&lambdas[j]));
    order.truncate(n_ev);
    if order.len() < n_ev {
        return Err(Error::NoConvergence(format!("shift-invert Lanczos found {} of {n_ev} pairs", order.len())));
    }
    let mut values = Vec::with_capacity(n_ev);
    let mut vectors = Vec::with_capacity(n_ev);
    let mut residuals = Vec::with_capacity(n_ev);
    for i in order {
        let mut v = locked[i].clone();
        fix_sign(&mut v);
        // Rayleigh quotient sharpens the Ritz value
        let lambda = sys.rayleigh(&v)?;
        residuals.push(relative_residual(sys, lambda, &v));
        values.push(lambda);
        vectors.push(v);
    }
    Ok(Spectrum { values, vectors, residuals, method: OracleMethod::ShiftInvert, tol })
}

/// Dense solver up to `dense_max` unknowns, shift-invert (shift 0) above.
pub fn oracle(sys: &AssembledSystem, n_ev: usize, dense_max: usize) -> Result<Spectrum> {
    if sys.n() <= dense_max.min(DENSE_LIMIT) {
        dense_oracle(sys, n_ev)
    } else {
        shift_invert_oracle(sys, n_ev, 0.0)
    }
}

/// `min_c |||v − c u₁|||`, attained at `c = a(v,u₁)/a(u₁,u₁)`.
pub fn energy_error(sys: &AssembledSystem, v: &[f64], u1: &[f64]) -> f64 {
    let c = sys.a_inner(v, u1) / sys.a_inner(u1, u1);
    let e: Vec<f64> = v.iter().zip(u1).map(|(a, b)| a - c * b).collect();
    sys.a.inner(&e, &e).max(0.0).sqrt()
}

/// Iterates of one of the inverse-iteration variants.
#[derive(Clone, Debug)]
pub struct IterationState {
    pub block: Vec<Vec<f64>>,
    pub masks: Vec<CellMask>,
    /// `err^(k)` for `k = 0, 1, …` when a reference `u₁` was supplied.
    pub history: Vec<f64>,
    /// Support size (ε-cells) of the tracked (combined) vector per step.
    pub support_history: Vec<usize>,
    pub scaling: f64,
}

impl IterationState {
    /// Per-step ratios `err^(k)/err^(k−1)`.
    pub fn rates(&self) -> Vec<f64> {
        self.history.windows(2).map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 0.0 }).collect()
    }
}

fn check_len(sys: &AssembledSystem, v: &[f64]) -> Result<()> {
    if v.len() != sys.n() {
        return Err(Error::DimensionMismatch { expected: sys.n(), got: v.len() });
    }
    Ok(())
}

fn full_mask(sys: &AssembledSystem) -> CellMask {
    CellMask::full(sys.sub.grid.cells())
}

/// `v^(k) = (E¹ A⁻¹ M)^k v₀`.
pub fn inverse_power(sys: &AssembledSystem, e1: f64, v0: &[f64], steps: usize, u1: Option<&[f64]>) -> Result<IterationState> {
    check_len(sys, v0)?;
    if let Some(u) = u1 {
        let overlap = sys.m_inner(u, v0).abs();
        if overlap <= 1e-14 * sys.mass_norm(v0)? * sys.mass_norm(u)? {
            return Err(Error::Precondition("starting vector is M-orthogonal to u1".into()));
        }
    }
    let factor = sys.factor_a()?;
    let mut v = v0.to_vec();
    let mut history = Vec::new();
    if let Some(u) = u1 {
        history.push(energy_error(sys, &v, u));
    }
    for _ in 0..steps {
        let mv = sys.m.matvec(&v);
        v = factor.solve(&mv).into_iter().map(|x| e1 * x).collect();
        if let Some(u) = u1 {
            history.push(energy_error(sys, &v, u));
        }
    }
    let cells = sys.sub.grid.num_cells();
    Ok(IterationState { block: vec![v], masks: vec![full_mask(sys)], history, support_history: vec![cells; steps + 1], scaling: e1 })
}

/// `ṽ ← ṽ + P̄(E¹A⁻¹Mṽ − ṽ)`, where `P̄` applied to `E¹A⁻¹Mṽ − ṽ` only
/// needs the load `E¹Mṽ − Aṽ`; no global solve is performed. The mask grows
/// by `k_inner` layers.
pub fn pinvit_step(
    sys: &AssembledSystem,
    prec: &SchwarzPreconditioner,
    e1: f64,
    v: &[f64],
    mask: &CellMask,
) -> Result<(Vec<f64>, CellMask)> {
    check_len(sys, v)?;
    let mv = sys.m.matvec(v);
    let av = sys.a.matvec(v);
    let f: Vec<f64> = mv.iter().zip(&av).map(|(m, a)| e1 * m - a).collect();
    let zero = vec![0.0; sys.n()];
    let (x, _) = prec.richardson_from(sys, &f, mask, zero, CellMask::empty(mask.lattice()), prec.k_inner);
    let next: Vec<f64> = v.iter().zip(&x).map(|(a, b)| a + b).collect();
    Ok((next, mask.dilate(prec.k_inner)))
}

/// Repeated [`pinvit_step`] with error history against `u₁`.
pub fn pinvit(
    sys: &AssembledSystem,
    prec: &SchwarzPreconditioner,
    e1: f64,
    v0: &[f64],
    mask0: &CellMask,
    steps: usize,
    u1: Option<&[f64]>,
) -> Result<IterationState> {
    check_len(sys, v0)?;
    if !vector_in_mask(&sys.sub, v0, mask0) {
        return Err(Error::Precondition("starting vector is not contained in its mask".into()));
    }
    let mut v = v0.to_vec();
    let mut mask = mask0.clone();
    let mut history = Vec::new();
    let mut support_history = vec![mask.count()];
    if let Some(u) = u1 {
        history.push(energy_error(sys, &v, u));
    }
    for _ in 0..steps {
        let (nv, nm) = pinvit_step(sys, prec, e1, &v, &mask)?;
        v = nv;
        mask = nm;
        support_history.push(mask.count());
        if let Some(u) = u1 {
            history.push(energy_error(sys, &v, u));
        }
    }
    Ok(IterationState { block: vec![v], masks: vec![mask], history, support_history, scaling: e1 })
}

/// Starting block `V^(0)` with optional verification data.
#[derive(Clone, Debug)]
pub struct StartBlock {
    pub vectors: Vec<Vec<f64>>,
    pub masks: Vec<CellMask>,
    /// `C_ij = (u_i, v_j)_M` against oracle eigenvectors.
    pub c: Option<DMatrix<f64>>,
    pub c_inv_norm: Option<f64>,
    pub rayleigh: Vec<f64>,
    /// Human-readable origin of each vector.
    pub labels: Vec<String>,
}

impl StartBlock {
    pub fn k(&self) -> usize {
        self.vectors.len()
    }

    pub fn max_rayleigh(&self) -> f64 {
        self.rayleigh.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Fills `C` and `‖C⁻¹‖₁` from the first `K` oracle eigenvectors.
    pub fn attach_oracle(&mut self, sys: &AssembledSystem, spectrum: &Spectrum) -> Result<()> {
        let k = self.k();
        if spectrum.len() < k {
            return Err(Error::InvalidArgument(format!("oracle has {} pairs, block needs {k}", spectrum.len())));
        }
        let mvs: Vec<Vec<f64>> = self.vectors.iter().map(|v| sys.m.matvec(v)).collect();
        let c = DMatrix::from_fn(k, k, |i, j| spectrum.vectors[i].iter().zip(&mvs[j]).map(|(a, b)| a * b).sum());
        let norm = inverse_one_norm(&c).map_err(|e| Error::Singular(format!("starting block [{}]: {e}", self.labels.join(", "))))?;
        self.c = Some(c);
        self.c_inv_norm = Some(norm);
        Ok(())
    }

    /// `x = C⁻¹ e₁`.
    pub fn combination(&self) -> Result<Vec<f64>> {
        let c = self.c.as_ref().ok_or_else(|| Error::Precondition("starting block has no C matrix".into()))?;
        let k = self.k();
        let mut e1 = nalgebra::DVector::zeros(k);
        e1[0] = 1.0;
        let x = c
            .clone()
            .lu()
            .solve(&e1)
            .ok_or_else(|| Error::Singular(format!("starting block [{}] has singular C", self.labels.join(", "))))?;
        Ok(x.iter().copied().collect())
    }
}

fn combine(block: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    let n = block[0].len();
    let mut out = vec![0.0; n];
    for (v, &c) in block.iter().zip(x) {
        for (o, a) in out.iter_mut().zip(v) {
            *o += c * a;
        }
    }
    out
}

fn combined_mask(masks: &[CellMask], x: &[f64]) -> CellMask {
    let mut m = CellMask::empty(masks[0].lattice());
    for (mk, &c) in masks.iter().zip(x) {
        if c != 0.0 {
            m = m.union(mk);
        }
    }
    m
}

/// Simultaneous inverse iteration `V^(k) = E¹ A⁻¹ M V^(k−1)`, tracking the
/// combination `V^(k) C⁻¹ e₁`.
pub fn block_iteration(sys: &AssembledSystem, e1: f64, start: &StartBlock, steps: usize, u1: &[f64]) -> Result<IterationState> {
    let x = start.combination()?;
    let factor = sys.factor_a()?;
    let mut block = start.vectors.clone();
    let mut history = vec![energy_error(sys, &combine(&block, &x), u1)];
    for _ in 0..steps {
        block = block.par_iter().map(|v| factor.solve(&sys.m.matvec(v)).into_iter().map(|y| e1 * y).collect()).collect();
        history.push(energy_error(sys, &combine(&block, &x), u1));
    }
    let cells = sys.sub.grid.num_cells();
    Ok(IterationState { masks: vec![full_mask(sys); block.len()], block, history, support_history: vec![cells; steps + 1], scaling: e1 })
}

/// Lowest Ritz combination of a block: `x` minimizing the Rayleigh quotient
/// of `V x`.
pub fn ritz_combination(sys: &AssembledSystem, block: &[Vec<f64>]) -> Result<Vec<f64>> {
    let k = block.len();
    let av: Vec<Vec<f64>> = block.iter().map(|v| sys.a.matvec(v)).collect();
    let mv: Vec<Vec<f64>> = block.iter().map(|v| sys.m.matvec(v)).collect();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let ga = DMatrix::from_fn(k, k, |i, j| 0.5 * (dot(&block[i], &av[j]) + dot(&block[j], &av[i])));
    let gm = DMatrix::from_fn(k, k, |i, j| 0.5 * (dot(&block[i], &mv[j]) + dot(&block[j], &mv[i])));
    let (_, x) = generalized_eigen(&ga, &gm)?;
    Ok(x.column(0).iter().copied().collect())
}

#[derive(Clone, Debug)]
pub struct InexactOptions {
    pub tol: f64,
    /// Spectral gap `E¹/E^{K+1}`.
    pub gap: f64,
    /// Reference ground state for the error history (verification runs).
    pub u1: Option<Vec<f64>>,
    /// Also run the exact block iteration and record the distance between
    /// exact and preconditioned iterates.
    pub track_exact: bool,
}

#[derive(Clone, Debug)]
pub struct InexactResult {
    pub v: Vec<f64>,
    pub mask: CellMask,
    pub steps: usize,
    pub state: IterationState,
    /// `max_j |||v_j^(k) − ṽ_j^(k)|||` per step when tracked.
    pub exact_distance: Vec<f64>,
}

/// Number of outer steps `k = ⌈log tol / log gap⌉` (zero when `tol ≥ 1`).
pub fn outer_steps(tol: f64, gap: f64) -> Result<usize> {
    if !(gap > 0.0 && gap < 1.0) {
        return Err(Error::InvalidArgument(format!("gap {gap} must lie in (0, 1)")));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance {tol} must be positive")));
    }
    if tol >= 1.0 {
        return Ok(0);
    }
    Ok(((tol.ln() / gap.ln()) - 1e-9).ceil() as usize)
}

/// Preconditioned block iteration: each column takes `k` PINVIT steps with
/// `P̄`, then `ṽ = Ṽ^(k) x` with `x = C⁻¹e₁` if the block carries `C`, else
/// the lowest Ritz combination. Requires the composed contraction
/// `γ^{k_inner}` not to exceed `gap^k`.
pub fn inexact_block_iteration(
    sys: &AssembledSystem,
    prec: &SchwarzPreconditioner,
    e1: f64,
    start: &StartBlock,
    opts: &InexactOptions,
) -> Result<InexactResult> {
    let k = outer_steps(opts.tol, opts.gap)?;
    let gamma = prec.gamma().ok_or_else(|| Error::Precondition("preconditioner contraction has not been estimated".into()))?;
    let gamma_bar = gamma.powi(prec.k_inner as i32);
    if k > 0 && gamma_bar > opts.gap.powi(k as i32) * (1.0 + 1e-9) {
        return Err(Error::Precondition(format!(
            "composed contraction {gamma_bar:.3e} exceeds gap^k = {:.3e}; increase k_inner (currently {})",
            opts.gap.powi(k as i32),
            prec.k_inner
        )));
    }
    for (v, m) in start.vectors.iter().zip(&start.masks) {
        if !vector_in_mask(&sys.sub, v, m) {
            return Err(Error::Precondition("starting vector lies outside its mask".into()));
        }
    }
    let x = match start.c {
        Some(_) => start.combination()?,
        None => ritz_combination(sys, &start.vectors)?,
    };
    let factor = if opts.track_exact { Some(sys.factor_a()?) } else { None };
    let mut block = start.vectors.clone();
    let mut masks = start.masks.clone();
    let mut exact = start.vectors.clone();
    let mut history = Vec::new();
    let mut support_history = vec![combined_mask(&masks, &x).count()];
    let mut exact_distance = Vec::new();
    if let Some(u) = &opts.u1 {
        history.push(energy_error(sys, &combine(&block, &x), u));
    }
    if opts.track_exact {
        exact_distance.push(0.0);
    }
    for _ in 0..k {
        let next: Vec<(Vec<f64>, CellMask)> =
            block.par_iter().zip(masks.par_iter()).map(|(v, m)| pinvit_step(sys, prec, e1, v, m)).collect::<Result<_>>()?;
        (block, masks) = next.into_iter().unzip();
        if let Some(f) = &factor {
            exact = exact.par_iter().map(|v| f.solve(&sys.m.matvec(v)).into_iter().map(|y| e1 * y).collect()).collect();
            let dist = block
                .iter()
                .zip(&exact)
                .map(|(a, b)| {
                    let d: Vec<f64> = a.iter().zip(b).map(|(p, q)| p - q).collect();
                    sys.a.inner(&d, &d).max(0.0).sqrt()
                })
                .fold(0.0, f64::max);
            exact_distance.push(dist);
        }
        support_history.push(combined_mask(&masks, &x).count());
        if let Some(u) = &opts.u1 {
            history.push(energy_error(sys, &combine(&block, &x), u));
        }
    }
    let v = combine(&block, &x);
    let mask = combined_mask(&masks, &x);
    Ok(InexactResult { v, mask, steps: k, state: IterationState { block, masks, history, support_history, scaling: e1 }, exact_distance })
}

/// A product-sine Dirichlet mode on a cuboid valley.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValleyMode {
    pub valley: usize,
    pub index: [usize; MAX_DIM],
    /// Continuum value `α + π² Σ (n_k / (ε s_k))²`.
    pub continuum: f64,
}

/// Dirichlet modes of the valleys in ascending continuum eigenvalue (ties by
/// valley, then mode index), up to the resolution limit of the subgrid.
pub fn valley_modes(field: &PotentialField, valleys: &[Cuboid], sub: &SubgridSpec, count: usize) -> Vec<ValleyMode> {
    let d = sub.d();
    let eps = sub.grid.eps();
    let pi2 = std::f64::consts::PI.powi(2);
    let mut all = Vec::new();
    for (vi, c) in valleys.iter().enumerate() {
        // at most `count` modes per axis are ever needed
        let caps: Vec<usize> = (0..d).map(|k| (c.sides[k] * sub.m - 1).min(count)).collect();
        if caps.contains(&0) {
            continue;
        }
        let total: usize = caps.iter().product();
        for t in 0..total {
            let mut idx = [0usize; MAX_DIM];
            let mut r = t;
            for k in 0..d {
                idx[k] = r % caps[k] + 1;
                r /= caps[k];
            }
            let lam = field.alpha + pi2 * (0..d).map(|k| (idx[k] as f64 / (eps * c.sides[k] as f64)).powi(2)).sum::<f64>();
            all.push(ValleyMode { valley: vi, index: idx, continuum: lam });
        }
    }
    all.sort_by(|a, b| a.continuum.total_cmp(&b.continuum).then(a.valley.cmp(&b.valley)).then(a.index.cmp(&b.index)));
    all.truncate(count);
    all
}

/// Nodal samples of a valley mode, zero outside the valley.
pub fn sample_mode(sub: &SubgridSpec, valley: &Cuboid, index: [usize; MAX_DIM]) -> Vec<f64> {
    let d = sub.d();
    let nodes = sub.nodes();
    let mut v = vec![0.0; nodes.len()];
    let mut base: Coord = [0; MAX_DIM];
    let mut span = [0usize; MAX_DIM];
    for k in 0..d {
        base[k] = valley.anchor[k] * sub.m;
        span[k] = valley.sides[k] * sub.m;
    }
    let interior: usize = (0..d).map(|k| span[k] - 1).product();
    for t in 0..interior {
        let mut off = [0isize; MAX_DIM];
        let mut r = t;
        let mut val = 1.0;
        for k in 0..d {
            let o = r % (span[k] - 1) + 1;
            r /= span[k] - 1;
            off[k] = o as isize;
            val *= (index[k] as f64 * std::f64::consts::PI * o as f64 / span[k] as f64).sin();
        }
        v[nodes.index(nodes.shift(base, off))] = val;
    }
    v
}

/// `K` valley Dirichlet modes as a starting block, `M`-normalized, each
/// masked by its valley cells.
pub fn build_start_valleys(field: &PotentialField, stats: &GeometryStats, sys: &AssembledSystem, k: usize) -> Result<StartBlock> {
    let valleys = stats
        .valley_components
        .as_ref()
        .or(field.valleys.as_ref())
        .ok_or_else(|| Error::Precondition("no cuboid valley decomposition available".into()))?;
    let modes = valley_modes(field, valleys, &sys.sub, k);
    if modes.len() < k {
        return Err(Error::InvalidArgument(format!("requested {k} valley modes, only {} available", modes.len())));
    }
    let lattice = sys.sub.grid.cells();
    let mut block = StartBlock { vectors: vec![], masks: vec![], c: None, c_inv_norm: None, rayleigh: vec![], labels: vec![] };
    for md in modes {
        let c = valleys[md.valley];
        let mut v = sample_mode(&sys.sub, &c, md.index);
        sys.m_normalize(&mut v)?;
        let mut mask = CellMask::empty(lattice);
        for cell in c.cells(lattice) {
            mask.insert(cell);
        }
        block.rayleigh.push(sys.rayleigh(&v)?);
        block.labels.push(format!("valley {} mode {:?}", md.valley, &md.index[..sys.sub.d()]));
        block.vectors.push(v);
        block.masks.push(mask);
    }
    Ok(block)
}

/// Span of Q1 hat functions of width `ε/m̃` whose supports lie in `mask`.
#[derive(Clone, Debug)]
pub struct LocalSpace {
    pub mask: CellMask,
    pub m_tilde: usize,
}

impl LocalSpace {
    /// α-cells of valleys with minimal side at least `min_width`, dilated by
    /// `layers`.
    pub fn around_valleys(stats: &GeometryStats, lattice: crate::Lattice, min_width: usize, layers: usize, m_tilde: usize) -> Self {
        let mut mask = CellMask::empty(lattice);
        for c in stats.valley_components.iter().flatten() {
            if c.min_side(stats.d) >= min_width {
                for cell in c.cells(lattice) {
                    mask.insert(cell);
                }
            }
        }
        Self { mask: mask.dilate(layers), m_tilde }
    }

    /// Basis vectors on the subgrid (requires `m̃ | m`).
    pub fn basis(&self, sub: &SubgridSpec) -> Result<Vec<Vec<f64>>> {
        if self.m_tilde == 0 || !sub.m.is_multiple_of(self.m_tilde) {
            return Err(Error::InvalidArgument(format!("m̃ = {} must divide m = {}", self.m_tilde, sub.m)));
        }
        let d = sub.d();
        let ratio = sub.m / self.m_tilde;
        let coarse = SubgridSpec::new(sub.grid, self.m_tilde)?;
        let cnodes = coarse.nodes();
        let fnodes = sub.nodes();
        let r = ratio as isize;
        let stencil = fnodes.offsets(-(r - 1), r - 1);
        let mut out = Vec::new();
        for cn in 0..cnodes.len() {
            if !coarse.node_elements(cn).into_iter().all(|e| self.mask.contains(coarse.element_cell(e))) {
                continue;
            }
            let cc = cnodes.coords(cn);
            let mut base: Coord = [0; MAX_DIM];
            for k in 0..d {
                base[k] = cc[k] * ratio;
            }
            let mut v = vec![0.0; fnodes.len()];
            for o in &stencil {
                let w: f64 = (0..d).map(|k| 1.0 - o[k].unsigned_abs() as f64 / ratio as f64).product();
                v[fnodes.index(fnodes.shift(base, *o))] = w;
            }
            out.push(v);
        }
        Ok(out)
    }
}

/// `M`-orthogonal projections of the first `K` oracle eigenvectors onto a
/// local space, with the coefficient matrix `C` and `‖C⁻¹‖₁`.
pub fn build_start_projection(sys: &AssembledSystem, oracle: &Spectrum, space: &LocalSpace, k: usize) -> Result<StartBlock> {
    if oracle.len() < k {
        return Err(Error::InvalidArgument(format!("oracle has {} pairs, need {k}", oracle.len())));
    }
    let basis = space.basis(&sys.sub)?;
    let nb = basis.len();
    if nb < k {
        return Err(Error::InvalidArgument(format!("local space has dimension {nb} < K = {k}")));
    }
    let mb: Vec<Vec<f64>> = basis.par_iter().map(|b| sys.m.matvec(b)).collect();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let gram = DMatrix::from_fn(nb, nb, |i, j| dot(&basis[i], &mb[j]));
    let chol = gram.cholesky().ok_or_else(|| Error::Singular("local basis Gram matrix".into()))?;
    let mut block = StartBlock { vectors: vec![], masks: vec![], c: None, c_inv_norm: None, rayleigh: vec![], labels: vec![] };
    for j in 0..k {
        let rhs = nalgebra::DVector::from_fn(nb, |i, _| dot(&mb[i], &oracle.vectors[j]));
        let coef = chol.solve(&rhs);
        let v = combine(&basis, coef.as_slice());
        block.rayleigh.push(sys.rayleigh(&v)?);
        block.labels.push(format!("projection of u{}", j + 1));
        block.vectors.push(v);
        block.masks.push(space.mask.clone());
    }
    block.attach_oracle(sys, oracle)?;
    Ok(block)
}

/// Smallest and largest Rayleigh quotient over `samples` random
/// combinations of `funcs`.
pub fn combination_rayleigh_range(sys: &AssembledSystem, funcs: &[Vec<f64>], samples: usize, seed: u64) -> Result<(f64, f64)> {
    let mut r = rng::stream(seed, rng::streams::VECTORS);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for _ in 0..samples {
        let x = rng::uniform_vector(&mut r, funcs.len());
        let v = combine(funcs, &x);
        if v.iter().all(|&a| a == 0.0) {
            continue;
        }
        let q = sys.rayleigh(&v)?;
        lo = lo.min(q);
        hi = hi.max(q);
    }
    Ok((lo, hi))
}

/// Number of oracle eigenvalues not exceeding `c·(1 + rel_tol)`.
pub fn count_below(spectrum: &Spectrum, c: f64, rel_tol: f64) -> usize {
    spectrum.values.iter().filter(|&&e| e <= c * (1.0 + rel_tol)).count()
}
