//! ε-local overlapping Schwarz preconditioning.
//!
//! There is one patch per ε-mesh vertex `z`: the `2ε` cube made of the
//! `2^d` cells `z − δ`, `δ ∈ {0,1}^d`. Its unknowns are the subgrid nodes
//! strictly inside the cube. With `A_z` the restriction of `A`,
//!
//! ```text
//! P̃ F = Σ_z E_z A_z⁻¹ R_z F,      P v = P̃ (A v),
//! ```
//!
//! and a Richardson step reads `u ← u + ϑ P̃(F − A u)`. Each application
//! grows the ε-cell support by exactly one sup-norm layer at most.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::dense::DenseCholesky;
use crate::error::{Error, Result};
use crate::fem::{load_in_mask, vector_in_mask, AssembledSystem};
use crate::geometry::GeometryStats;
use crate::krylov::lanczos;
use crate::lattice::{CellMask, Coord, MAX_DIM};
use crate::rng;

pub type SupportMask = CellMask;

#[derive(Clone, Debug)]
pub struct Patch {
    /// ε-vertex index (on the cell lattice).
    pub vertex: usize,
    /// The `2^d` ε-cells of the patch.
    pub cells: Vec<usize>,
    /// Interior subgrid nodes in lexicographic local order.
    pub dofs: Vec<usize>,
    /// Index into the factor cache.
    pub factor: usize,
}

#[derive(Clone, Debug)]
pub struct PatchSet {
    pub patches: Vec<Patch>,
    factors: Vec<DenseCholesky>,
}

impl PatchSet {
    pub fn distinct_factors(&self) -> usize {
        self.factors.len()
    }

    /// `Σ_z E_z A_z⁻¹ R_z g`; patches with a vanishing local load are skipped.
    pub fn solve_sum(&self, g: &[f64]) -> Vec<f64> {
        let local: Vec<Option<Vec<f64>>> = self
            .patches
            .par_iter()
            .map(|p| {
                let rhs: Vec<f64> = p.dofs.iter().map(|&i| g[i]).collect();
                if rhs.iter().all(|&x| x == 0.0) {
                    None
                } else {
                    Some(self.factors[p.factor].solve(&rhs))
                }
            })
            .collect();
        // ordered scatter keeps the sum independent of thread count
        let mut out = vec![0.0; g.len()];
        for (p, sol) in self.patches.iter().zip(local) {
            if let Some(x) = sol {
                for (&i, xi) in p.dofs.iter().zip(x) {
                    out[i] += xi;
                }
            }
        }
        out
    }
}

/// Builds all patches and factorizes each distinct local matrix once. Two
/// patches share a factor when the α/β pattern of their `2^d` cells agrees,
/// which fixes the local matrix exactly.
pub fn build_patches(sys: &AssembledSystem) -> Result<PatchSet> {
    let sub = sys.sub;
    let d = sub.d();
    let m = sub.m as isize;
    let cells = sub.grid.cells();
    let nodes = sub.nodes();
    let node_offsets = nodes.offsets(-(m - 1), m - 1);
    let cell_offsets = cells.offsets(-1, 0);

    let mut patches = Vec::with_capacity(cells.len());
    let mut cache: HashMap<u32, usize> = HashMap::new();
    let mut factors = Vec::new();
    for z in 0..cells.len() {
        let zc = cells.coords(z);
        let mut base: Coord = [0; MAX_DIM];
        for k in 0..d {
            base[k] = zc[k] * sub.m;
        }
        let dofs: Vec<usize> = node_offsets.iter().map(|o| nodes.index(nodes.shift(base, *o))).collect();
        let pcells: Vec<usize> = cell_offsets.iter().map(|o| cells.index(cells.shift(zc, *o))).collect();
        let key = pcells.iter().enumerate().fold(0u32, |acc, (b, &c)| acc | (u32::from(sys.field.is_beta(c)) << b));
        let factor = match cache.get(&key) {
            Some(&f) => f,
            None => {
                let local = sys.a.principal_submatrix(&dofs);
                factors.push(DenseCholesky::new(dofs.len(), &local)?);
                cache.insert(key, factors.len() - 1);
                factors.len() - 1
            }
        };
        patches.push(Patch { vertex: z, cells: pcells, dofs, factor });
    }
    Ok(PatchSet { patches, factors })
}

/// Constants of the norm equivalence `K1⁻¹ a(v,v) ≤ a(Pv,v) ≤ K2 a(v,v)`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct TheoryConstants {
    pub k1: f64,
    pub k2: f64,
    pub c_l: f64,
    pub theta: f64,
    pub gamma_bound: f64,
}

pub fn theoretical_constants(stats: &GeometryStats, c_l: f64) -> TheoryConstants {
    let d = stats.d as i32;
    let l = stats.l as f64;
    let k2 = 2f64.powi(d);
    let k1 = 2f64.powi(d + 1) * (1.0 + c_l * c_l * l * l);
    TheoryConstants { k1, k2, c_l, theta: 1.0 / (k2 + 1.0 / k1), gamma_bound: k2 / (1.0 / k1 + k2) }
}

/// `c_L` that makes `K1` equal the empirical `1/λ_min(P)`; clamped to a small
/// positive value when the measured `K1` is already below `2^{d+1}`.
pub fn calibrate_c_l(lambda_min: f64, d: usize, l: usize) -> f64 {
    let k1_emp = 1.0 / lambda_min;
    let c2 = (k1_emp / 2f64.powi(d as i32 + 1) - 1.0) / (l * l) as f64;
    c2.max(1e-12).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrecondMode {
    Theoretical,
    Adaptive,
}

/// Result of [`SchwarzPreconditioner::estimate_contraction`].
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct ContractionEstimate {
    pub gamma: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub steps: usize,
    pub converged: bool,
}

#[derive(Clone, Debug)]
pub struct SchwarzPreconditioner {
    pub patches: PatchSet,
    pub theta: f64,
    pub mode: PrecondMode,
    pub k_inner: usize,
    pub constants: TheoryConstants,
    pub estimate: Option<ContractionEstimate>,
}

impl SchwarzPreconditioner {
    /// Patches plus theoretical constants; `ϑ` starts at the theoretical value
    /// in both modes until [`Self::estimate_contraction`] is run.
    pub fn new(sys: &AssembledSystem, stats: &GeometryStats, c_l: f64, mode: PrecondMode) -> Result<Self> {
        if !(c_l > 0.0 && c_l.is_finite()) {
            return Err(Error::InvalidArgument(format!("c_L = {c_l} must be positive")));
        }
        let constants = theoretical_constants(stats, c_l);
        Ok(Self { patches: build_patches(sys)?, theta: constants.theta, mode, k_inner: 1, constants, estimate: None })
    }

    pub fn gamma(&self) -> Option<f64> {
        self.estimate.map(|e| e.gamma)
    }

    fn check(&self, sys: &AssembledSystem, v: &[f64]) -> Result<()> {
        if v.len() != sys.n() {
            return Err(Error::DimensionMismatch { expected: sys.n(), got: v.len() });
        }
        Ok(())
    }

    /// `P v` without mask bookkeeping.
    pub fn p(&self, sys: &AssembledSystem, v: &[f64]) -> Vec<f64> {
        self.patches.solve_sum(&sys.a.matvec(v))
    }

    /// `P v` and the mask of `v` dilated by one layer.
    pub fn apply_p(&self, sys: &AssembledSystem, v: &[f64], mask: &SupportMask) -> Result<(Vec<f64>, SupportMask)> {
        self.check(sys, v)?;
        if !vector_in_mask(&sys.sub, v, mask) {
            return Err(Error::Precondition("input vector is not contained in its support mask".into()));
        }
        Ok((self.p(sys, v), mask.dilate(1)))
    }

    /// `P̃ F` for a load `F` whose nonzeros sit on closed cells of `mask`.
    pub fn apply_ptilde(&self, sys: &AssembledSystem, f: &[f64], mask: &SupportMask) -> Result<(Vec<f64>, SupportMask)> {
        self.check(sys, f)?;
        if !load_in_mask(&sys.sub, f, mask) {
            return Err(Error::Precondition("load is not contained in its support mask".into()));
        }
        Ok((self.patches.solve_sum(f), mask.dilate(1)))
    }

    /// `k` Richardson steps for `A u = F` from `u0`, without diagnostics.
    /// The returned mask contains every iterate.
    pub fn richardson_from(
        &self,
        sys: &AssembledSystem,
        f: &[f64],
        f_mask: &SupportMask,
        u0: Vec<f64>,
        u0_mask: SupportMask,
        k: usize,
    ) -> (Vec<f64>, SupportMask) {
        let mut u = u0;
        let mut mask = u0_mask;
        for _ in 0..k {
            let (next, next_mask) = self.richardson_step(sys, f, f_mask, &u, &mask);
            u = next;
            mask = next_mask;
        }
        (u, mask)
    }

    fn richardson_step(
        &self,
        sys: &AssembledSystem,
        f: &[f64],
        f_mask: &SupportMask,
        u: &[f64],
        mask: &SupportMask,
    ) -> (Vec<f64>, SupportMask) {
        let au = sys.a.matvec(u);
        let r: Vec<f64> = f.iter().zip(&au).map(|(a, b)| a - b).collect();
        let c = self.patches.solve_sum(&r);
        let next = u.iter().zip(&c).map(|(x, y)| x + self.theta * y).collect();
        (next, mask.union(f_mask).dilate(1))
    }

    /// `P̄ w = (I − (I − ϑP)^{k_inner}) w`, evaluated as `k_inner`
    /// Richardson steps for the load `A w`.
    pub fn apply_pbar(&self, sys: &AssembledSystem, w: &[f64], mask: &SupportMask) -> Result<(Vec<f64>, SupportMask)> {
        self.check(sys, w)?;
        let f = sys.a.matvec(w);
        Ok(self.richardson_from(sys, &f, mask, vec![0.0; sys.n()], CellMask::empty(mask.lattice()), self.k_inner))
    }

    /// Extreme eigenvalues of `P` (self-adjoint in `a(·,·)`) by Lanczos,
    /// then `γ = max |1 − ϑλ|`. In adaptive mode `ϑ` is first reset to
    /// `2/(λ_min + λ_max)`.
    pub fn estimate_contraction(&mut self, sys: &AssembledSystem, iters: usize, seed: u64) -> Result<ContractionEstimate> {
        let n = sys.n();
        let mut r = rng::stream(seed, rng::streams::LANCZOS);
        let start = rng::uniform_vector(&mut r, n);
        let op = |x: &[f64]| self.p(sys, x);
        let b = |x: &[f64]| sys.a.matvec(x);
        let tol = 1e-10;
        let stop = |vals: &[f64], bounds: &[f64]| {
            let m = vals.len();
            m >= 2 && bounds[0] <= tol * vals[m - 1] && bounds[m - 1] <= tol * vals[m - 1]
        };
        let run = lanczos(&op, &b, start, iters.max(2).min(n), &[], &[], false, &stop);
        if run.values.is_empty() {
            return Err(Error::NoConvergence("Lanczos start vector vanished".into()));
        }
        let m = run.values.len();
        let lmin = run.values[0];
        let lmax = run.values[m - 1];
        let converged = run.exhausted || (run.bounds[0] <= 1e-6 * lmax && run.bounds[m - 1] <= 1e-6 * lmax);
        if self.mode == PrecondMode::Adaptive {
            self.theta = 2.0 / (lmin + lmax);
        }
        let gamma = (1.0 - self.theta * lmin).abs().max((1.0 - self.theta * lmax).abs());
        let est = ContractionEstimate { gamma, lambda_min: lmin, lambda_max: lmax, steps: run.steps, converged };
        self.estimate = Some(est);
        Ok(est)
    }

    /// Smallest `k` with `γ^k ≤ target`; also stores it as `k_inner`.
    pub fn compose_pbar(&mut self, target_gamma: f64) -> Result<usize> {
        if !(target_gamma > 0.0 && target_gamma < 1.0) {
            return Err(Error::InvalidArgument(format!("target contraction {target_gamma} must lie in (0, 1)")));
        }
        let gamma = self.gamma().ok_or_else(|| Error::Precondition("estimate the contraction before composing P̄".into()))?;
        if !(gamma < 1.0) {
            return Err(Error::Precondition(format!("estimated contraction {gamma} is not below 1")));
        }
        let k = if gamma <= 0.0 { 1 } else { ((target_gamma.ln() / gamma.ln()) - 1e-9).ceil().max(1.0) as usize };
        self.k_inner = k;
        Ok(k)
    }
}

/// One row of the Richardson diagnostics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RichardsonStep {
    pub step: usize,
    /// `|||u − u^(k)|||` when a reference solution is supplied.
    pub energy_error: Option<f64>,
    /// `|||P̃(F − A u^(k))|||`, the preconditioned residual in energy norm.
    pub residual: f64,
    pub support_cells: usize,
    /// Ratio of consecutive errors (or residuals without a reference).
    pub gamma_running: f64,
}

#[derive(Clone, Debug)]
pub struct RichardsonResult {
    pub u: Vec<f64>,
    pub mask: SupportMask,
    pub history: Vec<RichardsonStep>,
}

/// `k` Richardson steps from `u^(0) = 0`, recording diagnostics after each.
pub fn richardson_solve(
    prec: &SchwarzPreconditioner,
    sys: &AssembledSystem,
    f: &[f64],
    f_mask: &SupportMask,
    k: usize,
    reference: Option<&[f64]>,
) -> Result<RichardsonResult> {
    if k == 0 {
        return Err(Error::InvalidArgument("Richardson needs at least one step".into()));
    }
    prec.check(sys, f)?;
    if !load_in_mask(&sys.sub, f, f_mask) {
        return Err(Error::Precondition("load is not contained in its support mask".into()));
    }
    let n = sys.n();
    let mut u = vec![0.0; n];
    let mut mask = CellMask::empty(f_mask.lattice());
    let mut history = Vec::with_capacity(k);
    let err_of = |u: &[f64]| {
        reference.map(|x| {
            let e: Vec<f64> = x.iter().zip(u).map(|(a, b)| a - b).collect();
            sys.a.inner(&e, &e).max(0.0).sqrt()
        })
    };
    let mut prev = match err_of(&u) {
        Some(e) => e,
        None => {
            let c = prec.patches.solve_sum(f);
            sys.a.inner(&c, &c).max(0.0).sqrt()
        }
    };
    for step in 1..=k {
        let (next, next_mask) = prec.richardson_step(sys, f, f_mask, &u, &mask);
        u = next;
        mask = next_mask;
        let au = sys.a.matvec(&u);
        let r: Vec<f64> = f.iter().zip(&au).map(|(a, b)| a - b).collect();
        let c = prec.patches.solve_sum(&r);
        let residual = sys.a.inner(&c, &c).max(0.0).sqrt();
        let energy_error = err_of(&u);
        let cur = energy_error.unwrap_or(residual);
        let gamma_running = if prev > 0.0 { cur / prev } else { 0.0 };
        prev = cur;
        history.push(RichardsonStep { step, energy_error, residual, support_cells: mask.count(), gamma_running });
    }
    Ok(RichardsonResult { u, mask, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{assemble, vector_support, SubgridSpec};
    use crate::geometry::analyze_geometry;
    use crate::potential::{gen_iid, gen_periodic, GridSpec, PotentialField};

    fn setup(d: usize, inv_eps: usize, m: usize) -> (AssembledSystem, GeometryStats) {
        let grid = GridSpec::new(d, inv_eps, 11).unwrap();
        let field = gen_iid(grid, 0.6, 1.0, 4.0 * (inv_eps * inv_eps) as f64).unwrap();
        let sys = assemble(&field, SubgridSpec::new(grid, m).unwrap()).unwrap();
        let stats = analyze_geometry(&field);
        (sys, stats)
    }

    #[test]
    fn patch_counts_and_coverage() {
        let grid = GridSpec::new(1, 4, 0).unwrap();
        let field = gen_periodic(grid, 1.0, 10.0).unwrap();
        let sys = assemble(&field, SubgridSpec::new(grid, 2).unwrap()).unwrap();
        let ps = build_patches(&sys).unwrap();
        assert_eq!(ps.patches.len(), 4);
        assert!(ps.patches.iter().all(|p| p.dofs.len() == 3));
        assert_eq!(ps.patches[0].dofs, vec![7, 0, 1]);
        // periodic field has two distinct 2-cell patterns
        assert_eq!(ps.distinct_factors(), 2);

        let (sys, _) = setup(2, 6, 2);
        let ps = build_patches(&sys).unwrap();
        let mut count = vec![0usize; sys.n()];
        for p in &ps.patches {
            for e in 0..sys.n() {
                if p.cells.contains(&sys.sub.element_cell(e)) {
                    count[e] += 1;
                }
            }
            // no patch dof sits on the boundary of the 2ε cube
            let nodes = sys.sub.nodes();
            let zc = sys.sub.grid.cells().coords(p.vertex);
            for &i in &p.dofs {
                let c = nodes.coords(i);
                for k in 0..2 {
                    assert_ne!(nodes.distance([c[k], 0, 0], [zc[k] * 2, 0, 0]), 2);
                }
            }
        }
        assert!(count.iter().all(|&c| c == 4));
    }

    #[test]
    fn cached_factors_match_direct_submatrices() {
        let (sys, _) = setup(2, 6, 2);
        let ps = build_patches(&sys).unwrap();
        let mut r = rng::stream(3, 0);
        for p in &ps.patches {
            let rhs = rng::uniform_vector(&mut r, p.dofs.len());
            let x = ps.factors[p.factor].solve(&rhs);
            let a = sys.a.principal_submatrix(&p.dofs);
            let k = p.dofs.len();
            for i in 0..k {
                let ax: f64 = (0..k).map(|j| a[i * k + j] * x[j]).sum();
                assert!((ax - rhs[i]).abs() < 1e-9 * (1.0 + rhs[i].abs()));
            }
        }
    }

    #[test]
    fn theoretical_constant_examples() {
        let grid = GridSpec::new(1, 4, 0).unwrap();
        let stats = analyze_geometry(&gen_periodic(grid, 1.0, 10.0).unwrap());
        let c = theoretical_constants(&stats, 1.0);
        assert_eq!((c.k2, c.k1), (2.0, 8.0));
        assert!((c.theta - 8.0 / 17.0).abs() < 1e-15);
        assert!(c.gamma_bound < 1.0);
        let grid = GridSpec::new(2, 4, 0).unwrap();
        let stats = analyze_geometry(&gen_periodic(grid, 1.0, 10.0).unwrap());
        let c = theoretical_constants(&stats, 1.0);
        assert_eq!((c.k2, c.k1), (4.0, 16.0));
    }

    #[test]
    fn p_is_a_symmetric_and_bounded() {
        let (sys, stats) = setup(2, 4, 2);
        let prec = SchwarzPreconditioner::new(&sys, &stats, 1.0, PrecondMode::Adaptive).unwrap();
        let mut r = rng::stream(5, rng::streams::VECTORS);
        for _ in 0..10 {
            let v = rng::uniform_vector(&mut r, sys.n());
            let w = rng::uniform_vector(&mut r, sys.n());
            let pv = prec.p(&sys, &v);
            let pw = prec.p(&sys, &w);
            let lhs = sys.a_inner(&pv, &w);
            let rhs = sys.a_inner(&v, &pw);
            assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()));
            let q = sys.a_inner(&pv, &v) / sys.a_inner(&v, &v);
            assert!(q > 0.0 && q <= 4.0 + 1e-10);
            // P̃ A = P
            let full = CellMask::full(sys.sub.grid.cells());
            let (pt, _) = prec.apply_ptilde(&sys, &sys.a.matvec(&v), &full).unwrap();
            assert_eq!(pt, pv);
        }
    }

    #[test]
    fn single_cell_support_grows_one_layer() {
        let (sys, stats) = setup(2, 8, 2);
        let prec = SchwarzPreconditioner::new(&sys, &stats, 1.0, PrecondMode::Adaptive).unwrap();
        let cells = sys.sub.grid.cells();
        let cell = cells.index([3, 5, 0]);
        // node strictly inside the cell
        let node = sys.sub.nodes().index([7, 11, 0]);
        let mut v = vec![0.0; sys.n()];
        v[node] = 1.0;
        let mask = CellMask::single(cells, cell);
        let (pv, out) = prec.apply_p(&sys, &v, &mask).unwrap();
        assert_eq!(out, mask.dilate(1));
        assert!(vector_in_mask(&sys.sub, &pv, &out));
        assert!(vector_support(&sys.sub, &pv).is_subset_of(&out));
        let zero = prec.apply_p(&sys, &vec![0.0; sys.n()], &mask).unwrap().0;
        assert!(zero.iter().all(|&x| x == 0.0));
        assert!(prec.apply_p(&sys, &v, &CellMask::single(cells, 0)).is_err());
    }

    #[test]
    fn contraction_and_composition() {
        let grid = GridSpec::new(1, 16, 0).unwrap();
        let field = PotentialField::constant_beta(grid, 0.0, 256.0).unwrap();
        let sys = assemble(&field, SubgridSpec::new(grid, 4).unwrap()).unwrap();
        let stats = analyze_geometry(&field);
        let mut theo = SchwarzPreconditioner::new(&sys, &stats, 1.0, PrecondMode::Theoretical).unwrap();
        let g_theo = theo.estimate_contraction(&sys, 200, 1).unwrap();
        assert!(g_theo.gamma < 1.0 && g_theo.converged);
        assert!(g_theo.lambda_max <= 2.0 + 1e-10);
        let mut adapt = SchwarzPreconditioner::new(&sys, &stats, 1.0, PrecondMode::Adaptive).unwrap();
        let g_ad = adapt.estimate_contraction(&sys, 200, 1).unwrap();
        assert!(g_ad.gamma <= g_theo.gamma + 1e-12);

        assert_eq!(adapt.compose_pbar(g_ad.gamma).unwrap(), 1);
        assert_eq!(adapt.compose_pbar(g_ad.gamma * g_ad.gamma).unwrap(), 2);
        assert!(adapt.compose_pbar(1.0).is_err());
        let mut fresh = SchwarzPreconditioner::new(&sys, &stats, 1.0, PrecondMode::Adaptive).unwrap();
        assert!(fresh.compose_pbar(0.5).is_err());
    }

    #[test]
    fn richardson_converges_with_exact_support() {
        let (sys, stats) = setup(1, 16, 4);
        let mut prec = SchwarzPreconditioner::new(&sys, &stats, 1.0, PrecondMode::Adaptive).unwrap();
        let est = prec.estimate_contraction(&sys, 300, 2).unwrap();
        let cell = 7;
        let f = sys.cell_indicator_load(cell);
        let exact = sys.factor_a().unwrap().solve(&f);
        let fmask = CellMask::single(sys.sub.grid.cells(), cell);
        let res = richardson_solve(&prec, &sys, &f, &fmask, 12, Some(&exact)).unwrap();
        let norm = sys.energy_norm(&exact).unwrap();
        for h in &res.history {
            let e = h.energy_error.unwrap() / norm;
            assert!(e <= est.gamma.powi(h.step as i32) * (1.0 + 1e-8), "step {}: {e}", h.step);
            assert_eq!(h.support_cells, (2 * h.step + 1).min(16));
        }
        assert!(vector_in_mask(&sys.sub, &res.u, &res.mask));
    }
}
