//! Q1 finite elements on the periodic subgrid of width `h = ε/m`.
//!
//! Nodes and elements share the lattice `(inv_eps·m)^d`; element `e` has
//! its minimal corner at node `e`, so it lies in ε-cell `⌊e/m⌋`. Element
//! matrices are exact tensor products of the 1D stiffness
//! `(1/h)[[1,-1],[-1,1]]` and mass `(h/6)[[2,1],[1,2]]`, and the potential is
//! constant on each element.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lattice::{CellMask, Coord, Lattice, MAX_DIM};
use crate::potential::{GridSpec, PotentialField};
use crate::sparse::{CsrMatrix, EnvelopeLdl};

/// Default ceiling on the number of subgrid nodes.
pub const DEFAULT_DOF_LIMIT: usize = 1 << 22;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SubgridSpec {
    pub grid: GridSpec,
    pub m: usize,
}

impl SubgridSpec {
    pub fn new(grid: GridSpec, m: usize) -> Result<Self> {
        grid.validate()?;
        if m == 0 {
            return Err(Error::InvalidArgument("subgrid refinement m must be at least 1".into()));
        }
        Ok(Self { grid, m })
    }

    pub fn d(&self) -> usize {
        self.grid.d
    }

    /// Nodes per axis.
    pub fn n_axis(&self) -> usize {
        self.grid.inv_eps * self.m
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n_axis() as f64
    }

    pub fn nodes(&self) -> Lattice {
        Lattice::new(self.grid.d, self.n_axis())
    }

    pub fn num_dofs(&self) -> usize {
        self.nodes().len()
    }

    /// ε-cell containing element `e`.
    pub fn element_cell(&self, e: usize) -> usize {
        let c = self.nodes().coords(e);
        let mut cc = [0; MAX_DIM];
        for k in 0..self.d() {
            cc[k] = c[k] / self.m;
        }
        self.grid.cells().index(cc)
    }

    /// The `2^d` elements sharing node `i` (elements `i - δ`, `δ ∈ {0,1}^d`).
    pub fn node_elements(&self, i: usize) -> Vec<usize> {
        let nodes = self.nodes();
        let c = nodes.coords(i);
        nodes.offsets(-1, 0).into_iter().map(|o| nodes.index(nodes.shift(c, o))).collect()
    }

    /// ε-cells whose closure contains node `i`.
    pub fn node_cells(&self, i: usize) -> Vec<usize> {
        let mut cells: Vec<usize> = self.node_elements(i).into_iter().map(|e| self.element_cell(e)).collect();
        cells.sort_unstable();
        cells.dedup();
        cells
    }

    /// Node indices at the corners of element `e`, local order `Σ δ_k 2^k`.
    pub fn element_nodes(&self, e: usize) -> Vec<usize> {
        let nodes = self.nodes();
        let c = nodes.coords(e);
        nodes.offsets(0, 1).into_iter().map(|o| nodes.index(nodes.shift(c, o))).collect()
    }

    /// Elements of ε-cell `cell`.
    pub fn cell_elements(&self, cell: usize) -> Vec<usize> {
        let nodes = self.nodes();
        let cc = self.grid.cells().coords(cell);
        let mut base: Coord = [0; MAX_DIM];
        for k in 0..self.d() {
            base[k] = cc[k] * self.m;
        }
        nodes.offsets(0, self.m as isize - 1).into_iter().map(|o| nodes.index(nodes.shift(base, o))).collect()
    }
}

/// 1D element matrices on an interval of width `h`.
fn k1(h: f64) -> [[f64; 2]; 2] {
    [[1.0 / h, -1.0 / h], [-1.0 / h, 1.0 / h]]
}

fn m1(h: f64) -> [[f64; 2]; 2] {
    [[h / 3.0, h / 6.0], [h / 6.0, h / 3.0]]
}

/// Element stiffness and mass on a `d`-cube of side `h`, local order
/// `Σ δ_k 2^k`, row-major.
pub fn element_matrices(d: usize, h: f64) -> (Vec<f64>, Vec<f64>) {
    let nl = 1 << d;
    let (k, m) = (k1(h), m1(h));
    let mut ke = vec![0.0; nl * nl];
    let mut me = vec![0.0; nl * nl];
    for i in 0..nl {
        for j in 0..nl {
            let bit = |x: usize, a: usize| (x >> a) & 1;
            let mut mass = 1.0;
            for a in 0..d {
                mass *= m[bit(i, a)][bit(j, a)];
            }
            let mut stiff = 0.0;
            for a in 0..d {
                let mut t = k[bit(i, a)][bit(j, a)];
                for b in 0..d {
                    if b != a {
                        t *= m[bit(i, b)][bit(j, b)];
                    }
                }
                stiff += t;
            }
            ke[i * nl + j] = stiff;
            me[i * nl + j] = mass;
        }
    }
    (ke, me)
}

/// Stiffness `K`, potential mass `M_V`, mass `M` and `A = K + M_V`, all with
/// one common sparsity pattern.
#[derive(Clone, Debug)]
pub struct AssembledSystem {
    pub sub: SubgridSpec,
    pub field: PotentialField,
    pub k: CsrMatrix,
    pub mv: CsrMatrix,
    pub m: CsrMatrix,
    pub a: CsrMatrix,
    elem_k: Vec<f64>,
    elem_m: Vec<f64>,
}

/// `(row, col, K, M_V, M)` contribution of one element.
type ElementEntry = (usize, usize, f64, f64, f64);

pub fn assemble(field: &PotentialField, sub: SubgridSpec) -> Result<AssembledSystem> {
    assemble_with_limit(field, sub, DEFAULT_DOF_LIMIT)
}

pub fn assemble_with_limit(field: &PotentialField, sub: SubgridSpec, limit: usize) -> Result<AssembledSystem> {
    if field.grid != sub.grid {
        return Err(Error::InvalidArgument("field and subgrid use different grids".into()));
    }
    let n_axis = sub.n_axis() as f64;
    if n_axis.powi(sub.d() as i32) > limit as f64 {
        return Err(Error::TooLarge {
            n: n_axis.powi(sub.d() as i32).min(usize::MAX as f64) as usize,
            limit,
            hint: "reduce inv_eps or m, or raise the dof limit",
        });
    }
    let n = sub.num_dofs();
    let d = sub.d();
    let nl = 1 << d;
    let (ke, me) = element_matrices(d, sub.h());

    // per-element triplets are produced in parallel but collected in element
    // order, so the merged matrices do not depend on scheduling
    let per_elem: Vec<Vec<ElementEntry>> = (0..n)
        .into_par_iter()
        .map(|e| {
            let v = field.value(sub.element_cell(e));
            let dofs = sub.element_nodes(e);
            let mut out = Vec::with_capacity(nl * nl);
            for i in 0..nl {
                for j in 0..nl {
                    let mm = me[i * nl + j];
                    out.push((dofs[i], dofs[j], ke[i * nl + j], v * mm, mm));
                }
            }
            out
        })
        .collect();
    let mut tk = Vec::with_capacity(n * nl * nl);
    let mut tv = Vec::with_capacity(n * nl * nl);
    let mut tm = Vec::with_capacity(n * nl * nl);
    for (r, c, kv, vv, mv) in per_elem.into_iter().flatten() {
        tk.push((r, c, kv));
        tv.push((r, c, vv));
        tm.push((r, c, mv));
    }
    let k = CsrMatrix::from_triplets(n, tk);
    let mv = CsrMatrix::from_triplets(n, tv);
    let m = CsrMatrix::from_triplets(n, tm);
    let a = k.lin_comb(1.0, &mv, 1.0);
    Ok(AssembledSystem { sub, field: field.clone(), k, mv, m, a, elem_k: ke, elem_m: me })
}

/// Energy split `vᵀKv` (gradient part) and `vᵀM_V v` (potential part).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyParts {
    pub grad: f64,
    pub potential: f64,
}

impl EnergyParts {
    pub fn total(&self) -> f64 {
        self.grad + self.potential
    }

    pub fn norm(&self) -> f64 {
        self.total().max(0.0).sqrt()
    }
}

impl AssembledSystem {
    pub fn n(&self) -> usize {
        self.a.n()
    }

    fn check(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.n() {
            return Err(Error::DimensionMismatch { expected: self.n(), got: v.len() });
        }
        Ok(())
    }

    pub fn energy_parts(&self, v: &[f64]) -> Result<EnergyParts> {
        self.check(v)?;
        Ok(EnergyParts { grad: self.k.inner(v, v), potential: self.mv.inner(v, v) })
    }

    /// `|||v||| = sqrt(vᵀ A v)`.
    pub fn energy_norm(&self, v: &[f64]) -> Result<f64> {
        self.check(v)?;
        Ok(self.a.inner(v, v).max(0.0).sqrt())
    }

    pub fn mass_norm(&self, v: &[f64]) -> Result<f64> {
        self.check(v)?;
        Ok(self.m.inner(v, v).max(0.0).sqrt())
    }

    pub fn a_inner(&self, u: &[f64], v: &[f64]) -> f64 {
        self.a.inner(u, v)
    }

    pub fn m_inner(&self, u: &[f64], v: &[f64]) -> f64 {
        self.m.inner(u, v)
    }

    /// `vᵀAv / vᵀMv`.
    pub fn rayleigh(&self, v: &[f64]) -> Result<f64> {
        self.check(v)?;
        let den = self.m.inner(v, v);
        if den <= 0.0 {
            return Err(Error::InvalidArgument("Rayleigh quotient of the zero vector".into()));
        }
        Ok(self.a.inner(v, v) / den)
    }

    /// Scales `v` to unit mass norm in place.
    pub fn m_normalize(&self, v: &mut [f64]) -> Result<()> {
        let nrm = self.mass_norm(v)?;
        if nrm <= 0.0 {
            return Err(Error::InvalidArgument("cannot normalize the zero vector".into()));
        }
        v.iter_mut().for_each(|x| *x /= nrm);
        Ok(())
    }

    /// Sparse factorization of `A`.
    pub fn factor_a(&self) -> Result<EnvelopeLdl> {
        EnvelopeLdl::factor(&self.a)
    }

    /// `A − σM`.
    pub fn shifted(&self, sigma: f64) -> CsrMatrix {
        self.a.lin_comb(1.0, &self.m, -sigma)
    }

    /// Energy `∫_e |∇v|² + V v²` of every element, clamped at zero.
    pub fn element_energies(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check(v)?;
        let nl = 1 << self.sub.d();
        Ok((0..self.n())
            .map(|e| {
                let val = self.field.value(self.sub.element_cell(e));
                let dofs = self.sub.element_nodes(e);
                let mut acc = 0.0;
                for i in 0..nl {
                    for j in 0..nl {
                        acc += v[dofs[i]] * (self.elem_k[i * nl + j] + val * self.elem_m[i * nl + j]) * v[dofs[j]];
                    }
                }
                acc.max(0.0)
            })
            .collect())
    }

    /// Element energies summed per ε-cell, in element order.
    pub fn cell_energies(&self, v: &[f64]) -> Result<Vec<f64>> {
        let ee = self.element_energies(v)?;
        let mut out = vec![0.0; self.sub.grid.num_cells()];
        for (e, x) in ee.iter().enumerate() {
            out[self.sub.element_cell(e)] += x;
        }
        Ok(out)
    }

    /// `∫ v²` per ε-cell.
    pub fn cell_masses(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check(v)?;
        let nl = 1 << self.sub.d();
        let mut out = vec![0.0; self.sub.grid.num_cells()];
        for e in 0..self.n() {
            let dofs = self.sub.element_nodes(e);
            let mut acc = 0.0;
            for i in 0..nl {
                for j in 0..nl {
                    acc += v[dofs[i]] * self.elem_m[i * nl + j] * v[dofs[j]];
                }
            }
            out[self.sub.element_cell(e)] += acc.max(0.0);
        }
        Ok(out)
    }

    /// Load vector `F_i = ∫ f φ_i` of `f = |Q|^{-1/2} 1_Q` for the ε-cell
    /// `Q`, so that `‖f‖_{L²} = 1`.
    pub fn cell_indicator_load(&self, cell: usize) -> Vec<f64> {
        let d = self.sub.d();
        let nl = 1usize << d;
        let scale = self.sub.grid.eps().powf(-(d as f64) / 2.0);
        let w = self.sub.h().powi(d as i32) / nl as f64 * scale;
        let mut f = vec![0.0; self.n()];
        for e in self.sub.cell_elements(cell) {
            for i in self.sub.element_nodes(e) {
                f[i] += w;
            }
        }
        f
    }
}

/// Smallest ε-cell mask containing the primal vector `v`: every element on
/// which `v` does not vanish identically.
pub fn vector_support(sub: &SubgridSpec, v: &[f64]) -> CellMask {
    let mut mask = CellMask::empty(sub.grid.cells());
    for (i, &x) in v.iter().enumerate() {
        if x != 0.0 {
            for e in sub.node_elements(i) {
                mask.insert(sub.element_cell(e));
            }
        }
    }
    mask
}

/// Whether the primal vector `v` vanishes on every element outside `mask`.
pub fn vector_in_mask(sub: &SubgridSpec, v: &[f64], mask: &CellMask) -> bool {
    v.iter().enumerate().all(|(i, &x)| x == 0.0 || sub.node_elements(i).into_iter().all(|e| mask.contains(sub.element_cell(e))))
}

/// Whether every nonzero entry of the load `f` sits at a node of a closed
/// masked cell.
pub fn load_in_mask(sub: &SubgridSpec, f: &[f64], mask: &CellMask) -> bool {
    f.iter().enumerate().all(|(i, &x)| x == 0.0 || sub.node_cells(i).into_iter().any(|c| mask.contains(c)))
}

/// Piecewise-multilinear cut-off: 1 outside β-cells, 0 on the centred cube
/// of side ε/2 in each β-cell, linear ramps across the ε/4 collar.
#[derive(Clone, Debug, PartialEq)]
pub struct CutoffField {
    pub values: Vec<f64>,
    /// Measured `ε · max|∇η|`; never above `4√d`.
    pub grad_constant: f64,
}

fn ramp(t: f64) -> f64 {
    (4.0 * (t - 0.5).abs() - 1.0).clamp(0.0, 1.0)
}

pub fn build_cutoff(field: &PotentialField, sub: &SubgridSpec) -> Result<CutoffField> {
    if sub.m < 4 || !sub.m.is_multiple_of(4) {
        return Err(Error::InvalidArgument(format!("cut-off needs m divisible by 4, got m = {}", sub.m)));
    }
    let nodes = sub.nodes();
    let d = sub.d();
    let m = sub.m;
    let values: Vec<f64> = (0..nodes.len())
        .map(|i| {
            let c = nodes.coords(i);
            let mut eta = 1.0f64;
            for e in sub.node_elements(i) {
                let cell = sub.element_cell(e);
                if !field.is_beta(cell) {
                    continue;
                }
                let ec = nodes.coords(e);
                let mut local = 0.0f64;
                for k in 0..d {
                    // node offset inside this cell, in 0..=m
                    let off = ec[k] % m + usize::from(ec[k] != c[k]);
                    local = local.max(ramp(off as f64 / m as f64));
                }
                eta = eta.min(local);
            }
            eta
        })
        .collect();

    let h = sub.h();
    let mut gmax = 0.0f64;
    for e in 0..nodes.len() {
        let dofs = sub.element_nodes(e);
        for corner in 0..(1usize << d) {
            let mut g2 = 0.0;
            for a in 0..d {
                let lo = corner & !(1 << a);
                let hi = corner | (1 << a);
                let g = (values[dofs[hi]] - values[dofs[lo]]) / h;
                g2 += g * g;
            }
            gmax = gmax.max(g2.sqrt());
        }
    }
    Ok(CutoffField { values, grad_constant: gmax * sub.grid.eps() })
}

pub fn apply_cutoff(cutoff: &CutoffField, v: &[f64]) -> Result<Vec<f64>> {
    if v.len() != cutoff.values.len() {
        return Err(Error::DimensionMismatch { expected: cutoff.values.len(), got: v.len() });
    }
    Ok(v.iter().zip(&cutoff.values).map(|(x, e)| x * e).collect())
}
