//! Measurements: decay profiles of Green's functions and eigenstates,
//! spectral-gap scans, the Friedrichs ratio of the cut-off, min-max
//! certificates and paired spectra.

use serde::{Deserialize, Serialize};

use crate::eig::{oracle, sample_mode, Spectrum, AUTO_DENSE_MAX};
use crate::error::{Error, Result};
use crate::fem::{apply_cutoff, assemble, load_in_mask, vector_in_mask, AssembledSystem, CutoffField, SubgridSpec};
use crate::krylov::lanczos;
use crate::lattice::{CellMask, MAX_DIM};
use crate::potential::{Cuboid, PotentialField};
use crate::rng;
use crate::schwarz::{richardson_solve, RichardsonStep, SchwarzPreconditioner};
use crate::sparse::{CsrMatrix, EnvelopeLdl};

/// Radius schedule of the annuli: `k` or `k²` ε-layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadiusSchedule {
    Linear,
    Quadratic,
}

impl RadiusSchedule {
    pub fn radius(&self, k: usize) -> usize {
        match self {
            RadiusSchedule::Linear => k,
            RadiusSchedule::Quadratic => k * k,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DecayProfile {
    pub centers: Vec<usize>,
    pub schedule: RadiusSchedule,
    /// Radii in ε-layers, strictly increasing.
    pub radii: Vec<usize>,
    /// `|||v|||` restricted to the cells at sup-distance `≥ radius` from all
    /// centres.
    pub annulus_energies: Vec<f64>,
    pub total_energy: f64,
    /// `c` in `annulus ≈ C e^{−c k}` (per step of `k`), `+∞` if degenerate.
    pub fitted_rate: f64,
    pub fit_quality: f64,
    pub fit_points: usize,
    pub degenerate: bool,
}

/// Least-squares line through `(x, y)`; returns `(slope, R²)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    (slope, r2)
}

/// Annulus profile from per-cell energies (`∫|∇v|² + V v²` per ε-cell).
pub fn decay_profile(
    lattice: crate::Lattice,
    cell_energy: &[f64],
    centers: &[usize],
    k_max: usize,
    schedule: RadiusSchedule,
) -> DecayProfile {
    let total: f64 = cell_energy.iter().sum();
    let dist: Vec<usize> = (0..lattice.len())
        .map(|c| {
            let cc = lattice.coords(c);
            centers.iter().map(|&z| lattice.distance(cc, lattice.coords(z))).min().unwrap_or(usize::MAX)
        })
        .collect();
    let mut radii = Vec::new();
    let mut energies = Vec::new();
    for k in 1..=k_max {
        let r = schedule.radius(k);
        if radii.last() == Some(&r) {
            continue;
        }
        // summed in cell order over nested sets, so exactly monotone
        let e: f64 = cell_energy.iter().zip(&dist).filter(|(_, &dz)| dz >= r).map(|(x, _)| *x).sum();
        radii.push(r);
        energies.push(e.sqrt());
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) =
        (1..=radii.len()).zip(&energies).filter(|(_, &e)| e * e > 1e-12 * total).map(|(k, &e)| (k as f64, e.ln())).unzip();
    let (rate, r2, degenerate) = if xs.len() >= 2 {
        let (s, r2) = linear_fit(&xs, &ys);
        (-s, r2, false)
    } else {
        (f64::INFINITY, 0.0, true)
    };
    DecayProfile {
        centers: centers.to_vec(),
        schedule,
        radii,
        annulus_energies: energies,
        total_energy: total.sqrt(),
        fitted_rate: rate,
        fit_quality: r2,
        fit_points: xs.len(),
        degenerate,
    }
}

/// How eigenstate centres are picked.
#[derive(Clone, Debug, PartialEq)]
pub enum CenterRule {
    /// Local maxima (over the `3^d` neighbourhood) of the cellwise `L²` mass
    /// that exceed `rel` times the global maximum, strongest first, at most
    /// `max_centers` of them.
    Threshold {
        rel: f64,
        max_centers: Option<usize>,
    },
    Given(Vec<usize>),
}

/// Centres selected by [`CenterRule::Threshold`] and how many qualified.
pub fn find_centers(lattice: crate::Lattice, mass: &[f64], rel: f64, max_centers: Option<usize>) -> (Vec<usize>, usize) {
    let gmax = mass.iter().copied().fold(0.0, f64::max);
    let neigh = lattice.offsets(-1, 1);
    let mut cand: Vec<usize> = (0..lattice.len())
        .filter(|&c| {
            let cc = lattice.coords(c);
            mass[c] > 0.0 && mass[c] >= rel * gmax && neigh.iter().all(|o| mass[lattice.index(lattice.shift(cc, *o))] <= mass[c])
        })
        .collect();
    let qualifying = cand.len();
    cand.sort_by(|&a, &b| mass[b].total_cmp(&mass[a]).then(a.cmp(&b)));
    if let Some(mx) = max_centers {
        cand.truncate(mx);
    }
    (cand, qualifying)
}

#[derive(Clone, Debug, Serialize)]
pub struct EigenDecay {
    pub profile: DecayProfile,
    pub qualifying_centers: usize,
}

pub fn eigen_decay(
    sys: &AssembledSystem,
    state: &[f64],
    centers: &CenterRule,
    k_max: usize,
    schedule: RadiusSchedule,
) -> Result<EigenDecay> {
    let lattice = sys.sub.grid.cells();
    let (cs, qualifying) = match centers {
        CenterRule::Given(c) => {
            if c.iter().any(|&x| x >= lattice.len()) {
                return Err(Error::InvalidArgument("centre cell out of range".into()));
            }
            (c.clone(), c.len())
        }
        CenterRule::Threshold { rel, max_centers } => find_centers(lattice, &sys.cell_masses(state)?, *rel, *max_centers),
    };
    if cs.is_empty() {
        return Err(Error::InvalidArgument("no localization centre found".into()));
    }
    let energy = sys.cell_energies(state)?;
    Ok(EigenDecay { profile: decay_profile(lattice, &energy, &cs, k_max, schedule), qualifying_centers: qualifying })
}

#[derive(Clone, Debug, Serialize)]
pub struct GreenDecay {
    pub source_cell: usize,
    pub profile: DecayProfile,
    /// `|||u − u^(k)||| / |||u|||` for `k = 1..=k_max`.
    pub errors: Vec<f64>,
    pub error_rate: f64,
    pub error_fit_quality: f64,
    /// Every iterate lay in its `k`-layer dilation of the source cell.
    pub support_ok: bool,
    pub support_cells: Vec<usize>,
    #[serde(skip)]
    pub history: Vec<RichardsonStep>,
}

/// Green's function of an `L²`-normalized single-cell source: direct solve,
/// annulus profile around the source, and Richardson error curve.
pub fn green_decay(sys: &AssembledSystem, prec: &SchwarzPreconditioner, source_cell: usize, k_max: usize) -> Result<GreenDecay> {
    let lattice = sys.sub.grid.cells();
    if source_cell >= lattice.len() {
        return Err(Error::InvalidArgument(format!("source cell {source_cell} out of range")));
    }
    let f = sys.cell_indicator_load(source_cell);
    let fmask = CellMask::single(lattice, source_cell);
    let u = sys.factor_a()?.solve(&f);
    let norm = sys.energy_norm(&u)?;
    let profile = decay_profile(lattice, &sys.cell_energies(&u)?, &[source_cell], k_max, RadiusSchedule::Linear);

    let mut errors = Vec::with_capacity(k_max);
    let mut support_cells = Vec::with_capacity(k_max);
    let mut support_ok = load_in_mask(&sys.sub, &f, &fmask);
    let mut cur = vec![0.0; sys.n()];
    let mut mask = CellMask::empty(lattice);
    // stepwise so containment is checked after every step
    for k in 1..=k_max {
        let (next, next_mask) = prec.richardson_from(sys, &f, &fmask, cur, mask, 1);
        cur = next;
        mask = next_mask;
        support_ok &= mask == fmask.dilate(k) && vector_in_mask(&sys.sub, &cur, &mask);
        support_cells.push(mask.count());
        let e: Vec<f64> = u.iter().zip(&cur).map(|(a, b)| a - b).collect();
        errors.push(sys.a.inner(&e, &e).max(0.0).sqrt() / norm);
    }
    let history = richardson_solve(prec, sys, &f, &fmask, k_max, Some(&u))?.history;
    let (xs, ys): (Vec<f64>, Vec<f64>) =
        errors.iter().enumerate().filter(|(_, &e)| e > 1e-14).map(|(k, &e)| ((k + 1) as f64, e.ln())).unzip();
    let (error_rate, error_fit_quality) = if xs.len() >= 2 {
        let (s, r2) = linear_fit(&xs, &ys);
        (-s, r2)
    } else {
        (f64::INFINITY, 0.0)
    };
    Ok(GreenDecay { source_cell, profile, errors, error_rate, error_fit_quality, support_ok, support_cells, history })
}

#[derive(Clone, Debug, Serialize)]
pub struct GapReport {
    pub head: Vec<f64>,
    pub chosen_k: usize,
    pub gap: f64,
    /// `E¹/E^{K+1}` for `K = 1..=K_max`.
    pub gaps: Vec<f64>,
    pub target: f64,
    pub met_target: bool,
}

/// Smallest `K ≤ K_max` with `E¹/E^{K+1} ≤ target`, or the best `K` with
/// `met_target = false`.
pub fn gap_scan(values: &[f64], k_max: usize, target: f64) -> Result<GapReport> {
    if k_max == 0 {
        return Err(Error::InvalidArgument("K_max must be at least 1".into()));
    }
    if values.len() < k_max + 1 {
        return Err(Error::InvalidArgument(format!("gap scan up to K = {k_max} needs {} eigenvalues, got {}", k_max + 1, values.len())));
    }
    let gaps: Vec<f64> = (1..=k_max).map(|k| values[0] / values[k]).collect();
    let (chosen_k, met) = match gaps.iter().position(|&g| g <= target) {
        Some(i) => (i + 1, true),
        None => {
            let i = (0..k_max).min_by(|&a, &b| gaps[a].total_cmp(&gaps[b]).then(a.cmp(&b))).unwrap();
            (i + 1, false)
        }
    };
    Ok(GapReport { head: values[..=k_max].to_vec(), chosen_k, gap: gaps[chosen_k - 1], gaps, target, met_target: met })
}

#[derive(Clone, Debug, Serialize)]
pub struct FriedrichsReport {
    pub eps: f64,
    pub l: usize,
    /// `max ‖ηv‖/‖∇(ηv)‖` over the random samples.
    pub sampled_max: f64,
    /// Supremum over all `v`: `λ_min^{-1/2}` of the stiffness/mass pencil on
    /// the nodes where `η ≠ 0`.
    pub exact_sup: f64,
    pub sampled_over_eps_l: f64,
    pub exact_over_eps_l: f64,
    pub samples: usize,
    pub skipped: usize,
}

fn restrict(a: &CsrMatrix, keep: &[usize]) -> CsrMatrix {
    let mut map = vec![usize::MAX; a.n()];
    for (new, &old) in keep.iter().enumerate() {
        map[old] = new;
    }
    let trip =
        a.triplets().filter(|&(i, j, _)| map[i] != usize::MAX && map[j] != usize::MAX).map(|(i, j, v)| (map[i], map[j], v)).collect();
    CsrMatrix::from_triplets(keep.len(), trip)
}

pub fn friedrichs_ratio(sys: &AssembledSystem, cutoff: &CutoffField, l: usize, samples: usize, seed: u64) -> Result<FriedrichsReport> {
    let eps = sys.sub.grid.eps();
    let mut r = rng::stream(seed, rng::streams::VECTORS);
    let mut sampled_max = 0.0f64;
    let mut skipped = 0;
    for _ in 0..samples {
        let mut v = rng::uniform_vector(&mut r, sys.n());
        sys.m_normalize(&mut v)?;
        let w = apply_cutoff(cutoff, &v)?;
        let g = sys.k.inner(&w, &w);
        if g <= 0.0 {
            skipped += 1;
            continue;
        }
        sampled_max = sampled_max.max((sys.m.inner(&w, &w) / g).sqrt());
    }

    let keep: Vec<usize> = (0..sys.n()).filter(|&i| cutoff.values[i] != 0.0).collect();
    let exact_sup = if keep.is_empty() {
        0.0
    } else if keep.len() == sys.n() {
        f64::INFINITY
    } else {
        let ks = restrict(&sys.k, &keep);
        let ms = restrict(&sys.m, &keep);
        let f = EnvelopeLdl::factor(&ks)?;
        let op = |x: &[f64]| f.solve(&ms.matvec(x));
        let b = |x: &[f64]| ms.matvec(x);
        let mut rr = rng::stream(seed, rng::streams::LANCZOS);
        let start = rng::uniform_vector(&mut rr, keep.len());
        let stop = |vals: &[f64], bounds: &[f64]| {
            let m = vals.len();
            m > 1 && bounds[m - 1] <= 1e-10 * vals[m - 1]
        };
        let run = lanczos(&op, &b, start, keep.len().min(300), &[], &[], false, &stop);
        let theta = *run.values.last().ok_or_else(|| Error::NoConvergence("Friedrichs Lanczos".into()))?;
        theta.max(0.0).sqrt()
    };
    let el = eps * l as f64;
    Ok(FriedrichsReport {
        eps,
        l,
        sampled_max,
        exact_sup,
        sampled_over_eps_l: sampled_max / el,
        exact_over_eps_l: exact_sup / el,
        samples,
        skipped,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectraTable {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

/// Dense-oracle spectra of two fields on the same subgrid.
pub fn spectra_compare(field_a: &PotentialField, field_b: &PotentialField, sub: SubgridSpec, n_ev: usize) -> Result<SpectraTable> {
    if field_a.grid.d != field_b.grid.d || field_a.grid.inv_eps != field_b.grid.inv_eps {
        return Err(Error::InvalidArgument("spectra comparison needs the same grid".into()));
    }
    let sa = oracle(&assemble(field_a, sub)?, n_ev, AUTO_DENSE_MAX)?;
    let sub_b = SubgridSpec::new(field_b.grid, sub.m)?;
    let sb = oracle(&assemble(field_b, sub_b)?, n_ev, AUTO_DENSE_MAX)?;
    Ok(SpectraTable { a: sa.values, b: sb.values })
}

/// Min-max certificate from disjointly supported valley modes.
#[derive(Clone, Debug, Serialize)]
pub struct MinMaxCertificate {
    pub functions: usize,
    pub max_rayleigh: f64,
    pub eigenvalues_below: usize,
    pub holds: bool,
}

/// Product-sine modes with every index in `1..=ell` on each valley.
pub fn valley_box_modes(sys: &AssembledSystem, valleys: &[Cuboid], ell: usize) -> Result<Vec<Vec<f64>>> {
    let d = sys.sub.d();
    let mut out = Vec::new();
    for c in valleys {
        let total = ell.pow(d as u32);
        for t in 0..total {
            let mut idx = [0usize; MAX_DIM];
            let mut r = t;
            for slot in idx.iter_mut().take(d) {
                *slot = r % ell + 1;
                r /= ell;
            }
            if (0..d).any(|k| idx[k] >= c.sides[k] * sys.sub.m) {
                return Err(Error::InvalidArgument(format!("mode {idx:?} not resolved on valley of sides {:?}", &c.sides[..d])));
            }
            let mut v = sample_mode(&sys.sub, c, idx);
            sys.m_normalize(&mut v)?;
            out.push(v);
        }
    }
    Ok(out)
}

/// Counts oracle eigenvalues up to the largest valley-mode Rayleigh
/// quotient (with relative slack `rel_tol`); holds when at least as many
/// eigenvalues as test functions lie below.
pub fn minmax_certificate(sys: &AssembledSystem, spectrum: &Spectrum, modes: &[Vec<f64>], rel_tol: f64) -> Result<MinMaxCertificate> {
    let mut max_r = f64::NEG_INFINITY;
    for v in modes {
        max_r = max_r.max(sys.rayleigh(v)?);
    }
    let below = crate::eig::count_below(spectrum, max_r, rel_tol);
    Ok(MinMaxCertificate { functions: modes.len(), max_rayleigh: max_r, eigenvalues_below: below, holds: below >= modes.len() })
}

/// `E^{Nℓ^d+1} ε² / (ℓ−1)²` for each `ℓ ≥ 2`, the quantity bounded below
/// by a fixed constant in the periodic case.
pub fn periodic_lower_ratios(values: &[f64], n_valleys: usize, d: usize, eps: f64, ells: &[usize]) -> Result<Vec<f64>> {
    ells.iter()
        .map(|&ell| {
            if ell < 2 {
                return Err(Error::InvalidArgument("lower bound needs ell >= 2".into()));
            }
            let idx = n_valleys * ell.pow(d as u32);
            let e = values.get(idx).ok_or_else(|| Error::InvalidArgument(format!("need {} eigenvalues", idx + 1)))?;
            Ok(e * eps * eps / ((ell - 1) * (ell - 1)) as f64)
        })
        .collect()
}
