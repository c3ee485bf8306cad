//! Valley geometry of a potential: maximal α-cubes, the valley width `L`,
//! the overlap count `κ_T`, and, for fields with cuboid valleys, the level
//! counts `N_j` and anisotropy `ρ`.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Coord, Lattice, MAX_DIM};
use crate::potential::{Cuboid, PotentialField};

/// A maximal cube of α-cells: anchor (minimal corner, on the torus) and side
/// length in ε-units.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MaxCube {
    pub anchor: Coord,
    pub side: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryStats {
    pub d: usize,
    pub inv_eps: usize,
    pub maximal_alpha_cubes: Vec<MaxCube>,
    /// Largest maximal cube side, or 1 when there is no α-cell.
    pub l: usize,
    /// Largest number of maximal cubes covering one α-cell.
    pub kappa: usize,
    /// Cuboid valley decomposition, when one exists.
    pub valley_components: Option<Vec<Cuboid>>,
    /// Level `j` → number of valleys whose shortest side is `j`.
    pub n_by_level: BTreeMap<usize, usize>,
    /// Threshold `ℓ̃` → largest side ratio among valleys of width `>= ℓ̃`.
    pub rho: BTreeMap<usize, f64>,
}

impl GeometryStats {
    pub fn num_valleys(&self) -> usize {
        self.valley_components.as_ref().map_or(0, |v| v.len())
    }

    /// Largest shortest-side over the valley decomposition.
    pub fn max_valley_width(&self) -> usize {
        self.n_by_level.keys().next_back().copied().unwrap_or(0)
    }

    pub fn rho_at(&self, ell_tilde: usize) -> f64 {
        self.rho.range(ell_tilde..).next().map_or(1.0, |(_, r)| *r).max(1.0)
    }
}

/// Largest all-α cube side anchored at every cell (capped at `n`), computed
/// by dynamic programming on the doubled grid so that cubes may wrap.
pub fn anchored_cube_sides(field: &PotentialField) -> Vec<usize> {
    let lat = field.lattice();
    let (d, n) = (lat.d, lat.n);
    let big = Lattice::new(d, 2 * n);
    let mut s = vec![0usize; big.len()];
    let subsets: Vec<[usize; MAX_DIM]> = (1..(1usize << d))
        .map(|mask| {
            let mut e = [0; MAX_DIM];
            for (k, slot) in e.iter_mut().enumerate().take(d) {
                *slot = (mask >> k) & 1;
            }
            e
        })
        .collect();
    for idx in (0..big.len()).rev() {
        let c = big.coords(idx);
        let mut small = c;
        for v in small.iter_mut().take(d) {
            *v %= n;
        }
        if field.occupancy[lat.index(small)] {
            continue;
        }
        let mut best = usize::MAX;
        for e in &subsets {
            let mut nb = c;
            let mut inside = true;
            for k in 0..d {
                nb[k] += e[k];
                if nb[k] >= 2 * n {
                    inside = false;
                }
            }
            let v = if inside { s[big.index(nb)] } else { 0 };
            best = best.min(v);
        }
        s[idx] = 1 + best;
    }
    (0..lat.len())
        .map(|idx| {
            let c = lat.coords(idx);
            s[big.index(c)].min(n)
        })
        .collect()
}

/// All maximal α-cubes on the torus. Side-`n` cubes all cover the whole
/// torus and are reported once, anchored at the origin.
pub fn maximal_alpha_cubes(field: &PotentialField) -> Vec<MaxCube> {
    let lat = field.lattice();
    let n = lat.n;
    let sides = anchored_cube_sides(field);
    let deltas = lat.offsets(-1, 0);
    let mut out = Vec::new();
    let mut whole = false;
    for (idx, &k) in sides.iter().enumerate() {
        if k == 0 {
            continue;
        }
        if k == n {
            whole = true;
            continue;
        }
        let c = lat.coords(idx);
        let contained = deltas.iter().any(|delta| sides[lat.index(lat.shift(c, *delta))] > k);
        if !contained {
            out.push(MaxCube { anchor: c, side: k });
        }
    }
    if whole {
        out.insert(0, MaxCube { anchor: [0; MAX_DIM], side: n });
    }
    out
}

/// Face-connected components of α-cells on the torus.
pub fn alpha_components(field: &PotentialField) -> Vec<Vec<usize>> {
    let lat = field.lattice();
    let d = lat.d;
    let mut label = vec![usize::MAX; lat.len()];
    let mut comps = Vec::new();
    for start in 0..lat.len() {
        if field.occupancy[start] || label[start] != usize::MAX {
            continue;
        }
        let id = comps.len();
        let mut members = vec![start];
        label[start] = id;
        let mut queue = VecDeque::from([start]);
        while let Some(cur) = queue.pop_front() {
            let c = lat.coords(cur);
            for k in 0..d {
                for s in [-1isize, 1] {
                    let mut delta = [0isize; MAX_DIM];
                    delta[k] = s;
                    let nb = lat.index(lat.shift(c, delta));
                    if !field.occupancy[nb] && label[nb] == usize::MAX {
                        label[nb] = id;
                        members.push(nb);
                        queue.push_back(nb);
                    }
                }
            }
        }
        members.sort_unstable();
        comps.push(members);
    }
    comps
}

/// Returns the cuboid a component occupies, if it is one.
pub fn component_as_cuboid(lat: Lattice, cells: &[usize]) -> Option<Cuboid> {
    let d = lat.d;
    let n = lat.n;
    let mut anchor = [0; MAX_DIM];
    let mut sides = [1; MAX_DIM];
    for k in 0..d {
        let mut used = vec![false; n];
        for &c in cells {
            used[lat.coords(c)[k]] = true;
        }
        let runs = crate::potential::cyclic_runs(&used);
        if runs.len() != 1 {
            return None;
        }
        anchor[k] = runs[0].0;
        sides[k] = runs[0].1;
    }
    let cub = Cuboid { anchor, sides };
    (cub.volume(d) == cells.len()).then_some(cub)
}

/// Maximal cubes, `L`, `κ_T`, and the valley statistics.
pub fn analyze_geometry(field: &PotentialField) -> GeometryStats {
    let lat = field.lattice();
    let d = lat.d;
    let cubes = maximal_alpha_cubes(field);
    let l = cubes.iter().map(|c| c.side).max().unwrap_or(1).max(1);

    let mut cover = vec![0usize; lat.len()];
    for q in &cubes {
        for c in Cuboid::cube(q.anchor, q.side, d).cells(lat) {
            cover[c] += 1;
        }
    }
    let kappa = cover.iter().copied().max().unwrap_or(0);

    let valleys = match &field.valleys {
        Some(v) => Some(v.clone()),
        None => {
            let comps = alpha_components(field);
            comps.iter().map(|c| component_as_cuboid(lat, c)).collect::<Option<Vec<_>>>()
        }
    };

    let mut n_by_level = BTreeMap::new();
    let mut rho = BTreeMap::new();
    if let Some(vs) = &valleys {
        for v in vs {
            *n_by_level.entry(v.min_side(d)).or_insert(0) += 1;
        }
        let top = vs.iter().map(|v| v.min_side(d)).max().unwrap_or(0);
        for ell in 1..=top {
            let r = vs.iter().filter(|v| v.min_side(d) >= ell).map(|v| v.max_side(d) as f64 / v.min_side(d) as f64).fold(1.0, f64::max);
            rho.insert(ell, r);
        }
    }

    GeometryStats { d, inv_eps: lat.n, maximal_alpha_cubes: cubes, l, kappa, valley_components: valleys, n_by_level, rho }
}

/// Dimension budget `Σ_{j>ℓ̃} N_j ⌊j/ℓ̃⌋^d ρ_ℓ̃^{d-1}`, rounded up.
pub fn estimate_k(stats: &GeometryStats, ell_tilde: usize) -> Result<usize> {
    if stats.valley_components.is_none() {
        return Err(Error::Precondition("no cuboid valley decomposition available".into()));
    }
    if ell_tilde == 0 {
        return Err(Error::InvalidArgument("ell_tilde must be at least 1".into()));
    }
    if ell_tilde >= stats.l || ell_tilde >= stats.max_valley_width() {
        return Err(Error::InvalidArgument(format!(
            "ell_tilde = {ell_tilde} leaves no valleys above the threshold (L = {}, widest valley = {})",
            stats.l,
            stats.max_valley_width()
        )));
    }
    let d = stats.d as i32;
    let rho = stats.rho_at(ell_tilde);
    let sum: f64 = stats.n_by_level.range(ell_tilde + 1..).map(|(&j, &count)| count as f64 * ((j / ell_tilde) as f64).powi(d)).sum();
    Ok((sum * rho.powi(d - 1) - 1e-9).ceil() as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::{gen_domino, gen_iid, gen_periodic, gen_tensor, tensor_from_factors, DominoSpec, GridSpec};
    use std::collections::BTreeSet;

    fn all_alpha(field: &PotentialField, anchor: Coord, k: usize) -> bool {
        Cuboid::cube(anchor, k, field.grid.d).cells(field.lattice()).iter().all(|&c| !field.occupancy[c])
    }

    fn contains(lat: Lattice, inner: (Coord, usize), outer: (Coord, usize)) -> bool {
        if outer.1 == lat.n {
            return true;
        }
        (0..lat.d).all(|k| (inner.0[k] + lat.n - outer.0[k]) % lat.n + inner.1 <= outer.1)
    }

    /// Exhaustive enumeration over every (anchor, side) pair.
    fn brute_force_maximal(field: &PotentialField) -> BTreeSet<MaxCube> {
        let lat = field.lattice();
        let mut all = Vec::new();
        for idx in 0..lat.len() {
            for k in 1..=lat.n {
                let a = lat.coords(idx);
                if all_alpha(field, a, k) {
                    all.push((a, k));
                }
            }
        }
        let mut out = BTreeSet::new();
        for &(a, k) in &all {
            let strictly_inside = all.iter().any(|&(b, k2)| k2 > k && contains(lat, (a, k), (b, k2)));
            if !strictly_inside {
                if k == lat.n {
                    out.insert(MaxCube { anchor: [0; MAX_DIM], side: k });
                } else {
                    out.insert(MaxCube { anchor: a, side: k });
                }
            }
        }
        out
    }

    fn check_against_brute_force(field: &PotentialField) {
        let fast: BTreeSet<MaxCube> = maximal_alpha_cubes(field).into_iter().collect();
        assert_eq!(fast, brute_force_maximal(field));
    }

    #[test]
    fn periodic_2d_has_unit_valleys() {
        let f = gen_periodic(GridSpec::new(2, 4, 0).unwrap(), 1.0, 9.0).unwrap();
        let s = analyze_geometry(&f);
        assert_eq!(s.l, 1);
        assert_eq!(s.kappa, 1);
        assert_eq!(s.maximal_alpha_cubes.len(), 4);
    }

    #[test]
    fn one_dimensional_kappa_is_one() {
        for seed in 0..10 {
            let f = gen_iid(GridSpec::new(1, 64, seed).unwrap(), 0.4, 1.0, 9.0).unwrap();
            let s = analyze_geometry(&f);
            assert_eq!(s.kappa, 1);
            check_against_brute_force(&f);
        }
    }

    #[test]
    fn l_shaped_region_matches_enumeration() {
        let grid = GridSpec::new(2, 6, 0).unwrap();
        let lat = grid.cells();
        let mut occ = vec![true; 36];
        // L-shape: a 3x3 block plus a 1-wide arm
        for x in 0..3 {
            for y in 0..3 {
                occ[lat.index([x, y, 0])] = false;
            }
        }
        for y in 3..5 {
            occ[lat.index([0, y, 0])] = false;
        }
        for x in 3..5 {
            occ[lat.index([x, 1, 0])] = false;
        }
        let f = PotentialField::from_occupancy(grid, occ, 1.0, 9.0).unwrap();
        check_against_brute_force(&f);
        let s = analyze_geometry(&f);
        assert_eq!(s.l, 3);
        assert!(s.kappa as f64 <= (s.l as f64).powi(2));
    }

    #[test]
    fn wrapped_cube_is_found() {
        let grid = GridSpec::new(2, 6, 0).unwrap();
        let lat = grid.cells();
        let mut occ = vec![true; 36];
        for x in [5, 0] {
            for y in [5, 0] {
                occ[lat.index([x, y, 0])] = false;
            }
        }
        let f = PotentialField::from_occupancy(grid, occ, 1.0, 9.0).unwrap();
        let cubes = maximal_alpha_cubes(&f);
        assert_eq!(cubes, vec![MaxCube { anchor: [5, 5, 0], side: 2 }]);
        check_against_brute_force(&f);
    }

    #[test]
    fn random_fields_match_enumeration() {
        for seed in 0..12 {
            let f = gen_iid(GridSpec::new(2, 7, seed).unwrap(), 0.3, 1.0, 9.0).unwrap();
            check_against_brute_force(&f);
            let s = analyze_geometry(&f);
            assert!(s.kappa <= s.l.pow(2));
        }
        for seed in 0..3 {
            let f = gen_iid(GridSpec::new(3, 4, seed).unwrap(), 0.25, 1.0, 9.0).unwrap();
            check_against_brute_force(&f);
        }
    }

    #[test]
    fn degenerate_fields() {
        let grid = GridSpec::new(2, 5, 0).unwrap();
        let beta = PotentialField::constant_beta(grid, 1.0, 9.0).unwrap();
        let s = analyze_geometry(&beta);
        assert_eq!(s.l, 1);
        assert!(s.maximal_alpha_cubes.is_empty());
        let alpha = PotentialField::from_occupancy(grid, vec![false; 25], 1.0, 9.0).unwrap();
        let s = analyze_geometry(&alpha);
        assert_eq!(s.maximal_alpha_cubes, vec![MaxCube { anchor: [0; 3], side: 5 }]);
        assert_eq!(s.l, 5);
        assert_eq!(s.kappa, 1);
    }

    #[test]
    fn tensor_valleys_are_beta_separated_cuboids() {
        for seed in 0..10 {
            let f = gen_tensor(GridSpec::new(2, 24, seed).unwrap(), 0.6, 1.0, 9.0).unwrap();
            let lat = f.lattice();
            let valleys = f.valleys.clone().unwrap();
            // each valley is a whole face-connected component
            let comps = alpha_components(&f);
            assert_eq!(comps.len(), valleys.len());
            for v in &valleys {
                let cells = v.cells(lat);
                assert!(cells.iter().all(|&c| !f.occupancy[c]));
                // the layer just outside each face is β unless the run spans the axis
                for k in 0..2 {
                    if v.sides[k] == lat.n {
                        continue;
                    }
                    for &c in &cells {
                        let co = lat.coords(c);
                        let mut lo = [0isize; 3];
                        lo[k] = -1;
                        let mut hi = [0isize; 3];
                        hi[k] = 1;
                        for nb in [lat.shift(co, lo), lat.shift(co, hi)] {
                            if !v.contains(lat, nb) {
                                assert!(f.occupancy[lat.index(nb)]);
                            }
                        }
                    }
                }
            }
            let s = analyze_geometry(&f);
            assert_eq!(s.n_by_level.values().sum::<usize>(), valleys.len());
            assert!(s.rho.values().all(|&r| r >= 1.0));
            // for tensor fields the widest valley equals L
            if !valleys.is_empty() {
                assert_eq!(s.max_valley_width(), s.l);
            }
        }
    }

    #[test]
    fn estimate_k_single_valley() {
        // one valley of width 6 in 1D; ell = ceil(6/2) = 3 gives floor(6/3) = 2
        let grid = GridSpec::new(1, 16, 0).unwrap();
        let mut occ = vec![true; 16];
        occ[3..9].fill(false);
        let f = PotentialField::from_occupancy(grid, occ, 1.0, 9.0).unwrap();
        let s = analyze_geometry(&f);
        assert_eq!(s.l, 6);
        assert_eq!(estimate_k(&s, 3).unwrap(), 2);
        assert!(estimate_k(&s, 6).is_err());
        assert!(estimate_k(&s, 0).is_err());
    }

    #[test]
    fn estimate_k_tensor_hand_count() {
        // factors give valleys with sides (2,1) x2: L = 1, so ell = 1 has nothing above it
        let grid = GridSpec::new(2, 4, 0).unwrap();
        let f = tensor_from_factors(grid, &[vec![true, true, false, false], vec![true, false, true, false]], 1.0, 9.0).unwrap();
        let s = analyze_geometry(&f);
        assert_eq!(s.l, 1);
        assert!(estimate_k(&s, 1).is_err());

        // runs x: {3, 1, 2}, y: {4, 2}  → six cuboids
        let grid = GridSpec::new(2, 16, 0).unwrap();
        let x = "1110100110000000";
        let y = "1111001100000000";
        let fx: Vec<bool> = x.chars().map(|c| c == '1').collect();
        let fy: Vec<bool> = y.chars().map(|c| c == '1').collect();
        let f = tensor_from_factors(grid, &[fx, fy], 1.0, 9.0).unwrap();
        let s = analyze_geometry(&f);
        // min sides: (3,4)->3 (3,2)->2 (1,4)->1 (1,2)->1 (2,4)->2 (2,2)->2
        assert_eq!(s.n_by_level.get(&1), Some(&2));
        assert_eq!(s.n_by_level.get(&2), Some(&3));
        assert_eq!(s.n_by_level.get(&3), Some(&1));
        assert_eq!(s.l, 3);
        // rho_1 = max(4/3, 3/2, 4, 2, 2, 1) = 4
        assert_eq!(s.rho_at(1), 4.0);
        // ell = 1: (3 * 2^2 + 1 * 3^2) * 4^1 = 84
        assert_eq!(estimate_k(&s, 1).unwrap(), 84);
        // ell = 2: rho_2 = max(4/3, 3/2... only widths >= 2: (3,4),(3,2),(2,4),(2,2)) = 2
        assert_eq!(s.rho_at(2), 2.0);
        // N_3 * floor(3/2)^2 * 2 = 2
        assert_eq!(estimate_k(&s, 2).unwrap(), 2);
    }

    #[test]
    fn domino_valleys_are_alpha_halves() {
        let f = gen_domino(GridSpec::new(2, 16, 4).unwrap(), &DominoSpec::new(0.5, 4), 1.0, 9.0).unwrap();
        let s = analyze_geometry(&f);
        assert_eq!(s.num_valleys(), f.blocks.as_ref().unwrap().len());
        assert_eq!(s.n_by_level.values().sum::<usize>(), s.num_valleys());
        assert!(s.rho.values().all(|&r| r == 1.0));
    }
}
