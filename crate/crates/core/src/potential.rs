//! Two-valued, ε-cellwise constant potentials on the unit torus.
//!
//! A [`PotentialField`] stores one bit per ε-cell (`true` = β-cell) together
//! with the two energy levels. Four generators are provided: the periodic
//! checkerboard, i.i.d. cells, tensor products of one-dimensional Bernoulli
//! factors, and random domino tilings. Every generator is a pure function of
//! its arguments and the seed in [`GridSpec`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Coord, Lattice, MAX_DIM};
use crate::rng::{self, streams, ChaCha8Rng};

/// Dimension, inverse cell width `1/ε`, and RNG seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridSpec {
    pub d: usize,
    pub inv_eps: usize,
    pub seed: u64,
}

impl GridSpec {
    pub fn new(d: usize, inv_eps: usize, seed: u64) -> Result<Self> {
        let g = Self { d, inv_eps, seed };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_DIM).contains(&self.d) {
            return Err(Error::InvalidGrid(format!("dimension {} not in 1..=3", self.d)));
        }
        if self.inv_eps < 2 {
            return Err(Error::InvalidGrid(format!("inv_eps = {} must be at least 2", self.inv_eps)));
        }
        // keep inv_eps^d representable with room for subgrid refinement
        if (self.inv_eps as f64).powi(self.d as i32) > 1e9 {
            return Err(Error::InvalidGrid(format!("inv_eps^{} overflows", self.d)));
        }
        Ok(())
    }

    pub fn eps(&self) -> f64 {
        1.0 / self.inv_eps as f64
    }

    pub fn cells(&self) -> Lattice {
        Lattice::new(self.d, self.inv_eps)
    }

    pub fn num_cells(&self) -> usize {
        self.cells().len()
    }
}

/// Axis-aligned box of ε-cells on the torus, given by its (cyclic) minimal
/// corner and side lengths in cells.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cuboid {
    pub anchor: Coord,
    pub sides: Coord,
}

impl Cuboid {
    pub fn cube(anchor: Coord, side: usize, d: usize) -> Self {
        let mut sides = [1; MAX_DIM];
        sides[..d].fill(side);
        Self { anchor, sides }
    }

    pub fn min_side(&self, d: usize) -> usize {
        self.sides[..d].iter().copied().min().unwrap_or(0)
    }

    pub fn max_side(&self, d: usize) -> usize {
        self.sides[..d].iter().copied().max().unwrap_or(0)
    }

    pub fn volume(&self, d: usize) -> usize {
        self.sides[..d].iter().product()
    }

    /// Cell indices covered, with periodic wrap.
    pub fn cells(&self, lattice: Lattice) -> Vec<usize> {
        let d = lattice.d;
        let vol = self.volume(d);
        let mut out = Vec::with_capacity(vol);
        for mut t in 0..vol {
            let mut c = [0; MAX_DIM];
            for k in 0..d {
                c[k] = (self.anchor[k] + t % self.sides[k]) % lattice.n;
                t /= self.sides[k];
            }
            out.push(lattice.index(c));
        }
        out
    }

    pub fn contains(&self, lattice: Lattice, cell: Coord) -> bool {
        (0..lattice.d).all(|k| {
            let off = (cell[k] + lattice.n - self.anchor[k] % lattice.n) % lattice.n;
            off < self.sides[k]
        })
    }
}

/// One block of a domino tiling: a `2j × j × … × j` cuboid whose long axis is
/// `axis`; the α-half is the lower half along `axis` iff `alpha_first`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DominoBlock {
    pub anchor: Coord,
    pub level: usize,
    pub axis: usize,
    pub alpha_first: bool,
}

impl DominoBlock {
    pub fn extent(&self, d: usize) -> Cuboid {
        let mut sides = [1; MAX_DIM];
        sides[..d].fill(self.level);
        sides[self.axis] = 2 * self.level;
        Cuboid { anchor: self.anchor, sides }
    }

    pub fn alpha_half(&self, d: usize, n: usize) -> Cuboid {
        let mut anchor = self.anchor;
        if !self.alpha_first {
            anchor[self.axis] = (anchor[self.axis] + self.level) % n;
        }
        Cuboid::cube(anchor, self.level, d)
    }
}

/// How a field was produced; serialized in the field header.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FieldKind {
    Periodic,
    Iid { p_beta: f64 },
    Tensor { p_alpha_1d: f64 },
    Domino { level_decay: f64, max_level: usize },
    Planted { valley: Cuboid },
    Custom,
}

impl FieldKind {
    pub fn name(&self) -> &'static str {
        match self {
            FieldKind::Periodic => "periodic",
            FieldKind::Iid { .. } => "iid",
            FieldKind::Tensor { .. } => "tensor",
            FieldKind::Domino { .. } => "domino",
            FieldKind::Planted { .. } => "planted",
            FieldKind::Custom => "custom",
        }
    }
}

/// Cellwise potential `V ∈ {α, β}` on the `inv_eps^d` ε-cells of the torus.
#[derive(Clone, Debug, PartialEq)]
pub struct PotentialField {
    pub grid: GridSpec,
    /// `true` marks a β-cell.
    pub occupancy: Vec<bool>,
    pub alpha: f64,
    pub beta: f64,
    pub kind: FieldKind,
    /// Known cuboid valley decomposition (tensor and domino fields).
    pub valleys: Option<Vec<Cuboid>>,
    /// Domino tiling, when the field is a domino field.
    pub blocks: Option<Vec<DominoBlock>>,
}

fn check_energies(alpha: f64, beta: f64) -> Result<()> {
    if !(alpha.is_finite() && beta.is_finite()) || alpha < 0.0 || beta <= 0.0 || alpha > beta {
        return Err(Error::InvalidArgument(format!("energies must satisfy 0 <= alpha <= beta, beta > 0 (alpha = {alpha}, beta = {beta})")));
    }
    Ok(())
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("{name} = {p} is not a probability")));
    }
    Ok(())
}

impl PotentialField {
    pub fn from_occupancy(grid: GridSpec, occupancy: Vec<bool>, alpha: f64, beta: f64) -> Result<Self> {
        grid.validate()?;
        check_energies(alpha, beta)?;
        if occupancy.len() != grid.num_cells() {
            return Err(Error::DimensionMismatch { expected: grid.num_cells(), got: occupancy.len() });
        }
        Ok(Self { grid, occupancy, alpha, beta, kind: FieldKind::Custom, valleys: None, blocks: None })
    }

    pub fn constant_beta(grid: GridSpec, alpha: f64, beta: f64) -> Result<Self> {
        Self::from_occupancy(grid, vec![true; grid.num_cells()], alpha, beta)
    }

    pub fn lattice(&self) -> Lattice {
        self.grid.cells()
    }

    pub fn is_beta(&self, cell: usize) -> bool {
        self.occupancy[cell]
    }

    pub fn value(&self, cell: usize) -> f64 {
        if self.occupancy[cell] {
            self.beta
        } else {
            self.alpha
        }
    }

    pub fn beta_count(&self) -> usize {
        self.occupancy.iter().filter(|&&b| b).count()
    }

    pub fn has_beta(&self) -> bool {
        self.occupancy.iter().any(|&b| b)
    }
}

/// Periodic checkerboard: a cell is α iff all of its integer coordinates are
/// odd, so in 1D `V(x) = β` iff `⌊x/ε⌋` is even. One α-cell sits in every
/// `2^d` block.
pub fn gen_periodic(grid: GridSpec, alpha: f64, beta: f64) -> Result<PotentialField> {
    grid.validate()?;
    if !grid.inv_eps.is_multiple_of(2) {
        return Err(Error::InvalidGrid(format!(
            "periodic potential needs even inv_eps (got {}); an odd count breaks the period on the torus",
            grid.inv_eps
        )));
    }
    let factors: Vec<Vec<bool>> = (0..grid.d).map(|_| (0..grid.inv_eps).map(|i| i % 2 == 1).collect()).collect();
    let mut field = tensor_from_factors(grid, &factors, alpha, beta)?;
    field.kind = FieldKind::Periodic;
    Ok(field)
}

/// Independent cells, each β with probability `p_beta`.
pub fn gen_iid(grid: GridSpec, p_beta: f64, alpha: f64, beta: f64) -> Result<PotentialField> {
    grid.validate()?;
    check_probability("p_beta", p_beta)?;
    let mut rng = rng::stream(grid.seed, streams::IID);
    let occupancy = (0..grid.num_cells()).map(|_| rng.random_bool(p_beta)).collect();
    let mut field = PotentialField::from_occupancy(grid, occupancy, alpha, beta)?;
    field.kind = FieldKind::Iid { p_beta };
    Ok(field)
}

/// Tensor-product potential: `d` independent Bernoulli(`p_alpha_1d`) factor
/// sequences, a cell being α iff every factor is 1 at its coordinate.
pub fn gen_tensor(grid: GridSpec, p_alpha_1d: f64, alpha: f64, beta: f64) -> Result<PotentialField> {
    grid.validate()?;
    check_probability("p_alpha_1d", p_alpha_1d)?;
    let mut rng = rng::stream(grid.seed, streams::TENSOR);
    let factors: Vec<Vec<bool>> = (0..grid.d).map(|_| (0..grid.inv_eps).map(|_| rng.random_bool(p_alpha_1d)).collect()).collect();
    let mut field = tensor_from_factors(grid, &factors, alpha, beta)?;
    field.kind = FieldKind::Tensor { p_alpha_1d };
    Ok(field)
}

/// Cyclic runs of `true` as `(start, length)`. An all-true sequence is one
/// run of full length starting at 0.
pub fn cyclic_runs(seq: &[bool]) -> Vec<(usize, usize)> {
    let n = seq.len();
    let Some(zero) = seq.iter().position(|&b| !b) else {
        return if n > 0 { vec![(0, n)] } else { vec![] };
    };
    let mut runs = Vec::new();
    let mut t = 1;
    while t <= n {
        let i = (zero + t) % n;
        if seq[i] {
            let start = i;
            let mut len = 0;
            while t <= n && seq[(zero + t) % n] {
                len += 1;
                t += 1;
            }
            runs.push((start, len));
        } else {
            t += 1;
        }
    }
    runs.sort();
    runs
}

/// Builds a tensor-product field from explicit 0/1 factors (`true` = 1).
pub fn tensor_from_factors(grid: GridSpec, factors: &[Vec<bool>], alpha: f64, beta: f64) -> Result<PotentialField> {
    grid.validate()?;
    if factors.len() != grid.d || factors.iter().any(|f| f.len() != grid.inv_eps) {
        return Err(Error::InvalidArgument(format!("need {} factors of length {}", grid.d, grid.inv_eps)));
    }
    let lat = grid.cells();
    let occupancy = (0..lat.len())
        .map(|idx| {
            let c = lat.coords(idx);
            !(0..grid.d).all(|k| factors[k][c[k]])
        })
        .collect();
    let mut field = PotentialField::from_occupancy(grid, occupancy, alpha, beta)?;

    let runs: Vec<Vec<(usize, usize)>> = factors.iter().map(|f| cyclic_runs(f)).collect();
    let mut valleys = Vec::new();
    if runs.iter().all(|r| !r.is_empty()) {
        let counts: Vec<usize> = runs.iter().map(|r| r.len()).collect();
        let total: usize = counts.iter().product();
        for mut t in 0..total {
            let mut anchor = [0; MAX_DIM];
            let mut sides = [1; MAX_DIM];
            for k in 0..grid.d {
                let (s, l) = runs[k][t % counts[k]];
                anchor[k] = s;
                sides[k] = l;
                t /= counts[k];
            }
            valleys.push(Cuboid { anchor, sides });
        }
    }
    field.valleys = Some(valleys);
    Ok(field)
}

/// Parameters of the domino generator.
#[derive(Clone, Debug, PartialEq)]
pub struct DominoSpec {
    /// Levels are drawn with probability proportional to `level_decay^j`.
    pub level_decay: f64,
    /// Largest admissible level (further capped by `inv_eps / 2`).
    pub max_level: usize,
    /// Levels consumed in order before falling back to sampling.
    pub forced_levels: Vec<usize>,
    /// Apply a uniformly random torus translation to the finished tiling.
    pub translate: bool,
}

impl DominoSpec {
    pub fn new(level_decay: f64, max_level: usize) -> Self {
        Self { level_decay, max_level, forced_levels: Vec::new(), translate: true }
    }
}

/// Draws from `P(j) ∝ decay^j` on `1..=jmax`.
pub fn sample_level(rng: &mut ChaCha8Rng, decay: f64, jmax: usize) -> usize {
    if jmax <= 1 || decay <= 0.0 {
        return 1;
    }
    let weights: Vec<f64> = (1..=jmax).map(|j| decay.powi(j as i32)).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i + 1;
        }
        u -= w;
    }
    jmax
}

const DOMINO_ATTEMPTS: u64 = 32;

/// Random tiling of the torus by domino blocks.
///
/// Blocks are placed greedily at the first uncovered cell in index order,
/// which keeps every column along the slowest axis covered as a prefix. A
/// sampled level is shrunk until the block fits; orientation and α-half are
/// uniform. If a pass dead-ends (possible for `d >= 2`), it is retried on a
/// fresh stream; the final attempt only allows odd levels along the slowest
/// axis, which keeps all column heights even and cannot dead-end.
pub fn gen_domino(grid: GridSpec, spec: &DominoSpec, alpha: f64, beta: f64) -> Result<PotentialField> {
    grid.validate()?;
    if !grid.inv_eps.is_multiple_of(2) {
        return Err(Error::InvalidGrid(format!("domino tiling needs even inv_eps (got {})", grid.inv_eps)));
    }
    if !(spec.level_decay > 0.0 && spec.level_decay.is_finite()) {
        return Err(Error::InvalidArgument(format!("level_decay = {} must be positive", spec.level_decay)));
    }
    let lat = grid.cells();
    let jmax = spec.max_level.max(1).min(grid.inv_eps / 2);

    let mut tiling = None;
    for attempt in 0..DOMINO_ATTEMPTS {
        let parity_safe = attempt + 1 == DOMINO_ATTEMPTS;
        let mut rng = rng::stream(grid.seed, streams::DOMINO + 1000 * attempt);
        if let Some(blocks) = try_tile(lat, spec, jmax, parity_safe, &mut rng) {
            tiling = Some(blocks);
            break;
        }
    }
    let mut blocks = tiling.ok_or_else(|| Error::InvalidGrid("domino tiling failed".into()))?;

    if spec.translate {
        let mut rng = rng::stream(grid.seed, streams::DOMINO_SHIFT);
        let mut shift = [0; MAX_DIM];
        for s in shift.iter_mut().take(grid.d) {
            *s = rng.random_range(0..grid.inv_eps);
        }
        for b in &mut blocks {
            for k in 0..grid.d {
                b.anchor[k] = (b.anchor[k] + shift[k]) % grid.inv_eps;
            }
        }
    }

    let mut occupancy = vec![true; lat.len()];
    let mut valleys = Vec::with_capacity(blocks.len());
    for b in &blocks {
        let half = b.alpha_half(grid.d, grid.inv_eps);
        for c in half.cells(lat) {
            occupancy[c] = false;
        }
        valleys.push(half);
    }
    let mut field = PotentialField::from_occupancy(grid, occupancy, alpha, beta)?;
    field.kind = FieldKind::Domino { level_decay: spec.level_decay, max_level: spec.max_level };
    field.valleys = Some(valleys);
    field.blocks = Some(blocks);
    Ok(field)
}

fn try_tile(lat: Lattice, spec: &DominoSpec, jmax: usize, parity_safe: bool, rng: &mut ChaCha8Rng) -> Option<Vec<DominoBlock>> {
    let d = lat.d;
    let n = lat.n;
    let mut covered = vec![false; lat.len()];
    let mut blocks = Vec::new();
    let mut forced = spec.forced_levels.iter().copied();
    let mut cursor = 0;
    loop {
        while cursor < covered.len() && covered[cursor] {
            cursor += 1;
        }
        if cursor == covered.len() {
            return Some(blocks);
        }
        let anchor = lat.coords(cursor);
        let sampled = match forced.next() {
            Some(j) => j.clamp(1, jmax),
            None => sample_level(rng, spec.level_decay, jmax),
        };
        let alpha_first = rng.random_bool(0.5);
        let mut axes: Vec<usize> = (0..d).collect();
        for i in (1..axes.len()).rev() {
            let k = rng.random_range(0..=i);
            axes.swap(i, k);
        }
        let mut placed = None;
        'levels: for j in (1..=sampled).rev() {
            for &axis in &axes {
                if parity_safe && j % 2 == 1 && axis != d - 1 {
                    continue;
                }
                let block = DominoBlock { anchor, level: j, axis, alpha_first };
                let ext = block.extent(d);
                if (0..d).any(|k| anchor[k] + ext.sides[k] > n) {
                    continue;
                }
                let cells = ext.cells(lat);
                if cells.iter().all(|&c| !covered[c]) {
                    placed = Some((block, cells));
                    break 'levels;
                }
            }
        }
        let (block, cells) = placed?;
        for c in cells {
            covered[c] = true;
        }
        blocks.push(block);
    }
}

/// Copies `background`, sets `valley` to α and surrounds it by one layer of
/// β-cells, so that the valley is exactly the planted cuboid.
pub fn plant_valley(background: &PotentialField, valley: Cuboid) -> Result<PotentialField> {
    let lat = background.lattice();
    let d = lat.d;
    if (0..d).any(|k| valley.sides[k] == 0 || valley.sides[k] + 2 > lat.n) {
        return Err(Error::InvalidArgument("planted valley plus its β-collar must fit on the torus".into()));
    }
    let mut field = background.clone();
    let mut collar = valley;
    for k in 0..d {
        collar.anchor[k] = (valley.anchor[k] + lat.n - 1) % lat.n;
        collar.sides[k] = valley.sides[k] + 2;
    }
    for c in collar.cells(lat) {
        field.occupancy[c] = true;
    }
    for c in valley.cells(lat) {
        field.occupancy[c] = false;
    }
    field.kind = FieldKind::Planted { valley };
    field.valleys = None;
    field.blocks = None;
    Ok(field)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(d: usize, n: usize, seed: u64) -> GridSpec {
        GridSpec::new(d, n, seed).unwrap()
    }

    #[test]
    fn periodic_1d_matches_floor_rule() {
        let f = gen_periodic(g(1, 4, 0), 1.0, 10.0).unwrap();
        // β iff floor(x/eps) even
        assert_eq!(f.occupancy, vec![true, false, true, false]);
    }

    #[test]
    fn periodic_2d_smallest_board() {
        let f = gen_periodic(g(2, 2, 0), 1.0, 10.0).unwrap();
        // one α-cell per 2x2 block, at (1,1)
        assert_eq!(f.occupancy, vec![true, true, true, false]);
        assert_eq!(f.beta_count(), 3);
    }

    #[test]
    fn periodic_rejects_odd() {
        let err = gen_periodic(g(1, 5, 0), 1.0, 2.0).unwrap_err();
        assert!(err.to_string().contains("even inv_eps"));
    }

    #[test]
    fn invalid_grids() {
        assert!(GridSpec::new(1, 1, 0).is_err());
        assert!(GridSpec::new(4, 8, 0).is_err());
        assert!(GridSpec::new(0, 8, 0).is_err());
    }

    #[test]
    fn iid_extremes_and_determinism() {
        let all_beta = gen_iid(g(2, 8, 3), 1.0, 1.0, 5.0).unwrap();
        assert!(all_beta.occupancy.iter().all(|&b| b));
        let all_alpha = gen_iid(g(2, 8, 3), 0.0, 1.0, 5.0).unwrap();
        assert!(all_alpha.occupancy.iter().all(|&b| !b));
        let a = gen_iid(g(1, 256, 42), 0.5, 1.0, 5.0).unwrap();
        let b = gen_iid(g(1, 256, 42), 0.5, 1.0, 5.0).unwrap();
        assert_eq!(a.occupancy, b.occupancy);
        let c = gen_iid(g(1, 256, 43), 0.5, 1.0, 5.0).unwrap();
        assert_ne!(a.occupancy, c.occupancy);
        assert!(gen_iid(g(1, 8, 0), 1.5, 1.0, 2.0).is_err());
    }

    #[test]
    fn tensor_alternating_factors_are_periodic() {
        let grid = g(2, 8, 0);
        let odd: Vec<bool> = (0..8).map(|i| i % 2 == 1).collect();
        let t = tensor_from_factors(grid, &[odd.clone(), odd], 1.0, 9.0).unwrap();
        let p = gen_periodic(grid, 1.0, 9.0).unwrap();
        assert_eq!(t.occupancy, p.occupancy);
        // [1,0,1,0,...] is the same board translated by one cell
        let even: Vec<bool> = (0..8).map(|i| i % 2 == 0).collect();
        let t0 = tensor_from_factors(grid, &[even.clone(), even], 1.0, 9.0).unwrap();
        let lat = grid.cells();
        for idx in 0..lat.len() {
            let shifted = lat.index(lat.shift(lat.coords(idx), [1, 1, 0]));
            assert_eq!(t0.occupancy[idx], p.occupancy[shifted]);
        }
    }

    #[test]
    fn tensor_hand_example() {
        let grid = g(2, 4, 0);
        let v1 = vec![true, true, false, false];
        let v2 = vec![true, false, true, false];
        let f = tensor_from_factors(grid, &[v1.clone(), v2.clone()], 1.0, 9.0).unwrap();
        let lat = grid.cells();
        for idx in 0..lat.len() {
            let c = lat.coords(idx);
            assert_eq!(!f.occupancy[idx], v1[c[0]] && v2[c[1]]);
        }
        let mut valleys = f.valleys.clone().unwrap();
        valleys.sort_by_key(|v| (v.anchor, v.sides));
        assert_eq!(valleys.len(), 2);
        for v in &valleys {
            assert_eq!(&v.sides[..2], &[2, 1]);
        }
        assert_eq!(valleys[0].anchor[..2], [0, 0]);
        assert_eq!(valleys[1].anchor[..2], [0, 2]);
    }

    #[test]
    fn tensor_zero_probability_is_all_beta() {
        let f = gen_tensor(g(2, 16, 5), 0.0, 1.0, 9.0).unwrap();
        assert!(f.occupancy.iter().all(|&b| b));
        assert!(f.valleys.unwrap().is_empty());
    }

    #[test]
    fn cyclic_runs_wrap() {
        let s = vec![true, false, false, true, true];
        assert_eq!(cyclic_runs(&s), vec![(3, 3)]);
        assert_eq!(cyclic_runs(&[true, true]), vec![(0, 2)]);
        assert_eq!(cyclic_runs(&[false, false]), vec![]);
        assert_eq!(cyclic_runs(&[true, false, true, false]), vec![(0, 1), (2, 1)]);
    }

    #[test]
    fn domino_forced_single_block() {
        let mut spec = DominoSpec::new(0.5, 4);
        spec.forced_levels = vec![2];
        spec.translate = false;
        for seed in 0..8 {
            let f = gen_domino(g(1, 4, seed), &spec, 1.0, 9.0).unwrap();
            let blocks = f.blocks.as_ref().unwrap();
            assert_eq!(blocks.len(), 1);
            assert!(f.occupancy == vec![false, false, true, true] || f.occupancy == vec![true, true, false, false], "{:?}", f.occupancy);
        }
    }

    fn assert_exact_cover(f: &PotentialField) {
        let lat = f.lattice();
        let mut count = vec![0usize; lat.len()];
        for b in f.blocks.as_ref().unwrap() {
            for c in b.extent(lat.d).cells(lat) {
                count[c] += 1;
            }
        }
        assert!(count.iter().all(|&c| c == 1), "cover counts {:?}", count);
        let total: usize = f.blocks.as_ref().unwrap().iter().map(|b| b.extent(lat.d).volume(lat.d)).sum();
        assert_eq!(total, lat.len());
    }

    #[test]
    fn domino_exact_cover_2d_and_3d() {
        for seed in 0..20 {
            assert_exact_cover(&gen_domino(g(2, 8, seed), &DominoSpec::new(0.5, 4), 1.0, 9.0).unwrap());
            assert_exact_cover(&gen_domino(g(2, 16, seed), &DominoSpec::new(0.7, 8), 1.0, 9.0).unwrap());
        }
        for seed in 0..4 {
            assert_exact_cover(&gen_domino(g(3, 6, seed), &DominoSpec::new(0.5, 3), 1.0, 9.0).unwrap());
        }
        assert!(gen_domino(g(1, 7, 0), &DominoSpec::new(0.5, 3), 1.0, 9.0).is_err());
    }

    #[test]
    fn domino_half_alpha() {
        let f = gen_domino(g(2, 16, 11), &DominoSpec::new(0.5, 4), 1.0, 9.0).unwrap();
        assert_eq!(f.beta_count() * 2, f.grid.num_cells());
    }

    #[test]
    fn plant_valley_sets_collar() {
        let bg = gen_periodic(g(1, 16, 0), 1.0, 9.0).unwrap();
        let f = plant_valley(&bg, Cuboid::cube([5, 0, 0], 4, 1)).unwrap();
        assert_eq!(&f.occupancy[4..10], &[true, false, false, false, false, true]);
    }
}
