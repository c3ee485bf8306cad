//! Periodic index arithmetic shared by the ε-cell lattice and the subgrid
//! node lattice, and ε-cell support masks.

use serde::{Deserialize, Serialize};

/// Maximum supported dimension.
pub const MAX_DIM: usize = 3;

/// Multi-index; entries beyond the lattice dimension are zero.
pub type Coord = [usize; MAX_DIM];

/// A periodic `n^d` lattice. Index order is row-major with axis 0 fastest.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Lattice {
    pub d: usize,
    pub n: usize,
}

impl Lattice {
    pub fn new(d: usize, n: usize) -> Self {
        debug_assert!((1..=MAX_DIM).contains(&d));
        Self { d, n }
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn coords(&self, mut idx: usize) -> Coord {
        let mut c = [0; MAX_DIM];
        for slot in c.iter_mut().take(self.d) {
            *slot = idx % self.n;
            idx /= self.n;
        }
        c
    }

    pub fn index(&self, c: Coord) -> usize {
        let mut idx = 0;
        for k in (0..self.d).rev() {
            idx = idx * self.n + c[k] % self.n;
        }
        idx
    }

    /// `c + delta` with periodic wrap.
    pub fn shift(&self, c: Coord, delta: [isize; MAX_DIM]) -> Coord {
        let n = self.n as isize;
        let mut out = [0; MAX_DIM];
        for k in 0..self.d {
            out[k] = (c[k] as isize + delta[k]).rem_euclid(n) as usize;
        }
        out
    }

    /// Iterator over all offsets in `[lo, hi]^d` (inclusive), axis 0 fastest.
    pub fn offsets(&self, lo: isize, hi: isize) -> Vec<[isize; MAX_DIM]> {
        let span = (hi - lo + 1) as usize;
        let count = span.pow(self.d as u32);
        (0..count)
            .map(|mut t| {
                let mut o = [0isize; MAX_DIM];
                for slot in o.iter_mut().take(self.d) {
                    *slot = lo + (t % span) as isize;
                    t /= span;
                }
                o
            })
            .collect()
    }

    /// Periodic sup-norm distance between two sites.
    pub fn distance(&self, a: Coord, b: Coord) -> usize {
        (0..self.d)
            .map(|k| {
                let diff = a[k].abs_diff(b[k]);
                diff.min(self.n - diff)
            })
            .max()
            .unwrap_or(0)
    }
}

/// Boolean mask over ε-cells marking where a coefficient vector may be
/// nonzero. A primal vector lies in the mask when every subgrid element on
/// which it does not vanish belongs to a masked cell.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CellMask {
    lattice: Lattice,
    bits: Vec<bool>,
}

impl CellMask {
    pub fn empty(lattice: Lattice) -> Self {
        Self { lattice, bits: vec![false; lattice.len()] }
    }

    pub fn full(lattice: Lattice) -> Self {
        Self { lattice, bits: vec![true; lattice.len()] }
    }

    pub fn from_bits(lattice: Lattice, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), lattice.len());
        Self { lattice, bits }
    }

    pub fn single(lattice: Lattice, cell: usize) -> Self {
        let mut m = Self::empty(lattice);
        m.bits[cell] = true;
        m
    }

    pub fn lattice(&self) -> Lattice {
        self.lattice
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn contains(&self, cell: usize) -> bool {
        self.bits[cell]
    }

    pub fn insert(&mut self, cell: usize) {
        self.bits[cell] = true;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_full(&self) -> bool {
        self.bits.iter().all(|&b| b)
    }

    pub fn union(&self, other: &CellMask) -> CellMask {
        let bits = self.bits.iter().zip(&other.bits).map(|(a, b)| *a || *b).collect();
        CellMask { lattice: self.lattice, bits }
    }

    pub fn is_subset_of(&self, other: &CellMask) -> bool {
        self.bits.iter().zip(&other.bits).all(|(a, b)| !*a || *b)
    }

    /// Sup-norm dilation by `layers` cells on the torus.
    pub fn dilate(&self, layers: usize) -> CellMask {
        let mut cur = self.clone();
        let neigh = self.lattice.offsets(-1, 1);
        for _ in 0..layers {
            if cur.is_full() {
                break;
            }
            let mut next = cur.clone();
            for (idx, &on) in cur.bits.iter().enumerate() {
                if on {
                    let c = self.lattice.coords(idx);
                    for o in &neigh {
                        next.bits[self.lattice.index(self.lattice.shift(c, *o))] = true;
                    }
                }
            }
            cur = next;
        }
        cur
    }
}
