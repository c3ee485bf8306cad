//! Spectral bounds and iteration properties checked against independent
//! closed forms or oracle solves.

use std::f64::consts::PI;

use qloc::analysis::{gap_scan, periodic_lower_ratios};
use qloc::dense::generalized_eigen;
use qloc::eig::{self, InexactOptions, LocalSpace};
use qloc::fem::{assemble, vector_in_mask, AssembledSystem, SubgridSpec};
use qloc::geometry::analyze_geometry;
use qloc::potential::{gen_iid, gen_periodic, plant_valley, Cuboid};
use qloc::rng;
use qloc::schwarz::{PrecondMode, SchwarzPreconditioner};
use qloc::{CellMask, GridSpec, PotentialField};
use rand::Rng;

fn sys_of(f: &PotentialField, m: usize) -> AssembledSystem {
    assemble(f, SubgridSpec::new(f.grid, m).unwrap()).unwrap()
}

fn beta_for(g: GridSpec, scale: f64) -> f64 {
    scale / (g.eps() * g.eps())
}

/// Discrete Dirichlet eigenvalue of 1D Q1 for `sin(πx/w)` on `n` elements of width `h`.
fn q1_sine_value(n: usize, h: f64) -> f64 {
    let t = PI / n as f64;
    6.0 / (h * h) * (1.0 - t.cos()) / (2.0 + t.cos())
}

/// Nodal `∏ sin(π (x_k − a_k)/w_k)` on the valley, zero elsewhere.
fn sine_bump(sys: &AssembledSystem, valley: &Cuboid) -> Vec<f64> {
    let sub = &sys.sub;
    let nodes = sub.nodes();
    (0..sub.num_dofs())
        .map(|i| {
            let c = nodes.coords(i);
            (0..sub.d())
                .map(|k| {
                    let lo = valley.anchor[k] * sub.m;
                    let w = valley.sides[k] * sub.m;
                    let off = (c[k] + nodes.n - lo) % nodes.n;
                    if off <= w {
                        (PI * off as f64 / w as f64).sin()
                    } else {
                        0.0
                    }
                })
                .product()
        })
        .collect()
}

#[test]
fn sine_mode_rayleigh_matches_q1_dispersion() {
    for (d, inv_eps, l) in [(1usize, 32usize, 4usize), (1, 32, 7), (2, 8, 3)] {
        let g = GridSpec::new(d, inv_eps, 0).unwrap();
        let bg = PotentialField::constant_beta(g, 1.0, beta_for(g, 8.0)).unwrap();
        let valley = Cuboid::cube([2, 1, 0], l, d);
        let f = plant_valley(&bg, valley).unwrap();
        let sys = sys_of(&f, 4);
        let v = sine_bump(&sys, &valley);
        let q = sys.rayleigh(&v).unwrap();
        let exact = 1.0 + d as f64 * q1_sine_value(l * 4, sys.sub.h());
        assert!((q - exact).abs() <= 1e-9 * exact, "d={d} l={l}: {q} vs {exact}");
        // sharpness: continuum value plus an O(h²) excess
        let cont = 1.0 + d as f64 * PI * PI / (g.eps() * l as f64).powi(2);
        let kh = PI / (l * 4) as f64;
        assert!(q >= cont && q <= 1.0 + (cont - 1.0) * (1.0 + kh * kh / 6.0), "d={d} l={l}: {q} vs {cont}");
        let e1 = eig::oracle(&sys, 1, eig::AUTO_DENSE_MAX).unwrap().values[0];
        assert!(e1 <= q * (1.0 + 1e-10));
    }
}

#[test]
fn ground_energy_lower_bound_across_random_fields() {
    let e1_scaled = |f: &PotentialField| {
        let stats = analyze_geometry(f);
        let sys = sys_of(f, 4);
        let e1 = eig::oracle(&sys, 1, eig::AUTO_DENSE_MAX).unwrap().values[0];
        e1 * (f.grid.eps() * stats.l as f64).powi(2)
    };
    let g = GridSpec::new(1, 64, 0).unwrap();
    let beta = beta_for(g, 8.0);
    let c = e1_scaled(&gen_periodic(g, 1.0, beta).unwrap());
    assert!(c > 0.0);
    for seed in 0..20 {
        let f = gen_iid(GridSpec::new(1, 64, seed).unwrap(), 0.5, 1.0, beta).unwrap();
        let s = e1_scaled(&f);
        assert!(s >= 0.5 * c, "seed {seed}: E1 (eps L)^2 = {s:.3}, calibrated c = {c:.3}");
    }
}

#[test]
fn periodic_excited_band_lower_bound() {
    let g = GridSpec::new(1, 16, 0).unwrap();
    let f = gen_periodic(g, 1.0, beta_for(g, 8.0)).unwrap();
    let n_valleys = analyze_geometry(&f).num_valleys();
    let sys = sys_of(&f, 8);
    let s = eig::dense_oracle(&sys, 3 * n_valleys + 1).unwrap();
    let r = periodic_lower_ratios(&s.values, n_valleys, 1, g.eps(), &[2, 3]).unwrap();
    // the band edge sits near (ℓ+1)²π²/ε², so the ratio to (ℓ−1)² drops from 9 to 4
    let c = r[0] / 3.0;
    assert!(r.iter().all(|&x| x >= c), "{r:?}");
}

#[test]
fn disjoint_modes_span_stays_in_energy_window() {
    let g = GridSpec::new(1, 16, 0).unwrap();
    let f = gen_periodic(g, 1.0, beta_for(g, 8.0)).unwrap();
    let valleys = analyze_geometry(&f).valley_components.unwrap();
    let sys = sys_of(&f, 4);
    let modes = qloc::analysis::valley_box_modes(&sys, &valleys, 2).unwrap();
    let energies: Vec<f64> = modes.iter().map(|u| sys.rayleigh(u).unwrap()).collect();
    let (lo, hi) = energies.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &e| (a.min(e), b.max(e)));
    let mut r = rng::stream(2, rng::streams::VECTORS);
    for _ in 0..200 {
        let mut u = vec![0.0; sys.n()];
        for m in &modes {
            let c: f64 = r.random_range(-1.0..1.0);
            u.iter_mut().zip(m).for_each(|(a, b)| *a += c * b);
        }
        let e = sys.rayleigh(&u).unwrap();
        assert!(e >= lo * (1.0 - 1e-12) && e <= hi * (1.0 + 1e-12), "{e} outside [{lo}, {hi}]");
    }
}

#[test]
fn gap_scan_is_invariant_under_pencil_scaling() {
    let g = GridSpec::new(1, 16, 3).unwrap();
    let f = gen_iid(g, 0.5, 1.0, beta_for(g, 8.0)).unwrap();
    let sys = sys_of(&f, 2);
    let (a, m) = (sys.a.to_dense(), sys.m.to_dense());
    let (base, _) = generalized_eigen(&a, &m).unwrap();
    let (scaled, _) = generalized_eigen(&(&a * 37.5), &(&m * 37.5)).unwrap();
    let r0 = gap_scan(&base, 8, 0.5).unwrap();
    let r1 = gap_scan(&scaled, 8, 0.5).unwrap();
    assert_eq!(r0.chosen_k, r1.chosen_k);
    for (x, y) in r0.gaps.iter().zip(&r1.gaps) {
        assert!((x - y).abs() <= 1e-10 * x);
    }
}

#[test]
fn inexact_block_tracks_exact_block() {
    let g = GridSpec::new(1, 32, 6).unwrap();
    let f = gen_iid(g, 0.5, 1.0, beta_for(g, 8.0)).unwrap();
    let stats = analyze_geometry(&f);
    let sys = sys_of(&f, 4);
    let s = eig::dense_oracle(&sys, 6).unwrap();
    let k_block = 3;
    let gap = s.values[0] / s.values[k_block];
    let tol = 1e-3;
    let k = eig::outer_steps(tol, gap).unwrap();
    let mut prec = SchwarzPreconditioner::new(&sys, &stats, 1.0, PrecondMode::Adaptive).unwrap();
    prec.estimate_contraction(&sys, 400, 1).unwrap();
    prec.compose_pbar(gap.powi(k as i32)).unwrap();
    let gamma_bar = prec.gamma().unwrap().powi(prec.k_inner as i32);
    let space = LocalSpace { mask: CellMask::full(g.cells()), m_tilde: 2 };
    let start = eig::build_start_projection(&sys, &s, &space, k_block).unwrap();
    let opts = InexactOptions { tol, gap, u1: Some(s.vectors[0].clone()), track_exact: true };
    let res = eig::inexact_block_iteration(&sys, &prec, s.values[0], &start, &opts).unwrap();
    let v0_max = start.vectors.iter().map(|v| sys.energy_norm(v).unwrap()).fold(0.0, f64::max);
    assert_eq!(res.exact_distance.len(), k + 1);
    for (step, dist) in res.exact_distance.iter().enumerate().skip(1) {
        let curve = gamma_bar * (1.0 + 2.0 * gamma_bar).powi(step as i32) * v0_max;
        assert!(*dist <= 5.0 * curve, "step {step}: {dist:.3e} vs {curve:.3e}");
    }
    for (v, m) in res.state.block.iter().zip(&res.state.masks) {
        assert!(vector_in_mask(&sys.sub, v, m));
    }
}
