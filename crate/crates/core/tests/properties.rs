//! Randomized invariants over generated fields, masks and the text formats.

use proptest::prelude::*;

use qloc::fem::{assemble, vector_in_mask, SubgridSpec};
use qloc::geometry::{analyze_geometry, maximal_alpha_cubes};
use qloc::io::{field_to_json, parse_field, parse_matrix_dump, parse_vector_csv, Encoding};
use qloc::potential::{gen_domino, gen_iid, gen_tensor, Cuboid, DominoSpec};
use qloc::schwarz::{PrecondMode, SchwarzPreconditioner};
use qloc::{CellMask, GridSpec, Lattice, PotentialField};

fn all_alpha(f: &PotentialField, cube: &Cuboid) -> bool {
    cube.cells(f.lattice()).into_iter().all(|c| !f.is_beta(c))
}

fn small_grid() -> impl Strategy<Value = GridSpec> {
    prop_oneof![(4usize..=24).prop_map(|n| (1, n)), (2usize..=8).prop_map(|n| (2, n))]
        .prop_flat_map(|(d, n)| any::<u64>().prop_map(move |seed| GridSpec::new(d, n, seed).unwrap()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn maximal_cubes_are_alpha_and_not_extendable(g in small_grid(), p in 0.2f64..0.8) {
        let f = gen_iid(g, p, 1.0, 50.0).unwrap();
        let lat = f.lattice();
        let d = g.d;
        let cubes = maximal_alpha_cubes(&f);
        for mc in &cubes {
            let cube = Cuboid::cube(mc.anchor, mc.side, d);
            prop_assert!(all_alpha(&f, &cube));
            if mc.side < g.inv_eps {
                // every side+1 cube containing this one, over all anchors
                for off in lat.offsets(-1, 0) {
                    let big = Cuboid::cube(lat.shift(mc.anchor, off), mc.side + 1, d);
                    prop_assert!(!all_alpha(&f, &big), "{mc:?} extends to {big:?}");
                }
            }
        }
        // every α-cell is covered
        let covered = cubes.iter().fold(CellMask::empty(lat), |mut m, mc| {
            for c in Cuboid::cube(mc.anchor, mc.side, d).cells(lat) {
                m.insert(c);
            }
            m
        });
        for c in 0..lat.len() {
            prop_assert_eq!(covered.contains(c), !f.is_beta(c));
        }
        let stats = analyze_geometry(&f);
        prop_assert!(stats.kappa <= stats.l.pow(d as u32));
    }

    #[test]
    fn generators_are_deterministic(g in small_grid(), p in 0.0f64..1.0) {
        let a = gen_iid(g, p, 1.0, 9.0).unwrap();
        prop_assert_eq!(&a.occupancy, &gen_iid(g, p, 1.0, 9.0).unwrap().occupancy);
        let t = gen_tensor(g, p, 1.0, 9.0).unwrap();
        prop_assert_eq!(&t.occupancy, &gen_tensor(g, p, 1.0, 9.0).unwrap().occupancy);
        if g.inv_eps % 2 == 0 {
            let spec = DominoSpec::new(0.5, 3);
            let x = gen_domino(g, &spec, 1.0, 9.0).unwrap();
            let y = gen_domino(g, &spec, 1.0, 9.0).unwrap();
            prop_assert_eq!(&x.occupancy, &y.occupancy);
            prop_assert_eq!(x.blocks, y.blocks);
        }
    }

    #[test]
    fn field_json_roundtrip(g in small_grid(), p in 0.0f64..1.0, hex in any::<bool>()) {
        let f = gen_iid(g, p, 1.5, 40.0).unwrap();
        let enc = if hex { Encoding::Hex } else { Encoding::Csv };
        let back = parse_field(&field_to_json(&f, enc)).unwrap();
        prop_assert_eq!(back.occupancy, f.occupancy);
        prop_assert_eq!(back.grid, f.grid);
        prop_assert_eq!((back.alpha, back.beta), (f.alpha, f.beta));
    }

    #[test]
    fn dilation_is_monotone(n in 3usize..12, cells in prop::collection::vec(0usize..144, 1..6), k in 0usize..4) {
        let lat = Lattice::new(2, n);
        let mut m = CellMask::empty(lat);
        for c in cells {
            m.insert(c % lat.len());
        }
        let a = m.dilate(k);
        let b = m.dilate(k + 1);
        prop_assert!(m.is_subset_of(&a) && a.is_subset_of(&b));
        prop_assert_eq!(a.dilate(1), b);
        prop_assert!(m.is_subset_of(&m.union(&a)) && m.union(&a) == a);
    }

    #[test]
    fn parsers_reject_garbage_without_panicking(s in "\\PC{0,200}") {
        let _ = parse_field(&s);
        let _ = parse_matrix_dump(&s);
        let _ = parse_vector_csv(&s);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn p_of_single_cell_vector_stays_in_one_dilation(seed in any::<u64>(), cell in 0usize..64, d2 in any::<bool>()) {
        let g = if d2 { GridSpec::new(2, 8, seed).unwrap() } else { GridSpec::new(1, 16, seed).unwrap() };
        let f = gen_iid(g, 0.5, 1.0, 8.0 / (g.eps() * g.eps())).unwrap();
        let sub = SubgridSpec::new(g, 2).unwrap();
        let sys = assemble(&f, sub).unwrap();
        let prec = SchwarzPreconditioner::new(&sys, &analyze_geometry(&f), 1.0, PrecondMode::Adaptive).unwrap();
        let cell = cell % g.num_cells();
        let mut v = vec![0.0; sys.n()];
        // interior nodes only, so the function vanishes on the cell boundary
        for (i, x) in v.iter_mut().enumerate() {
            if sub.node_cells(i).iter().all(|&c| c == cell) {
                *x = 1.0 + (i % 7) as f64;
            }
        }
        prop_assert!(v.iter().any(|&x| x != 0.0));
        let mask = CellMask::single(g.cells(), cell);
        prop_assert!(vector_in_mask(&sub, &v, &mask));
        let (pv, out) = prec.apply_p(&sys, &v, &mask).unwrap();
        prop_assert_eq!(&out, &mask.dilate(1));
        prop_assert!(vector_in_mask(&sub, &pv, &out));
        prop_assert!(sys.a_inner(&pv, &v) > 0.0);
    }
}
