use lamelab::elliptic::LatticeParam;
use lamelab::quasiinv::*;
use lamelab::C64;

fn lat() -> LatticeParam {
    LatticeParam::new(C64::new(0.0, 1.0)).unwrap()
}

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

fn cube_roots() -> [C64; 3] {
    let z3 = C64::from_polar(1.0, 2.0 * std::f64::consts::PI / 3.0);
    [c(1.0), z3, z3 * z3]
}

fn shifts() -> Vec<(i64, i64)> {
    (-1..=1).flat_map(|a| (-1..=1).map(move |b| (a, b))).collect()
}

#[test]
fn catalog_entries_are_quasi_invariant() {
    let entries = vec![
        Catalog::A { n: 3, m: 2 },
        Catalog::B { n: 2, m_short: 2, m_long: 1 },
        Catalog::G2 { m_short: 1, m_long: 2 },
        Catalog::BCn { n: 2, m: 1, g: [1, 2, 0, 1] },
        Catalog::An1 { n: 2, m: -3 },
        Catalog::Cn1 { n: 2, m: 1, l: 0 },
        Catalog::DeformedBC { n: 1, m: [1, 4, 1, -2], l: [0, 1, 0, -1] },
        Catalog::Hietarinta { a_sq: cube_roots() },
        Catalog::An2 { n: 2, m: 2 },
    ];
    for e in entries {
        let spec = builtin(&e, lat()).unwrap();
        for r in check_all(&spec, &shifts()).unwrap() {
            assert!(r.pass, "{e:?} {:?}: {:e}", r.hyperplane, r.max_coeff);
        }
    }
}

#[test]
fn perturbed_b2_breaks_the_coordinate_reflections() {
    let mut spec = builtin(&Catalog::B2Cm, lat()).unwrap();
    spec.terms[3].coeff = Some(c(3.9));
    let pass: Vec<bool> = (0..4)
        .map(|i| quasi_invariance_check(&spec, HyperplaneId::new(i)).unwrap().pass)
        .collect();
    // Reflections in x1 = 0 and x2 = 0 swap x1 + x2 with x1 - x2, whose coefficients now differ.
    assert_eq!(pass, vec![false, false, true, true]);
    let r = quasi_invariance_check(&spec, HyperplaneId::new(0)).unwrap();
    assert!(r.max_coeff > 1e-4);
}

#[test]
fn hietarinta_first_plane_passes() {
    let spec = builtin(&Catalog::Hietarinta { a_sq: cube_roots() }, lat()).unwrap();
    assert!(quasi_invariance_check(&spec, HyperplaneId::new(0)).unwrap().pass);
}

#[test]
fn relabeling_and_lattice_shifts_do_not_matter() {
    let spec = builtin(&Catalog::B2Cm, lat()).unwrap();
    let mut rev = spec.clone();
    rev.terms.reverse();
    for i in 0..4 {
        let a = quasi_invariance_check(&spec, HyperplaneId::new(i)).unwrap();
        let b = quasi_invariance_check(&rev, HyperplaneId::new(3 - i)).unwrap();
        assert_eq!(a.pass, b.pass);
        for (x, y) in a.odd_coeffs.iter().zip(&b.odd_coeffs) {
            assert!((x - y).norm() < 1e-9);
        }
        for s in shifts() {
            let h = HyperplaneId { term_index: i, lattice_shift: s };
            let r = quasi_invariance_check(&spec, h).unwrap();
            assert_eq!(r.pass, a.pass);
            for (x, y) in a.odd_coeffs.iter().zip(&r.odd_coeffs) {
                assert!((x - y).norm() < 1e-9);
            }
        }
    }
}

#[test]
fn hietarinta_parameters_validated() {
    let bad = [c(1.0), c(1.0), c(-2.0)];
    assert!(builtin(&Catalog::Hietarinta { a_sq: bad }, lat()).is_err());
    let bad = [c(1.0), c(2.0), c(-2.0)];
    assert!(builtin(&Catalog::Hietarinta { a_sq: bad }, lat()).is_err());
}

#[test]
fn locus_newton_recovers_equally_spaced_poles() {
    let l = lat();
    let sol = locus_solve(&[c(0.0), c(0.32), c(0.68)], &[1, 1, 1], &l).unwrap();
    assert!(sol.residual <= 1e-11);
    let mut found: Vec<f64> = sol.poles.iter().map(|z| l.reduce(*z).re.rem_euclid(1.0)).collect();
    found.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for (f, w) in found.iter().zip([0.0, 1.0 / 3.0, 2.0 / 3.0]) {
        assert!((f - w).abs() < 1e-9, "{found:?}");
    }
    let again = locus_solve(&sol.poles, &[1, 1, 1], &l).unwrap();
    assert_eq!(again.iterations, 0);
    assert_eq!(locus_solve(&[c(0.3)], &[1], &l).unwrap().iterations, 0);
}

#[test]
fn locus_residual_is_translation_invariant() {
    let l = lat();
    let p = [c(0.0), C64::new(0.21, 0.3), C64::new(0.55, -0.1)];
    let q: Vec<C64> = p.iter().map(|z| z + C64::new(0.13, 0.07)).collect();
    let a = locus_residual(&p, &[1, 2, 1], &l).unwrap();
    let b = locus_residual(&q, &[1, 2, 1], &l).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).norm() <= 1e-12 * x.norm().max(1.0));
    }
}
