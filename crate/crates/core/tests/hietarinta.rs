use lamelab::elliptic::{theta1, LatticeParam};
use lamelab::hietarinta::*;
use lamelab::thetaforms::floquet_factor;
use lamelab::C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn lat() -> LatticeParam {
    LatticeParam::new(c(0.0, 1.0)).unwrap()
}

fn params() -> HietParams {
    HietParams::cube_roots(lat(), c(0.0, 0.0))
}

fn qparams(w: f64) -> HietParams {
    HietParams::cube_roots(lat(), c(w, 0.0))
}

fn generic_b() -> [C64; 3] {
    let b12 = c(0.13, 0.07);
    let b23 = c(-0.21, 0.18);
    [b12, b23, -b12 - b23]
}

fn random_bs(n: usize, seed: u64) -> Vec<[C64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let b12 = c(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
            let b23 = c(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
            [b12, b23, -b12 - b23]
        })
        .collect()
}

#[test]
fn parameter_validation() {
    let l = lat();
    assert!(HietParams::new([c(1.0, 0.0), c(2.0, 0.0), c(-3.0, 0.0)], l, c(0.0, 0.0)).is_ok());
    assert!(HietParams::new([c(1.0, 0.0), c(2.0, 0.0), c(-2.0, 0.0)], l, c(0.0, 0.0)).is_err());
    assert!(HietParams::new([c(1.0, 0.0), c(1.0, 0.0), c(-2.0, 0.0)], l, c(0.0, 0.0)).is_err());
    let p = params();
    assert!(HietParams::new(p.a_sq, l, p.omega).is_ok());
    assert!(build_phi_h(&[c(0.1, 0.0), c(0.1, 0.0), c(0.1, 0.0)], &[c(1.0, 0.0); 3], l).is_err());
}

#[test]
fn phi_depends_on_differences_only() {
    let b = generic_b();
    let cs = [c(0.3, 0.1), c(-0.7, 0.2), c(0.4, -0.5)];
    let phi = build_phi_h(&b, &cs, lat()).unwrap();
    let total = phi.partial(0).unwrap().add(&phi.partial(1).unwrap()).unwrap().add(&phi.partial(2).unwrap()).unwrap();
    for x in [[c(0.1, 0.2), c(-0.3, 0.1), c(0.25, -0.2)], [c(0.4, -0.1), c(0.05, 0.3), c(-0.2, 0.15)]] {
        let scale = phi.partial(0).unwrap().evaluate(&x).unwrap().norm();
        assert!(total.evaluate(&x).unwrap().norm() <= 1e-12 * scale.max(1.0));
    }
    // A single coefficient gives a single product.
    let one = build_phi_h(&b, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)], lat()).unwrap();
    let x = [c(0.1, 0.2), c(-0.3, 0.1), c(0.25, -0.2)];
    let l = lat();
    let kappa = (c(1.0, 0.0) - l.tau) / 6.0;
    let want = theta1(x[0] - x[1] + b[0] + kappa, &l).unwrap()
        * theta1(x[1] - x[2] + b[1] + kappa, &l).unwrap()
        * theta1(x[2] - x[0] + b[2] + kappa, &l).unwrap();
    assert!((one.evaluate(&x).unwrap() - want).norm() < 1e-14 * want.norm());
}

#[test]
fn continuous_coefficients_kill_the_poles() {
    let b = generic_b();
    let p = params();
    let l = p.lat;
    let cs = solve_coeffs_cont(&b, &p).unwrap();
    let phi = build_phi_h(&b, &cs, l).unwrap();
    let scale: f64 = (0..3)
        .map(|j| {
            let mut e = [c(0.0, 0.0); 3];
            e[j] = cs[j];
            build_phi_h(&b, &e, l).unwrap().evaluate(&[c(0.0, 0.0); 3]).unwrap().norm()
        })
        .sum();
    assert!(phi.evaluate(&[c(0.0, 0.0); 3]).unwrap().norm() <= 1e-11 * scale);
    let d: Vec<_> = (0..3).map(|j| phi.partial(j).unwrap()).collect();
    for i in 0..3 {
        let (pv, nx) = ((i + 2) % 3, (i + 1) % 3);
        let z = second_zero(i, &b);
        let mut x = [z; 3];
        x[i] = c(0.0, 0.0);
        assert!(phi.evaluate(&x).unwrap().norm() <= 1e-10 * scale, "i={i}");
        // The pole-cancelling condition holds for every i although it was imposed once.
        let g = p.a_sq[pv] * d[pv].evaluate(&x).unwrap() - p.a_sq[nx] * d[nx].evaluate(&x).unwrap();
        let gs = d[pv].evaluate(&x).unwrap().norm() + d[nx].evaluate(&x).unwrap().norm();
        assert!(g.norm() <= 1e-10 * gs, "i={i}: {g}");
    }
}

#[test]
fn f_constants_sum_to_zero_at_random_b() {
    let p = params();
    for b in random_bs(10, 0xB0B) {
        let cs = solve_coeffs_cont(&b, &p).unwrap();
        let rep = compute_fi_and_k_cont(&b, &cs, &p, c(0.0, 0.0)).unwrap();
        assert!(rep.sum <= 1e-10, "{rep:?}");
        assert!(rep.spread.iter().all(|s| *s <= 1e-9), "{rep:?}");
        assert!(rep.periodicity <= 1e-9);
        for i in 0..3 {
            let (pv, nx) = ((i + 2) % 3, (i + 1) % 3);
            let lhs = p.a_sq[pv] * rep.k[pv] - p.a_sq[nx] * rep.k[nx] + rep.f[i];
            assert!(lhs.norm() < 1e-10 * (1.0 + rep.f[i].norm()));
        }
    }
}

#[test]
fn free_parameter_moves_k_along_inverse_squares() {
    let p = params();
    let b = generic_b();
    let cs = solve_coeffs_cont(&b, &p).unwrap();
    let k0 = compute_fi_and_k_cont(&b, &cs, &p, c(0.0, 0.0)).unwrap().k;
    let t = c(0.3, -0.2);
    let k1 = compute_fi_and_k_cont(&b, &cs, &p, t).unwrap().k;
    let want = shift_along_free_direction(k0, &p, t);
    for j in 0..3 {
        assert!((k1[j] - want[j]).norm() < 1e-12 * (1.0 + want[j].norm()));
    }
}

#[test]
fn continuous_eigenfunction() {
    let p = params();
    for b in random_bs(3, 0xE1) {
        let pt = solve_point_cont(&b, &p, c(0.0, 0.0)).unwrap();
        let rep = eigen_check_cont(&pt, &p).unwrap();
        assert!(rep.residual <= 1e-8, "{rep:?}");
    }
}

#[test]
fn energy_is_quadratic_in_the_free_parameter() {
    let l = lat();
    for p in [params(), HietParams::new([c(1.0, 0.0), c(2.0, 0.5), c(-3.0, -0.5)], l, c(0.0, 0.0)).unwrap()] {
        let b = generic_b();
        let base = solve_point_cont(&b, &p, c(0.0, 0.0)).unwrap();
        let e0 = eigen_check_cont(&base, &p).unwrap().energy;
        let ksum: C64 = base.k.iter().sum();
        let inv: C64 = p.a_sq.iter().map(|a| a.inv()).sum();
        for t in [c(0.3, 0.0), c(1.0, 1.0)] {
            let pt = solve_point_cont(&b, &p, t).unwrap();
            let rep = eigen_check_cont(&pt, &p).unwrap();
            assert!(rep.residual <= 1e-8);
            // ψ_t = e^{t⟨a⁻²,x⟩}ψ₀ and Φ, δ depend on differences only.
            let want = e0 - 2.0 * t * ksum - t * t * inv;
            assert!((rep.energy - want).norm() < 1e-8 * want.norm().max(1.0), "{} {want}", rep.energy);
        }
    }
}

#[test]
fn floquet_factors_and_translations_of_b() {
    let p = params();
    let l = p.lat;
    let b = generic_b();
    let pt = solve_point_cont(&b, &p, c(0.1, 0.2)).unwrap();
    let psi = build_psi_h(&pt, l).unwrap();
    let x0 = [c(0.11, 0.2), c(-0.3, 0.05), c(0.21, -0.13)];
    let tpi = c(0.0, 2.0 * std::f64::consts::PI);
    for j in 0..3 {
        let mut e = [c(0.0, 0.0); 3];
        e[j] = c(1.0, 0.0);
        let (mu, res) = floquet_factor(&psi, &e, &x0).unwrap();
        assert!(res < 1e-10);
        assert!((mu - pt.k[j].exp()).norm() < 1e-10 * mu.norm());
        e[j] = l.tau;
        let (mu, res) = floquet_factor(&psi, &e, &x0).unwrap();
        assert!(res < 1e-10);
        let want = (pt.k[j] * l.tau + tpi * (b[(j + 2) % 3] - b[j])).exp();
        assert!((mu - want).norm() < 1e-10 * mu.norm(), "{mu} {want}");
    }
    let pts = [x0, [c(-0.2, 0.31), c(0.14, -0.07), c(0.33, 0.12)], [c(0.05, -0.25), c(0.4, 0.3), c(-0.1, 0.0)]];
    for (db, dk) in b_translations(&l) {
        let mut moved = solve_point_cont(&[b[0] + db[0], b[1] + db[1], b[2] + db[2]], &p, c(0.1, 0.2)).unwrap();
        // k is fixed only modulo the free direction (a₁⁻², a₂⁻², a₃⁻²).
        let du: Vec<C64> = (0..3).map(|j| p.a_sq[j] * (moved.k[j] - pt.k[j] - dk[j])).collect();
        assert!(du.iter().all(|v| (v - du[0]).norm() < 1e-9), "{du:?}");
        moved.k = shift_along_free_direction(moved.k, &p, -du[0]);
        let other = build_psi_h(&moved, l).unwrap();
        let r: Vec<C64> = pts.iter().map(|x| other.evaluate(x).unwrap() / psi.evaluate(x).unwrap()).collect();
        assert!(r.iter().all(|v| (v - r[0]).norm() < 1e-10 * r[0].norm()), "{r:?}");
    }
}

#[test]
fn difference_operator_coefficients() {
    let p = qparams(0.1);
    let d = build_d_q(&p).unwrap();
    assert_eq!(d.terms.len(), 3);
    let x = [c(0.11, 0.2), c(-0.3, 0.05), c(0.21, -0.13)];
    let l = p.lat;
    let w = p.omega;
    let t = |z: C64| theta1(z, &l).unwrap();
    let xs = [x[0] - x[1], x[1] - x[2], x[2] - x[0]];
    for i in 0..3 {
        let s = w * p.a_sq[i];
        let mut shift = vec![c(0.0, 0.0); 3];
        shift[i] = s;
        let pv = (i + 2) % 3;
        let want = t(w) * t(xs[pv] + s) * t(xs[i] - s) / (t(s) * t(xs[pv]) * t(xs[i]));
        let got = d.coefficient(&shift, &x).unwrap();
        assert!((got - want).norm() < 1e-12 * want.norm());
    }
    // D on the constant function.
    let one = lamelab::thetaforms::ThetaSum::exponential(vec![c(0.0, 0.0); 3], c(1.0, 0.0), l);
    let sum: C64 = d.terms.iter().map(|tm| tm.coeff.evaluate(&x).unwrap()).sum();
    assert!((d.apply(&one, &x).unwrap() - sum).norm() < 1e-13 * sum.norm());
    assert!(matches!(
        build_d_q(&HietParams::cube_roots(l, c(1.0, 0.0))),
        Err(lamelab::Error::ResonantOmega(_))
    ));
}

#[test]
fn difference_operator_expands_to_the_translation_generator() {
    let l = lat();
    let q = vec![c(0.4, -0.2), c(-0.3, 0.5), c(0.7, 0.1)];
    let x = [c(0.11, 0.2), c(-0.3, 0.05), c(0.21, -0.13)];
    let f = lamelab::thetaforms::ThetaSum::exponential(q.clone(), c(1.0, 0.0), l);
    let want: C64 = q.iter().sum();
    let err = |w: f64| {
        let p = qparams(w);
        let inv: C64 = p.a_sq.iter().map(|a| a.inv()).sum();
        let d = build_d_q(&p).unwrap();
        let v = d.apply(&f, &x).unwrap() / f.evaluate(&x).unwrap();
        ((v - inv) / w - want).norm()
    };
    let (e1, e2, e3) = (err(0.02), err(0.01), err(0.005));
    // First order in ω.
    for r in [e2 / e1, e3 / e2] {
        assert!((0.4..0.6).contains(&r), "{e1} {e2} {e3}");
    }
}

#[test]
fn discrete_eigenfunctions_at_random_b() {
    let p = qparams(0.1);
    for b in random_bs(10, 0x9B) {
        let sol = solve_point_q(&b, &p, c(0.0, 0.0)).unwrap();
        assert!(sol.product_error <= 1e-10);
        assert!(sol.vanishing.iter().all(|v| *v <= 1e-10), "{sol:?}");
        assert!(sol.more.iter().all(|v| *v <= 1e-10), "{sol:?}");
        let rep = eigen_check_hq(&sol.point, &p).unwrap();
        assert!(rep.residual <= 1e-10, "{rep:?}");
    }
}

#[test]
fn discrete_family_in_the_free_parameter() {
    let p = qparams(0.1);
    let b = generic_b();
    for t in [c(0.0, 0.0), c(0.3, 0.0), c(1.0, 1.0)] {
        let sol = solve_point_q(&b, &p, t).unwrap();
        assert!(eigen_check_hq(&sol.point, &p).unwrap().residual <= 1e-10);
    }
}

#[test]
fn discrete_coefficients_approach_the_continuous_ones() {
    for b in random_bs(4, 0xA9) {
        let cont = solve_coeffs_cont(&b, &params()).unwrap();
        let a1 = kernel_angle(&solve_coeffs_q(&b, &qparams(0.01)).unwrap(), &cont);
        let a2 = kernel_angle(&solve_coeffs_q(&b, &qparams(0.005)).unwrap(), &cont);
        assert!(a1 <= 0.05 && (0.4..0.6).contains(&(a2 / a1)), "{a1} {a2}");
    }
}

