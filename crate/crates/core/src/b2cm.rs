//! Continuous B2 Calogero–Moser operator
//! L = −Δ + 2℘(x₁) + 2℘(x₂) + 4℘(x₁−x₂) + 4℘(x₁+x₂):
//! closed-form Bloch solutions, their vanishing conditions, the
//! Hermite–Bloch variety and its 13 sheets, and eigenfunction checks.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::elliptic::{lambda_tau, theta1, zlog_all, LatticeParam, POLE_RADIUS};
use crate::error::{Error, Result};
use crate::numeric::{interpolate_on_circle, newton, poly_eval, poly_roots, NewtonOptions};
use crate::quasiinv::{builtin, potential_eval, Catalog, PotentialSpec};
use crate::thetaforms::{
    floquet_factor, AffineForm, CompiledSum, Evaluate, ThetaFactor, ThetaRatio, ThetaSum,
};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };
const TWO_PI_I: C64 = C64 {
    re: 0.0,
    im: 2.0 * std::f64::consts::PI,
};

/// Spectral data (a, k) of one Bloch solution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlochPointB2 {
    pub a: [C64; 2],
    pub k: [C64; 2],
    pub lat: LatticeParam,
}

impl BlochPointB2 {
    pub fn new(a: [C64; 2], k: [C64; 2], lat: LatticeParam) -> Self {
        Self { a, k, lat }
    }

    /// Point with k_j = p_j − ζ(a_j).
    pub fn from_p(a: [C64; 2], p: [C64; 2], lat: LatticeParam) -> Result<Self> {
        let k = [
            p[0] - zlog_all(a[0], &lat)?[0],
            p[1] - zlog_all(a[1], &lat)?[0],
        ];
        Ok(Self { a, k, lat })
    }

    /// p_j = k_j + ζ(a_j).
    pub fn p(&self) -> Result<[C64; 2]> {
        Ok([
            self.k[0] + zlog_all(self.a[0], &self.lat)?[0],
            self.k[1] + zlog_all(self.a[1], &self.lat)?[0],
        ])
    }

    /// Representative with a_j in the parallelogram ±(1+τ)/2; k is adjusted by
    /// −2πi per τ removed so that the function is unchanged.
    pub fn canonical(&self) -> Self {
        let mut out = *self;
        for j in 0..2 {
            let n = (self.a[j].im / self.lat.tau.im).round();
            let w = self.a[j] - self.lat.tau * n;
            out.a[j] = w - w.re.round();
            out.k[j] = self.k[j] - TWO_PI_I * n;
        }
        out
    }

    /// Floquet multipliers λ_j = −e^{K_j} with K_j = k_j − πi.
    pub fn multipliers(&self) -> [C64; 2] {
        let ipi = C64::new(0.0, std::f64::consts::PI);
        [-(self.k[0] - ipi).exp(), -(self.k[1] - ipi).exp()]
    }
}

fn lin(g: [f64; 2], offset: C64) -> AffineForm {
    AffineForm::new(vec![C64::new(g[0], 0.0), C64::new(g[1], 0.0)], offset)
}

/// δ(x) = θ(x₁)θ(x₂)θ(x₁−x₂)θ(x₁+x₂).
pub fn b2_delta(lat: LatticeParam) -> ThetaSum {
    ThetaSum::product(
        2,
        ONE,
        vec![
            ThetaFactor::odd(lin([1.0, 0.0], ZERO), 0),
            ThetaFactor::odd(lin([0.0, 1.0], ZERO), 0),
            ThetaFactor::odd(lin([1.0, -1.0], ZERO), 0),
            ThetaFactor::odd(lin([1.0, 1.0], ZERO), 0),
        ],
        lat,
    )
}

/// Polynomial in the formal symbols A, B, C, D.
type Umbral = BTreeMap<[u8; 4], C64>;

fn umbral_linear(c0: C64, a: f64, b: f64, c: f64, d: f64) -> Umbral {
    let mut p = Umbral::new();
    for (e, v) in [
        ([0, 0, 0, 0], c0),
        ([1, 0, 0, 0], C64::new(a, 0.0)),
        ([0, 1, 0, 0], C64::new(b, 0.0)),
        ([0, 0, 1, 0], C64::new(c, 0.0)),
        ([0, 0, 0, 1], C64::new(d, 0.0)),
    ] {
        if v != ZERO {
            p.insert(e, v);
        }
    }
    p
}

fn umbral_mul(x: &Umbral, y: &Umbral) -> Umbral {
    let mut out = Umbral::new();
    for (ex, cx) in x {
        for (ey, cy) in y {
            let e = [ex[0] + ey[0], ex[1] + ey[1], ex[2] + ey[2], ex[3] + ey[3]];
            *out.entry(e).or_insert(ZERO) += cx * cy;
        }
    }
    out
}

/// Φ = e^{⟨k,x⟩}/(θ(a₁)θ(a₂)) · [((k₁+k₂)+V)² − λ][((k₁−k₂)+U)² − λ] with
/// U = A−B−C, V = A+B−D, where A^pB^qC^rD^s stands for
/// θ^{(p)}(x₁+a₁)θ^{(q)}(x₂+a₂)θ^{(r)}(x₁−x₂)θ^{(s)}(x₁+x₂).
pub fn build_phi(pt: &BlochPointB2) -> Result<ThetaSum> {
    let lat = pt.lat;
    let mut norm = ONE;
    for j in 0..2 {
        if lat.lattice_distance(pt.a[j]) < POLE_RADIUS {
            return Err(Error::DegenerateA(j + 1));
        }
        norm *= theta1(pt.a[j], &lat)?;
    }
    let lambda = lambda_tau(&lat)?;
    let s = pt.k[0] + pt.k[1];
    let d = pt.k[0] - pt.k[1];
    let v = umbral_linear(s, 1.0, 1.0, 0.0, -1.0);
    let u = umbral_linear(d, 1.0, -1.0, -1.0, 0.0);
    let mut first = umbral_mul(&v, &v);
    *first.entry([0, 0, 0, 0]).or_insert(ZERO) -= lambda;
    let mut second = umbral_mul(&u, &u);
    *second.entry([0, 0, 0, 0]).or_insert(ZERO) -= lambda;
    let poly = umbral_mul(&first, &second);

    let forms = [
        lin([1.0, 0.0], pt.a[0]),
        lin([0.0, 1.0], pt.a[1]),
        lin([1.0, -1.0], ZERO),
        lin([1.0, 1.0], ZERO),
    ];
    let mut phi = ThetaSum::zero(2, lat);
    for (e, coeff) in poly {
        if coeff == ZERO {
            continue;
        }
        let factors = (0..4)
            .map(|i| ThetaFactor::odd(forms[i].clone(), e[i] as usize))
            .collect();
        phi.push(crate::thetaforms::ThetaTerm {
            coeff: coeff / norm,
            exp_covector: pt.k.to_vec(),
            factors,
        })?;
    }
    Ok(phi)
}

/// ψ = Φ/δ.
pub fn build_psi(pt: &BlochPointB2) -> Result<ThetaRatio> {
    ThetaRatio::new(build_phi(pt)?, b2_delta(pt.lat))
}

/// Eight fixed generic parameters for sampling along the singular lines.
fn line_params(lat: &LatticeParam) -> Vec<C64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x11E5);
    let mut out = Vec::new();
    while out.len() < 8 {
        let s = C64::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5) * lat.tau.im);
        if lat.lattice_distance(s) > 0.05 && lat.lattice_distance(2.0 * s) > 0.05 {
            out.push(s);
        }
    }
    out
}

/// Vanishing residuals of ∂₁Φ on x₁=0, ∂₂Φ on x₂=0, (∂₁+∂₂)Φ on x₁+x₂=0 and
/// (∂₁−∂₂)Φ on x₁−x₂=0, each relative to max|Φ| at four points 0.1 away.
pub fn vanishing_residuals(phi: &ThetaSum) -> Result<[f64; 4]> {
    let dirs = [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, -1.0]];
    let f = phi.compile();
    let params = line_params(&phi.lat);
    let mut out = [0.0; 4];
    for (i, d) in dirs.iter().enumerate() {
        let dphi = phi
            .differentiate(&[C64::new(d[0], 0.0), C64::new(d[1], 0.0)])?
            .compile();
        for &s in &params {
            let x = match i {
                0 => [ZERO, s],
                1 => [s, ZERO],
                2 => [s, -s],
                _ => [s, s],
            };
            let mut scale: f64 = 0.0;
            for off in [[0.1, 0.0], [-0.1, 0.0], [0.0, 0.1], [0.0, -0.1]] {
                let y = [x[0] + off[0], x[1] + off[1]];
                scale = scale.max(f.eval(&y)?.norm());
            }
            let r = dphi.eval(&x)?.norm() / scale.max(f64::MIN_POSITIVE);
            out[i] = f64::max(out[i], r);
        }
    }
    Ok(out)
}

/// G₁ = ∂₁∂₂Φ(0,0) and G₂ = ∂₁∂₂³Φ(0,0).
///
/// The monomial B⁴ would need θ⁽⁷⁾ under three ∂₂, so the last derivative is
/// taken as the Taylor coefficient of ∂₁∂₂²Φ(0, z) on a small circle.
pub fn variety_g(pt: &BlochPointB2) -> Result<(C64, C64)> {
    let phi = build_phi(pt)?;
    let d12 = phi.partial(0)?.partial(1)?;
    let g1 = d12.evaluate(&[ZERO, ZERO])?;
    let g2 = last_derivative(&d12.partial(1)?.compile(), 1)?;
    Ok((g1, g2))
}

/// ∂₁³∂₂Φ(0,0), which coincides with G₂.
pub fn variety_g2_swapped(pt: &BlochPointB2) -> Result<C64> {
    let phi = build_phi(pt)?;
    let f = phi.partial(0)?.partial(0)?.partial(1)?.compile();
    last_derivative(&f, 0)
}

/// ∂_i f(0,0) from 32 samples on a circle of radius 0.05 in the x_i direction.
fn last_derivative(f: &CompiledSum, i: usize) -> Result<C64> {
    let c = interpolate_on_circle(
        |z| {
            let mut x = [ZERO, ZERO];
            x[i] = z;
            f.eval(&x)
        },
        32,
        0.05,
    )?;
    Ok(c[1])
}

/// ζ', ζ'', ζ''', ζ'''' at a.
pub(crate) fn zeta_derivs(a: C64, lat: &LatticeParam) -> Result<[C64; 4]> {
    let z = zlog_all(a, lat)?;
    Ok([z[1], z[2], z[3], z[4]])
}

/// c(p) = p³ + 3ζ'p + ζ''.
fn cubic(z: &[C64; 4], p: C64) -> C64 {
    p * p * p + 3.0 * z[0] * p + z[1]
}

/// q(p) = p⁵ + 10ζ'p³ + 10ζ''p² + (5ζ''' + 15ζ'²)p + ζ'''' + 10ζ'ζ''.
fn quintic(z: &[C64; 4], p: C64) -> C64 {
    let p2 = p * p;
    p2 * p2 * p + 10.0 * z[0] * p2 * p + 10.0 * z[1] * p2 + (5.0 * z[2] + 15.0 * z[0] * z[0]) * p
        + z[3]
        + 10.0 * z[0] * z[1]
}

/// Sum of moduli of the monomials of the two equations, used to make residuals relative.
pub(crate) fn equation_scales(z1: &[C64; 4], z2: &[C64; 4], p: [C64; 2]) -> (f64, f64) {
    let abs_c = |z: &[C64; 4], p: C64| {
        let a = p.norm();
        a.powi(3) + 3.0 * z[0].norm() * a + z[1].norm()
    };
    let abs_q = |z: &[C64; 4], p: C64| {
        let a = p.norm();
        a.powi(5)
            + 10.0 * z[0].norm() * a.powi(3)
            + 10.0 * z[1].norm() * a * a
            + (5.0 * z[2].norm() + 15.0 * z[0].norm_sqr()) * a
            + z[3].norm()
            + 10.0 * (z[0] * z[1]).norm()
    };
    let (a1, a2) = (p[0].norm(), p[1].norm());
    (
        a1 * abs_c(z2, p[1]) + a2 * abs_c(z1, p[0]),
        a1 * abs_q(z2, p[1]) + a2 * abs_q(z1, p[0]),
    )
}

/// The two variety equations, LHS − RHS:
/// p₁c₂(p₂) − p₂c₁(p₁) and p₁q₂(p₂) − p₂q₁(p₁).
pub fn variety_residual(
    a1: C64,
    a2: C64,
    p1: C64,
    p2: C64,
    lat: &LatticeParam,
) -> Result<(C64, C64)> {
    let z1 = zeta_derivs(a1, lat)?;
    let z2 = zeta_derivs(a2, lat)?;
    Ok(raw_residual(&z1, &z2, [p1, p2]))
}

pub(crate) fn raw_residual(z1: &[C64; 4], z2: &[C64; 4], p: [C64; 2]) -> (C64, C64) {
    (
        p[0] * cubic(z2, p[1]) - p[1] * cubic(z1, p[0]),
        p[0] * quintic(z2, p[1]) - p[1] * quintic(z1, p[0]),
    )
}

/// Largest relative residual of the two equations.
pub fn relative_residual(z1: &[C64; 4], z2: &[C64; 4], p: [C64; 2]) -> f64 {
    let (r1, r2) = raw_residual(z1, z2, p);
    let (s1, s2) = equation_scales(z1, z2, p);
    let rel = |r: C64, s: f64| if s > 0.0 { r.norm() / s } else { r.norm() };
    rel(r1, s1).max(rel(r2, s2))
}

/// [`relative_residual`] at the base point (a₁, a₂).
pub fn relative_residual_at(a: [C64; 2], p: [C64; 2], lat: &LatticeParam) -> Result<f64> {
    Ok(relative_residual(&zeta_derivs(a[0], lat)?, &zeta_derivs(a[1], lat)?, p))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarietySolution {
    pub p: [C64; 2],
    pub k: [C64; 2],
    /// Relative residual of the polished pair.
    pub residual: f64,
    /// Values θ(a_j)·p_j, which must not vanish for the pair to give a Bloch solution.
    pub genericity: [f64; 2],
    pub generic: bool,
}

/// Coefficients in p₂ of the two cleared equations at fixed p₁.
fn coeffs_in_p2(z1: &[C64; 4], z2: &[C64; 4], p1: C64) -> ([C64; 4], [C64; 6]) {
    let f = [
        z2[1] * p1,
        3.0 * z2[0] * p1 - cubic(z1, p1),
        ZERO,
        p1,
    ];
    let g = [
        (z2[3] + 10.0 * z2[0] * z2[1]) * p1,
        (5.0 * z2[2] + 15.0 * z2[0] * z2[0]) * p1 - quintic(z1, p1),
        10.0 * z2[1] * p1,
        10.0 * z2[0] * p1,
        ZERO,
        p1,
    ];
    (f, g)
}

/// Sylvester resultant of two univariate polynomials (ascending coefficients).
pub(crate) fn sylvester_det(f: &[C64], g: &[C64]) -> C64 {
    let m = f.len() - 1;
    let n = g.len() - 1;
    let size = m + n;
    let mut s = DMatrix::<C64>::zeros(size, size);
    for r in 0..n {
        for (i, c) in f.iter().rev().enumerate() {
            s[(r, r + i)] = *c;
        }
    }
    for r in 0..m {
        for (i, c) in g.iter().rev().enumerate() {
            s[(n + r, r + i)] = *c;
        }
    }
    s.determinant()
}

fn vertical(a1: C64, a2: C64, lat: &LatticeParam) -> bool {
    lat.lattice_distance(a1 - a2) < 1e-8 || lat.lattice_distance(a1 + a2) < 1e-8
}

/// Radius of the circle on which eliminants are sampled: the natural size of p.
fn p_scale(z1: &[C64; 4], z2: &[C64; 4]) -> f64 {
    let mut r: f64 = 1.0;
    for z in [z1, z2] {
        r = r
            .max(z[0].norm().sqrt())
            .max(z[1].norm().cbrt())
            .max(z[2].norm().powf(0.25))
            .max(z[3].norm().powf(0.2));
    }
    r
}

/// All non-trivial solutions (p₁, p₂) of the variety equations over (a₁, a₂).
pub fn solve_variety(a1: C64, a2: C64, lat: &LatticeParam) -> Result<Vec<VarietySolution>> {
    if vertical(a1, a2, lat) {
        return Err(Error::VerticalComponent);
    }
    for (j, a) in [a1, a2].iter().enumerate() {
        if lat.lattice_distance(*a) < POLE_RADIUS {
            return Err(Error::DegenerateA(j + 1));
        }
    }
    let z1 = zeta_derivs(a1, lat)?;
    let z2 = zeta_derivs(a2, lat)?;
    let radius = p_scale(&z1, &z2);
    // Res_{p₂} = p₁³ · (degree-13 eliminant); sample the quotient and interpolate.
    let elim = interpolate_on_circle(
        |p1| {
            let (f, g) = coeffs_in_p2(&z1, &z2, p1);
            Ok(sylvester_det(&f, &g) / (p1 * p1 * p1))
        },
        32,
        radius,
    )?;
    let roots: Vec<C64> = poly_roots(&elim[..14])
        .into_iter()
        .filter(|r| r.norm() < 1e6)
        .collect();

    let polished: Vec<Option<[C64; 2]>> = roots
        .par_iter()
        .map(|&p1| {
            let (f, g) = coeffs_in_p2(&z1, &z2, p1);
            let p2 = poly_roots(&f)
                .into_iter()
                .min_by(|x, y| {
                    poly_eval(&g, *x)
                        .norm()
                        .partial_cmp(&poly_eval(&g, *y).norm())
                        .unwrap()
                })?;
            polish(&z1, &z2, [p1, p2]).ok()
        })
        .collect();

    let mut sols: Vec<[C64; 2]> = Vec::new();
    for p in polished.into_iter().flatten() {
        if p[0].norm() + p[1].norm() < 1e-8 {
            continue;
        }
        if sols
            .iter()
            .all(|q| (q[0] - p[0]).norm() + (q[1] - p[1]).norm() > 1e-8)
        {
            sols.push(p);
        }
    }
    sols.sort_by(|x, y| {
        (x[0].re, x[0].im, x[1].re)
            .partial_cmp(&(y[0].re, y[0].im, y[1].re))
            .unwrap()
    });
    if sols.len() != 13 {
        return Err(Error::CountMismatch {
            expected: 13,
            found: sols.len(),
        });
    }
    let th = [theta1(a1, lat)?, theta1(a2, lat)?];
    let zeta = [zlog_all(a1, lat)?[0], zlog_all(a2, lat)?[0]];
    Ok(sols
        .into_iter()
        .map(|p| {
            let genericity = [(th[0] * p[0]).norm(), (th[1] * p[1]).norm()];
            VarietySolution {
                p,
                k: [p[0] - zeta[0], p[1] - zeta[1]],
                residual: relative_residual(&z1, &z2, p),
                genericity,
                generic: genericity[0] > 1e-8 && genericity[1] > 1e-8,
            }
        })
        .collect())
}

fn polish(z1: &[C64; 4], z2: &[C64; 4], p0: [C64; 2]) -> Result<[C64; 2]> {
    let f = |p: &[C64]| -> Result<Vec<C64>> {
        let (r1, r2) = raw_residual(z1, z2, [p[0], p[1]]);
        let (s1, s2) = equation_scales(z1, z2, [p0[0], p0[1]]);
        Ok(vec![r1 / s1.max(1e-300), r2 / s2.max(1e-300)])
    };
    let opts = NewtonOptions {
        tol: 1e-15,
        max_iter: 30,
        damping: 1.0,
    };
    let p = match newton(f, |_| {}, &p0, opts) {
        Ok(r) => [r.x[0], r.x[1]],
        // Stagnation at roundoff level still counts if the residual is small.
        Err(_) => p0,
    };
    let p = refine_until_stalled(z1, z2, p);
    if relative_residual(z1, z2, p) <= 1e-11 {
        Ok(p)
    } else {
        Err(Error::NoConvergence("variety polish".into()))
    }
}

/// Plain Newton steps with an exact Jacobian until the relative residual stops decreasing.
fn refine_until_stalled(z1: &[C64; 4], z2: &[C64; 4], mut p: [C64; 2]) -> [C64; 2] {
    let mut best = relative_residual(z1, z2, p);
    for _ in 0..10 {
        let (r1, r2) = raw_residual(z1, z2, p);
        let h = 1e-7 * (1.0 + p[0].norm() + p[1].norm());
        let mut jac = [[ZERO; 2]; 2];
        for j in 0..2 {
            let mut pp = p;
            let mut pm = p;
            pp[j] += h;
            pm[j] -= h;
            let (a1, a2) = raw_residual(z1, z2, pp);
            let (b1, b2) = raw_residual(z1, z2, pm);
            jac[0][j] = (a1 - b1) / (2.0 * h);
            jac[1][j] = (a2 - b2) / (2.0 * h);
        }
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        if det == ZERO {
            break;
        }
        let d0 = (jac[1][1] * r1 - jac[0][1] * r2) / det;
        let d1 = (jac[0][0] * r2 - jac[1][0] * r1) / det;
        let q = [p[0] - d0, p[1] - d1];
        let r = relative_residual(z1, z2, q);
        if r < best {
            best = r;
            p = q;
        } else {
            break;
        }
    }
    p
}

/// The B2 Calogero–Moser operator applied to closed-form functions.
pub struct B2Operator {
    spec: PotentialSpec,
}

impl B2Operator {
    pub fn new(lat: LatticeParam) -> Result<Self> {
        Ok(Self {
            spec: builtin(&Catalog::B2Cm, lat)?,
        })
    }

    pub fn potential(&self, x: &[C64]) -> Result<C64> {
        potential_eval(&self.spec, x)
    }

    /// x ↦ (Lψ)(x) for ψ = num/den, by the quotient rule on exact derivatives.
    pub fn apply(&self, psi: &ThetaRatio) -> Result<AppliedOperator<'_>> {
        Ok(AppliedOperator {
            op: self,
            num: Derivs::new(&psi.num)?,
            den: Some(Derivs::new(&psi.den)?),
            guard: psi.compile(),
        })
    }

    /// x ↦ (Lf)(x) for an entire closed form f.
    pub fn apply_sum(&self, f: &ThetaSum) -> Result<AppliedOperator<'_>> {
        let den = ThetaSum::product(2, ONE, Vec::new(), f.lat);
        Ok(AppliedOperator {
            op: self,
            num: Derivs::new(f)?,
            den: None,
            guard: ThetaRatio::new(f.clone(), den)?.compile(),
        })
    }
}

/// Value, gradient and pure second derivatives of a closed form.
struct Derivs {
    f: CompiledSum,
    d: [CompiledSum; 2],
    dd: [CompiledSum; 2],
}

impl Derivs {
    fn new(f: &ThetaSum) -> Result<Self> {
        let d1 = f.partial(0)?;
        let d2 = f.partial(1)?;
        Ok(Self {
            f: f.compile(),
            dd: [d1.partial(0)?.compile(), d2.partial(1)?.compile()],
            d: [d1.compile(), d2.compile()],
        })
    }

    fn eval(&self, x: &[C64]) -> Result<(C64, [C64; 2], [C64; 2])> {
        Ok((
            self.f.eval(x)?,
            [self.d[0].eval(x)?, self.d[1].eval(x)?],
            [self.dd[0].eval(x)?, self.dd[1].eval(x)?],
        ))
    }
}

pub struct AppliedOperator<'a> {
    op: &'a B2Operator,
    num: Derivs,
    den: Option<Derivs>,
    guard: crate::thetaforms::CompiledRatio,
}

impl AppliedOperator<'_> {
    /// (ψ(x), (Lψ)(x)).
    pub fn eval_pair(&self, x: &[C64]) -> Result<(C64, C64)> {
        self.guard.eval(x)?;
        let (n, dn, ddn) = self.num.eval(x)?;
        let (psi, lap) = match &self.den {
            None => (n, ddn[0] + ddn[1]),
            Some(den) => {
                let (d, dd, ddd) = den.eval(x)?;
                let psi = n / d;
                let mut lap = ZERO;
                for i in 0..2 {
                    lap += ddn[i] / d - 2.0 * dn[i] * dd[i] / (d * d) - n * ddd[i] / (d * d)
                        + 2.0 * n * dd[i] * dd[i] / (d * d * d);
                }
                (psi, lap)
            }
        };
        Ok((psi, -lap + self.op.potential(x)? * psi))
    }
}

impl Evaluate for AppliedOperator<'_> {
    fn dim(&self) -> usize {
        2
    }

    fn eval(&self, x: &[C64]) -> Result<C64> {
        Ok(self.eval_pair(x)?.1)
    }
}

/// Distance from x to the singular lines x₁, x₂, x₁±x₂ ∈ ℤ + τℤ.
pub fn distance_to_sing(x: &[C64], lat: &LatticeParam) -> f64 {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    [
        lat.lattice_distance(x[0]),
        lat.lattice_distance(x[1]),
        lat.lattice_distance(x[0] - x[1]) * s,
        lat.lattice_distance(x[0] + x[1]) * s,
    ]
    .into_iter()
    .fold(f64::INFINITY, f64::min)
}

/// `count` deterministic complex sample points at distance ≥ `margin` from the singular lines.
pub fn sample_points(lat: &LatticeParam, count: usize, margin: f64, seed: u64) -> Vec<[C64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let x = [
            C64::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5) * lat.tau.im),
            C64::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5) * lat.tau.im),
        ];
        if distance_to_sing(&x, lat) >= margin {
            out.push(x);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenReport {
    pub energy: C64,
    /// max |Lψ − Eψ| / (|ψ| · max(1, |E|)) over the sample points.
    pub residual: f64,
}

/// E = (Lψ)/ψ at the first sample point and the worst relative residual over 20 points.
pub fn eigen_check(pt: &BlochPointB2) -> Result<EigenReport> {
    let psi = build_psi(pt)?;
    let op = B2Operator::new(pt.lat)?;
    let applied = op.apply(&psi)?;
    eigen_check_with(&applied, &sample_points(&pt.lat, 20, 0.05, 0xE16E))
}

pub(crate) fn eigen_check_with(applied: &AppliedOperator<'_>, pts: &[[C64; 2]]) -> Result<EigenReport> {
    let mut energy = None;
    let mut residual: f64 = 0.0;
    for x in pts {
        let (psi, lpsi) = applied.eval_pair(x)?;
        let e = *energy.get_or_insert(lpsi / psi);
        residual = residual.max((lpsi - e * psi).norm() / (psi.norm() * e.norm().max(1.0)));
    }
    let energy = energy.ok_or_else(|| Error::DegenerateSample("no sample points".into()))?;
    if residual > 1e-6 {
        return Err(Error::NotEigen(residual));
    }
    Ok(EigenReport { energy, residual })
}

/// Measured multipliers ψ(x+e_j)/ψ(x) with their certification residuals.
pub fn floquet_multipliers(pt: &BlochPointB2) -> Result<([C64; 2], [f64; 2])> {
    let psi = build_psi(pt)?.compile();
    let x0 = [C64::new(0.21, 0.13), C64::new(-0.34, 0.07)];
    let (m1, r1) = floquet_factor(&psi, &[ONE, ZERO], &x0)?;
    let (m2, r2) = floquet_factor(&psi, &[ZERO, ONE], &x0)?;
    Ok(([m1, m2], [r1, r2]))
}

/// The eight signed permutations of the B2 Weyl group as 2×2 integer matrices.
pub fn weyl_group() -> Vec<[[i8; 2]; 2]> {
    let mut out = Vec::with_capacity(8);
    for swap in [false, true] {
        for s1 in [1i8, -1] {
            for s2 in [1i8, -1] {
                out.push(if swap {
                    [[0, s1], [s2, 0]]
                } else {
                    [[s1, 0], [0, s2]]
                });
            }
        }
    }
    out
}

pub fn weyl_det(w: &[[i8; 2]; 2]) -> i8 {
    w[0][0] * w[1][1] - w[0][1] * w[1][0]
}

/// w·x for a Weyl group element.
pub fn weyl_apply(w: &[[i8; 2]; 2], x: &[C64]) -> [C64; 2] {
    [
        x[0] * w[0][0] as f64 + x[1] * w[0][1] as f64,
        x[0] * w[1][0] as f64 + x[1] * w[1][1] as f64,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lat() -> LatticeParam {
        LatticeParam::new(C64::new(0.0, 1.0)).unwrap()
    }

    #[test]
    fn sylvester_matches_common_root() {
        // (z−1)(z−2) and (z−1)(z+3) share a root.
        let f = [C64::new(2.0, 0.0), C64::new(-3.0, 0.0), ONE];
        let g = [C64::new(-3.0, 0.0), C64::new(2.0, 0.0), ONE];
        assert!(sylvester_det(&f, &g).norm() < 1e-12);
        // z−1 and z−2: resultant ±1.
        let r = sylvester_det(&[-ONE, ONE], &[C64::new(-2.0, 0.0), ONE]);
        assert!((r.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn leading_term_is_the_four_theta_product() {
        let pt = BlochPointB2::new(
            [C64::new(0.31, 0.17), C64::new(-0.22, 0.09)],
            [C64::new(0.4, 0.0), C64::new(-0.7, 0.0)],
            lat(),
        );
        let phi = build_phi(&pt).unwrap();
        let k = pt.k;
        let lead = (k[0] + k[1]).powi(2) * (k[0] - k[1]).powi(2);
        let t = phi
            .terms
            .iter()
            .find(|t| t.factors.iter().all(|f| f.deriv_order == 0))
            .unwrap();
        let norm = theta1(pt.a[0], &lat()).unwrap() * theta1(pt.a[1], &lat()).unwrap();
        let lambda = lambda_tau(&lat()).unwrap();
        let want = ((k[0] + k[1]).powi(2) - lambda) * ((k[0] - k[1]).powi(2) - lambda) / norm;
        assert!((t.coeff - want).norm() < 1e-12 * want.norm());
        assert!(lead.norm() > 0.0);
    }

    #[test]
    fn weyl_group_has_eight_elements_with_four_reflections() {
        let w = weyl_group();
        assert_eq!(w.len(), 8);
        assert_eq!(w.iter().filter(|g| weyl_det(g) == -1).count(), 4);
    }
}
