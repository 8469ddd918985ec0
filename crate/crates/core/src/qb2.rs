//! Difference B2 operator with step 2ω and its commuting partner with step ω:
//! closed-form Bloch eigenfunctions, the 17-sheeted difference variety,
//! the ω → 0 limit towards the continuous operator, and skew solutions.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::b2cm::{self, distance_to_sing, weyl_apply, weyl_det, weyl_group, BlochPointB2, VarietySolution};
use crate::elliptic::{theta, theta1, zlog_all, Characteristic, LatticeParam};
use crate::error::{Error, Result};
use crate::numeric::{
    interpolate_on_circle, newton, poly_add, poly_mul, poly_roots, poly_scale, singular_values, NewtonOptions,
};
use crate::thetaforms::{
    AffineForm, CompiledRatio, CompiledSum, Evaluate, ThetaFactor, ThetaRatio, ThetaSum, ThetaTerm,
};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// Distance below which 2ω, 4ω or 6ω counts as a lattice point.
pub const RESONANCE_TOL: f64 = 1e-3;

/// Index set of the closed-form solution.
pub const INDEX_SET: [(i32, i32); 9] = [
    (0, 4),
    (4, 0),
    (0, -4),
    (-4, 0),
    (2, 2),
    (2, -2),
    (-2, -2),
    (-2, 2),
    (0, 0),
];

/// Offsets ν whose values x⁰+ν determine a solution of the joint eigenproblem, in units of ω.
pub const BASIS_OFFSETS: [(i32, i32); 8] = [
    (0, 0),
    (1, 1),
    (-1, 1),
    (1, -1),
    (2, 0),
    (-2, 0),
    (0, 2),
    (1, 3),
];

pub fn check_omega(omega: C64, lat: &LatticeParam) -> Result<()> {
    for n in [2.0, 4.0, 6.0] {
        let d = lat.lattice_distance(omega * n);
        if d < RESONANCE_TOL {
            return Err(Error::ResonantOmega(format!(
                "{n}*omega is {d:e} from the lattice"
            )));
        }
    }
    Ok(())
}

fn th(z: C64, lat: &LatticeParam) -> Result<C64> {
    theta1(z, lat)
}

fn form(g: [f64; 2], offset: C64) -> AffineForm {
    AffineForm::new(vec![C64::new(g[0], 0.0), C64::new(g[1], 0.0)], offset)
}

fn product(coeff: C64, forms: Vec<AffineForm>, lat: LatticeParam) -> ThetaSum {
    ThetaSum::product(
        2,
        coeff,
        forms.into_iter().map(|f| ThetaFactor::odd(f, 0)).collect(),
        lat,
    )
}

#[derive(Clone, Debug)]
pub struct DifferenceTerm {
    pub coeff: ThetaRatio,
    pub shift: Vec<C64>,
}

/// Σ_t coeff_t(x)·f(x + shift_t).
#[derive(Clone, Debug)]
pub struct DifferenceOperator {
    pub terms: Vec<DifferenceTerm>,
    pub lat: LatticeParam,
    pub omega: C64,
    compiled: Vec<CompiledRatio>,
}

impl DifferenceOperator {
    pub fn new(terms: Vec<DifferenceTerm>, lat: LatticeParam, omega: C64) -> Self {
        let compiled = terms.iter().map(|t| t.coeff.compile()).collect();
        Self {
            terms,
            lat,
            omega,
            compiled,
        }
    }

    /// (Lf)(x) together with Σ|coeff_t(x) f(x+shift_t)|.
    pub fn apply_with_scale<F: Evaluate + ?Sized>(&self, f: &F, x: &[C64]) -> Result<(C64, f64)> {
        let mut sum = ZERO;
        let mut scale = 0.0;
        for (t, c) in self.terms.iter().zip(&self.compiled) {
            let y: Vec<C64> = x.iter().zip(&t.shift).map(|(a, b)| a + b).collect();
            let v = c.eval(x)? * f.eval(&y)?;
            sum += v;
            scale += v.norm();
        }
        Ok((sum, scale))
    }

    pub fn apply<F: Evaluate + ?Sized>(&self, f: &F, x: &[C64]) -> Result<C64> {
        Ok(self.apply_with_scale(f, x)?.0)
    }

    /// Coefficient of the shift `v`, summed over all terms with that shift.
    pub fn coefficient(&self, v: &[C64], x: &[C64]) -> Result<C64> {
        let mut sum = ZERO;
        for (t, c) in self.terms.iter().zip(&self.compiled) {
            if t.shift.iter().zip(v).map(|(a, b)| (a - b).norm()).sum::<f64>() < 1e-14 {
                sum += c.eval(x)?;
            }
        }
        Ok(sum)
    }
}

/// L = a₀ + a₊T₁^{2ω} + a₋T₁^{−2ω} + b₊T₂^{2ω} + b₋T₂^{−2ω} with a₀ = c₊+c₋+d₊+d₋.
pub fn build_l(lat: LatticeParam, omega: C64) -> Result<DifferenceOperator> {
    check_omega(omega, &lat)?;
    let w = omega;
    let r = th(2.0 * w, &lat)? / th(4.0 * w, &lat)?;
    let den1 = |s: f64| {
        product(
            ONE,
            vec![
                form([1.0, 0.0], s * w),
                form([1.0, 1.0], ZERO),
                form([1.0, -1.0], ZERO),
            ],
            lat,
        )
    };
    let den2 = |s: f64| {
        product(
            ONE,
            vec![
                form([0.0, 1.0], s * w),
                form([1.0, 1.0], ZERO),
                form([1.0, -1.0], ZERO),
            ],
            lat,
        )
    };
    let mut terms = Vec::new();
    for s in [1.0, -1.0] {
        // a±
        terms.push(DifferenceTerm {
            coeff: ThetaRatio::new(
                product(
                    ONE,
                    vec![
                        form([1.0, 0.0], -s * w),
                        form([1.0, 1.0], -2.0 * s * w),
                        form([1.0, -1.0], -2.0 * s * w),
                    ],
                    lat,
                ),
                den1(s),
            )?,
            shift: vec![2.0 * s * w, ZERO],
        });
        // b±
        terms.push(DifferenceTerm {
            coeff: ThetaRatio::new(
                product(
                    ONE,
                    vec![
                        form([0.0, 1.0], -s * w),
                        form([1.0, 1.0], -2.0 * s * w),
                        form([1.0, -1.0], 2.0 * s * w),
                    ],
                    lat,
                ),
                den2(s),
            )?,
            shift: vec![ZERO, 2.0 * s * w],
        });
        // c±
        terms.push(DifferenceTerm {
            coeff: ThetaRatio::new(
                product(
                    r,
                    vec![
                        form([1.0, 0.0], 5.0 * s * w),
                        form([1.0, 1.0], -2.0 * s * w),
                        form([1.0, -1.0], -2.0 * s * w),
                    ],
                    lat,
                ),
                den1(s),
            )?,
            shift: vec![ZERO, ZERO],
        });
        // d±
        terms.push(DifferenceTerm {
            coeff: ThetaRatio::new(
                product(
                    r,
                    vec![
                        form([0.0, 1.0], 5.0 * s * w),
                        form([1.0, 1.0], -2.0 * s * w),
                        form([1.0, -1.0], 2.0 * s * w),
                    ],
                    lat,
                ),
                den2(s),
            )?,
            shift: vec![ZERO, ZERO],
        });
    }
    Ok(DifferenceOperator::new(terms, lat, omega))
}

/// L₁ = Σ_{ε₁,ε₂=±1} c_{ε₁ε₂} T₁^{ε₁ω} T₂^{ε₂ω} with
/// c_{ε₁ε₂} = θ(x₁−ε₁ω)θ(x₂−ε₂ω)θ(x₁+x₂−(ε₁+ε₂)ω)θ(x₁−x₂−(ε₁−ε₂)ω)/δ.
pub fn build_l1(lat: LatticeParam, omega: C64) -> Result<DifferenceOperator> {
    check_omega(omega, &lat)?;
    let w = omega;
    let delta = b2cm::b2_delta(lat);
    let mut terms = Vec::new();
    for e1 in [1.0, -1.0] {
        for e2 in [1.0, -1.0] {
            terms.push(DifferenceTerm {
                coeff: ThetaRatio::new(
                    product(
                        ONE,
                        vec![
                            form([1.0, 0.0], -w * e1),
                            form([0.0, 1.0], -w * e2),
                            form([1.0, 1.0], -w * (e1 + e2)),
                            form([1.0, -1.0], -w * (e1 - e2)),
                        ],
                        lat,
                    ),
                    delta.clone(),
                )?,
                shift: vec![w * e1, w * e2],
            });
        }
    }
    Ok(DifferenceOperator::new(terms, lat, omega))
}

/// Spectral data (a, k) of a difference Bloch solution; ξ_j = e^{ωk_j}.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QBlochPoint {
    pub a: [C64; 2],
    pub k: [C64; 2],
    pub omega: C64,
    pub lat: LatticeParam,
}

impl QBlochPoint {
    pub fn new(a: [C64; 2], k: [C64; 2], omega: C64, lat: LatticeParam) -> Self {
        Self { a, k, omega, lat }
    }

    /// Point with k_j = (log ξ_j)/ω on the principal branch.
    pub fn from_xi(a: [C64; 2], xi: [C64; 2], omega: C64, lat: LatticeParam) -> Result<Self> {
        if xi.iter().any(|x| *x == ZERO || !x.is_finite()) {
            return Err(Error::BadParams("xi must be finite and nonzero".into()));
        }
        Ok(Self {
            a,
            k: [xi[0].ln() / omega, xi[1].ln() / omega],
            omega,
            lat,
        })
    }

    pub fn xi(&self) -> [C64; 2] {
        [(self.omega * self.k[0]).exp(), (self.omega * self.k[1]).exp()]
    }

    /// Same reduction of a as in the continuous case.
    pub fn canonical(&self) -> Self {
        let c = BlochPointB2::new(self.a, self.k, self.lat).canonical();
        Self { a: c.a, k: c.k, ..*self }
    }
}

/// Φ = e^{⟨k,x⟩} Σ b_ij θ(x₁+a₁+iω)θ(x₂+a₂+jω)e^{ω(ik₁+jk₂)} over [`INDEX_SET`].
pub fn build_phi_q(pt: &QBlochPoint) -> Result<ThetaSum> {
    let lat = pt.lat;
    let w = pt.omega;
    let t2 = th(2.0 * w, &lat)?;
    let t4 = th(4.0 * w, &lat)?;
    let mut phi = ThetaSum::zero(2, lat);
    for (i, j) in INDEX_SET {
        let (fi, fj) = (i as f64, j as f64);
        let beta = match (i.abs(), j.abs()) {
            (0, 0) => t4 * t4,
            (2, 2) => -t2 * t4,
            _ => t2 * t2,
        };
        let coeff = beta * (w * (pt.k[0] * fi + pt.k[1] * fj)).exp();
        phi.push(ThetaTerm {
            coeff,
            exp_covector: pt.k.to_vec(),
            factors: vec![
                ThetaFactor::odd(form([1.0, 0.0], pt.a[0] + w * fi), 0),
                ThetaFactor::odd(form([0.0, 1.0], pt.a[1] + w * fj), 0),
                ThetaFactor::odd(form([1.0, 1.0], -w * (fi + fj) / 2.0), 0),
                ThetaFactor::odd(form([1.0, -1.0], -w * (fi - fj) / 2.0), 0),
            ],
        })?;
    }
    Ok(phi)
}

/// Values θ(a ± nω) for n = 1, 3, 5.
#[derive(Clone, Copy, Debug)]
struct Shifts {
    plus: [C64; 3],
    minus: [C64; 3],
}

impl Shifts {
    fn new(a: C64, omega: C64, lat: &LatticeParam) -> Result<Self> {
        let mut plus = [ZERO; 3];
        let mut minus = [ZERO; 3];
        for (idx, n) in [1.0, 3.0, 5.0].into_iter().enumerate() {
            plus[idx] = th(a + omega * n, lat)?;
            minus[idx] = th(a - omega * n, lat)?;
        }
        Ok(Self { plus, minus })
    }

    /// θ(a+nω)ξⁿ − θ(a−nω)ξ⁻ⁿ and the sum of the moduli of its two terms.
    fn bracket(&self, idx: usize, xi: C64) -> (C64, f64) {
        let n = [1, 3, 5][idx];
        let p = self.plus[idx] * xi.powi(n);
        let m = self.minus[idx] * xi.powi(-n);
        (p - m, p.norm() + m.norm())
    }

    /// P_n(η) = θ(a+nω)ηⁿ − θ(a−nω) and its η-derivative.
    fn poly(&self, idx: usize, eta: C64) -> (C64, C64) {
        let n = [1, 3, 5][idx];
        (
            self.plus[idx] * eta.powi(n) - self.minus[idx],
            self.plus[idx] * eta.powi(n - 1) * n as f64,
        )
    }
}

/// LHS − RHS of the two variety equations, and the sum of the moduli of all four bracket products.
fn residual_with_scale(s1: &Shifts, s2: &Shifts, xi: [C64; 2]) -> [(C64, f64); 2] {
    let eq = |hi: usize, lo: usize| {
        let (l1, m1) = s1.bracket(hi, xi[0]);
        let (l2, m2) = s2.bracket(lo, xi[1]);
        let (r1, n1) = s1.bracket(lo, xi[0]);
        let (r2, n2) = s2.bracket(hi, xi[1]);
        (l1 * l2 - r1 * r2, m1 * m2 + n1 * n2)
    };
    [eq(1, 0), eq(2, 1)]
}

/// The two difference variety equations (orders 3,1 and 5,3), LHS − RHS, evaluated literally.
pub fn variety_residual_q(
    a1: C64,
    a2: C64,
    xi1: C64,
    xi2: C64,
    omega: C64,
    lat: &LatticeParam,
) -> Result<(C64, C64)> {
    let r = residual_with_scale(
        &Shifts::new(a1, omega, lat)?,
        &Shifts::new(a2, omega, lat)?,
        [xi1, xi2],
    );
    Ok((r[0].0, r[1].0))
}

/// Largest residual of the two equations relative to the moduli of their terms.
pub fn relative_residual_q(a: [C64; 2], xi: [C64; 2], omega: C64, lat: &LatticeParam) -> Result<f64> {
    let r = residual_with_scale(
        &Shifts::new(a[0], omega, lat)?,
        &Shifts::new(a[1], omega, lat)?,
        xi,
    );
    Ok(r.iter()
        .map(|(v, s)| if *s > 0.0 { v.norm() / s } else { v.norm() })
        .fold(0.0, f64::max))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QVarietySolution {
    /// η_j = ξ_j².
    pub eta: [C64; 2],
    /// Principal square roots of η.
    pub xi: [C64; 2],
    pub k: [C64; 2],
    pub residual: f64,
    /// |e^{6ωk_j} − θ(a_j−3ω)/θ(a_j+3ω)|, which must not vanish.
    pub genericity: [f64; 2],
    pub generic: bool,
}

/// F₁ = P₃(a₁;η₁)P₁(a₂;η₂)η₂ − η₁P₁(a₁;η₁)P₃(a₂;η₂) and the order-(5,3) analogue F₂,
/// with the exact Jacobian in (η₁, η₂).
fn eta_system(s1: &Shifts, s2: &Shifts, eta: [C64; 2]) -> ([C64; 2], [[C64; 2]; 2]) {
    let mut f = [ZERO; 2];
    let mut jac = [[ZERO; 2]; 2];
    for (row, (hi, lo)) in [(1, 0), (2, 1)].into_iter().enumerate() {
        let (a, da) = s1.poly(hi, eta[0]);
        let (b, db) = s2.poly(lo, eta[1]);
        let (c, dc) = s1.poly(lo, eta[0]);
        let (d, dd) = s2.poly(hi, eta[1]);
        f[row] = a * b * eta[1] - eta[0] * c * d;
        jac[row][0] = da * b * eta[1] - (c + eta[0] * dc) * d;
        jac[row][1] = a * (db * eta[1] + b) - eta[0] * c * dd;
    }
    (f, jac)
}

fn eta_relative(s1: &Shifts, s2: &Shifts, eta: [C64; 2]) -> f64 {
    let (f, _) = eta_system(s1, s2, eta);
    let mut worst: f64 = 0.0;
    for (row, (hi, lo)) in [(1, 0), (2, 1)].into_iter().enumerate() {
        let abs_poly = |s: &Shifts, idx: usize, e: C64| {
            let n = [1, 3, 5][idx];
            (s.plus[idx] * e.powi(n)).norm() + s.minus[idx].norm()
        };
        let scale = abs_poly(s1, hi, eta[0]) * abs_poly(s2, lo, eta[1]) * eta[1].norm()
            + eta[0].norm() * abs_poly(s1, lo, eta[0]) * abs_poly(s2, hi, eta[1]);
        worst = worst.max(f[row].norm() / scale.max(f64::MIN_POSITIVE));
    }
    worst
}

/// Newton on (F₁, F₂) until the relative residual stops decreasing.
fn polish_eta(s1: &Shifts, s2: &Shifts, mut eta: [C64; 2]) -> Option<[C64; 2]> {
    let mut best = eta_relative(s1, s2, eta);
    let mut stalls = 0;
    for _ in 0..60 {
        let (f, j) = eta_system(s1, s2, eta);
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if det == ZERO || !det.is_finite() {
            break;
        }
        let d0 = (j[1][1] * f[0] - j[0][1] * f[1]) / det;
        let d1 = (j[0][0] * f[1] - j[1][0] * f[0]) / det;
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..12 {
            let cand = [eta[0] - d0 * t, eta[1] - d1 * t];
            let r = eta_relative(s1, s2, cand);
            if r < best {
                best = r;
                eta = cand;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            stalls += 1;
            if stalls > 1 {
                break;
            }
        } else {
            stalls = 0;
        }
    }
    (best <= 1e-11 && eta.iter().all(|e| e.norm() > 1e-10 && e.is_finite())).then_some(eta)
}

/// Roots η₁ of Res_{η₂}(F₁, F₂)/(η₁²P₃(a₁;η₁)³), sampled on a circle |s| = radius in η₁ = 1 + 2ωs.
fn eliminant_roots(s1: &Shifts, s2: &Shifts, omega: C64, radius: f64) -> Result<Vec<C64>> {
    let h = 2.0 * omega;
    let binom = |n: usize, j: usize| crate::elliptic::binomial(n, j);
    // P_n(a; 1 + h t) in powers of t, with the constant term formed without cancellation loss.
    let shifted = |s: &Shifts, idx: usize| -> Vec<C64> {
        let n = [1usize, 3, 5][idx];
        let mut c: Vec<C64> = (0..=n)
            .map(|j| s.plus[idx] * binom(n, j) * h.powi(j as i32))
            .collect();
        c[0] = s.plus[idx] - s.minus[idx];
        c
    };
    let p2: Vec<Vec<C64>> = (0..3).map(|i| shifted(s2, i)).collect();
    let eta2 = [ONE, h];
    let quotient = |s: C64| -> Result<C64> {
        let e1 = ONE + h * s;
        let v = |idx: usize| s1.poly(idx, e1).0;
        let f = poly_add(
            &poly_scale(&poly_mul(&p2[0], &eta2), v(1)),
            &poly_scale(&p2[1], -e1 * v(0)),
        );
        let g = poly_add(
            &poly_scale(&poly_mul(&p2[1], &eta2), v(2)),
            &poly_scale(&p2[2], -e1 * v(1)),
        );
        let p3 = v(1);
        Ok(b2cm::sylvester_det(&f, &g) / (e1 * e1 * p3 * p3 * p3))
    };
    // Coefficients in the variable s/radius, so that trimming in the root finder is scale-free.
    let coeffs: Vec<C64> = interpolate_on_circle(quotient, 64, radius)?
        .iter()
        .take(18)
        .enumerate()
        .map(|(j, c)| c * radius.powi(j as i32))
        .collect();
    Ok(poly_roots(&coeffs)
        .into_iter()
        .map(|u| u * radius)
        .filter(|s| s.norm() < 1e8)
        .map(|s| ONE + h * s)
        .collect())
}

/// Two sampling radii in the s-variable, each well separated from the zeros of
/// η₁²P₃(a₁;η₁) where the quotient loses accuracy.
fn sampling_radii(s1: &Shifts, omega: C64) -> Vec<f64> {
    let h = 2.0 * omega;
    let p3 = [-s1.minus[1], ZERO, ZERO, s1.plus[1]];
    let mut special: Vec<f64> = poly_roots(&p3)
        .into_iter()
        .map(|e| ((e - ONE) / h).norm())
        .collect();
    special.push((1.0 / h).norm());
    let clearance = |r: f64| special.iter().map(|d| (d / r).ln().abs()).fold(f64::INFINITY, f64::min);
    // Roots sit at |s| ≲ |p| near η = 1 and at |s| ≈ 1/|ω| near η = −1.
    let top = (3.0 / h.norm()).max(4.0);
    let mut candidates: Vec<f64> = (0..40)
        .map(|i| 1.5 * 1.15f64.powi(i))
        .filter(|r| *r <= top)
        .collect();
    candidates.sort_by(|a, b| clearance(*b).partial_cmp(&clearance(*a)).unwrap());
    let first = candidates[0];
    let second = candidates
        .iter()
        .copied()
        .find(|r| (r / first).ln().abs() > 0.5)
        .unwrap_or(first * 2.0);
    vec![first, second]
}

/// All solutions (η₁, η₂) = (ξ₁², ξ₂²) of the difference variety over (a₁, a₂), trivial component removed.
pub fn solve_variety_q(a1: C64, a2: C64, omega: C64, lat: &LatticeParam) -> Result<Vec<QVarietySolution>> {
    check_omega(omega, lat)?;
    if lat.lattice_distance(a1 - a2) < 1e-8 || lat.lattice_distance(a1 + a2) < 1e-8 {
        return Err(Error::VerticalComponent);
    }
    let s1 = Shifts::new(a1, omega, lat)?;
    let s2 = Shifts::new(a2, omega, lat)?;
    let mut candidates = Vec::new();
    for r in sampling_radii(&s1, omega) {
        candidates.extend(eliminant_roots(&s1, &s2, omega, r)?);
    }
    let pairs: Vec<[C64; 2]> = candidates
        .par_iter()
        .filter_map(|&e1| {
            let v = |idx: usize| s1.poly(idx, e1).0;
            // F₁ in powers of η₂
            let f = [
                e1 * v(0) * s2.minus[1],
                -v(1) * s2.minus[0],
                v(1) * s2.plus[0],
                -e1 * v(0) * s2.plus[1],
            ];
            let g = |e2: C64| eta_system(&s1, &s2, [e1, e2]).0[1].norm();
            let e2 = poly_roots(&f)
                .into_iter()
                .min_by(|x, y| g(*x).partial_cmp(&g(*y)).unwrap())?;
            polish_eta(&s1, &s2, [e1, e2])
        })
        .collect();

    let p3_scale = |s: &Shifts, e: C64| (s.plus[1] * e.powi(3)).norm() + s.minus[1].norm();
    let mut sols: Vec<[C64; 2]> = Vec::new();
    for e in pairs {
        let trivial = s1.poly(1, e[0]).0.norm() < 1e-10 * p3_scale(&s1, e[0])
            && s2.poly(1, e[1]).0.norm() < 1e-10 * p3_scale(&s2, e[1]);
        if trivial {
            continue;
        }
        if sols
            .iter()
            .all(|q| (q[0] - e[0]).norm() + (q[1] - e[1]).norm() > 1e-8)
        {
            sols.push(e);
        }
    }
    sols.sort_by(|x, y| {
        (x[0].re, x[0].im, x[1].re)
            .partial_cmp(&(y[0].re, y[0].im, y[1].re))
            .unwrap()
    });
    if sols.len() != 17 {
        return Err(Error::CountMismatch {
            expected: 17,
            found: sols.len(),
        });
    }
    let ratio = [s1.minus[1] / s1.plus[1], s2.minus[1] / s2.plus[1]];
    sols.into_iter()
        .map(|eta| {
            let xi = [eta[0].sqrt(), eta[1].sqrt()];
            let k = [xi[0].ln() / omega, xi[1].ln() / omega];
            let genericity = [
                (eta[0].powi(3) - ratio[0]).norm(),
                (eta[1].powi(3) - ratio[1]).norm(),
            ];
            Ok(QVarietySolution {
                eta,
                xi,
                k,
                residual: relative_residual_q([a1, a2], xi, omega, lat)?,
                genericity,
                generic: genericity.iter().all(|g| *g > 1e-8),
            })
        })
        .collect()
}

/// G₁ and G₂ from values of Φ at (±ω, ±ω) and (±ω, ±3ω), each with the sum of the moduli of its terms.
pub fn variety_g_q(pt: &QBlochPoint) -> Result<[(C64, f64); 2]> {
    let phi = build_phi_q(pt)?.compile();
    let w = pt.omega;
    let at = |u: f64, v: f64| phi.eval(&[w * u, w * v]);
    let combine = |vals: [C64; 4]| -> (C64, f64) {
        let s = vals[0] - vals[1] - vals[2] + vals[3];
        (s, vals.iter().map(|v| v.norm()).sum())
    };
    Ok([
        combine([at(1.0, 1.0)?, at(1.0, -1.0)?, at(-1.0, 1.0)?, at(-1.0, -1.0)?]),
        combine([at(1.0, -3.0)?, at(-1.0, -3.0)?, at(1.0, 3.0)?, at(-1.0, 3.0)?]),
    ])
}

/// Relative residuals of the four vanishing conditions: Φ(ω,t) = Φ(−ω,t), Φ(t,ω) = Φ(t,−ω),
/// Φ(x+(ω,ω)) = Φ(x−(ω,ω)) on x₁+x₂=0 and Φ(x+(ω,−ω)) = Φ(x−(ω,−ω)) on x₁−x₂=0.
pub fn vanishing_residuals_q(pt: &QBlochPoint) -> Result<[f64; 4]> {
    let phi = build_phi_q(pt)?.compile();
    let w = pt.omega;
    let mut rng = ChaCha8Rng::seed_from_u64(0x11E5);
    let mut out = [0.0f64; 4];
    for _ in 0..8 {
        let t = C64::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5) * pt.lat.tau.im);
        let pairs = [
            ([w, t], [-w, t]),
            ([t, w], [t, -w]),
            ([t + w, -t + w], [t - w, -t - w]),
            ([t + w, t - w], [t - w, t + w]),
        ];
        for (i, (x, y)) in pairs.iter().enumerate() {
            let (u, v) = (phi.eval(x)?, phi.eval(y)?);
            out[i] = out[i].max((u - v).norm() / (u.norm() + v.norm()).max(f64::MIN_POSITIVE));
        }
    }
    Ok(out)
}

/// True when x keeps distance `margin` from the singular lines of L and L₁ (including ω-shifts).
fn clear_of_poles(x: &[C64; 2], omega: C64, lat: &LatticeParam, margin: f64) -> bool {
    let mut d = distance_to_sing(x, lat);
    for s in [-1.0, 1.0] {
        d = d
            .min(lat.lattice_distance(x[0] + omega * s))
            .min(lat.lattice_distance(x[1] + omega * s));
    }
    d >= margin
}

pub(crate) fn sample_points_q(lat: &LatticeParam, omega: C64, count: usize, seed: u64) -> Vec<[C64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let x = [
            C64::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5) * lat.tau.im),
            C64::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5) * lat.tau.im),
        ];
        if clear_of_poles(&x, omega, lat, 0.05) {
            out.push(x);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QEigenReport {
    pub energy: C64,
    pub energy1: C64,
    /// Worst |LΦ − EΦ| relative to Σ|coeff·Φ(shifted)|, for L and L₁.
    pub residual: [f64; 2],
}

/// Eigenvalues of L and L₁ on Φ and the worst relative residuals over 20 points.
pub fn eigen_check_q(pt: &QBlochPoint) -> Result<QEigenReport> {
    let phi = build_phi_q(pt)?.compile();
    let ops = [build_l(pt.lat, pt.omega)?, build_l1(pt.lat, pt.omega)?];
    let pts = sample_points_q(&pt.lat, pt.omega, 20, 0xE16E);
    let mut energies = [ZERO; 2];
    let mut residual = [0.0f64; 2];
    for (i, op) in ops.iter().enumerate() {
        for (n, x) in pts.iter().enumerate() {
            let f = phi.eval(x)?;
            let (lf, scale) = op.apply_with_scale(&phi, x)?;
            if n == 0 {
                energies[i] = lf / f;
            }
            let denom = scale.max((energies[i] * f).norm()).max(f64::MIN_POSITIVE);
            residual[i] = residual[i].max((lf - energies[i] * f).norm() / denom);
        }
    }
    let worst = residual[0].max(residual[1]);
    if worst > 1e-8 {
        return Err(Error::NotEigen(worst));
    }
    Ok(QEigenReport {
        energy: energies[0],
        energy1: energies[1],
        residual,
    })
}

/// p = (log ξ)/ω + ζ(a), principal branch.
pub fn limit_map(xi: C64, a: C64, omega: C64, lat: &LatticeParam) -> Result<C64> {
    let l = xi.ln();
    if l.im.abs() > std::f64::consts::PI - 0.1 {
        return Err(Error::BranchAmbiguity(l.im));
    }
    Ok(l / omega + zlog_all(a, lat)?[0])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitRow {
    pub omega: C64,
    /// |p_q − p| for each continuous solution, in the order returned by the continuous solver.
    pub errors: Vec<f64>,
    /// |p| of the difference solutions left unmatched.
    pub extra_p_norms: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitReport {
    pub continuous: Vec<VarietySolution>,
    pub rows: Vec<LimitRow>,
    /// e(ω_{i+1})/e(ω_i) for consecutive ω, per continuous solution.
    pub ratios: Vec<Vec<f64>>,
}

/// Solves the difference variety at each ω, maps to p-space and matches against the continuous solutions.
pub fn limit_check(a1: C64, a2: C64, omegas: &[C64], lat: &LatticeParam) -> Result<LimitReport> {
    let continuous = b2cm::solve_variety(a1, a2, lat)?;
    let rows: Vec<LimitRow> = omegas
        .par_iter()
        .map(|&w| -> Result<LimitRow> {
            let sols = solve_variety_q(a1, a2, w, lat)?;
            let ps: Vec<Option<[C64; 2]>> = sols
                .iter()
                .map(|s| {
                    Some([
                        limit_map(s.xi[0], a1, w, lat).ok()?,
                        limit_map(s.xi[1], a2, w, lat).ok()?,
                    ])
                })
                .collect();
            let mut used = vec![false; ps.len()];
            let mut errors = Vec::with_capacity(continuous.len());
            for c in &continuous {
                let mut best = (f64::INFINITY, usize::MAX);
                for (i, p) in ps.iter().enumerate() {
                    if let (Some(p), false) = (p, used[i]) {
                        let d = ((p[0] - c.p[0]).norm_sqr() + (p[1] - c.p[1]).norm_sqr()).sqrt();
                        if d < best.0 {
                            best = (d, i);
                        }
                    }
                }
                if best.1 != usize::MAX {
                    used[best.1] = true;
                }
                errors.push(best.0);
            }
            let extra_p_norms = ps
                .iter()
                .zip(&used)
                .filter(|(_, u)| !**u)
                .map(|(p, _)| match p {
                    Some(p) => (p[0].norm_sqr() + p[1].norm_sqr()).sqrt(),
                    None => f64::INFINITY,
                })
                .collect();
            Ok(LimitRow {
                omega: w,
                errors,
                extra_p_norms,
            })
        })
        .collect::<Result<_>>()?;
    let ratios = rows
        .windows(2)
        .map(|w| {
            w[1].errors
                .iter()
                .zip(&w[0].errors)
                .map(|(b, a)| b / a)
                .collect()
        })
        .collect();
    Ok(LimitReport {
        continuous,
        rows,
        ratios,
    })
}

/// Σ_{w∈W} det(w) Φ(wx).
pub fn skew_build(pt: &QBlochPoint) -> Result<ThetaSum> {
    weyl_alternating(&build_phi_q(pt)?)
}

pub(crate) fn weyl_alternating(f: &ThetaSum) -> Result<ThetaSum> {
    let mut out = ThetaSum::zero(2, f.lat);
    for w in weyl_group() {
        let rows: Vec<Vec<C64>> = w
            .iter()
            .map(|r| vec![C64::new(r[0] as f64, 0.0), C64::new(r[1] as f64, 0.0)])
            .collect();
        out = out.add(&f.pullback(&rows)?.scale(C64::new(weyl_det(&w) as f64, 0.0)))?;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisReport {
    pub singular_values: Vec<f64>,
    pub condition: f64,
    pub rank: usize,
}

/// The 8×8 matrix Φ(w(x⁰+ν)) over w ∈ W and the offsets ν of [`BASIS_OFFSETS`].
pub fn basis_check(pt: &QBlochPoint, x0: [C64; 2]) -> Result<BasisReport> {
    let phi = build_phi_q(pt)?.compile();
    let w = pt.omega;
    let group = weyl_group();
    let mut m = DMatrix::<C64>::zeros(8, 8);
    for (r, (u, v)) in BASIS_OFFSETS.iter().enumerate() {
        let x = [x0[0] + w * *u as f64, x0[1] + w * *v as f64];
        for (c, g) in group.iter().enumerate() {
            m[(r, c)] = phi.eval(&weyl_apply(g, &x))?;
        }
    }
    // Columns are normalized so that the rank reflects independence rather than scale.
    for c in 0..8 {
        let n = m.column(c).norm();
        if n > 0.0 {
            m.column_mut(c).scale_mut(1.0 / n);
        }
    }
    let s = singular_values(&m);
    let rank = s.iter().filter(|v| **v > 1e-10 * s[0]).count();
    let condition = s[0] / s[7];
    if rank < 8 {
        return Err(Error::RankDeficient(condition));
    }
    Ok(BasisReport {
        singular_values: s,
        condition,
        rank,
    })
}

/// Solves the difference variety for a at fixed k by Newton from `a0`.
pub fn solve_a_q(k: [C64; 2], a0: [C64; 2], omega: C64, lat: &LatticeParam) -> Result<[C64; 2]> {
    check_omega(omega, lat)?;
    let xi = [(omega * k[0]).exp(), (omega * k[1]).exp()];
    let scales = {
        let r = residual_with_scale(&Shifts::new(a0[0], omega, lat)?, &Shifts::new(a0[1], omega, lat)?, xi);
        [r[0].1, r[1].1]
    };
    let f = |a: &[C64]| -> Result<Vec<C64>> {
        let r = residual_with_scale(&Shifts::new(a[0], omega, lat)?, &Shifts::new(a[1], omega, lat)?, xi);
        Ok(vec![r[0].0 / scales[0], r[1].0 / scales[1]])
    };
    let opts = NewtonOptions {
        tol: 1e-15,
        max_iter: 40,
        damping: 1.0,
    };
    let a = match newton(f, |_| {}, &a0, opts) {
        Ok(r) => [r.x[0], r.x[1]],
        Err(Error::NoConvergence(_)) => {
            // Accept a stagnated iterate only if it is at roundoff level.
            let r = newton(
                f,
                |_| {},
                &a0,
                NewtonOptions {
                    tol: 1e-12,
                    ..opts
                },
            )?;
            [r.x[0], r.x[1]]
        }
        Err(e) => return Err(e),
    };
    if relative_residual_q(a, xi, omega, lat)? > 1e-11 {
        return Err(Error::NoConvergence("difference variety at fixed k".into()));
    }
    Ok(a)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkewLimitReport {
    pub omega: C64,
    /// a of the difference solution with the same k.
    pub a: [C64; 2],
    /// max |ω⁻⁶Φ_skew − 64θ′(0)²θ(a₁)θ(a₂)δΨ| / max |64θ′(0)²θ(a₁)θ(a₂)δΨ| over the sample points.
    pub relative_error: f64,
}

/// Compares ω⁻⁶Φ_skew with 64θ′(0)²θ(a₁)θ(a₂)·δ·Ψ for a continuous point with e^{k₁} = e^{k₂} = ±1,
/// where Ψ = Σ_w ψ(wx) and δ(wx) = det(w)δ(x).
pub fn skew_limit(cont: &BlochPointB2, omega: C64) -> Result<SkewLimitReport> {
    let lat = cont.lat;
    let a = solve_a_q(cont.k, cont.a, omega, &lat)?;
    let q = QBlochPoint::new(a, cont.k, omega, lat);
    let lhs = skew_build(&q)?.scale(omega.powi(-6)).compile();
    let tp = theta(ZERO, &lat, Characteristic::ODD, 1, 1)?;
    let pref = 64.0 * tp * tp * th(cont.a[0], &lat)? * th(cont.a[1], &lat)?;
    let rhs = weyl_alternating(&b2cm::build_phi(cont)?)?.scale(pref).compile();
    let pts = b2cm::sample_points(&lat, 12, 0.05, 0x5CE3);
    let mut num: f64 = 0.0;
    let mut den: f64 = 0.0;
    for x in &pts {
        let r = rhs.eval(x)?;
        num = num.max((lhs.eval(x)? - r).norm());
        den = den.max(r.norm());
    }
    Ok(SkewLimitReport {
        omega,
        a,
        relative_error: num / den.max(f64::MIN_POSITIVE),
    })
}

/// Φ_skew at x divided by max |Φ_skew| over nearby points; used to test vanishing on lines.
pub fn skew_relative_value(skew: &CompiledSum, x: [C64; 2]) -> Result<f64> {
    let mut scale: f64 = 0.0;
    for off in [[0.1, 0.0], [-0.1, 0.0], [0.0, 0.1], [0.0, -0.1]] {
        scale = scale.max(skew.eval(&[x[0] + off[0], x[1] + off[1]])?.norm());
    }
    Ok(skew.eval(&x)?.norm() / scale.max(f64::MIN_POSITIVE))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lat() -> LatticeParam {
        LatticeParam::new(C64::new(0.0, 1.0)).unwrap()
    }

    #[test]
    fn resonant_omega_is_rejected() {
        assert!(matches!(
            build_l(lat(), C64::new(0.5, 0.0)),
            Err(Error::ResonantOmega(_))
        ));
        assert!(build_l(lat(), C64::new(0.1, 0.0)).is_ok());
    }

    #[test]
    fn eta_jacobian_matches_finite_differences() {
        let w = C64::new(0.1, 0.0);
        let s1 = Shifts::new(C64::new(0.23, 0.31), w, &lat()).unwrap();
        let s2 = Shifts::new(C64::new(-0.17, 0.12), w, &lat()).unwrap();
        let eta = [C64::new(0.9, 0.2), C64::new(1.1, -0.1)];
        let (_, j) = eta_system(&s1, &s2, eta);
        let h = 1e-6;
        for col in 0..2 {
            let mut p = eta;
            let mut m = eta;
            p[col] += h;
            m[col] -= h;
            let (fp, _) = eta_system(&s1, &s2, p);
            let (fm, _) = eta_system(&s1, &s2, m);
            for row in 0..2 {
                let fd = (fp[row] - fm[row]) / (2.0 * h);
                assert!((fd - j[row][col]).norm() < 1e-7 * (1.0 + fd.norm()));
            }
        }
    }
}
