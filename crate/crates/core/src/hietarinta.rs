//! The Hietarinta operator −Σa_i²∂_i² + Σ 2(a_i²+a_j²)℘(x_i−x_j) with a₁²+a₂²+a₃² = 0,
//! its difference version, and their Bloch eigenfunctions built from three-term theta sums.

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::b2cm::EigenReport;
use crate::elliptic::{lambda_tau, theta1, zlog, LatticeParam};
use crate::error::{Error, Result};
use crate::numeric::kernel_2x3;
use crate::qb2::{DifferenceOperator, DifferenceTerm, RESONANCE_TOL};
use crate::thetaforms::{AffineForm, CompiledSum, Evaluate, ThetaFactor, ThetaRatio, ThetaSum};

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Gradients of x₁₂, x₂₃, x₃₁.
const FORMS: [[f64; 3]; 3] = [[1.0, -1.0, 0.0], [0.0, 1.0, -1.0], [-1.0, 0.0, 1.0]];

fn prev(i: usize) -> usize {
    (i + 2) % 3
}

fn next(i: usize) -> usize {
    (i + 1) % 3
}

fn form_at(j: usize, x: &[C64]) -> C64 {
    x.iter().zip(FORMS[j]).map(|(v, g)| v * g).sum()
}

fn affine(j: usize, offset: C64) -> AffineForm {
    AffineForm::new(FORMS[j].iter().map(|g| C64::new(*g, 0.0)).collect(), offset)
}

/// a² = (a₁², a₂², a₃²), the lattice, and the step ω (zero in the continuous case).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HietParams {
    pub a_sq: [C64; 3],
    pub lat: LatticeParam,
    pub omega: C64,
}

impl HietParams {
    pub fn new(a_sq: [C64; 3], lat: LatticeParam, omega: C64) -> Result<Self> {
        let scale = a_sq.iter().map(|a| a.norm()).fold(0.0, f64::max);
        if a_sq.iter().any(|a| a.norm() <= 1e-12 * scale.max(1e-300)) {
            return Err(Error::BadParams("a_i^2 must be nonzero".into()));
        }
        if (a_sq[0] + a_sq[1] + a_sq[2]).norm() > 1e-14 * scale {
            return Err(Error::BadParams("a_1^2 + a_2^2 + a_3^2 must vanish".into()));
        }
        for i in 0..3 {
            if (a_sq[i] - a_sq[next(i)]).norm() <= 1e-12 * scale {
                return Err(Error::BadParams("a_i^2 must be pairwise distinct".into()));
            }
        }
        Ok(Self { a_sq, lat, omega })
    }

    /// a² = (1, ζ₃, ζ₃²).
    pub fn cube_roots(lat: LatticeParam, omega: C64) -> Self {
        let z = C64::new(-0.5, 0.75f64.sqrt());
        Self {
            a_sq: [ONE, z, z * z],
            lat,
            omega,
        }
    }

    fn inv_sq(&self) -> [C64; 3] {
        [self.a_sq[0].inv(), self.a_sq[1].inv(), self.a_sq[2].inv()]
    }
}

/// Spectral data of a Bloch solution: b = (b₁₂, b₂₃, b₃₁) with zero sum, the coefficients c, k and
/// the position t along (a₁⁻², a₂⁻², a₃⁻²).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HietBlochPoint {
    pub b: [C64; 3],
    pub c: [C64; 3],
    pub k: [C64; 3],
    pub t: C64,
}

/// Offsets b_j + κ with κ = (1−τ)/6 common to all three factors.
///
/// With b₁₂+b₂₃+b₃₁ = 0 the three products at shifts 0, τ/3, 2τ/3 are linearly dependent:
/// as functions of a common shift s they lie in a space of order-3 thetas whose zeros sum to
/// zero, which contains θ(s)θ(s−τ/3)θ(s+τ/3). The multipliers depend only on differences of b,
/// so the common κ changes nothing else and moves the sum of the shifts to (1+τ)/2.
fn offsets(b: &[C64; 3], lat: &LatticeParam) -> [C64; 3] {
    let kappa = (ONE - lat.tau) / 6.0;
    [b[0] + kappa, b[1] + kappa, b[2] + kappa]
}

fn check_b(b: &[C64; 3]) -> Result<()> {
    let s = b[0] + b[1] + b[2];
    if s.norm() > 1e-12 * (1.0 + b.iter().map(|v| v.norm()).sum::<f64>()) {
        return Err(Error::BadParams(format!("b12 + b23 + b31 = {s}, expected 0")));
    }
    Ok(())
}

/// The l-th product of [`build_phi_h`] at x.
fn basis_value(l: usize, b: &[C64; 3], x: &[C64], lat: &LatticeParam) -> Result<C64> {
    let shift = lat.tau * (l as f64 / 3.0);
    let o = offsets(b, lat);
    let mut v = ONE;
    for j in 0..3 {
        v *= theta1(form_at(j, x) + o[j] + shift, lat)?;
    }
    Ok(v)
}

/// Φ = Σ_l c_l θ(x₁₂+b₁₂+κ+lτ/3)θ(x₂₃+b₂₃+κ+lτ/3)θ(x₃₁+b₃₁+κ+lτ/3), κ = (1−τ)/6.
pub fn build_phi_h(b: &[C64; 3], c: &[C64; 3], lat: LatticeParam) -> Result<ThetaSum> {
    check_b(b)?;
    let b = &offsets(b, &lat);
    let mut phi = ThetaSum::zero(3, lat);
    for (l, cl) in c.iter().enumerate() {
        let shift = lat.tau * (l as f64 / 3.0);
        phi = phi.add(&ThetaSum::product(
            3,
            *cl,
            (0..3).map(|j| ThetaFactor::odd(affine(j, b[j] + shift), 0)).collect(),
            lat,
        ))?;
    }
    Ok(phi)
}

fn normalize(v: [C64; 3]) -> [C64; 3] {
    let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let big = v.iter().copied().max_by(|a, b| a.norm().total_cmp(&b.norm())).unwrap_or(ONE);
    let phase = if big.norm() > 0.0 { big.conj() / big.norm() } else { ONE };
    [v[0] * phase / n, v[1] * phase / n, v[2] * phase / n]
}

/// Coefficients c (unit norm) from Φ(0) = 0 and the cancellation of the pole at the second zero.
pub fn solve_coeffs_cont(b: &[C64; 3], params: &HietParams) -> Result<[C64; 3]> {
    check_b(b)?;
    let lat = &params.lat;
    let a = params.a_sq;
    let b = &offsets(b, lat);
    let mut rows = [[ONE; 3], [ZERO; 3]];
    let mut prod = [ONE; 3];
    for l in 0..3 {
        let s = lat.tau * (l as f64 / 3.0);
        prod[l] = theta1(b[0] + s, lat)? * theta1(b[1] + s, lat)? * theta1(b[2] + s, lat)?;
        rows[1][l] = a[0] * zlog(b[1] + s, lat, 0)?
            + a[1] * zlog(b[2] + s, lat, 0)?
            + a[2] * zlog(b[0] + s, lat, 0)?;
    }
    let (ct, _) = kernel_2x3(rows)?;
    Ok(normalize([ct[0] / prod[0], ct[1] / prod[1], ct[2] / prod[2]]))
}

/// x with x_i = 0 and x_{i−1} = x_{i+1} = z, so that x_{i−1,i} = x_{i+1,i} = z.
fn on_plane(i: usize, z: C64) -> [C64; 3] {
    let mut x = [z; 3];
    x[i] = ZERO;
    x
}

/// The point z = b_{i,i−1} + b_{i,i+1} where the restriction of Φ has its second zero.
pub fn second_zero(i: usize, b: &[C64; 3]) -> C64 {
    b[i] - b[prev(i)]
}

/// Evaluator of F_i = (a_{i−1}²∂_{i−1}Φ − a_{i+1}²∂_{i+1}Φ)/Φ − a_{i−1}²ζ(x_{i−1,i}) + a_{i+1}²ζ(x_{i+1,i})
/// on the plane x_{i−1} = x_{i+1}, as a function of z.
struct FEvaluator {
    phi: CompiledSum,
    d: [CompiledSum; 3],
    params: HietParams,
}

impl FEvaluator {
    fn new(phi: &ThetaSum, params: &HietParams) -> Result<Self> {
        Ok(Self {
            phi: phi.compile(),
            d: [
                phi.partial(0)?.compile(),
                phi.partial(1)?.compile(),
                phi.partial(2)?.compile(),
            ],
            params: *params,
        })
    }

    fn eval(&self, i: usize, z: C64) -> Result<C64> {
        let (p, n) = (prev(i), next(i));
        let a = self.params.a_sq;
        let lat = &self.params.lat;
        let x = on_plane(i, z);
        let f = self.phi.eval(&x)?;
        let num = a[p] * self.d[p].eval(&x)? - a[n] * self.d[n].eval(&x)?;
        Ok(num / f - a[p] * zlog(z, lat, 0)? + a[n] * zlog(z, lat, 0)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiReport {
    /// Mean of F_i over the sample points.
    pub f: [C64; 3],
    /// Relative spread std/|mean| of each F_i.
    pub spread: [f64; 3],
    /// Worst |F_i(z+1) − F_i(z)| and |F_i(z+τ) − F_i(z)|, relative.
    pub periodicity: f64,
    /// |F₁+F₂+F₃| / max|F_i|.
    pub sum: f64,
    pub k: [C64; 3],
}

fn plane_samples(i: usize, b: &[C64; 3], lat: &LatticeParam, count: usize, seed: u64) -> Vec<C64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed + i as u64);
    let zstar = second_zero(i, b);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let z = C64::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5) * lat.tau.im);
        if lat.lattice_distance(z) > 0.1 && lat.lattice_distance(z - zstar) > 0.1 {
            out.push(z);
        }
    }
    out
}

/// The constants F_i, their checks, and k solving a_{i−1}²k_{i−1} − a_{i+1}²k_{i+1} = −F_i.
///
/// Among the solutions k + s(a₁⁻², a₂⁻², a₃⁻²) the one with Σa_j²k_j = 3t is returned.
pub fn compute_fi_and_k_cont(b: &[C64; 3], c: &[C64; 3], params: &HietParams, t: C64) -> Result<FiReport> {
    let phi = build_phi_h(b, c, params.lat)?;
    let ev = FEvaluator::new(&phi, params)?;
    let lat = params.lat;
    let mut f = [ZERO; 3];
    let mut spread = [0.0; 3];
    let mut periodicity: f64 = 0.0;
    for i in 0..3 {
        let zs = plane_samples(i, b, &lat, 5, 0xF1);
        let vals: Vec<C64> = zs.iter().map(|z| ev.eval(i, *z)).collect::<Result<_>>()?;
        let mean = vals.iter().sum::<C64>() / vals.len() as f64;
        let scale = mean.norm().max(f64::MIN_POSITIVE);
        for z in &zs[..2] {
            let v = ev.eval(i, *z)?;
            for per in [ONE, lat.tau] {
                let moved = ev.eval(i, z + per)?;
                periodicity = periodicity.max((moved - v).norm() / v.norm().max(1.0));
            }
        }
        let var = vals.iter().map(|v| (v - mean).norm_sqr()).sum::<f64>() / vals.len() as f64;
        f[i] = mean;
        spread[i] = var.sqrt() / scale;
    }
    if periodicity > 1e-9 {
        return Err(Error::NotConstant(periodicity));
    }
    let worst = spread.iter().copied().fold(0.0, f64::max);
    if worst > 1e-9 {
        return Err(Error::NotConstant(worst));
    }
    let fmax = f.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let sum = (f[0] + f[1] + f[2]).norm() / fmax.max(1.0);
    if sum > 1e-10 {
        return Err(Error::Incompatible(sum));
    }
    // u_j = a_j² k_j: u₃ − u₂ = −F₁, u₁ − u₃ = −F₂, u₂ − u₁ = −F₃.
    let u = [ZERO, -f[2], f[1]];
    let mean = (u[0] + u[1] + u[2]) / 3.0;
    let k = [0, 1, 2].map(|j| (u[j] - mean + t) / params.a_sq[j]);
    Ok(FiReport {
        f,
        spread,
        periodicity,
        sum,
        k,
    })
}

/// Coefficients, constants F_i and k for the continuous operator at b and t.
pub fn solve_point_cont(b: &[C64; 3], params: &HietParams, t: C64) -> Result<HietBlochPoint> {
    let c = solve_coeffs_cont(b, params)?;
    let rep = compute_fi_and_k_cont(b, &c, params, t)?;
    Ok(HietBlochPoint { b: *b, c, k: rep.k, t })
}

/// θ(x₁₂)θ(x₂₃)θ(x₃₁).
pub fn hiet_delta(lat: LatticeParam) -> ThetaSum {
    ThetaSum::product(3, ONE, (0..3).map(|j| ThetaFactor::odd(affine(j, ZERO), 0)).collect(), lat)
}

/// ψ = e^{⟨k,x⟩}Φ / (θ(x₁₂)θ(x₂₃)θ(x₃₁)).
pub fn build_psi_h(pt: &HietBlochPoint, lat: LatticeParam) -> Result<ThetaRatio> {
    let phi = build_phi_h(&pt.b, &pt.c, lat)?;
    let num = ThetaSum::exponential(pt.k.to_vec(), ONE, lat).mul(&phi)?;
    ThetaRatio::new(num, hiet_delta(lat))
}

/// Value, gradient and pure second derivatives of a closed form in three variables.
struct Derivs3 {
    f: CompiledSum,
    d: Vec<CompiledSum>,
    dd: Vec<CompiledSum>,
}

impl Derivs3 {
    fn new(f: &ThetaSum) -> Result<Self> {
        let mut d = Vec::with_capacity(3);
        let mut dd = Vec::with_capacity(3);
        for i in 0..3 {
            let di = f.partial(i)?;
            dd.push(di.partial(i)?.compile());
            d.push(di.compile());
        }
        Ok(Self { f: f.compile(), d, dd })
    }

    fn eval(&self, x: &[C64]) -> Result<(C64, [C64; 3], [C64; 3])> {
        let mut d = [ZERO; 3];
        let mut dd = [ZERO; 3];
        for i in 0..3 {
            d[i] = self.d[i].eval(x)?;
            dd[i] = self.dd[i].eval(x)?;
        }
        Ok((self.f.eval(x)?, d, dd))
    }
}

/// The continuous operator applied to a fixed ψ = num/den.
pub struct HietApplied {
    params: HietParams,
    lambda: C64,
    num: Derivs3,
    den: Derivs3,
}

impl HietApplied {
    pub fn new(psi: &ThetaRatio, params: &HietParams) -> Result<Self> {
        Ok(Self {
            params: *params,
            lambda: lambda_tau(&params.lat)?,
            num: Derivs3::new(&psi.num)?,
            den: Derivs3::new(&psi.den)?,
        })
    }

    /// Σ_{i<j} 2(a_i²+a_j²)℘(x_i−x_j).
    pub fn potential(&self, x: &[C64]) -> Result<C64> {
        let a = self.params.a_sq;
        let lat = &self.params.lat;
        let mut u = ZERO;
        for j in 0..3 {
            let wp = -zlog(form_at(j, x), lat, 1)? + self.lambda / 3.0;
            u += 2.0 * (a[j] + a[next(j)]) * wp;
        }
        Ok(u)
    }

    /// (ψ(x), (Lψ)(x)).
    pub fn eval_pair(&self, x: &[C64]) -> Result<(C64, C64)> {
        let (n, dn, ddn) = self.num.eval(x)?;
        let (d, dd, ddd) = self.den.eval(x)?;
        let psi = n / d;
        let mut kin = ZERO;
        for i in 0..3 {
            let second = ddn[i] / d - 2.0 * dn[i] * dd[i] / (d * d) - n * ddd[i] / (d * d)
                + 2.0 * n * dd[i] * dd[i] / (d * d * d);
            kin += self.params.a_sq[i] * second;
        }
        Ok((psi, -kin + self.potential(x)? * psi))
    }
}

fn sample_points_h(lat: &LatticeParam, count: usize, margin: f64, seed: u64) -> Vec<[C64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let mut x = [ZERO; 3];
        for v in &mut x {
            *v = C64::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5) * lat.tau.im);
        }
        if (0..3).all(|j| lat.lattice_distance(form_at(j, &x)) >= margin) {
            out.push(x);
        }
    }
    out
}

/// E = Lψ/ψ at the first of 20 sample points and the worst |Lψ − Eψ| / (|ψ|·max(|E|,1)).
pub fn eigen_check_cont(pt: &HietBlochPoint, params: &HietParams) -> Result<EigenReport> {
    let psi = build_psi_h(pt, params.lat)?;
    let op = HietApplied::new(&psi, params)?;
    let mut energy = None;
    let mut residual: f64 = 0.0;
    for x in sample_points_h(&params.lat, 20, 0.05, 0xE16E) {
        let (f, lf) = op.eval_pair(&x)?;
        let e = *energy.get_or_insert(lf / f);
        residual = residual.max((lf - e * f).norm() / (f.norm() * e.norm().max(1.0)));
    }
    if residual > 1e-8 {
        return Err(Error::NotEigen(residual));
    }
    Ok(EigenReport {
        energy: energy.unwrap_or(ZERO),
        residual,
    })
}

fn check_omega_h(params: &HietParams) -> Result<()> {
    let w = params.omega;
    let lat = &params.lat;
    for (what, z) in [("omega", w)]
        .into_iter()
        .chain((0..3).map(|i| ("omega*a_i^2", w * params.a_sq[i])))
    {
        let d = lat.lattice_distance(z);
        if d < RESONANCE_TOL {
            return Err(Error::ResonantOmega(format!("{what} is {d:e} from the lattice")));
        }
    }
    Ok(())
}

/// D = Σ_i θ(ω)θ(x_{i−1,i}+ωa_i²)θ(x_{i,i+1}−ωa_i²) / (θ(ωa_i²)θ(x_{i−1,i})θ(x_{i,i+1})) · T_i^{ωa_i²}.
pub fn build_d_q(params: &HietParams) -> Result<DifferenceOperator> {
    check_omega_h(params)?;
    let lat = params.lat;
    let w = params.omega;
    let tw = theta1(w, &lat)?;
    let mut terms = Vec::with_capacity(3);
    for i in 0..3 {
        let s = w * params.a_sq[i];
        let num = ThetaSum::product(
            3,
            tw / theta1(s, &lat)?,
            vec![
                ThetaFactor::odd(affine(prev(i), s), 0),
                ThetaFactor::odd(affine(i, -s), 0),
            ],
            lat,
        );
        let den = ThetaSum::product(
            3,
            ONE,
            vec![
                ThetaFactor::odd(affine(prev(i), ZERO), 0),
                ThetaFactor::odd(affine(i, ZERO), 0),
            ],
            lat,
        );
        let mut shift = vec![ZERO; 3];
        shift[i] = s;
        terms.push(DifferenceTerm {
            coeff: ThetaRatio::new(num, den)?,
            shift,
        });
    }
    Ok(DifferenceOperator::new(terms, lat, w))
}

/// The two points where the discrete coefficient conditions ask Φ to vanish.
fn qfcon_points(params: &HietParams) -> [[C64; 3]; 2] {
    let w = params.omega;
    let a = params.a_sq;
    [[w * a[0], ZERO, -w * a[1]], [-w * a[1], ZERO, w * a[2]]]
}

/// The four further points where Φ must vanish; they are differences-equivalent to the two above.
pub fn more_points(params: &HietParams) -> [[C64; 3]; 4] {
    let w = params.omega;
    let a = params.a_sq;
    [
        [ZERO, w * a[1], -w * a[0]],
        [ZERO, -w * a[0], w * a[2]],
        [-w * a[2], w * a[1], ZERO],
        [w * a[0], -w * a[2], ZERO],
    ]
}

/// Coefficients c (unit norm) from Φ(ωa₁²,0,−ωa₂²) = Φ(−ωa₂²,0,ωa₃²) = 0.
pub fn solve_coeffs_q(b: &[C64; 3], params: &HietParams) -> Result<[C64; 3]> {
    check_b(b)?;
    check_omega_h(params)?;
    let pts = qfcon_points(params);
    let mut rows = [[ZERO; 3]; 2];
    for (r, x) in pts.iter().enumerate() {
        for l in 0..3 {
            rows[r][l] = basis_value(l, b, x, &params.lat)?;
        }
    }
    let (c, _) = kernel_2x3(rows)?;
    Ok(normalize(c))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QHietSolution {
    pub point: HietBlochPoint,
    /// Right-hand sides of the three quasimomentum relations.
    pub rhs: [C64; 3],
    /// |∏ rhs − 1|.
    pub product_error: f64,
    /// Relative residuals of the three line vanishing conditions.
    pub vanishing: [f64; 3],
    /// |Φ| at the four further vanishing points, relative to Σ|c_l Φ_l|.
    pub more: [f64; 4],
}

/// Relative size of Φ at x: |Σc_lΦ_l(x)| / Σ|c_lΦ_l(x)|.
fn relative_phi(b: &[C64; 3], c: &[C64; 3], x: &[C64], lat: &LatticeParam) -> Result<f64> {
    let mut s = ZERO;
    let mut m = 0.0;
    for l in 0..3 {
        let v = c[l] * basis_value(l, b, x, lat)?;
        s += v;
        m += v.norm();
    }
    Ok(if m > 0.0 { s.norm() / m } else { 0.0 })
}

/// Solves the discrete coefficient and quasimomentum relations at b and t, and verifies the
/// vanishing conditions on sampled lines.
///
/// k = k₀ + (t/ω)(a₁⁻², a₂⁻², a₃⁻²), where k₀ uses principal logarithms and Σωa_j²k₀_j = 0.
pub fn solve_point_q(b: &[C64; 3], params: &HietParams, t: C64) -> Result<QHietSolution> {
    let c = solve_coeffs_q(b, params)?;
    let lat = params.lat;
    let w = params.omega;
    let a = params.a_sq;
    let phi = build_phi_h(b, &c, lat)?.compile();
    let th = [theta1(w * a[0], &lat)?, theta1(w * a[1], &lat)?, theta1(w * a[2], &lat)?];
    let ph = [
        phi.eval(&[w * a[0], ZERO, ZERO])?,
        phi.eval(&[ZERO, w * a[1], ZERO])?,
        phi.eval(&[ZERO, ZERO, w * a[2]])?,
    ];
    // e^{u₁−u₃}, e^{u₂−u₁}, e^{u₃−u₂} with u_j = ωa_j²k_j.
    let rhs = [
        th[2] / th[0] * ph[2] / ph[0],
        th[0] / th[1] * ph[0] / ph[1],
        th[1] / th[2] * ph[1] / ph[2],
    ];
    let product_error = (rhs[0] * rhs[1] * rhs[2] - 1.0).norm();
    if product_error > 1e-10 {
        return Err(Error::IncompatibleQscon(product_error));
    }
    let u = [ZERO, rhs[1].ln(), -rhs[0].ln()];
    let mean = (u[0] + u[1] + u[2]) / 3.0;
    let k = [0, 1, 2].map(|j| (u[j] - mean + t) / (w * a[j]));
    let point = HietBlochPoint { b: *b, c, k, t };
    let vanishing = vanishing_residuals_hq(&point, params)?;
    let mut more = [0.0; 4];
    for (m, x) in more.iter_mut().zip(more_points(params)) {
        *m = relative_phi(b, &c, &x, &lat)?;
    }
    Ok(QHietSolution {
        point,
        rhs,
        product_error,
        vanishing,
        more,
    })
}

/// φ = e^{⟨k,x⟩}Φ.
pub fn build_varphi(pt: &HietBlochPoint, lat: LatticeParam) -> Result<ThetaSum> {
    ThetaSum::exponential(pt.k.to_vec(), ONE, lat).mul(&build_phi_h(&pt.b, &pt.c, lat)?)
}

/// Worst relative size of θ(x_{i,i−1}+ωa_{i−1}²)φ(x+ωa_{i−1}²e_{i−1}) − θ(x_{i,i+1}+ωa_{i+1}²)φ(x+ωa_{i+1}²e_{i+1})
/// over sampled x with x_{i−1} = x_{i+1}, for each i.
pub fn vanishing_residuals_hq(pt: &HietBlochPoint, params: &HietParams) -> Result<[f64; 3]> {
    let lat = params.lat;
    let w = params.omega;
    let phi = build_varphi(pt, lat)?.compile();
    let mut rng = ChaCha8Rng::seed_from_u64(0xB1A);
    let mut out = [0.0f64; 3];
    for i in 0..3 {
        let (p, n) = (prev(i), next(i));
        for _ in 0..6 {
            let z = C64::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5) * lat.tau.im);
            let s = C64::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
            let mut x = [s + z; 3];
            x[i] = s;
            let mut xp = x;
            xp[p] += w * params.a_sq[p];
            let mut xn = x;
            xn[n] += w * params.a_sq[n];
            let l = theta1(x[i] - x[p] + w * params.a_sq[p], &lat)? * phi.eval(&xp)?;
            let r = theta1(x[i] - x[n] + w * params.a_sq[n], &lat)? * phi.eval(&xn)?;
            out[i] = out[i].max((l - r).norm() / (l.norm() + r.norm()).max(f64::MIN_POSITIVE));
        }
    }
    Ok(out)
}

/// E = Dφ/φ at the first of 20 sample points and the worst |Dφ − Eφ| relative to
/// max(Σ_t|coeff_t·φ(x+shift_t)|, |Eφ|).
pub fn eigen_check_hq(pt: &HietBlochPoint, params: &HietParams) -> Result<EigenReport> {
    let op = build_d_q(params)?;
    let phi = build_varphi(pt, params.lat)?.compile();
    let mut energy = None;
    let mut residual: f64 = 0.0;
    for x in sample_points_h(&params.lat, 20, 0.05, 0xE16E) {
        let f = phi.eval(&x)?;
        let (df, scale) = op.apply_with_scale(&phi, &x)?;
        let e = *energy.get_or_insert(df / f);
        residual = residual.max((df - e * f).norm() / scale.max((e * f).norm()).max(f64::MIN_POSITIVE));
    }
    if residual > 1e-8 {
        return Err(Error::NotEigen(residual));
    }
    Ok(EigenReport {
        energy: energy.unwrap_or(ZERO),
        residual,
    })
}

/// Angle between two coefficient vectors, insensitive to scale and phase.
pub fn kernel_angle(u: &[C64; 3], v: &[C64; 3]) -> f64 {
    let dot: C64 = u.iter().zip(v).map(|(a, b)| a.conj() * b).sum();
    let nu = u.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let nv = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    (dot.norm() / (nu * nv)).min(1.0).acos()
}

/// The translations of b that leave the eigenfunction unchanged: ε₁ = (2/3,−1/3,−1/3) and
/// ε₂ = (−1/3,2/3,−1/3), and their τ multiples together with the shift of k.
pub fn b_translations(lat: &LatticeParam) -> [([C64; 3], [C64; 3]); 4] {
    let e1 = [2.0 / 3.0, -1.0 / 3.0, -1.0 / 3.0].map(|v| C64::new(v, 0.0));
    let e2 = [-1.0 / 3.0, 2.0 / 3.0, -1.0 / 3.0].map(|v| C64::new(v, 0.0));
    let tpi = C64::new(0.0, 2.0 * std::f64::consts::PI);
    [
        (e1, [ZERO; 3]),
        (e2, [ZERO; 3]),
        (e1.map(|v| v * lat.tau), [tpi, -tpi, ZERO]),
        (e2.map(|v| v * lat.tau), [ZERO, tpi, -tpi]),
    ]
}

/// k + s(a₁⁻², a₂⁻², a₃⁻²).
pub fn shift_along_free_direction(k: [C64; 3], params: &HietParams, s: C64) -> [C64; 3] {
    let inv = params.inv_sq();
    [k[0] + s * inv[0], k[1] + s * inv[1], k[2] + s * inv[2]]
}

