//! Generalized Lamé potentials u(x) = Σ c_α ℘(α(x)), the quasi-invariance test,
//! the catalog of root-system and deformed-root-system potentials, and the
//! one-dimensional elliptic locus equations.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::elliptic::{lambda_tau, wp, zlog_all, LatticeParam, POLE_RADIUS};
use crate::error::{Error, Result};
use crate::numeric::dft_coefficients;
use crate::thetaforms::AffineForm;

const SEED: u64 = 0x5EED;
const PASS_TOL: f64 = 1e-7;
/// Target size of the aliasing error (radius/separation)^N of the circle DFT.
const ALIAS_TOL: f64 = 1e-13;
const MIN_SEPARATION: f64 = 1e-2;

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialTerm {
    pub form: AffineForm,
    pub m: u32,
    /// Replaces m(m+1)(α₀,α₀) when set; used to build deliberately broken potentials.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coeff: Option<C64>,
}

impl PotentialTerm {
    pub fn new(form: AffineForm, m: u32) -> Self {
        Self {
            form,
            m,
            coeff: None,
        }
    }

    pub fn coefficient(&self) -> C64 {
        self.coeff
            .unwrap_or_else(|| self.form.norm_sq() * (self.m as f64 * (self.m as f64 + 1.0)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialSpec {
    pub dim: usize,
    pub terms: Vec<PotentialTerm>,
    pub lat: LatticeParam,
}

impl PotentialSpec {
    pub fn new(dim: usize, terms: Vec<PotentialTerm>, lat: LatticeParam) -> Result<Self> {
        for t in &terms {
            if t.form.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: t.form.dim(),
                });
            }
            if t.form.norm_sq().norm() <= 1e-12 {
                return Err(Error::BadParams("isotropic covector".into()));
            }
        }
        Ok(Self { dim, terms, lat })
    }
}

/// The hyperplane {α(x) = m + nτ} of term `term_index`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HyperplaneId {
    pub term_index: usize,
    pub lattice_shift: (i64, i64),
}

impl HyperplaneId {
    pub fn new(term_index: usize) -> Self {
        Self {
            term_index,
            lattice_shift: (0, 0),
        }
    }
}

pub fn potential_eval(spec: &PotentialSpec, x: &[C64]) -> Result<C64> {
    if x.len() != spec.dim {
        return Err(Error::DimensionMismatch {
            expected: spec.dim,
            got: x.len(),
        });
    }
    if spec.terms.is_empty() {
        return Ok(c(0.0));
    }
    let lambda = lambda_tau(&spec.lat)?;
    eval_terms(spec, spec.terms.iter(), x, lambda)
}

fn eval_terms<'a>(
    spec: &PotentialSpec,
    terms: impl Iterator<Item = &'a PotentialTerm>,
    x: &[C64],
    lambda: C64,
) -> Result<C64> {
    let mut u = c(0.0);
    for t in terms {
        let z = t.form.eval(x);
        let zs = zlog_all(z, &spec.lat)?;
        u += t.coefficient() * (-zs[1] + lambda / 3.0);
    }
    Ok(u)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuasiInvReport {
    pub hyperplane: HyperplaneId,
    pub pass: bool,
    /// Coefficients of t^j for odd j ≤ 2m of u(x₀+tn̂) − u(x₀−tn̂), scaled by d^j / max|u| where d is
    /// the distance along the normal line to the nearest other singularity.
    pub odd_coeffs: Vec<C64>,
    pub max_coeff: f64,
}

fn hermitian_norm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Divisibility of u(x) − u(s_π x) by α(x)^{2m+1} near a generic point of the hyperplane π.
pub fn quasi_invariance_check(spec: &PotentialSpec, h: HyperplaneId) -> Result<QuasiInvReport> {
    let term = spec.terms.get(h.term_index).ok_or_else(|| {
        Error::BadParams(format!("term index {} out of range", h.term_index))
    })?;
    let lat = &spec.lat;
    let g = &term.form.gradient;
    let gg = term.form.norm_sq();
    let level = c(h.lattice_shift.0 as f64) + lat.tau * h.lattice_shift.1 as f64;
    let root = gg.sqrt();
    let normal: Vec<C64> = g.iter().map(|v| v / root).collect();

    let parallel = |other: &AffineForm| -> bool {
        let og = &other.gradient;
        let cross = (0..spec.dim)
            .flat_map(|i| (0..spec.dim).map(move |j| (i, j)))
            .map(|(i, j)| (g[i] * og[j] - g[j] * og[i]).norm())
            .fold(0.0, f64::max);
        cross <= 1e-12 * hermitian_norm(g) * hermitian_norm(og)
    };

    // Best-separated of 8 pseudo-random points on the hyperplane.
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut best: Option<(f64, Vec<C64>)> = None;
    for _ in 0..8 {
        let y: Vec<C64> = (0..spec.dim)
            .map(|_| {
                C64::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5) * lat.tau.im)
            })
            .collect();
        let excess = term.form.eval(&y) - level;
        let x0: Vec<C64> = y.iter().zip(g).map(|(yi, gi)| yi - excess / gg * gi).collect();
        let sep = spec
            .terms
            .iter()
            .filter(|o| !parallel(&o.form) || lat.lattice_distance(o.form.eval(&x0)) > 1e-9)
            .map(|o| {
                // Distance in the line parameter t to the pole of this term.
                let rate = o.form.gradient.iter().zip(&normal).map(|(a, b)| a * b).sum::<C64>().norm();
                if rate <= 1e-14 * hermitian_norm(&o.form.gradient) {
                    f64::INFINITY
                } else {
                    lat.lattice_distance(o.form.eval(&x0)) / rate
                }
            })
            .fold(f64::INFINITY, f64::min);
        if best.as_ref().is_none_or(|(s, _)| sep > *s) {
            best = Some((sep, x0));
        }
    }
    let (sep, x0) = best.expect("eight candidates");
    if sep < MIN_SEPARATION {
        return Err(Error::DegenerateSample(format!(
            "base point within {sep:e} of another singular hyperplane"
        )));
    }

    // Terms singular along π itself are exactly symmetric under the reflection.
    let rest: Vec<&PotentialTerm> = spec
        .terms
        .iter()
        .filter(|o| !(parallel(&o.form) && lat.lattice_distance(o.form.eval(&x0)) <= 1e-9))
        .collect();
    let lambda = lambda_tau(lat)?;
    let m = term.m as usize;
    let n = 4 * m + 4;
    // The circle sits well inside the distance to the nearest other singular
    // hyperplane; coefficients are measured against that same length.
    let radius = sep * ALIAS_TOL.powf(1.0 / n as f64);
    let mut diffs = Vec::with_capacity(n);
    let mut scale: f64 = 0.0;
    for k in 0..n {
        let t = C64::from_polar(radius, 2.0 * std::f64::consts::PI * k as f64 / n as f64);
        let xp: Vec<C64> = x0.iter().zip(&normal).map(|(a, b)| a + t * b).collect();
        let xm: Vec<C64> = x0.iter().zip(&normal).map(|(a, b)| a - t * b).collect();
        let up = eval_terms(spec, rest.iter().copied(), &xp, lambda)?;
        let um = eval_terms(spec, rest.iter().copied(), &xm, lambda)?;
        scale = scale.max(up.norm()).max(um.norm());
        diffs.push(up - um);
    }
    let coeffs = dft_coefficients(&diffs, radius);
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let odd_coeffs: Vec<C64> = (1..=2 * m)
        .step_by(2)
        .map(|j| coeffs[j] * sep.powi(j as i32) / scale)
        .collect();
    let max_coeff = odd_coeffs.iter().map(|z| z.norm()).fold(0.0, f64::max);
    Ok(QuasiInvReport {
        hyperplane: h,
        pass: max_coeff <= PASS_TOL,
        odd_coeffs,
        max_coeff,
    })
}

/// Runs the check on every term's hyperplane for each of the given lattice shifts.
pub fn check_all(spec: &PotentialSpec, shifts: &[(i64, i64)]) -> Result<Vec<QuasiInvReport>> {
    let ids: Vec<HyperplaneId> = (0..spec.terms.len())
        .flat_map(|i| {
            shifts.iter().map(move |&s| HyperplaneId {
                term_index: i,
                lattice_shift: s,
            })
        })
        .collect();
    let mut out: Vec<QuasiInvReport> = ids
        .par_iter()
        .map(|&h| quasi_invariance_check(spec, h))
        .collect::<Result<_>>()?;
    out.sort_by_key(|r| r.hyperplane);
    Ok(out)
}

/// ⟨m⟩ = max(m, −1−m).
pub fn bracket(m: i64) -> u32 {
    m.max(-1 - m) as u32
}

/// Named potentials of root-system and deformed-root-system type.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name")]
pub enum Catalog {
    /// x_i − x_j in n coordinates.
    A { n: usize, m: i64 },
    /// Short roots x_i, long roots x_i ± x_j.
    B { n: usize, m_short: i64, m_long: i64 },
    /// Short roots x_i ± x_j, long roots 2x_i.
    C { n: usize, m_short: i64, m_long: i64 },
    D { n: usize, m: i64 },
    /// In the plane x₁+x₂+x₃ = 0 of ℂ³.
    G2 { m_short: i64, m_long: i64 },
    #[serde(rename = "B2_CM")]
    B2Cm,
    /// Inozemtsev BC_n with half-period terms x_i + ω_s.
    BCn { n: usize, m: i64, g: [i64; 4] },
    /// A_{n,1}(m) in n+1 coordinates.
    An1 { n: usize, m: i64 },
    /// C_{n,1}(m,l) in n+1 coordinates.
    Cn1 { n: usize, m: i64, l: i64 },
    /// BC_n-type deformation with parameters m_s, l_s.
    DeformedBC { n: usize, m: [i64; 4], l: [i64; 4] },
    Hietarinta { a_sq: [C64; 3] },
    /// A_{n−1,2}(m) in n+2 coordinates.
    An2 { n: usize, m: i64 },
}

fn unit(dim: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[i] = 1.0;
    v
}

fn combo(dim: usize, parts: &[(usize, C64)]) -> Vec<C64> {
    let mut v = vec![c(0.0); dim];
    for &(i, s) in parts {
        v[i] += s;
    }
    v
}

struct Builder {
    dim: usize,
    terms: Vec<PotentialTerm>,
}

impl Builder {
    fn new(dim: usize) -> Self {
        Self {
            dim,
            terms: Vec::new(),
        }
    }

    fn push(&mut self, gradient: Vec<C64>, offset: C64, m: u32) {
        if m > 0 {
            self.terms.push(PotentialTerm::new(AffineForm::new(gradient, offset), m));
        }
    }

    fn push_real(&mut self, gradient: Vec<f64>, m: u32) {
        self.push(gradient.into_iter().map(c).collect(), c(0.0), m);
    }

    fn pairs(&mut self, n: usize, plus: bool, m: u32) {
        for i in 0..n {
            for j in i + 1..n {
                let mut g = unit(self.dim, i);
                g[j] = if plus { 1.0 } else { -1.0 };
                self.push_real(g, m);
            }
        }
    }
}

fn nonneg(m: i64, what: &str) -> Result<u32> {
    u32::try_from(m).map_err(|_| Error::BadParams(format!("{what} must be a non-negative integer")))
}

fn deformation_k(m: i64, l: i64) -> f64 {
    (2 * m + 1) as f64 / (2 * l + 1) as f64
}

fn half_periods(lat: &LatticeParam) -> [C64; 4] {
    [c(0.0), c(0.5), lat.tau / 2.0, (lat.tau + 1.0) / 2.0]
}

/// Covector and multiplicity table of a catalog entry.
pub fn builtin(entry: &Catalog, lat: LatticeParam) -> Result<PotentialSpec> {
    let b = match *entry {
        Catalog::A { n, m } => {
            let mut b = Builder::new(n);
            b.pairs(n, false, nonneg(m, "m")?);
            b
        }
        Catalog::B {
            n,
            m_short,
            m_long,
        } => {
            let mut b = Builder::new(n);
            for i in 0..n {
                b.push_real(unit(n, i), nonneg(m_short, "m_short")?);
            }
            b.pairs(n, false, nonneg(m_long, "m_long")?);
            b.pairs(n, true, nonneg(m_long, "m_long")?);
            b
        }
        Catalog::C {
            n,
            m_short,
            m_long,
        } => {
            let mut b = Builder::new(n);
            for i in 0..n {
                let mut g = unit(n, i);
                g[i] = 2.0;
                b.push_real(g, nonneg(m_long, "m_long")?);
            }
            b.pairs(n, false, nonneg(m_short, "m_short")?);
            b.pairs(n, true, nonneg(m_short, "m_short")?);
            b
        }
        Catalog::D { n, m } => {
            let mut b = Builder::new(n);
            b.pairs(n, false, nonneg(m, "m")?);
            b.pairs(n, true, nonneg(m, "m")?);
            b
        }
        Catalog::G2 { m_short, m_long } => {
            let mut b = Builder::new(3);
            b.pairs(3, false, nonneg(m_short, "m_short")?);
            let ms = nonneg(m_long, "m_long")?;
            b.push_real(vec![2.0, -1.0, -1.0], ms);
            b.push_real(vec![-1.0, 2.0, -1.0], ms);
            b.push_real(vec![-1.0, -1.0, 2.0], ms);
            b
        }
        Catalog::B2Cm => {
            let mut b = Builder::new(2);
            b.push_real(vec![1.0, 0.0], 1);
            b.push_real(vec![0.0, 1.0], 1);
            b.push_real(vec![1.0, -1.0], 1);
            b.push_real(vec![1.0, 1.0], 1);
            b
        }
        Catalog::BCn { n, m, g } => {
            let mut b = Builder::new(n);
            let m = nonneg(m, "m")?;
            b.pairs(n, false, m);
            b.pairs(n, true, m);
            let hp = half_periods(&lat);
            for i in 0..n {
                for s in 0..4 {
                    b.push(unit(n, i).into_iter().map(c).collect(), hp[s], nonneg(g[s], "g_s")?);
                }
            }
            b
        }
        Catalog::An1 { n, m } => {
            let dim = n + 1;
            let mut b = Builder::new(dim);
            b.pairs(n, false, bracket(m));
            let r = c(m as f64).sqrt();
            for i in 0..n {
                b.push(combo(dim, &[(i, c(1.0)), (n, -r)]), c(0.0), 1);
            }
            b
        }
        Catalog::Cn1 { n, m, l } => {
            let k = deformation_k(m, l);
            if n >= 2 && k.fract() != 0.0 {
                return Err(Error::BadParams(format!(
                    "k = (2m+1)/(2l+1) = {k} must be an integer for n >= 2"
                )));
            }
            let dim = n + 1;
            let mut b = Builder::new(dim);
            if n >= 2 {
                let mk = bracket(k as i64);
                b.pairs(n, false, mk);
                b.pairs(n, true, mk);
            }
            let r = c(k).sqrt();
            for i in 0..n {
                b.push(combo(dim, &[(i, c(2.0))]), c(0.0), bracket(m));
                b.push(combo(dim, &[(i, c(1.0)), (n, r)]), c(0.0), 1);
                b.push(combo(dim, &[(i, c(1.0)), (n, -r)]), c(0.0), 1);
            }
            b.push(combo(dim, &[(n, 2.0 * r)]), c(0.0), bracket(l));
            b
        }
        Catalog::DeformedBC { n, m, l } => {
            let k = deformation_k(m[0], l[0]);
            for s in 1..4 {
                if (deformation_k(m[s], l[s]) - k).abs() > 1e-12 * k.abs().max(1.0) {
                    return Err(Error::BadParams(
                        "(2m_s+1)/(2l_s+1) must agree for all s".into(),
                    ));
                }
            }
            if n >= 2 && k.fract() != 0.0 {
                return Err(Error::BadParams(format!(
                    "k = {k} must be an integer for n >= 2"
                )));
            }
            let dim = n + 1;
            let mut b = Builder::new(dim);
            if n >= 2 {
                let mk = bracket(k as i64);
                b.pairs(n, false, mk);
                b.pairs(n, true, mk);
            }
            let r = c(k).sqrt();
            let hp = half_periods(&lat);
            for i in 0..n {
                for s in 0..4 {
                    b.push(combo(dim, &[(i, c(1.0))]), hp[s], bracket(m[s]));
                }
                b.push(combo(dim, &[(i, c(1.0)), (n, r)]), c(0.0), 1);
                b.push(combo(dim, &[(i, c(1.0)), (n, -r)]), c(0.0), 1);
            }
            for s in 0..4 {
                b.push(combo(dim, &[(n, r)]), hp[s], bracket(l[s]));
            }
            b
        }
        Catalog::Hietarinta { a_sq } => {
            check_hietarinta(&a_sq)?;
            let a: Vec<C64> = a_sq.iter().map(|v| v.sqrt()).collect();
            let mut b = Builder::new(3);
            b.push(combo(3, &[(0, a[0]), (1, -a[1])]), c(0.0), 1);
            b.push(combo(3, &[(1, a[1]), (2, -a[2])]), c(0.0), 1);
            b.push(combo(3, &[(0, a[0]), (2, -a[2])]), c(0.0), 1);
            b
        }
        Catalog::An2 { n, m } => {
            let dim = n + 2;
            let mut b = Builder::new(dim);
            b.pairs(n, false, nonneg(m, "m")?);
            let r1 = c(m as f64).sqrt();
            let r2 = c(-1.0 - m as f64).sqrt();
            for i in 0..n {
                b.push(combo(dim, &[(i, c(1.0)), (n, -r1)]), c(0.0), 1);
                b.push(combo(dim, &[(i, c(1.0)), (n + 1, -r2)]), c(0.0), 1);
            }
            b.push(combo(dim, &[(n, r1), (n + 1, -r2)]), c(0.0), 1);
            b
        }
    };
    PotentialSpec::new(b.dim, b.terms, lat)
}

/// a₁²+a₂²+a₃² = 0 with nonzero, pairwise distinct entries.
pub fn check_hietarinta(a_sq: &[C64; 3]) -> Result<()> {
    let size = a_sq.iter().map(|v| v.norm()).fold(0.0, f64::max);
    if (a_sq[0] + a_sq[1] + a_sq[2]).norm() > 1e-14 * size.max(1.0) {
        return Err(Error::BadParams("a_1^2 + a_2^2 + a_3^2 must vanish".into()));
    }
    for i in 0..3 {
        if a_sq[i].norm() <= 1e-12 * size.max(1.0) {
            return Err(Error::BadParams("a_i^2 must be nonzero".into()));
        }
        for j in i + 1..3 {
            if (a_sq[i] - a_sq[j]).norm() <= 1e-12 * size.max(1.0) {
                return Err(Error::BadParams("a_i^2 must be pairwise distinct".into()));
            }
        }
    }
    Ok(())
}

/// Residuals Σ_{j≠i} m_j(m_j+1) ℘^{(2s−1)}(x_i − x_j), i = 1..N, s = 1..m_i.
pub fn locus_residual(poles: &[C64], mults: &[u32], lat: &LatticeParam) -> Result<Vec<C64>> {
    if poles.len() != mults.len() {
        return Err(Error::DimensionMismatch {
            expected: poles.len(),
            got: mults.len(),
        });
    }
    for i in 0..poles.len() {
        for j in i + 1..poles.len() {
            if lat.lattice_distance(poles[i] - poles[j]) < POLE_RADIUS {
                return Err(Error::CoincidentPoles(i, j));
            }
        }
    }
    let mut out = Vec::new();
    for i in 0..poles.len() {
        for s in 1..=mults[i] as usize {
            let mut r = c(0.0);
            for j in 0..poles.len() {
                if j != i {
                    let mj = mults[j] as f64;
                    r += mj * (mj + 1.0) * wp(poles[i] - poles[j], lat, 2 * s - 1)?;
                }
            }
            out.push(r);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocusSolution {
    pub poles: Vec<C64>,
    pub residual: f64,
    pub iterations: usize,
}

/// Gauss–Newton on the locus equations with the first pole held fixed.
pub fn locus_solve(initial: &[C64], mults: &[u32], lat: &LatticeParam) -> Result<LocusSolution> {
    let norm = |v: &[C64]| v.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let mut x = initial.to_vec();
    let mut r = locus_residual(&x, mults, lat)?;
    let mut res = norm(&r);
    let free = x.len().saturating_sub(1);
    for it in 0..=50 {
        if res <= 1e-11 || free == 0 {
            return Ok(LocusSolution {
                poles: x,
                residual: res,
                iterations: it,
            });
        }
        if it == 50 {
            break;
        }
        let mut jac = DMatrix::<C64>::zeros(r.len(), free);
        for j in 0..free {
            let h = 1e-6;
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j + 1] += h;
            xm[j + 1] -= h;
            let rp = locus_residual(&xp, mults, lat)?;
            let rm = locus_residual(&xm, mults, lat)?;
            for i in 0..r.len() {
                jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * h);
            }
        }
        let rhs = DMatrix::from_iterator(r.len(), 1, r.iter().map(|v| -v));
        let step = jac
            .svd(true, true)
            .solve(&rhs, 1e-12)
            .map_err(|e| Error::NoConvergence(e.to_string()))?;
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..20 {
            let mut xn = x.clone();
            for j in 0..free {
                xn[j + 1] += step[j] * t;
            }
            if let Ok(rn) = locus_residual(&xn, mults, lat) {
                let nn = norm(&rn);
                if nn < res {
                    x = xn;
                    r = rn;
                    res = nn;
                    moved = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    Err(Error::NoConvergence(format!("locus residual {res:e}")))
}
