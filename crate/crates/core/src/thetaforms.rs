//! Closed-form functions of the shape Σ c · e^{⟨k,x⟩} · ∏ θ^{(d)}[α;β](⟨g,x⟩ + b | m·τ).
//!
//! Differentiation and argument shifts act exactly on this representation;
//! evaluation caches theta values per distinct factor argument.

use std::collections::HashMap;

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::elliptic::{theta_derivs, Characteristic, LatticeParam, MAX_ORDER, POLE_RADIUS};
use crate::error::{Error, Result};

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// x ↦ ⟨gradient, x⟩ + offset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineForm {
    pub gradient: Vec<C64>,
    pub offset: C64,
}

impl AffineForm {
    pub fn new(gradient: Vec<C64>, offset: C64) -> Self {
        Self { gradient, offset }
    }

    /// Form with real gradient and offset, for the common integer-coefficient case.
    pub fn real(gradient: &[f64], offset: f64) -> Self {
        Self {
            gradient: gradient.iter().map(|&g| C64::new(g, 0.0)).collect(),
            offset: C64::new(offset, 0.0),
        }
    }

    pub fn dim(&self) -> usize {
        self.gradient.len()
    }

    pub fn eval(&self, x: &[C64]) -> C64 {
        dot(&self.gradient, x) + self.offset
    }

    pub fn with_offset(&self, offset: C64) -> Self {
        Self {
            gradient: self.gradient.clone(),
            offset,
        }
    }

    /// ⟨g, g⟩ with the complex bilinear (not Hermitian) pairing.
    pub fn norm_sq(&self) -> C64 {
        dot(&self.gradient, &self.gradient)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaFactor {
    pub form: AffineForm,
    pub ch: Characteristic,
    pub modulus_mult: u32,
    pub deriv_order: usize,
}

impl ThetaFactor {
    /// θ^{(order)}(form) for the odd theta function.
    pub fn odd(form: AffineForm, deriv_order: usize) -> Self {
        Self {
            form,
            ch: Characteristic::ODD,
            modulus_mult: 1,
            deriv_order,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaTerm {
    pub coeff: C64,
    pub exp_covector: Vec<C64>,
    pub factors: Vec<ThetaFactor>,
}

/// A finite sum of theta terms in `dim` variables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaSum {
    pub dim: usize,
    pub terms: Vec<ThetaTerm>,
    pub lat: LatticeParam,
}

/// Anything that can be evaluated at a point of ℂⁿ.
pub trait Evaluate {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[C64]) -> Result<C64>;
}

impl ThetaSum {
    pub fn zero(dim: usize, lat: LatticeParam) -> Self {
        Self {
            dim,
            terms: Vec::new(),
            lat,
        }
    }

    /// The single term coeff · e^{⟨k,x⟩}.
    pub fn exponential(k: Vec<C64>, coeff: C64, lat: LatticeParam) -> Self {
        let dim = k.len();
        Self {
            dim,
            terms: vec![ThetaTerm {
                coeff,
                exp_covector: k,
                factors: Vec::new(),
            }],
            lat,
        }
    }

    /// The single term coeff · ∏ factors.
    pub fn product(dim: usize, coeff: C64, factors: Vec<ThetaFactor>, lat: LatticeParam) -> Self {
        Self {
            dim,
            terms: vec![ThetaTerm {
                coeff,
                exp_covector: vec![C64::new(0.0, 0.0); dim],
                factors,
            }],
            lat,
        }
    }

    pub fn push(&mut self, term: ThetaTerm) -> Result<()> {
        check_dim(self.dim, term.exp_covector.len())?;
        for f in &term.factors {
            check_dim(self.dim, f.form.dim())?;
            if f.deriv_order > MAX_ORDER {
                return Err(Error::OrderOverflow(f.deriv_order));
            }
        }
        self.terms.push(term);
        Ok(())
    }

    pub fn add(&self, other: &ThetaSum) -> Result<ThetaSum> {
        check_dim(self.dim, other.dim)?;
        let mut out = self.clone();
        out.terms.extend(other.terms.iter().cloned());
        Ok(out)
    }

    pub fn scale(&self, c: C64) -> ThetaSum {
        let mut out = self.clone();
        for t in &mut out.terms {
            t.coeff *= c;
        }
        out
    }

    /// Term-by-term product of two sums.
    pub fn mul(&self, other: &ThetaSum) -> Result<ThetaSum> {
        check_dim(self.dim, other.dim)?;
        let mut out = ThetaSum::zero(self.dim, self.lat);
        for a in &self.terms {
            for b in &other.terms {
                let mut factors = a.factors.clone();
                factors.extend(b.factors.iter().cloned());
                out.terms.push(ThetaTerm {
                    coeff: a.coeff * b.coeff,
                    exp_covector: a
                        .exp_covector
                        .iter()
                        .zip(&b.exp_covector)
                        .map(|(x, y)| x + y)
                        .collect(),
                    factors,
                });
            }
        }
        Ok(out)
    }

    /// Directional derivative along `direction` by the product rule.
    pub fn differentiate(&self, direction: &[C64]) -> Result<ThetaSum> {
        check_dim(self.dim, direction.len())?;
        let mut out = ThetaSum::zero(self.dim, self.lat);
        for t in &self.terms {
            let s = dot(direction, &t.exp_covector);
            if s != C64::new(0.0, 0.0) {
                out.terms.push(ThetaTerm {
                    coeff: t.coeff * s,
                    exp_covector: t.exp_covector.clone(),
                    factors: t.factors.clone(),
                });
            }
            for (i, f) in t.factors.iter().enumerate() {
                let s = dot(direction, &f.form.gradient);
                if s == C64::new(0.0, 0.0) {
                    continue;
                }
                if f.deriv_order + 1 > MAX_ORDER {
                    return Err(Error::OrderOverflow(f.deriv_order + 1));
                }
                let mut factors = t.factors.clone();
                factors[i].deriv_order += 1;
                out.terms.push(ThetaTerm {
                    coeff: t.coeff * s,
                    exp_covector: t.exp_covector.clone(),
                    factors,
                });
            }
        }
        Ok(out)
    }

    /// Partial derivative ∂/∂x_i.
    pub fn partial(&self, i: usize) -> Result<ThetaSum> {
        let mut d = vec![C64::new(0.0, 0.0); self.dim];
        if i >= self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: i + 1,
            });
        }
        d[i] = C64::new(1.0, 0.0);
        self.differentiate(&d)
    }

    /// g(x) = f(x + v).
    pub fn shift(&self, v: &[C64]) -> Result<ThetaSum> {
        check_dim(self.dim, v.len())?;
        let mut out = self.clone();
        for t in &mut out.terms {
            t.coeff *= dot(&t.exp_covector, v).exp();
            for f in &mut t.factors {
                f.form.offset += dot(&f.form.gradient, v);
            }
        }
        Ok(out)
    }

    /// g(x) = f(Mx) for a square matrix given by rows.
    pub fn pullback(&self, m: &[Vec<C64>]) -> Result<ThetaSum> {
        check_dim(self.dim, m.len())?;
        for row in m {
            check_dim(self.dim, row.len())?;
        }
        let apply = |g: &[C64]| -> Vec<C64> {
            (0..self.dim)
                .map(|j| (0..self.dim).map(|i| g[i] * m[i][j]).sum())
                .collect()
        };
        let mut out = self.clone();
        for t in &mut out.terms {
            t.exp_covector = apply(&t.exp_covector);
            for f in &mut t.factors {
                f.form.gradient = apply(&f.form.gradient);
            }
        }
        Ok(out)
    }

    pub fn max_order(&self) -> usize {
        self.terms
            .iter()
            .flat_map(|t| t.factors.iter().map(|f| f.deriv_order))
            .max()
            .unwrap_or(0)
    }

    /// Pre-grouped form for repeated evaluation.
    pub fn compile(&self) -> CompiledSum {
        CompiledSum::new(self)
    }

    pub fn evaluate(&self, x: &[C64]) -> Result<C64> {
        check_dim(self.dim, x.len())?;
        self.compile().eval(x)
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Base {
    form: AffineForm,
    ch: Characteristic,
    mult: u32,
    max_order: usize,
}

#[derive(Clone, Debug)]
struct CompiledTerm {
    coeff: C64,
    exp_covector: Vec<C64>,
    factors: Vec<(usize, usize)>,
}

/// A [`ThetaSum`] with shared factor arguments collected and identical terms merged.
#[derive(Clone, Debug)]
pub struct CompiledSum {
    dim: usize,
    lat: LatticeParam,
    bases: Vec<Base>,
    terms: Vec<CompiledTerm>,
}

fn key_bits(v: &[C64]) -> Vec<u64> {
    v.iter()
        .flat_map(|c| [c.re.to_bits(), c.im.to_bits()])
        .collect()
}

impl CompiledSum {
    fn new(sum: &ThetaSum) -> Self {
        let mut bases: Vec<Base> = Vec::new();
        let mut index: HashMap<(Vec<u64>, u64, u64, u32), usize> = HashMap::new();
        let mut merged: HashMap<(Vec<u64>, Vec<(usize, usize)>), usize> = HashMap::new();
        let mut terms: Vec<CompiledTerm> = Vec::new();
        for t in &sum.terms {
            let mut factors = Vec::with_capacity(t.factors.len());
            for f in &t.factors {
                let mut key_v = f.form.gradient.clone();
                key_v.push(f.form.offset);
                let key = (
                    key_bits(&key_v),
                    f.ch.alpha.to_bits(),
                    f.ch.beta.to_bits(),
                    f.modulus_mult,
                );
                let idx = *index.entry(key).or_insert_with(|| {
                    bases.push(Base {
                        form: f.form.clone(),
                        ch: f.ch,
                        mult: f.modulus_mult,
                        max_order: 0,
                    });
                    bases.len() - 1
                });
                bases[idx].max_order = bases[idx].max_order.max(f.deriv_order);
                factors.push((idx, f.deriv_order));
            }
            factors.sort_unstable();
            let mkey = (key_bits(&t.exp_covector), factors.clone());
            match merged.get(&mkey) {
                Some(&i) => terms[i].coeff += t.coeff,
                None => {
                    merged.insert(mkey, terms.len());
                    terms.push(CompiledTerm {
                        coeff: t.coeff,
                        exp_covector: t.exp_covector.clone(),
                        factors,
                    });
                }
            }
        }
        Self {
            dim: sum.dim,
            lat: sum.lat,
            bases,
            terms,
        }
    }

    pub fn term_count(&self) -> usize {
        self.terms.len()
    }

    /// Smallest lattice distance among the order-0 odd-theta factor arguments at `x`.
    fn min_odd_argument_distance(&self, x: &[C64]) -> f64 {
        self.bases
            .iter()
            .filter(|b| b.ch == Characteristic::ODD && b.mult == 1)
            .map(|b| self.lat.lattice_distance(b.form.eval(x)))
            .fold(f64::INFINITY, f64::min)
    }
}

impl Evaluate for CompiledSum {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &[C64]) -> Result<C64> {
        check_dim(self.dim, x.len())?;
        let mut vals = Vec::with_capacity(self.bases.len());
        for b in &self.bases {
            vals.push(theta_derivs(
                b.form.eval(x),
                &self.lat,
                b.ch,
                b.mult,
                b.max_order,
            )?);
        }
        let mut total = C64::new(0.0, 0.0);
        for t in &self.terms {
            let mut v = t.coeff;
            if t.exp_covector.iter().any(|c| *c != C64::new(0.0, 0.0)) {
                v *= dot(&t.exp_covector, x).exp();
            }
            for &(b, o) in &t.factors {
                v *= vals[b][o];
            }
            total += v;
        }
        Ok(total)
    }
}

impl Evaluate for ThetaSum {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &[C64]) -> Result<C64> {
        self.evaluate(x)
    }
}

/// num / den, both theta sums.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaRatio {
    pub num: ThetaSum,
    pub den: ThetaSum,
}

impl ThetaRatio {
    pub fn new(num: ThetaSum, den: ThetaSum) -> Result<Self> {
        check_dim(num.dim, den.dim)?;
        Ok(Self { num, den })
    }

    pub fn compile(&self) -> CompiledRatio {
        CompiledRatio {
            num: self.num.compile(),
            den: self.den.compile(),
            single_term_den: self.den.terms.len() == 1,
        }
    }

    pub fn evaluate(&self, x: &[C64]) -> Result<C64> {
        self.compile().eval(x)
    }

    pub fn shift(&self, v: &[C64]) -> Result<ThetaRatio> {
        Ok(ThetaRatio {
            num: self.num.shift(v)?,
            den: self.den.shift(v)?,
        })
    }

    pub fn pullback(&self, m: &[Vec<C64>]) -> Result<ThetaRatio> {
        Ok(ThetaRatio {
            num: self.num.pullback(m)?,
            den: self.den.pullback(m)?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct CompiledRatio {
    pub num: CompiledSum,
    pub den: CompiledSum,
    single_term_den: bool,
}

impl CompiledRatio {
    pub(crate) fn guard(&self, x: &[C64]) -> Result<()> {
        if self.single_term_den && self.den.min_odd_argument_distance(x) < POLE_RADIUS {
            return Err(Error::NearPole {
                what: "denominator theta factor".into(),
                radius: POLE_RADIUS,
            });
        }
        Ok(())
    }
}

impl Evaluate for CompiledRatio {
    fn dim(&self) -> usize {
        self.num.dim
    }

    fn eval(&self, x: &[C64]) -> Result<C64> {
        self.guard(x)?;
        let d = self.den.eval(x)?;
        if d == C64::new(0.0, 0.0) || !d.is_finite() {
            return Err(Error::NearPole {
                what: "denominator vanishes".into(),
                radius: POLE_RADIUS,
            });
        }
        Ok(self.num.eval(x)? / d)
    }
}

impl Evaluate for ThetaRatio {
    fn dim(&self) -> usize {
        self.num.dim
    }

    fn eval(&self, x: &[C64]) -> Result<C64> {
        self.evaluate(x)
    }
}

/// Floquet multiplier μ = f(x0 + l)/f(x0), certified on ten further points near `x0`.
///
/// Returns μ and the largest relative deviation |f(x+l) − μ f(x)| / |μ f(x)|.
pub fn floquet_factor<F: Evaluate + ?Sized>(f: &F, l: &[C64], x0: &[C64]) -> Result<(C64, f64)> {
    check_dim(f.dim(), l.len())?;
    check_dim(f.dim(), x0.len())?;
    let shifted = |x: &[C64]| -> Vec<C64> { x.iter().zip(l).map(|(a, b)| a + b).collect() };
    let f0 = f.eval(x0)?;
    if f0 == C64::new(0.0, 0.0) {
        return Err(Error::DegenerateSample("f(x0) = 0".into()));
    }
    let mu = f.eval(&shifted(x0))? / f0;
    let mut rng = ChaCha8Rng::seed_from_u64(0x0F10_0E7);
    let mut residual: f64 = 0.0;
    let mut used = 0;
    for _ in 0..40 {
        if used == 10 {
            break;
        }
        let x: Vec<C64> = x0
            .iter()
            .map(|c| c + C64::new(rng.random_range(-0.15..0.15), rng.random_range(-0.15..0.15)))
            .collect();
        let (Ok(a), Ok(b)) = (f.eval(&shifted(&x)), f.eval(&x)) else {
            continue;
        };
        let denom = (mu * b).norm();
        if denom == 0.0 {
            continue;
        }
        residual = residual.max((a - mu * b).norm() / denom);
        used += 1;
    }
    if used < 10 {
        return Err(Error::DegenerateSample(
            "too few regular points near x0".into(),
        ));
    }
    if residual > 1e-6 {
        return Err(Error::NotQuasiPeriodic(residual));
    }
    Ok((mu, residual))
}
