//! Jacobi theta functions with characteristics, the theta log-derivative
//! family and the Weierstrass ℘-function built on top of them.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Highest derivative order the theta evaluator supports.
pub const MAX_ORDER: usize = 6;

/// Highest derivative order of ζ = θ'/θ that can be formed from [`MAX_ORDER`].
pub const MAX_ZETA_ORDER: usize = MAX_ORDER - 1;

/// Distance to the period lattice below which ℘ and ζ refuse to evaluate.
pub const POLE_RADIUS: f64 = 1e-10;

const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Modulus τ together with the truncation policy of every theta series.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeParam {
    pub tau: C64,
    pub series_tol: f64,
    pub max_terms: usize,
}

impl LatticeParam {
    pub fn new(tau: C64) -> Result<Self> {
        Self::with_policy(tau, 1e-16, 200)
    }

    pub fn with_policy(tau: C64, series_tol: f64, max_terms: usize) -> Result<Self> {
        if !(tau.im > 0.0) || !tau.re.is_finite() {
            return Err(Error::BadModulus(format!("Im tau = {}", tau.im)));
        }
        if !(series_tol > 0.0) || max_terms < 10 {
            return Err(Error::BadParams(format!(
                "series_tol = {series_tol}, max_terms = {max_terms}"
            )));
        }
        Ok(Self {
            tau,
            series_tol,
            max_terms,
        })
    }

    /// Euclidean distance from `z` to the nearest point of ℤ + τℤ.
    pub fn lattice_distance(&self, z: C64) -> f64 {
        let n = (z.im / self.tau.im).round();
        let w = z - self.tau * n;
        let mut best = f64::INFINITY;
        for dn in -1..=1 {
            let v = w - self.tau * dn as f64;
            for dm in -1..=1 {
                let d = (v - C64::new(v.re.round() + dm as f64, 0.0)).norm();
                best = best.min(d);
            }
        }
        best
    }

    /// Representative of `z` modulo ℤ + τℤ in the parallelogram with vertices ±(1+τ)/2.
    pub fn reduce(&self, z: C64) -> C64 {
        let n = (z.im / self.tau.im).round();
        let w = z - self.tau * n;
        w - w.re.round()
    }
}

/// Characteristic [α; β] of θ[α;β](z|τ).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Characteristic {
    pub alpha: f64,
    pub beta: f64,
}

impl Characteristic {
    /// The odd Jacobi theta function θ = θ[1/2; 1/2].
    pub const ODD: Characteristic = Characteristic {
        alpha: 0.5,
        beta: 0.5,
    };

    pub fn new(alpha: f64, beta: f64) -> Self {
        Self { alpha, beta }
    }
}

/// All derivatives of θ[α;β](z | mult·τ) of order `0..=max_order` from a single
/// sweep of the series. Entries above `max_order` are zero.
pub fn theta_derivs(
    z: C64,
    lat: &LatticeParam,
    ch: Characteristic,
    mult: u32,
    max_order: usize,
) -> Result<[C64; MAX_ORDER + 1]> {
    if max_order > MAX_ORDER {
        return Err(Error::OrderOverflow(max_order));
    }
    if !(lat.tau.im > 0.0) || mult == 0 {
        return Err(Error::BadModulus(format!(
            "Im tau = {}, multiplier = {mult}",
            lat.tau.im
        )));
    }
    let t = lat.tau * mult as f64;
    if t.im < 0.05 {
        return Err(Error::BadModulus(format!("Im(mult*tau) = {} < 0.05", t.im)));
    }
    let w = z + ch.beta;
    // The modulus of the n-th term peaks at n + α = -Im w / Im t; sweep outward from there.
    let center = (-w.im / t.im - ch.alpha).round();
    let mut sum = [C64::new(0.0, 0.0); MAX_ORDER + 1];
    let mut term_mags = [0.0f64; MAX_ORDER + 1];

    let add = |n: f64, sum: &mut [C64; MAX_ORDER + 1], mags: &mut [f64; MAX_ORDER + 1]| {
        let c = n + ch.alpha;
        let mut pw = (I * PI * c * c * t + 2.0 * PI * I * c * w).exp();
        let base = 2.0 * PI * I * c;
        for d in 0..=max_order {
            sum[d] += pw;
            mags[d] = mags[d].max(pw.norm());
            pw *= base;
        }
    };

    add(center, &mut sum, &mut term_mags);
    for j in 1..=lat.max_terms {
        let mut mags = [0.0f64; MAX_ORDER + 1];
        add(center + j as f64, &mut sum, &mut mags);
        add(center - j as f64, &mut sum, &mut mags);
        let done = (0..=max_order).all(|d| mags[d] < lat.series_tol * (sum[d].norm() + 1.0));
        if done && j >= 2 {
            if sum.iter().any(|s| !s.is_finite()) {
                return Err(Error::NonConvergent(j));
            }
            return Ok(sum);
        }
    }
    Err(Error::NonConvergent(lat.max_terms))
}

/// The `order`-th z-derivative of θ[α;β](z | mult·τ).
pub fn theta(
    z: C64,
    lat: &LatticeParam,
    ch: Characteristic,
    mult: u32,
    order: usize,
) -> Result<C64> {
    Ok(theta_derivs(z, lat, ch, mult, order)?[order])
}

/// The odd Jacobi theta function θ(z|τ).
pub fn theta1(z: C64, lat: &LatticeParam) -> Result<C64> {
    theta(z, lat, Characteristic::ODD, 1, 0)
}

fn guard_pole(z: C64, lat: &LatticeParam, what: &str) -> Result<()> {
    if lat.lattice_distance(z) < POLE_RADIUS {
        return Err(Error::NearPole {
            what: format!("{what} at {z}"),
            radius: POLE_RADIUS,
        });
    }
    Ok(())
}

/// ζ(z), ζ'(z), …, ζ^{(5)}(z) for ζ = θ'/θ, via the cumulant recursion on θ^{(j)}/θ.
pub fn zlog_all(z: C64, lat: &LatticeParam) -> Result<[C64; MAX_ZETA_ORDER + 1]> {
    guard_pole(z, lat, "zeta")?;
    let th = theta_derivs(z, lat, Characteristic::ODD, 1, MAX_ORDER)?;
    let r: Vec<C64> = th.iter().map(|v| v / th[0]).collect();
    let mut kappa = [C64::new(0.0, 0.0); MAX_ORDER + 1];
    for n in 1..=MAX_ORDER {
        let mut k = r[n];
        for j in 1..n {
            k -= binomial(n - 1, j - 1) * kappa[j] * r[n - j];
        }
        kappa[n] = k;
    }
    let mut out = [C64::new(0.0, 0.0); MAX_ZETA_ORDER + 1];
    out.copy_from_slice(&kappa[1..]);
    Ok(out)
}

/// The `order`-th derivative of ζ(z) = θ'(z)/θ(z).
pub fn zlog(z: C64, lat: &LatticeParam, order: usize) -> Result<C64> {
    if order > MAX_ZETA_ORDER {
        return Err(Error::OrderOverflow(order));
    }
    Ok(zlog_all(z, lat)?[order])
}

/// λ(τ) = θ'''(0)/θ'(0).
pub fn lambda_tau(lat: &LatticeParam) -> Result<C64> {
    let th = theta_derivs(C64::new(0.0, 0.0), lat, Characteristic::ODD, 1, 3)?;
    Ok(th[3] / th[1])
}

/// Weierstrass ℘(z) (order 0) and its derivatives up to order 4, with periods 1 and τ.
pub fn wp(z: C64, lat: &LatticeParam, order: usize) -> Result<C64> {
    if order > MAX_ZETA_ORDER - 1 {
        return Err(Error::OrderOverflow(order));
    }
    let zs = zlog_all(z, lat)?;
    let mut v = -zs[order + 1];
    if order == 0 {
        v += lambda_tau(lat)? / 3.0;
    }
    Ok(v)
}

/// ℘ together with the shift constant λ/3 supplied by the caller (avoids recomputing λ).
pub fn wp_with_lambda(z: C64, lat: &LatticeParam, lambda: C64) -> Result<C64> {
    let zs = zlog_all(z, lat)?;
    Ok(-zs[1] + lambda / 3.0)
}

pub(crate) fn binomial(n: usize, k: usize) -> f64 {
    let mut r = 1.0;
    for i in 0..k {
        r = r * (n - i) as f64 / (i + 1) as f64;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn odd_theta_vanishes_at_origin() {
        let lat = LatticeParam::new(c(0.0, 1.0)).unwrap();
        assert!(theta1(c(0.0, 0.0), &lat).unwrap().norm() < 1e-15);
    }

    #[test]
    fn derivative_at_origin_matches_product_formula() {
        for tau in [c(0.0, 1.0), c(0.3, 1.2), c(-0.2, 0.6)] {
            let lat = LatticeParam::new(tau).unwrap();
            let q = (I * PI * tau).exp();
            let mut prod = c(1.0, 0.0);
            let mut q2n = q * q;
            for _ in 0..200 {
                prod *= (c(1.0, 0.0) - q2n).powi(3);
                q2n *= q * q;
            }
            let oracle = 2.0 * PI * (I * PI * tau / 4.0).exp() * prod;
            let got = theta(c(0.0, 0.0), &lat, Characteristic::ODD, 1, 1).unwrap();
            // θ[1/2;1/2] = -θ₁ in the classical normalization.
            assert!((got + oracle).norm() < 1e-12 * oracle.norm(), "{got} vs {oracle}");
        }
    }

    #[test]
    fn large_imaginary_argument_is_stable() {
        let lat = LatticeParam::new(c(0.1, 1.0)).unwrap();
        let z = c(0.2, 0.3);
        let a = theta1(z + lat.tau * 4.0, &lat).unwrap();
        let b = theta1(z, &lat).unwrap();
        let factor = (-2.0 * PI * I * (4.0 * z) - PI * I * 16.0 * lat.tau).exp();
        assert!((a - b * factor).norm() < 1e-11 * a.norm());
    }

    #[test]
    fn near_pole_is_rejected() {
        let lat = LatticeParam::new(c(0.0, 1.0)).unwrap();
        assert!(matches!(
            wp(c(1.0, 1e-12), &lat, 0),
            Err(Error::NearPole { .. })
        ));
    }

    #[test]
    fn bad_modulus() {
        assert!(matches!(
            LatticeParam::new(c(0.3, -1.0)),
            Err(Error::BadModulus(_))
        ));
    }
}
