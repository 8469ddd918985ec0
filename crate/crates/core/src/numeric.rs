//! Small numerical kernels shared by the solvers: univariate polynomials,
//! circle interpolation, companion-matrix roots, 2×2 Newton, kernels and fits.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Schur};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

/// Horner evaluation of Σ c_j z^j.
pub fn poly_eval(c: &[C64], z: C64) -> C64 {
    c.iter().rev().fold(C64::new(0.0, 0.0), |acc, &a| acc * z + a)
}

pub fn poly_mul(a: &[C64], b: &[C64]) -> Vec<C64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![C64::new(0.0, 0.0); a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

pub fn poly_add(a: &[C64], b: &[C64]) -> Vec<C64> {
    let n = a.len().max(b.len());
    (0..n)
        .map(|i| a.get(i).copied().unwrap_or_default() + b.get(i).copied().unwrap_or_default())
        .collect()
}

pub fn poly_scale(a: &[C64], s: C64) -> Vec<C64> {
    a.iter().map(|x| x * s).collect()
}

/// Coefficients of the polynomial of degree < `n` through `n` samples taken at
/// `radius · e^{2πik/n}`, obtained by discrete Fourier inversion.
pub fn interpolate_on_circle(f: impl Fn(C64) -> Result<C64>, n: usize, radius: f64) -> Result<Vec<C64>> {
    let mut vals = Vec::with_capacity(n);
    for k in 0..n {
        let z = C64::from_polar(radius, 2.0 * PI * k as f64 / n as f64);
        vals.push(f(z)?);
    }
    Ok(dft_coefficients(&vals, radius))
}

/// Taylor coefficients c_j from samples f(r e^{2πik/n}).
pub fn dft_coefficients(vals: &[C64], radius: f64) -> Vec<C64> {
    let n = vals.len();
    (0..n)
        .map(|j| {
            let s: C64 = vals
                .iter()
                .enumerate()
                .map(|(k, v)| v * C64::from_polar(1.0, -2.0 * PI * (j * k % n) as f64 / n as f64))
                .sum();
            s / (n as f64 * radius.powi(j as i32))
        })
        .collect()
}

/// All roots of Σ c_j z^j via the eigenvalues of a scaled companion matrix.
///
/// Leading coefficients below `1e-14 · max |c_j|` are dropped first.
pub fn poly_roots(c: &[C64]) -> Vec<C64> {
    let big = c.iter().map(|x| x.norm()).fold(0.0, f64::max);
    if big == 0.0 {
        return Vec::new();
    }
    let mut deg = c.len() - 1;
    while deg > 0 && c[deg].norm() <= 1e-14 * big {
        deg -= 1;
    }
    if deg == 0 {
        return Vec::new();
    }
    // Rescale z = s·w so that the extreme coefficients have equal modulus.
    let lo = c.iter().position(|x| x.norm() > 0.0).unwrap_or(0);
    let s = if lo < deg {
        (c[lo].norm() / c[deg].norm()).powf(1.0 / (deg - lo) as f64)
    } else {
        1.0
    };
    let scaled: Vec<C64> = (0..=deg).map(|j| c[j] * s.powi(j as i32)).collect();
    let lead = scaled[deg];
    let mut m = DMatrix::<C64>::zeros(deg, deg);
    for i in 1..deg {
        m[(i, i - 1)] = C64::new(1.0, 0.0);
    }
    for i in 0..deg {
        m[(i, deg - 1)] = -scaled[i] / lead;
    }
    let eig = Schur::new(m).eigenvalues();
    match eig {
        Some(v) => v.iter().map(|w| w * s).collect(),
        None => Vec::new(),
    }
}

/// Damped Newton iteration on a square system with a finite-difference Jacobian.
#[derive(Clone, Copy, Debug)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-13,
            max_iter: 50,
            damping: 1.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct NewtonResult {
    pub x: Vec<C64>,
    pub residual: f64,
    pub iterations: usize,
}

fn max_norm(v: &[C64]) -> f64 {
    v.iter().map(|x| x.norm()).fold(0.0, f64::max)
}

/// Solves F(x) = 0 for analytic F: ℂⁿ → ℂⁿ. `project` is applied after each step
/// (e.g. reduction modulo a lattice) and may return an adjusted point.
pub fn newton(
    f: impl Fn(&[C64]) -> Result<Vec<C64>>,
    project: impl Fn(&mut Vec<C64>),
    x0: &[C64],
    opts: NewtonOptions,
) -> Result<NewtonResult> {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut fx = f(&x)?;
    let mut res = max_norm(&fx);
    for it in 0..=opts.max_iter {
        if res <= opts.tol {
            return Ok(NewtonResult {
                x,
                residual: res,
                iterations: it,
            });
        }
        if it == opts.max_iter {
            break;
        }
        let mut jac = DMatrix::<C64>::zeros(n, n);
        for j in 0..n {
            let h = 1e-6 * (1.0 + x[j].norm());
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let fp = f(&xp)?;
            let fm = f(&xm)?;
            for i in 0..n {
                jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        let rhs = DMatrix::from_iterator(n, 1, fx.iter().map(|v| -v));
        let Some(step) = jac.lu().solve(&rhs) else {
            return Err(Error::NoConvergence("singular Jacobian".into()));
        };
        // Backtrack on the damped step until the residual does not grow.
        let mut t = opts.damping;
        let mut accepted = false;
        for _ in 0..20 {
            let mut xn: Vec<C64> = (0..n).map(|i| x[i] + step[i] * t).collect();
            project(&mut xn);
            if let Ok(fn_) = f(&xn) {
                let rn = max_norm(&fn_);
                if rn.is_finite() && (rn < res || t < 1e-3) {
                    x = xn;
                    fx = fn_;
                    res = rn;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Err(Error::NoConvergence(format!(
        "Newton residual {res:e} after {} iterations",
        opts.max_iter
    )))
}

/// Singular values (descending) of a complex matrix.
pub fn singular_values(m: &DMatrix<C64>) -> Vec<f64> {
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    s
}

/// Null vector of a 2×3 system, with the singular values of the system padded to three.
///
/// The kernel is one-dimensional unless the second-smallest singular value is
/// within a factor 1e3 of the smallest (taken as at least `1e-15 · largest`).
pub fn kernel_2x3(rows: [[C64; 3]; 2]) -> Result<([C64; 3], Vec<f64>)> {
    let m = DMatrix::from_fn(3, 3, |i, j| if i < 2 { rows[i][j] } else { C64::new(0.0, 0.0) });
    let svd = m.svd(false, true);
    let vt = svd.v_t.expect("requested V^T");
    let mut idx: Vec<usize> = (0..3).collect();
    idx.sort_by(|&a, &b| svd.singular_values[b].partial_cmp(&svd.singular_values[a]).unwrap());
    let s: Vec<f64> = idx.iter().map(|&i| svd.singular_values[i]).collect();
    let floor = (1e-15 * s[0]).max(s[2]);
    if s[1] < 1e3 * floor {
        return Err(Error::DegenerateKernel(s));
    }
    let row = idx[2];
    let v = [vt[(row, 0)].conj(), vt[(row, 1)].conj(), vt[(row, 2)].conj()];
    Ok((v, s))
}

/// Least-squares fit log y = γ log t + c; returns (γ, c).
pub fn log_log_fit(t: &[f64], y: &[f64]) -> (f64, f64) {
    let n = t.len() as f64;
    let lx: Vec<f64> = t.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let g = sxy / sxx;
    (g, my - g * mx)
}
