//! Bound states of the continuous B2 operator at a pure imaginary modulus.
//!
//! Quantized Bloch data k = (iπm, iπn) fix the Floquet multipliers to ±1;
//! the variety equations then become two transcendental equations for
//! (a₁, a₂). The Weyl-symmetrized solution is regular on ℝ² for the
//! admissible labels n − 4 ≥ m ≥ 2 and vanishes identically otherwise.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::b2cm::{
    b2_delta, build_phi, build_psi, distance_to_sing, eigen_check_with, equation_scales,
    raw_residual, relative_residual, sample_points, weyl_apply, weyl_det, weyl_group, zeta_derivs,
    B2Operator, BlochPointB2,
};
use crate::elliptic::{theta1, zlog_all, LatticeParam};
use crate::error::{Error, Result};
use crate::numeric::{log_log_fit, newton, NewtonOptions};
use crate::qb2::weyl_alternating;
use crate::thetaforms::{Evaluate, ThetaRatio};
use crate::C64;

/// Side of the multistart grid over the fundamental parallelogram.
pub const GRID: usize = 12;
pub const DAMPING: f64 = 0.5;
pub const MAX_ITER: usize = 50;
/// Solutions closer than this modulo ℤ are merged.
pub const DEDUP_TOL: f64 = 1e-8;
/// Acceptance threshold on the relative residual of the variety equations.
pub const RESIDUAL_TOL: f64 = 1e-11;

/// Quantum numbers of k = (iπm, iπn).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpectrumLabel {
    pub m: i64,
    pub n: i64,
}

impl SpectrumLabel {
    pub fn new(m: i64, n: i64) -> Result<Self> {
        if (m - n).rem_euclid(2) != 0 {
            return Err(Error::BadParams(format!("labels ({m}, {n}) differ in parity")));
        }
        Ok(Self { m, n })
    }

    pub fn k(&self) -> [C64; 2] {
        let ipi = C64::new(0.0, std::f64::consts::PI);
        [ipi * self.m as f64, ipi * self.n as f64]
    }

    /// n − 4 ≥ m ≥ 2.
    pub fn is_admissible(&self) -> bool {
        self.n - 4 >= self.m && self.m >= 2
    }
}

/// Admissibility through highest weights: k = 2πi(λ + ρ) with ρ = (1, 3)
/// in units of ½ must leave λ dominant and in the weight lattice.
pub fn admissible_via_weights(m: i64, n: i64) -> bool {
    // 2λ = 2(k/2πi) − 2ρ
    let l = [m - 2, n - 6];
    let dominant = l[1] >= l[0] && l[0] >= 0;
    let in_lattice = (l[0] - l[1]).rem_euclid(2) == 0;
    dominant && in_lattice
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantizedSolution {
    pub a: [C64; 2],
    pub p: [C64; 2],
    /// Relative residual of the variety equations.
    pub residual: f64,
}

impl QuantizedSolution {
    pub fn point(&self, label: &SpectrumLabel, lat: LatticeParam) -> BlochPointB2 {
        BlochPointB2::new(self.a, label.k(), lat)
    }
}

fn check_tau(lat: &LatticeParam) -> Result<()> {
    if lat.tau.re.abs() > 1e-12 {
        return Err(Error::BadParams(format!(
            "τ = {} must be pure imaginary for a real potential",
            lat.tau
        )));
    }
    Ok(())
}

fn p_of(a: C64, k: C64, lat: &LatticeParam) -> Result<C64> {
    Ok(k + zlog_all(a, lat)?[0])
}

/// Reduces a modulo 1 to Re a ∈ [−½, ½).
fn reduce_real(a: C64) -> C64 {
    C64::new(a.re - (a.re + 0.5).floor(), a.im)
}

/// Whether Im a lies in the fundamental strip (−Im τ/2, Im τ/2].
fn in_parallelogram(a: C64, lat: &LatticeParam) -> bool {
    let h = lat.tau.im / 2.0;
    a.im > -h && a.im <= h
}

/// Newton from one start with frozen row scales, then an undamped polish.
fn newton_from(k: [C64; 2], a0: [C64; 2], lat: &LatticeParam) -> Result<QuantizedSolution> {
    let eval = |a: &[C64]| -> Result<(C64, C64, f64, f64)> {
        let z1 = zeta_derivs(a[0], lat)?;
        let z2 = zeta_derivs(a[1], lat)?;
        let p = [p_of(a[0], k[0], lat)?, p_of(a[1], k[1], lat)?];
        let (r1, r2) = raw_residual(&z1, &z2, p);
        let (s1, s2) = equation_scales(&z1, &z2, p);
        Ok((r1, r2, s1, s2))
    };
    let (_, _, s1, s2) = eval(&a0)?;
    if !(s1 > 0.0 && s2 > 0.0) {
        return Err(Error::DegenerateSample("zero equation scale at the start".into()));
    }
    let f = |a: &[C64]| -> Result<Vec<C64>> {
        let (r1, r2, _, _) = eval(a)?;
        Ok(vec![r1 / s1, r2 / s2])
    };
    let rough = newton(
        f,
        |_| {},
        &a0,
        NewtonOptions {
            tol: 1e-12,
            max_iter: MAX_ITER,
            damping: DAMPING,
        },
    )?;
    let polish = NewtonOptions {
        tol: 1e-15,
        max_iter: 20,
        damping: 1.0,
    };
    let a = match newton(f, |_| {}, &rough.x, polish) {
        Ok(r) => r.x,
        Err(Error::NoConvergence(_)) => rough.x,
        Err(e) => return Err(e),
    };
    let a = [reduce_real(a[0]), reduce_real(a[1])];
    let z1 = zeta_derivs(a[0], lat)?;
    let z2 = zeta_derivs(a[1], lat)?;
    let p = [p_of(a[0], k[0], lat)?, p_of(a[1], k[1], lat)?];
    let residual = relative_residual(&z1, &z2, p);
    if !(residual <= RESIDUAL_TOL) {
        return Err(Error::NoConvergence(format!("relative residual {residual:e}")));
    }
    Ok(QuantizedSolution { a, p, residual })
}

/// Why a converged Newton point is not kept.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Rejection {
    OutsideCell,
    /// a₁ ≡ ±a₂, where both equations vanish identically.
    Vertical,
    /// p_j = 0 or a_j at a lattice point.
    Trivial,
}

fn classify(s: &QuantizedSolution, lat: &LatticeParam, restrict_cell: bool) -> Result<Option<Rejection>> {
    for j in 0..2 {
        if lat.lattice_distance(s.a[j]) < 1e-6 || s.p[j].norm() < 1e-3 {
            return Ok(Some(Rejection::Trivial));
        }
        if (theta1(s.a[j], lat)? * s.p[j]).norm() <= 1e-8 {
            return Ok(Some(Rejection::Trivial));
        }
    }
    if lat.lattice_distance(s.a[0] - s.a[1]) < 1e-3 || lat.lattice_distance(s.a[0] + s.a[1]) < 1e-3 {
        return Ok(Some(Rejection::Vertical));
    }
    if restrict_cell && !(in_parallelogram(s.a[0], lat) && in_parallelogram(s.a[1], lat)) {
        return Ok(Some(Rejection::OutsideCell));
    }
    Ok(None)
}

/// Start points: a₁ runs over the GRID×GRID cell centres of the parallelogram,
/// a₂ over a fixed permutation of the same cells.
fn grid_starts(lat: &LatticeParam) -> Vec<[C64; 2]> {
    let cell = |r: usize, s: usize| {
        let u = (r as f64 + 0.5) / GRID as f64 - 0.5;
        let v = (s as f64 + 0.5) / GRID as f64 - 0.5;
        C64::new(u, 0.0) + lat.tau * v
    };
    let mut out = Vec::with_capacity(GRID * GRID);
    for r in 0..GRID {
        for s in 0..GRID {
            out.push([cell(r, s), cell((7 * r + 2) % GRID, (5 * s + 7) % GRID)]);
        }
    }
    out
}

/// Sorts and merges solutions that agree to [`DEDUP_TOL`]; inside the cell
/// the comparison is modulo ℤ + τℤ, otherwise modulo ℤ only.
fn dedup(mut sols: Vec<QuantizedSolution>, lat: &LatticeParam, restrict_cell: bool) -> Vec<QuantizedSolution> {
    sols.sort_by(|x, y| {
        let key = |s: &QuantizedSolution| (s.a[0].im, s.a[0].re, s.a[1].im, s.a[1].re);
        key(x).partial_cmp(&key(y)).unwrap()
    });
    let dist = |z: C64| {
        if restrict_cell {
            lat.lattice_distance(z)
        } else {
            (z - z.re.round()).norm()
        }
    };
    let mut out: Vec<QuantizedSolution> = Vec::new();
    for s in sols {
        if !out.iter().any(|t| dist(s.a[0] - t.a[0]) + dist(s.a[1] - t.a[1]) < DEDUP_TOL) {
            out.push(s);
        }
    }
    out
}

fn solve_starts(
    label: &SpectrumLabel,
    lat: &LatticeParam,
    initial_a: Option<[C64; 2]>,
    restrict_cell: bool,
) -> Result<Vec<QuantizedSolution>> {
    check_tau(lat)?;
    let label = SpectrumLabel::new(label.m, label.n)?;
    let k = label.k();
    let starts = match initial_a {
        Some(a) => vec![a],
        None => grid_starts(lat),
    };
    let converged: Vec<QuantizedSolution> = starts
        .par_iter()
        .filter_map(|a0| newton_from(k, *a0, lat).ok())
        .collect();
    if converged.is_empty() {
        return Err(Error::NoConvergence(format!(
            "no start converged for label ({}, {})",
            label.m, label.n
        )));
    }
    let mut kept = Vec::new();
    let (mut outside, mut vertical, mut trivial) = (0, 0, 0);
    for s in converged {
        match classify(&s, lat, restrict_cell)? {
            None => kept.push(s),
            Some(Rejection::OutsideCell) => outside += 1,
            Some(Rejection::Vertical) => vertical += 1,
            Some(Rejection::Trivial) => trivial += 1,
        }
    }
    let out = dedup(kept, lat, restrict_cell);
    if out.is_empty() {
        return Err(Error::NoSolution(format!(
            "label ({}, {}): converged starts were {outside} outside the cell, {vertical} vertical, {trivial} trivial",
            label.m, label.n
        )));
    }
    Ok(out)
}

/// Solutions (a₁, a₂) of the variety equations with p_j = iπm_j + ζ(a_j) in the
/// fundamental parallelogram, from `initial_a` or from the multistart grid.
/// Labels whose only solutions are degenerate give `NoSolution` with a count
/// of the rejected points.
pub fn quantize_solve(
    label: &SpectrumLabel,
    lat: &LatticeParam,
    initial_a: Option<[C64; 2]>,
) -> Result<Vec<QuantizedSolution>> {
    solve_starts(label, lat, initial_a, true)
}

/// As [`quantize_solve`] but keeps nondegenerate solutions with Im a_j outside
/// the fundamental strip. These are Bloch solutions with the given multipliers
/// whose symmetrization belongs to a different label.
pub fn quantize_solve_any_cell(
    label: &SpectrumLabel,
    lat: &LatticeParam,
    initial_a: Option<[C64; 2]>,
) -> Result<Vec<QuantizedSolution>> {
    solve_starts(label, lat, initial_a, false)
}

/// Solves at τ + 2i from the grid and follows the solution back to τ in four steps.
pub fn continue_from_above(label: &SpectrumLabel, lat: &LatticeParam) -> Result<QuantizedSolution> {
    check_tau(lat)?;
    let shift = C64::new(0.0, 2.0);
    let top = LatticeParam::with_policy(lat.tau + shift, lat.series_tol, lat.max_terms)?;
    let mut sol = quantize_solve(label, &top, None)?.remove(0);
    for step in 1..=4 {
        let tau = lat.tau + shift * (1.0 - step as f64 / 4.0);
        let l = LatticeParam::with_policy(tau, lat.series_tol, lat.max_terms)?;
        sol = quantize_solve(label, &l, Some(sol.a))?.remove(0);
    }
    Ok(sol)
}

/// ε_m(w) for the character with ε_m(s_α) = (−1)^{m_α}; sign changes are
/// reflections in short roots and transpositions in long ones.
pub fn sign_character(w: &[[i8; 2]; 2], m_short: u32, m_long: u32) -> i8 {
    let flips = w.iter().flatten().filter(|v| **v < 0).count() as u32;
    let odd_perm = u32::from(w[0][0] == 0);
    if (m_short * flips + m_long * odd_perm) % 2 == 0 {
        1
    } else {
        -1
    }
}

/// Σ_w ε_m(w)·det(w)·ψ(wx), evaluated term by term.
pub fn weyl_sum<F: Evaluate + ?Sized>(psi: &F, x: &[C64], m_short: u32, m_long: u32) -> Result<C64> {
    let mut out = C64::new(0.0, 0.0);
    for w in weyl_group() {
        let s = sign_character(&w, m_short, m_long) * weyl_det(&w);
        out += psi.eval(&weyl_apply(&w, x))? * s as f64;
    }
    Ok(out)
}

/// Σ_w ψ(wx), evaluated term by term.
pub fn plain_weyl_sum<F: Evaluate + ?Sized>(psi: &F, x: &[C64]) -> Result<C64> {
    let mut out = C64::new(0.0, 0.0);
    for w in weyl_group() {
        out += psi.eval(&weyl_apply(&w, x))?;
    }
    Ok(out)
}

/// Ψ = Σ_w ψ(wx) as a closed form: Σ_w det(w)Φ(wx) over δ, since δ(wx) = det(w)δ(x).
pub fn symmetrize(pt: &BlochPointB2) -> Result<ThetaRatio> {
    ThetaRatio::new(weyl_alternating(&build_phi(pt)?)?, b2_delta(pt.lat))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    /// Unit normal of the line family.
    pub normal: [f64; 2],
    /// Base point on the line.
    pub base: [f64; 2],
    pub gamma: f64,
    pub prefactor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    pub fits: Vec<LineFit>,
    /// max |Ψ| over the real grid.
    pub grid_max: f64,
    pub grid_points: usize,
}

/// Points on x₁ = 0, x₂ = 0, x₁ = x₂ and x₁ = −x₂ away from the other lines.
const LINE_BASES: [([f64; 2], [f64; 2]); 4] = [
    ([0.0, 0.31], [1.0, 0.0]),
    ([0.37, 0.0], [0.0, 1.0]),
    ([0.29, 0.29], [1.0, -1.0]),
    ([0.23, -0.23], [1.0, 1.0]),
];

pub const GRID_SIDE: usize = 50;
pub const GRID_MARGIN: f64 = 1e-3;

/// Log-log fits of |Ψ(x₀ + t n̂)| for t ∈ [10⁻³, 10⁻²] across each line family
/// and the maximum of |Ψ| over a 50×50 grid on [0,1)².
pub fn regularity_check(psi: &ThetaRatio, lat: &LatticeParam) -> Result<RegularityReport> {
    let f = psi.compile();
    let ts: Vec<f64> = (0..10).map(|i| 10f64.powf(-3.0 + i as f64 / 9.0)).collect();
    let mut fits = Vec::new();
    for (base, dir) in LINE_BASES {
        let nrm = (dir[0] * dir[0] + dir[1] * dir[1]).sqrt();
        let normal = [dir[0] / nrm, dir[1] / nrm];
        let mut ys = Vec::with_capacity(ts.len());
        for t in &ts {
            let x = [
                C64::new(base[0] + t * normal[0], 0.0),
                C64::new(base[1] + t * normal[1], 0.0),
            ];
            ys.push(f.eval(&x)?.norm());
        }
        let (gamma, prefactor) = log_log_fit(&ts, &ys);
        if !(gamma >= 0.0) {
            return Err(Error::SingularOnLine(gamma));
        }
        fits.push(LineFit {
            normal,
            base,
            gamma,
            prefactor,
        });
    }
    let grid = grid_values(&f, lat)?;
    let grid_max = grid.iter().fold(0.0f64, |m, (_, v)| m.max(v.norm()));
    let grid_points = grid.len();
    if !grid_max.is_finite() {
        return Err(Error::SingularOnLine(f64::INFINITY));
    }
    Ok(RegularityReport {
        fits,
        grid_max,
        grid_points,
    })
}

/// Values on the real grid (i, j)/50 of [0,1)², skipping points within
/// [`GRID_MARGIN`] of a singular line.
pub fn grid_values<F: Evaluate + ?Sized>(f: &F, lat: &LatticeParam) -> Result<Vec<([C64; 2], C64)>> {
    let mut out = Vec::with_capacity(GRID_SIDE * GRID_SIDE);
    for i in 0..GRID_SIDE {
        for j in 0..GRID_SIDE {
            let x = [
                C64::new(i as f64 / GRID_SIDE as f64, 0.0),
                C64::new(j as f64 / GRID_SIDE as f64, 0.0),
            ];
            if distance_to_sing(&x, lat) < GRID_MARGIN {
                continue;
            }
            out.push((x, f.eval(&x)?));
        }
    }
    Ok(out)
}

/// ‖Ψ‖ / ‖ψ‖ in the max norm over complex sample points.
pub fn symmetrized_norm_ratio(pt: &BlochPointB2) -> Result<f64> {
    let psi = build_psi(pt)?.compile();
    let sym = symmetrize(pt)?.compile();
    let mut num: f64 = 0.0;
    let mut den: f64 = 0.0;
    for x in sample_points(&pt.lat, 20, 0.05, 0x5E7) {
        num = num.max(sym.eval(&x)?.norm());
        den = den.max(psi.eval(&x)?.norm());
    }
    Ok(num / den)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundState {
    pub label: SpectrumLabel,
    pub a: [C64; 2],
    pub variety_residual: f64,
    /// Energy of the unsymmetrized Bloch solution.
    pub energy: C64,
    /// Energy and residual of Ψ.
    pub sym_energy: C64,
    pub sym_residual: f64,
    /// |Im E| / |E|.
    pub imag_ratio: f64,
    pub regularity: RegularityReport,
}

/// One solution for the label: from `initial_a` if given, otherwise by
/// continuation from τ + 2i, falling back to the multistart grid at τ.
pub fn find_solution(
    label: &SpectrumLabel,
    lat: &LatticeParam,
    initial_a: Option<[C64; 2]>,
) -> Result<QuantizedSolution> {
    if initial_a.is_some() {
        return Ok(quantize_solve(label, lat, initial_a)?.remove(0));
    }
    match continue_from_above(label, lat) {
        Ok(s) => Ok(s),
        Err(e) if e.is_validation() => Err(e),
        Err(_) => Ok(quantize_solve(label, lat, None)?.remove(0)),
    }
}

/// Full pipeline for one label: solve, symmetrize, check the eigen equation and regularity.
pub fn bound_state(
    label: &SpectrumLabel,
    lat: &LatticeParam,
    initial_a: Option<[C64; 2]>,
) -> Result<BoundState> {
    let sol = find_solution(label, lat, initial_a)?;
    let pt = sol.point(label, *lat);
    let op = B2Operator::new(*lat)?;
    let pts = sample_points(lat, 20, 0.05, 0xE16E);
    let psi = build_psi(&pt)?;
    let base = eigen_check_with(&op.apply(&psi)?, &pts)?;
    let sym = symmetrize(&pt)?;
    let rep = eigen_check_with(&op.apply(&sym)?, &pts)?;
    let regularity = regularity_check(&sym, lat)?;
    Ok(BoundState {
        label: *label,
        a: sol.a,
        variety_residual: sol.residual,
        energy: base.energy,
        sym_energy: rep.energy,
        sym_residual: rep.residual,
        imag_ratio: base.energy.im.abs() / base.energy.norm(),
        regularity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn characters_are_multiplicative() {
        let g = weyl_group();
        let mul = |x: &[[i8; 2]; 2], y: &[[i8; 2]; 2]| {
            let mut out = [[0i8; 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    out[i][j] = x[i][0] * y[0][j] + x[i][1] * y[1][j];
                }
            }
            out
        };
        for ms in 0..2 {
            for ml in 0..2 {
                for x in &g {
                    for y in &g {
                        let xy = mul(x, y);
                        assert_eq!(
                            sign_character(&xy, ms, ml),
                            sign_character(x, ms, ml) * sign_character(y, ms, ml)
                        );
                    }
                }
            }
        }
        for w in &g {
            assert_eq!(sign_character(w, 1, 1), weyl_det(w));
        }
    }

    #[test]
    fn grid_starts_cover_the_cell() {
        let lat = LatticeParam::new(C64::new(0.0, 2.0)).unwrap();
        let s = grid_starts(&lat);
        assert_eq!(s.len(), GRID * GRID);
        assert!(s.iter().all(|a| in_parallelogram(a[0], &lat) && in_parallelogram(a[1], &lat)));
    }
}
