use std::fmt::Write as _;
use std::path::Path;

use lamelab::b2cm::{self, BlochPointB2};
use lamelab::elliptic::{theta, wp, Characteristic, LatticeParam};
use lamelab::hietarinta::{self, HietParams};
use lamelab::qb2::{self, QBlochPoint};
use lamelab::quasiinv::{self, Catalog};
use lamelab::spectrum::{self, SpectrumLabel};
use lamelab::thetaforms::Evaluate;
use lamelab::C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::config::{Command, RunConfig};
use crate::{verify, Failure};

pub struct Outcome {
    pub result: Value,
    pub summary: String,
}

fn done(result: Value, summary: String) -> Result<Outcome, Failure> {
    Ok(Outcome { result, summary })
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "FAIL"
    }
}

pub fn lattice(cfg: &RunConfig) -> Result<LatticeParam, Failure> {
    Ok(LatticeParam::new(cfg.tau)?)
}

fn fixed<const N: usize>(v: &[C64], name: &str) -> Result<[C64; N], Failure> {
    v.try_into()
        .map_err(|_| Failure::invalid(format!("{name} needs {N} entries, got {}", v.len())))
}

fn generic(z: C64, lat: &LatticeParam) -> bool {
    lat.lattice_distance(z) > 0.05 && lat.lattice_distance(2.0 * z) > 0.05
}

/// The configured a, or a generic pair drawn from the seed.
pub fn base_pair(cfg: &RunConfig, lat: &LatticeParam) -> Result<[C64; 2], Failure> {
    if let Some(a) = &cfg.a {
        return fixed(a, "a");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    loop {
        let mut draw = || C64::new(rng.random_range(-0.45..0.45), rng.random_range(-0.45..0.45) * lat.tau.im);
        let a = [draw(), draw()];
        if generic(a[0], lat) && generic(a[1], lat) && generic(a[0] - a[1], lat) && generic(a[0] + a[1], lat) {
            return Ok(a);
        }
    }
}

/// b = (b₁₂, b₂₃, b₃₁) from the configured two or three entries, or drawn from the seed.
fn hiet_b(cfg: &RunConfig) -> Result<[C64; 3], Failure> {
    let pair = match &cfg.b {
        Some(b) if b.len() == 3 => return fixed(b, "b"),
        Some(b) => fixed::<2>(b, "b")?,
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut draw = || C64::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
            [draw(), draw()]
        }
    };
    Ok([pair[0], pair[1], -pair[0] - pair[1]])
}

fn hiet_params(cfg: &RunConfig, omega: C64) -> Result<HietParams, Failure> {
    let lat = lattice(cfg)?;
    match &cfg.a_sq {
        Some(a) => Ok(HietParams::new(fixed(a, "a_sq")?, lat, omega)?),
        None => Ok(HietParams::cube_roots(lat, omega)),
    }
}

pub fn run(cfg: &RunConfig) -> Result<Outcome, Failure> {
    match cfg.command {
        Command::Theta => theta_cmd(cfg),
        Command::Wp => wp_cmd(cfg),
        Command::QuasiinvCheck => quasiinv_check(cfg),
        Command::LocusSolve => locus_solve(cfg),
        Command::B2Variety => b2_variety(cfg),
        Command::B2Eigen => b2_eigen(cfg),
        Command::Qb2Variety => qb2_variety(cfg),
        Command::Qb2Eigen => qb2_eigen(cfg),
        Command::Qb2Limit => qb2_limit(cfg),
        Command::HietEigen => hiet_eigen(cfg),
        Command::HietqEigen => hietq_eigen(cfg),
        Command::Spectrum => spectrum_cmd(cfg),
        Command::VerifyFile => verify::verify_file(cfg),
    }
}

fn theta_cmd(cfg: &RunConfig) -> Result<Outcome, Failure> {
    let lat = lattice(cfg)?;
    let z = cfg.z.unwrap();
    let (alpha, beta) = cfg.characteristic.unwrap_or((0.5, 0.5));
    let (mult, order) = (cfg.mult.unwrap_or(1), cfg.order.unwrap_or(0));
    let v = theta(z, &lat, Characteristic::new(alpha, beta), mult, order)?;
    done(json!({ "value": v }), format!("theta^({order})[{alpha};{beta}](z | {mult}tau) = {v:.15e}"))
}

fn wp_cmd(cfg: &RunConfig) -> Result<Outcome, Failure> {
    let lat = lattice(cfg)?;
    let order = cfg.order.unwrap_or(0);
    let v = wp(cfg.z.unwrap(), &lat, order)?;
    done(json!({ "value": v }), format!("wp^({order})(z) = {v:.15e}"))
}

fn quasiinv_check(cfg: &RunConfig) -> Result<Outcome, Failure> {
    let lat = lattice(cfg)?;
    let entry: &Catalog = cfg.entry.as_ref().unwrap();
    let spec = quasiinv::builtin(entry, lat)?;
    let shifts: Vec<(i64, i64)> = (-1..=1).flat_map(|a| (-1..=1).map(move |b| (a, b))).collect();
    let reports = quasiinv::check_all(&spec, &shifts)?;
    let passed = reports.iter().filter(|r| r.pass).count();
    let all = passed == reports.len();
    done(
        json!({ "entry": entry, "hyperplanes": reports, "passed": passed, "all_pass": all }),
        format!("{passed}/{} hyperplanes quasi-invariant: {}", reports.len(), verdict(all)),
    )
}

fn locus_solve(cfg: &RunConfig) -> Result<Outcome, Failure> {
    let lat = lattice(cfg)?;
    let sol = quasiinv::locus_solve(cfg.poles.as_ref().unwrap(), cfg.mults.as_ref().unwrap(), &lat)?;
    let ok = sol.residual <= cfg.tolerances.variety;
    done(
        json!({ "solution": sol, "pass": ok }),
        format!(
            "locus residual {:.2e} after {} iterations (tol {:e}): {}",
            sol.residual,
            sol.iterations,
            cfg.tolerances.variety,
            verdict(ok)
        ),
    )
}

fn max_of(it: impl Iterator<Item = f64>) -> f64 {
    it.fold(0.0, f64::max)
}

fn b2_variety(cfg: &RunConfig) -> Result<Outcome, Failure> {
    let lat = lattice(cfg)?;
    let a = base_pair(cfg, &lat)?;
    let sols = b2cm::solve_variety(a[0], a[1], &lat)?;
    let worst = max_of(sols.iter().map(|s| s.residual));
    let ok = worst <= cfg.tolerances.variety;
    done(
        json!({ "a": a, "count": sols.len(), "solutions": sols, "max_residual": worst, "pass": ok }),
        format!(
            "{} solutions, max residual {worst:.2e} (tol {:e}): {}",
            sols.len(),
            cfg.tolerances.variety,
            verdict(ok)
        ),
    )
}

fn b2_eigen(cfg: &RunConfig) -> Result<Outcome, Failure> {
    let lat = lattice(cfg)?;
    let pt = BlochPointB2::new(fixed(cfg.a.as_ref().unwrap(), "a")?, fixed(cfg.k.as_ref().unwrap(), "k")?, lat);
    let rep = b2cm::eigen_check(&pt)?;
    let (mu, mu_res) = b2cm::floquet_multipliers(&pt)?;
    let ok = rep.residual <= cfg.tolerances.eigen;
    done(
        json!({
            "energy": rep.energy,
            "residual": rep.residual,
            "multipliers": mu,
            "multiplier_residuals": mu_res,
            "expected_multipliers": pt.multipliers(),
            "pass": ok,
        }),
        format!(
            "E = {:.12e}, eigen-residual {:.2e} (tol {:e}): {}",
            rep.energy,
            rep.residual,
            cfg.tolerances.eigen,
            verdict(ok)
        ),
    )
}

fn qb2_variety(cfg: &RunConfig) -> Result<Outcome, Failure> {
    let lat = lattice(cfg)?;
    let a = base_pair(cfg, &lat)?;
    let omega = cfg.omega.unwrap();
    let sols = qb2::solve_variety_q(a[0], a[1], omega, &lat)?;
    let worst = max_of(sols.iter().map(|s| s.residual));
    let ok = worst <= cfg.tolerances.variety;
    done(
        json!({ "a": a, "omega": omega, "count": sols.len(), "solutions": sols, "max_residual": worst, "pass": ok }),
        format!(
            "{} solutions, max residual {worst:.2e} (tol {:e}): {}",
            sols.len(),
            cfg.tolerances.variety,
            verdict(ok)
        ),
    )
}

fn qb2_eigen(cfg: &RunConfig) -> Result<Outcome, Failure> {
    let lat = lattice(cfg)?;
    let omega = cfg.omega.unwrap();
    qb2::check_omega(omega, &lat)?;
    let pt = QBlochPoint::new(fixed(cfg.a.as_ref().unwrap(), "a")?, fixed(cfg.k.as_ref().unwrap(), "k")?, omega, lat);
    let rep = qb2::eigen_check_q(&pt)?;
    let worst = rep.residual[0].max(rep.residual[1]);
    let ok = worst <= cfg.tolerances.q_eigen;
    done(
        json!({ "energy": rep.energy, "energy1": rep.energy1, "residual": rep.residual, "pass": ok }),
        format!(
            "E = {:.12e}, E1 = {:.12e}, residuals {:.2e} / {:.2e} (tol {:e}): {}",
            rep.energy,
            rep.energy1,
            rep.residual[0],
            rep.residual[1],
            cfg.tolerances.q_eigen,
            verdict(ok)
        ),
    )
}

fn qb2_limit(cfg: &RunConfig) -> Result<Outcome, Failure> {
    let lat = lattice(cfg)?;
    let a = base_pair(cfg, &lat)?;
    let omegas = cfg.omegas.clone().unwrap_or_else(|| vec![C64::new(0.05, 0.0), C64::new(0.025, 0.0)]);
    let rep = qb2::limit_check(a[0], a[1], &omegas, &lat)?;
    let mut summary = format!("{} continuous solutions", rep.continuous.len());
    for (i, r) in rep.ratios.iter().enumerate() {
        let lo = r.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = max_of(r.iter().copied());
        let _ = write!(summary, "; error ratio e{}/e{} in [{lo:.3}, {hi:.3}]", i + 1, i);
    }
    done(json!({ "a": a, "report": rep }), summary)
}

fn hiet_eigen(cfg: &RunConfig) -> Result<Outcome, Failure> {
    let params = hiet_params(cfg, C64::new(0.0, 0.0))?;
    let b = hiet_b(cfg)?;
    let t = cfg.t.unwrap_or_default();
    let c = hietarinta::solve_coeffs_cont(&b, &params)?;
    let fi = hietarinta::compute_fi_and_k_cont(&b, &c, &params, t)?;
    let pt = hietarinta::solve_point_cont(&b, &params, t)?;
    let rep = hietarinta::eigen_check_cont(&pt, &params)?;
    let ok = rep.residual <= cfg.tolerances.eigen;
    done(
        json!({ "params": params, "point": pt, "constants": fi, "energy": rep.energy, "residual": rep.residual, "pass": ok }),
        format!(
            "F sum {:.2e}, E = {:.12e}, eigen-residual {:.2e} (tol {:e}): {}",
            fi.sum,
            rep.energy,
            rep.residual,
            cfg.tolerances.eigen,
            verdict(ok)
        ),
    )
}

fn hietq_eigen(cfg: &RunConfig) -> Result<Outcome, Failure> {
    let params = hiet_params(cfg, cfg.omega.unwrap())?;
    let b = hiet_b(cfg)?;
    let sol = hietarinta::solve_point_q(&b, &params, cfg.t.unwrap_or_default())?;
    let rep = hietarinta::eigen_check_hq(&sol.point, &params)?;
    let ok = rep.residual <= cfg.tolerances.q_eigen;
    done(
        json!({ "params": params, "solution": sol, "energy": rep.energy, "residual": rep.residual, "pass": ok }),
        format!(
            "product error {:.2e}, E = {:.12e}, eigen-residual {:.2e} (tol {:e}): {}",
            sol.product_error,
            rep.energy,
            rep.residual,
            cfg.tolerances.q_eigen,
            verdict(ok)
        ),
    )
}

fn spectrum_cmd(cfg: &RunConfig) -> Result<Outcome, Failure> {
    let lat = lattice(cfg)?;
    let (m, n) = cfg.label.unwrap();
    let label = SpectrumLabel::new(m, n)?;
    let initial = cfg.a.as_deref().map(|a| fixed(a, "a")).transpose()?;
    let st = spectrum::bound_state(&label, &lat, initial)?;
    if let Some(path) = &cfg.csv {
        let pt = BlochPointB2::new(st.a, label.k(), lat);
        let sym = spectrum::symmetrize(&pt)?.compile();
        write_grid(path, &sym, &lat)?;
    }
    let ok = st.variety_residual <= cfg.tolerances.variety && st.sym_residual <= cfg.tolerances.eigen;
    done(
        json!({
            "label": [m, n],
            "admissible": label.is_admissible(),
            "a1": st.a[0],
            "a2": st.a[1],
            "E": st.sym_energy,
            "bloch_energy": st.energy,
            "variety_residual": st.variety_residual,
            "eigen_residual": st.sym_residual,
            "imag_ratio": st.imag_ratio,
            "gamma_fits": st.regularity.fits,
            "grid_max": st.regularity.grid_max,
            "grid_points": st.regularity.grid_points,
            "pass": ok,
        }),
        format!(
            "label ({m}, {n}): E = {:.12e}, residual {:.2e}, gammas {:?}, grid max {:.3e}: {}",
            st.sym_energy,
            st.variety_residual,
            st.regularity.fits.iter().map(|f| (f.gamma * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            st.regularity.grid_max,
            verdict(ok)
        ),
    )
}

fn write_grid<F: Evaluate + ?Sized>(path: &Path, f: &F, lat: &LatticeParam) -> Result<(), Failure> {
    let mut out = String::from("x1_re,x1_im,x2_re,x2_im,f_re,f_im\n");
    for (x, v) in spectrum::grid_values(f, lat)? {
        let _ = writeln!(out, "{},{},{},{},{:e},{:e}", x[0].re, x[0].im, x[1].re, x[1].im, v.re, v.im);
    }
    std::fs::write(path, out).map_err(|e| Failure::io(path, e))
}
