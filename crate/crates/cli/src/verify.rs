use lamelab::b2cm::{self, VarietySolution};
use lamelab::elliptic::zlog;
use lamelab::qb2::{self, QVarietySolution};
use lamelab::quasiinv::{self, LocusSolution};
use lamelab::spectrum::SpectrumLabel;
use lamelab::C64;
use serde::de::DeserializeOwned;
use serde_json::{json, Value};

use crate::commands::{self, lattice, Outcome};
use crate::config::{Command, RunConfig};
use crate::Failure;

fn field<T: DeserializeOwned>(v: &Value, name: &str) -> Result<T, Failure> {
    serde_json::from_value(v[name].clone()).map_err(|e| Failure::invalid(format!("field {name:?}: {e}")))
}

/// Residuals recomputed from the recorded solutions, paired with the recorded values.
fn reingest(cfg: &RunConfig, result: &Value) -> Result<Option<Vec<(f64, f64)>>, Failure> {
    let lat = lattice(cfg)?;
    let pairs = match cfg.command {
        Command::B2Variety => {
            let a: [C64; 2] = field(result, "a")?;
            let sols: Vec<VarietySolution> = field(result, "solutions")?;
            sols.iter()
                .map(|s| Ok((s.residual, b2cm::relative_residual_at(a, s.p, &lat)?)))
                .collect::<Result<_, Failure>>()?
        }
        Command::Qb2Variety => {
            let a: [C64; 2] = field(result, "a")?;
            let omega: C64 = field(result, "omega")?;
            let sols: Vec<QVarietySolution> = field(result, "solutions")?;
            sols.iter()
                .map(|s| Ok((s.residual, qb2::relative_residual_q(a, s.xi, omega, &lat)?)))
                .collect::<Result<_, Failure>>()?
        }
        Command::Spectrum => {
            let (m, n): (i64, i64) = field(result, "label")?;
            let a = [field::<C64>(result, "a1")?, field::<C64>(result, "a2")?];
            let k = SpectrumLabel::new(m, n)?.k();
            let p = [k[0] + zlog(a[0], &lat, 0)?, k[1] + zlog(a[1], &lat, 0)?];
            vec![(field(result, "variety_residual")?, b2cm::relative_residual_at(a, p, &lat)?)]
        }
        Command::LocusSolve => {
            let sol: LocusSolution = field(result, "solution")?;
            let r = quasiinv::locus_residual(&sol.poles, cfg.mults.as_deref().unwrap_or_default(), &lat)?;
            vec![(sol.residual, r.iter().map(|z| z.norm()).fold(0.0, f64::max))]
        }
        _ => return Ok(None),
    };
    Ok(Some(pairs))
}

/// Largest deviation between the numeric leaves of two documents, relative to max(1, |recorded|).
fn compare(recorded: &Value, fresh: &Value, path: &str, count: &mut usize) -> Result<f64, String> {
    match (recorded, fresh) {
        (Value::Number(x), Value::Number(y)) => {
            *count += 1;
            let (x, y) = (x.as_f64().unwrap(), y.as_f64().unwrap());
            Ok((x - y).abs() / x.abs().max(1.0))
        }
        (Value::Array(x), Value::Array(y)) if x.len() == y.len() => {
            let mut worst: f64 = 0.0;
            for (i, (u, v)) in x.iter().zip(y).enumerate() {
                worst = worst.max(compare(u, v, &format!("{path}[{i}]"), count)?);
            }
            Ok(worst)
        }
        (Value::Object(x), Value::Object(y)) if x.len() == y.len() => {
            let mut worst: f64 = 0.0;
            for (k, u) in x {
                let v = y.get(k).ok_or_else(|| format!("{path}.{k} missing"))?;
                worst = worst.max(compare(u, v, &format!("{path}.{k}"), count)?);
            }
            Ok(worst)
        }
        _ if recorded == fresh => Ok(0.0),
        _ => Err(format!("{path} differs")),
    }
}

pub fn verify_file(cfg: &RunConfig) -> Result<Outcome, Failure> {
    let path = cfg.file.as_ref().unwrap();
    let text = std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
    let doc: Value = serde_json::from_str(&text).map_err(|e| Failure::invalid(format!("{}: {e}", path.display())))?;
    let mut recorded: RunConfig = field(&doc["manifest"], "config")?;
    if recorded.command == Command::VerifyFile {
        return Err(Failure::invalid("cannot verify a verify-file report".into()));
    }
    let result = &doc["result"];
    let tol = cfg.tolerances.verify;
    let (mode, checked, deviation) = match reingest(&recorded, result)? {
        Some(pairs) => {
            let dev = pairs.iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            ("residuals recomputed from recorded solutions", pairs.len(), dev)
        }
        None => {
            recorded.output = None;
            recorded.csv = None;
            let fresh = commands::run(&recorded)?.result;
            let mut count = 0;
            let dev = compare(result, &fresh, "result", &mut count).map_err(Failure::mismatch)?;
            ("recorded configuration re-run", count, dev)
        }
    };
    if !(deviation <= tol) {
        return Err(Failure::mismatch(format!(
            "{}: {checked} values checked, max deviation {deviation:e} exceeds {tol:e}",
            recorded.command.name()
        )));
    }
    Ok(Outcome {
        result: json!({
            "file": path,
            "command": recorded.command,
            "mode": mode,
            "checked": checked,
            "max_deviation": deviation,
            "tolerance": tol,
            "pass": true,
        }),
        summary: format!(
            "{}: {checked} values checked ({mode}), max deviation {deviation:.2e} (tol {tol:e}): ok",
            recorded.command.name()
        ),
    })
}
