use std::path::PathBuf;

use lamelab::quasiinv::Catalog;
use lamelab::C64;
use serde::{Deserialize, Serialize};

use crate::Failure;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Theta,
    Wp,
    QuasiinvCheck,
    LocusSolve,
    B2Variety,
    B2Eigen,
    Qb2Variety,
    Qb2Eigen,
    Qb2Limit,
    HietEigen,
    HietqEigen,
    Spectrum,
    VerifyFile,
}

impl Command {
    pub fn name(self) -> String {
        serde_json::to_value(self).unwrap().as_str().unwrap().to_string()
    }
}

/// Pass/fail thresholds applied to the reported residuals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Relative residual of a variety solution.
    pub variety: f64,
    /// Eigen-residual of a continuous operator.
    pub eigen: f64,
    /// Eigen-residual of a difference operator.
    pub q_eigen: f64,
    /// Allowed drift of a recomputed residual in `verify-file`.
    pub verify: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            variety: 1e-11,
            eigen: 1e-8,
            q_eigen: 1e-10,
            verify: 1e-12,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    #[serde(default = "default_tau")]
    pub tau: C64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<C64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omegas: Option<Vec<C64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<C64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<C64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<Vec<C64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<C64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_sq: Option<Vec<C64>>,
    /// Free parameter of the Hietarinta family.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<C64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<(i64, i64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entry: Option<Catalog>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poles: Option<Vec<C64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mults: Option<Vec<u32>>,
    /// Theta characteristic (α, β); the odd one by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub characteristic: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mult: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<usize>,
    /// Input of `verify-file`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    /// Record the wall time in the manifest. Off by default so that output is reproducible.
    #[serde(default)]
    pub timing: bool,
}

fn default_tau() -> C64 {
    C64::new(0.0, 1.0)
}

impl RunConfig {
    pub fn new(command: Command) -> Self {
        Self {
            command,
            tau: default_tau(),
            omega: None,
            omegas: None,
            z: None,
            a: None,
            k: None,
            b: None,
            a_sq: None,
            t: None,
            label: None,
            entry: None,
            poles: None,
            mults: None,
            characteristic: None,
            mult: None,
            order: None,
            file: None,
            tolerances: Tolerances::default(),
            seed: 0,
            output: None,
            csv: None,
            timing: false,
        }
    }

    pub fn validate(&self) -> Result<(), Failure> {
        let t = self.tolerances;
        for (name, v) in [("variety", t.variety), ("eigen", t.eigen), ("q_eigen", t.q_eigen), ("verify", t.verify)] {
            if !(v >= 1e-15) || !v.is_finite() {
                return Err(Failure::invalid(format!("tolerance {name} = {v} must be at least 1e-15")));
            }
        }
        use Command::*;
        let need = |ok: bool, what: &str| if ok { Ok(()) } else { Err(Failure::invalid(format!("{what} required"))) };
        match self.command {
            Theta | Wp => need(self.z.is_some(), "z"),
            LocusSolve => {
                need(self.poles.is_some(), "poles")?;
                need(self.mults.is_some(), "mults")
            }
            QuasiinvCheck => need(self.entry.is_some(), "entry (or name)"),
            B2Eigen => {
                need(self.a.is_some(), "a")?;
                need(self.k.is_some(), "k")
            }
            Qb2Variety | HietqEigen => need(self.omega.is_some(), "omega"),
            Qb2Eigen => {
                need(self.omega.is_some(), "omega")?;
                need(self.a.is_some(), "a")?;
                need(self.k.is_some(), "k")
            }
            Spectrum => need(self.label.is_some(), "label (m, n)"),
            VerifyFile => need(self.file.is_some(), "file"),
            B2Variety | Qb2Limit | HietEigen => Ok(()),
        }
    }
}

/// Parses `x`, `yi`, `x+yi`, `x-yi` or `x,y`.
pub fn parse_complex(s: &str) -> Result<C64, String> {
    let s: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    let bad = || format!("cannot parse complex number {s:?}");
    let num = |t: &str| t.parse::<f64>().map_err(|_| bad());
    if let Some((re, im)) = s.split_once(',') {
        return Ok(C64::new(num(re)?, num(im)?));
    }
    let Some(body) = s.strip_suffix('i') else {
        return Ok(C64::new(num(&s)?, 0.0));
    };
    // Split at the last sign that is not a leading sign or part of an exponent.
    let bytes = body.as_bytes();
    let split = (1..bytes.len())
        .rev()
        .find(|&i| (bytes[i] == b'+' || bytes[i] == b'-') && !matches!(bytes[i - 1], b'e' | b'E'));
    let imag = |t: &str| match t {
        "" | "+" => Ok(1.0),
        "-" => Ok(-1.0),
        _ => num(t),
    };
    match split {
        Some(i) => Ok(C64::new(num(&body[..i])?, imag(&body[i..])?)),
        None => Ok(C64::new(0.0, imag(body)?)),
    }
}
