//! Run configuration: key=value files, per-subcommand parameter tables and
//! hashing.

use std::collections::BTreeMap;

use quasilab_arithmetics::{golden_mean, FrequencyVector};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Subcommand {
    Spectrum,
    Lyapunov,
    Rotation,
    Acceleration,
    Edl,
    Localize,
    Kam,
    Duality,
    Criterion,
}

pub struct ParamSpec {
    pub key: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

const fn p(key: &'static str, default: &'static str, help: &'static str) -> ParamSpec {
    ParamSpec { key, default, help }
}

const KAM_PARAMS: &[ParamSpec] = &[
    p("model", "schrodinger", "schrodinger (potential 2λ⁻¹cos) or synthetic"),
    p("lambda", "e^4", "coupling λ of the dual operator"),
    p("alpha", "silver", "frequency"),
    p("energy", "", "cocycle energy; empty tunes to rho"),
    p("rho", "golden/2", "rotation-number target for tuning"),
    p("bracket", "-2.5,2.5", "energy bracket for tuning"),
    p("tune_iterates", "50000", "iterates per rotation-number evaluation"),
    p("h", "0.05", "initial analyticity radius"),
    p("h_tilde", "0.025", "final radius"),
    p("force", "true", "continue past failed smallness gates"),
    p("band", "40", "Fourier band of the perturbation"),
    p("target_eps", "1e-24", "stop once ‖f‖_h falls below this"),
    p("step_cap", "40", "maximum number of KAM steps"),
    p("kappa", "0.05", "DC_α constant for the rotation number"),
    p("tau_dc", "1.5", "DC_α exponent for the rotation number"),
    p("xi0", "0.17", "synthetic: rotation of the reduced constant"),
    p("nu", "1e-6", "synthetic: size of the hyperbolic part"),
    p("degree", "1", "synthetic: degree of the conjugacy"),
];

const DUALITY_EXTRA: &[ParamSpec] = &[
    p("gamma", "", "certificate rate; empty means 0.85·ln λ"),
    p("ell_search", "3", "ℓ¹ radius of the shift search"),
    p("residual_tol", "1e-6", "eigen-equation residual tolerance"),
];

pub fn params(sub: Subcommand) -> Vec<&'static ParamSpec> {
    static SPECTRUM: &[ParamSpec] = &[
        p("family", "amo", "amo or md (nearest-neighbour Laplacian plus cosine on Z^d)"),
        p("lambda", "2", "coupling"),
        p("alpha", "golden", "frequency; comma list for d > 1"),
        p("theta", "0", "phase"),
        p("N", "60", "box radius"),
        p("exclude_margin", "8", "sites near the wall left out of fits"),
        p("cert_gamma", "", "certificate rate; empty uses each fitted rate"),
        p("ell_search", "2", "ℓ¹ radius of the shift search"),
        p("sule_epsilon", "0.1", "ε of the uniform-localization fit"),
    ];
    static LYAPUNOV: &[ParamSpec] = &[
        p("lambda", "3", "AMO coupling"),
        p("alpha", "golden", "frequency"),
        p("energies", "", "comma list; empty takes spectrum-interior energies"),
        p("count", "10", "number of interior energies"),
        p("N", "60", "box radius used to locate interior energies"),
        p("iterates", "100000", "iterates per phase"),
        p("phases", "4", "phase samples"),
    ];
    static ROTATION: &[ParamSpec] = &[
        p("lambda", "2", "AMO coupling"),
        p("alpha", "golden", "frequency"),
        p("e_min", "-4", "lowest energy"),
        p("e_max", "4", "highest energy"),
        p("count", "41", "number of energies"),
        p("iterates", "20000", "iterates"),
        p("weighted", "true", "weighted Birkhoff average"),
    ];
    static ACCELERATION: &[ParamSpec] = &[
        p("lambda", "2", "AMO coupling"),
        p("alpha", "golden", "frequency"),
        p("energy", "0", "energy"),
        p("eps", "0,0.02,0.04,0.06,0.08,0.1", "imaginary phase shifts"),
        p("iterates", "20000", "iterates per phase"),
        p("phases", "4", "phase samples"),
    ];
    static EDL: &[ParamSpec] = &[
        p("family", "amo", "amo or md"),
        p("lambda", "2", "coupling"),
        p("alpha", "golden", "frequency; comma list for md"),
        p("N", "80", "box radius"),
        p("grid", "200", "phases"),
        p("window", "", "lo,hi fit window in |n|; empty uses the default"),
        p("bootstrap", "200", "bootstrap resamples for the interval"),
    ];
    static LOCALIZE: &[ParamSpec] = &[
        p("lambda", "3", "AMO coupling"),
        p("alpha", "golden", "frequency"),
        p("theta", "0", "phase"),
        p("N", "60", "box radius"),
        p("index", "", "eigenvector index; empty takes the middle"),
        p("gamma", "", "certificate rate; empty uses the fitted rate"),
        p("exclude_margin", "8", "sites near the wall left out of the fit"),
        p("ell_search", "2", "ℓ¹ radius of the shift search"),
    ];
    static CRITERION: &[ParamSpec] = &[
        p("count", "100", "random instances"),
        p("max_dim", "2", "largest dimension"),
        p("coord", "6", "bound on |p_i|, |q_i|, |ℓ_i|"),
        p("gamma_min", "0.3", "smallest rate"),
        p("gamma_max", "3", "largest rate"),
    ];
    match sub {
        Subcommand::Spectrum => SPECTRUM.iter().collect(),
        Subcommand::Lyapunov => LYAPUNOV.iter().collect(),
        Subcommand::Rotation => ROTATION.iter().collect(),
        Subcommand::Acceleration => ACCELERATION.iter().collect(),
        Subcommand::Edl => EDL.iter().collect(),
        Subcommand::Localize => LOCALIZE.iter().collect(),
        Subcommand::Kam => KAM_PARAMS.iter().collect(),
        Subcommand::Duality => KAM_PARAMS.iter().chain(DUALITY_EXTRA).collect(),
        Subcommand::Criterion => CRITERION.iter().collect(),
    }
}

/// `key = value` lines; `#` starts a comment.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| CliError::Usage(format!("line {}: expected key=value", i + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

/// A real number: decimal, `golden`, `silver`, `pi`, `e^x`, or `a/b` of those.
pub fn parse_real(s: &str) -> Result<f64, String> {
    let s = s.trim();
    if let Some((a, b)) = s.split_once('/') {
        return Ok(parse_real(a)? / parse_real(b)?);
    }
    let v = match s {
        "golden" => golden_mean(),
        "silver" => 2f64.sqrt() - 1.0,
        "pi" => std::f64::consts::PI,
        _ => match s.strip_prefix("e^") {
            Some(x) => parse_real(x)?.exp(),
            None => s.parse::<f64>().map_err(|_| format!("not a number: '{s}'"))?,
        },
    };
    Ok(v)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub subcommand: Subcommand,
    pub seed: u64,
    pub threads: Option<usize>,
    /// Every parameter of the subcommand, defaults filled in.
    pub params: BTreeMap<String, String>,
}

impl RunConfig {
    /// Defaults, then the config file, then command-line overrides.
    pub fn resolve(
        subcommand: Subcommand,
        seed: u64,
        threads: Option<usize>,
        file: &BTreeMap<String, String>,
        overrides: &[String],
    ) -> Result<Self, CliError> {
        let specs = params(subcommand);
        let mut map: BTreeMap<String, String> = specs.iter().map(|s| (s.key.to_string(), s.default.to_string())).collect();
        let mut set = |k: &str, v: &str| -> Result<(), CliError> {
            if !map.contains_key(k) {
                let known: Vec<&str> = specs.iter().map(|s| s.key).collect();
                return Err(CliError::Usage(format!("unknown parameter '{k}'; known: {}", known.join(", "))));
            }
            map.insert(k.to_string(), v.to_string());
            Ok(())
        };
        for (k, v) in file {
            set(k, v)?;
        }
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| CliError::Usage(format!("override '{o}' is not key=value")))?;
            set(k.trim(), v.trim())?;
        }
        Ok(RunConfig { subcommand, seed, threads, params: map })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("serializable")
    }

    /// SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        sha256_hex(self.to_json().as_bytes())
    }

    pub fn raw(&self, k: &str) -> &str {
        self.params.get(k).map(String::as_str).unwrap_or("")
    }

    fn bad(&self, k: &str, why: impl std::fmt::Display) -> CliError {
        CliError::Usage(format!("parameter {k} = '{}': {why}", self.raw(k)))
    }

    pub fn real(&self, k: &str) -> Result<f64, CliError> {
        parse_real(self.raw(k)).map_err(|e| self.bad(k, e))
    }

    pub fn opt_real(&self, k: &str) -> Result<Option<f64>, CliError> {
        if self.raw(k).is_empty() {
            return Ok(None);
        }
        self.real(k).map(Some)
    }

    pub fn int(&self, k: &str) -> Result<i64, CliError> {
        self.raw(k).parse().map_err(|e| self.bad(k, e))
    }

    pub fn count(&self, k: &str) -> Result<usize, CliError> {
        self.raw(k).parse().map_err(|e| self.bad(k, e))
    }

    pub fn opt_count(&self, k: &str) -> Result<Option<usize>, CliError> {
        if self.raw(k).is_empty() {
            return Ok(None);
        }
        self.count(k).map(Some)
    }

    pub fn flag(&self, k: &str) -> Result<bool, CliError> {
        self.raw(k).parse().map_err(|e| self.bad(k, e))
    }

    pub fn list(&self, k: &str) -> Result<Vec<f64>, CliError> {
        if self.raw(k).is_empty() {
            return Ok(Vec::new());
        }
        self.raw(k).split(',').map(|s| parse_real(s).map_err(|e| self.bad(k, e))).collect()
    }

    pub fn frequency(&self, k: &str) -> Result<FrequencyVector, CliError> {
        let v = self.list(k)?;
        if v.is_empty() || v.len() > 4 {
            return Err(self.bad(k, "need 1 to 4 components"));
        }
        Ok(FrequencyVector::new(v))
    }

    pub fn choice<'a>(&self, k: &str, options: &[&'a str]) -> Result<&'a str, CliError> {
        options.iter().find(|o| **o == self.raw(k)).copied().ok_or_else(|| self.bad(k, format!("expected one of {}", options.join(", "))))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
