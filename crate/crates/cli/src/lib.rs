//! Orchestration behind the `quasilab` binary. Each subcommand turns a
//! resolved [`RunConfig`] into a list of artifacts; every artifact embeds the
//! config, its hash and a hash of its own payload.

pub mod config;

use quasilab_arithmetics::{ArithError, FrequencyVector};
use quasilab_cocycle::mat2::{expm_traceless, su11_generator};
use quasilab_cocycle::{acceleration_probe, lyapunov, rotation_number, rotation_number_weighted, Cocycle, CocycleError, CocycleMap, Mat2, MatPoly, ScalarPoly, C64};
use quasilab_duality::{build_dual_eigenfunction, DualContext, DualOptions, DualityError};
use quasilab_edl::{criterion_sums, edl_profile, EdlError, EdlFamily, EdlOptions};
use quasilab_eigensolver::{eigen_all, eigen_all_graded, EigenDecomposition, EigenError};
use quasilab_kam::{half_rotation_poly, reduce_to_constant, rotation_tune, DecompositionSummary, KamError, KamOptions, ReductionRun, TuneResult};
use quasilab_localization::{certify_good, check_certificate, decay_fit, localization_report, profile_csv, LocalizationError, UNDERFLOW_FLOOR};
use quasilab_operators::{build_amo, build_md_longrange, OperatorError, TruncatedOperator, DEFAULT_SITE_CAP};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

pub use config::{parse_key_values, parse_real, RunConfig, Subcommand};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("gate failure: {0}")]
    Gate(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 2 usage, 3 numeric, 4 gate, 1 i/o.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Gate(_) => 4,
            CliError::Io(_) => 1,
        }
    }
}

macro_rules! numeric_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Numeric(e.to_string())
            }
        }
    )*};
}
numeric_from!(ArithError, CocycleError, OperatorError, EigenError, LocalizationError, EdlError, DualityError);

impl From<KamError> for CliError {
    fn from(e: KamError) -> Self {
        match e {
            KamError::SmallnessGateFailed { .. } | KamError::GateFailed(_) => CliError::Gate(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

fn json_artifact(name: &str, cfg: &RunConfig, result: &impl Serialize) -> Artifact {
    let body = serde_json::to_value(result).expect("serializable");
    let payload = serde_json::to_string(&body).expect("serializable");
    let doc = json!({
        "config": cfg,
        "config_sha256": cfg.hash(),
        "content_sha256": config::sha256_hex(payload.as_bytes()),
        "result": body,
    });
    Artifact { name: name.into(), contents: serde_json::to_string_pretty(&doc).expect("serializable") + "\n" }
}

/// CSV body behind three `#` header lines: config JSON, config hash, body hash.
fn csv_artifact(name: &str, cfg: &RunConfig, body: String) -> Artifact {
    let contents = format!(
        "# config: {}\n# config_sha256: {}\n# content_sha256: {}\n{body}",
        cfg.to_json(),
        cfg.hash(),
        config::sha256_hex(body.as_bytes())
    );
    Artifact { name: name.into(), contents }
}

pub fn run(cfg: &RunConfig) -> Result<Vec<Artifact>, CliError> {
    match cfg.subcommand {
        Subcommand::Spectrum => cmd_spectrum(cfg),
        Subcommand::Lyapunov => cmd_lyapunov(cfg),
        Subcommand::Rotation => cmd_rotation(cfg),
        Subcommand::Acceleration => cmd_acceleration(cfg),
        Subcommand::Edl => cmd_edl(cfg),
        Subcommand::Localize => cmd_localize(cfg),
        Subcommand::Kam => cmd_kam(cfg),
        Subcommand::Duality => cmd_duality(cfg),
        Subcommand::Criterion => cmd_criterion(cfg),
    }
}

fn scalar_alpha(cfg: &RunConfig) -> Result<f64, CliError> {
    let a = cfg.frequency("alpha")?;
    if a.dim() != 1 {
        return Err(CliError::Usage("alpha must be a single frequency here".into()));
    }
    Ok(a.components[0])
}

fn decompose(h: &TruncatedOperator) -> Result<EigenDecomposition, CliError> {
    Ok(if h.tridiagonal.is_some() { eigen_all_graded(h)? } else { eigen_all(h)? })
}

fn cmd_spectrum(cfg: &RunConfig) -> Result<Vec<Artifact>, CliError> {
    let lambda = cfg.real("lambda")?;
    let theta = cfg.real("theta")?;
    let n = cfg.count("N")?;
    let h = match cfg.choice("family", &["amo", "md"])? {
        "amo" => build_amo(lambda, scalar_alpha(cfg)?, theta, n)?,
        _ => build_md_longrange(lambda, &cfg.frequency("alpha")?, theta, n, DEFAULT_SITE_CAP)?,
    };
    let ed = decompose(&h)?;
    let report = localization_report(&ed, &h.boxed, cfg.count("exclude_margin")?, cfg.opt_real("cert_gamma")?, cfg.count("ell_search")?, cfg.real("sule_epsilon")?);
    let summary = json!({
        "size": ed.len(),
        "operator_norm": ed.norm,
        "residual_bound": ed.residual_bound,
        "orthonormality_defect": ed.orthonormality_defect(),
        "meta": {
            "hop_range": h.meta.hop_range,
            "dropped_hopping_mass": h.meta.dropped_hopping_mass,
        },
        "localization": report,
    });
    Ok(vec![csv_artifact("spectrum_values.csv", cfg, ed.values_csv()), json_artifact("spectrum_report.json", cfg, &summary)])
}

/// `count` energies evenly spread over the middle 80% of the box spectrum.
fn interior_energies(lambda: f64, alpha: f64, radius: usize, count: usize) -> Result<Vec<f64>, CliError> {
    let ed = eigen_all(&build_amo(lambda, alpha, 0.0, radius)?)?;
    let n = ed.len();
    let (lo, hi) = (n / 10, n - 1 - n / 10);
    Ok((0..count)
        .map(|k| {
            let i = if count == 1 { (lo + hi) / 2 } else { lo + k * (hi - lo) / (count - 1) };
            ed.values[i]
        })
        .collect())
}

fn cmd_lyapunov(cfg: &RunConfig) -> Result<Vec<Artifact>, CliError> {
    let lambda = cfg.real("lambda")?;
    let alpha = scalar_alpha(cfg)?;
    let mut energies = cfg.list("energies")?;
    if energies.is_empty() {
        energies = interior_energies(lambda, alpha, cfg.count("N")?, cfg.count("count")?)?;
    }
    let (iterates, phases) = (cfg.count("iterates")?, cfg.count("phases")?);
    let mut csv = String::from("energy,lyapunov,std_error,ln_lambda\n");
    let mut rows = Vec::new();
    for &e in &energies {
        let l = lyapunov(&Cocycle::almost_mathieu(alpha, lambda, e), iterates, phases, cfg.seed)?;
        csv.push_str(&format!("{e:e},{:e},{:e},{:e}\n", l.value, l.std_error, lambda.abs().ln().max(0.0)));
        rows.push(json!({"energy": e, "lyapunov": l.value, "std_error": l.std_error}));
    }
    Ok(vec![csv_artifact("lyapunov.csv", cfg, csv), json_artifact("lyapunov.json", cfg, &rows)])
}

fn cmd_rotation(cfg: &RunConfig) -> Result<Vec<Artifact>, CliError> {
    let lambda = cfg.real("lambda")?;
    let alpha = scalar_alpha(cfg)?;
    let (lo, hi, count) = (cfg.real("e_min")?, cfg.real("e_max")?, cfg.count("count")?);
    let iterates = cfg.count("iterates")?;
    let weighted = cfg.flag("weighted")?;
    if count == 0 {
        return Err(CliError::Usage("count must be positive".into()));
    }
    let mut csv = String::from("energy,rho\n");
    for k in 0..count {
        let e = if count == 1 { lo } else { lo + (hi - lo) * k as f64 / (count - 1) as f64 };
        let c = Cocycle::almost_mathieu(alpha, lambda, e);
        let r = if weighted { rotation_number_weighted(&c, iterates)? } else { rotation_number(&c, iterates)? };
        csv.push_str(&format!("{e:e},{r:.12}\n"));
    }
    Ok(vec![csv_artifact("rotation.csv", cfg, csv)])
}

fn cmd_acceleration(cfg: &RunConfig) -> Result<Vec<Artifact>, CliError> {
    let c = Cocycle::almost_mathieu(scalar_alpha(cfg)?, cfg.real("lambda")?, cfg.real("energy")?);
    let eps = cfg.list("eps")?;
    if eps.len() < 2 {
        return Err(CliError::Usage("eps needs at least two values".into()));
    }
    let values = acceleration_probe(&c, &eps, cfg.count("iterates")?, cfg.count("phases")?, cfg.seed)?;
    let mut csv = String::from("eps,lyapunov\n");
    for (e, l) in &values {
        csv.push_str(&format!("{e:e},{l:e}\n"));
    }
    let (first, last) = (values[0], values[values.len() - 1]);
    let omega = (last.1 - first.1) / (2.0 * std::f64::consts::PI * (last.0 - first.0));
    let summary = json!({"values": values, "acceleration": omega});
    Ok(vec![csv_artifact("acceleration.csv", cfg, csv), json_artifact("acceleration.json", cfg, &summary)])
}

fn cmd_edl(cfg: &RunConfig) -> Result<Vec<Artifact>, CliError> {
    let lambda = cfg.real("lambda")?;
    let family = match cfg.choice("family", &["amo", "md"])? {
        "amo" => EdlFamily::Amo { lambda, alpha: scalar_alpha(cfg)? },
        _ => EdlFamily::MultiDim { lambda, alpha: cfg.frequency("alpha")? },
    };
    let mut opts = EdlOptions::new(cfg.count("grid")?, cfg.count("N")?, cfg.seed);
    opts.bootstrap = cfg.count("bootstrap")?;
    let w = cfg.list("window")?;
    if !w.is_empty() {
        if w.len() != 2 || w[0] < 0.0 || w[1] < w[0] {
            return Err(CliError::Usage("window must be lo,hi with 0 ≤ lo ≤ hi".into()));
        }
        opts.window = (w[0] as usize, w[1] as usize);
    }
    let p = edl_profile(&family, &opts)?;
    let fit = json!({
        "gamma_hat": p.gamma_hat,
        "gamma_ci": p.gamma_ci,
        "intercept": p.intercept,
        "window": p.window,
        "envelope_gamma": p.envelope_gamma,
        "samples": p.samples,
        "ln_lambda": lambda.abs().ln(),
        "phases": p.phases.len(),
    });
    Ok(vec![csv_artifact("edl_profile.csv", cfg, p.to_csv()), json_artifact("edl_fit.json", cfg, &fit)])
}

fn cmd_localize(cfg: &RunConfig) -> Result<Vec<Artifact>, CliError> {
    let h = build_amo(cfg.real("lambda")?, scalar_alpha(cfg)?, cfg.real("theta")?, cfg.count("N")?)?;
    let ed = decompose(&h)?;
    let i = cfg.opt_count("index")?.unwrap_or(ed.len() / 2);
    if i >= ed.len() {
        return Err(CliError::Usage(format!("index {i} outside 0..{}", ed.len())));
    }
    let u = &ed.vectors[i];
    let fit = decay_fit(u, &h.boxed, cfg.count("exclude_margin")?)?;
    let gamma = cfg.opt_real("gamma")?.unwrap_or(fit.gamma);
    let cert = certify_good(u, &h.boxed, gamma, cfg.count("ell_search")?)?;
    let verified = check_certificate(u, &h.boxed, &cert, UNDERFLOW_FLOOR);
    let result = json!({"index": i, "energy": ed.values[i], "fit": fit, "certificate": cert, "verified": verified});
    Ok(vec![csv_artifact("eigen_profile.csv", cfg, profile_csv(u, &h.boxed)), json_artifact("localization.json", cfg, &result)])
}

#[derive(Debug, Serialize)]
struct SyntheticCheck {
    expected_xi: f64,
    recovered_xi: Option<f64>,
    error: Option<f64>,
}

struct KamOutcome {
    run: ReductionRun,
    cocycle: Cocycle,
    tune: Option<TuneResult>,
    synthetic: Option<SyntheticCheck>,
    lambda: f64,
    energy: f64,
}

fn kam_options(cfg: &RunConfig) -> Result<KamOptions, CliError> {
    Ok(KamOptions {
        force: cfg.flag("force")?,
        band: cfg.count("band")?,
        target_eps: cfg.real("target_eps")?,
        step_cap: cfg.count("step_cap")?,
        rot_dc: Some((cfg.real("kappa")?, cfg.real("tau_dc")?)),
        ..Default::default()
    })
}

/// B₀(θ+α) R_{ξ₀} e^{g} B₀(θ)⁻¹ with B₀ = R_{kθ/2}; it reduces to ξ₀ + kα/2.
fn synthetic_cocycle(alpha: f64, xi0: f64, nu: f64, k: i64) -> Result<(Cocycle, f64), CliError> {
    let g = expm_traceless(&su11_generator(0.0, C64::new(nu, nu)));
    let b0 = half_rotation_poly(&[k]);
    let b0inv = half_rotation_poly(&[-k]);
    let inner = b0.mul(&MatPoly::constant(1, 0, g).to_half()).mul(&b0inv);
    let expected = xi0 + k as f64 * alpha / 2.0;
    let map = inner
        .lmul_const(&Mat2::rotation(expected).complex())
        .to_integer(1e-14)
        .map_err(|e| CliError::Numeric(format!("synthetic map left half modes ({e:e})")))?;
    Ok((Cocycle::new(FrequencyVector::scalar(alpha), CocycleMap::Poly(map.real_part())), expected))
}

fn kam_pipeline(cfg: &RunConfig) -> Result<KamOutcome, CliError> {
    let alpha = scalar_alpha(cfg)?;
    let mut opts = kam_options(cfg)?;
    let (h, h_tilde) = (cfg.real("h")?, cfg.real("h_tilde")?);
    let lambda = cfg.real("lambda")?;
    if cfg.choice("model", &["schrodinger", "synthetic"])? == "synthetic" {
        let (c, expected) = synthetic_cocycle(alpha, cfg.real("xi0")?, cfg.real("nu")?, cfg.int("degree")?)?;
        opts.rot_dc = None;
        let run = reduce_to_constant(&c, h, h_tilde, &opts)?;
        let got = run.a_final.xi;
        let error = got.map(|x| {
            let d = (x - expected).rem_euclid(1.0);
            d.min(1.0 - d)
        });
        let synthetic = Some(SyntheticCheck { expected_xi: expected, recovered_xi: got, error });
        return Ok(KamOutcome { run, cocycle: c, tune: None, synthetic, lambda, energy: f64::NAN });
    }
    if !(lambda > 0.0) {
        return Err(CliError::Usage("lambda must be positive".into()));
    }
    let freq = FrequencyVector::scalar(alpha);
    let v = ScalarPoly::cosine(1, &[1], 1.0 / lambda);
    let build = |e: f64| Cocycle::schrodinger(freq.clone(), e, v.clone());
    let (energy, tune) = match cfg.opt_real("energy")? {
        Some(e) => (e, None),
        None => {
            let b = cfg.list("bracket")?;
            if b.len() != 2 {
                return Err(CliError::Usage("bracket must be lo,hi".into()));
            }
            let t = rotation_tune(&build, cfg.real("rho")?, (b[0], b[1]), cfg.count("tune_iterates")?)?;
            opts.rho = Some(t.rho);
            (t.energy, Some(t))
        }
    };
    let c = build(energy);
    let run = reduce_to_constant(&c, h, h_tilde, &opts)?;
    Ok(KamOutcome { run, cocycle: c, tune, synthetic: None, lambda, energy })
}

fn kam_artifact(cfg: &RunConfig, out: &KamOutcome) -> Artifact {
    let result = json!({
        "energy": out.energy,
        "tune": out.tune,
        "synthetic": out.synthetic,
        "trace": out.run.trace,
        "decomposition": DecompositionSummary::from(&out.run.decomposition),
    });
    json_artifact("kam_trace.json", cfg, &result)
}

fn cmd_kam(cfg: &RunConfig) -> Result<Vec<Artifact>, CliError> {
    let out = kam_pipeline(cfg)?;
    Ok(vec![kam_artifact(cfg, &out)])
}

fn cmd_duality(cfg: &RunConfig) -> Result<Vec<Artifact>, CliError> {
    if cfg.raw("model") != "schrodinger" {
        return Err(CliError::Usage("duality needs model=schrodinger".into()));
    }
    let out = kam_pipeline(cfg)?;
    let ctx = DualContext {
        potential: ScalarPoly::cosine(1, &[1], 1.0),
        lambda: out.lambda,
        alpha: out.cocycle.frequency.clone(),
        energy: out.energy,
        rho: out.run.trace.rho,
    };
    let dopts = DualOptions { residual_tol: cfg.real("residual_tol")?, ..Default::default() };
    let z = build_dual_eigenfunction(&out.run.decomposition, &out.run.a_final, &ctx, &dopts)?;
    let gamma = cfg.opt_real("gamma")?.unwrap_or(0.85 * out.lambda.ln());
    let cert = z.certify(gamma, cfg.count("ell_search")?)?;
    let within = cert.c <= z.constants.c;
    let certificate = json!({"certificate": cert, "bound_c": z.constants.c, "c_within_bound": within});
    Ok(vec![
        kam_artifact(cfg, &out),
        json_artifact("dual_eigenfunction.json", cfg, &z),
        csv_artifact("dual_profile.csv", cfg, z.profile_csv()),
        json_artifact("certificate.json", cfg, &certificate),
    ])
}

fn cmd_criterion(cfg: &RunConfig) -> Result<Vec<Artifact>, CliError> {
    let count = cfg.count("count")?;
    let max_dim = cfg.count("max_dim")?.clamp(1, 4);
    let coord = cfg.int("coord")?.abs();
    let (g0, g1) = (cfg.real("gamma_min")?, cfg.real("gamma_max")?);
    if !(g0 > 0.0 && g1 >= g0) {
        return Err(CliError::Usage("need 0 < gamma_min ≤ gamma_max".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut csv = String::from("d,p,q,ell,gamma,lhs1,rhs1,lhs2,rhs2,lhs3,rhs3,holds\n");
    let mut violations = 0;
    for _ in 0..count {
        let d = rng.gen_range(1..=max_dim);
        let mut pick = || (0..d).map(|_| rng.gen_range(-coord..=coord)).collect::<Vec<i64>>();
        let (p, q, ell) = (pick(), pick(), pick());
        let gamma = if g1 > g0 { rng.gen_range(g0..g1) } else { g0 };
        let s = criterion_sums(&p, &q, &ell, gamma)?;
        if !s.holds() {
            violations += 1;
        }
        let fmt = |v: &[i64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        csv.push_str(&format!(
            "{d},{},{},{},{gamma:.6},{:e},{:e},{:e},{:e},{:e},{:e},{}\n",
            fmt(&p),
            fmt(&q),
            fmt(&ell),
            s.lhs[0],
            s.rhs[0],
            s.lhs[1],
            s.rhs[1],
            s.lhs[2],
            s.rhs[2],
            s.holds()
        ));
    }
    let summary = json!({"instances": count, "violations": violations});
    Ok(vec![csv_artifact("criterion.csv", cfg, csv), json_artifact("criterion.json", cfg, &summary)])
}
