//! Batch front end: one JSON config per invocation, deterministic seeding,
//! bit-stable CSV bodies, and a digest manifest per output directory.
//!
//! Exit codes: 0 on pass, 1 on a certificate or assertion failure, 2 on a
//! configuration error.

use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

use crate::certify::{
    certify_numerical_range, certify_routh_hurwitz, weighted_integral_bound_check, RangeGrid,
    RhGrid,
};
use crate::dns::{
    energy_residual_unit_windows, escape_scan, init_from_pseudomode, run, write_checkpoint,
    write_run_csv, DnsConfig,
};
use crate::kelvin::{default_dt, propagate_field, sobolev_ratio_check, ModeEnsemble};
use crate::pseudomode::{build_pseudomode, residual, select_linear_params, PseudoModeSpec};
use crate::report::OutputDir;
use crate::symbol::{
    growth_rates, instability_window, lambda1_range_scan, streak_eigenpairs, FlowParams,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("range error at \"{key}\": {msg}")]
    Range { key: String, msg: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("run failed: {0}")]
    Run(String),
}

/// Command-specific numeric blocks. All fields optional; defaults are
/// filled per command and echoed into the manifest.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    // solver lattice
    pub n: Option<usize>,
    pub box_half: Option<f64>,
    pub dt: Option<f64>,
    pub dealias: Option<f64>,
    pub remesh_threshold: Option<f64>,
    pub nonlinear: Option<bool>,
    pub t_end: Option<f64>,
    pub sample_every: Option<usize>,
    // certification lattices
    pub points: Option<usize>,
    pub f_points: Option<usize>,
    pub samples: Option<usize>,
    // frequency scan rectangles
    pub xi2_min: Option<f64>,
    pub xi2_max: Option<f64>,
    pub xi2_count: Option<usize>,
    pub xi3_min: Option<f64>,
    pub xi3_max: Option<f64>,
    pub xi3_count: Option<usize>,
    // quadrature nodes per axis for packet builds
    pub quad: Option<usize>,
    // initial H^1 size for single solver runs
    pub init_size: Option<f64>,
}

/// Parameters of the damped-integral property trials.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LemmaSpec {
    pub a: f64,
    pub b: f64,
    pub k_const: f64,
    pub trials: Option<usize>,
}

/// Top-level batch configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: String,
    pub f: Option<f64>,
    pub nu: Option<f64>,
    pub seed: Option<u64>,
    pub out_dir: Option<String>,
    pub grid: Option<GridSpec>,
    pub delta: Option<f64>,
    pub delta_prime: Option<f64>,
    pub xi2_star: Option<f64>,
    pub xi3_star: Option<f64>,
    #[serde(rename = "T")]
    pub t_horizon: Option<f64>,
    pub eps: Option<f64>,
    pub deltas: Option<Vec<f64>>,
    pub eps0: Option<f64>,
    pub lemma: Option<LemmaSpec>,
    /// Test hook: deliberately corrupt the certified bound so the failure
    /// path (exit code 1) can be exercised.
    pub fail_injection: Option<bool>,
}

const COMMANDS: &[&str] = &[
    "spectrum",
    "window",
    "certify",
    "pseudomode",
    "kelvin",
    "dns",
    "escape-scan",
    "lemma-a3",
];

/// Parse and validate a config document against module preconditions.
pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Schema(e.to_string()))?;
    if !COMMANDS.contains(&cfg.command.as_str()) {
        return Err(CliError::Schema(format!(
            "unknown command \"{}\"; expected one of {:?}",
            cfg.command, COMMANDS
        )));
    }
    let need_f = |cfg: &RunConfig| -> Result<f64, CliError> {
        cfg.f.ok_or_else(|| CliError::Schema("missing \"f\"".into()))
    };
    match cfg.command.as_str() {
        "window" => {
            need_f(&cfg)?;
        }
        "spectrum" | "kelvin" | "pseudomode" => {
            let f = need_f(&cfg)?;
            if !(f > 0.0 && f < 1.0) {
                return Err(CliError::Range {
                    key: "f".into(),
                    msg: format!("{f} outside (0, 1) required for the streak eigen-system"),
                });
            }
        }
        "escape-scan" => {
            let f = need_f(&cfg)?;
            let w = instability_window(f);
            if !w.inside {
                return Err(CliError::Range {
                    key: "f".into(),
                    msg: format!(
                        "{f} outside the instability window ({:.6}, {:.6})",
                        w.lo, w.hi
                    ),
                });
            }
            if cfg.deltas.as_deref().is_none_or(|d| d.is_empty()) {
                return Err(CliError::Schema("escape-scan needs a nonempty \"deltas\"".into()));
            }
        }
        "dns" => {
            need_f(&cfg)?; // any finite f: stability-contrast runs are legitimate
        }
        "lemma-a3" => {
            if let Some(l) = &cfg.lemma {
                if !(l.a > l.b && l.b > 0.0 && l.k_const > 0.0) {
                    return Err(CliError::Range {
                        key: "lemma".into(),
                        msg: format!("need a > b > 0, K > 0; got a={}, b={}, K={}", l.a, l.b, l.k_const),
                    });
                }
            }
        }
        "certify" => {}
        _ => unreachable!(),
    }
    if let Some(nu) = cfg.nu {
        if !(nu >= 0.0) {
            return Err(CliError::Range { key: "nu".into(), msg: format!("{nu} must be >= 0") });
        }
    }
    Ok(cfg)
}

fn grid(cfg: &RunConfig) -> GridSpec {
    cfg.grid.clone().unwrap_or_default()
}

fn dns_config(cfg: &RunConfig) -> DnsConfig {
    let g = grid(cfg);
    let mut d = DnsConfig {
        f: cfg.f.unwrap_or(0.5),
        nu: cfg.nu.unwrap_or(0.01),
        seed: cfg.seed.unwrap_or(0),
        ..DnsConfig::default()
    };
    if let Some(n) = g.n {
        d.n = n;
    }
    if let Some(b) = g.box_half {
        d.box_half = [b; 3];
    }
    if let Some(dt) = g.dt {
        d.dt = dt;
    }
    if let Some(a) = g.dealias {
        d.dealias = a;
    }
    if let Some(r) = g.remesh_threshold {
        d.remesh_threshold = r;
    }
    if let Some(nl) = g.nonlinear {
        d.nonlinear = nl;
    }
    d
}

fn packet_spec(cfg: &RunConfig, xi3_default: f64) -> Result<PseudoModeSpec, CliError> {
    PseudoModeSpec::new(
        cfg.xi2_star.unwrap_or(0.0),
        cfg.xi3_star.unwrap_or(xi3_default),
        cfg.delta.unwrap_or(0.2),
        cfg.delta_prime.unwrap_or(0.2),
    )
    .map_err(|e| CliError::Range { key: "delta".into(), msg: e.to_string() })
}

fn resolved_json(cfg: &RunConfig, extra: serde_json::Value) -> serde_json::Value {
    let mut v = serde_json::to_value(cfg).expect("config serializes");
    if let (Some(obj), serde_json::Value::Object(add)) = (v.as_object_mut(), extra) {
        for (k, val) in add {
            obj.insert(format!("resolved_{k}"), val);
        }
    }
    v
}

/// Execute a parsed config; writes outputs and the manifest, returns the
/// process exit code (0 pass, 1 failed assertion/certificate).
pub fn dispatch(cfg: &RunConfig) -> Result<i32, CliError> {
    let out_dir = cfg.out_dir.clone().unwrap_or_else(|| "out".into());
    let mut out = OutputDir::create(Path::new(&out_dir))?;
    let seed = cfg.seed.unwrap_or(0);
    let fail_injection = cfg.fail_injection.unwrap_or(false);
    let mut pass = true;
    let mut resolved = serde_json::json!({});

    match cfg.command.as_str() {
        "window" => {
            let f = cfg.f.expect("validated");
            let w = instability_window(f);
            let rates = FlowParams::new(f, cfg.nu.unwrap_or(0.0))
                .ok()
                .and_then(|p| growth_rates(&p).ok());
            let report = serde_json::json!({
                "f": f,
                "inside": w.inside,
                "lo": w.lo,
                "hi": w.hi,
                "rates": rates.map(|(lo, hi)| serde_json::json!({"lower": lo, "upper": hi})),
            });
            out.write("window.json", serde_json::to_string_pretty(&report).unwrap().as_bytes())?;
        }
        "spectrum" => {
            let g = grid(cfg);
            let f = cfg.f.expect("validated");
            let nu = cfg.nu.unwrap_or(0.01);
            let params = FlowParams::new(f, nu)
                .map_err(|e| CliError::Range { key: "f".into(), msg: e.to_string() })?;
            let lin = |lo: f64, hi: f64, n: usize| -> Vec<f64> {
                if n <= 1 {
                    vec![lo]
                } else {
                    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
                }
            };
            let xi2 = lin(g.xi2_min.unwrap_or(-2.0), g.xi2_max.unwrap_or(2.0), g.xi2_count.unwrap_or(81));
            let xi3 = lin(g.xi3_min.unwrap_or(0.01), g.xi3_max.unwrap_or(2.0), g.xi3_count.unwrap_or(81));
            let scan = lambda1_range_scan(&params, &xi2, &xi3)
                .map_err(|e| CliError::Run(e.to_string()))?;
            let mut csv = String::from("xi2,xi3,lambda1\n");
            for &x3 in &xi3 {
                if x3 == 0.0 {
                    continue;
                }
                for &x2 in &xi2 {
                    let sys = streak_eigenpairs(&params, x2, x3)
                        .map_err(|e| CliError::Run(e.to_string()))?;
                    csv.push_str(&format!(
                        "{:.16e},{:.16e},{:.16e}\n",
                        x2, x3, sys.triples[0].lambda
                    ));
                }
            }
            out.write("lambda1.csv", csv.as_bytes())?;
            out.write(
                "spectrum.json",
                serde_json::to_string_pretty(&scan).unwrap().as_bytes(),
            )?;
            pass = scan.sup <= scan.bound + 1e-12;
            resolved = serde_json::json!({"sup": scan.sup, "bound": scan.bound});
        }
        "certify" => {
            let g = grid(cfg);
            let st = g.points.unwrap_or(201);
            let fp = g.f_points.unwrap_or(99);
            let rh = RhGrid {
                st_points: st,
                f_points: fp,
                random_samples: g.samples.unwrap_or(100_000),
                seed,
            };
            let mut certs =
                certify_routh_hurwitz(&rh).map_err(|e| CliError::Run(e.to_string()))?;
            let range = RangeGrid {
                theta_points: st,
                phi_points: st,
                f_points: fp,
                random_samples: g.samples.unwrap_or(100_000),
                seed,
                nu: cfg.nu.unwrap_or(0.0),
            };
            let nr = certify_numerical_range(&range).map_err(|e| CliError::Run(e.to_string()))?;
            certs.push(nr);
            if fail_injection {
                for c in &mut certs {
                    c.bound += 1.0;
                    c.margin = c.min - c.bound;
                    c.pass = false;
                }
            }
            pass = certs.iter().all(|c| c.pass);
            out.write(
                "certificates.json",
                serde_json::to_string_pretty(&certs).unwrap().as_bytes(),
            )?;
        }
        "pseudomode" => {
            let f = cfg.f.expect("validated");
            let nu = cfg.nu.unwrap_or(0.01);
            let params = FlowParams::unstable(f, nu)
                .map_err(|e| CliError::Range { key: "f".into(), msg: e.to_string() })?;
            let xi3_default = match (cfg.t_horizon, cfg.eps) {
                (Some(t), Some(e)) => {
                    select_linear_params(f, nu, t, e)
                        .map_err(|er| CliError::Range { key: "T".into(), msg: er.to_string() })?
                        .0
                }
                _ => 0.25,
            };
            let spec = packet_spec(cfg, xi3_default)?;
            let quad = grid(cfg).quad.unwrap_or(32);
            let field = build_pseudomode(&params, &spec, quad)
                .map_err(|e| CliError::Run(e.to_string()))?;
            let rep = residual(&params, &field).map_err(|e| CliError::Run(e.to_string()))?;
            let mut csv = Vec::new();
            field.write_csv(&mut csv)?;
            out.write("field.csv", &csv)?;
            let mut rep_json = serde_json::to_value(rep).unwrap();
            if let Some(obj) = rep_json.as_object_mut() {
                obj.insert(
                    "max_node_divergence".into(),
                    serde_json::json!(field.max_node_divergence()),
                );
                obj.insert(
                    "support_radius".into(),
                    serde_json::json!(field.support_radius()),
                );
            }
            out.write(
                "residual.json",
                serde_json::to_string_pretty(&rep_json).unwrap().as_bytes(),
            )?;
            if let Some(eps) = cfg.eps {
                pass = rep.certifies_membership(eps);
            }
            resolved = serde_json::json!({"xi3_star": spec.xi3_star, "quad": quad});
        }
        "kelvin" => {
            let f = cfg.f.expect("validated");
            let nu = cfg.nu.unwrap_or(0.01);
            let t_horizon = cfg.t_horizon.unwrap_or(5.0);
            let eps = cfg.eps.unwrap_or(0.2);
            let params = FlowParams::unstable(f, nu)
                .map_err(|e| CliError::Range { key: "f".into(), msg: e.to_string() })?;
            let (xi3e, gamma) = select_linear_params(f, nu, t_horizon, eps)
                .map_err(|e| CliError::Range { key: "T".into(), msg: e.to_string() })?;
            // widths scale with the envelope tightness at the horizon
            let rel = eps * (-t_horizon * params.lambda_lower().unwrap()).exp();
            let dp = cfg.delta_prime.unwrap_or_else(|| {
                (xi3e * (rel / (t_horizon + 1.0)).sqrt()).min(0.4 * xi3e)
            });
            let delta = cfg.delta.unwrap_or(dp * dp);
            let spec = PseudoModeSpec::new(cfg.xi2_star.unwrap_or(0.0), xi3e, delta, dp)
                .map_err(|e| CliError::Range { key: "delta".into(), msg: e.to_string() })?;
            let quad = grid(cfg).quad.unwrap_or(24);
            let field = build_pseudomode(&params, &spec, quad)
                .map_err(|e| CliError::Run(e.to_string()))?;
            let res = residual(&params, &field).map_err(|e| CliError::Run(e.to_string()))?;
            let ens = ModeEnsemble::from_field(&field);
            let dt = default_dt(&params, &ens, t_horizon);
            let mut prop = propagate_field(&params, &ens, t_horizon, dt, 200)
                .map_err(|e| CliError::Run(e.to_string()))?;
            prop.series
                .set_envelope(&params, eps)
                .map_err(|e| CliError::Run(e.to_string()))?;
            let mut env_ok = true;
            for i in 0..prop.series.times.len() {
                let n = prop.series.norms[i];
                if n < prop.series.env_lo[i] || n > prop.series.env_hi[i] {
                    env_ok = false;
                }
            }
            let sob: Vec<_> = (1..=6)
                .map(|k| sobolev_ratio_check(&ens, k, 1.0))
                .collect::<Result<_, _>>()
                .map_err(|e| CliError::Run(e.to_string()))?;
            let sob_ok = sob.iter().all(|s| s.pass);
            let mut csv = Vec::new();
            prop.series.write_csv(&mut csv)?;
            out.write("growth.csv", &csv)?;
            let report = serde_json::json!({
                "xi3_eps": xi3e,
                "gamma": gamma,
                "delta": spec.delta,
                "delta_prime": spec.delta_prime,
                "residual": res,
                "envelope_ok": env_ok,
                "sobolev": sob,
            });
            out.write("kelvin.json", serde_json::to_string_pretty(&report).unwrap().as_bytes())?;
            pass = env_ok && sob_ok && !fail_injection;
            resolved = serde_json::json!({"xi3_eps": xi3e, "gamma": gamma,
                "delta": spec.delta, "delta_prime": spec.delta_prime, "dt": dt});
        }
        "dns" => {
            let d = dns_config(cfg);
            d.validate().map_err(|e| CliError::Range { key: "grid".into(), msg: e.to_string() })?;
            // stability-contrast runs (f outside (0,1)) reuse the packet
            // built at the reference f = 1/2, so the initial data matches
            // the unstable runs
            let build_f = if d.f > 0.0 && d.f < 1.0 { d.f } else { 0.5 };
            let params = FlowParams::unstable(build_f, d.nu)
                .map_err(|e| CliError::Range { key: "f".into(), msg: e.to_string() })?;
            let spec = packet_spec(cfg, 0.25)?;
            let g = grid(cfg);
            let delta = g.init_size.unwrap_or(0.01);
            let t_end = g.t_end.unwrap_or(5.0);
            let sample_every = g.sample_every.unwrap_or(10);
            let init = init_from_pseudomode(&d, &params, &spec, delta)
                .map_err(|e| CliError::Run(e.to_string()))?;
            let mut ckpt = Vec::new();
            write_checkpoint(&init, &mut ckpt).map_err(|e| CliError::Run(e.to_string()))?;
            out.write("initial_state.ckpt", &ckpt)?;
            let output = run(&d, init, t_end, sample_every)
                .map_err(|e| CliError::Run(e.to_string()))?;
            let mut csv = Vec::new();
            write_run_csv(&output, &mut csv)?;
            out.write("run.csv", &csv)?;
            let windows = energy_residual_unit_windows(&output);
            let report = serde_json::json!({
                "max_divergence": output.max_divergence,
                "max_hermitian_error": output.max_hermitian_error,
                "remesh_events": output.remesh_events,
                "energy_residual_windows": windows,
            });
            out.write("dns.json", serde_json::to_string_pretty(&report).unwrap().as_bytes())?;
            pass = output.max_divergence <= 1e-12;
            resolved = serde_json::json!({"t_end": t_end, "dt": d.dt, "n": d.n});
        }
        "escape-scan" => {
            let d = dns_config(cfg);
            let params = FlowParams::unstable(d.f, d.nu)
                .map_err(|e| CliError::Range { key: "f".into(), msg: e.to_string() })?;
            let spec = packet_spec(cfg, 0.25)?;
            let deltas = cfg.deltas.clone().expect("validated");
            let eps0 = cfg.eps0.unwrap_or(0.05);
            let sample_every = grid(cfg).sample_every.unwrap_or(5);
            let result = escape_scan(&d, &params, &spec, &deltas, eps0, sample_every)
                .map_err(|e| CliError::Run(e.to_string()))?;
            out.write(
                "escape_scan.json",
                serde_json::to_string_pretty(&result).unwrap().as_bytes(),
            )?;
            pass = result.pass;
            resolved = serde_json::json!({"expected_slope": result.expected_slope});
        }
        "lemma-a3" => {
            let l = cfg.lemma.clone().unwrap_or(LemmaSpec {
                a: 1.0,
                b: 0.5,
                k_const: 2.0,
                trials: Some(1000),
            });
            let rep = weighted_integral_bound_check(
                l.a,
                l.b,
                l.k_const,
                l.trials.unwrap_or(1000),
                seed,
            )
            .map_err(|e| CliError::Range { key: "lemma".into(), msg: e.to_string() })?;
            pass = rep.pass && !fail_injection;
            out.write(
                "lemma_a3.json",
                serde_json::to_string_pretty(&rep).unwrap().as_bytes(),
            )?;
        }
        _ => unreachable!("validated"),
    }

    out.finish(&cfg.command, seed, pass, resolved_json(cfg, resolved))?;
    Ok(if pass { 0 } else { 1 })
}

/// End-to-end entry point used by the binary: returns the exit code.
pub fn execute(text: &str) -> i32 {
    let cfg = match parse_config(text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return 2;
        }
    };
    match dispatch(&cfg) {
        Ok(code) => code,
        Err(CliError::Schema(e)) => {
            eprintln!("config error: {e}");
            2
        }
        Err(CliError::Range { key, msg }) => {
            eprintln!("config error at {key}: {msg}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
