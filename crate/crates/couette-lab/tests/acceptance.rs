//! Acceptance suite: one test per criterion, each printing its measured
//! numbers (visible with `--nocapture`) and asserting the stated
//! tolerances and runtime budgets.

mod common;

use couette_lab::certify::*;
use couette_lab::dns;
use couette_lab::kelvin::*;
use couette_lab::pseudomode::*;
use couette_lab::symbol::*;
use nalgebra::Vector3;
use num_complex::Complex64;
use rand::Rng;
use std::time::Instant;

fn report(name: &str, pass: bool, detail: &str, elapsed: f64, budget: f64) {
    println!(
        "[{}] {name}: {detail} ({elapsed:.1} s, budget {budget:.0} s)",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "{name}: {detail}");
    assert!(elapsed < budget, "{name} exceeded its runtime budget: {elapsed:.1} s");
}

/// Criterion 1: printed streak eigen-pairs satisfy the eigen-equation to
/// 1e-10 relative and match a dense eigen-solve to 1e-9, over 1e4 random
/// parameter draws.
#[test]
fn c01_streak_eigensystem() {
    let start = Instant::now();
    let mut rng = common::rng(0xC0FFEE);
    let mut worst_residual = 0.0f64;
    let mut worst_eig = 0.0f64;
    for _ in 0..10_000 {
        let f = rng.gen_range(0.001..0.999);
        let nu = rng.gen_range(0.0..0.2);
        let xi2 = rng.gen_range(-3.0..3.0);
        let xi3 = loop {
            let x: f64 = rng.gen_range(-3.0..3.0);
            if x.abs() > 1e-3 {
                break x;
            }
        };
        let p = FlowParams::new(f, nu).unwrap();
        let m = symbol_streak(&p, xi2, xi3).unwrap();
        let sys = streak_eigenpairs(&p, xi2, xi3).unwrap();
        for t in &sys.triples {
            let r = (m * t.vector - t.lambda * t.vector).norm() / t.vector.norm();
            worst_residual = worst_residual.max(r);
        }
        let mut oracle: Vec<f64> = m.complex_eigenvalues().iter().map(|z| z.re).collect();
        oracle.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let mut mine =
            [sys.triples[0].lambda, sys.triples[1].lambda, sys.triples[2].lambda];
        mine.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for (a, b) in mine.iter().zip(&oracle) {
            worst_eig = worst_eig.max((a - b).abs() / (1.0 + b.abs()));
        }
    }
    let pass = worst_residual <= 1e-10 && worst_eig <= 1e-9;
    report(
        "criterion 1 (streak eigen-system)",
        pass,
        &format!("worst residual {worst_residual:.2e}, worst eigenvalue gap {worst_eig:.2e}"),
        start.elapsed().as_secs_f64(),
        5.0,
    );
}

/// Criterion 2: numerical-range certificate over the default 201^2 x 99
/// lattice plus 1e6 random samples, margin >= -1e-12, equality attained at
/// the direction (1,1,0)/sqrt(2).
#[test]
fn c02_numerical_range_certificate() {
    let start = Instant::now();
    let cert = certify_numerical_range(&RangeGrid::default()).unwrap();
    let mut equality_gap = 0.0f64;
    let r = 1.0 / 2.0f64.sqrt();
    for &f in &[0.1, 0.5, 0.9] {
        let p = FlowParams::new(f, 0.0).unwrap();
        let m = symbol_sym(&p, WaveVector::new(r, r, 0.0)).unwrap();
        let max = m.symmetric_eigenvalues().max();
        equality_gap = equality_gap.max((max - 0.5 * (2.0 - f)).abs());
    }
    let pass = cert.pass && cert.margin >= -1e-12 && equality_gap <= 1e-12;
    report(
        "criterion 2 (numerical range)",
        pass,
        &format!(
            "min gap {:.2e} at (s={:.3}, t={:.3}, f={:.3}), equality gap {equality_gap:.2e}, {} samples",
            cert.min, cert.argmin.s, cert.argmin.t, cert.argmin.f, cert.samples
        ),
        start.elapsed().as_secs_f64(),
        60.0,
    );
}

/// Criterion 3: the Routh-Hurwitz chain on the 201x201x99 lattice with 1e5
/// random refinements, the boundary zero of b0 localized at (s,t)=(-1,1),
/// and closed-form/product agreement of the Hurwitz combination.
#[test]
fn c03_routh_hurwitz_chain() {
    let start = Instant::now();
    let certs = certify_routh_hurwitz(&RhGrid::default()).unwrap();
    let mut all_pass = true;
    let mut detail = String::new();
    for c in &certs {
        all_pass &= c.pass;
        detail.push_str(&format!("{}: {:.3e}; ", c.quantity, c.min));
    }
    let b0 = certs.iter().find(|c| c.quantity == "b0").unwrap();
    let b0_zero_located = b0.min.abs() <= 1e-12 && b0.argmin.s == -1.0 && b0.argmin.t == 1.0;
    for name in ["b2", "b1", "bpoly"] {
        let c = certs.iter().find(|c| c.quantity == name).unwrap();
        all_pass &= c.min > 0.0;
    }
    // closed form vs coefficient products on 1e5 random points
    let mut rng = common::rng(0xB0);
    let mut worst = 0.0f64;
    for _ in 0..100_000 {
        let s = rng.gen_range(-1.0..=1.0);
        let t = rng.gen_range(-1.0..=1.0);
        let f = rng.gen_range(1e-6..1.0);
        let (theta, phi) = subst_to_angles(s, t);
        let c = shifted_coeffs(f, theta, phi);
        let via = 32.0 * (c.b2 * c.b1 - c.b3 * c.b0);
        let direct = bpoly(s, t, f);
        worst = worst.max((direct - via).abs() / direct.abs().max(1.0));
    }
    let pass = all_pass && b0_zero_located && worst <= 1e-10;
    report(
        "criterion 3 (Routh-Hurwitz chain)",
        pass,
        &format!("{detail}b0 zero at (-1,1): {b0_zero_located}; product agreement {worst:.2e}"),
        start.elapsed().as_secs_f64(),
        60.0,
    );
}

/// Criterion 4: the packet residual falls below 0.1 and then 0.01 along
/// the schedule delta' = sqrt(delta), monotonically, with the transport
/// part halving when delta halves at fixed delta'. The schedule head
/// delta = 0.1 violates bump disjointness (delta < xi3*) and must be
/// rejected by the builder.
#[test]
fn c04_pseudomode_residual_schedule() {
    let start = Instant::now();
    let f = 0.5;
    let nu = 0.01;
    let params = FlowParams::unstable(f, nu).unwrap();
    let (xi3_star, _) = select_linear_params(f, nu, 10.0, 0.1).unwrap();

    // head of the printed schedule: delta = 0.1 >= xi3* ~ 0.058 overlaps
    let head = PseudoModeSpec::new(0.0, xi3_star, 0.1, 0.1f64.sqrt());
    let head_rejected = head.is_err();

    let mut totals = Vec::new();
    let mut monotone = true;
    let mut delta = 0.05;
    let mut reached_01 = false;
    let mut reached_001 = false;
    while delta > 1e-7 {
        let spec = PseudoModeSpec::new(0.0, xi3_star, delta, delta.sqrt()).unwrap();
        let field = build_pseudomode(&params, &spec, 24).unwrap();
        let rep = residual(&params, &field).unwrap();
        if let Some(&prev) = totals.last() {
            monotone &= rep.total < prev;
        }
        totals.push(rep.total);
        if rep.total < 0.1 {
            reached_01 = true;
        }
        if rep.total < 0.01 {
            reached_001 = true;
            break;
        }
        delta *= 0.5;
    }

    // transport part halves with delta at fixed delta'
    let dp = 0.05f64.sqrt();
    let i2_at = |d: f64| {
        let spec = PseudoModeSpec::new(0.0, xi3_star, d, dp).unwrap();
        residual(&params, &build_pseudomode(&params, &spec, 24).unwrap())
            .unwrap()
            .i2
    };
    let halving = i2_at(0.04) / i2_at(0.02);
    let halving_ok = (halving - 2.0).abs() <= 0.3;

    let pass = head_rejected && monotone && reached_01 && reached_001 && halving_ok;
    report(
        "criterion 4 (pseudo-mode residual)",
        pass,
        &format!(
            "head rejected: {head_rejected}; residuals {:?}; I2 halving factor {halving:.3}",
            totals.iter().map(|t| format!("{t:.3}")).collect::<Vec<_>>()
        ),
        start.elapsed().as_secs_f64(),
        120.0,
    );
}

/// Criterion 5: 100 random band-limited Hermitian ensembles stay below the
/// semigroup bound e^{t upper} (1 + 1e-6) on [0, 5].
#[test]
fn c05_semigroup_upper_bound() {
    let start = Instant::now();
    let mut rng = common::rng(0x5E
    );
    let mut worst_excess = f64::NEG_INFINITY;
    for trial in 0..100 {
        let f = rng.gen_range(0.01..0.99);
        let nu = [0.0, 0.01, 0.1][trial % 3];
        let p = FlowParams::new(f, nu).unwrap();
        let upper = p.lambda_upper().unwrap();
        let mut modes = Vec::new();
        for _ in 0..24 {
            let xi = loop {
                let xi = WaveVector::new(
                    rng.gen_range(-1.15..1.15),
                    rng.gen_range(-1.15..1.15),
                    rng.gen_range(-1.15..1.15),
                );
                if xi.norm_sq() < 4.0 && xi.xi1 * xi.xi1 + xi.xi3 * xi.xi3 > 1e-4 {
                    break xi;
                }
            };
            let value = common::random_unit_complex3(&mut rng);
            let weight = rng.gen_range(0.1..1.0);
            modes.push(Mode { xi, weight, value });
            modes.push(Mode {
                xi: WaveVector::new(-xi.xi1, -xi.xi2, -xi.xi3),
                weight,
                value: value.map(|c| c.conj()),
            });
        }
        let ens = ModeEnsemble { modes, provenance: format!("band-limited {trial}") };
        let out = propagate_field(&p, &ens, 5.0, 0.005, 25).unwrap();
        for (i, &t) in out.series.times.iter().enumerate() {
            let bound = (t * upper).exp() * out.series.norms[0] * (1.0 + 1e-6);
            worst_excess = worst_excess.max(out.series.norms[i] / bound - 1.0);
        }
    }
    let pass = worst_excess <= 0.0;
    report(
        "criterion 5 (semigroup upper bound)",
        pass,
        &format!("worst relative excess over the bound {worst_excess:.2e}"),
        start.elapsed().as_secs_f64(),
        60.0,
    );
}

/// Criterion 6: the propagated certified packet tracks e^{t lower} within
/// +-eps for (T, eps) in {(5, 0.2), (10, 0.1)} at 200 samples, and the
/// Sobolev ratios stay below 2^{k/2} for k = 1..6.
#[test]
fn c06_linear_growth_envelope() {
    let start = Instant::now();
    let f = 0.5;
    let nu = 0.01;
    let params = FlowParams::unstable(f, nu).unwrap();
    let mut detail = String::new();
    let mut pass = true;
    for &(t_horizon, eps, dp) in &[(5.0, 0.2, 1e-2), (10.0, 0.1, 1e-3)] {
        let (xi3e, _gamma) = select_linear_params(f, nu, t_horizon, eps).unwrap();
        let spec = PseudoModeSpec::new(0.0, xi3e, dp * dp, dp).unwrap();
        let field = build_pseudomode(&params, &spec, 16).unwrap();
        let res = residual(&params, &field).unwrap();
        // membership of the rate in the eps-pseudo-spectrum at this eps
        pass &= res.certifies_membership(eps);
        let ens = ModeEnsemble::from_field(&field);
        let mut out = propagate_field(&params, &ens, t_horizon, 0.01, 200).unwrap();
        out.series.set_envelope(&params, eps).unwrap();
        // margin in ratio units: distance of norm(t)/norm(0) from the
        // e^{t lower} -+ eps band
        let n0 = out.series.norms[0];
        let mut margin = f64::INFINITY;
        for i in 0..out.series.times.len() {
            let n = out.series.norms[i];
            margin = margin
                .min((n - out.series.env_lo[i]) / n0)
                .min((out.series.env_hi[i] - n) / n0);
        }
        pass &= margin >= 0.0;
        let mut sob_ok = true;
        for k in 1..=6 {
            let rep = sobolev_ratio_check(&ens, k, 1.0).unwrap();
            sob_ok &= rep.pass && rep.ratio <= 2f64.powf(0.5 * k as f64);
        }
        pass &= sob_ok;
        detail.push_str(&format!(
            "(T={t_horizon}, eps={eps}): residual {:.2e}, envelope margin {margin:.3}, sobolev ok {sob_ok}; ",
            res.total
        ));
    }
    report(
        "criterion 6 (growth envelope)",
        pass,
        &detail,
        start.elapsed().as_secs_f64(),
        120.0,
    );
}

/// Criterion 7: RK4 propagation matches the matrix exponential to 1e-8 at
/// xi1 = 0 and shows 4th-order convergence under step halving.
#[test]
fn c07_kelvin_oracle_equivalence() {
    let start = Instant::now();
    let mut rng = common::rng(0x77);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let f = rng.gen_range(0.01..0.99);
        let nu = rng.gen_range(0.0..0.1);
        let xi2 = rng.gen_range(-2.0..2.0);
        let xi3 = loop {
            let x: f64 = rng.gen_range(-2.0..2.0);
            if x.abs() > 0.05 {
                break x;
            }
        };
        let v0 = common::random_unit_complex3(&mut rng);
        let p = FlowParams::new(f, nu).unwrap();
        let xi = WaveVector::new(0.0, xi2, xi3);
        let traj = propagate_mode(&p, xi, v0, 5.0, 0.005).unwrap();
        let a = symbol_streak(&p, xi2, xi3).unwrap();
        let e = common::expm3(&(a * 5.0));
        let expect = common::expm3_apply_complex(&e, &v0);
        worst = worst.max((traj.states.last().unwrap() - expect).norm() / expect.norm());
    }
    // convergence order from step halving against the oracle
    let p = FlowParams::new(0.5, 0.01).unwrap();
    let xi = WaveVector::new(0.0, 0.4, 1.1);
    let v0 = Vector3::new(
        Complex64::new(0.8, 0.1),
        Complex64::new(-0.4, 0.6),
        Complex64::new(0.2, -0.7),
    );
    let a = symbol_streak(&p, 0.4, 1.1).unwrap();
    let expect = common::expm3_apply_complex(&common::expm3(&(a * 2.0)), &v0);
    let err_at = |dt: f64| {
        let traj = propagate_mode(&p, xi, v0, 2.0, dt).unwrap();
        (traj.states.last().unwrap() - expect).norm()
    };
    let order = (err_at(0.04) / err_at(0.02)).log2();
    let pass = worst <= 1e-8 && (order - 4.0).abs() <= 0.2;
    report(
        "criterion 7 (Kelvin oracle)",
        pass,
        &format!("worst relative error {worst:.2e}, observed order {order:.2}"),
        start.elapsed().as_secs_f64(),
        10.0,
    );
}

/// Criterion 8: discrete energy identity at 32^3, nu = 0.05, f = 0.5 over
/// t in [0, 5]: unit-window residual below 1e-6 of the kinetic energy and
/// divergence below 1e-12 after every step.
#[test]
fn c08_solver_energy_identity() {
    let start = Instant::now();
    let cfg = dns::DnsConfig { n: 32, nu: 0.05, f: 0.5, dt: 0.005, ..Default::default() };
    let params = FlowParams::new(cfg.f, cfg.nu).unwrap();
    let spec = PseudoModeSpec::new(0.0, 0.25, 0.2, 0.2).unwrap();
    let init = dns::init_from_pseudomode(&cfg, &params, &spec, 0.1).unwrap();
    let out = dns::run(&cfg, init, 5.0, 1).unwrap();
    let windows = dns::energy_residual_unit_windows(&out);
    let mut worst_ratio = 0.0f64;
    for &(_, res, kinetic) in &windows {
        worst_ratio = worst_ratio.max(res / kinetic);
    }
    let pass =
        !windows.is_empty() && worst_ratio <= 1e-6 && out.max_divergence <= 1e-12;
    report(
        "criterion 8 (energy identity)",
        pass,
        &format!(
            "worst window residual {worst_ratio:.2e} of kinetic, max divergence {:.2e}, {} windows",
            out.max_divergence,
            windows.len()
        ),
        start.elapsed().as_secs_f64(),
        300.0,
    );
}

/// Criterion 9: Hadamard escape scaling. Escape times against ln(1/delta)
/// fit a slope within 20% of 1/lower = 2, with the doubling monitor
/// holding before escape in every run.
#[test]
fn c09_escape_time_scaling() {
    let start = Instant::now();
    let cfg = dns::DnsConfig { n: 32, nu: 0.01, f: 0.5, dt: 0.02, ..Default::default() };
    let params = FlowParams::unstable(cfg.f, cfg.nu).unwrap();
    let spec = PseudoModeSpec::new(0.0, 0.25, 0.15, 0.15).unwrap();
    let deltas = [1e-2, 1e-3, 1e-4, 1e-5];
    let result = dns::escape_scan(&cfg, &params, &spec, &deltas, 0.05, 5).unwrap();
    let slope = result.fitted_slope.unwrap();
    let increasing = result.escape_times.windows(2).all(|w| w[1] > w[0]);
    let pass = result.pass && result.monitor_ok && increasing;
    report(
        "criterion 9 (escape scaling)",
        pass,
        &format!(
            "escape times {:?}, fitted slope {slope:.3} vs expected {:.3}, monitor ok {}",
            result
                .escape_times
                .iter()
                .map(|t| format!("{t:.2}"))
                .collect::<Vec<_>>(),
            result.expected_slope,
            result.monitor_ok
        ),
        start.elapsed().as_secs_f64(),
        1800.0,
    );
}

/// Criterion 10: the same initial data run at f = 1.5 (outside (0,1))
/// shows no sustained growth: the running max of the L2 norm over [0, 20]
/// stays within 10% of its value after the initial transient.
#[test]
fn c10_stability_contrast() {
    let start = Instant::now();
    let cfg = dns::DnsConfig { n: 32, nu: 0.01, f: 1.5, dt: 0.02, ..Default::default() };
    let build_params = FlowParams::unstable(0.5, cfg.nu).unwrap();
    let spec = PseudoModeSpec::new(0.0, 0.25, 0.15, 0.15).unwrap();
    let init = dns::init_from_pseudomode(&cfg, &build_params, &spec, 1e-2).unwrap();
    let out = dns::run(&cfg, init, 20.0, 10).unwrap();
    let cut = out.series.times.iter().position(|&t| t >= 5.0).unwrap();
    let max_early = out.series.norms[..cut].iter().cloned().fold(0.0, f64::max);
    let max_all = out.series.norms.iter().cloned().fold(0.0, f64::max);
    let pass = max_all <= 1.1 * max_early;
    report(
        "criterion 10 (stability contrast)",
        pass,
        &format!("running max {max_all:.3e} vs post-transient {max_early:.3e}"),
        start.elapsed().as_secs_f64(),
        600.0,
    );
}

/// Criterion 11: the weighted-integral property holds with factor
/// (1 + 1e-9) across 1000 randomized trials at three parameter sets.
#[test]
fn c11_weighted_integral_suite() {
    let start = Instant::now();
    let mut pass = true;
    let mut detail = String::new();
    for (i, &(a, b, k)) in [(1.0, 0.5, 2.0), (2.0, 1.0, 1.0), (0.9, 0.6, 5.0)]
        .iter()
        .enumerate()
    {
        let rep = weighted_integral_bound_check(a, b, k, 1000, 0xA3 + i as u64).unwrap();
        pass &= rep.pass;
        detail.push_str(&format!("({a},{b},{k}): max ratio {:.6}; ", rep.max_ratio));
    }
    report(
        "criterion 11 (weighted integral)",
        pass,
        &detail,
        start.elapsed().as_secs_f64(),
        5.0,
    );
}
