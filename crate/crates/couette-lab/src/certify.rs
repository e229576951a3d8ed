//! Floating-point certification of the inequality chain bounding the
//! numerical range of the linearized operator, plus the symbol-level
//! resolvent consequence and a weighted-integral property check.
//!
//! Certificates are explicit-margin scans, not interval proofs: each one
//! records the scanned grid, the observed minimum, where it occurred, and
//! the seed of any random refinement, so a reported PASS can be replayed.

use nalgebra::Vector3;
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::symbol::{growth_rates, symbol_algebraic, symbol_sym, FlowParams, SymbolError, WaveVector};

#[derive(Debug, Error)]
pub enum CertifyError {
    #[error("empty certification grid")]
    EmptyGrid,
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Symbol(#[from] SymbolError),
}

/// A point of the substituted parameter square: `s = cos 2theta`,
/// `t = sin 2phi`, with the Coriolis coefficient along for the ride.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubstPoint {
    pub s: f64,
    pub t: f64,
    pub f: f64,
}

/// Canonical angles realizing `(s, t)`: `theta in [0, pi/2]`,
/// `phi in [-pi/4, pi/4]`. Any realizing pair gives the same coefficients.
pub fn subst_to_angles(s: f64, t: f64) -> (f64, f64) {
    (0.5 * s.clamp(-1.0, 1.0).acos(), 0.5 * t.clamp(-1.0, 1.0).asin())
}

/// Unit direction with polar angle `theta` and azimuth `phi`.
pub fn direction(theta: f64, phi: f64) -> WaveVector {
    WaveVector::new(
        theta.sin() * phi.cos(),
        theta.sin() * phi.sin(),
        theta.cos(),
    )
}

/// Coefficients of the characteristic polynomial
/// `g(x) = a3 x^3 + a2 x^2 + a1 x + a0` of the inviscid symmetric symbol
/// in spherical angles.
pub fn charpoly_coeffs(f: f64, theta: f64, phi: f64) -> (f64, f64, f64, f64) {
    let s2t = (2.0 * theta).sin();
    let a0 = f * (2.0 - f) * s2t * s2t * (2.0 * phi).sin() / 32.0;
    let a2 = -theta.sin().powi(2) * (2.0 * phi).sin();
    let a1 = (-4.0 * (2.0 * f * (2.0 - f) + 1.0) * (2.0 * theta).cos()
        - 8.0 * theta.sin().powi(4) * (4.0 * phi).cos()
        + (4.0 * theta).cos()
        + 8.0 * f * (2.0 - f)
        - 13.0)
        / 64.0;
    (a0, a1, a2, 1.0)
}

/// Coefficients after the shift `y = x - (2-f)/2`, so nonpositive real
/// parts of the roots of `h` certify the numerical-range bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftedCoeffs {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
}

pub fn shifted_coeffs(f: f64, theta: f64, phi: f64) -> ShiftedCoeffs {
    let st2 = theta.sin().powi(2);
    let st4 = st2 * st2;
    let c2t = (2.0 * theta).cos();
    let c4t = (4.0 * theta).cos();
    let s2p = (2.0 * phi).sin();
    let c4p = (4.0 * phi).cos();
    let b0 = -(2.0 - f) / 128.0
        * (8.0 * (8.0 - 5.0 * f) * st2 * s2p
            + c2t * (-8.0 * f * st2 * s2p + 8.0 * f * (2.0 - f) + 4.0)
            + 8.0 * st4 * c4p
            - c4t
            + 8.0 * f * (6.0 - f)
            - 51.0);
    let b1 = (-64.0 * (2.0 - f) * st2 * s2p - 4.0 * (2.0 * f * (2.0 - f) + 1.0) * c2t
        - 8.0 * st4 * c4p
        + c4t
        - 8.0 * f * (22.0 - 5.0 * f)
        + 179.0)
        / 64.0;
    let b2 = 3.0 - 1.5 * f - st2 * s2p;
    ShiftedCoeffs { b0, b1, b2, b3: 1.0 }
}

/// The scaled Hurwitz product `b(s,t;f) = 32 (b2 b1 - b3 b0)` in closed form.
pub fn bpoly(s: f64, t: f64, f: f64) -> f64 {
    4.0 * (2.0 - f) * (30.0 * (1.0 - f) + 7.0 * f * f - f * (2.0 - f) * s)
        + (s - 1.0) * (124.0 - 122.0 * f + 29.0 * f * f - f * (2.0 - f) * s) * t
        + 10.0 * (2.0 - f) * (s - 1.0).powi(2) * t * t
        + (s - 1.0).powi(3) * t * t * t
}

/// Reduced discriminant controlling the roots-in-`f` of `b1`; positive on
/// the parameter square.
pub fn b12_reduced(s: f64, t: f64) -> f64 {
    128.0 * (2.0 * (11.0 + s * s) - (s - 1.0).powi(2) * t * (8.0 + (s - 3.0) * t))
}

/// Reduced discriminant controlling the roots-in-`f` of `b0`; nonnegative.
pub fn b02_reduced(s: f64, t: f64) -> f64 {
    16.0 * (16.0 * (3.0 + s * s)
        + (s - 1.0) * t * (8.0 * (7.0 + s * s) + (s - 1.0) * (17.0 + s * (2.0 + s)) * t))
}

/// Interior-critical-point discriminant `t2` of the `t`-derivative of `b`.
pub fn t2_value(s: f64, f: f64) -> f64 {
    f * (3.0 * (2.0 - f) * s + 13.0 * f - 34.0) + 28.0
}

/// `t1 - t0 = 17 - 10 f + 3 s`, the gap placing the critical points
/// outside the square.
pub fn t1_minus_t0(s: f64, f: f64) -> f64 {
    17.0 - 10.0 * f + 3.0 * s
}

/// `phi(1) = (14 + f(7f - 20))/3`, the boundary value of the axis check.
pub fn phi_at_one(f: f64) -> f64 {
    (14.0 + f * (-20.0 + 7.0 * f)) / 3.0
}

/// Outcome of one scanned inequality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub quantity: String,
    pub grid: String,
    /// The scanned quantity must stay `>= bound` (up to `tol`).
    pub bound: f64,
    pub min: f64,
    pub argmin: SubstPoint,
    pub samples: usize,
    pub seed: u64,
    pub tol: f64,
    pub pass: bool,
    pub margin: f64,
}

impl Certificate {
    fn from_scan(
        quantity: &str,
        grid: String,
        bound: f64,
        tol: f64,
        min: f64,
        argmin: SubstPoint,
        samples: usize,
        seed: u64,
    ) -> Self {
        Certificate {
            quantity: quantity.to_string(),
            grid,
            bound,
            min,
            argmin,
            samples,
            seed,
            tol,
            pass: min >= bound - tol,
            margin: min - bound,
        }
    }
}

/// Re-evaluate a certified quantity at a stored argmin, for soundness
/// replay of a report.
pub fn reevaluate(quantity: &str, p: SubstPoint) -> Option<f64> {
    let (theta, phi) = subst_to_angles(p.s, p.t);
    let c = shifted_coeffs(p.f, theta, phi);
    match quantity {
        "b2" => Some(c.b2),
        "b1" => Some(c.b1),
        "b0" => Some(c.b0),
        "bpoly" => Some(bpoly(p.s, p.t, p.f)),
        "b12" => Some(b12_reduced(p.s, p.t)),
        "b02" => Some(b02_reduced(p.s, p.t)),
        "t2" => Some(t2_value(p.s, p.f)),
        "t1_minus_t0" => Some(t1_minus_t0(p.s, p.f)),
        "phi_at_one" => Some(phi_at_one(p.f)),
        "numerical_range_gap" => {
            let params = FlowParams::new(p.f, 0.0).ok()?;
            let (theta, phi) = subst_to_angles(p.s, p.t);
            let m = symbol_sym(&params, direction(theta, phi)).ok()?;
            let max = m.symmetric_eigenvalues().max();
            Some(0.5 * (2.0 - p.f) - max)
        }
        _ => None,
    }
}

/// Uniformly spaced interior grid on `(0, 1)` for the Coriolis coefficient.
pub fn uniform_f_grid(n: usize) -> Vec<f64> {
    (1..=n).map(|i| i as f64 / (n + 1) as f64).collect()
}

/// Uniformly spaced closed grid on `[-1, 1]`.
pub fn uniform_st_grid(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    (0..n)
        .map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64)
        .collect()
}

fn fold_min(chunks: Vec<(f64, SubstPoint)>) -> (f64, SubstPoint) {
    let mut best = (f64::INFINITY, SubstPoint { s: 0.0, t: 0.0, f: 0.5 });
    for c in chunks {
        if c.0 < best.0 {
            best = c;
        }
    }
    best
}

/// Scan `quantity(s, t, f)` over the lattice plus seeded random refinement;
/// deterministic for a fixed partition (per-chunk scans fold in order).
fn scan_quantity(
    name: &'static str,
    eval: impl Fn(SubstPoint) -> f64 + Sync,
    s_grid: &[f64],
    t_grid: &[f64],
    f_grid: &[f64],
    random_samples: usize,
    seed: u64,
    bound: f64,
    tol: f64,
) -> Certificate {
    let lattice: Vec<(f64, SubstPoint)> = f_grid
        .par_iter()
        .map(|&f| {
            let mut best = (f64::INFINITY, SubstPoint { s: 0.0, t: 0.0, f });
            for &s in s_grid {
                for &t in t_grid {
                    let p = SubstPoint { s, t, f };
                    let v = eval(p);
                    if v < best.0 {
                        best = (v, p);
                    }
                }
            }
            best
        })
        .collect();
    let mut best = fold_min(lattice);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..random_samples {
        let p = SubstPoint {
            s: rng.gen_range(-1.0..=1.0),
            t: rng.gen_range(-1.0..=1.0),
            f: rng.gen_range(1e-9..1.0),
        };
        let v = eval(p);
        if v < best.0 {
            best = (v, p);
        }
    }

    let samples = s_grid.len() * t_grid.len() * f_grid.len() + random_samples;
    Certificate::from_scan(
        name,
        format!(
            "{}x{} in (s,t) x {} in f + {} random",
            s_grid.len(),
            t_grid.len(),
            f_grid.len(),
            random_samples
        ),
        bound,
        tol,
        best.0,
        best.1,
        samples,
        seed,
    )
}

/// Configuration for the Routh-Hurwitz lattice scan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RhGrid {
    pub st_points: usize,
    pub f_points: usize,
    pub random_samples: usize,
    pub seed: u64,
}

impl Default for RhGrid {
    fn default() -> Self {
        RhGrid {
            st_points: 201,
            f_points: 99,
            random_samples: 100_000,
            seed: 0x5eed,
        }
    }
}

/// Certify the full chain: `b2 > 0`, `b1 > 0`, `b0 >= 0` (boundary zero at
/// `(s,t) = (-1,1)`), `b2 b1 - b3 b0 > 0` via the closed form, plus the
/// auxiliary facts used to localize the critical points.
pub fn certify_routh_hurwitz(grid: &RhGrid) -> Result<Vec<Certificate>, CertifyError> {
    if grid.st_points == 0 || grid.f_points == 0 {
        return Err(CertifyError::EmptyGrid);
    }
    let s_grid = uniform_st_grid(grid.st_points);
    let t_grid = s_grid.clone();
    let f_grid = uniform_f_grid(grid.f_points);

    let coeff = |p: SubstPoint, pick: fn(&ShiftedCoeffs) -> f64| {
        let (theta, phi) = subst_to_angles(p.s, p.t);
        pick(&shifted_coeffs(p.f, theta, phi))
    };

    let mut certs = Vec::new();
    let seed = grid.seed;
    let rs = grid.random_samples;
    certs.push(scan_quantity(
        "b2",
        |p| coeff(p, |c| c.b2),
        &s_grid, &t_grid, &f_grid, rs, seed, 0.0, 0.0,
    ));
    certs.push(scan_quantity(
        "b1",
        |p| coeff(p, |c| c.b1),
        &s_grid, &t_grid, &f_grid, rs, seed, 0.0, 0.0,
    ));
    certs.push(scan_quantity(
        "b0",
        |p| coeff(p, |c| c.b0),
        &s_grid, &t_grid, &f_grid, rs, seed, 0.0, 1e-12,
    ));
    certs.push(scan_quantity(
        "bpoly",
        |p| bpoly(p.s, p.t, p.f),
        &s_grid, &t_grid, &f_grid, rs, seed, 0.0, 0.0,
    ));
    certs.push(scan_quantity(
        "b12",
        |p| b12_reduced(p.s, p.t),
        &s_grid, &t_grid, &f_grid, 0, seed, 0.0, 0.0,
    ));
    certs.push(scan_quantity(
        "b02",
        |p| b02_reduced(p.s, p.t),
        &s_grid, &t_grid, &f_grid, 0, seed, 0.0, 1e-12,
    ));
    certs.push(scan_quantity(
        "t2",
        |p| t2_value(p.s, p.f),
        &s_grid, &t_grid, &f_grid, 0, seed, 0.0, 0.0,
    ));
    certs.push(scan_quantity(
        "t1_minus_t0",
        |p| t1_minus_t0(p.s, p.f),
        &s_grid, &t_grid, &f_grid, 0, seed, 0.0, 0.0,
    ));
    certs.push(scan_quantity(
        "phi_at_one",
        |p| phi_at_one(p.f),
        &s_grid, &t_grid, &f_grid, 0, seed, 0.0, 0.0,
    ));
    Ok(certs)
}

/// Configuration for the numerical-range scan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RangeGrid {
    pub theta_points: usize,
    pub phi_points: usize,
    pub f_points: usize,
    pub random_samples: usize,
    pub seed: u64,
    pub nu: f64,
}

impl Default for RangeGrid {
    fn default() -> Self {
        RangeGrid {
            theta_points: 201,
            phi_points: 201,
            f_points: 99,
            random_samples: 1_000_000,
            seed: 0x5eed,
            nu: 0.0,
        }
    }
}

/// Certify `max eig(sym symbol) <= (2-f)/2` pointwise over an angle grid
/// times an `f` grid plus seeded random directions. The certified quantity
/// is the gap `(2-f)/2 - max eig`; a FAIL certificate (never a panic) is
/// returned if any point dips below `-tol`.
pub fn certify_numerical_range(grid: &RangeGrid) -> Result<Certificate, CertifyError> {
    if grid.theta_points == 0 || grid.phi_points == 0 || grid.f_points == 0 {
        return Err(CertifyError::EmptyGrid);
    }
    let f_grid = uniform_f_grid(grid.f_points);
    let thetas: Vec<f64> = (0..grid.theta_points)
        .map(|i| std::f64::consts::PI * i as f64 / (grid.theta_points - 1).max(1) as f64)
        .collect();
    let phis: Vec<f64> = (0..grid.phi_points)
        .map(|i| 2.0 * std::f64::consts::PI * i as f64 / grid.phi_points as f64)
        .collect();
    let nu = grid.nu;

    let gap_at = |f: f64, theta: f64, phi: f64| -> (f64, SubstPoint) {
        let params = FlowParams { f, nu };
        let xi = direction(theta, phi);
        let m = symbol_sym(&params, xi).expect("unit direction is nonzero");
        let max = m.symmetric_eigenvalues().max();
        (
            0.5 * (2.0 - f) - max,
            SubstPoint { s: (2.0 * theta).cos(), t: (2.0 * phi).sin(), f },
        )
    };

    let lattice: Vec<(f64, SubstPoint)> = f_grid
        .par_iter()
        .map(|&f| {
            let mut best = (f64::INFINITY, SubstPoint { s: 0.0, t: 0.0, f });
            for &theta in &thetas {
                for &phi in &phis {
                    let (v, p) = gap_at(f, theta, phi);
                    if v < best.0 {
                        best = (v, p);
                    }
                }
            }
            best
        })
        .collect();
    let mut best = fold_min(lattice);

    let mut rng = ChaCha8Rng::seed_from_u64(grid.seed);
    for _ in 0..grid.random_samples {
        let f = rng.gen_range(1e-9..1.0);
        let theta = rng.gen_range(0.0..std::f64::consts::PI);
        let phi = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
        let (v, p) = gap_at(f, theta, phi);
        if v < best.0 {
            best = (v, p);
        }
    }

    let samples =
        grid.theta_points * grid.phi_points * grid.f_points + grid.random_samples;
    Ok(Certificate::from_scan(
        "numerical_range_gap",
        format!(
            "{}x{} angles x {} in f + {} random (nu = {})",
            grid.theta_points, grid.phi_points, grid.f_points, grid.random_samples, nu
        ),
        0.0,
        1e-12,
        best.0,
        best.1,
        samples,
        grid.seed,
    ))
}

/// Outcome of the symbol-level resolvent lower-bound sampling.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResolventReport {
    pub lambda_re: f64,
    pub lambda_im: f64,
    pub bound: f64,
    pub min_observed: f64,
    pub samples: usize,
    pub seed: u64,
    pub pass: bool,
    pub first_violation: Option<WaveVector>,
}

/// For random unit complex vectors `v` and random `xi != 0`, check the
/// pointwise consequence `|(lambda I - A(xi)) v| >= (Re lambda - upper)`
/// of the resolvent estimate, where `A` is the multiplication symbol and
/// the transport part is norm-preserving along characteristics.
pub fn resolvent_lower_bound_check(
    params: &FlowParams,
    lambda: Complex64,
    samples: usize,
    seed: u64,
) -> Result<ResolventReport, CertifyError> {
    let (_, upper) = growth_rates(params)?;
    if lambda.re <= upper {
        return Err(CertifyError::Precondition(format!(
            "Re lambda = {} must exceed the semigroup rate {upper}",
            lambda.re
        )));
    }
    let bound = lambda.re - upper;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min_observed = f64::INFINITY;
    let mut first_violation = None;
    for _ in 0..samples {
        let xi = loop {
            let xi = WaveVector::new(
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
            );
            if xi.norm_sq() > 1e-6 {
                break xi;
            }
        };
        let mut v = Vector3::new(
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
        );
        let n = v.norm();
        if n < 1e-9 {
            continue;
        }
        v /= Complex64::new(n, 0.0);
        let a = symbol_algebraic(params, xi)?;
        let mut w = Vector3::new(Complex64::default(), Complex64::default(), Complex64::default());
        for i in 0..3 {
            let mut acc = lambda * v[i];
            for j in 0..3 {
                acc -= a[(i, j)] * v[j];
            }
            w[i] = acc;
        }
        let r = w.norm();
        if r < min_observed {
            min_observed = r;
        }
        if r < bound * (1.0 - 1e-10) && first_violation.is_none() {
            first_violation = Some(xi);
        }
    }
    Ok(ResolventReport {
        lambda_re: lambda.re,
        lambda_im: lambda.im,
        bound,
        min_observed,
        samples,
        seed,
        pass: first_violation.is_none(),
        first_violation,
    })
}

/// Outcome of the weighted-integral property trials.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightedIntegralReport {
    pub a: f64,
    pub b: f64,
    pub big_k: f64,
    pub trials: usize,
    pub seed: u64,
    pub max_ratio: f64,
    pub pass: bool,
    pub first_violation: Option<(usize, f64)>,
}

/// Randomized check of the damped-integral bound: any nonnegative
/// piecewise-constant `F` with `int_0^t F^2 <= K e^{2at}` satisfies
/// `int_0^t F^2 e^{-2bs} ds <= (aK/(a-b)) e^{2(a-b)t}` (slack `1e-9`).
///
/// The hypothesis is enforced continuously by bounding each cell's
/// cumulative integral with the left-endpoint value of `K e^{2at}`; both
/// integrals are then evaluated in closed form per cell.
pub fn weighted_integral_bound_check(
    a: f64,
    b: f64,
    big_k: f64,
    trials: usize,
    seed: u64,
) -> Result<WeightedIntegralReport, CertifyError> {
    if !(a > b && b > 0.0 && big_k > 0.0) {
        return Err(CertifyError::Precondition(format!(
            "need a > b > 0 and K > 0, got a={a}, b={b}, K={big_k}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_ratio: f64 = 0.0;
    let mut first_violation = None;

    for trial in 0..trials {
        let cells = 200;
        let total_t = rng.gen_range(0.5..5.0);
        let dt = total_t / cells as f64;
        // random nonnegative squared amplitudes, occasionally zero
        let mut f2: Vec<f64> = (0..cells)
            .map(|_| {
                if rng.gen_bool(0.1) {
                    0.0
                } else {
                    let x: f64 = rng.gen_range(-1.0..1.0);
                    (x * x) * (rng.gen_range(0.0..6.0f64)).exp()
                }
            })
            .collect();
        // scale so the running integral obeys K e^{2 a t_left} cellwise,
        // which implies the continuous hypothesis
        let mut cum = 0.0;
        let mut scale = f64::INFINITY;
        for (i, v) in f2.iter().enumerate() {
            let t_left = i as f64 * dt;
            cum += v * dt;
            if cum > 0.0 {
                scale = scale.min(big_k * (2.0 * a * t_left).exp() / cum);
            }
        }
        if scale.is_finite() {
            for v in &mut f2 {
                *v *= scale;
            }
        }
        // closed-form weighted integral per cell, checked at every grid point
        let mut weighted = 0.0;
        for (i, v) in f2.iter().enumerate() {
            let t0 = i as f64 * dt;
            let t1 = t0 + dt;
            weighted += v * ((-2.0 * b * t0).exp() - (-2.0 * b * t1).exp()) / (2.0 * b);
            let rhs = a * big_k / (a - b) * (2.0 * (a - b) * t1).exp();
            let ratio = weighted / rhs;
            if ratio > max_ratio {
                max_ratio = ratio;
            }
            if weighted > rhs * (1.0 + 1e-9) && first_violation.is_none() {
                first_violation = Some((trial, t1));
            }
        }
    }
    Ok(WeightedIntegralReport {
        a,
        b,
        big_k,
        trials,
        seed,
        max_ratio,
        pass: first_violation.is_none(),
        first_violation,
    })
}
