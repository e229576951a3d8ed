//! Shearing-frame pseudo-spectral solver for the nonlinear perturbation
//! system on a periodic box.
//!
//! The background shear is absorbed into a drifting effective wavevector
//! `k2(s) = k2 - k1 s` (the same characteristics as [`crate::kelvin`]), so
//! the transport term is exact. Each step applies RK4 to the inviscid
//! symbol plus the dealiased, Leray-projected nonlinear term, with the
//! viscous factor integrated exactly per mode. Drifted labels are
//! periodically remeshed back onto the lattice.
//!
//! The nonlinear term is evaluated in rotational form `omega x u`; after
//! 2/3 dealiasing and projection this agrees identically with the
//! convective and skew-symmetric forms for divergence-free trigonometric
//! fields, and it is pointwise orthogonal to `u`, so the energy identity
//! holds to integrator accuracy.

mod fft;

pub use fft::Fft3;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use thiserror::Error;

use crate::kelvin::GrowthSeries;
use crate::pseudomode::{PseudoModeError, PseudoModeSpec};
use crate::symbol::{growth_rates, instability_window, streak_eigenpairs, FlowParams, SymbolError};

#[derive(Debug, Error)]
pub enum DnsError {
    #[error("invalid solver config: {0}")]
    BadConfig(String),
    #[error("bump under-resolved on the lattice: {0}")]
    Resolution(String),
    #[error("CFL violated: max |u| dt = {lhs:.3e} exceeds half the grid spacing {rhs:.3e}")]
    Cfl { lhs: f64, rhs: f64 },
    #[error("t_end = {t_end} is not an integral number of steps of dt = {dt}")]
    NonIntegralSteps { t_end: f64, dt: f64 },
    #[error("step {step}: {source}")]
    AtStep { step: usize, source: Box<DnsError> },
    #[error("scan incomplete: run with delta = {delta} did not escape within its budget {budget}")]
    ScanIncomplete { delta: f64, budget: f64 },
    #[error("checkpoint format error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Symbol(#[from] SymbolError),
    #[error(transparent)]
    PseudoMode(#[from] PseudoModeError),
}

/// Solver configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DnsConfig {
    /// Modes per axis; a power of two, at least 16.
    pub n: usize,
    /// Domain half-lengths per axis; the first two must agree so remeshing
    /// shifts land on the lattice.
    pub box_half: [f64; 3],
    pub nu: f64,
    pub f: f64,
    pub dt: f64,
    /// Retained fraction of the Nyquist range (2/3 rule by default).
    pub dealias: f64,
    /// Remesh when the worst sheared label has drifted this fraction of
    /// the Nyquist range.
    pub remesh_threshold: f64,
    pub seed: u64,
    /// Disable to propagate the linearized system only.
    pub nonlinear: bool,
}

impl Default for DnsConfig {
    fn default() -> Self {
        DnsConfig {
            n: 32,
            box_half: [8.0 * std::f64::consts::PI; 3],
            nu: 0.01,
            f: 0.5,
            dt: 0.01,
            dealias: 2.0 / 3.0,
            remesh_threshold: 0.5,
            seed: 0,
            nonlinear: true,
        }
    }
}

impl DnsConfig {
    pub fn validate(&self) -> Result<(), DnsError> {
        if self.n < 16 || !self.n.is_power_of_two() {
            return Err(DnsError::BadConfig(format!(
                "grid n = {} must be a power of two >= 16",
                self.n
            )));
        }
        if !(self.dealias > 0.5 && self.dealias < 1.0) {
            return Err(DnsError::BadConfig(format!(
                "dealias fraction {} outside (1/2, 1)",
                self.dealias
            )));
        }
        if !(self.dt > 0.0) || !(self.remesh_threshold > 0.0) {
            return Err(DnsError::BadConfig("dt and remesh_threshold must be positive".into()));
        }
        if self.box_half.iter().any(|&h| !(h > 0.0)) {
            return Err(DnsError::BadConfig("box half-lengths must be positive".into()));
        }
        if (self.box_half[0] - self.box_half[1]).abs() > 1e-12 * self.box_half[0] {
            return Err(DnsError::BadConfig(
                "the first two box half-lengths must match for lattice-exact remeshing".into(),
            ));
        }
        if !(self.nu >= 0.0) {
            return Err(DnsError::BadConfig(format!("nu = {} must be >= 0", self.nu)));
        }
        Ok(())
    }

    pub fn dk(&self) -> [f64; 3] {
        [
            std::f64::consts::PI / self.box_half[0],
            std::f64::consts::PI / self.box_half[1],
            std::f64::consts::PI / self.box_half[2],
        ]
    }

    /// Retained label bound per axis under the dealias rule.
    pub fn mode_limit(&self) -> i64 {
        (self.dealias * (self.n / 2) as f64).floor() as i64
    }

    /// Whether the advisory diffusive-stability guide `dt nu k_max^2 <= 1/2`
    /// holds (informational; the viscous factor is integrated exactly).
    pub fn diffusion_advisory_ok(&self) -> bool {
        let dk = self.dk();
        let kmax_sq: f64 = dk
            .iter()
            .map(|d| (d * self.mode_limit() as f64).powi(2))
            .sum();
        self.dt * self.nu * kmax_sq <= 0.5
    }
}

fn signed_m(i: usize, n: usize) -> i64 {
    if i < n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

type Field3 = [Vec<Complex64>; 3];

fn zeros3(len: usize) -> Field3 {
    [
        vec![Complex64::default(); len],
        vec![Complex64::default(); len],
        vec![Complex64::default(); len],
    ]
}

/// Divergence-free truncated Fourier velocity field on the shearing lattice.
#[derive(Debug, Clone)]
pub struct SpectralField {
    pub n: usize,
    pub box_half: [f64; 3],
    pub mlim: i64,
    /// Coefficients of `e^{i k x}` per component, full `n^3` row-major.
    pub u: Field3,
    /// Shear time since the last remesh: effective `k2 = k2 - k1 * shear_age`.
    pub shear_age: f64,
    /// Absolute simulation time.
    pub t: f64,
}

impl SpectralField {
    pub fn zeros(cfg: &DnsConfig) -> Result<Self, DnsError> {
        cfg.validate()?;
        Ok(SpectralField {
            n: cfg.n,
            box_half: cfg.box_half,
            mlim: cfg.mode_limit(),
            u: zeros3(cfg.n * cfg.n * cfg.n),
            shear_age: 0.0,
            t: 0.0,
        })
    }

    pub fn dk(&self) -> [f64; 3] {
        [
            std::f64::consts::PI / self.box_half[0],
            std::f64::consts::PI / self.box_half[1],
            std::f64::consts::PI / self.box_half[2],
        ]
    }

    pub fn volume(&self) -> f64 {
        8.0 * self.box_half[0] * self.box_half[1] * self.box_half[2]
    }

    fn for_each_mode(&self, mut f: impl FnMut(usize, f64, f64, f64)) {
        let n = self.n;
        let dk = self.dk();
        let s = self.shear_age;
        let mut idx = 0;
        for i in 0..n {
            let k1 = dk[0] * signed_m(i, n) as f64;
            for j in 0..n {
                let k2 = dk[1] * signed_m(j, n) as f64 - k1 * s;
                for l in 0..n {
                    let k3 = dk[2] * signed_m(l, n) as f64;
                    f(idx, k1, k2, k3);
                    idx += 1;
                }
            }
        }
    }

    /// Zero every label outside the dealias cube (and the Nyquist planes).
    pub fn apply_mask(&mut self) {
        let n = self.n;
        let mlim = self.mlim;
        let mut idx = 0;
        for i in 0..n {
            let m1 = signed_m(i, n);
            for j in 0..n {
                let m2 = signed_m(j, n);
                for l in 0..n {
                    let m3 = signed_m(l, n);
                    if m1.abs() > mlim || m2.abs() > mlim || m3.abs() > mlim {
                        for c in 0..3 {
                            self.u[c][idx] = Complex64::default();
                        }
                    }
                    idx += 1;
                }
            }
        }
    }

    /// Leray projection onto `k_eff . u = 0`, and zero mean mode.
    pub fn project(&mut self) {
        let mut u = std::mem::replace(&mut self.u, zeros3(0));
        self.for_each_mode(|idx, k1, k2, k3| {
            let n2 = k1 * k1 + k2 * k2 + k3 * k3;
            if n2 <= 0.0 {
                u[0][idx] = Complex64::default();
                u[1][idx] = Complex64::default();
                u[2][idx] = Complex64::default();
                return;
            }
            let dot = k1 * u[0][idx] + k2 * u[1][idx] + k3 * u[2][idx];
            let c = dot / n2;
            u[0][idx] -= k1 * c;
            u[1][idx] -= k2 * c;
            u[2][idx] -= k3 * c;
        });
        self.u = u;
    }

    pub fn l2_norm(&self) -> f64 {
        let v = self.volume();
        let sum: f64 = self
            .u
            .iter()
            .map(|c| c.iter().map(|z| z.norm_sqr()).sum::<f64>())
            .sum();
        (v * sum).sqrt()
    }

    pub fn h1_norm(&self) -> f64 {
        let mut sum = 0.0;
        self.for_each_mode(|idx, k1, k2, k3| {
            let fac = 1.0 + k1 * k1 + k2 * k2 + k3 * k3;
            let e: f64 = self.u.iter().map(|c| c[idx].norm_sqr()).sum();
            sum += fac * e;
        });
        (self.volume() * sum).sqrt()
    }

    pub fn kinetic(&self) -> f64 {
        0.5 * self.l2_norm().powi(2)
    }

    pub fn dissipation(&self, nu: f64) -> f64 {
        let mut sum = 0.0;
        self.for_each_mode(|idx, k1, k2, k3| {
            let ks = k1 * k1 + k2 * k2 + k3 * k3;
            let e: f64 = self.u.iter().map(|c| c[idx].norm_sqr()).sum();
            sum += ks * e;
        });
        nu * self.volume() * sum
    }

    /// Production `-int u1 u2 dx` of the energy identity.
    pub fn production(&self) -> f64 {
        let sum: f64 = self.u[0]
            .iter()
            .zip(&self.u[1])
            .map(|(a, b)| (a * b.conj()).re)
            .sum();
        -self.volume() * sum
    }

    /// Worst relative divergence `|k . u| / (|k| |u|)` over retained modes.
    pub fn max_divergence_rel(&self) -> f64 {
        let mut worst: f64 = 0.0;
        self.for_each_mode(|idx, k1, k2, k3| {
            let n2 = k1 * k1 + k2 * k2 + k3 * k3;
            if n2 <= 0.0 {
                return;
            }
            let e: f64 = self.u.iter().map(|c| c[idx].norm_sqr()).sum();
            if e == 0.0 {
                return;
            }
            let dot = k1 * self.u[0][idx] + k2 * self.u[1][idx] + k3 * self.u[2][idx];
            worst = worst.max(dot.norm() / (n2.sqrt() * e.sqrt()));
        });
        worst
    }

    /// Worst Hermitian-symmetry defect `|u(-k) - conj(u(k))|` relative to
    /// the field scale.
    pub fn hermitian_error(&self) -> f64 {
        let n = self.n;
        let scale = self
            .u
            .iter()
            .flat_map(|c| c.iter())
            .map(|z| z.norm())
            .fold(0.0f64, f64::max)
            .max(1e-300);
        let mirror = |i: usize| if i == 0 { 0 } else { n - i };
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                for l in 0..n {
                    let a = (i * n + j) * n + l;
                    let b = (mirror(i) * n + mirror(j)) * n + mirror(l);
                    for c in 0..3 {
                        worst = worst.max((self.u[c][a] - self.u[c][b].conj()).norm());
                    }
                }
            }
        }
        worst / scale
    }
}

/// Scratch buffers and FFT plans reused across steps.
pub struct DnsWorkspace {
    fft: Fft3,
    phys: [Vec<Complex64>; 6],
}

impl DnsWorkspace {
    pub fn new(cfg: &DnsConfig) -> Self {
        let len = cfg.n * cfg.n * cfg.n;
        DnsWorkspace {
            fft: Fft3::new(cfg.n),
            phys: std::array::from_fn(|_| vec![Complex64::default(); len]),
        }
    }
}

/// Inviscid symbol entries at `k` (the viscous diagonal is integrated
/// exactly elsewhere).
#[inline]
fn inviscid_symbol_apply(
    f: f64,
    k1: f64,
    k2: f64,
    k3: f64,
    v: [Complex64; 3],
) -> [Complex64; 3] {
    let n2 = k1 * k1 + k2 * k2 + k3 * k3;
    if n2 <= 0.0 {
        return [Complex64::default(); 3];
    }
    let b11 = f * k1 * k2 / n2;
    let b12 = f - 1.0 + (2.0 - f) * k1 * k1 / n2;
    let b21 = -f + f * k2 * k2 / n2;
    let b22 = (2.0 - f) * k1 * k2 / n2;
    let b31 = f * k2 * k3 / n2;
    let b32 = (2.0 - f) * k1 * k3 / n2;
    [
        b11 * v[0] + b12 * v[1],
        b21 * v[0] + b22 * v[1],
        b31 * v[0] + b32 * v[1],
    ]
}

struct RhsOutput {
    g: Field3,
    max_velocity: f64,
}

/// Right-hand side at a given shear time: inviscid linear symbol plus the
/// dealiased, projected rotational nonlinear term.
fn rhs(
    state: &SpectralField,
    u: &Field3,
    shear: f64,
    cfg: &DnsConfig,
    ws: &mut DnsWorkspace,
    want_velocity: bool,
) -> RhsOutput {
    let n = state.n;
    let len = n * n * n;
    let dk = state.dk();
    let mut g = zeros3(len);
    let mut max_velocity = 0.0;

    if cfg.nonlinear {
        // omega = i k x u, then to physical together with u
        for c in 0..6 {
            ws.phys[c].iter_mut().for_each(|z| *z = Complex64::default());
        }
        let mut idx = 0;
        for i in 0..n {
            let k1 = dk[0] * signed_m(i, n) as f64;
            for j in 0..n {
                let k2 = dk[1] * signed_m(j, n) as f64 - k1 * shear;
                for l in 0..n {
                    let k3 = dk[2] * signed_m(l, n) as f64;
                    let (u1, u2, u3) = (u[0][idx], u[1][idx], u[2][idx]);
                    let im = Complex64::new(0.0, 1.0);
                    ws.phys[0][idx] = u1;
                    ws.phys[1][idx] = u2;
                    ws.phys[2][idx] = u3;
                    ws.phys[3][idx] = im * (k2 * u3 - k3 * u2);
                    ws.phys[4][idx] = im * (k3 * u1 - k1 * u3);
                    ws.phys[5][idx] = im * (k1 * u2 - k2 * u1);
                    idx += 1;
                }
            }
        }
        {
            let (a, b) = ws.phys.split_at_mut(3);
            rayon::join(
                || {
                    for arr in a.iter_mut() {
                        ws_to_physical(&ws.fft, arr);
                    }
                },
                || {
                    for arr in b.iter_mut() {
                        ws_to_physical(&ws.fft, arr);
                    }
                },
            );
        }
        // c = omega x u pointwise; store into g
        for idx in 0..len {
            let u1 = ws.phys[0][idx];
            let u2 = ws.phys[1][idx];
            let u3 = ws.phys[2][idx];
            let w1 = ws.phys[3][idx];
            let w2 = ws.phys[4][idx];
            let w3 = ws.phys[5][idx];
            g[0][idx] = w2 * u3 - w3 * u2;
            g[1][idx] = w3 * u1 - w1 * u3;
            g[2][idx] = w1 * u2 - w2 * u1;
            if want_velocity {
                let speed_sq = u1.re * u1.re + u2.re * u2.re + u3.re * u3.re;
                if speed_sq > max_velocity {
                    max_velocity = speed_sq;
                }
            }
        }
        max_velocity = max_velocity.sqrt();
        {
            let (a, b) = g.split_at_mut(2);
            rayon::join(
                || {
                    for arr in a.iter_mut() {
                        ws.fft.to_spectral(arr);
                    }
                },
                || ws.fft.to_spectral(&mut b[0]),
            );
        }
    }

    // mask, project the nonlinear term, add the inviscid symbol
    let mlim = state.mlim;
    let mut idx = 0;
    for i in 0..n {
        let m1 = signed_m(i, n);
        let k1 = dk[0] * m1 as f64;
        for j in 0..n {
            let m2 = signed_m(j, n);
            let k2 = dk[1] * m2 as f64 - k1 * shear;
            for l in 0..n {
                let m3 = signed_m(l, n);
                let k3 = dk[2] * m3 as f64;
                let masked = m1.abs() > mlim || m2.abs() > mlim || m3.abs() > mlim;
                let n2 = k1 * k1 + k2 * k2 + k3 * k3;
                if masked || n2 <= 0.0 {
                    g[0][idx] = Complex64::default();
                    g[1][idx] = Complex64::default();
                    g[2][idx] = Complex64::default();
                } else {
                    // N = -P (omega x u)
                    let (c1, c2, c3) = (g[0][idx], g[1][idx], g[2][idx]);
                    let dot = (k1 * c1 + k2 * c2 + k3 * c3) / n2;
                    let lin = inviscid_symbol_apply(
                        cfg.f,
                        k1,
                        k2,
                        k3,
                        [u[0][idx], u[1][idx], u[2][idx]],
                    );
                    g[0][idx] = lin[0] - (c1 - k1 * dot);
                    g[1][idx] = lin[1] - (c2 - k2 * dot);
                    g[2][idx] = lin[2] - (c3 - k3 * dot);
                }
                idx += 1;
            }
        }
    }
    RhsOutput { g, max_velocity }
}

fn ws_to_physical(fft: &Fft3, arr: &mut [Complex64]) {
    fft.to_physical(arr);
}

/// Per-mode exact viscous decay over `[s0, s0 + tau]` of shear age.
fn decay_factors(state: &SpectralField, nu: f64, tau: f64) -> Vec<f64> {
    let n = state.n;
    let dk = state.dk();
    let s0 = state.shear_age;
    let mut out = vec![1.0; n * n * n];
    if nu == 0.0 || tau == 0.0 {
        return out;
    }
    let mut idx = 0;
    for i in 0..n {
        let k1 = dk[0] * signed_m(i, n) as f64;
        for j in 0..n {
            let a = dk[1] * signed_m(j, n) as f64 - k1 * s0;
            for l in 0..n {
                let k3 = dk[2] * signed_m(l, n) as f64;
                let fixed = k1 * k1 + k3 * k3;
                let quad = a * a * tau - a * k1 * tau * tau + k1 * k1 * tau * tau * tau / 3.0;
                out[idx] = (-nu * (fixed * tau + quad)).exp();
                idx += 1;
            }
        }
    }
    out
}

/// Outcome of one step.
#[derive(Debug, Clone, Copy)]
pub struct StepInfo {
    pub max_velocity: f64,
    pub remesh: Option<RemeshEvent>,
}

/// A relabeling event: drifted labels were shifted back onto the lattice.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RemeshEvent {
    pub t: f64,
    pub shift: i64,
    /// Relative L2 norm change from dropped out-of-range labels.
    pub norm_change_rel: f64,
}

/// Advance one time step with the integrating-factor RK4 scheme.
pub fn step(
    state: &mut SpectralField,
    cfg: &DnsConfig,
    ws: &mut DnsWorkspace,
) -> Result<StepInfo, DnsError> {
    let h = cfg.dt;
    let len = state.u[0].len();
    let s0 = state.shear_age;

    let e_half = decay_factors(state, cfg.nu, 0.5 * h);
    let e_full = decay_factors(state, cfg.nu, h);
    // decay over the second half step, from shear age s0 + h/2
    let e_half2: Vec<f64> = e_full
        .iter()
        .zip(&e_half)
        .map(|(f, h1)| if *h1 > 0.0 { f / h1 } else { 0.0 })
        .collect();

    let r1 = rhs(state, &state.u.clone(), s0, cfg, ws, true);
    // CFL guard on the sampled physical velocity
    if cfg.nonlinear {
        let dx = (0..3)
            .map(|a| 2.0 * state.box_half[a] / state.n as f64)
            .fold(f64::INFINITY, f64::min);
        if r1.max_velocity * h > 0.5 * dx {
            return Err(DnsError::Cfl { lhs: r1.max_velocity * h, rhs: 0.5 * dx });
        }
    }
    let g1 = r1.g;

    let mut va = zeros3(len);
    for c in 0..3 {
        for i in 0..len {
            va[c][i] = e_half[i] * (state.u[c][i] + 0.5 * h * g1[c][i]);
        }
    }
    let g2 = rhs(state, &va, s0 + 0.5 * h, cfg, ws, false).g;

    let mut vb = va; // reuse allocation
    for c in 0..3 {
        for i in 0..len {
            vb[c][i] = e_half[i] * state.u[c][i] + 0.5 * h * g2[c][i];
        }
    }
    let g3 = rhs(state, &vb, s0 + 0.5 * h, cfg, ws, false).g;

    let mut vc = vb;
    for c in 0..3 {
        for i in 0..len {
            vc[c][i] = e_full[i] * state.u[c][i] + h * e_half2[i] * g3[c][i];
        }
    }
    let g4 = rhs(state, &vc, s0 + h, cfg, ws, false).g;

    for c in 0..3 {
        for i in 0..len {
            state.u[c][i] = e_full[i] * state.u[c][i]
                + h / 6.0
                    * (e_full[i] * g1[c][i]
                        + 2.0 * e_half2[i] * (g2[c][i] + g3[c][i])
                        + g4[c][i]);
        }
    }
    state.shear_age += h;
    state.t += h;
    state.apply_mask();
    state.project();
    let remesh = maybe_remesh(state, cfg);
    Ok(StepInfo { max_velocity: r1.max_velocity, remesh })
}

/// Remesh at integer shear ages once the worst drifted label exceeds the
/// threshold fraction of the Nyquist range. The shift is lattice-exact,
/// so only labels leaving the retained cube are dropped.
fn maybe_remesh(state: &mut SpectralField, cfg: &DnsConfig) -> Option<RemeshEvent> {
    let age = state.shear_age;
    let rounded = age.round();
    if rounded < 1.0 || (age - rounded).abs() > 1e-9 {
        return None;
    }
    let drift = state.mlim as f64 * rounded;
    if drift < cfg.remesh_threshold * (state.n / 2) as f64 {
        return None;
    }
    let shift = rounded as i64;
    let n = state.n;
    let before_sq: f64 = state
        .u
        .iter()
        .map(|c| c.iter().map(|z| z.norm_sqr()).sum::<f64>())
        .sum();
    let mut fresh = zeros3(n * n * n);
    let to_index = |m: i64| -> usize {
        if m >= 0 {
            m as usize
        } else {
            (m + n as i64) as usize
        }
    };
    let mut idx = 0;
    let mut kept_sq = 0.0;
    for i in 0..n {
        let m1 = signed_m(i, n);
        for j in 0..n {
            let m2 = signed_m(j, n);
            let m2_new = m2 - m1 * shift;
            let keep = m2_new.abs() <= state.mlim;
            let j_new = if keep { to_index(m2_new) } else { 0 };
            for l in 0..n {
                if keep {
                    let dst = (i * n + j_new) * n + l;
                    for c in 0..3 {
                        fresh[c][dst] = state.u[c][idx];
                        kept_sq += state.u[c][idx].norm_sqr();
                    }
                }
                idx += 1;
            }
        }
    }
    state.u = fresh;
    state.shear_age -= rounded;
    let norm_change_rel = if before_sq > 0.0 {
        (1.0 - (kept_sq / before_sq).min(1.0).sqrt()).abs()
    } else {
        0.0
    };
    Some(RemeshEvent { t: state.t, shift, norm_change_rel })
}

/// Per-sample energy budget terms of the identity
/// `d/dt kinetic + dissipation = production`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EnergyBudget {
    pub kinetic: f64,
    pub dissipation: f64,
    pub production: f64,
    /// `|d/dt kinetic + dissipation - production|`, with the derivative
    /// from 4th-order finite differences of the sampled series.
    pub residual: f64,
}

/// Full output of a run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub series: GrowthSeries,
    pub h1: Vec<f64>,
    pub budgets: Vec<EnergyBudget>,
    pub remesh_events: Vec<RemeshEvent>,
    pub max_divergence: f64,
    pub max_hermitian_error: f64,
}

/// March `t_end / dt` steps, sampling every `sample_every` steps.
pub fn run(
    cfg: &DnsConfig,
    mut state: SpectralField,
    t_end: f64,
    sample_every: usize,
) -> Result<RunOutput, DnsError> {
    cfg.validate()?;
    let steps_f = t_end / cfg.dt;
    let steps = steps_f.round() as usize;
    if steps == 0 || (steps_f - steps as f64).abs() > 1e-6 {
        return Err(DnsError::NonIntegralSteps { t_end, dt: cfg.dt });
    }
    let sample_every = sample_every.max(1);
    let mut ws = DnsWorkspace::new(cfg);

    let mut times = Vec::new();
    let mut norms = Vec::new();
    let mut h1 = Vec::new();
    let mut budgets = Vec::new();
    let mut remesh_events = Vec::new();
    let mut max_div: f64 = 0.0;

    let record = |state: &SpectralField,
                      times: &mut Vec<f64>,
                      norms: &mut Vec<f64>,
                      h1: &mut Vec<f64>,
                      budgets: &mut Vec<EnergyBudget>| {
        times.push(state.t);
        norms.push(state.l2_norm());
        h1.push(state.h1_norm());
        budgets.push(EnergyBudget {
            kinetic: state.kinetic(),
            dissipation: state.dissipation(cfg.nu),
            production: state.production(),
            residual: f64::NAN,
        });
    };
    record(&state, &mut times, &mut norms, &mut h1, &mut budgets);

    for s in 0..steps {
        let info = step(&mut state, cfg, &mut ws)
            .map_err(|e| DnsError::AtStep { step: s, source: Box::new(e) })?;
        if let Some(ev) = info.remesh {
            remesh_events.push(ev);
        }
        max_div = max_div.max(state.max_divergence_rel());
        if (s + 1) % sample_every == 0 || s + 1 == steps {
            record(&state, &mut times, &mut norms, &mut h1, &mut budgets);
        }
    }

    fill_residuals(&times, &mut budgets);
    let max_hermitian_error = state.hermitian_error();
    Ok(RunOutput {
        series: GrowthSeries {
            times,
            norms,
            env_lo: Vec::new(),
            env_hi: Vec::new(),
            upper: Vec::new(),
        },
        h1,
        budgets,
        remesh_events,
        max_divergence: max_div,
        max_hermitian_error,
    })
}

fn fill_residuals(times: &[f64], budgets: &mut [EnergyBudget]) {
    let n = times.len();
    if n < 5 {
        return;
    }
    let dt = times[1] - times[0];
    for i in 2..n - 2 {
        let dkdt = (-budgets[i + 2].kinetic + 8.0 * budgets[i + 1].kinetic
            - 8.0 * budgets[i - 1].kinetic
            + budgets[i - 2].kinetic)
            / (12.0 * dt);
        budgets[i].residual = (dkdt + budgets[i].dissipation - budgets[i].production).abs();
    }
}

/// Unit-time energy-identity residuals: for each window `[t, t+1]`,
/// `|Delta kinetic - int (production - dissipation)|` with a composite
/// Simpson integral, paired with the mean kinetic energy of the window.
pub fn energy_residual_unit_windows(out: &RunOutput) -> Vec<(f64, f64, f64)> {
    let times = &out.series.times;
    if times.len() < 3 {
        return Vec::new();
    }
    let dt = times[1] - times[0];
    let per_unit = (1.0 / dt).round() as usize;
    if per_unit < 2 || per_unit % 2 != 0 {
        return Vec::new();
    }
    let mut res = Vec::new();
    let mut start = 0;
    while start + per_unit < times.len() {
        let end = start + per_unit;
        let dk = out.budgets[end].kinetic - out.budgets[start].kinetic;
        // Simpson over the window
        let mut integral = 0.0;
        let mut i = start;
        while i + 2 <= end {
            let f0 = out.budgets[i].production - out.budgets[i].dissipation;
            let f1 = out.budgets[i + 1].production - out.budgets[i + 1].dissipation;
            let f2 = out.budgets[i + 2].production - out.budgets[i + 2].dissipation;
            integral += dt / 3.0 * (f0 + 4.0 * f1 + f2);
            i += 2;
        }
        let mean_kinetic = out.budgets[start..=end]
            .iter()
            .map(|b| b.kinetic)
            .sum::<f64>()
            / (per_unit + 1) as f64;
        res.push((times[start], (dk - integral).abs(), mean_kinetic));
        start = end;
    }
    res
}

/// `t, l2, h1, kinetic, dissipation, production, energy_residual` columns.
pub fn write_run_csv(out: &RunOutput, w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "t,l2,h1,kinetic,dissipation,production,energy_residual")?;
    for i in 0..out.series.times.len() {
        let b = &out.budgets[i];
        writeln!(
            w,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            out.series.times[i],
            out.series.norms[i],
            out.h1[i],
            b.kinetic,
            b.dissipation,
            b.production,
            b.residual
        )?;
    }
    Ok(())
}

/// Sample the bump packet on the lattice without projection or rescaling
/// (diagnostic; [`init_from_pseudomode`] finalizes it).
pub fn sample_packet_on_lattice(
    cfg: &DnsConfig,
    params: &FlowParams,
    spec: &PseudoModeSpec,
) -> Result<SpectralField, DnsError> {
    cfg.validate()?;
    let dk = cfg.dk();
    // at least 3 lattice points per axis inside each bump support
    let count_inside = |dk_axis: f64, center: f64, width: f64| -> usize {
        let lo = ((center - width) / dk_axis).floor() as i64;
        let hi = ((center + width) / dk_axis).ceil() as i64;
        (lo..=hi)
            .filter(|&m| {
                let k = dk_axis * m as f64;
                (k - center).abs() < width
            })
            .count()
    };
    for (axis, center, width, name) in [
        (0usize, 0.0, spec.delta, "xi1"),
        (1, spec.xi2_star, spec.delta_prime, "xi2"),
        (2, spec.xi3_star, spec.delta, "xi3"),
    ] {
        let c = count_inside(dk[axis], center, width);
        if c < 3 {
            return Err(DnsError::Resolution(format!(
                "{name} bump at {center} with width {width} covers {c} lattice points (need >= 3)"
            )));
        }
    }
    let eig = streak_eigenpairs(params, spec.xi2_star, spec.xi3_star)?;
    let u1 = eig.triples[0].vector;
    let mut state = SpectralField::zeros(cfg)?;
    let centers = spec.centers();
    let mut u = std::mem::replace(&mut state.u, zeros3(0));
    state.for_each_mode(|idx, k1, k2, k3| {
        let xi = crate::symbol::WaveVector::new(k1, k2, k3);
        let mut eta = 0.0;
        for &(c2, c3) in &centers {
            eta += spec.bump(xi, c2, c3);
        }
        if eta != 0.0 {
            for c in 0..3 {
                u[c][idx] = Complex64::new(eta * u1[c], 0.0);
            }
        }
    });
    state.u = u;
    Ok(state)
}

/// Sample the packet, project to divergence-free, and rescale so the
/// `H^1` size equals `delta`.
pub fn init_from_pseudomode(
    cfg: &DnsConfig,
    params: &FlowParams,
    spec: &PseudoModeSpec,
    delta: f64,
) -> Result<SpectralField, DnsError> {
    if !(delta > 0.0) {
        return Err(DnsError::BadConfig(format!("initial size delta = {delta} must be > 0")));
    }
    let mut state = sample_packet_on_lattice(cfg, params, spec)?;
    state.apply_mask();
    state.project();
    let h1 = state.h1_norm();
    if !(h1 > 0.0) {
        return Err(DnsError::Resolution("projected packet vanished on the lattice".into()));
    }
    let scale = delta / h1;
    for c in 0..3 {
        for z in state.u[c].iter_mut() {
            *z *= scale;
        }
    }
    Ok(state)
}

/// Escape diagnostics of one run.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EscapeReport {
    /// First sampled time with `|u|_{L^2} > eps0`.
    pub escape: Option<f64>,
    /// Predicted `ln(2 eps0 / delta) / lower_rate` (when rates exist).
    pub predicted: Option<f64>,
    /// First sampled time with `H^1` size above 1.
    pub t_star: Option<f64>,
    /// First sampled time with `|u|_{L^2} > 2 delta e^{lower t}`.
    pub t_star_star: Option<f64>,
}

/// Scan a run's series for threshold crossings.
pub fn escape_time(
    out: &RunOutput,
    params: &FlowParams,
    eps0: f64,
    delta: f64,
) -> EscapeReport {
    let lower = growth_rates(params).ok().map(|(lo, _)| lo);
    let mut escape = None;
    let mut t_star = None;
    let mut t_star_star = None;
    for (i, &t) in out.series.times.iter().enumerate() {
        if escape.is_none() && out.series.norms[i] > eps0 {
            escape = Some(t);
        }
        if t_star.is_none() && out.h1[i] > 1.0 {
            t_star = Some(t);
        }
        if let Some(lo) = lower {
            if t_star_star.is_none() && out.series.norms[i] > 2.0 * delta * (lo * t).exp() {
                t_star_star = Some(t);
            }
        }
    }
    let predicted = lower.map(|lo| (2.0 * eps0 / delta).ln() / lo);
    EscapeReport { escape, predicted, t_star, t_star_star }
}

/// Result of an escape-time scan over decreasing initial sizes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EscapeScanResult {
    pub deltas: Vec<f64>,
    pub escape_times: Vec<f64>,
    pub predicted_times: Vec<f64>,
    pub fitted_slope: Option<f64>,
    pub expected_slope: f64,
    pub eps0: f64,
    pub pass: bool,
    /// `|u(t)| <= 2 delta e^{lower t}` held before escape in every run.
    pub monitor_ok: bool,
}

/// Run one simulation per `delta` (time budget twice the predicted escape
/// time), fit escape time against `ln(1/delta)`, and compare the slope to
/// the reciprocal lower rate within 20%.
pub fn escape_scan(
    cfg: &DnsConfig,
    params: &FlowParams,
    spec: &PseudoModeSpec,
    deltas: &[f64],
    eps0: f64,
    sample_every: usize,
) -> Result<EscapeScanResult, DnsError> {
    cfg.validate()?;
    let window = instability_window(params.f);
    if !window.inside {
        return Err(DnsError::BadConfig(format!(
            "escape scan requires f inside the instability window ({:.6}, {:.6}); got {}",
            window.lo, window.hi, params.f
        )));
    }
    let (lower, _) = growth_rates(params)?;
    if deltas.is_empty() || deltas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(DnsError::BadConfig("deltas must be strictly decreasing".into()));
    }
    if deltas.iter().any(|&d| d >= eps0) {
        return Err(DnsError::BadConfig("every delta must be below eps0".into()));
    }

    let mut escape_times = Vec::new();
    let mut predicted_times = Vec::new();
    let mut monitor_ok = true;
    let mut ws = DnsWorkspace::new(cfg);
    for &delta in deltas {
        let predicted = (2.0 * eps0 / delta).ln() / lower;
        let budget_steps = (2.0 * predicted / cfg.dt).ceil() as usize;
        let t_budget = budget_steps as f64 * cfg.dt;
        let mut state = init_from_pseudomode(cfg, params, spec, delta)?;
        // march until the first sampled escape; the budget caps the run
        let mut escape = None;
        let check = |state: &SpectralField, monitor_ok: &mut bool| -> Option<f64> {
            let l2 = state.l2_norm();
            if l2 > 2.0 * delta * (lower * state.t).exp() {
                *monitor_ok = false;
            }
            (l2 > eps0).then_some(state.t)
        };
        let _ = check(&state, &mut monitor_ok);
        'march: for s in 0..budget_steps {
            step(&mut state, cfg, &mut ws)
                .map_err(|e| DnsError::AtStep { step: s, source: Box::new(e) })?;
            if (s + 1) % sample_every == 0 || s + 1 == budget_steps {
                if let Some(t) = check(&state, &mut monitor_ok) {
                    escape = Some(t);
                    break 'march;
                }
            }
        }
        let esc = escape.ok_or(DnsError::ScanIncomplete { delta, budget: t_budget })?;
        escape_times.push(esc);
        predicted_times.push(predicted);
    }

    let fitted_slope = if deltas.len() >= 2 {
        let xs: Vec<f64> = deltas.iter().map(|d| (1.0 / d).ln()).collect();
        let xm = xs.iter().sum::<f64>() / xs.len() as f64;
        let ym = escape_times.iter().sum::<f64>() / xs.len() as f64;
        let num: f64 = xs
            .iter()
            .zip(&escape_times)
            .map(|(x, y)| (x - xm) * (y - ym))
            .sum();
        let den: f64 = xs.iter().map(|x| (x - xm) * (x - xm)).sum();
        Some(num / den)
    } else {
        None
    };
    let expected_slope = 1.0 / lower;
    let pass = fitted_slope
        .map(|s| ((s - expected_slope) / expected_slope).abs() <= 0.2)
        .unwrap_or(false)
        && monitor_ok;
    Ok(EscapeScanResult {
        deltas: deltas.to_vec(),
        escape_times,
        predicted_times,
        fitted_slope,
        expected_slope,
        eps0,
        pass,
        monitor_ok,
    })
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"CLABDNS1";

/// Versioned binary checkpoint: lattice metadata plus raw coefficients.
pub fn write_checkpoint(state: &SpectralField, w: &mut impl Write) -> Result<(), DnsError> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(state.n as u64).to_le_bytes())?;
    for h in state.box_half {
        w.write_all(&h.to_le_bytes())?;
    }
    w.write_all(&state.mlim.to_le_bytes())?;
    w.write_all(&state.shear_age.to_le_bytes())?;
    w.write_all(&state.t.to_le_bytes())?;
    for c in 0..3 {
        for z in &state.u[c] {
            w.write_all(&z.re.to_le_bytes())?;
            w.write_all(&z.im.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<SpectralField, DnsError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(DnsError::Checkpoint("bad magic".into()));
    }
    let mut b8 = [0u8; 8];
    let read_f64 = |r: &mut dyn Read| -> Result<f64, DnsError> {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    };
    r.read_exact(&mut b8)?;
    let n = u64::from_le_bytes(b8) as usize;
    if n == 0 || n > 4096 {
        return Err(DnsError::Checkpoint(format!("implausible grid size {n}")));
    }
    let box_half = [read_f64(r)?, read_f64(r)?, read_f64(r)?];
    r.read_exact(&mut b8)?;
    let mlim = i64::from_le_bytes(b8);
    let shear_age = read_f64(r)?;
    let t = read_f64(r)?;
    let len = n * n * n;
    let mut u = zeros3(len);
    for comp in u.iter_mut() {
        for z in comp.iter_mut() {
            let re = read_f64(r)?;
            let im = read_f64(r)?;
            *z = Complex64::new(re, im);
        }
    }
    Ok(SpectralField { n, box_half, mlim, u, shear_age, t })
}
