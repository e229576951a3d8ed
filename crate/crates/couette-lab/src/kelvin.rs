//! Kelvin-mode propagation: the shear transport is integrated exactly as a
//! drifting wavevector, and the remaining multiplication symbol drives a
//! per-mode linear ODE solved with fixed-step RK4. Modes never couple, so
//! an ensemble propagates as an embarrassingly parallel map with
//! deterministic reductions.

use nalgebra::Vector3;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

use crate::pseudomode::SampledFourierField;
use crate::symbol::{growth_rates, symbol_algebraic, FlowParams, SymbolError, WaveVector};

#[derive(Debug, Error)]
pub enum KelvinError {
    #[error("mode {index} passes within {min_norm_sq:e} of the frequency origin")]
    SingularPassage { index: usize, min_norm_sq: f64 },
    #[error("invalid time grid: {0}")]
    BadTimeGrid(String),
    #[error("ensemble node {index} lies outside the declared support ball of radius {radius}")]
    SupportViolation { index: usize, radius: f64 },
    #[error("empty ensemble")]
    EmptyEnsemble,
    #[error(transparent)]
    Symbol(#[from] SymbolError),
}

/// Drift of a wavevector under the background shear after time `t`.
pub fn advect_wavevector(xi0: WaveVector, t: f64) -> WaveVector {
    WaveVector::new(xi0.xi1, xi0.xi2 - xi0.xi1 * t, xi0.xi3)
}

/// Minimum of `|xi(t)|^2` over `t in [0, t_end]`, in closed form.
pub fn min_norm_sq_on(xi0: WaveVector, t_end: f64) -> f64 {
    let base = xi0.xi1 * xi0.xi1 + xi0.xi3 * xi0.xi3;
    if xi0.xi1 == 0.0 {
        return xi0.norm_sq();
    }
    let t_star = xi0.xi2 / xi0.xi1;
    if (0.0..=t_end).contains(&t_star) {
        base
    } else {
        let end = xi0.xi2 - xi0.xi1 * t_end;
        base + (xi0.xi2 * xi0.xi2).min(end * end)
    }
}

fn apply_symbol(a: &nalgebra::Matrix3<f64>, v: &Vector3<Complex64>) -> Vector3<Complex64> {
    Vector3::new(
        a[(0, 0)] * v[0] + a[(0, 1)] * v[1] + a[(0, 2)] * v[2],
        a[(1, 0)] * v[0] + a[(1, 1)] * v[1] + a[(1, 2)] * v[2],
        a[(2, 0)] * v[0] + a[(2, 1)] * v[1] + a[(2, 2)] * v[2],
    )
}

fn rk4_step(
    params: &FlowParams,
    xi0: WaveVector,
    t: f64,
    v: &Vector3<Complex64>,
    dt: f64,
) -> Result<Vector3<Complex64>, SymbolError> {
    let rhs = |tau: f64, w: &Vector3<Complex64>| -> Result<Vector3<Complex64>, SymbolError> {
        let a = symbol_algebraic(params, advect_wavevector(xi0, t + tau))?;
        Ok(apply_symbol(&a, w))
    };
    let k1 = rhs(0.0, v)?;
    let k2 = rhs(0.5 * dt, &(v + k1 * Complex64::new(0.5 * dt, 0.0)))?;
    let k3 = rhs(0.5 * dt, &(v + k2 * Complex64::new(0.5 * dt, 0.0)))?;
    let k4 = rhs(dt, &(v + k3 * Complex64::new(dt, 0.0)))?;
    Ok(v + (k1 + k2 * Complex64::new(2.0, 0.0) + k3 * Complex64::new(2.0, 0.0) + k4)
        * Complex64::new(dt / 6.0, 0.0))
}

/// One mode's sampled history along its characteristic.
#[derive(Debug, Clone)]
pub struct ModeTrajectory {
    pub xi0: WaveVector,
    pub times: Vec<f64>,
    pub states: Vec<Vector3<Complex64>>,
}

impl ModeTrajectory {
    pub fn wavevector_at(&self, i: usize) -> WaveVector {
        advect_wavevector(self.xi0, self.times[i])
    }
}

/// Integrate one mode to `t_end` with steps of (at most) `dt`, recording
/// every step. The step is shrunk to divide `t_end` evenly.
pub fn propagate_mode(
    params: &FlowParams,
    xi0: WaveVector,
    v0: Vector3<Complex64>,
    t_end: f64,
    dt: f64,
) -> Result<ModeTrajectory, KelvinError> {
    if !(t_end >= 0.0 && dt > 0.0) {
        return Err(KelvinError::BadTimeGrid(format!("t_end = {t_end}, dt = {dt}")));
    }
    let min_sq = min_norm_sq_on(xi0, t_end);
    if min_sq < 1e-12 {
        return Err(KelvinError::SingularPassage { index: 0, min_norm_sq: min_sq });
    }
    let steps = (t_end / dt).ceil().max(1.0) as usize;
    let h = t_end / steps as f64;
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    times.push(0.0);
    states.push(v0);
    let mut v = v0;
    for s in 0..steps {
        let t = s as f64 * h;
        v = rk4_step(params, xi0, t, &v, h)?;
        times.push((s + 1) as f64 * h);
        states.push(v);
    }
    Ok(ModeTrajectory { xi0, times, states })
}

/// One weighted Fourier mode of an ensemble.
#[derive(Debug, Clone, Copy)]
pub struct Mode {
    pub xi: WaveVector,
    pub weight: f64,
    pub value: Vector3<Complex64>,
}

/// A weighted mode collection approximating a square-integrable
/// Fourier-side field; the transport is measure-preserving so weights stay
/// fixed for all time.
#[derive(Debug, Clone)]
pub struct ModeEnsemble {
    pub modes: Vec<Mode>,
    pub provenance: String,
}

impl ModeEnsemble {
    pub fn from_field(field: &SampledFourierField) -> Self {
        let modes = field
            .nodes
            .iter()
            .zip(&field.weights)
            .zip(&field.values)
            .map(|((&xi, &weight), &value)| Mode { xi, weight, value })
            .collect();
        ModeEnsemble {
            modes,
            provenance: format!(
                "pseudomode xi2*={} xi3*={} delta={} delta'={} q={}",
                field.spec.xi2_star,
                field.spec.xi3_star,
                field.spec.delta,
                field.spec.delta_prime,
                field.nodes_per_axis
            ),
        }
    }

    pub fn l2_norm(&self) -> f64 {
        chunked_weighted_norm(&self.modes, |m| m.value.iter().map(|c| c.norm_sqr()).sum())
    }

    pub fn hk_norm(&self, k: i32) -> f64 {
        chunked_weighted_norm(&self.modes, |m| {
            (1.0 + m.xi.norm_sq()).powi(k) * m.value.iter().map(|c| c.norm_sqr()).sum::<f64>()
        })
    }

    /// Worst Hermitian-symmetry defect: for each mode, the mismatch with
    /// the conjugate value at the mirrored wavevector (when present).
    pub fn hermitian_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for m in &self.modes {
            let mirror = WaveVector::new(-m.xi.xi1, -m.xi.xi2, -m.xi.xi3);
            if let Some(other) = self.modes.iter().find(|o| {
                (o.xi.xi1 - mirror.xi1).abs() < 1e-13
                    && (o.xi.xi2 - mirror.xi2).abs() < 1e-13
                    && (o.xi.xi3 - mirror.xi3).abs() < 1e-13
            }) {
                let d = (other.value.map(|c| c.conj()) - m.value).norm();
                worst = worst.max(d / m.value.norm().max(1e-300));
            }
        }
        worst
    }
}

fn chunked_weighted_norm(modes: &[Mode], f: impl Fn(&Mode) -> f64) -> f64 {
    // fixed-size chunks summed sequentially, then folded in order
    let chunk = 4096;
    modes
        .chunks(chunk)
        .map(|c| c.iter().map(|m| m.weight * f(m)).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Conservative default step for mode propagation: `min(0.01, 0.1 /
/// (nu * max |xi(t)|^2 + 1))` over the ensemble and horizon.
pub fn default_dt(params: &FlowParams, ens: &ModeEnsemble, t_end: f64) -> f64 {
    let mut max_sq: f64 = 0.0;
    for m in &ens.modes {
        let a = advect_wavevector(m.xi, t_end).norm_sq();
        max_sq = max_sq.max(a.max(m.xi.norm_sq()));
    }
    (0.01f64).min(0.1 / (params.nu * max_sq + 1.0))
}

/// Norm history of a propagated ensemble with its reference envelopes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GrowthSeries {
    pub times: Vec<f64>,
    pub norms: Vec<f64>,
    pub env_lo: Vec<f64>,
    pub env_hi: Vec<f64>,
    pub upper: Vec<f64>,
}

impl GrowthSeries {
    /// Attach the `exp(t lower) -+ eps` envelopes (relative to the initial
    /// norm); the semigroup bound column is filled by `propagate_field`.
    pub fn set_envelope(&mut self, params: &FlowParams, eps: f64) -> Result<(), SymbolError> {
        let (lower, _) = growth_rates(params)?;
        let n0 = self.norms.first().copied().unwrap_or(1.0);
        self.env_lo = self
            .times
            .iter()
            .map(|&t| ((t * lower).exp() - eps) * n0)
            .collect();
        self.env_hi = self
            .times
            .iter()
            .map(|&t| ((t * lower).exp() + eps) * n0)
            .collect();
        Ok(())
    }

    /// `t, l2, env_lo, env_hi, upper_bound` columns.
    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "t,l2,env_lo,env_hi,upper_bound")?;
        for i in 0..self.times.len() {
            let get = |v: &Vec<f64>| v.get(i).copied().unwrap_or(f64::NAN);
            writeln!(
                out,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                self.times[i],
                self.norms[i],
                get(&self.env_lo),
                get(&self.env_hi),
                get(&self.upper)
            )?;
        }
        Ok(())
    }
}

/// Result of propagating an ensemble.
#[derive(Debug, Clone)]
pub struct PropagatedField {
    pub series: GrowthSeries,
    pub final_ensemble: ModeEnsemble,
}

/// Propagate every mode independently and sample the weighted norm at
/// `samples + 1` uniform times on `[0, t_end]`. Reductions are chunked in
/// index order, so results do not depend on the worker count.
pub fn propagate_field(
    params: &FlowParams,
    ens: &ModeEnsemble,
    t_end: f64,
    dt: f64,
    samples: usize,
) -> Result<PropagatedField, KelvinError> {
    if ens.modes.is_empty() {
        return Err(KelvinError::EmptyEnsemble);
    }
    if !(t_end > 0.0 && dt > 0.0) || samples == 0 {
        return Err(KelvinError::BadTimeGrid(format!(
            "t_end = {t_end}, dt = {dt}, samples = {samples}"
        )));
    }
    for (i, m) in ens.modes.iter().enumerate() {
        let min_sq = min_norm_sq_on(m.xi, t_end);
        if min_sq < 1e-12 {
            return Err(KelvinError::SingularPassage { index: i, min_norm_sq: min_sq });
        }
    }
    // steps per sample interval, so samples land exactly on step boundaries
    let sample_dt = t_end / samples as f64;
    let per = (sample_dt / dt).ceil().max(1.0) as usize;
    let h = sample_dt / per as f64;

    let chunk = 2048;
    struct ChunkOut {
        norm_sq: Vec<f64>,
        finals: Vec<Mode>,
    }
    let results: Result<Vec<ChunkOut>, KelvinError> = ens
        .modes
        .par_chunks(chunk)
        .map(|modes| {
            let mut norm_sq = vec![0.0; samples + 1];
            let mut finals = Vec::with_capacity(modes.len());
            for m in modes {
                let mut v = m.value;
                norm_sq[0] += m.weight * v.iter().map(|c| c.norm_sqr()).sum::<f64>();
                for s in 0..samples {
                    for p in 0..per {
                        let t = s as f64 * sample_dt + p as f64 * h;
                        v = rk4_step(params, m.xi, t, &v, h).map_err(KelvinError::Symbol)?;
                    }
                    norm_sq[s + 1] += m.weight * v.iter().map(|c| c.norm_sqr()).sum::<f64>();
                }
                finals.push(Mode {
                    xi: advect_wavevector(m.xi, t_end),
                    weight: m.weight,
                    value: v,
                });
            }
            Ok(ChunkOut { norm_sq, finals })
        })
        .collect();
    let results = results?;

    let mut norm_sq = vec![0.0; samples + 1];
    let mut finals = Vec::with_capacity(ens.modes.len());
    for r in results {
        for (acc, v) in norm_sq.iter_mut().zip(&r.norm_sq) {
            *acc += v;
        }
        finals.extend(r.finals);
    }
    let times: Vec<f64> = (0..=samples).map(|s| s as f64 * sample_dt).collect();
    let norms: Vec<f64> = norm_sq.iter().map(|x| x.sqrt()).collect();
    let upper = match growth_rates(params) {
        Ok((_, up)) => times.iter().map(|&t| (t * up).exp() * norms[0]).collect(),
        Err(_) => Vec::new(),
    };
    Ok(PropagatedField {
        series: GrowthSeries { times, norms, env_lo: Vec::new(), env_hi: Vec::new(), upper },
        final_ensemble: ModeEnsemble {
            modes: finals,
            provenance: format!("{} -> t={}", ens.provenance, t_end),
        },
    })
}

/// Sobolev-to-L2 ratio of an ensemble supported in the ball of radius `r`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SobolevReport {
    pub k: i32,
    pub ratio: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Check `|u|_{H^k} / |u|_{L^2} <= (1 + r^2)^{k/2}` for band-limited data.
pub fn sobolev_ratio_check(
    ens: &ModeEnsemble,
    k: i32,
    r: f64,
) -> Result<SobolevReport, KelvinError> {
    if ens.modes.is_empty() {
        return Err(KelvinError::EmptyEnsemble);
    }
    for (i, m) in ens.modes.iter().enumerate() {
        if m.xi.norm() > r * (1.0 + 1e-12) {
            return Err(KelvinError::SupportViolation { index: i, radius: r });
        }
    }
    let ratio = ens.hk_norm(k) / ens.l2_norm();
    let bound = (1.0 + r * r).powf(0.5 * k as f64);
    Ok(SobolevReport { k, ratio, bound, pass: ratio <= bound * (1.0 + 1e-12) })
}
