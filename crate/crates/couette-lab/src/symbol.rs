//! Fourier-side matrices of the linearized rotating-shear operator, the
//! streak (x-independent) eigen-system, and the scalar instability
//! functionals of the flow parameters.
//!
//! Conventions: the linearized operator acting on a velocity perturbation
//! splits, per wavevector `xi`, into a multiplication matrix (evaluated
//! here) plus the shear transport `xi1 * d/d(xi2)` handled by [`crate::kelvin`].
//! All ratios involving `1/|xi|^2` require `|xi| > 0`; callers must exclude
//! the origin.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SymbolError {
    #[error("Coriolis coefficient f = {0} outside the open interval (0, 1)")]
    CoriolisOutOfRange(f64),
    #[error("viscosity nu = {0} must be nonnegative and finite")]
    BadViscosity(f64),
    #[error("zero frequency: the symbol requires |xi| > 0")]
    ZeroFrequency,
    #[error("empty frequency grid")]
    EmptyGrid,
}

/// Coriolis coefficient and viscosity of the background flow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowParams {
    pub f: f64,
    pub nu: f64,
}

impl FlowParams {
    /// General parameter set: any finite `f`, `nu >= 0`.
    pub fn new(f: f64, nu: f64) -> Result<Self, SymbolError> {
        if !nu.is_finite() || nu < 0.0 {
            return Err(SymbolError::BadViscosity(nu));
        }
        if !f.is_finite() {
            return Err(SymbolError::CoriolisOutOfRange(f));
        }
        Ok(Self { f, nu })
    }

    /// Parameter set for instability studies; additionally requires
    /// `0 < f < 1` so both growth rates are defined.
    pub fn unstable(f: f64, nu: f64) -> Result<Self, SymbolError> {
        let p = Self::new(f, nu)?;
        if !(f > 0.0 && f < 1.0) {
            return Err(SymbolError::CoriolisOutOfRange(f));
        }
        Ok(p)
    }

    /// Lower exponential rate `sqrt(f(1-f))` of the growing streak modes.
    pub fn lambda_lower(&self) -> Result<f64, SymbolError> {
        Ok(growth_rates(self)?.0)
    }

    /// Upper exponential rate `(2-f)/2` bounding the semigroup.
    pub fn lambda_upper(&self) -> Result<f64, SymbolError> {
        Ok(growth_rates(self)?.1)
    }
}

/// Real frequency triple; the coordinate of every symbol evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveVector {
    pub xi1: f64,
    pub xi2: f64,
    pub xi3: f64,
}

impl WaveVector {
    pub fn new(xi1: f64, xi2: f64, xi3: f64) -> Self {
        Self { xi1, xi2, xi3 }
    }

    pub fn norm_sq(&self) -> f64 {
        self.xi1 * self.xi1 + self.xi2 * self.xi2 + self.xi3 * self.xi3
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }
}

/// Exponential rates `(sqrt(f(1-f)), (2-f)/2)`; requires `0 < f < 1`.
pub fn growth_rates(params: &FlowParams) -> Result<(f64, f64), SymbolError> {
    let f = params.f;
    if !(f > 0.0 && f < 1.0) {
        return Err(SymbolError::CoriolisOutOfRange(f));
    }
    Ok(((f * (1.0 - f)).sqrt(), 0.5 * (2.0 - f)))
}

/// Rayleigh discriminant `f(f-1)`; negative exactly on `0 < f < 1`.
pub fn rayleigh_discriminant(f: f64) -> f64 {
    f * (f - 1.0)
}

/// The open `f`-window where the constructed growth beats the semigroup
/// bound twice over (`2 lower > upper`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstabilityWindow {
    pub inside: bool,
    pub lo: f64,
    pub hi: f64,
}

/// Endpoints `(2/17)(5 -+ 2 sqrt 2)` of the window, and whether `f` is inside.
pub fn instability_window(f: f64) -> InstabilityWindow {
    let s = 2.0f64.sqrt();
    let lo = 2.0 / 17.0 * (5.0 - 2.0 * s);
    let hi = 2.0 / 17.0 * (5.0 + 2.0 * s);
    InstabilityWindow {
        inside: f > lo && f < hi,
        lo,
        hi,
    }
}

/// Streak symbol: the 3x3 matrix governing x-independent modes at
/// `(xi2, xi3)`, with `|xi|^2 = xi2^2 + xi3^2`.
pub fn symbol_streak(params: &FlowParams, xi2: f64, xi3: f64) -> Result<Matrix3<f64>, SymbolError> {
    let n2 = xi2 * xi2 + xi3 * xi3;
    if n2 <= 0.0 {
        return Err(SymbolError::ZeroFrequency);
    }
    let FlowParams { f, nu } = *params;
    let d = -nu * n2;
    Ok(Matrix3::new(
        d,
        f - 1.0,
        0.0,
        -f + f * xi2 * xi2 / n2,
        d,
        0.0,
        f * xi2 * xi3 / n2,
        0.0,
        d,
    ))
}

/// Multiplication part of the full symbol at `xi` (the transport term
/// `xi1 d/d(xi2)` is represented separately). Reduces to [`symbol_streak`]
/// at `xi1 = 0`.
pub fn symbol_algebraic(params: &FlowParams, xi: WaveVector) -> Result<Matrix3<f64>, SymbolError> {
    let n2 = xi.norm_sq();
    if n2 <= 0.0 {
        return Err(SymbolError::ZeroFrequency);
    }
    let FlowParams { f, nu } = *params;
    let WaveVector { xi1, xi2, xi3 } = xi;
    let d = -nu * n2;
    Ok(Matrix3::new(
        d + f * xi1 * xi2 / n2,
        f - 1.0 + (2.0 - f) * xi1 * xi1 / n2,
        0.0,
        -f + f * xi2 * xi2 / n2,
        d + (2.0 - f) * xi1 * xi2 / n2,
        0.0,
        f * xi2 * xi3 / n2,
        (2.0 - f) * xi1 * xi3 / n2,
        d,
    ))
}

/// Self-adjoint part of the symbol, written out entrywise; equals
/// `(A + A^T)/2` for `A = symbol_algebraic`.
pub fn symbol_sym(params: &FlowParams, xi: WaveVector) -> Result<Matrix3<f64>, SymbolError> {
    let n2 = xi.norm_sq();
    if n2 <= 0.0 {
        return Err(SymbolError::ZeroFrequency);
    }
    let FlowParams { f, nu } = *params;
    let WaveVector { xi1, xi2, xi3 } = xi;
    let d = -nu * n2;
    let off = 0.5 * (-1.0 + (2.0 - f) * xi1 * xi1 / n2 + f * xi2 * xi2 / n2);
    let c13 = 0.5 * f * xi2 * xi3 / n2;
    let c23 = 0.5 * (2.0 - f) * xi1 * xi3 / n2;
    Ok(Matrix3::new(
        d + f * xi1 * xi2 / n2,
        off,
        c13,
        off,
        d + (2.0 - f) * xi1 * xi2 / n2,
        c23,
        c13,
        c23,
        d,
    ))
}

/// Coupling matrix of the parameterized transport ODE in `xi2` at fixed
/// `(xi1*, xi3*)`; its third column vanishes identically.
pub fn coupling_matrix(
    f: f64,
    xi2: f64,
    xi1s: f64,
    xi3s: f64,
) -> Result<Matrix3<f64>, SymbolError> {
    let n2 = xi1s * xi1s + xi2 * xi2 + xi3s * xi3s;
    if n2 <= 0.0 {
        return Err(SymbolError::ZeroFrequency);
    }
    Ok(Matrix3::new(
        -f * xi1s * xi2 / n2,
        -f + 1.0 - (2.0 - f) * xi1s * xi1s / n2,
        0.0,
        f - f * xi2 * xi2 / n2,
        -(2.0 - f) * xi1s * xi2 / n2,
        0.0,
        -f * xi2 * xi3s / n2,
        -(2.0 - f) * xi1s * xi3s / n2,
        0.0,
    ))
}

/// Empirical sup of the spectral norm of the coupling matrix over a `xi2`
/// scan. The bound is known to be finite; no closed form is asserted.
pub fn coupling_norm_scan(
    f: f64,
    xi1s: f64,
    xi3s: f64,
    xi2_grid: &[f64],
) -> Result<f64, SymbolError> {
    if xi2_grid.is_empty() {
        return Err(SymbolError::EmptyGrid);
    }
    let mut sup: f64 = 0.0;
    for &xi2 in xi2_grid {
        let m = coupling_matrix(f, xi2, xi1s, xi3s)?;
        let sv = m.singular_values();
        sup = sup.max(sv.max());
    }
    Ok(sup)
}

/// One real growth rate with its (unnormalized) eigenvector.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenTriple {
    pub lambda: f64,
    pub vector: Vector3<f64>,
}

/// The three streak eigen-pairs, ordered `lambda1 >= lambda3 >= lambda2`.
///
/// At `xi3 = 0` the matrix is defective (a single eigenvalue of geometric
/// multiplicity two); `degenerate` is set and the closed-form vectors are
/// replaced by the two honest eigdirections, duplicating the first.
#[derive(Debug, Clone, PartialEq)]
pub struct StreakEigenSystem {
    pub triples: [EigenTriple; 3],
    pub degenerate: bool,
}

/// Eigenvalues and eigenvectors of the streak symbol at `(xi2, xi3)`.
///
/// Vectors are returned unnormalized in the closed form
/// `u1 = (+|xi| sqrt(f(1-f)) |xi3| / f, -xi3^2, xi2 xi3)` for the growing
/// rate and its sign mirror for the decaying one; `sqrt(f(1-f) xi3^2)` is
/// evaluated as `sqrt(f(1-f)) |xi3|` to avoid cancellation.
pub fn streak_eigenpairs(
    params: &FlowParams,
    xi2: f64,
    xi3: f64,
) -> Result<StreakEigenSystem, SymbolError> {
    let f = params.f;
    if !(f > 0.0 && f < 1.0) {
        return Err(SymbolError::CoriolisOutOfRange(f));
    }
    let n2 = xi2 * xi2 + xi3 * xi3;
    if n2 <= 0.0 {
        return Err(SymbolError::ZeroFrequency);
    }
    let visc = -params.nu * n2;
    if xi3 == 0.0 {
        let lam = visc;
        let e1 = Vector3::new(1.0, 0.0, 0.0);
        let e3 = Vector3::new(0.0, 0.0, 1.0);
        return Ok(StreakEigenSystem {
            triples: [
                EigenTriple { lambda: lam, vector: e1 },
                EigenTriple { lambda: lam, vector: e3 },
                EigenTriple { lambda: lam, vector: e1 },
            ],
            degenerate: true,
        });
    }
    let rate = (f * (1.0 - f)).sqrt() * xi3.abs() / n2.sqrt();
    let first = n2.sqrt() * (f * (1.0 - f)).sqrt() * xi3.abs() / f;
    let u1 = Vector3::new(first, -xi3 * xi3, xi2 * xi3);
    let u2 = Vector3::new(-first, -xi3 * xi3, xi2 * xi3);
    let u3 = Vector3::new(0.0, 0.0, 1.0);
    Ok(StreakEigenSystem {
        triples: [
            EigenTriple { lambda: visc + rate, vector: u1 },
            EigenTriple { lambda: visc - rate, vector: u2 },
            EigenTriple { lambda: visc, vector: u3 },
        ],
        degenerate: false,
    })
}

/// Euclidean normalization helper; eigenvectors are returned raw so the
/// closed forms stay bit-comparable.
pub fn normalized(v: &Vector3<f64>) -> Vector3<f64> {
    v / v.norm()
}

/// Summary of a `lambda1` grid scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lambda1Scan {
    pub sup: f64,
    pub arg_sup: (f64, f64),
    pub min: f64,
    pub samples: usize,
    /// Upper end of the admissible range `(-inf, sqrt(f(1-f))]`.
    pub bound: f64,
}

/// Scan `lambda1` over a rectangular `(xi2, xi3)` grid (`xi3 = 0` rows are
/// skipped as degenerate) and report the sampled range.
pub fn lambda1_range_scan(
    params: &FlowParams,
    xi2_grid: &[f64],
    xi3_grid: &[f64],
) -> Result<Lambda1Scan, SymbolError> {
    let (lower, _) = growth_rates(params)?;
    if xi2_grid.is_empty() || xi3_grid.is_empty() {
        return Err(SymbolError::EmptyGrid);
    }
    let mut sup = f64::NEG_INFINITY;
    let mut min = f64::INFINITY;
    let mut arg = (f64::NAN, f64::NAN);
    let mut samples = 0;
    for &xi3 in xi3_grid {
        if xi3 == 0.0 {
            continue;
        }
        for &xi2 in xi2_grid {
            let sys = streak_eigenpairs(params, xi2, xi3)?;
            let l1 = sys.triples[0].lambda;
            if l1 > sup {
                sup = l1;
                arg = (xi2, xi3);
            }
            min = min.min(l1);
            samples += 1;
        }
    }
    if samples == 0 {
        return Err(SymbolError::EmptyGrid);
    }
    Ok(Lambda1Scan {
        sup,
        arg_sup: arg,
        min,
        samples,
        bound: lower,
    })
}
