//! Scalar random-matrix functions for a discrete bulk spectrum `H`.
//!
//! All integrals against `H` are exact weighted sums over its atoms.

use alloc::vec::Vec;

use nalgebra::Complex;

use crate::error::{Error, Result};
use crate::model::{BulkSpectrum, SpikeSet};

pub type Complex64 = Complex<f64>;

/// `φ′(α)` at or below this value is treated as inside the bulk.
pub const PHASE_TRANSITION_EPS: f64 = 1e-12;

const SOLVER_DAMPING: f64 = 0.5;
const SOLVER_MAX_ITER: usize = 10_000;
const SOLVER_STEP_TOL: f64 = 1e-12;
const SOLVER_RESIDUAL_TOL: f64 = 1e-10;

/// Every scalar quantity attached to one spike location.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmtPoint {
    pub alpha: f64,
    pub y: f64,
    pub phi: f64,
    pub phi1: f64,
    pub phi2: f64,
    pub phi3: f64,
    pub psi: f64,
    pub psi1: f64,
    /// Companion Stieltjes transform at `φ(α)`, equal to `−1/α`.
    pub s_under: f64,
    pub l0: f64,
    pub l0p: f64,
    pub l1: f64,
    pub l2: f64,
}

pub(crate) fn cabs(z: Complex64) -> f64 {
    z.re.hypot(z.im)
}

/// `φ(z) = z (1 + y ∫ t/(z − t) dH(t))`, valid for any real `z` off the atoms.
pub fn phi(z: f64, h: &BulkSpectrum, y: f64) -> f64 {
    z * psi(z, h, y)
}

/// `ψ(z) = φ(z)/z`.
pub fn psi(z: f64, h: &BulkSpectrum, y: f64) -> f64 {
    1.0 + y * h.iter().map(|(t, w)| w * t / (z - t)).sum::<f64>()
}

/// `φ′(z) = 1 − y ∫ t²/(z − t)² dH(t)`.
pub fn phi_prime(z: f64, h: &BulkSpectrum, y: f64) -> f64 {
    1.0 - y * h
        .iter()
        .map(|(t, w)| w * t * t / ((z - t) * (z - t)))
        .sum::<f64>()
}

/// Evaluates `φ`, its first three derivatives, `ψ`, `ψ′` and the auxiliary
/// functions `ℒ₀`, `ℒ₀′`, `ℒ₁`, `ℒ₂` at a spike `alpha` above the bulk.
pub fn phi_suite(alpha: f64, h: &BulkSpectrum, y: f64) -> Result<RmtPoint> {
    if !(y > 0.0) || !y.is_finite() {
        return Err(Error::Domain(alloc::format!(
            "aspect ratio {y} must be positive"
        )));
    }
    if !(alpha > h.max_atom()) || !alpha.is_finite() {
        return Err(Error::Domain(alloc::format!(
            "spike {alpha} must lie strictly above the largest bulk atom {}",
            h.max_atom()
        )));
    }
    // Moments m_k = ∫ t^a/(α − t)^k dH.
    let (mut s1, mut s2_t, mut s2_tt, mut s3_tt, mut s4_tt) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (t, w) in h.iter() {
        let inv = 1.0 / (alpha - t);
        let inv2 = inv * inv;
        s1 += w * t * inv;
        s2_t += w * t * inv2;
        s2_tt += w * t * t * inv2;
        s3_tt += w * t * t * inv2 * inv;
        s4_tt += w * t * t * inv2 * inv2;
    }
    let psi = 1.0 + y * s1;
    let psi1 = -y * s2_t;
    let phi = alpha * psi;
    let phi1 = 1.0 - y * s2_tt;
    let phi2 = 2.0 * y * s3_tt;
    let phi3 = -6.0 * y * s4_tt;
    if phi1 <= PHASE_TRANSITION_EPS {
        return Err(Error::BelowPhaseTransition { alpha, phi1 });
    }
    let l0 = phi1 / psi;
    let l0p = (phi2 * psi - phi1 * psi1) / (psi * psi);
    let l1 = alpha * phi2 / (phi * phi1);
    let l2 =
        l0p * l0p / phi1 - l0p * l1 + (3.0 * phi2 * phi2 - phi1 * phi3) / (6.0 * psi * psi * phi1);
    Ok(RmtPoint {
        alpha,
        y,
        phi,
        phi1,
        phi2,
        phi3,
        psi,
        psi1,
        s_under: -1.0 / alpha,
        l0,
        l0p,
        l1,
        l2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StieltjesSolution {
    pub z: Complex64,
    /// Stieltjes transform `𝒮(z)` of the limiting spectral distribution.
    pub s: Complex64,
    /// Companion transform `𝒮̲(z) = −(1 − y)/z + y 𝒮(z)`.
    pub s_under: Complex64,
    pub residual: f64,
    pub iterations: usize,
}

/// Residual `𝒮 − ∫ dH(t) / (t(1 − y − y z 𝒮) − z)` of the self-consistent equation.
pub fn stieltjes_residual(z: Complex64, s: Complex64, h: &BulkSpectrum, y: f64) -> Complex64 {
    let factor = Complex64::new(1.0 - y, 0.0) - z * s * y;
    let rhs: Complex64 = h
        .iter()
        .map(|(t, w)| Complex64::new(w, 0.0) / (factor * t - z))
        .sum();
    s - rhs
}

/// Solves the self-consistent equation for `z` in the upper half plane.
///
/// A damped fixed-point iteration on the companion form
/// `𝒮̲ = −1 / (z − y ∫ t/(1 + t𝒮̲) dH)` locates the branch with
/// `Im 𝒮̲ > 0`; a few Newton steps on the `𝒮` equation then polish the root.
pub fn solve_stieltjes(z: Complex64, h: &BulkSpectrum, y: f64) -> Result<StieltjesSolution> {
    if !(z.im > 0.0) {
        return Err(Error::Domain(alloc::format!(
            "Stieltjes point {z} must have Im z > 0"
        )));
    }
    if !(y > 0.0) {
        return Err(Error::Domain(alloc::format!(
            "aspect ratio {y} must be positive"
        )));
    }
    let companion_map = |u: Complex64| -> Complex64 {
        let tail: Complex64 = h
            .iter()
            .map(|(t, w)| Complex64::new(w * t, 0.0) / (u * t + 1.0))
            .sum();
        -(z - tail * y).inv()
    };
    let mut u = -z.inv();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < SOLVER_MAX_ITER {
        iterations += 1;
        let next = u * (1.0 - SOLVER_DAMPING) + companion_map(u) * SOLVER_DAMPING;
        let step = cabs(next - u);
        u = next;
        if step <= SOLVER_STEP_TOL * cabs(u).max(1.0) {
            converged = true;
            break;
        }
    }
    let mut s = (u + (Complex64::new(1.0, 0.0) - y) / z) / y;
    let mut residual = cabs(stieltjes_residual(z, s, h, y));
    for _ in 0..8 {
        if residual <= 1e-15 {
            break;
        }
        let factor = Complex64::new(1.0 - y, 0.0) - z * s * y;
        let deriv: Complex64 = Complex64::new(1.0, 0.0)
            - h.iter()
                .map(|(t, w)| {
                    let d = factor * t - z;
                    z * (w * t * y) / (d * d)
                })
                .sum::<Complex64>();
        let candidate = s - stieltjes_residual(z, s, h, y) / deriv;
        let candidate_res = cabs(stieltjes_residual(z, candidate, h, y));
        if !(candidate_res < residual) {
            break;
        }
        s = candidate;
        residual = candidate_res;
    }
    let s_under = -(Complex64::new(1.0, 0.0) - y) / z + s * y;
    if !converged || !(residual <= SOLVER_RESIDUAL_TOL) || !(s_under.im > 0.0) {
        return Err(Error::Solver {
            residual,
            iterations,
        });
    }
    Ok(StieltjesSolution {
        z,
        s,
        s_under,
        residual,
        iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpikeCheck {
    pub k: usize,
    pub alpha: f64,
    /// `φ′(α_k)`; `NaN` when the spike does not clear the largest atom.
    pub phi1: f64,
    pub above_transition: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeparationReport {
    pub spikes: Vec<SpikeCheck>,
    pub min_ratio_gap: Option<f64>,
    pub gap_ok: bool,
}

impl SeparationReport {
    pub fn passed(&self) -> bool {
        self.gap_ok && self.spikes.iter().all(|s| s.above_transition)
    }
}

/// Per-spike `φ′(α_k) > 0` flags plus the pairwise ratio-gap test against `d`.
pub fn check_separation(spikes: &SpikeSet, h: &BulkSpectrum, y: f64, d: f64) -> SeparationReport {
    let checks = spikes
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let phi1 = if s.alpha > h.max_atom() {
                phi_prime(s.alpha, h, y)
            } else {
                f64::NAN
            };
            SpikeCheck {
                k,
                alpha: s.alpha,
                phi1,
                above_transition: phi1 > PHASE_TRANSITION_EPS,
            }
        })
        .collect();
    let min_ratio_gap = spikes.min_ratio_gap();
    SeparationReport {
        spikes: checks,
        min_ratio_gap,
        gap_ok: min_ratio_gap.is_none_or(|g| g > d),
    }
}
