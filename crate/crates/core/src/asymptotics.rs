//! Sharp small-temperature formulas for the mean exit time and the smallest
//! Dirichlet eigenvalue of the generator `-εΔ + ∇f·∇`.
//!
//! The leading-order mean exit time from the well at `x0` is
//!
//! ```text
//!               (2πε)^(d/2)  e^{-f(x0)/ε}
//!   E[τ]  =  -------------------------------------
//!            sqrt(det Hess f(x0)) ∫_∂D ∂ₙf e^{-f/ε} dσ
//! ```
//!
//! and the eigenvalue is its reciprocal. Everything is evaluated in log
//! space with the boundary minimum of `f` factored out of the integral, so
//! the formulas stay finite far past the f64 overflow point of `e^{1/(2ε)}`.
//!
//! When the boundary trace of `f` is constant or has finitely many
//! nondegenerate minima, Laplace's method collapses the boundary integral in
//! closed form; those two special cases are implemented separately so the
//! generic quadrature route can be checked against them.

use thiserror::Error;

use crate::domain::{wrap_angle, BoundaryQuadrature};
use crate::numerics::LogValue;
use crate::potential::{CriticalPoint, Potential};
use crate::tolerances::{CONST_BOUNDARY_TOL, DEGENERACY_TOL, GLOBAL_MIN_TOL};

use std::f64::consts::PI;

#[derive(Debug, Error)]
pub enum AsymptoticsError {
    #[error("f is not constant on the boundary: max deviation {deviation:.3e} exceeds {tol:.1e}")]
    NotConstantBoundary { deviation: f64, tol: f64 },
    #[error("degenerate boundary minimum at theta = {theta:.6} (tangential curvature {curvature:.3e})")]
    DegenerateBoundaryMinimum { theta: f64, curvature: f64 },
    #[error("boundary minima are empty or do not share the minimal f-value")]
    InconsistentMinima,
}

/// Which route produced a [`SharpPrediction`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictionMethod {
    GenericQuadrature,
    ConstantBoundary,
    MorseBoundary,
}

impl PredictionMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::GenericQuadrature => "generic-quadrature",
            Self::ConstantBoundary => "constant-boundary",
            Self::MorseBoundary => "morse-boundary",
        }
    }
}

/// Leading-order prediction pair: the mean exit time and the eigenvalue are
/// exact reciprocals by construction.
#[derive(Debug, Clone)]
pub struct SharpPrediction {
    pub epsilon: f64,
    pub log_mean_exit: f64,
    pub boundary_integral: LogValue,
    pub method: PredictionMethod,
}

impl SharpPrediction {
    /// Overflows to `inf` for very small ε; use `log_mean_exit` instead.
    pub fn mean_exit(&self) -> f64 {
        self.log_mean_exit.exp()
    }

    pub fn eigenvalue(&self) -> f64 {
        (-self.log_mean_exit).exp()
    }

    pub fn log_eigenvalue(&self) -> f64 {
        -self.log_mean_exit
    }
}

/// `∫_∂D ∂ₙf e^{-f/ε} dσ` in shifted form: the boundary minimum of `f` is
/// factored out so the node sum stays O(1).
#[derive(Debug, Clone, Copy)]
pub struct BoundaryIntegral {
    pub epsilon: f64,
    /// `min_∂D f` over the quadrature nodes
    pub min_boundary_f: f64,
    /// `Σ w_i ∂ₙf(σ_i) e^{-(f(σ_i)-min)/ε}`
    pub shifted_sum: f64,
}

impl BoundaryIntegral {
    pub fn log_value(&self) -> LogValue {
        LogValue::from_parts(self.shifted_sum, -self.min_boundary_f / self.epsilon)
    }
}

/// Boundary Laplace integral by the trapezoid quadrature of `bq`.
pub fn boundary_laplace_integral(
    p: &dyn Potential,
    bq: &BoundaryQuadrature,
    epsilon: f64,
) -> BoundaryIntegral {
    assert!(epsilon > 0.0);
    let mut grad = vec![0.0; p.dim()];
    let f_min = bq
        .nodes
        .iter()
        .map(|n| p.value(n))
        .fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    for ((node, normal), w) in bq.nodes.iter().zip(&bq.normals).zip(&bq.weights) {
        p.gradient(node, &mut grad);
        let dn = grad[0] * normal[0] + grad[1] * normal[1];
        sum += w * dn * (-(p.value(node) - f_min) / epsilon).exp();
    }
    BoundaryIntegral {
        epsilon,
        min_boundary_f: f_min,
        shifted_sum: sum,
    }
}

fn prediction_from_integral(
    dim: usize,
    x0: &CriticalPoint,
    integral: LogValue,
    epsilon: f64,
    method: PredictionMethod,
) -> SharpPrediction {
    assert!(
        x0.det_hessian > 0.0,
        "the well must be a nondegenerate minimum"
    );
    let log_mean_exit = 0.5 * dim as f64 * (2.0 * PI * epsilon).ln()
        - 0.5 * x0.det_hessian.ln()
        - x0.value / epsilon
        - integral.ln();
    SharpPrediction {
        epsilon,
        log_mean_exit,
        boundary_integral: integral,
        method,
    }
}

/// The sharp mean-exit formula via the generic boundary quadrature.
pub fn sharp_mean_exit(
    p: &dyn Potential,
    bq: &BoundaryQuadrature,
    x0: &CriticalPoint,
    epsilon: f64,
) -> SharpPrediction {
    let integral = boundary_laplace_integral(p, bq, epsilon);
    prediction_from_integral(
        p.dim(),
        x0,
        integral.log_value(),
        epsilon,
        PredictionMethod::GenericQuadrature,
    )
}

/// Constant-boundary special case `f|_∂D ≡ f1`: the exponential factors out
/// of the integral, leaving `∫ ∂ₙf dσ`.
pub fn constant_boundary_mean_exit(
    p: &dyn Potential,
    bq: &BoundaryQuadrature,
    x0: &CriticalPoint,
    f1: f64,
    epsilon: f64,
) -> Result<SharpPrediction, AsymptoticsError> {
    let deviation = bq
        .nodes
        .iter()
        .map(|n| (p.value(n) - f1).abs())
        .fold(0.0, f64::max);
    if deviation > CONST_BOUNDARY_TOL {
        return Err(AsymptoticsError::NotConstantBoundary {
            deviation,
            tol: CONST_BOUNDARY_TOL,
        });
    }
    let mut grad = vec![0.0; p.dim()];
    let flux: f64 = bq
        .nodes
        .iter()
        .zip(&bq.normals)
        .zip(&bq.weights)
        .map(|((node, normal), w)| {
            p.gradient(node, &mut grad);
            w * (grad[0] * normal[0] + grad[1] * normal[1])
        })
        .sum();
    let integral = LogValue::from_parts(flux, -f1 / epsilon);
    Ok(prediction_from_integral(
        p.dim(),
        x0,
        integral,
        epsilon,
        PredictionMethod::ConstantBoundary,
    ))
}

/// A nondegenerate minimum of `f` restricted to the boundary.
#[derive(Debug, Clone)]
pub struct BoundaryMinimum {
    pub theta: f64,
    pub location: [f64; 2],
    pub f_value: f64,
    pub normal_derivative: f64,
    /// `d²(f∘σ)/ds²` in arclength; the 1×1 tangential Hessian determinant.
    pub tangential_hessian_det: f64,
}

fn boundary_trace(p: &dyn Potential, bq: &BoundaryQuadrature, theta: f64) -> (f64, f64, f64) {
    // value and first two θ-derivatives of f∘σ
    let s = bq.sigma(theta);
    let ds = bq.dsigma(theta);
    let d2s = bq.d2sigma(theta);
    let mut g = [0.0; 2];
    p.gradient(&s, &mut g);
    let h = p.hessian(&s);
    let val = p.value(&s);
    let d1 = g[0] * ds[0] + g[1] * ds[1];
    let d2 = ds[0] * (h[(0, 0)] * ds[0] + h[(0, 1)] * ds[1])
        + ds[1] * (h[(1, 0)] * ds[0] + h[(1, 1)] * ds[1])
        + g[0] * d2s[0]
        + g[1] * d2s[1];
    (val, d1, d2)
}

/// Scans the boundary trace of `f` for its global minima and refines each by
/// 1D Newton in the parameter.
pub fn find_boundary_minima(
    p: &dyn Potential,
    bq: &BoundaryQuadrature,
) -> Result<Vec<BoundaryMinimum>, AsymptoticsError> {
    let n = bq.n();
    let values: Vec<f64> = bq.nodes.iter().map(|node| p.value(node)).collect();
    let scale = 1.0 + values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let (min_v, max_v) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if max_v - min_v <= GLOBAL_MIN_TOL * scale {
        // constant trace: every point is critical with zero curvature
        return Err(AsymptoticsError::DegenerateBoundaryMinimum {
            theta: bq.thetas[0],
            curvature: 0.0,
        });
    }

    let mut minima: Vec<BoundaryMinimum> = Vec::new();
    for i in 0..n {
        let (prev, next) = (values[(i + n - 1) % n], values[(i + 1) % n]);
        if values[i] > prev || values[i] > next {
            continue;
        }
        if values[i] == prev && values[i] == next {
            continue; // interior of a flat run
        }
        // Newton refinement in θ
        let mut theta = bq.thetas[i];
        for _ in 0..60 {
            let (_, d1, d2) = boundary_trace(p, bq, theta);
            if d2.abs() < 1e-14 {
                break;
            }
            let step = d1 / d2;
            theta -= step;
            if step.abs() <= 1e-14 {
                break;
            }
        }
        theta = wrap_angle(theta);
        let (val, d1, d2) = boundary_trace(p, bq, theta);
        let span = 2.0 * PI / n as f64;
        if d1.abs() > 1e-8 * scale || d2 <= 0.0 {
            continue; // refined away from a true minimum (e.g. plateau edge)
        }
        let ds = bq.dsigma(theta);
        let speed2 = ds[0] * ds[0] + ds[1] * ds[1];
        let curvature = d2 / speed2;
        if curvature <= DEGENERACY_TOL {
            return Err(AsymptoticsError::DegenerateBoundaryMinimum { theta, curvature });
        }
        if minima
            .iter()
            .any(|m| (wrap_angle(m.theta - theta + PI) - PI).abs() <= 0.5 * span)
        {
            continue; // duplicate of an already-refined minimum
        }
        let loc = bq.sigma(theta);
        let mut g = [0.0; 2];
        p.gradient(&loc, &mut g);
        let mut nrm = [0.0; 2];
        // outward normal along the parametrization: rotate tangent by -90°
        let sp = speed2.sqrt();
        nrm[0] = ds[1] / sp;
        nrm[1] = -ds[0] / sp;
        // orientation fix: CCW parametrization has outward normal = (t_y, -t_x)
        let dn = g[0] * nrm[0] + g[1] * nrm[1];
        minima.push(BoundaryMinimum {
            theta,
            location: loc,
            f_value: val,
            normal_derivative: dn.abs(),
            tangential_hessian_det: curvature,
        });
    }

    // keep only global minima
    let best = minima
        .iter()
        .map(|m| m.f_value)
        .fold(f64::INFINITY, f64::min);
    minima.retain(|m| m.f_value <= best + GLOBAL_MIN_TOL * scale);
    minima.sort_by(|a, b| a.theta.partial_cmp(&b.theta).unwrap());
    Ok(minima)
}

/// Morse-boundary special case: Laplace's method at the finitely many
/// nondegenerate boundary minima.
///
/// The exit channels act in parallel, so their fluxes add at the rate level:
///
/// ```text
///   λ = e^{-Δ/ε} sqrt(det Hess f(x0)) / sqrt(2πε) · Σ_j ∂ₙf(z_j)/sqrt(κ_j)
/// ```
///
/// with `Δ = f(z_1) - f(x0)` and `κ_j` the tangential curvature at channel
/// `j`; the mean exit time is the reciprocal. For a single channel this is
/// the familiar prefactor formula.
pub fn morse_boundary_mean_exit(
    p: &dyn Potential,
    x0: &CriticalPoint,
    minima: &[BoundaryMinimum],
    epsilon: f64,
) -> Result<SharpPrediction, AsymptoticsError> {
    if minima.is_empty() {
        return Err(AsymptoticsError::InconsistentMinima);
    }
    let f1 = minima[0].f_value;
    let scale = 1.0 + f1.abs();
    for m in minima {
        if (m.f_value - f1).abs() > GLOBAL_MIN_TOL * scale {
            return Err(AsymptoticsError::InconsistentMinima);
        }
        if m.tangential_hessian_det <= DEGENERACY_TOL {
            return Err(AsymptoticsError::DegenerateBoundaryMinimum {
                theta: m.theta,
                curvature: m.tangential_hessian_det,
            });
        }
    }
    let channel_sum: f64 = minima
        .iter()
        .map(|m| m.normal_derivative / m.tangential_hessian_det.sqrt())
        .sum();
    let d = p.dim() as f64;
    // Laplace approximation of the boundary integral itself, for reporting:
    // (2πε)^((d-1)/2) Σ_j ∂ₙf/sqrt(κ_j) · e^{-f1/ε}
    let integral = LogValue::from_parts(
        (2.0 * PI * epsilon).powf(0.5 * (d - 1.0)) * channel_sum,
        -f1 / epsilon,
    );
    Ok(prediction_from_integral(
        p.dim(),
        x0,
        integral,
        epsilon,
        PredictionMethod::MorseBoundary,
    ))
}
