//! Potential functions with exact derivative oracles and critical-point
//! location/classification.
//!
//! Everything downstream (boundary integrals, characteristics, the discrete
//! generator) consumes a `Potential` through value/gradient/Hessian calls, so
//! the built-in families supply analytic derivatives. An eval-only function
//! can be wrapped in [`FiniteDiffPotential`], which substitutes centered
//! differences; the inaccuracy is then explicit rather than silent.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::tolerances::{DEDUP_TOL, DEGENERACY_TOL, MAX_NEWTON_ITERS, NEWTON_TOL};

pub trait Potential: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    /// Writes `∇f(x)` into `out` (`out.len() == dim`).
    fn gradient(&self, x: &[f64], out: &mut [f64]);
    fn hessian(&self, x: &[f64]) -> DMatrix<f64>;

    fn gradient_vec(&self, x: &[f64]) -> DVector<f64> {
        let mut g = DVector::zeros(self.dim());
        self.gradient(x, g.as_mut_slice());
        g
    }

    fn gradient_norm(&self, x: &[f64]) -> f64 {
        let mut g = vec![0.0; self.dim()];
        self.gradient(x, &mut g);
        g.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Error)]
pub enum PotentialError {
    #[error(
        "no Newton start converged within {max_iters} iterations \
         ({n_starts} starts, best residual {best_residual:.3e})"
    )]
    NoConvergence {
        max_iters: usize,
        n_starts: usize,
        best_residual: f64,
        diagnostics: Vec<StartDiagnostic>,
    },
    #[error("point is not critical: |grad| = {grad_norm:.3e} exceeds {tol:.1e}")]
    NotCritical { grad_norm: f64, tol: f64 },
}

/// Per-start Newton outcome, reported with [`PotentialError::NoConvergence`].
#[derive(Debug, Clone)]
pub struct StartDiagnostic {
    pub start: Vec<f64>,
    pub iterations: usize,
    pub final_residual: f64,
}

/// Isotropic quadratic well `f(x) = c |x|^2 / 2`.
#[derive(Debug, Clone)]
pub struct IsoQuadratic {
    dim: usize,
    curvature: f64,
}

impl IsoQuadratic {
    pub fn new(dim: usize, curvature: f64) -> Self {
        assert!(curvature > 0.0);
        Self { dim, curvature }
    }

    pub fn unit(dim: usize) -> Self {
        Self::new(dim, 1.0)
    }
}

impl Potential for IsoQuadratic {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &[f64]) -> f64 {
        0.5 * self.curvature * x.iter().map(|v| v * v).sum::<f64>()
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(x) {
            *o = self.curvature * v;
        }
    }
    fn hessian(&self, _x: &[f64]) -> DMatrix<f64> {
        DMatrix::identity(self.dim, self.dim) * self.curvature
    }
}

/// Anisotropic quadratic `f(x) = Σ a_i x_i^2 / 2` with Hessian `diag(a)`.
#[derive(Debug, Clone)]
pub struct AnisoQuadratic {
    hess_diag: Vec<f64>,
}

impl AnisoQuadratic {
    pub fn new(hess_diag: Vec<f64>) -> Self {
        assert!(!hess_diag.is_empty());
        Self { hess_diag }
    }
}

impl Potential for AnisoQuadratic {
    fn dim(&self) -> usize {
        self.hess_diag.len()
    }
    fn value(&self, x: &[f64]) -> f64 {
        0.5 * x
            .iter()
            .zip(&self.hess_diag)
            .map(|(v, a)| a * v * v)
            .sum::<f64>()
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        for ((o, v), a) in out.iter_mut().zip(x).zip(&self.hess_diag) {
            *o = a * v;
        }
    }
    fn hessian(&self, _x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_vec(self.hess_diag.clone()))
    }
}

/// Sparse polynomial `f(x) = Σ c_k Π_i x_i^{p_{k,i}}` with exact derivatives.
#[derive(Debug, Clone)]
pub struct Polynomial {
    dim: usize,
    terms: Vec<(f64, Vec<u32>)>,
}

impl Polynomial {
    pub fn new(dim: usize, terms: Vec<(f64, Vec<u32>)>) -> Self {
        for (_, powers) in &terms {
            assert_eq!(powers.len(), dim, "term power list must match dim");
        }
        Self { dim, terms }
    }

    /// The planar double well `(x^2 - 1)^2 + y^2`.
    pub fn double_well() -> Self {
        Self::new(
            2,
            vec![
                (1.0, vec![4, 0]),
                (-2.0, vec![2, 0]),
                (1.0, vec![0, 0]),
                (1.0, vec![0, 2]),
            ],
        )
    }

    fn monomial(x: &[f64], powers: &[u32]) -> f64 {
        x.iter()
            .zip(powers)
            .map(|(v, &p)| v.powi(p as i32))
            .product()
    }
}

impl Potential for Polynomial {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(c, p)| c * Self::monomial(x, p))
            .sum()
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (c, powers) in &self.terms {
            for i in 0..self.dim {
                let p = powers[i];
                if p == 0 {
                    continue;
                }
                let mut term = c * p as f64;
                for (j, (&v, &q)) in x.iter().zip(powers).enumerate() {
                    let e = if j == i { q - 1 } else { q };
                    term *= v.powi(e as i32);
                }
                out[i] += term;
            }
        }
    }
    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let d = self.dim;
        let mut h = DMatrix::zeros(d, d);
        for (c, powers) in &self.terms {
            for i in 0..d {
                for j in i..d {
                    let (pi, pj) = (powers[i], powers[j]);
                    let coeff = if i == j {
                        if pi < 2 {
                            continue;
                        }
                        c * (pi as f64) * (pi as f64 - 1.0)
                    } else {
                        if pi == 0 || pj == 0 {
                            continue;
                        }
                        c * (pi as f64) * (pj as f64)
                    };
                    let mut term = coeff;
                    for (k, (&v, &q)) in x.iter().zip(powers).enumerate() {
                        let mut e = q;
                        if k == i {
                            e -= 1;
                        }
                        if k == j {
                            e -= 1;
                        }
                        term *= v.powi(e as i32);
                    }
                    h[(i, j)] += term;
                    if i != j {
                        h[(j, i)] += term;
                    }
                }
            }
        }
        h
    }
}

/// Centered finite-difference fallback around an eval-only function.
///
/// Step sizes follow the usual optimal-rounding choices: `h = eps^(1/3) *
/// scale` for the gradient and `eps^(1/4) * scale` for the Hessian.
pub struct FiniteDiffPotential<F: Fn(&[f64]) -> f64 + Send + Sync> {
    dim: usize,
    f: F,
    scale: f64,
}

impl<F: Fn(&[f64]) -> f64 + Send + Sync> FiniteDiffPotential<F> {
    pub fn new(dim: usize, scale: f64, f: F) -> Self {
        assert!(scale > 0.0);
        Self { dim, f, scale }
    }
}

impl<F: Fn(&[f64]) -> f64 + Send + Sync> Potential for FiniteDiffPotential<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let h = f64::EPSILON.cbrt() * self.scale;
        let mut xp = x.to_vec();
        for i in 0..self.dim {
            xp[i] = x[i] + h;
            let fp = (self.f)(&xp);
            xp[i] = x[i] - h;
            let fm = (self.f)(&xp);
            xp[i] = x[i];
            out[i] = (fp - fm) / (2.0 * h);
        }
    }
    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let h = f64::EPSILON.powf(0.25) * self.scale;
        let d = self.dim;
        let mut m = DMatrix::zeros(d, d);
        let f0 = (self.f)(x);
        let mut xp = x.to_vec();
        for i in 0..d {
            xp[i] = x[i] + h;
            let fp = (self.f)(&xp);
            xp[i] = x[i] - h;
            let fm = (self.f)(&xp);
            xp[i] = x[i];
            m[(i, i)] = (fp - 2.0 * f0 + fm) / (h * h);
        }
        for i in 0..d {
            for j in i + 1..d {
                let mut probe = |si: f64, sj: f64| {
                    xp[i] = x[i] + si * h;
                    xp[j] = x[j] + sj * h;
                    let v = (self.f)(&xp);
                    xp[i] = x[i];
                    xp[j] = x[j];
                    v
                };
                let v = (probe(1.0, 1.0) - probe(1.0, -1.0) - probe(-1.0, 1.0)
                    + probe(-1.0, -1.0))
                    / (4.0 * h * h);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }
}

/// Axis-aligned box, used for Newton multistarts and grid embedding.
#[derive(Debug, Clone)]
pub struct AxisBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl AxisBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        assert_eq!(lo.len(), hi.len());
        assert!(
            lo.iter().zip(&hi).all(|(a, b)| a < b),
            "box must be nonempty"
        );
        Self { lo, hi }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn diagonal(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| (b - a) * (b - a))
            .sum::<f64>()
            .sqrt()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (a, b))| v >= a && v <= b)
    }

    /// Point of the scaled-about-center copy of the box; `t` in [0,1]^d.
    fn lerp(&self, t: &[f64]) -> Vec<f64> {
        t.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(u, (a, b))| a + u * (b - a))
            .collect()
    }
}

/// A classified critical point of the potential.
#[derive(Debug, Clone)]
pub struct CriticalPoint {
    pub location: DVector<f64>,
    pub value: f64,
    pub hessian: DMatrix<f64>,
    pub det_hessian: f64,
    pub min_eigenvalue: f64,
    pub nondegenerate: bool,
}

impl CriticalPoint {
    pub fn is_minimum(&self) -> bool {
        self.min_eigenvalue > 0.0
    }
}

/// Van der Corput radical inverse, the workhorse of the Halton starts.
fn radical_inverse(mut n: usize, base: usize) -> f64 {
    let mut inv = 1.0 / base as f64;
    let mut r = 0.0;
    while n > 0 {
        r += (n % base) as f64 * inv;
        n /= base;
        inv /= base as f64;
    }
    r
}

const HALTON_BASES: [usize; 6] = [2, 3, 5, 7, 11, 13];

/// Multi-start Newton search for all critical points of `p` inside `box_`.
///
/// Starts are a Halton low-discrepancy set; converged points are deduplicated
/// and returned sorted by `f`-value.
pub fn find_critical_points(
    p: &dyn Potential,
    box_: &AxisBox,
    n_starts: usize,
) -> Result<Vec<CriticalPoint>, PotentialError> {
    assert!(n_starts >= 1, "need at least one start");
    assert_eq!(box_.dim(), p.dim());
    let d = p.dim();
    assert!(d <= HALTON_BASES.len(), "dimension too large for starts");

    let mut found: Vec<DVector<f64>> = Vec::new();
    let mut diagnostics = Vec::new();
    let mut best_residual = f64::INFINITY;

    for s in 0..n_starts {
        let t: Vec<f64> = (0..d).map(|i| radical_inverse(s + 1, HALTON_BASES[i])).collect();
        let start = box_.lerp(&t);
        let mut x = DVector::from_vec(start.clone());
        let mut residual = f64::INFINITY;
        let mut iters = 0;
        let mut converged = false;
        for k in 0..MAX_NEWTON_ITERS {
            iters = k + 1;
            let g = p.gradient_vec(x.as_slice());
            residual = g.norm();
            if residual <= NEWTON_TOL {
                converged = true;
                break;
            }
            let h = p.hessian(x.as_slice());
            let Some(step) = h.lu().solve(&(-&g)) else {
                break; // singular Hessian at the iterate
            };
            x += step;
            // abandon runaways: more than one box diagonal outside
            if !box_inflated_contains(box_, x.as_slice()) {
                break;
            }
        }
        best_residual = best_residual.min(residual);
        if converged {
            if !found
                .iter()
                .any(|y| (&x - y).norm() <= DEDUP_TOL)
            {
                found.push(x);
            }
        } else {
            diagnostics.push(StartDiagnostic {
                start,
                iterations: iters,
                final_residual: residual,
            });
        }
    }

    if found.is_empty() {
        return Err(PotentialError::NoConvergence {
            max_iters: MAX_NEWTON_ITERS,
            n_starts,
            best_residual,
            diagnostics,
        });
    }

    let mut points: Vec<CriticalPoint> = found
        .into_iter()
        .map(|x| classify(p, x.as_slice()).expect("converged point must be critical"))
        .collect();
    points.sort_by(|a, b| a.value.partial_cmp(&b.value).expect("NaN f-value"));
    Ok(points)
}

fn box_inflated_contains(b: &AxisBox, x: &[f64]) -> bool {
    x.iter().zip(b.lo.iter().zip(&b.hi)).all(|(v, (a, c))| {
        let w = c - a;
        *v >= a - w && *v <= c + w
    })
}

/// Classifies a critical point via a symmetric eigendecomposition of the
/// Hessian. Fails with `NotCritical` when `|∇f|` exceeds the Newton tolerance.
pub fn classify(p: &dyn Potential, x: &[f64]) -> Result<CriticalPoint, PotentialError> {
    let grad_norm = p.gradient_norm(x);
    if grad_norm > NEWTON_TOL {
        return Err(PotentialError::NotCritical {
            grad_norm,
            tol: NEWTON_TOL,
        });
    }
    let h_raw = p.hessian(x);
    let h = (&h_raw + h_raw.transpose()) * 0.5;
    let eig = h.clone().symmetric_eigen();
    let det = eig.eigenvalues.iter().product();
    let min_ev = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    Ok(CriticalPoint {
        location: DVector::from_column_slice(x),
        value: p.value(x),
        hessian: h,
        det_hessian: det,
        min_eigenvalue: min_ev,
        nondegenerate: det.abs() > DEGENERACY_TOL,
    })
}
