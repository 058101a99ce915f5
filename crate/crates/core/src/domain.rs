//! Bounded planar domains given by an implicit level set `D = {φ < 0}`,
//! boundary parametrization/quadrature, and the standing-hypothesis check
//! (inward-pointing gradient drift on the boundary, unique interior minimum).

use thiserror::Error;

use crate::numerics::PeriodicSpline;
use crate::potential::{
    find_critical_points, AxisBox, CriticalPoint, Polynomial, Potential,
};
use crate::tolerances::{
    BOUNDARY_PROJECTION_TOL, DEGENERATE_GRAD_TOL, GRAD_PHI_FLOOR, INTERIOR_MARGIN_FRAC,
};

use std::f64::consts::PI;

pub trait LevelSet: Send + Sync {
    fn phi(&self, x: &[f64]) -> f64;
    fn grad_phi(&self, x: &[f64], out: &mut [f64]);
}

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("boundary trace did not close after {steps} steps")]
    TraceFailure { steps: usize },
    #[error("boundary machinery is implemented for d = 2, got d = {dim}")]
    DimensionUnsupported { dim: usize },
    #[error("level-set gradient degenerate at a boundary point ({x:?})")]
    DegenerateGradient { x: Vec<f64> },
    #[error("need at least {min} boundary nodes, got {got}")]
    TooFewNodes { min: usize, got: usize },
}

#[derive(Debug, Clone, Copy)]
enum AnalyticBoundary {
    Circle { cx: f64, cy: f64, r: f64 },
    /// `x²/a² + y²/b² = 1`
    Ellipse { a: f64, b: f64 },
}

struct DiskLevelSet {
    cx: f64,
    cy: f64,
    r: f64,
}

impl LevelSet for DiskLevelSet {
    fn phi(&self, x: &[f64]) -> f64 {
        let (dx, dy) = (x[0] - self.cx, x[1] - self.cy);
        dx * dx + dy * dy - self.r * self.r
    }
    fn grad_phi(&self, x: &[f64], out: &mut [f64]) {
        out[0] = 2.0 * (x[0] - self.cx);
        out[1] = 2.0 * (x[1] - self.cy);
    }
}

struct EllipseLevelSet {
    a: f64,
    b: f64,
}

impl LevelSet for EllipseLevelSet {
    fn phi(&self, x: &[f64]) -> f64 {
        (x[0] / self.a).powi(2) + (x[1] / self.b).powi(2) - 1.0
    }
    fn grad_phi(&self, x: &[f64], out: &mut [f64]) {
        out[0] = 2.0 * x[0] / (self.a * self.a);
        out[1] = 2.0 * x[1] / (self.b * self.b);
    }
}

/// Polynomial level set, reusing the potential module's exact derivatives.
pub struct PolyLevelSet(pub Polynomial);

impl LevelSet for PolyLevelSet {
    fn phi(&self, x: &[f64]) -> f64 {
        self.0.value(x)
    }
    fn grad_phi(&self, x: &[f64], out: &mut [f64]) {
        self.0.gradient(x, out)
    }
}

/// A bounded open set `D = {φ < 0}` with a smooth boundary.
pub struct Domain {
    level: Box<dyn LevelSet>,
    pub bounding_box: AxisBox,
    analytic: Option<AnalyticBoundary>,
}

impl Domain {
    pub fn disk(center: [f64; 2], radius: f64) -> Self {
        assert!(radius > 0.0);
        let pad = 1.25 * radius;
        Self {
            level: Box::new(DiskLevelSet {
                cx: center[0],
                cy: center[1],
                r: radius,
            }),
            bounding_box: AxisBox::new(
                vec![center[0] - pad, center[1] - pad],
                vec![center[0] + pad, center[1] + pad],
            ),
            analytic: Some(AnalyticBoundary::Circle {
                cx: center[0],
                cy: center[1],
                r: radius,
            }),
        }
    }

    pub fn unit_disk() -> Self {
        Self::disk([0.0, 0.0], 1.0)
    }

    pub fn ellipse(a: f64, b: f64) -> Self {
        assert!(a > 0.0 && b > 0.0);
        Self {
            level: Box::new(EllipseLevelSet { a, b }),
            bounding_box: AxisBox::new(vec![-1.25 * a, -1.25 * b], vec![1.25 * a, 1.25 * b]),
            analytic: Some(AnalyticBoundary::Ellipse { a, b }),
        }
    }

    /// Generic implicit domain; the boundary will be traced numerically.
    pub fn implicit(level: impl LevelSet + 'static, bounding_box: AxisBox) -> Self {
        Self {
            level: Box::new(level),
            bounding_box,
            analytic: None,
        }
    }

    pub fn dim(&self) -> usize {
        2
    }

    pub fn phi(&self, x: &[f64]) -> f64 {
        self.level.phi(x)
    }

    pub fn grad_phi(&self, x: &[f64], out: &mut [f64]) {
        self.level.grad_phi(x, out)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.phi(x) < 0.0
    }

    /// First-order signed distance proxy `φ/|∇φ|` (negative inside).
    ///
    /// Where `|∇φ|` falls under the floor the raw `φ` is returned instead,
    /// which preserves the inside/outside sign; this only happens away from
    /// the boundary (e.g. at the center of `φ = |x|² - 1`). A degenerate
    /// gradient *on* the boundary is an error.
    pub fn signed_measure(&self, x: &[f64]) -> Result<f64, DomainError> {
        let mut g = [0.0; 2];
        self.grad_phi(x, &mut g);
        let phi = self.phi(x);
        let gn = (g[0] * g[0] + g[1] * g[1]).sqrt();
        if gn >= GRAD_PHI_FLOOR {
            return Ok(phi / gn);
        }
        if gn < DEGENERATE_GRAD_TOL && phi.abs() <= 1e-10 {
            return Err(DomainError::DegenerateGradient { x: x.to_vec() });
        }
        Ok(phi)
    }

    /// Newton projection of `x` onto the zero level set along `∇φ`.
    fn project_to_boundary(&self, x: &mut [f64; 2]) -> Result<(), DomainError> {
        let mut g = [0.0; 2];
        for _ in 0..60 {
            let phi = self.phi(x);
            if phi.abs() <= BOUNDARY_PROJECTION_TOL {
                return Ok(());
            }
            self.grad_phi(x, &mut g);
            let gn2 = g[0] * g[0] + g[1] * g[1];
            if gn2 < DEGENERATE_GRAD_TOL {
                return Err(DomainError::DegenerateGradient { x: x.to_vec() });
            }
            x[0] -= phi * g[0] / gn2;
            x[1] -= phi * g[1] / gn2;
        }
        // leave the last iterate; callers check |phi| where it matters
        Ok(())
    }
}

/// Boundary parametrization `θ ∈ [0, 2π) ↦ σ(θ)`.
enum BoundaryParam {
    Circle { cx: f64, cy: f64, r: f64 },
    Ellipse { a: f64, b: f64 },
    Spline { x: PeriodicSpline, y: PeriodicSpline },
}

/// Quadrature nodes, outward normals and trapezoid weights on `∂D`,
/// together with the periodic parametrization they came from.
pub struct BoundaryQuadrature {
    pub nodes: Vec<[f64; 2]>,
    pub normals: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub thetas: Vec<f64>,
    param: BoundaryParam,
}

impl BoundaryQuadrature {
    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    pub fn perimeter(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn sigma(&self, theta: f64) -> [f64; 2] {
        match &self.param {
            BoundaryParam::Circle { cx, cy, r } => {
                [cx + r * theta.cos(), cy + r * theta.sin()]
            }
            BoundaryParam::Ellipse { a, b } => [a * theta.cos(), b * theta.sin()],
            BoundaryParam::Spline { x, y } => [x.eval(theta), y.eval(theta)],
        }
    }

    pub fn dsigma(&self, theta: f64) -> [f64; 2] {
        match &self.param {
            BoundaryParam::Circle { r, .. } => [-r * theta.sin(), r * theta.cos()],
            BoundaryParam::Ellipse { a, b } => [-a * theta.sin(), b * theta.cos()],
            BoundaryParam::Spline { x, y } => [x.deriv(theta), y.deriv(theta)],
        }
    }

    pub fn d2sigma(&self, theta: f64) -> [f64; 2] {
        match &self.param {
            BoundaryParam::Circle { r, .. } => [-r * theta.cos(), -r * theta.sin()],
            BoundaryParam::Ellipse { a, b } => [-a * theta.cos(), -b * theta.sin()],
            BoundaryParam::Spline { x, y } => [x.deriv2(theta), y.deriv2(theta)],
        }
    }

    /// Parameter value of (a point near) the boundary, for exit binning.
    pub fn angle_of(&self, p: [f64; 2]) -> f64 {
        match &self.param {
            BoundaryParam::Circle { cx, cy, .. } => {
                wrap_angle((p[1] - cy).atan2(p[0] - cx))
            }
            BoundaryParam::Ellipse { a, b } => wrap_angle((p[1] / b).atan2(p[0] / a)),
            BoundaryParam::Spline { .. } => {
                // nearest node, then a few Newton steps on d/dθ |σ(θ)-p|²
                let mut best = (f64::INFINITY, 0.0);
                for (&th, node) in self.thetas.iter().zip(&self.nodes) {
                    let d2 = (node[0] - p[0]).powi(2) + (node[1] - p[1]).powi(2);
                    if d2 < best.0 {
                        best = (d2, th);
                    }
                }
                let mut th = best.1;
                for _ in 0..4 {
                    let s = self.sigma(th);
                    let ds = self.dsigma(th);
                    let d2s = self.d2sigma(th);
                    let r = [s[0] - p[0], s[1] - p[1]];
                    let num = r[0] * ds[0] + r[1] * ds[1];
                    let den = ds[0] * ds[0] + ds[1] * ds[1] + r[0] * d2s[0] + r[1] * d2s[1];
                    if den.abs() < 1e-14 {
                        break;
                    }
                    th -= num / den;
                }
                wrap_angle(th)
            }
        }
    }

    /// Smallest distance from `x` to the quadrature nodes.
    pub fn min_distance_to(&self, x: &[f64]) -> f64 {
        self.nodes
            .iter()
            .map(|n| ((n[0] - x[0]).powi(2) + (n[1] - x[1]).powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn wrap_angle(t: f64) -> f64 {
    let mut u = t % (2.0 * PI);
    if u < 0.0 {
        u += 2.0 * PI;
    }
    u
}

/// Builds the boundary quadrature: equispaced-in-parameter trapezoid nodes
/// for analytic boundaries, predictor–corrector marching along `{φ = 0}`
/// (resampled to equal arclength) for generic level sets.
pub fn build_boundary_quadrature(
    dom: &Domain,
    n_nodes: usize,
) -> Result<BoundaryQuadrature, DomainError> {
    if dom.dim() != 2 {
        return Err(DomainError::DimensionUnsupported { dim: dom.dim() });
    }
    if n_nodes < 16 {
        return Err(DomainError::TooFewNodes {
            min: 16,
            got: n_nodes,
        });
    }
    match dom.analytic {
        Some(AnalyticBoundary::Circle { cx, cy, r }) => {
            let mut q = BoundaryQuadrature {
                nodes: Vec::with_capacity(n_nodes),
                normals: Vec::with_capacity(n_nodes),
                weights: Vec::with_capacity(n_nodes),
                thetas: Vec::with_capacity(n_nodes),
                param: BoundaryParam::Circle { cx, cy, r },
            };
            for i in 0..n_nodes {
                let th = 2.0 * PI * i as f64 / n_nodes as f64;
                q.thetas.push(th);
                q.nodes.push([cx + r * th.cos(), cy + r * th.sin()]);
                q.normals.push([th.cos(), th.sin()]);
                q.weights.push(r * 2.0 * PI / n_nodes as f64);
            }
            Ok(q)
        }
        Some(AnalyticBoundary::Ellipse { a, b }) => {
            let mut q = BoundaryQuadrature {
                nodes: Vec::with_capacity(n_nodes),
                normals: Vec::with_capacity(n_nodes),
                weights: Vec::with_capacity(n_nodes),
                thetas: Vec::with_capacity(n_nodes),
                param: BoundaryParam::Ellipse { a, b },
            };
            for i in 0..n_nodes {
                let th = 2.0 * PI * i as f64 / n_nodes as f64;
                let node = [a * th.cos(), b * th.sin()];
                let speed = ((a * th.sin()).powi(2) + (b * th.cos()).powi(2)).sqrt();
                let mut nrm = [2.0 * node[0] / (a * a), 2.0 * node[1] / (b * b)];
                let nn = (nrm[0] * nrm[0] + nrm[1] * nrm[1]).sqrt();
                nrm = [nrm[0] / nn, nrm[1] / nn];
                q.thetas.push(th);
                q.nodes.push(node);
                q.normals.push(nrm);
                q.weights.push(speed * 2.0 * PI / n_nodes as f64);
            }
            Ok(q)
        }
        None => marched_quadrature(dom, n_nodes),
    }
}

fn marched_quadrature(dom: &Domain, n_nodes: usize) -> Result<BoundaryQuadrature, DomainError> {
    let diag = dom.bounding_box.diagonal();
    let ds = diag / 4000.0;

    // seed: coarse scan for the most-interior sample, then walk +x to a sign
    // change and project onto the zero set
    let bb = &dom.bounding_box;
    let mut seed = [0.0; 2];
    let mut best_phi = f64::INFINITY;
    for i in 0..32 {
        for j in 0..32 {
            let x = [
                bb.lo[0] + (i as f64 + 0.5) / 32.0 * (bb.hi[0] - bb.lo[0]),
                bb.lo[1] + (j as f64 + 0.5) / 32.0 * (bb.hi[1] - bb.lo[1]),
            ];
            let p = dom.phi(&x);
            if p < best_phi {
                best_phi = p;
                seed = x;
            }
        }
    }
    if best_phi >= 0.0 {
        return Err(DomainError::TraceFailure { steps: 0 });
    }
    let mut start = seed;
    let step = (bb.hi[0] - seed[0]) / 512.0;
    let mut prev = seed;
    for k in 1..=512 {
        let x = [seed[0] + k as f64 * step, seed[1]];
        if dom.phi(&x) >= 0.0 {
            // bisect between prev and x
            let (mut lo, mut hi) = (prev, x);
            for _ in 0..80 {
                let mid = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
                if dom.phi(&mid) < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            start = lo;
            break;
        }
        prev = x;
    }
    dom.project_to_boundary(&mut start)?;

    // predictor-corrector march, CCW (interior on the left)
    let mut pts: Vec<[f64; 2]> = vec![start];
    let mut cum: Vec<f64> = vec![0.0];
    let mut x = start;
    let mut g = [0.0; 2];
    let max_steps = 400_000;
    let mut closed = false;
    for step_i in 0..max_steps {
        dom.grad_phi(&x, &mut g);
        let gn = (g[0] * g[0] + g[1] * g[1]).sqrt();
        if gn < DEGENERATE_GRAD_TOL {
            return Err(DomainError::DegenerateGradient { x: x.to_vec() });
        }
        let tangent = [-g[1] / gn, g[0] / gn];
        let mut xn = [x[0] + ds * tangent[0], x[1] + ds * tangent[1]];
        dom.project_to_boundary(&mut xn)?;
        let chord = ((xn[0] - x[0]).powi(2) + (xn[1] - x[1]).powi(2)).sqrt();
        cum.push(cum.last().unwrap() + chord);
        pts.push(xn);
        x = xn;
        let back = ((x[0] - start[0]).powi(2) + (x[1] - start[1]).powi(2)).sqrt();
        if step_i > 10 && back < 0.75 * ds {
            closed = true;
            break;
        }
    }
    if !closed {
        return Err(DomainError::TraceFailure { steps: max_steps });
    }
    let closing = {
        let last = pts.last().unwrap();
        ((last[0] - start[0]).powi(2) + (last[1] - start[1]).powi(2)).sqrt()
    };
    let total = cum.last().unwrap() + closing;

    // resample to n equal arclength targets and re-project
    let mut nodes = Vec::with_capacity(n_nodes);
    for i in 0..n_nodes {
        let target = total * i as f64 / n_nodes as f64;
        let k = match cum.binary_search_by(|v| v.partial_cmp(&target).unwrap()) {
            Ok(k) => k,
            Err(k) => k.saturating_sub(1),
        };
        let k = k.min(pts.len() - 2);
        let seg = (cum[k + 1] - cum[k]).max(1e-300);
        let t = ((target - cum[k]) / seg).clamp(0.0, 1.0);
        let mut node = [
            pts[k][0] + t * (pts[k + 1][0] - pts[k][0]),
            pts[k][1] + t * (pts[k + 1][1] - pts[k][1]),
        ];
        dom.project_to_boundary(&mut node)?;
        nodes.push(node);
    }

    // CCW orientation via the shoelace sign
    let area: f64 = nodes
        .iter()
        .zip(nodes.iter().cycle().skip(1))
        .take(nodes.len())
        .map(|(p, q)| p[0] * q[1] - q[0] * p[1])
        .sum();
    if area < 0.0 {
        nodes[1..].reverse();
    }

    let xs = PeriodicSpline::new(2.0 * PI, nodes.iter().map(|p| p[0]).collect());
    let ys = PeriodicSpline::new(2.0 * PI, nodes.iter().map(|p| p[1]).collect());
    let param = BoundaryParam::Spline { x: xs, y: ys };

    let mut q = BoundaryQuadrature {
        nodes,
        normals: Vec::with_capacity(n_nodes),
        weights: Vec::with_capacity(n_nodes),
        thetas: (0..n_nodes)
            .map(|i| 2.0 * PI * i as f64 / n_nodes as f64)
            .collect(),
        param,
    };
    for i in 0..n_nodes {
        let node = q.nodes[i];
        dom.grad_phi(&node, &mut g);
        let gn = (g[0] * g[0] + g[1] * g[1]).sqrt();
        if gn < DEGENERATE_GRAD_TOL {
            return Err(DomainError::DegenerateGradient { x: node.to_vec() });
        }
        q.normals.push([g[0] / gn, g[1] / gn]);
        let ds_dt = q.dsigma(q.thetas[i]);
        let speed = (ds_dt[0] * ds_dt[0] + ds_dt[1] * ds_dt[1]).sqrt();
        q.weights.push(speed * 2.0 * PI / n_nodes as f64);
    }
    Ok(q)
}

/// Outcome of the standing-hypothesis check: `∂ₙf > 0` on `∂D`, a unique
/// nondegenerate interior minimum, and the interior minimum below the
/// boundary values. Failures are reported in the flags, never thrown.
#[derive(Debug)]
pub struct HypothesisReport {
    pub normal_derivative_min: f64,
    pub unique_minimum: bool,
    pub x0: Option<CriticalPoint>,
    pub interior_min_value: f64,
    pub boundary_min_value: f64,
    pub interior_critical_points: usize,
    pub passed: bool,
}

pub fn verify_hypothesis(
    p: &dyn Potential,
    dom: &Domain,
    bq: &BoundaryQuadrature,
) -> HypothesisReport {
    let mut grad = vec![0.0; p.dim()];
    let mut nd_min = f64::INFINITY;
    let mut boundary_min = f64::INFINITY;
    for (node, normal) in bq.nodes.iter().zip(&bq.normals) {
        p.gradient(node, &mut grad);
        nd_min = nd_min.min(grad[0] * normal[0] + grad[1] * normal[1]);
        boundary_min = boundary_min.min(p.value(node));
    }

    let margin = INTERIOR_MARGIN_FRAC * dom.bounding_box.diagonal();
    let interior: Vec<CriticalPoint> =
        match find_critical_points(p, &dom.bounding_box, 64) {
            Ok(points) => points
                .into_iter()
                .filter(|cp| {
                    matches!(dom.signed_measure(cp.location.as_slice()), Ok(s) if s <= -margin)
                })
                .collect(),
            Err(_) => Vec::new(),
        };

    let x0 = interior.first().cloned();
    let unique_minimum = interior.len() == 1 && interior[0].is_minimum();
    let interior_min_value = x0.as_ref().map_or(f64::INFINITY, |cp| cp.value);
    let passed = nd_min > 0.0
        && unique_minimum
        && x0.as_ref().is_some_and(|cp| cp.nondegenerate)
        && interior_min_value < boundary_min;
    HypothesisReport {
        normal_derivative_min: nd_min,
        unique_minimum,
        x0,
        interior_min_value,
        boundary_min_value: boundary_min,
        interior_critical_points: interior.len(),
        passed,
    }
}
