//! Boundary eikonal problem and tubular coordinates (d = 2).
//!
//! The eikonal solution Φ near `∂D` satisfies `|∇Φ|² = |∇f|²` with boundary
//! data `Φ = f` and `∂ₙΦ = -∂ₙf`. It is computed by the method of
//! characteristics for the Hamiltonian `H(x, p) = |p|² - |∇f(x)|²`:
//!
//! ```text
//!   ẋ = 2p,   ṗ = 2 Hess f(x) ∇f(x),   Φ̇ = 2|p|²,
//!   x(0) = z,  p(0) = ∇f(z) - 2 ∂ₙf(z) n(z),  Φ(0) = f(z).
//! ```
//!
//! Ray shooting encodes the sign-flipped normal data exactly in `p(0)`,
//! which a fast-marching grid would have to fake. `H ≡ 0` along exact rays,
//! so the measured drift `||p|² - |∇f|²|` doubles as the integration error.
//!
//! The splitting `f± = (Φ ± f)/2` defines the depth coordinate
//! `x_d = f_-` and the tube `V_δ = {0 ≤ f_- ≤ δ}`. Rays reparametrized by
//! depth give a chart `X(θ, x_d)` of the tube; the transverse fibers
//! `Ψ(z, x_d)` (integral curves of `∇f_-/|∇f_-|²`) are integrated in chart
//! coordinates. Differencing neighboring fibers yields the chart Jacobian
//! and the metric entry `(G)_dd`, whose boundary values must satisfy
//! `jac Ψ(z,0) ∂ₙf(z) = 1` and `(G)_dd(z,0) ∂ₙf(z)² = 1`.

use rayon::prelude::*;
use thiserror::Error;

use crate::domain::{BoundaryQuadrature, Domain};
use crate::numerics::{rk45_adaptive, PeriodicSpline, StepControl};
use crate::potential::Potential;
use crate::tolerances::{HAMILTONIAN_DRIFT_FACTOR, ODE_TOL};

use std::f64::consts::PI;

#[derive(Debug, Error)]
pub enum EikonalError {
    #[error("anchor not usable: |φ| = {phi:.2e}, ∂ₙf = {dnf:.3e}")]
    InvalidAnchor { phi: f64, dnf: f64 },
    #[error("Hamiltonian drift {drift:.3e} at t = {t:.4} exceeds the usable-ray bound")]
    HamiltonianDrift { t: f64, drift: f64 },
    #[error("ray left the bounding box at t = {t:.4}")]
    LeftTube { t: f64 },
    #[error("depth not strictly increasing along ray {node}")]
    MonotonicityFailure { node: usize },
    #[error("ray {node} reached depth {reached:.4} < requested {requested:.4}")]
    RayTooShallow {
        node: usize,
        reached: f64,
        requested: f64,
    },
    #[error("neighboring ray tubes overlap near depth {level_depth:.4}; delta too large")]
    RayCrossing { level_depth: f64 },
}

/// One accepted integrator step along a characteristic.
#[derive(Debug, Clone, Copy)]
pub struct RaySample {
    pub t: f64,
    pub position: [f64; 2],
    pub momentum: [f64; 2],
    pub phi: f64,
    /// depth coordinate `f_- = (Φ - f)/2`
    pub depth: f64,
    /// time derivatives, for Hermite interpolation
    d_position: [f64; 2],
    d_momentum: [f64; 2],
    d_phi: f64,
    d_depth: f64,
}

/// A characteristic ray shot inward from a boundary anchor.
#[derive(Debug, Clone)]
pub struct CharacteristicRay {
    pub anchor: [f64; 2],
    pub anchor_theta: f64,
    pub samples: Vec<RaySample>,
    pub t_max: f64,
    pub max_hamiltonian_drift: f64,
}

fn hermite(t0: f64, y0: f64, d0: f64, t1: f64, y1: f64, d1: f64, t: f64) -> f64 {
    let h = t1 - t0;
    let s = (t - t0) / h;
    let (s2, s3) = (s * s, s * s * s);
    y0 * (2.0 * s3 - 3.0 * s2 + 1.0)
        + d0 * h * (s3 - 2.0 * s2 + s)
        + y1 * (-2.0 * s3 + 3.0 * s2)
        + d1 * h * (s3 - s2)
}

impl CharacteristicRay {
    pub fn max_depth(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.depth)
    }

    fn check_monotone(&self) -> bool {
        self.samples.windows(2).all(|w| w[1].depth > w[0].depth)
    }

    /// Ray state at prescribed depth, by monotone lookup and cubic Hermite
    /// interpolation in `t` within the bracketing integrator step.
    pub fn state_at_depth(&self, depth: f64) -> ([f64; 2], [f64; 2], f64) {
        let n = self.samples.len();
        assert!(n >= 2, "ray too short");
        let k = match self
            .samples
            .binary_search_by(|s| s.depth.partial_cmp(&depth).unwrap())
        {
            Ok(k) => k.min(n - 2),
            Err(k) => k.clamp(1, n - 1) - 1,
        };
        let (a, b) = (&self.samples[k], &self.samples[k + 1]);
        // invert the depth Hermite for t*(depth) by Newton, seeded linearly
        let mut t = if (b.depth - a.depth).abs() > 0.0 {
            a.t + (depth - a.depth) / (b.depth - a.depth) * (b.t - a.t)
        } else {
            a.t
        };
        for _ in 0..30 {
            let d = hermite(a.t, a.depth, a.d_depth, b.t, b.depth, b.d_depth, t);
            let dd = {
                // derivative of the depth Hermite: differentiate via small
                // closed form using the endpoint rates
                let h = b.t - a.t;
                let s = (t - a.t) / h;
                let (s2,) = (s * s,);
                a.depth * (6.0 * s2 - 6.0 * s) / h
                    + a.d_depth * (3.0 * s2 - 4.0 * s + 1.0)
                    + b.depth * (-6.0 * s2 + 6.0 * s) / h
                    + b.d_depth * (3.0 * s2 - 2.0 * s)
            };
            if dd.abs() < 1e-300 {
                break;
            }
            let step = (d - depth) / dd;
            t -= step;
            t = t.clamp(a.t, b.t);
            if step.abs() <= 1e-15 * (1.0 + t.abs()) {
                break;
            }
        }
        let pos = [
            hermite(a.t, a.position[0], a.d_position[0], b.t, b.position[0], b.d_position[0], t),
            hermite(a.t, a.position[1], a.d_position[1], b.t, b.position[1], b.d_position[1], t),
        ];
        let mom = [
            hermite(a.t, a.momentum[0], a.d_momentum[0], b.t, b.momentum[0], b.d_momentum[0], t),
            hermite(a.t, a.momentum[1], a.d_momentum[1], b.t, b.momentum[1], b.d_momentum[1], t),
        ];
        let phi = hermite(a.t, a.phi, a.d_phi, b.t, b.phi, b.d_phi, t);
        (pos, mom, phi)
    }
}

/// Shoots the characteristic from boundary point `z` until `t_max`.
pub fn shoot_ray(
    p: &dyn Potential,
    dom: &Domain,
    z: [f64; 2],
    t_max: f64,
) -> Result<CharacteristicRay, EikonalError> {
    shoot_ray_impl(p, dom, z, 0.0, t_max, None)
}

/// As [`shoot_ray`], stopping once `f_-` reaches `stop_depth` (or the ray
/// stalls near an interior critical point).
pub fn shoot_ray_to_depth(
    p: &dyn Potential,
    dom: &Domain,
    z: [f64; 2],
    anchor_theta: f64,
    stop_depth: f64,
    t_cap: f64,
) -> Result<CharacteristicRay, EikonalError> {
    shoot_ray_impl(p, dom, z, anchor_theta, t_cap, Some(stop_depth))
}

fn shoot_ray_impl(
    p: &dyn Potential,
    dom: &Domain,
    z: [f64; 2],
    anchor_theta: f64,
    t_max: f64,
    stop_depth: Option<f64>,
) -> Result<CharacteristicRay, EikonalError> {
    let phi_z = dom.phi(&z);
    let mut nrm = [0.0; 2];
    dom.grad_phi(&z, &mut nrm);
    let gn = (nrm[0] * nrm[0] + nrm[1] * nrm[1]).sqrt();
    let mut grad = [0.0; 2];
    p.gradient(&z, &mut grad);
    if phi_z.abs() > 1e-8 || gn < 1e-12 {
        return Err(EikonalError::InvalidAnchor {
            phi: phi_z,
            dnf: f64::NAN,
        });
    }
    nrm = [nrm[0] / gn, nrm[1] / gn];
    let dnf = grad[0] * nrm[0] + grad[1] * nrm[1];
    if dnf <= 0.0 {
        return Err(EikonalError::InvalidAnchor { phi: phi_z, dnf });
    }

    let f_z = p.value(&z);
    let y0 = [
        z[0],
        z[1],
        grad[0] - 2.0 * dnf * nrm[0],
        grad[1] - 2.0 * dnf * nrm[1],
        f_z,
    ];

    let rhs = |_t: f64, y: &[f64; 5]| -> [f64; 5] {
        let x = [y[0], y[1]];
        let pm = [y[2], y[3]];
        let mut g = [0.0; 2];
        p.gradient(&x, &mut g);
        let h = p.hessian(&x);
        [
            2.0 * pm[0],
            2.0 * pm[1],
            2.0 * (h[(0, 0)] * g[0] + h[(0, 1)] * g[1]),
            2.0 * (h[(1, 0)] * g[0] + h[(1, 1)] * g[1]),
            2.0 * (pm[0] * pm[0] + pm[1] * pm[1]),
        ]
    };

    let mut samples: Vec<RaySample> = Vec::with_capacity(64);
    let mut max_drift = 0.0f64;
    let mut failure: Option<EikonalError> = None;
    let bb = &dom.bounding_box;

    rk45_adaptive(rhs, 0.0, y0, t_max, ODE_TOL, 0.005, |step| {
        let x = [step.y[0], step.y[1]];
        let pm = [step.y[2], step.y[3]];
        let mut g = [0.0; 2];
        p.gradient(&x, &mut g);
        let fx = p.value(&x);
        let h_val = (pm[0] * pm[0] + pm[1] * pm[1]) - (g[0] * g[0] + g[1] * g[1]);
        max_drift = max_drift.max(h_val.abs());
        if h_val.abs() > HAMILTONIAN_DRIFT_FACTOR * ODE_TOL {
            failure = Some(EikonalError::HamiltonianDrift {
                t: step.t,
                drift: h_val.abs(),
            });
            return StepControl::Stop;
        }
        if !bb.contains(&x) {
            // depth-targeted rays are simply truncated where the eikonal
            // region ends; the chart builder reports them as too shallow
            if stop_depth.is_none() {
                failure = Some(EikonalError::LeftTube { t: step.t });
            }
            return StepControl::Stop;
        }
        if stop_depth.is_some() && step.t > 0.0 && dom.phi(&x) >= 0.0 {
            // crossed back out of the closure of D: past the cut locus,
            // no longer part of the boundary layer
            return StepControl::Stop;
        }
        let depth = (step.y[4] - fx) / 2.0;
        let d_depth = (pm[0] * pm[0] + pm[1] * pm[1]) - (g[0] * pm[0] + g[1] * pm[1]);
        samples.push(RaySample {
            t: step.t,
            position: x,
            momentum: pm,
            phi: step.y[4],
            depth,
            d_position: [step.dy[0], step.dy[1]],
            d_momentum: [step.dy[2], step.dy[3]],
            d_phi: step.dy[4],
            d_depth,
        });
        if let Some(target) = stop_depth {
            if depth >= target {
                return StepControl::Stop;
            }
            // stalled: the ray converges to an interior critical point and
            // will never gain depth at a useful rate
            if d_depth.abs() < 1e-10 && step.t > 1.0 {
                return StepControl::Stop;
            }
        }
        StepControl::Continue
    });

    if let Some(err) = failure {
        return Err(err);
    }
    Ok(CharacteristicRay {
        anchor: z,
        anchor_theta,
        samples,
        t_max,
        max_hamiltonian_drift: max_drift,
    })
}

/// Fields tabulated on the (node, depth-level) grid.
struct LevelTables {
    /// `X(θ_j, s_l)`: on-ray positions
    pos: Vec<Vec<[f64; 2]>>,
    /// `∇Φ = p` transported along rays
    mom: Vec<Vec<[f64; 2]>>,
    phi: Vec<Vec<f64>>,
    /// `dX/d(depth) = 2p / (|p|² - ∇f·p)`
    dpos: Vec<Vec<[f64; 2]>>,
}

/// Periodic splines of one scalar field at every depth level.
struct LevelField {
    splines: Vec<PeriodicSpline>,
    h_level: f64,
}

impl LevelField {
    fn new(values: &[Vec<f64>], n_nodes: usize, delta: f64) -> Self {
        // values indexed [level][node]
        let m = values.len() - 1;
        let splines = values
            .iter()
            .map(|row| {
                debug_assert_eq!(row.len(), n_nodes);
                PeriodicSpline::new(2.0 * PI, row.clone())
            })
            .collect();
        Self {
            splines,
            h_level: delta / m as f64,
        }
    }

    /// 4-point Lagrange cubic across levels, periodic spline across θ.
    fn eval(&self, theta: f64, s: f64) -> f64 {
        self.combine(s, |l| self.splines[l].eval(theta))
    }

    fn eval_dtheta(&self, theta: f64, s: f64) -> f64 {
        self.combine(s, |l| self.splines[l].deriv(theta))
    }

    fn combine<F: Fn(usize) -> f64>(&self, s: f64, level_value: F) -> f64 {
        let m = self.splines.len() - 1;
        let u = (s / self.h_level).clamp(0.0, m as f64);
        let base = (u.floor() as usize).min(m.saturating_sub(1));
        if m < 3 {
            // linear fallback for degenerate level counts
            let l0 = base.min(m - 1);
            let w = u - l0 as f64;
            return (1.0 - w) * level_value(l0) + w * level_value(l0 + 1);
        }
        let i0 = base.saturating_sub(1).min(m - 3);
        let t = u - i0 as f64; // in [0, 3]
        let mut acc = 0.0;
        for k in 0..4 {
            let mut w = 1.0;
            for j in 0..4 {
                if j != k {
                    w *= (t - j as f64) / (k as f64 - j as f64);
                }
            }
            acc += w * level_value(i0 + k);
        }
        acc
    }
}

/// Tubular coordinates of the boundary layer `V_δ`.
pub struct TubularChart {
    pub delta: f64,
    pub n_nodes: usize,
    pub n_levels: usize,
    pub thetas: Vec<f64>,
    pub levels: Vec<f64>,
    /// `∂ₙf` at the anchors
    pub normal_derivatives: Vec<f64>,
    /// `|σ'(θ_j)|`, converting θ-derivatives to surface measure
    pub node_speeds: Vec<f64>,
    pub rays: Vec<CharacteristicRay>,
    pub max_hamiltonian_drift: f64,

    // ray-chart interpolants
    field_pos_x: LevelField,
    field_pos_y: LevelField,
    field_mom_x: LevelField,
    field_mom_y: LevelField,
    field_phi: LevelField,
    field_dpos_x: LevelField,
    field_dpos_y: LevelField,

    // fiber tables, indexed [node][level]
    fiber_theta: Vec<Vec<f64>>,
    fiber_pos: Vec<Vec<[f64; 2]>>,
    /// `jac Ψ` in surface measure
    fiber_jac: Vec<Vec<f64>>,
    /// `(G)_dd = 1/|∇f_-|²`
    fiber_gdd: Vec<Vec<f64>>,
}

fn wrap_index(i: isize, n: usize) -> usize {
    i.rem_euclid(n as isize) as usize
}

impl TubularChart {
    /// On-ray position `X(θ, x_d)`.
    pub fn ray_position(&self, theta: f64, x_d: f64) -> [f64; 2] {
        [
            self.field_pos_x.eval(theta, x_d),
            self.field_pos_y.eval(theta, x_d),
        ]
    }

    /// Transported eikonal gradient `∇Φ` at chart coordinates.
    pub fn momentum(&self, theta: f64, x_d: f64) -> [f64; 2] {
        [
            self.field_mom_x.eval(theta, x_d),
            self.field_mom_y.eval(theta, x_d),
        ]
    }

    pub fn eikonal_value(&self, theta: f64, x_d: f64) -> f64 {
        self.field_phi.eval(theta, x_d)
    }

    /// `f_+ = (f + Φ)/2` at a tube point with known chart coordinates.
    pub fn f_plus(&self, p: &dyn Potential, theta: f64, x_d: f64) -> f64 {
        let x = self.ray_position(theta, x_d);
        0.5 * (p.value(&x) + self.eikonal_value(theta, x_d))
    }

    /// `f_- = (Φ - f)/2` at a tube point with known chart coordinates.
    pub fn f_minus(&self, p: &dyn Potential, theta: f64, x_d: f64) -> f64 {
        let x = self.ray_position(theta, x_d);
        0.5 * (self.eikonal_value(theta, x_d) - p.value(&x))
    }

    pub fn grad_f_minus(&self, p: &dyn Potential, theta: f64, x_d: f64) -> [f64; 2] {
        let x = self.ray_position(theta, x_d);
        let mut g = [0.0; 2];
        p.gradient(&x, &mut g);
        let mom = self.momentum(theta, x_d);
        [0.5 * (mom[0] - g[0]), 0.5 * (mom[1] - g[1])]
    }

    pub fn grad_f_plus(&self, p: &dyn Potential, theta: f64, x_d: f64) -> [f64; 2] {
        let x = self.ray_position(theta, x_d);
        let mut g = [0.0; 2];
        p.gradient(&x, &mut g);
        let mom = self.momentum(theta, x_d);
        [0.5 * (mom[0] + g[0]), 0.5 * (mom[1] + g[1])]
    }

    /// Chart-coordinate right-hand side of the fiber equation: the fiber
    /// through `(θ, s)` moves with `dθ/ds` obtained by projecting
    /// `∇f_-/|∇f_-|² - ∂X/∂s` onto `∂X/∂θ`.
    fn fiber_rhs(&self, p: &dyn Potential, theta: f64, s: f64) -> f64 {
        let gfm = self.grad_f_minus(p, theta, s);
        let gn2 = gfm[0] * gfm[0] + gfm[1] * gfm[1];
        let target = [gfm[0] / gn2, gfm[1] / gn2];
        let dxds = [
            self.field_dpos_x.eval(theta, s),
            self.field_dpos_y.eval(theta, s),
        ];
        let dxdth = [
            self.field_pos_x.eval_dtheta(theta, s),
            self.field_pos_y.eval_dtheta(theta, s),
        ];
        let w = [target[0] - dxds[0], target[1] - dxds[1]];
        let denom = dxdth[0] * dxdth[0] + dxdth[1] * dxdth[1];
        (dxdth[0] * w[0] + dxdth[1] * w[1]) / denom
    }

    /// The inverse chart map `Ψ(z(θ), x_d)`, realized by integrating the
    /// fiber equation from the anchor down to depth `x_d`.
    pub fn psi(&self, p: &dyn Potential, theta: f64, x_d: f64) -> [f64; 2] {
        let th = self.psi_theta(p, theta, x_d);
        self.ray_position(th, x_d)
    }

    fn psi_theta(&self, p: &dyn Potential, theta: f64, x_d: f64) -> f64 {
        let steps = 32usize;
        let h = x_d / steps as f64;
        let mut th = theta;
        if x_d == 0.0 {
            return th;
        }
        for k in 0..steps {
            let s = k as f64 * h;
            let k1 = self.fiber_rhs(p, th, s);
            let k2 = self.fiber_rhs(p, th + 0.5 * h * k1, s + 0.5 * h);
            let k3 = self.fiber_rhs(p, th + 0.5 * h * k2, s + 0.5 * h);
            let k4 = self.fiber_rhs(p, th + h * k3, s + h);
            th += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        th
    }

    /// `jac Ψ(z(θ_j), x_d)` interpolated along node `j`'s fiber.
    pub fn chart_jacobian(&self, node: usize, x_d: f64) -> f64 {
        self.node_level_interp(&self.fiber_jac[node], x_d)
    }

    /// `(G)_dd(z(θ_j), x_d)` interpolated along node `j`'s fiber.
    pub fn metric_gdd(&self, node: usize, x_d: f64) -> f64 {
        self.node_level_interp(&self.fiber_gdd[node], x_d)
    }

    /// `χ = (G)_dd⁻¹ · jac Ψ` along node `j`'s fiber.
    pub fn chi(&self, node: usize, x_d: f64) -> f64 {
        self.chart_jacobian(node, x_d) / self.metric_gdd(node, x_d)
    }

    /// All tabulated fiber positions, e.g. for tube-disjointness checks.
    pub fn fiber_samples(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        self.fiber_pos.iter().flatten().copied()
    }

    /// The tube's inner rim: fiber positions at depth δ, a closed polygon.
    pub fn inner_rim(&self) -> Vec<[f64; 2]> {
        self.fiber_pos
            .iter()
            .map(|column| column[self.n_levels])
            .collect()
    }

    fn node_level_interp(&self, column: &[f64], x_d: f64) -> f64 {
        let m = column.len() - 1;
        let h = self.delta / m as f64;
        let u = (x_d / h).clamp(0.0, m as f64);
        if m < 3 {
            let l0 = (u.floor() as usize).min(m - 1);
            let w = u - l0 as f64;
            return (1.0 - w) * column[l0] + w * column[l0 + 1];
        }
        let base = (u.floor() as usize).min(m - 1);
        let i0 = base.saturating_sub(1).min(m - 3);
        let t = u - i0 as f64;
        let mut acc = 0.0;
        for k in 0..4 {
            let mut w = 1.0;
            for j in 0..4 {
                if j != k {
                    w *= (t - j as f64) / (k as f64 - j as f64);
                }
            }
            acc += w * column[i0 + k];
        }
        acc
    }
}

fn build_level_tables(
    rays: &[CharacteristicRay],
    levels: &[f64],
) -> LevelTables {
    let mut pos = Vec::with_capacity(rays.len());
    let mut mom = Vec::with_capacity(rays.len());
    let mut phi = Vec::with_capacity(rays.len());
    let mut dpos = Vec::with_capacity(rays.len());
    for ray in rays {
        let mut pj = Vec::with_capacity(levels.len());
        let mut mj = Vec::with_capacity(levels.len());
        let mut fj = Vec::with_capacity(levels.len());
        let mut dj = Vec::with_capacity(levels.len());
        for &s in levels {
            let (x, pmom, ph) = ray.state_at_depth(s);
            pj.push(x);
            mj.push(pmom);
            fj.push(ph);
            dj.push(pmom); // placeholder, fixed below with ∇f
        }
        pos.push(pj);
        mom.push(mj);
        phi.push(fj);
        dpos.push(dj);
    }
    LevelTables { pos, mom, phi, dpos }
}

/// Builds the tubular chart with one ray per quadrature node.
pub fn build_chart(
    p: &dyn Potential,
    dom: &Domain,
    bq: &BoundaryQuadrature,
    delta: f64,
    n_levels: usize,
) -> Result<TubularChart, EikonalError> {
    assert!(delta > 0.0 && n_levels >= 8);
    let n = bq.n();

    let rays: Vec<CharacteristicRay> = bq
        .nodes
        .par_iter()
        .zip(bq.thetas.par_iter())
        .map(|(node, &th)| shoot_ray_to_depth(p, dom, *node, th, delta * 1.0001, 1e4))
        .collect::<Result<_, _>>()?;

    for (j, ray) in rays.iter().enumerate() {
        if !ray.check_monotone() {
            return Err(EikonalError::MonotonicityFailure { node: j });
        }
        if ray.max_depth() < delta {
            return Err(EikonalError::RayTooShallow {
                node: j,
                reached: ray.max_depth(),
                requested: delta,
            });
        }
    }

    let levels: Vec<f64> = (0..=n_levels)
        .map(|l| delta * l as f64 / n_levels as f64)
        .collect();
    let mut tables = build_level_tables(&rays, &levels);

    // dX/d(depth) = 2p / (|p|² - ∇f·p), orientation check per level
    let mut grad = [0.0; 2];
    let mut det0 = vec![0.0; n];
    for (l, &s) in levels.iter().enumerate() {
        for j in 0..n {
            let x = tables.pos[j][l];
            let pm = tables.mom[j][l];
            p.gradient(&x, &mut grad);
            let rate = pm[0] * pm[0] + pm[1] * pm[1] - (grad[0] * pm[0] + grad[1] * pm[1]);
            tables.dpos[j][l] = [2.0 * pm[0] / rate, 2.0 * pm[1] / rate];
        }
        let dtheta = 2.0 * PI / n as f64;
        for j in 0..n {
            // 4th-order central difference across neighboring rays
            let xm2 = tables.pos[wrap_index(j as isize - 2, n)][l];
            let xm1 = tables.pos[wrap_index(j as isize - 1, n)][l];
            let xp1 = tables.pos[wrap_index(j as isize + 1, n)][l];
            let xp2 = tables.pos[wrap_index(j as isize + 2, n)][l];
            let dth = [
                (-xp2[0] + 8.0 * xp1[0] - 8.0 * xm1[0] + xm2[0]) / (12.0 * dtheta),
                (-xp2[1] + 8.0 * xp1[1] - 8.0 * xm1[1] + xm2[1]) / (12.0 * dtheta),
            ];
            let v = tables.dpos[j][l];
            let det = dth[0] * v[1] - dth[1] * v[0];
            if l == 0 {
                det0[j] = det;
            } else if det * det0[j] <= 0.0 || det.abs() < 1e-3 * det0[j].abs() {
                return Err(EikonalError::RayCrossing { level_depth: s });
            }
        }
    }

    // level-wise periodic splines of every tabulated field
    let collect = |get: &dyn Fn(usize, usize) -> f64| -> Vec<Vec<f64>> {
        levels
            .iter()
            .enumerate()
            .map(|(l, _)| (0..n).map(|j| get(j, l)).collect())
            .collect()
    };
    let field_pos_x = LevelField::new(&collect(&|j, l| tables.pos[j][l][0]), n, delta);
    let field_pos_y = LevelField::new(&collect(&|j, l| tables.pos[j][l][1]), n, delta);
    let field_mom_x = LevelField::new(&collect(&|j, l| tables.mom[j][l][0]), n, delta);
    let field_mom_y = LevelField::new(&collect(&|j, l| tables.mom[j][l][1]), n, delta);
    let field_phi = LevelField::new(&collect(&|j, l| tables.phi[j][l]), n, delta);
    let field_dpos_x = LevelField::new(&collect(&|j, l| tables.dpos[j][l][0]), n, delta);
    let field_dpos_y = LevelField::new(&collect(&|j, l| tables.dpos[j][l][1]), n, delta);

    let mut grad_local = [0.0; 2];
    let normal_derivatives: Vec<f64> = bq
        .nodes
        .iter()
        .zip(&bq.normals)
        .map(|(node, normal)| {
            p.gradient(node, &mut grad_local);
            grad_local[0] * normal[0] + grad_local[1] * normal[1]
        })
        .collect();
    let node_speeds: Vec<f64> = bq
        .thetas
        .iter()
        .map(|&th| {
            let d = bq.dsigma(th);
            (d[0] * d[0] + d[1] * d[1]).sqrt()
        })
        .collect();

    let max_drift = rays
        .iter()
        .map(|r| r.max_hamiltonian_drift)
        .fold(0.0, f64::max);

    let mut chart = TubularChart {
        delta,
        n_nodes: n,
        n_levels,
        thetas: bq.thetas.clone(),
        levels: levels.clone(),
        normal_derivatives,
        node_speeds,
        rays,
        max_hamiltonian_drift: max_drift,
        field_pos_x,
        field_pos_y,
        field_mom_x,
        field_mom_y,
        field_phi,
        field_dpos_x,
        field_dpos_y,
        fiber_theta: Vec::new(),
        fiber_pos: Vec::new(),
        fiber_jac: Vec::new(),
        fiber_gdd: Vec::new(),
    };

    // integrate one fiber per node in chart coordinates, 4 RK4 substeps per
    // level interval
    let fibers: Vec<(Vec<f64>, Vec<[f64; 2]>, Vec<f64>)> = chart
        .thetas
        .par_iter()
        .map(|&theta0| {
            let mut thetas_l = Vec::with_capacity(n_levels + 1);
            let mut pos_l = Vec::with_capacity(n_levels + 1);
            let mut gdd_l = Vec::with_capacity(n_levels + 1);
            let mut th = theta0;
            for l in 0..=n_levels {
                let s = levels[l];
                let gfm = chart.grad_f_minus(p, th, s);
                let gn2 = gfm[0] * gfm[0] + gfm[1] * gfm[1];
                thetas_l.push(th);
                pos_l.push(chart.ray_position(th, s));
                gdd_l.push(1.0 / gn2);
                if l < n_levels {
                    let h = (levels[l + 1] - levels[l]) / 4.0;
                    for sub in 0..4 {
                        let sc = s + sub as f64 * h;
                        let k1 = chart.fiber_rhs(p, th, sc);
                        let k2 = chart.fiber_rhs(p, th + 0.5 * h * k1, sc + 0.5 * h);
                        let k3 = chart.fiber_rhs(p, th + 0.5 * h * k2, sc + 0.5 * h);
                        let k4 = chart.fiber_rhs(p, th + h * k3, sc + h);
                        th += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
                    }
                }
            }
            (thetas_l, pos_l, gdd_l)
        })
        .collect();

    chart.fiber_theta = fibers.iter().map(|f| f.0.clone()).collect();
    chart.fiber_pos = fibers.iter().map(|f| f.1.clone()).collect();
    chart.fiber_gdd = fibers.iter().map(|f| f.2.clone()).collect();

    // jac Ψ by differencing neighboring fibers (surface-measure normalized)
    let dtheta = 2.0 * PI / n as f64;
    let mut fiber_jac = vec![vec![0.0; n_levels + 1]; n];
    for l in 0..=n_levels {
        for j in 0..n {
            let ym2 = chart.fiber_pos[wrap_index(j as isize - 2, n)][l];
            let ym1 = chart.fiber_pos[wrap_index(j as isize - 1, n)][l];
            let yp1 = chart.fiber_pos[wrap_index(j as isize + 1, n)][l];
            let yp2 = chart.fiber_pos[wrap_index(j as isize + 2, n)][l];
            let dth = [
                (-yp2[0] + 8.0 * yp1[0] - 8.0 * ym1[0] + ym2[0]) / (12.0 * dtheta),
                (-yp2[1] + 8.0 * yp1[1] - 8.0 * ym1[1] + ym2[1]) / (12.0 * dtheta),
            ];
            let speed = chart.node_speeds[j];
            let tangential = [dth[0] / speed, dth[1] / speed];
            let th = chart.fiber_theta[j][l];
            let s = chart.levels[l];
            let gfm = chart.grad_f_minus(p, th, s);
            let gn2 = gfm[0] * gfm[0] + gfm[1] * gfm[1];
            let transverse = [gfm[0] / gn2, gfm[1] / gn2];
            fiber_jac[j][l] =
                (tangential[0] * transverse[1] - tangential[1] * transverse[0]).abs();
        }
    }
    chart.fiber_jac = fiber_jac;

    Ok(chart)
}

/// Scans ray orientation determinants for the deepest usable tube and
/// returns half of it, the default `δ`.
pub fn suggest_delta(
    p: &dyn Potential,
    dom: &Domain,
    bq: &BoundaryQuadrature,
) -> Result<f64, EikonalError> {
    let rays: Vec<CharacteristicRay> = bq
        .nodes
        .par_iter()
        .zip(bq.thetas.par_iter())
        .map(|(node, &th)| shoot_ray_to_depth(p, dom, *node, th, f64::INFINITY, 20.0))
        .collect::<Result<_, _>>()?;
    let n = bq.n();
    let cap = 0.98
        * rays
            .iter()
            .map(|r| r.max_depth())
            .fold(f64::INFINITY, f64::min);
    let scan_levels: Vec<f64> = (0..=256).map(|l| cap * l as f64 / 256.0).collect();
    let tables = build_level_tables(&rays, &scan_levels);
    let dtheta = 2.0 * PI / n as f64;
    let mut grad = [0.0; 2];
    let mut det0 = vec![0.0; n];
    let mut max_good = cap;
    'levels: for (l, &s) in scan_levels.iter().enumerate() {
        for j in 0..n {
            let x = tables.pos[j][l];
            let pm = tables.mom[j][l];
            p.gradient(&x, &mut grad);
            let rate = pm[0] * pm[0] + pm[1] * pm[1] - (grad[0] * pm[0] + grad[1] * pm[1]);
            let v = [2.0 * pm[0] / rate, 2.0 * pm[1] / rate];
            let xm2 = tables.pos[wrap_index(j as isize - 2, n)][l];
            let xm1 = tables.pos[wrap_index(j as isize - 1, n)][l];
            let xp1 = tables.pos[wrap_index(j as isize + 1, n)][l];
            let xp2 = tables.pos[wrap_index(j as isize + 2, n)][l];
            let dth = [
                (-xp2[0] + 8.0 * xp1[0] - 8.0 * xm1[0] + xm2[0]) / (12.0 * dtheta),
                (-xp2[1] + 8.0 * xp1[1] - 8.0 * xm1[1] + xm2[1]) / (12.0 * dtheta),
            ];
            let det = dth[0] * v[1] - dth[1] * v[0];
            if l == 0 {
                det0[j] = det;
            } else if det * det0[j] <= 0.0 || det.abs() < 1e-3 * det0[j].abs() {
                max_good = s;
                break 'levels;
            }
        }
    }
    Ok(0.5 * max_good)
}

/// Residuals of the chart identities over an off-node sample grid.
#[derive(Debug, Clone, Copy)]
pub struct ChartIdentityReport {
    /// `sup |∇f_+ · ∇f_-|`
    pub max_orthogonality: f64,
    /// `sup |f(Ψ(z, x_d)) - (f_+(z) - x_d)|`
    pub max_fiber_affine: f64,
    /// `sup |f_-(Ψ(z, x_d)) - x_d|`
    pub max_depth_consistency: f64,
    /// `sup_z |jac Ψ(z, 0) ∂ₙf(z) - 1|`
    pub max_jacobian_identity: f64,
    /// `sup_z |(G)_dd(z, 0) ∂ₙf(z)² - 1|`
    pub max_metric_identity: f64,
}

/// Pointwise identity residuals at one tube sample.
#[derive(Debug, Clone, Copy)]
pub struct IdentitySample {
    pub theta: f64,
    pub x_d: f64,
    pub orthogonality: f64,
    pub fiber_affine: f64,
    pub depth_consistency: f64,
}

/// Residuals on an off-node sample grid, one record per point.
pub fn chart_identity_samples(
    chart: &TubularChart,
    p: &dyn Potential,
    n_theta_samples: usize,
    n_depth_samples: usize,
) -> Vec<IdentitySample> {
    let mut out = Vec::with_capacity(n_theta_samples * n_depth_samples);
    for it in 0..n_theta_samples {
        let theta = 2.0 * PI * (it as f64 + 0.37) / n_theta_samples as f64;
        let f_plus_boundary = chart.f_plus(p, theta, 0.0);
        for is in 0..n_depth_samples {
            let s = chart.delta * (is as f64 + 0.61) / n_depth_samples as f64;
            let gp = chart.grad_f_plus(p, theta, s);
            let gm = chart.grad_f_minus(p, theta, s);
            let th_f = chart.psi_theta(p, theta, s);
            let y = chart.ray_position(th_f, s);
            let f_y = p.value(&y);
            let fm_y = chart.f_minus(p, th_f, s);
            out.push(IdentitySample {
                theta,
                x_d: s,
                orthogonality: (gp[0] * gm[0] + gp[1] * gm[1]).abs(),
                fiber_affine: (f_y - (f_plus_boundary - s)).abs(),
                depth_consistency: (fm_y - s).abs(),
            });
        }
    }
    out
}

pub fn chart_identities_report(
    chart: &TubularChart,
    p: &dyn Potential,
    n_theta_samples: usize,
    n_depth_samples: usize,
) -> ChartIdentityReport {
    let mut rep = ChartIdentityReport {
        max_orthogonality: 0.0,
        max_fiber_affine: 0.0,
        max_depth_consistency: 0.0,
        max_jacobian_identity: 0.0,
        max_metric_identity: 0.0,
    };

    // boundary identities at the nodes
    for j in 0..chart.n_nodes {
        let dnf = chart.normal_derivatives[j];
        rep.max_jacobian_identity = rep
            .max_jacobian_identity
            .max((chart.chart_jacobian(j, 0.0) * dnf - 1.0).abs());
        rep.max_metric_identity = rep
            .max_metric_identity
            .max((chart.metric_gdd(j, 0.0) * dnf * dnf - 1.0).abs());
    }

    for s in chart_identity_samples(chart, p, n_theta_samples, n_depth_samples) {
        rep.max_orthogonality = rep.max_orthogonality.max(s.orthogonality);
        rep.max_fiber_affine = rep.max_fiber_affine.max(s.fiber_affine);
        rep.max_depth_consistency = rep.max_depth_consistency.max(s.depth_consistency);
    }
    rep
}
