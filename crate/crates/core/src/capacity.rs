//! Capacity of the capacitor `(C, D^c)` three ways, and the mean exit time
//! reconstructed from it.
//!
//! The equilibrium potential `h` (probability of hitting the ball `C`
//! before leaving `D`) minimizes the Dirichlet form `ε∫|∇h|² e^{-f/ε}` over
//! fields that are 1 on `C` and 0 outside `D`; the minimum is the capacity.
//! Three estimates are produced:
//!
//! * **test-function upper bound** — the explicit profile
//!   `g(x_d) = (1-e^{-x_d/ε})/(1-e^{-δ/ε})` transplanted through the tubular
//!   chart, whose energy reduces to per-node fiber integrals
//!   `∫ e^{-x_d/ε} χ(x_d) dx_d` with `χ = (G)_dd⁻¹ jac Ψ`;
//! * **PDE Dirichlet form** — midpoint quadrature of `ε|∇h|² e^{-f/ε}` for
//!   the finite-difference equilibrium potential;
//! * **boundary-integral asymptotic** — `∫_∂D ∂ₙf e^{-f/ε} dσ`, the common
//!   `ε → 0` limit of both bounds.
//!
//! Fiberwise, the optimal profile with fixed endpoints is
//! `g*(t) = ∫₀^t χ⁻¹ e^{-s/ε} ds / ∫₀^δ χ⁻¹ e^{-s/ε} ds`, with energy
//! `h_δ² / ∫₀^δ χ⁻¹ e^{-s/ε} ds`; it can never lose to the explicit profile
//! and underlies the sharp lower bound.

use thiserror::Error;

use crate::asymptotics::boundary_laplace_integral;
use crate::domain::{BoundaryQuadrature, Domain};
use crate::eikonal::TubularChart;
use crate::numerics::{integrate, LogValue};
use crate::pde::{assemble, build_grid, solve_equilibrium_potential, PdeError};
use crate::potential::{CriticalPoint, Potential};

use std::f64::consts::PI;

#[derive(Debug, Error)]
pub enum CapacityError {
    #[error("chart delta {chart_delta} does not match requested {requested}")]
    ChartMismatch { chart_delta: f64, requested: f64 },
    #[error("capacitor ball (r = {radius}) intersects the tube (min distance {distance:.4})")]
    CapacitorIntersectsTube { radius: f64, distance: f64 },
    #[error("capacitor ball is not inside the domain")]
    CapacitorOutsideDomain,
    #[error("interpolated χ ≤ 0 at node {node}, depth {x_d:.4}: chart corrupted")]
    NonpositiveChi { node: usize, x_d: f64 },
    #[error(transparent)]
    Pde(#[from] PdeError),
}

/// The capacitor: a closed ball around the well, kept clear of the tube.
#[derive(Debug, Clone, Copy)]
pub struct CapacitorConfig {
    pub center: [f64; 2],
    pub radius: f64,
    pub delta: f64,
}

impl CapacitorConfig {
    /// Default ball: a quarter of the distance from the well to the
    /// boundary.
    pub fn around(x0: &CriticalPoint, bq: &BoundaryQuadrature, delta: f64) -> Self {
        let center = [x0.location[0], x0.location[1]];
        let dist = bq.min_distance_to(&center);
        CapacitorConfig {
            center,
            radius: 0.25 * dist,
            delta,
        }
    }
}

/// Checks `B(x0, r0) ⊂ D` and `B(x0, r0) ∩ V_δ = ∅` against the chart's
/// fiber samples.
pub fn validate_capacitor(
    dom: &Domain,
    chart: &TubularChart,
    cfg: &CapacitorConfig,
) -> Result<(), CapacityError> {
    for probe in [
        [cfg.center[0] + cfg.radius, cfg.center[1]],
        [cfg.center[0] - cfg.radius, cfg.center[1]],
        [cfg.center[0], cfg.center[1] + cfg.radius],
        [cfg.center[0], cfg.center[1] - cfg.radius],
    ] {
        if dom.phi(&probe) >= 0.0 {
            return Err(CapacityError::CapacitorOutsideDomain);
        }
    }
    let min_dist = chart
        .fiber_samples()
        .map(|p| ((p[0] - cfg.center[0]).powi(2) + (p[1] - cfg.center[1]).powi(2)).sqrt())
        .fold(f64::INFINITY, f64::min);
    if min_dist <= cfg.radius {
        return Err(CapacityError::CapacitorIntersectsTube {
            radius: cfg.radius,
            distance: min_dist,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CapacityMethod {
    TestFunctionUpper,
    PdeDirichletForm,
    BoundaryIntegralAsymptotic,
}

impl CapacityMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::TestFunctionUpper => "test-function-upper",
            Self::PdeDirichletForm => "pde-dirichlet-form",
            Self::BoundaryIntegralAsymptotic => "boundary-integral-asymptotic",
        }
    }
}

/// Share of the Dirichlet form carried by the boundary tube vs the bulk.
#[derive(Debug, Clone, Copy)]
pub struct DirichletBreakdown {
    pub tube_fraction: f64,
    pub bulk_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct CapacityEstimate {
    pub epsilon: f64,
    pub log_value: LogValue,
    pub method: CapacityMethod,
    pub breakdown: Option<DirichletBreakdown>,
}

impl CapacityEstimate {
    pub fn value(&self) -> f64 {
        self.log_value.value()
    }
}

fn check_chi_positive(chart: &TubularChart, node: usize) -> Result<(), CapacityError> {
    let m = chart.n_levels;
    for l in 0..=4 * m {
        let x_d = chart.delta * l as f64 / (4 * m) as f64;
        if chart.chi(node, x_d) <= 0.0 {
            return Err(CapacityError::NonpositiveChi { node, x_d });
        }
    }
    Ok(())
}

/// Capacity upper bound from the explicit boundary-layer test function.
pub fn capacity_upper_bound(
    p: &dyn Potential,
    bq: &BoundaryQuadrature,
    chart: &TubularChart,
    cfg: &CapacitorConfig,
    epsilon: f64,
) -> Result<CapacityEstimate, CapacityError> {
    if (chart.delta - cfg.delta).abs() > 1e-12 {
        return Err(CapacityError::ChartMismatch {
            chart_delta: chart.delta,
            requested: cfg.delta,
        });
    }
    let delta = chart.delta;
    let q = (-delta / epsilon).exp();
    let f_min = bq
        .nodes
        .iter()
        .map(|n| p.value(n))
        .fold(f64::INFINITY, f64::min);

    // cap = Σ_j w_j e^{-f_j/ε} Ĩ_j / (1-q)²,
    // Ĩ_j = ∫₀^{δ/ε} e^{-u} χ_j(εu) du  (boundary-layer variable u = x_d/ε)
    let mut sum = 0.0;
    for j in 0..bq.n() {
        check_chi_positive(chart, j)?;
        let fiber = integrate(
            |u| {
                let x_d = (epsilon * u).min(delta);
                (-u).exp() * chart.chi(j, x_d)
            },
            0.0,
            delta / epsilon,
            1e-12,
            1e-300,
        );
        let fj = p.value(&bq.nodes[j]);
        sum += bq.weights[j] * (-(fj - f_min) / epsilon).exp() * fiber;
    }
    let log_value = LogValue::from_parts(sum / ((1.0 - q) * (1.0 - q)), -f_min / epsilon);
    Ok(CapacityEstimate {
        epsilon,
        log_value,
        method: CapacityMethod::TestFunctionUpper,
        breakdown: Some(DirichletBreakdown {
            tube_fraction: 1.0,
            bulk_fraction: 0.0,
        }),
    })
}

/// The boundary Laplace integral packaged as the asymptotic capacity value.
pub fn boundary_integral_capacity(
    p: &dyn Potential,
    bq: &BoundaryQuadrature,
    epsilon: f64,
) -> CapacityEstimate {
    let bi = boundary_laplace_integral(p, bq, epsilon);
    CapacityEstimate {
        epsilon,
        log_value: bi.log_value(),
        method: CapacityMethod::BoundaryIntegralAsymptotic,
        breakdown: None,
    }
}

/// The fiberwise optimal profile `g*` and its energy.
#[derive(Debug, Clone)]
pub struct FiberProfile {
    pub node: usize,
    pub h_delta: f64,
    pub energy: f64,
    /// `(t, g*(t))` samples on a uniform grid over `[0, δ]`
    pub samples: Vec<(f64, f64)>,
}

fn fiber_profile_from_chi(
    chi: impl Fn(f64) -> f64,
    delta: f64,
    epsilon: f64,
    h_delta: f64,
) -> (f64, Vec<(f64, f64)>) {
    let weight = |s: f64| (-(s / epsilon)).exp() / chi(s);
    let n = 64usize;
    let mut cumulative = vec![0.0; n + 1];
    for k in 0..n {
        let (a, b) = (
            delta * k as f64 / n as f64,
            delta * (k + 1) as f64 / n as f64,
        );
        cumulative[k + 1] = cumulative[k] + integrate(&weight, a, b, 1e-12, 1e-300);
    }
    let total = cumulative[n];
    let energy = h_delta * h_delta / total;
    let samples = (0..=n)
        .map(|k| {
            (
                delta * k as f64 / n as f64,
                h_delta * cumulative[k] / total,
            )
        })
        .collect();
    (energy, samples)
}

/// Minimizes `∫₀^δ |g'|² χ e^{t/ε} dt` over profiles with `g(0) = 0`,
/// `g(δ) = h_delta`, along the fiber of quadrature node `node`.
pub fn optimal_fiber_profile(
    chart: &TubularChart,
    node: usize,
    h_delta: f64,
    epsilon: f64,
) -> Result<FiberProfile, CapacityError> {
    check_chi_positive(chart, node)?;
    let (energy, samples) = fiber_profile_from_chi(
        |s| chart.chi(node, s),
        chart.delta,
        epsilon,
        h_delta,
    );
    Ok(FiberProfile {
        node,
        h_delta,
        energy,
        samples,
    })
}

/// Fiber energy of the explicit upper-bound profile on the same fiber, for
/// comparison with the optimum.
pub fn upper_profile_fiber_energy(
    chart: &TubularChart,
    node: usize,
    h_delta: f64,
    epsilon: f64,
) -> Result<f64, CapacityError> {
    check_chi_positive(chart, node)?;
    let delta = chart.delta;
    let q = (-delta / epsilon).exp();
    let integral = integrate(
        |t| (-(t / epsilon)).exp() * chart.chi(node, t),
        0.0,
        delta,
        1e-12,
        1e-300,
    );
    Ok(h_delta * h_delta * integral / (epsilon * epsilon * (1.0 - q) * (1.0 - q)))
}

/// Capacity via the finite-difference equilibrium potential and midpoint
/// quadrature of its Dirichlet form.
pub fn capacity_pde(
    p: &dyn Potential,
    dom: &Domain,
    cfg: &CapacitorConfig,
    epsilon: f64,
    spacing: f64,
    chart: Option<&TubularChart>,
) -> Result<CapacityEstimate, CapacityError> {
    let grid = build_grid(dom, spacing, Some((cfg.center, cfg.radius)))?;
    let op = assemble(p, grid, epsilon);
    let field = solve_equilibrium_potential(&op)?;

    // inner rim of the tube, for the tube/bulk breakdown
    let inner_rim: Option<Vec<[f64; 2]>> = chart.map(|c| c.inner_rim());

    let g = &op.grid;
    let h = g.h;
    let f_ref = op.f_ref;
    let mut tube_sum = 0.0;
    let mut bulk_sum = 0.0;
    for j in 0..g.ny - 1 {
        for i in 0..g.nx - 1 {
            let center = [
                g.x0 + (i as f64 + 0.5) * h,
                g.y0 + (j as f64 + 0.5) * h,
            ];
            if dom.phi(&center) >= 0.0 {
                continue;
            }
            if (center[0] - cfg.center[0]).powi(2) + (center[1] - cfg.center[1]).powi(2)
                <= cfg.radius * cfg.radius
            {
                continue;
            }
            let v00 = field.node_value(i, j);
            let v10 = field.node_value(i + 1, j);
            let v01 = field.node_value(i, j + 1);
            let v11 = field.node_value(i + 1, j + 1);
            let gx = ((v10 + v11) - (v00 + v01)) / (2.0 * h);
            let gy = ((v01 + v11) - (v00 + v10)) / (2.0 * h);
            let grad2 = gx * gx + gy * gy;
            if grad2 == 0.0 {
                continue;
            }
            let contrib =
                epsilon * grad2 * (-(p.value(&center) - f_ref) / epsilon).exp() * h * h;
            let in_tube = inner_rim
                .as_ref()
                .map(|rim| !point_in_polygon(center, rim))
                .unwrap_or(false);
            if in_tube {
                tube_sum += contrib;
            } else {
                bulk_sum += contrib;
            }
        }
    }
    let total = tube_sum + bulk_sum;
    let breakdown = inner_rim.map(|_| DirichletBreakdown {
        tube_fraction: tube_sum / total,
        bulk_fraction: bulk_sum / total,
    });
    Ok(CapacityEstimate {
        epsilon,
        log_value: LogValue::from_parts(total, -f_ref / epsilon),
        method: CapacityMethod::PdeDirichletForm,
        breakdown,
    })
}

/// Winding-number point-in-polygon test.
fn point_in_polygon(p: [f64; 2], poly: &[[f64; 2]]) -> bool {
    let mut winding = 0i32;
    for k in 0..poly.len() {
        let a = poly[k];
        let b = poly[(k + 1) % poly.len()];
        if a[1] <= p[1] {
            if b[1] > p[1] && cross(a, b, p) > 0.0 {
                winding += 1;
            }
        } else if b[1] <= p[1] && cross(a, b, p) < 0.0 {
            winding -= 1;
        }
    }
    winding != 0
}

fn cross(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1])
}

/// Mean exit time from a capacity value:
/// `E[τ] = (2πε)^{d/2} e^{-f(x0)/ε} / (sqrt(det Hess f(x0)) · cap)`.
pub fn mean_exit_via_capacity(
    cap: &CapacityEstimate,
    x0: &CriticalPoint,
    epsilon: f64,
) -> LogValue {
    let d = x0.location.len() as f64;
    LogValue::from_ln(
        0.5 * d * (2.0 * PI * epsilon).ln()
            - 0.5 * x0.det_hessian.ln()
            - x0.value / epsilon
            - cap.log_value.ln(),
    )
}

/// Laplace approximation of the well integral
/// `∫_D e^{-f/ε} h dx ≈ (2πε)^{d/2} e^{-f(x0)/ε} / sqrt(det Hess f(x0))`.
pub fn well_integral(x0: &CriticalPoint, epsilon: f64) -> LogValue {
    let d = x0.location.len() as f64;
    LogValue::from_ln(
        0.5 * d * (2.0 * PI * epsilon).ln() - 0.5 * x0.det_hessian.ln() - x0.value / epsilon,
    )
}

/// Midpoint-grid quadrature of `∫_D e^{-f/ε} dx` for comparison with the
/// Laplace value (the equilibrium potential is ≈ 1 on the well).
pub fn well_integral_quadrature(
    p: &dyn Potential,
    dom: &Domain,
    epsilon: f64,
    cells_per_axis: usize,
) -> f64 {
    let bb = &dom.bounding_box;
    let hx = (bb.hi[0] - bb.lo[0]) / cells_per_axis as f64;
    let hy = (bb.hi[1] - bb.lo[1]) / cells_per_axis as f64;
    let mut sum = 0.0;
    for j in 0..cells_per_axis {
        for i in 0..cells_per_axis {
            let c = [
                bb.lo[0] + (i as f64 + 0.5) * hx,
                bb.lo[1] + (j as f64 + 0.5) * hy,
            ];
            if dom.phi(&c) < 0.0 {
                sum += (-p.value(&c) / epsilon).exp() * hx * hy;
            }
        }
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asymptotics::boundary_laplace_integral;
    use crate::domain::build_boundary_quadrature;
    use crate::eikonal::build_chart;
    use crate::numerics::solve_tridiagonal;
    use crate::potential::{classify, IsoQuadratic};
    use approx::assert_relative_eq;

    fn radial_chart(
        n: usize,
        delta: f64,
    ) -> (IsoQuadratic, Domain, BoundaryQuadrature, TubularChart) {
        let p = IsoQuadratic::unit(2);
        let dom = Domain::unit_disk();
        let bq = build_boundary_quadrature(&dom, n).unwrap();
        let chart = build_chart(&p, &dom, &bq, delta, 48).unwrap();
        (p, dom, bq, chart)
    }

    #[test]
    fn radial_upper_bound_matches_closed_form() {
        // radial χ(x_d) = 1 - 2 x_d gives
        // cap_ub = BI · [1 - 2ε + q(2δ + 2ε - 1)]/(1-q)², q = e^{-δ/ε}
        let (p, dom, bq, chart) = radial_chart(128, 0.3);
        let cfg = CapacitorConfig {
            center: [0.0, 0.0],
            radius: 0.25,
            delta: 0.3,
        };
        validate_capacitor(&dom, &chart, &cfg).unwrap();
        for &eps in &[0.1, 0.2] {
            let ub = capacity_upper_bound(&p, &bq, &chart, &cfg, eps).unwrap();
            let bi = boundary_laplace_integral(&p, &bq, eps).log_value();
            let q = (-0.3f64 / eps).exp();
            let closed =
                (1.0 - 2.0 * eps + q * (0.6 + 2.0 * eps - 1.0)) / ((1.0 - q) * (1.0 - q));
            assert_relative_eq!(ub.log_value.ratio_to(bi), closed, max_relative = 2e-5);
        }
        // frozen: ratio at ε = 0.1, δ = 0.3 is 0.875001160494
        let ub = capacity_upper_bound(&p, &bq, &chart, &cfg, 0.1).unwrap();
        let bi = boundary_laplace_integral(&p, &bq, 0.1).log_value();
        assert_relative_eq!(
            ub.log_value.ratio_to(bi),
            0.875001160494,
            max_relative = 2e-5
        );
    }

    #[test]
    fn upper_bound_ratio_decreases_where_layer_resolved() {
        // on the δ/ε ≥ 4 side the deviation |cap_ub/BI - 1| shrinks with ε
        let (p, _dom, bq, chart) = radial_chart(96, 0.3);
        let cfg = CapacitorConfig {
            center: [0.0, 0.0],
            radius: 0.25,
            delta: 0.3,
        };
        let mut prev = f64::INFINITY;
        for &eps in &[0.075, 0.06, 0.05] {
            let ub = capacity_upper_bound(&p, &bq, &chart, &cfg, eps).unwrap();
            let bi = boundary_laplace_integral(&p, &bq, eps).log_value();
            let dev = (ub.log_value.ratio_to(bi) - 1.0).abs();
            assert!(dev < prev, "deviation not shrinking: {dev} at ε = {eps}");
            prev = dev;
        }
    }

    #[test]
    fn delta_insensitivity_of_upper_bound() {
        // changing δ moves the bound by O(e^{-δ/ε}) relative
        let p = IsoQuadratic::unit(2);
        let dom = Domain::unit_disk();
        let bq = build_boundary_quadrature(&dom, 96).unwrap();
        let eps = 0.05;
        let value = |delta: f64| {
            let chart = build_chart(&p, &dom, &bq, delta, 48).unwrap();
            let cfg = CapacitorConfig {
                center: [0.0, 0.0],
                radius: 0.2,
                delta,
            };
            capacity_upper_bound(&p, &bq, &chart, &cfg, eps)
                .unwrap()
                .log_value
        };
        let (a, b) = (value(0.2), value(0.4));
        let rel = (a.ln() - b.ln()).abs();
        assert!(
            rel <= 3.0 * (-0.2f64 / eps).exp(),
            "δ-sensitivity {rel:.3e} too large"
        );
    }

    #[test]
    fn constant_chi_profile_closed_form() {
        // χ ≡ 1: g*(t) = (1-e^{-t/ε})/(1-e^{-δ/ε}), energy = 1/(ε(1-e^{-δ/ε}))
        let (eps, delta) = (0.1, 0.3);
        let (energy, samples) = fiber_profile_from_chi(|_| 1.0, delta, eps, 1.0);
        assert_relative_eq!(energy, 10.52395696491256, max_relative = 1e-10);
        let q = (-delta / eps).exp();
        for &(t, g) in &samples {
            let expected = (1.0 - (-t / eps).exp()) / (1.0 - q);
            assert_relative_eq!(g, expected, epsilon = 1e-10);
        }
    }

    #[test]
    fn radial_fiber_optimum_beats_upper_profile() {
        let (_p, _dom, _bq, chart) = radial_chart(96, 0.3);
        let eps = 0.1;
        // frozen values for χ = 1 - 2 x_d from independent quadrature:
        // optimal 8.42513618..., explicit profile 8.75001160...
        let opt = optimal_fiber_profile(&chart, 0, 1.0, eps).unwrap();
        let up = upper_profile_fiber_energy(&chart, 0, 1.0, eps).unwrap();
        assert_relative_eq!(opt.energy, 8.42513618052976, max_relative = 2e-5);
        assert_relative_eq!(up, 8.750011604942406, max_relative = 2e-5);
        for node in [0usize, 13, 50, 95] {
            let opt = optimal_fiber_profile(&chart, node, 1.0, eps).unwrap();
            let up = upper_profile_fiber_energy(&chart, node, 1.0, eps).unwrap();
            assert!(opt.energy <= up * (1.0 + 1e-12));
        }
    }

    /// 200-cell piecewise-linear minimization oracle: per-cell conductances
    /// from exact flux integrals, interior stationarity solved tridiagonally.
    fn discrete_fiber_minimum(
        chi: impl Fn(f64) -> f64,
        delta: f64,
        eps: f64,
        h_delta: f64,
        cells: usize,
    ) -> f64 {
        let c: Vec<f64> = (0..cells)
            .map(|k| {
                let (a, b) = (
                    delta * k as f64 / cells as f64,
                    delta * (k + 1) as f64 / cells as f64,
                );
                // flux-exact conductance: 1 / ∫_cell χ⁻¹ e^{-t/ε} dt
                1.0 / integrate(|t| (-(t / eps)).exp() / chi(t), a, b, 1e-13, 1e-300)
            })
            .collect();
        // stationarity of Σ c_k (g_{k+1}-g_k)² with fixed endpoints
        let n = cells - 1;
        let mut sub = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut sup = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        for i in 0..n {
            diag[i] = c[i] + c[i + 1];
            if i > 0 {
                sub[i] = -c[i];
            }
            if i + 1 < n {
                sup[i] = -c[i + 1];
            }
        }
        rhs[n - 1] = c[cells - 1] * h_delta;
        let g = solve_tridiagonal(&sub, &diag, &sup, &rhs);
        let mut energy = 0.0;
        let mut prev = 0.0;
        for i in 0..n {
            energy += c[i] * (g[i] - prev) * (g[i] - prev);
            prev = g[i];
        }
        energy += c[cells - 1] * (h_delta - prev) * (h_delta - prev);
        energy
    }

    #[test]
    fn discrete_minimizer_oracle_confirms_fiber_energy() {
        let (_p, _dom, _bq, chart) = radial_chart(96, 0.3);
        for &eps in &[0.1, 0.2] {
            for node in [0usize, 31] {
                let opt = optimal_fiber_profile(&chart, node, 0.9, eps).unwrap();
                let oracle =
                    discrete_fiber_minimum(|s| chart.chi(node, s), 0.3, eps, 0.9, 200);
                assert_relative_eq!(opt.energy, oracle, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn pde_capacity_matches_radial_truth() {
        // exact radial capacity: cap = 2πε / ∫_{r0}^1 e^{s²/(2ε)}/s ds
        let p = IsoQuadratic::unit(2);
        let dom = Domain::unit_disk();
        let eps = 0.15;
        let r0 = 0.25;
        let cfg = CapacitorConfig {
            center: [0.0, 0.0],
            radius: r0,
            delta: 0.3,
        };
        let cap = capacity_pde(&p, &dom, &cfg, eps, 1.0 / 128.0, None).unwrap();
        let j = integrate(
            |s| (s * s / (2.0 * eps)).exp() / s,
            r0,
            1.0,
            1e-12,
            1e-300,
        );
        let truth = 2.0 * PI * eps / j;
        assert_relative_eq!(truth, 0.142693610661, max_relative = 1e-9);
        // midpoint quadrature of the Dirichlet form is first-order at the
        // cut cells; 1/128 sits at ≈1.2% relative
        assert_relative_eq!(cap.value(), truth, max_relative = 2e-2);
        let fine = capacity_pde(&p, &dom, &cfg, eps, 1.0 / 256.0, None).unwrap();
        assert_relative_eq!(fine.value(), truth, max_relative = 8e-3);
    }

    #[test]
    fn pde_capacity_sandwich_and_monotonicity() {
        let (p, dom, bq, chart) = radial_chart(96, 0.3);
        let eps = 0.15;
        let cfg = CapacitorConfig {
            center: [0.0, 0.0],
            radius: 0.25,
            delta: 0.3,
        };
        let cap = capacity_pde(&p, &dom, &cfg, eps, 1.0 / 96.0, Some(&chart)).unwrap();
        let ub = capacity_upper_bound(&p, &bq, &chart, &cfg, eps).unwrap();
        assert!(
            cap.value() <= ub.value() * (1.0 + 5e-3),
            "upper bound violated: cap {} > ub {}",
            cap.value(),
            ub.value()
        );
        // most of the energy lives in the boundary tube
        let bd = cap.breakdown.unwrap();
        assert!(bd.tube_fraction > 0.5, "tube fraction {}", bd.tube_fraction);
        // enlarging the capacitor cannot decrease capacity
        let bigger = CapacitorConfig {
            radius: 0.35,
            ..cfg
        };
        let cap_big = capacity_pde(&p, &dom, &bigger, eps, 1.0 / 96.0, None).unwrap();
        assert!(cap_big.value() >= cap.value());
    }

    #[test]
    fn capacitor_validation_rejects_tube_overlap() {
        let (_p, dom, _bq, chart) = radial_chart(64, 0.3);
        // tube reaches r = sqrt(1 - 0.6) ≈ 0.632; a ball of radius 0.7 hits it
        let bad = CapacitorConfig {
            center: [0.0, 0.0],
            radius: 0.7,
            delta: 0.3,
        };
        assert!(matches!(
            validate_capacitor(&dom, &chart, &bad),
            Err(CapacityError::CapacitorIntersectsTube { .. })
        ));
    }

    #[test]
    fn mean_exit_via_boundary_integral_reproduces_sharp() {
        let p = IsoQuadratic::unit(2);
        let dom = Domain::unit_disk();
        let bq = build_boundary_quadrature(&dom, 128).unwrap();
        let x0 = classify(&p, &[0.0, 0.0]).unwrap();
        for &eps in &[0.1, 0.2] {
            let cap = boundary_integral_capacity(&p, &bq, eps);
            let via_cap = mean_exit_via_capacity(&cap, &x0, eps);
            let sharp = crate::asymptotics::sharp_mean_exit(&p, &bq, &x0, eps);
            assert!((via_cap.ln() - sharp.log_mean_exit).abs() <= 1e-12);
            // doubling the capacity halves the exit time exactly
            let doubled = CapacityEstimate {
                log_value: LogValue::from_ln(cap.log_value.ln() + 2f64.ln()),
                ..cap
            };
            let halved = mean_exit_via_capacity(&doubled, &x0, eps);
            assert_relative_eq!(via_cap.ln() - halved.ln(), 2f64.ln(), epsilon = 1e-13);
        }
    }

    #[test]
    fn capacity_route_approaches_pde_exit_time() {
        // E_cap/u(0): ≈ 1.2396 at ε = 0.15, ≈ 1.0161 at ε = 0.075 (radial
        // truth); the agreement tightens as ε decreases
        let p = IsoQuadratic::unit(2);
        let dom = Domain::unit_disk();
        let x0 = classify(&p, &[0.0, 0.0]).unwrap();
        let u0 = |eps: f64| {
            integrate(
                |s| {
                    if s <= 1e-12 {
                        0.0
                    } else {
                        ((s * s / (2.0 * eps)).exp() - 1.0) / s
                    }
                },
                0.0,
                1.0,
                1e-12,
                1e-14,
            )
        };
        let cfg = CapacitorConfig {
            center: [0.0, 0.0],
            radius: 0.25,
            delta: 0.3,
        };
        let mut prev = f64::INFINITY;
        for &eps in &[0.15, 0.1, 0.075] {
            let cap = capacity_pde(&p, &dom, &cfg, eps, 1.0 / 128.0, None).unwrap();
            let e_cap = mean_exit_via_capacity(&cap, &x0, eps).value();
            let ratio = e_cap / u0(eps);
            assert!(ratio > 0.95 && ratio < 1.30, "ratio {ratio} at ε = {eps}");
            assert!(
                (ratio - 1.0).abs() < prev,
                "capacity route not tightening: {ratio} at ε = {eps}"
            );
            prev = (ratio - 1.0).abs();
        }
    }

    #[test]
    fn well_integral_values() {
        let p = IsoQuadratic::unit(2);
        let dom = Domain::unit_disk();
        let x0 = classify(&p, &[0.0, 0.0]).unwrap();
        // (2πε)^{d/2}/sqrt(det) at ε = 0.1, det = 1: 0.2π
        assert_relative_eq!(
            well_integral(&x0, 0.1).value(),
            0.2 * PI,
            max_relative = 1e-12
        );
        // det Hess = 2 divides the value by sqrt(2)
        let p2 = crate::potential::AnisoQuadratic::new(vec![1.0, 2.0]);
        let x02 = classify(&p2, &[0.0, 0.0]).unwrap();
        assert_relative_eq!(
            well_integral(&x02, 0.1).value(),
            0.2 * PI / 2.0f64.sqrt(),
            max_relative = 1e-12
        );
        // grid quadrature: ∫_D e^{-r²/(2ε)} = 2πε(1 - e^{-1/(2ε)}), below
        // the full-plane Gaussian mass 2πε
        let eps = 0.05;
        let grid_value = well_integral_quadrature(&p, &dom, eps, 800);
        let exact = 2.0 * PI * eps * (1.0 - (-1.0f64 / (2.0 * eps)).exp());
        assert_relative_eq!(grid_value, exact, max_relative = 1e-4);
        assert_relative_eq!(exact, 0.314145002550398, max_relative = 1e-12);
        assert!(grid_value < 2.0 * PI * eps);
        let laplace = well_integral(&x0, eps).value();
        assert!((grid_value / laplace - 1.0).abs() <= 2.0 * eps);
    }
}
