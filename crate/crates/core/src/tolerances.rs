//! Centralized numerical tolerances.
//!
//! Every threshold used by the solvers is defined here with its rationale,
//! so that no module carries ad-hoc magic numbers.

/// Convergence threshold for Newton iteration on `|∇f| = 0`.
///
/// Quadratic convergence makes the last step essentially free; 1e-10 leaves
/// ~5 digits of headroom above f64 rounding for the Hessian solve.
pub const NEWTON_TOL: f64 = 1e-10;

/// Distance below which two converged critical points are considered the same.
pub const DEDUP_TOL: f64 = 1e-6;

/// `|det Hess|` below this is treated as a degenerate critical point.
pub const DEGENERACY_TOL: f64 = 1e-8;

/// Cap on Newton iterations per start before declaring non-convergence.
pub const MAX_NEWTON_ITERS: usize = 50;

/// Relative/absolute tolerance for the adaptive Runge-Kutta ray integrator.
pub const ODE_TOL: f64 = 1e-9;

/// A characteristic ray is unusable once `|H| = ||p|^2 - |∇f|^2|` exceeds
/// `HAMILTONIAN_DRIFT_FACTOR * ODE_TOL`.
pub const HAMILTONIAN_DRIFT_FACTOR: f64 = 100.0;

/// Tolerance for the tubular-chart consistency identities
/// (`f_-(Ψ(z, x_d)) = x_d` and the affine fiber profile of `f`).
pub const CHART_TOL: f64 = 1e-6;

/// Max deviation of `f` on boundary nodes for the constant-boundary formula.
pub const CONST_BOUNDARY_TOL: f64 = 1e-8;

/// Two boundary minima share the global minimum when their `f`-values agree
/// within `GLOBAL_MIN_TOL * (1 + |f| scale)`.
pub const GLOBAL_MIN_TOL: f64 = 1e-8;

/// `|∇φ|` floor used by the signed-distance proxy `φ/|∇φ|`. Below the floor
/// the raw `φ` value is returned instead; exactness is only needed near the
/// boundary where the hypothesis keeps `|∇φ|` bounded away from zero.
pub const GRAD_PHI_FLOOR: f64 = 1e-8;

/// `|∇φ|` below this *at a boundary point* is a genuinely degenerate level
/// set and is reported as an error.
pub const DEGENERATE_GRAD_TOL: f64 = 1e-14;

/// Interior critical-point search excludes a margin of
/// `INTERIOR_MARGIN_FRAC * bounding-box diagonal` (in signed-distance units)
/// to keep Newton's boundary-projection artifacts out.
pub const INTERIOR_MARGIN_FRAC: f64 = 0.05;

/// Newton projection onto the zero level set stops at this `|φ|`.
pub const BOUNDARY_PROJECTION_TOL: f64 = 1e-13;

/// Relative residual target for the sparse linear solves (equilibrated
/// norm), reached by iterative refinement of the direct factorization.
pub const LINEAR_SOLVE_TOL: f64 = 1e-10;

/// Acceptance level when refinement stalls: with weights spanning
/// `e^{-(max f - min f)/ε}` the f64 forward-error floor of the triangular
/// solves can sit above the target; a stalled residual below this level
/// still gives condition-bounded forward errors far under the calibration
/// budgets of every consumer.
pub const LINEAR_SOLVE_STALL_ACCEPT: f64 = 1e-7;

/// Relative change of successive Rayleigh quotients at which the inverse
/// power iteration is converged.
pub const EIGEN_REL_TOL: f64 = 1e-10;

/// Inverse power iteration cap.
pub const EIGEN_MAX_ITERS: usize = 200;

/// Central differencing of the transport term is refused above this grid
/// Peclet number `h·max|∇f|/(2ε)` for eigenvalue solves.
pub const PECLET_EIGEN_LIMIT: f64 = 2.0;

/// Monte Carlo runs fail loudly when more than this fraction of paths is
/// censored; silent truncation biases the mean down.
pub const CENSORING_LIMIT: f64 = 0.01;

/// Clipped nodal violations of `h ∈ [0,1]` beyond this magnitude are reported
/// as solver trouble rather than rounding.
pub const EQUILIBRIUM_CLIP_TOL: f64 = 1e-8;
