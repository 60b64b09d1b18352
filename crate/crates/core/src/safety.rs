//! Barrier functions, the finite-time CBF constraint for the directly
//! velocity-controlled flow system, and its per-waypoint QP.
//!
//! The flow dynamics are `d tau^k / dt = u^k`, so the control-affine
//! Lie-derivative form specializes to `f = v_ref`, `g = I` and the constraint
//! for one barrier is
//!
//! ```text
//! grad b(tau^k)^T u^k + eps * sgn(b - delta) * |b - delta|^rho + w_t * r >= 0
//! ```
//!
//! with a slack `r` that is penalized quadratically and disappears once the
//! relaxation weight `w_t` reaches zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Differentiable barrier `b`; the safe set is `{x : b(x) >= 0}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BarrierSpec {
    /// `((x - x0) / a)^2 + ((y - y0) / b)^2 - 1`.
    Ellipse {
        center: [f64; 2],
        semi_axes: [f64; 2],
        #[serde(default = "default_xy")]
        coords: [usize; 2],
    },
    /// `((x - x0) / a)^4 + ((y - y0) / b)^4 - 1`.
    Quartic {
        center: [f64; 2],
        semi_axes: [f64; 2],
        #[serde(default = "default_xy")]
        coords: [usize; 2],
    },
    /// Roof constraint `h_r - z - phi * v_z`; `coords` index `(z, v_z)`.
    HalfspaceVelocity {
        roof: f64,
        velocity_scale: f64,
        coords: [usize; 2],
    },
}

fn default_xy() -> [usize; 2] {
    [0, 1]
}

impl BarrierSpec {
    pub fn ellipse(center: [f64; 2], semi_axes: [f64; 2]) -> Self {
        BarrierSpec::Ellipse {
            center,
            semi_axes,
            coords: default_xy(),
        }
    }

    pub fn quartic(center: [f64; 2], semi_axes: [f64; 2]) -> Self {
        BarrierSpec::Quartic {
            center,
            semi_axes,
            coords: default_xy(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            BarrierSpec::Ellipse { center, semi_axes, coords }
            | BarrierSpec::Quartic { center, semi_axes, coords } => {
                if !(semi_axes[0] > 0.0 && semi_axes[1] > 0.0) {
                    return Err(Error::invalid("barrier semi-axes must be positive"));
                }
                if center.iter().any(|c| !c.is_finite()) || coords[0] == coords[1] {
                    return Err(Error::invalid("barrier center/coordinates are invalid"));
                }
            }
            BarrierSpec::HalfspaceVelocity { roof, velocity_scale, coords } => {
                if !(*roof > 0.0 && *velocity_scale > 0.0) || coords[0] == coords[1] {
                    return Err(Error::invalid(
                        "roof barrier needs h_r > 0, phi > 0 and distinct coordinates",
                    ));
                }
            }
        }
        Ok(())
    }

    fn coords(&self) -> [usize; 2] {
        match self {
            BarrierSpec::Ellipse { coords, .. }
            | BarrierSpec::Quartic { coords, .. }
            | BarrierSpec::HalfspaceVelocity { coords, .. } => *coords,
        }
    }

    /// Smallest waypoint dimension this barrier can read.
    pub fn min_dim(&self) -> usize {
        let c = self.coords();
        c[0].max(c[1]) + 1
    }

    /// Barrier value only.
    pub fn value(&self, waypoint: &[f64]) -> Result<f64> {
        barrier_eval(self, waypoint).map(|(b, _)| b)
    }
}

/// Barrier value and analytic gradient at a waypoint.
pub fn barrier_eval(spec: &BarrierSpec, waypoint: &[f64]) -> Result<(f64, Vec<f64>)> {
    if waypoint.len() < spec.min_dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.min_dim(),
            got: waypoint.len(),
        });
    }
    let mut grad = vec![0.0; waypoint.len()];
    let [i, j] = spec.coords();
    let value = match spec {
        BarrierSpec::Ellipse { center, semi_axes, .. } => {
            let u = (waypoint[i] - center[0]) / semi_axes[0];
            let v = (waypoint[j] - center[1]) / semi_axes[1];
            grad[i] = 2.0 * u / semi_axes[0];
            grad[j] = 2.0 * v / semi_axes[1];
            u * u + v * v - 1.0
        }
        BarrierSpec::Quartic { center, semi_axes, .. } => {
            let u = (waypoint[i] - center[0]) / semi_axes[0];
            let v = (waypoint[j] - center[1]) / semi_axes[1];
            grad[i] = 4.0 * u * u * u / semi_axes[0];
            grad[j] = 4.0 * v * v * v / semi_axes[1];
            u.powi(4) + v.powi(4) - 1.0
        }
        BarrierSpec::HalfspaceVelocity { roof, velocity_scale, .. } => {
            grad[i] = -1.0;
            grad[j] = -velocity_scale;
            roof - waypoint[i] - velocity_scale * waypoint[j]
        }
    };
    Ok((value, grad))
}

/// Certificate and relaxation parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CbfParams {
    /// Convergence gain `eps > 0`.
    pub epsilon: f64,
    /// Exponent `rho` in `(0, 1)`.
    pub rho: f64,
    /// Robust margin: the certified set is `{b >= delta}`.
    pub delta: f64,
    /// Relaxation cutoff in `[0, 1)`; the slack weight is zero from here on.
    pub t_w: f64,
    pub w0: f64,
    /// Local-trap jump threshold. `None` resolves to the environment default.
    pub zeta: Option<f64>,
    /// Caps the admissible approach rate at `(b - delta) / dt` so that one
    /// Euler step cannot carry a convex barrier below `delta`.
    pub sampled_data_guard: bool,
}

impl Default for CbfParams {
    fn default() -> Self {
        CbfParams {
            epsilon: 10.0,
            rho: 0.5,
            delta: 0.01,
            t_w: 0.5,
            w0: 1.0,
            zeta: None,
            sampled_data_guard: true,
        }
    }
}

impl CbfParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.epsilon > 0.0
            && self.rho > 0.0
            && self.rho < 1.0
            && self.delta > 0.0
            && (0.0..1.0).contains(&self.t_w)
            && self.w0 >= 0.0
            && self.zeta.is_none_or(|z| z > 0.0);
        if ok && [self.epsilon, self.rho, self.delta, self.t_w, self.w0].iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::invalid(format!("CBF parameters out of range: {self:?}")))
        }
    }
}

/// Linear ramp `w0 * max(0, 1 - t / t_w)`; identically zero when `t_w = 0`.
pub fn weight_schedule(t: f64, t_w: f64, w0: f64) -> f64 {
    if t_w <= 0.0 {
        0.0
    } else {
        w0 * (1.0 - t / t_w).max(0.0)
    }
}

/// One constraint `grad^T u + offset + weight * r >= 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct CbfRow {
    pub grad: Vec<f64>,
    pub offset: f64,
    pub weight: f64,
    /// Barrier value the row was built from.
    pub barrier: f64,
}

impl CbfRow {
    /// Applies the sampled-data cap for an Euler step of length `dt`.
    pub fn guarded(mut self, delta: f64, dt: f64) -> Self {
        let margin = self.barrier - delta;
        if margin > 0.0 && dt > 0.0 {
            self.offset = self.offset.min(margin / dt);
        }
        self
    }
}

/// `eps * sgn(b - delta) * |b - delta|^rho`, with `sgn(0) = 0`.
pub fn convergence_term(b: f64, params: &CbfParams) -> f64 {
    let m = b - params.delta;
    if m.abs() < 1e-12 {
        0.0
    } else {
        params.epsilon * m.signum() * m.abs().powf(params.rho)
    }
}

pub fn cbf_row(spec: &BarrierSpec, params: &CbfParams, waypoint: &[f64], t: f64) -> Result<CbfRow> {
    let (b, grad) = barrier_eval(spec, waypoint)?;
    Ok(CbfRow {
        grad,
        offset: convergence_term(b, params),
        weight: weight_schedule(t, params.t_w, params.w0),
        barrier: b,
    })
}

/// Minimizer of `||u - v_ref||^2 + r^2` under at most two CBF rows.
#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution {
    pub u: Vec<f64>,
    pub slack: f64,
    /// One multiplier per row, for the Lagrangian
    /// `||u - v_ref||^2 + r^2 - sum_j lambda_j (a_j^T u + c_j + w r)`.
    pub multipliers: Vec<f64>,
    pub active: Vec<usize>,
    /// The two active gradients were too close to parallel to solve jointly.
    pub degenerate: bool,
}

impl QpSolution {
    fn passthrough(v_ref: &[f64], rows: usize) -> Self {
        QpSolution {
            u: v_ref.to_vec(),
            slack: 0.0,
            multipliers: vec![0.0; rows],
            active: Vec::new(),
            degenerate: false,
        }
    }

    pub fn objective(&self, v_ref: &[f64]) -> f64 {
        sq_dist(&self.u, v_ref) + self.slack * self.slack
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Condition number above which two active gradients count as parallel.
pub const GRAM_CONDITION_LIMIT: f64 = 1e12;

/// Closed-form projection for one or two rows sharing the slack weight `w`.
///
/// Works in the augmented variable `z = (u, r)` with row normals
/// `g_j = (a_j, w)`; for `w = 0` the slack column is dropped and `r = 0`.
pub fn qp_project(rows: &[CbfRow], v_ref: &[f64], w: f64) -> Result<QpSolution> {
    if rows.is_empty() {
        return Ok(QpSolution::passthrough(v_ref, 0));
    }
    if rows.len() > 2 {
        return Err(Error::invalid(format!(
            "closed-form QP supports at most two constraints, got {}",
            rows.len()
        )));
    }
    for row in rows {
        if row.grad.len() != v_ref.len() {
            return Err(Error::DimensionMismatch {
                expected: v_ref.len(),
                got: row.grad.len(),
            });
        }
    }
    let w = w.max(0.0);
    // Residual of each row at the reference input.
    let resid: Vec<f64> = rows.iter().map(|r| dot(&r.grad, v_ref) + r.offset).collect();
    if resid.iter().all(|&s| s >= 0.0) {
        return Ok(QpSolution::passthrough(v_ref, rows.len()));
    }
    let gram = |i: usize, j: usize| dot(&rows[i].grad, &rows[j].grad) + w * w;

    let build = |mu: &[(usize, f64)], degenerate: bool| -> QpSolution {
        let mut u = v_ref.to_vec();
        let mut slack = 0.0;
        let mut multipliers = vec![0.0; rows.len()];
        for &(j, m) in mu {
            for (x, a) in u.iter_mut().zip(&rows[j].grad) {
                *x += m * a;
            }
            slack += m * w;
            multipliers[j] = 2.0 * m;
        }
        QpSolution {
            u,
            slack,
            multipliers,
            active: mu.iter().map(|&(j, _)| j).collect(),
            degenerate,
        }
    };
    let lhs = |sol: &QpSolution, j: usize| dot(&rows[j].grad, &sol.u) + rows[j].offset + w * sol.slack;
    let satisfied = |sol: &QpSolution, j: usize| {
        let row = &rows[j];
        let lhs = lhs(sol, j);
        let scale = 1.0 + row.offset.abs() + dot(&row.grad, &row.grad).sqrt() * (1.0 + dot(&sol.u, &sol.u).sqrt());
        lhs >= -1e-11 * scale
    };

    let mut candidates: Vec<QpSolution> = Vec::new();
    for (j, &res) in resid.iter().enumerate() {
        if res >= 0.0 {
            continue;
        }
        let nn = gram(j, j);
        if nn <= 0.0 {
            continue;
        }
        let sol = build(&[(j, -res / nn)], false);
        if (0..rows.len()).all(|i| i == j || satisfied(&sol, i)) {
            candidates.push(sol);
        }
    }

    let mut degenerate = false;
    if rows.len() == 2 {
        let (m11, m12, m22) = (gram(0, 0), gram(0, 1), gram(1, 1));
        let det = m11 * m22 - m12 * m12;
        let tr = m11 + m22;
        let disc = ((m11 - m22) * (m11 - m22) + 4.0 * m12 * m12).sqrt();
        let (lmax, lmin) = (0.5 * (tr + disc), 0.5 * (tr - disc));
        let cond = if lmin > 0.0 { lmax / lmin } else { f64::INFINITY };
        if cond > GRAM_CONDITION_LIMIT || det <= 0.0 {
            degenerate = resid[0] < 0.0 && resid[1] < 0.0;
        } else {
            let solve = |r0: f64, r1: f64| ((-r0 * m22 + r1 * m12) / det, (-r1 * m11 + r0 * m12) / det);
            let (mut mu1, mut mu2) = solve(resid[0], resid[1]);
            if mu1 >= 0.0 && mu2 >= 0.0 {
                // One step of iterative refinement, applied to `u` in place:
                // rebuilding `u` from the corrected multipliers would bring
                // back the cancellation between large opposing terms.
                let mut sol = build(&[(0, mu1), (1, mu2)], false);
                let (d1, d2) = solve(lhs(&sol, 0), lhs(&sol, 1));
                for ((x, a), b) in sol.u.iter_mut().zip(&rows[0].grad).zip(&rows[1].grad) {
                    *x += d1 * a + d2 * b;
                }
                sol.slack += (d1 + d2) * w;
                mu1 += d1;
                mu2 += d2;
                sol.multipliers = vec![2.0 * mu1.max(0.0), 2.0 * mu2.max(0.0)];
                candidates.push(sol);
            }
        }
    }

    if let Some(best) = candidates
        .into_iter()
        .min_by(|a, b| a.objective(v_ref).total_cmp(&b.objective(v_ref)))
    {
        return Ok(best);
    }
    if degenerate {
        let j = if resid[0] <= resid[1] { 0 } else { 1 };
        let nn = gram(j, j);
        if nn > 0.0 {
            return Ok(build(&[(j, -resid[j] / nn)], true));
        }
    }
    Err(Error::Infeasible(format!(
        "no feasible input for residuals {resid:?} (slack weight {w})"
    )))
}

/// KKT residuals of a candidate solution.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal)
            .max(self.dual)
            .max(self.complementarity)
    }
}

pub fn kkt_residuals(rows: &[CbfRow], v_ref: &[f64], w: f64, sol: &QpSolution) -> KktResiduals {
    let mut res = KktResiduals::default();
    let mut grad_u: Vec<f64> = sol.u.iter().zip(v_ref).map(|(u, v)| 2.0 * (u - v)).collect();
    let mut grad_r = 2.0 * sol.slack;
    for (row, &lambda) in rows.iter().zip(&sol.multipliers) {
        for (g, a) in grad_u.iter_mut().zip(&row.grad) {
            *g -= lambda * a;
        }
        grad_r -= lambda * w;
        let lhs = dot(&row.grad, &sol.u) + row.offset + w * sol.slack;
        res.primal = res.primal.max(-lhs);
        res.dual = res.dual.max(-lambda);
        res.complementarity = res.complementarity.max((lambda * lhs).abs());
    }
    res.stationarity = dot(&grad_u, &grad_u).sqrt().max(grad_r.abs());
    res.primal = res.primal.max(0.0);
    res
}

/// Filters one waypoint velocity against every barrier of the environment.
///
/// `step` is the Euler step about to be taken; when given and the guard is
/// enabled, rows are capped so the step cannot cross below `delta`.
pub fn filter_step(
    v_ref: &[f64],
    specs: &[BarrierSpec],
    params: &CbfParams,
    waypoint: &[f64],
    t: f64,
    step: Option<f64>,
) -> Result<QpSolution> {
    if specs.len() > 2 {
        return Err(Error::invalid("at most two barriers per environment"));
    }
    let mut rows = Vec::with_capacity(specs.len());
    for spec in specs {
        let mut row = cbf_row(spec, params, waypoint, t)?;
        if let (true, Some(dt)) = (params.sampled_data_guard, step) {
            row = row.guarded(params.delta, dt);
        }
        rows.push(row);
    }
    qp_project(&rows, v_ref, weight_schedule(t, params.t_w, params.w0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn row(grad: &[f64], offset: f64) -> CbfRow {
        CbfRow {
            grad: grad.to_vec(),
            offset,
            weight: 0.0,
            barrier: 0.0,
        }
    }

    #[test]
    fn barrier_values() {
        let e = BarrierSpec::ellipse([0.0, 0.0], [1.0, 1.0]);
        let (b, g) = barrier_eval(&e, &[2.0, 0.0]).unwrap();
        assert_eq!(b, 3.0);
        assert_eq!(g, vec![4.0, 0.0]);

        let q = BarrierSpec::quartic([0.0, 0.0], [1.0, 1.0]);
        assert_eq!(q.value(&[1.0, 0.0]).unwrap(), 0.0);

        let roof = BarrierSpec::HalfspaceVelocity {
            roof: 1.0,
            velocity_scale: 0.1,
            coords: [0, 1],
        };
        let (b, g) = barrier_eval(&roof, &[0.5, 2.0]).unwrap();
        assert!((b - 0.3).abs() < 1e-15);
        assert_eq!(g, vec![-1.0, -0.1]);

        assert!(matches!(
            barrier_eval(&e, &[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn barrier_gradients_match_finite_differences() {
        let specs = [
            BarrierSpec::ellipse([3.0, 4.0], [0.8, 1.3]),
            BarrierSpec::quartic([5.5, 2.5], [0.9, 0.6]),
            BarrierSpec::HalfspaceVelocity {
                roof: 1.2,
                velocity_scale: 0.4,
                coords: [2, 0],
            },
        ];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let h = 1e-6;
        for spec in &specs {
            for _ in 0..1000 {
                let x: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..8.0)).collect();
                let (_, g) = barrier_eval(spec, &x).unwrap();
                for i in 0..3 {
                    let mut xp = x.clone();
                    xp[i] += h;
                    let mut xm = x.clone();
                    xm[i] -= h;
                    let fd = (spec.value(&xp).unwrap() - spec.value(&xm).unwrap()) / (2.0 * h);
                    let err = (fd - g[i]).abs() / g[i].abs().max(1.0);
                    assert!(err < 1e-4, "{spec:?} at {x:?}, coord {i}: {fd} vs {}", g[i]);
                }
            }
        }
    }

    #[test]
    fn weight_schedule_ramp() {
        assert_eq!(weight_schedule(0.0, 0.5, 2.0), 2.0);
        assert_eq!(weight_schedule(0.5, 0.5, 2.0), 0.0);
        assert_eq!(weight_schedule(0.9, 0.5, 2.0), 0.0);
        assert_eq!(weight_schedule(0.25, 0.5, 1.0), 0.5);
        assert_eq!(weight_schedule(0.0, 0.0, 1.0), 0.0);
    }

    #[test]
    fn convergence_term_cases() {
        let mut p = CbfParams::default();
        assert_eq!(convergence_term(p.delta, &p), 0.0);
        assert_eq!(convergence_term(p.delta + 1e-13, &p), 0.0);
        p.epsilon = 2.0;
        assert!((convergence_term(p.delta + 1.0, &p) - 2.0).abs() < 1e-15);
        p.epsilon = 1.0;
        assert!((convergence_term(p.delta - 0.04, &p) + 0.2).abs() < 1e-12);
    }

    #[test]
    fn params_validation() {
        assert!(CbfParams::default().validate().is_ok());
        let bad = CbfParams { rho: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = CbfParams { t_w: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = CbfParams { zeta: Some(0.0), ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn inactive_row_returns_reference() {
        let sol = qp_project(&[row(&[1.0, 0.0], 2.0)], &[0.5, -0.5], 0.0).unwrap();
        assert_eq!(sol.u, vec![0.5, -0.5]);
        assert_eq!(sol.slack, 0.0);
        assert!(sol.active.is_empty());
    }

    #[test]
    fn halfspace_projection() {
        let sol = qp_project(&[row(&[1.0, 0.0], -1.0)], &[0.0, 0.0], 0.0).unwrap();
        assert_eq!(sol.u, vec![1.0, 0.0]);
        assert_eq!(sol.slack, 0.0);
        assert_eq!(sol.multipliers, vec![2.0]);
    }

    #[test]
    fn slack_shares_the_correction() {
        // a = (1, 0), c = -1, w = 1: u = v - a s / (|a|^2 + w^2), r = -w s / (...).
        let sol = qp_project(&[row(&[1.0, 0.0], -1.0)], &[0.0, 0.0], 1.0).unwrap();
        assert!((sol.u[0] - 0.5).abs() < 1e-15);
        assert!((sol.slack - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_violation_is_infeasible() {
        let err = qp_project(&[row(&[0.0, 0.0], -1.0)], &[1.0, 1.0], 0.0).unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)));
        let err = qp_project(
            &[row(&[0.0, 0.0], -1.0), row(&[0.0, 0.0], -0.5)],
            &[1.0, 1.0],
            0.0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Infeasible(_)));
        // With slack the same rows are satisfiable.
        let sol = qp_project(&[row(&[0.0, 0.0], -1.0)], &[1.0, 1.0], 0.5).unwrap();
        assert!(sol.slack > 0.0);
    }

    #[test]
    fn parallel_rows_fall_back_with_flag() {
        let rows = [row(&[1.0, 0.0], -1.0), row(&[-1.0, 0.0], -1.0)];
        let sol = qp_project(&rows, &[0.0, 0.0], 0.0).unwrap();
        assert!(sol.degenerate);
        assert_eq!(sol.active, vec![0]);
    }

    #[test]
    fn two_active_constraints() {
        // x >= 1 and y >= 1 from the origin: corner (1, 1).
        let rows = [row(&[1.0, 0.0], -1.0), row(&[0.0, 1.0], -1.0)];
        let sol = qp_project(&rows, &[0.0, 0.0], 0.0).unwrap();
        assert!((sol.u[0] - 1.0).abs() < 1e-15 && (sol.u[1] - 1.0).abs() < 1e-15);
        assert_eq!(sol.active, vec![0, 1]);
        assert!(kkt_residuals(&rows, &[0.0, 0.0], 0.0, &sol).max() < 1e-14);
    }

    #[test]
    fn filter_step_far_from_obstacles_is_identity() {
        let specs = [
            BarrierSpec::ellipse([3.0, 4.0], [0.8, 0.8]),
            BarrierSpec::quartic([5.5, 2.5], [0.9, 0.9]),
        ];
        let p = CbfParams::default();
        // The quartic's gradient grows faster than its rate term, so "far"
        // also needs a modest approach speed.
        let v = [0.03, -0.07];
        let sol = filter_step(&v, &specs, &p, &[0.5, 7.5], 0.7, Some(1.0 / 256.0)).unwrap();
        assert_eq!(sol.u, v.to_vec());
    }

    #[test]
    fn filtered_velocity_escapes_from_inside() {
        let spec = BarrierSpec::ellipse([0.0, 0.0], [1.0, 1.0]);
        let p = CbfParams::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            let x = [rng.random_range(-0.9..0.9), rng.random_range(-0.9..0.9)];
            if spec.value(&x).unwrap() >= p.delta || (x[0] * x[0] + x[1] * x[1]) < 1e-6 {
                continue;
            }
            let v = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let sol = filter_step(&v, std::slice::from_ref(&spec), &p, &x, 0.8, None).unwrap();
            let (_, g) = barrier_eval(&spec, &x).unwrap();
            assert!(dot(&g, &sol.u) > 0.0);
        }
    }

    #[test]
    fn overlapping_obstacles_both_satisfied() {
        let specs = [
            BarrierSpec::ellipse([0.0, 0.0], [1.0, 1.0]),
            BarrierSpec::quartic([0.8, 0.3], [0.9, 0.9]),
        ];
        let p = CbfParams::default();
        let x = [0.5, 0.2];
        let v = [-1.0, 0.5];
        let sol = filter_step(&v, &specs, &p, &x, 0.9, None).unwrap();
        for spec in &specs {
            let r = cbf_row(spec, &p, &x, 0.9).unwrap();
            assert!(dot(&r.grad, &sol.u) + r.offset >= -1e-9);
        }
    }

    #[test]
    fn guard_caps_approach_rate() {
        let spec = BarrierSpec::ellipse([0.0, 0.0], [1.0, 1.0]);
        let p = CbfParams::default();
        let x = [1.2, 0.0];
        let v = [-5.0, 0.0];
        let dt = 1.0 / 256.0;
        let sol = filter_step(&v, std::slice::from_ref(&spec), &p, &x, 0.9, Some(dt)).unwrap();
        let next = [x[0] + dt * sol.u[0], x[1] + dt * sol.u[1]];
        assert!(spec.value(&next).unwrap() >= p.delta - 1e-15);
    }

    proptest! {
        #[test]
        fn hard_constraint_without_slack(
            a in [-3.0f64..3.0, -3.0f64..3.0],
            c in -5.0f64..5.0,
            v in [-3.0f64..3.0, -3.0f64..3.0],
        ) {
            prop_assume!(a[0].abs() + a[1].abs() > 1e-3);
            let rows = [row(&a, c)];
            let sol = qp_project(&rows, &v, 0.0).unwrap();
            prop_assert_eq!(sol.slack, 0.0);
            prop_assert!(dot(&a, &sol.u) + c >= -1e-9);
            prop_assert!(kkt_residuals(&rows, &v, 0.0, &sol).max() < 1e-8);
        }
    }
}
