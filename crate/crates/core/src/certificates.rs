//! Post-hoc certificate checks over correction traces: finite-time
//! convergence into `C_delta`, forward invariance once there, the comparison
//! bound on the Lyapunov value, local traps, and the error-decay fits.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::GmmTarget;
use crate::integrators::CorrectionTrace;
use crate::metrics::segment_lengths;
use crate::safety::CbfParams;
use crate::trajectory::Path;

/// `V = max(delta - b, 0)`.
pub fn lyapunov_value(b: f64, delta: f64) -> f64 {
    (delta - b).max(0.0)
}

/// Solution of `phi' = -eps phi^rho`, `phi(t_w) = V0`, clamped at its
/// extinction time.
pub fn comparison_solution(v0: f64, epsilon: f64, rho: f64, t_w: f64, t: f64) -> Result<f64> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::invalid(format!("rho must lie in (0, 1), got {rho}")));
    }
    let base = v0.max(0.0).powf(1.0 - rho) - (1.0 - rho) * epsilon * (t - t_w);
    Ok(if base <= 0.0 { 0.0 } else { base.powf(1.0 / (1.0 - rho)) })
}

/// `t_w + max(delta - b, 0)^(1 - rho) / (eps (1 - rho))`.
pub fn convergence_bound(b_at_tw: f64, params: &CbfParams) -> f64 {
    convergence_bound_from(b_at_tw, params, params.t_w)
}

fn convergence_bound_from(b: f64, p: &CbfParams, t0: f64) -> f64 {
    let v = lyapunov_value(b, p.delta);
    t0 + v.powf(1.0 - p.rho) / (p.epsilon * (1.0 - p.rho))
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrapReport {
    pub flag: bool,
    /// Every `k` with `||tau^k - tau^(k-1)|| > zeta`.
    pub indices: Vec<usize>,
}

pub fn detect_trap(path: &Path, zeta: f64) -> TrapReport {
    let indices: Vec<usize> = segment_lengths(path)
        .into_iter()
        .enumerate()
        .filter(|&(_, s)| s > zeta)
        .map(|(i, _)| i + 1)
        .collect();
    TrapReport {
        flag: !indices.is_empty(),
        indices,
    }
}

/// For each `(waypoint, barrier)`, the earliest snapshot time from which
/// `b >= delta - tol` holds to the end; `None` if the final value violates.
pub fn settle_times(trace: &CorrectionTrace, delta: f64, tol: f64) -> Vec<Option<f64>> {
    let nb = trace.barrier_count;
    let n = trace.num_waypoints();
    let mut out = Vec::with_capacity(n * nb);
    for idx in 0..n * nb {
        let mut settled = None;
        for s in trace.snapshots.iter().rev() {
            if s.barrier[idx] >= delta - tol {
                settled = Some(s.t);
            } else {
                break;
            }
        }
        out.push(settled);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    /// Never reached `C_delta` (within tolerance) after `t_w`.
    NotReached,
    /// Reached, but later than the convergence bound plus one step.
    LateReach,
    /// Left `C_delta` by more than the tolerance after entering it.
    Invariance,
    /// `V(t)` exceeded the comparison solution plus tolerance.
    Comparison,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub waypoint: usize,
    pub barrier: usize,
    /// Snapshot index into the trace.
    pub snapshot: usize,
    pub t: f64,
    /// How far past the allowed value; positive means violated.
    pub margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaypointCertificate {
    pub waypoint: usize,
    pub barrier: usize,
    pub b_at_tw: f64,
    /// First snapshot time at or after `t_w` with `b >= delta - tol`.
    pub reach_time: Option<f64>,
    pub bound: f64,
    pub invariance_held: bool,
    /// Largest `delta - b` after first entering `{b >= delta}`.
    pub max_post_reach_violation: f64,
}

/// Constants of `||e_t|| <= C1 exp(-alpha t) + C2 (1 - t)^2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeFit {
    pub c1: f64,
    pub c2: f64,
    /// `max_t ||e_t|| - envelope(t)`; non-positive when the envelope holds.
    pub max_excess: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub delta: f64,
    pub t_w: f64,
    pub step: f64,
    /// Largest observed `|db/dt|` between consecutive snapshots.
    pub lipschitz: f64,
    pub tolerance: f64,
    pub waypoints: Vec<WaypointCertificate>,
    pub violations: Vec<Violation>,
    pub trap: Option<TrapReport>,
    pub envelope: Option<EnvelopeFit>,
}

impl CertificateReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn invariance_held(&self) -> bool {
        self.waypoints.iter().all(|w| w.invariance_held)
    }

    /// Header and one summary row.
    pub fn write_csv_summary<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let fail = |e: csv::Error| Error::invalid(format!("report csv: {e}"));
        let max_reach = self
            .waypoints
            .iter()
            .filter_map(|c| c.reach_time)
            .fold(f64::NEG_INFINITY, f64::max);
        let max_bound = self.waypoints.iter().map(|c| c.bound).fold(f64::NEG_INFINITY, f64::max);
        w.write_record([
            "passed",
            "invariance_held",
            "violations",
            "tolerance",
            "lipschitz",
            "max_reach_time",
            "max_bound",
            "trap",
        ])
        .map_err(fail)?;
        let finite = |x: f64| if x.is_finite() { x.to_string() } else { String::new() };
        w.write_record([
            self.passed().to_string(),
            self.invariance_held().to_string(),
            self.violations.len().to_string(),
            self.tolerance.to_string(),
            self.lipschitz.to_string(),
            finite(max_reach),
            finite(max_bound),
            self.trap.as_ref().map(|t| t.flag.to_string()).unwrap_or_default(),
        ])
        .map_err(fail)?;
        w.flush().map_err(|e| fail(e.into()))?;
        Ok(())
    }
}

/// Largest `|b_{i+1} - b_i| / (t_{i+1} - t_i)` and largest step.
fn lipschitz_and_step(trace: &CorrectionTrace) -> (f64, f64) {
    let mut l: f64 = 0.0;
    let mut step: f64 = 0.0;
    for w in trace.snapshots.windows(2) {
        let dt = w[1].t - w[0].t;
        step = step.max(dt);
        for (a, b) in w[0].barrier.iter().zip(&w[1].barrier) {
            l = l.max((b - a).abs() / dt);
        }
    }
    (l, step)
}

/// Checks the trace with the data-driven tolerance `L * dt`.
pub fn verify_invariance(trace: &CorrectionTrace, params: &CbfParams) -> Result<CertificateReport> {
    let (l, step) = lipschitz_and_step(trace);
    verify_with_tolerance(trace, params, l * step)
}

/// As [`verify_invariance`] with an explicit tolerance.
///
/// Invariance is anchored at the first snapshot at or after `t_w` with
/// `b >= delta` exactly; the tolerance only loosens the staying condition.
/// This keeps the verdict monotone in `tol`.
pub fn verify_with_tolerance(
    trace: &CorrectionTrace,
    params: &CbfParams,
    tol: f64,
) -> Result<CertificateReport> {
    params.validate()?;
    let snaps = &trace.snapshots;
    if snaps.len() < 2 {
        return Err(Error::invalid("trace needs at least two snapshots"));
    }
    if snaps.windows(2).any(|w| !(w[1].t > w[0].t)) {
        return Err(Error::invalid("trace times must be strictly increasing"));
    }
    let nb = trace.barrier_count;
    let n = trace.num_waypoints();
    if snaps.iter().any(|s| s.barrier.len() != n * nb) {
        return Err(Error::invalid("trace barrier columns are inconsistent"));
    }
    let (l, step) = lipschitz_and_step(trace);
    let delta = params.delta;
    let iw = snaps
        .iter()
        .position(|s| s.t >= params.t_w - 1e-12)
        .ok_or_else(|| Error::invalid("trace ends before t_w"))?;
    let tw = snaps[iw].t;

    let mut waypoints = Vec::with_capacity(n * nb);
    let mut violations = Vec::new();
    for k in 0..n {
        for j in 0..nb {
            let idx = k * nb + j;
            let b_w = snaps[iw].barrier[idx];
            let bound = convergence_bound_from(b_w, params, tw);
            let reach = (iw..snaps.len()).find(|&i| snaps[i].barrier[idx] >= delta - tol);
            match reach {
                None => violations.push(Violation {
                    kind: ViolationKind::NotReached,
                    waypoint: k,
                    barrier: j,
                    snapshot: snaps.len() - 1,
                    t: snaps.last().unwrap().t,
                    margin: delta - tol - snaps.last().unwrap().barrier[idx],
                }),
                Some(i) if snaps[i].t > bound + step + 1e-12 => violations.push(Violation {
                    kind: ViolationKind::LateReach,
                    waypoint: k,
                    barrier: j,
                    snapshot: i,
                    t: snaps[i].t,
                    margin: snaps[i].t - bound - step,
                }),
                Some(_) => {}
            }

            let entry = (iw..snaps.len()).find(|&i| snaps[i].barrier[idx] >= delta);
            let mut held = true;
            let mut worst = f64::NEG_INFINITY;
            if let Some(e) = entry {
                let mut reported = false;
                for (i, s) in snaps.iter().enumerate().skip(e + 1) {
                    let gap = delta - s.barrier[idx];
                    worst = worst.max(gap);
                    if gap > tol {
                        held = false;
                        if !reported {
                            violations.push(Violation {
                                kind: ViolationKind::Invariance,
                                waypoint: k,
                                barrier: j,
                                snapshot: i,
                                t: s.t,
                                margin: gap - tol,
                            });
                            reported = true;
                        }
                    }
                }
            }

            let v0 = lyapunov_value(b_w, delta);
            for (i, s) in snaps.iter().enumerate().skip(iw) {
                let phi = comparison_solution(v0, params.epsilon, params.rho, tw, s.t)?;
                let excess = lyapunov_value(s.barrier[idx], delta) - phi - tol;
                if excess > 0.0 {
                    violations.push(Violation {
                        kind: ViolationKind::Comparison,
                        waypoint: k,
                        barrier: j,
                        snapshot: i,
                        t: s.t,
                        margin: excess,
                    });
                    break;
                }
            }

            waypoints.push(WaypointCertificate {
                waypoint: k,
                barrier: j,
                b_at_tw: b_w,
                reach_time: reach.map(|i| snaps[i].t),
                bound,
                invariance_held: held,
                max_post_reach_violation: if worst.is_finite() { worst } else { 0.0 },
            });
        }
    }
    Ok(CertificateReport {
        delta,
        t_w: params.t_w,
        step,
        lipschitz: l,
        tolerance: tol,
        waypoints,
        violations,
        trap: None,
        envelope: None,
    })
}

/// Full check of a planned trace: invariance report plus the trap flag of
/// the final path.
pub fn certify(trace: &CorrectionTrace, params: &CbfParams, zeta: f64) -> Result<CertificateReport> {
    let mut report = verify_invariance(trace, params)?;
    report.trap = Some(detect_trap(trace.final_path(), zeta));
    Ok(report)
}

/// Least-squares slope of `y` against `x`.
pub fn linear_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::invalid("slope fit needs two or more paired points"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if !(sxx > 0.0) {
        return Err(Error::invalid("slope fit needs distinct abscissae"));
    }
    Ok(sxy / sxx)
}

/// Slope of `log ||e_t||` against `t` over snapshots with `t` in `[lo, hi]`.
pub fn log_error_slope(times: &[f64], errors: &[f64], lo: f64, hi: f64) -> Result<f64> {
    let (x, y): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(errors)
        .filter(|(t, e)| (lo..=hi).contains(*t) && **e > 0.0)
        .map(|(t, e)| (*t, e.ln()))
        .unzip();
    linear_slope(&x, &y)
}

/// Fits `C1, C2` through snapshots `i` and `j`, then reports the largest
/// excess of the error over the envelope on the whole trace.
pub fn fit_error_envelope(
    times: &[f64],
    errors: &[f64],
    alpha: f64,
    i: usize,
    j: usize,
) -> Result<EnvelopeFit> {
    if i == j || i.max(j) >= times.len() || times.len() != errors.len() {
        return Err(Error::invalid("envelope fit needs two distinct in-range points"));
    }
    let basis = |t: f64| ((-alpha * t).exp(), (1.0 - t) * (1.0 - t));
    let (a11, a12) = basis(times[i]);
    let (a21, a22) = basis(times[j]);
    let det = a11 * a22 - a12 * a21;
    if det.abs() < 1e-300 {
        return Err(Error::invalid("envelope fit points are degenerate"));
    }
    let c1 = (errors[i] * a22 - errors[j] * a12) / det;
    let c2 = (a11 * errors[j] - a21 * errors[i]) / det;
    let max_excess = times
        .iter()
        .zip(errors)
        .map(|(&t, &e)| {
            let (p, q) = basis(t);
            e - (c1 * p + c2 * q)
        })
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(EnvelopeFit { c1, c2, max_excess })
}

/// `||E[tau_1 | tau_t] - tau_star||` along `tau_t = tau_star + (1 - t) dir`.
pub fn posterior_errors(gmm: &GmmTarget, tau_star: &Path, dir: &Path, ts: &[f64]) -> Result<Vec<f64>> {
    ts.iter()
        .map(|&t| {
            let mut tau = tau_star.clone();
            tau.axpy(1.0 - t, dir);
            Ok(gmm.posterior(&tau, t)?.mean.distance(tau_star))
        })
        .collect()
}

/// Log-log slope of the posterior-mean error against `1 - t`.
pub fn posterior_contraction_slope(
    gmm: &GmmTarget,
    tau_star: &Path,
    dir: &Path,
    ts: &[f64],
) -> Result<f64> {
    let errs = posterior_errors(gmm, tau_star, dir, ts)?;
    let x: Vec<f64> = ts.iter().map(|t| (1.0 - t).ln()).collect();
    let y: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("posterior error"));
    }
    linear_slope(&x, &y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrators::Snapshot;
    use proptest::prelude::*;

    fn trace_from(values: &[f64], dt: f64) -> CorrectionTrace {
        let snapshots = values
            .iter()
            .enumerate()
            .map(|(i, &b)| Snapshot {
                t: (i as f64 * dt).min(1.0),
                path: Path::zeros(2, 0),
                barrier: vec![b],
                slack: vec![0.0],
                multipliers: vec![0.0],
                degenerate: vec![false],
            })
            .collect();
        CorrectionTrace {
            barrier_count: 1,
            snapshots,
        }
    }

    #[test]
    fn lyapunov_cases() {
        assert_eq!(lyapunov_value(0.01, 0.01), 0.0);
        assert!((lyapunov_value(0.01 - 0.3, 0.01) - 0.3).abs() < 1e-15);
        assert_eq!(lyapunov_value(5.01, 0.01), 0.0);
    }

    #[test]
    fn comparison_cases() {
        for dt in [0.0, 0.5, 3.0] {
            assert_eq!(comparison_solution(0.0, 1.0, 0.5, 0.2, 0.2 + dt).unwrap(), 0.0);
        }
        assert_eq!(comparison_solution(1.0, 1.0, 0.5, 0.0, 2.0).unwrap(), 0.0);
        assert!((comparison_solution(1.0, 1.0, 0.5, 0.0, 1.0).unwrap() - 0.25).abs() < 1e-15);
        assert!(comparison_solution(1.0, 1.0, 1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn comparison_is_nonincreasing_and_hits_zero_at_bound() {
        let (v0, eps, rho, tw) = (0.7f64, 3.0, 0.4, 0.25);
        let ext = tw + v0.powf(1.0 - rho) / ((1.0 - rho) * eps);
        let mut last = f64::INFINITY;
        for i in 0..=1000 {
            let t = tw + i as f64 * (ext - tw) * 1.2 / 1000.0;
            let phi = comparison_solution(v0, eps, rho, tw, t).unwrap();
            assert!(phi <= last);
            last = phi;
        }
        assert_eq!(comparison_solution(v0, eps, rho, tw, ext).unwrap(), 0.0);
        assert!(comparison_solution(v0, eps, rho, tw, ext - 1e-9).unwrap() > 0.0);
    }

    #[test]
    fn bound_cases() {
        let p = CbfParams::default();
        assert_eq!(convergence_bound(p.delta, &p), p.t_w);
        assert_eq!(convergence_bound(3.0, &p), p.t_w);
        let q = CbfParams { epsilon: 1.0, t_w: 0.0, ..p.clone() };
        assert!((convergence_bound(q.delta - 0.25, &q) - 1.0).abs() < 1e-15);
        let r = CbfParams { epsilon: 10.0, t_w: 0.5, ..p };
        assert!((convergence_bound(r.delta - 1.0, &r) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn trap_cases() {
        let s = 0.5;
        let line: Vec<[f64; 2]> = (0..10).map(|k| [k as f64 * s, 1.0]).collect();
        let p = Path::from_waypoints(&line).unwrap();
        assert!(!detect_trap(&p, 2.0 * s).flag);
        let mut bent = line.clone();
        bent[4][1] += 3.0 * s;
        let r = detect_trap(&Path::from_waypoints(&bent).unwrap(), 2.0 * s);
        assert!(r.flag);
        assert_eq!(r.indices, vec![4, 5]);
    }

    #[test]
    fn clean_trace_passes() {
        // Reaches delta from below at t = 0.625 and stays.
        let p = CbfParams::default();
        let dt = 1.0 / 8.0;
        let tr = trace_from(&[-0.5, -0.3, -0.2, -0.1, -0.05, 0.01, 0.2, 0.3, 0.3], dt);
        let rep = verify_invariance(&tr, &p).unwrap();
        assert!(rep.passed(), "{:?}", rep.violations);
        assert!(rep.invariance_held());
    }

    #[test]
    fn dip_after_reaching_is_reported_at_the_dip() {
        let p = CbfParams::default();
        let dt = 1.0 / 16.0;
        // Rises slowly, enters C_delta at t_w (snapshot 8), then slides out.
        let vals: Vec<f64> = (0..=16)
            .map(|i| if i <= 9 { -0.07 + 0.01 * i as f64 } else { 0.02 - 0.01 * (i - 9) as f64 })
            .collect();
        let tr = trace_from(&vals, dt);
        let rep = verify_invariance(&tr, &p).unwrap();
        assert!(!rep.invariance_held());
        let v = rep
            .violations
            .iter()
            .find(|v| v.kind == ViolationKind::Invariance)
            .unwrap();
        let tol = rep.tolerance;
        let first_bad = vals.iter().enumerate().skip(9).find(|(_, &b)| p.delta - b > tol).unwrap().0;
        assert_eq!(v.snapshot, first_bad);
    }

    #[test]
    fn never_reaching_fails() {
        let p = CbfParams::default();
        let tr = trace_from(&[-0.9, -0.9, -0.9, -0.9, -0.9], 0.25);
        let rep = verify_invariance(&tr, &p).unwrap();
        assert!(rep.violations.iter().any(|v| v.kind == ViolationKind::NotReached));
    }

    #[test]
    fn settle_time() {
        let tr = trace_from(&[0.5, -0.1, 0.2, 0.3], 1.0 / 3.0);
        assert_eq!(settle_times(&tr, 0.01, 0.0), vec![Some(2.0 / 3.0)]);
        let tr = trace_from(&[0.5, 0.5, -0.1], 0.5);
        assert_eq!(settle_times(&tr, 0.01, 0.0), vec![None]);
    }

    #[test]
    fn slopes() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 - 2.0 * v).collect();
        assert!((linear_slope(&x, &y).unwrap() + 2.0).abs() < 1e-12);
        let t: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        let e: Vec<f64> = t.iter().map(|t| 5.0 * (-2.0 * t).exp()).collect();
        assert!((log_error_slope(&t, &e, 0.0, 0.8).unwrap() + 2.0).abs() < 1e-9);
    }

    #[test]
    fn envelope_recovers_constants() {
        let t: Vec<f64> = (0..=64).map(|i| i as f64 / 64.0).collect();
        let e: Vec<f64> = t.iter().map(|t| 2.0 * (-2.0 * t).exp() + 0.3 * (1.0 - t).powi(2)).collect();
        let fit = fit_error_envelope(&t, &e, 2.0, 1, 4).unwrap();
        assert!((fit.c1 - 2.0).abs() < 1e-9 && (fit.c2 - 0.3).abs() < 1e-9);
        assert!(fit.max_excess < 1e-9);
    }

    #[test]
    fn point_mass_posterior_mean_contracts_linearly() {
        let mu = Path::from_columns(2, vec![1.0, 2.0, 3.0, -1.0]).unwrap();
        let g = GmmTarget::point_mass(mu.clone(), 0.3).unwrap();
        let dir = Path::from_columns(2, vec![0.5, -0.5, 0.25, 1.0]).unwrap();
        let ts: Vec<f64> = (0..40).map(|i| 1.0 - 10f64.powf(-1.0 - 2.0 * i as f64 / 39.0)).collect();
        let slope = posterior_contraction_slope(&g, &mu, &dir, &ts).unwrap();
        assert!(slope > 0.9, "{slope}");
    }

    proptest! {
        #[test]
        fn verdict_is_monotone_in_tolerance(
            vals in proptest::collection::vec(-0.2f64..0.1, 9..30),
            tol in 0.0f64..0.05,
            extra in 0.0f64..0.1,
        ) {
            let p = CbfParams::default();
            let tr = trace_from(&vals, 1.0 / (vals.len() - 1) as f64);
            let a = verify_with_tolerance(&tr, &p, tol).unwrap();
            let b = verify_with_tolerance(&tr, &p, tol + extra).unwrap();
            if a.passed() {
                prop_assert!(b.passed());
            }
            prop_assert!(b.violations.len() <= a.violations.len());
        }

        #[test]
        fn trap_is_translation_invariant(
            pts in proptest::collection::vec([-5.0f64..5.0, -5.0f64..5.0], 2..20),
            shift in [-100.0f64..100.0, -100.0f64..100.0],
            zeta in 0.1f64..5.0,
        ) {
            let p = Path::from_waypoints(&pts).unwrap();
            let mut q = p.clone();
            q.translate(&shift);
            let a = detect_trap(&p, zeta);
            let b = detect_trap(&q, zeta);
            // Segment lengths can differ in the last bits after translation.
            let lens = segment_lengths(&p);
            let near = lens.iter().any(|s| (s - zeta).abs() < 1e-9);
            if !near {
                prop_assert_eq!(a, b);
            }
        }
    }
}
