//! Euler flow integration, the prediction phase, the vanishing time-scaled
//! correction dynamics with the per-waypoint safety filter, and the full
//! prediction-correction pipeline.

use std::io::{Read, Write};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use crate::certificates::{detect_trap, settle_times};
use crate::env::{fit_gmm_target, generate_dataset, Environment, KMeansParams, PathDataset};
use crate::error::{Error, Result};
use crate::fields::{MlpCheckpoint, VectorField};
use crate::metrics::{acceleration, curvature, score_proxy, time_per_step, RunRecord};
use crate::safety::{filter_step, BarrierSpec, CbfParams};
use crate::store;
use crate::trajectory::rng::{sample_prior, stream_rng, streams};
use crate::trajectory::{FieldSpec, Method, Path, RunConfig, TimeGrid};

fn checked_step(field: &dyn VectorField, tau: &Path, t: f64, step: usize) -> Result<Path> {
    let v = field.eval(tau, t).map_err(|e| Error::at_step(step, e))?;
    if !v.is_finite() {
        return Err(Error::at_step(step, Error::NonFinite("field value")));
    }
    Ok(v)
}

/// `tau_{i+1} = tau_i + dt_i * v(tau_i, t_i)`; the field is never evaluated
/// at the final grid time.
pub fn euler_integrate(field: &dyn VectorField, grid: &TimeGrid, start: &Path) -> Result<Path> {
    field.check_input(start)?;
    if !start.is_finite() {
        return Err(Error::NonFinite("integration start"));
    }
    let mut tau = start.clone();
    for (i, (t, dt)) in grid.intervals().enumerate() {
        let v = checked_step(field, &tau, t, i)?;
        tau.axpy(dt, &v);
        if !tau.is_finite() {
            return Err(Error::at_step(i, Error::NonFinite("integrated path")));
        }
    }
    Ok(tau)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictionResult {
    /// The noise sample `tau_0^p`.
    pub start: Path,
    /// The predicted path `tau_1^p`.
    pub path: Path,
    pub steps_used: usize,
    /// `||v(tau_i, t_i)||` at each step.
    pub field_norms: Vec<f64>,
}

/// Unfiltered flow from a fresh prior sample.
pub fn predict<R: rand::Rng + ?Sized>(
    field: &dyn VectorField,
    t_pred: usize,
    rng: &mut R,
) -> Result<PredictionResult> {
    let grid = TimeGrid::uniform(t_pred)?;
    let start = sample_prior(field.dim(), field.horizon(), rng);
    let mut tau = start.clone();
    let mut field_norms = Vec::with_capacity(t_pred);
    for (i, (t, dt)) in grid.intervals().enumerate() {
        let v = checked_step(field, &tau, t, i)?;
        field_norms.push(v.norm());
        tau.axpy(dt, &v);
    }
    if !tau.is_finite() {
        return Err(Error::NonFinite("predicted path"));
    }
    Ok(PredictionResult {
        start,
        path: tau,
        steps_used: t_pred,
        field_norms,
    })
}

/// `alpha (1 - t) v_t(tau)`, defined on the closed interval `[0, 1]`.
///
/// OT-form fields supply the cancelled product directly; other fields are
/// evaluated at `min(t, 1 - 1e-9)` and multiplied.
#[derive(Clone, Debug)]
pub struct VtfdField<F> {
    pub inner: F,
    pub alpha: f64,
}

pub fn vtfd_field<F: VectorField>(inner: F, alpha: f64) -> Result<VtfdField<F>> {
    if !(alpha.is_finite() && alpha >= 1.0) {
        return Err(Error::invalid(format!("alpha must be >= 1, got {alpha}")));
    }
    Ok(VtfdField { inner, alpha })
}

impl<F: VectorField> VectorField for VtfdField<F> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn horizon(&self) -> usize {
        self.inner.horizon()
    }

    fn eval(&self, tau: &Path, t: f64) -> Result<Path> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::invalid(format!("VTFD time {t} outside [0, 1]")));
        }
        let mut v = self.inner.eval_time_scaled(tau, t)?;
        v.scale(self.alpha);
        Ok(v)
    }
}

/// Counts evaluations of the wrapped field.
#[derive(Debug)]
pub struct CountingField<F> {
    pub inner: F,
    count: AtomicUsize,
}

impl<F> CountingField<F> {
    pub fn new(inner: F) -> Self {
        CountingField {
            inner,
            count: AtomicUsize::new(0),
        }
    }

    pub fn count(&self) -> usize {
        self.count.load(Ordering::Relaxed)
    }
}

impl<F: VectorField> VectorField for CountingField<F> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn horizon(&self) -> usize {
        self.inner.horizon()
    }

    fn eval(&self, tau: &Path, t: f64) -> Result<Path> {
        self.count.fetch_add(1, Ordering::Relaxed);
        self.inner.eval(tau, t)
    }

    fn eval_time_scaled(&self, tau: &Path, t: f64) -> Result<Path> {
        self.count.fetch_add(1, Ordering::Relaxed);
        self.inner.eval_time_scaled(tau, t)
    }
}

/// The barrier set and certificate parameters applied per waypoint.
#[derive(Clone, Copy, Debug)]
pub struct SafetyFilter<'a> {
    pub barriers: &'a [BarrierSpec],
    pub params: &'a CbfParams,
}

/// State at one grid time plus the QP outcome of the step taken from it.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub path: Path,
    /// `barrier[k * nb + j]`: barrier `j` at waypoint `k`.
    pub barrier: Vec<f64>,
    /// Per-waypoint slack; zero without a filter and at the final time.
    pub slack: Vec<f64>,
    /// `multipliers[k * nb + j]`.
    pub multipliers: Vec<f64>,
    pub degenerate: Vec<bool>,
}

impl Snapshot {
    pub fn barrier_at(&self, k: usize, j: usize, nb: usize) -> f64 {
        self.barrier[k * nb + j]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrectionTrace {
    pub barrier_count: usize,
    pub snapshots: Vec<Snapshot>,
}

fn barrier_values(path: &Path, barriers: &[BarrierSpec]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(path.num_waypoints() * barriers.len());
    for wp in path.waypoints() {
        for b in barriers {
            out.push(b.value(wp)?);
        }
    }
    Ok(out)
}

impl CorrectionTrace {
    pub fn final_path(&self) -> &Path {
        &self.snapshots.last().expect("trace has snapshots").path
    }

    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.t).collect()
    }

    pub fn num_waypoints(&self) -> usize {
        self.snapshots.first().map_or(0, |s| s.path.num_waypoints())
    }

    pub fn degenerate_count(&self) -> usize {
        self.snapshots
            .iter()
            .map(|s| s.degenerate.iter().filter(|&&d| d).count())
            .sum()
    }

    /// Rows `step,t,k,x1..xd,b1..bn,slack,lambda1..n,degenerate`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let nb = self.barrier_count;
        let d = self.snapshots.first().map_or(0, |s| s.path.dim());
        let mut w = csv::Writer::from_writer(out);
        let fail = |e: csv::Error| Error::invalid(format!("trace csv: {e}"));
        let mut header: Vec<String> = vec!["step".into(), "t".into(), "k".into()];
        header.extend((1..=d).map(|i| format!("x{i}")));
        header.extend((1..=nb).map(|j| format!("b{j}")));
        header.push("slack".into());
        header.extend((1..=nb).map(|j| format!("lambda{j}")));
        header.push("degenerate".into());
        w.write_record(&header).map_err(fail)?;
        for (i, s) in self.snapshots.iter().enumerate() {
            for (k, wp) in s.path.waypoints().enumerate() {
                let mut row = vec![i.to_string(), s.t.to_string(), k.to_string()];
                row.extend(wp.iter().map(|x| x.to_string()));
                row.extend((0..nb).map(|j| s.barrier[k * nb + j].to_string()));
                row.push(s.slack[k].to_string());
                row.extend((0..nb).map(|j| s.multipliers[k * nb + j].to_string()));
                row.push((s.degenerate[k] as u8).to_string());
                w.write_record(&row).map_err(fail)?;
            }
        }
        w.flush().map_err(|e| fail(e.into()))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> std::result::Result<Self, String> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers().map_err(|e| e.to_string())?.clone();
        let d = header.iter().filter(|h| h.starts_with('x')).count();
        let nb = header.iter().filter(|h| h.starts_with('b')).count();
        if header.len() != 3 + d + 2 * nb + 2 {
            return Err(format!("unexpected trace columns: {header:?}"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| format!("{s:?}: {e}"));
        let idx = |s: &str| s.parse::<usize>().map_err(|e| format!("{s:?}: {e}"));
        struct Partial {
            t: f64,
            data: Vec<f64>,
            barrier: Vec<f64>,
            slack: Vec<f64>,
            multipliers: Vec<f64>,
            degenerate: Vec<bool>,
        }
        let mut parts: Vec<Partial> = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| e.to_string())?;
            let step = idx(&rec[0])?;
            let t = num(&rec[1])?;
            let k = idx(&rec[2])?;
            if step == parts.len() {
                parts.push(Partial {
                    t,
                    data: Vec::new(),
                    barrier: Vec::new(),
                    slack: Vec::new(),
                    multipliers: Vec::new(),
                    degenerate: Vec::new(),
                });
            } else if step + 1 != parts.len() {
                return Err(format!("trace rows out of order at step {step}"));
            }
            let p = parts.last_mut().unwrap();
            if p.t.to_bits() != t.to_bits() || k != p.slack.len() {
                return Err(format!("inconsistent row at step {step}, waypoint {k}"));
            }
            for i in 0..d {
                p.data.push(num(&rec[3 + i])?);
            }
            for j in 0..nb {
                p.barrier.push(num(&rec[3 + d + j])?);
            }
            p.slack.push(num(&rec[3 + d + nb])?);
            for j in 0..nb {
                p.multipliers.push(num(&rec[4 + d + nb + j])?);
            }
            p.degenerate.push(match &rec[4 + d + 2 * nb] {
                "0" => false,
                "1" => true,
                other => return Err(format!("bad degenerate flag {other:?}")),
            });
        }
        let snapshots = parts
            .into_iter()
            .map(|p| {
                Ok(Snapshot {
                    t: p.t,
                    path: Path::from_columns(d, p.data).map_err(|e| e.to_string())?,
                    barrier: p.barrier,
                    slack: p.slack,
                    multipliers: p.multipliers,
                    degenerate: p.degenerate,
                })
            })
            .collect::<std::result::Result<Vec<_>, String>>()?;
        if snapshots.is_empty() {
            return Err("trace has no rows".into());
        }
        Ok(CorrectionTrace {
            barrier_count: nb,
            snapshots,
        })
    }
}

/// Euler flow of `dynamics` over `grid`, filtering each waypoint velocity
/// when a filter is given. Records one snapshot per grid time.
///
/// `barriers` are recorded in the trace even without a filter, so unfiltered
/// runs can be checked with the same tools.
pub fn filtered_flow(
    dynamics: &dyn VectorField,
    grid: &TimeGrid,
    start: &Path,
    barriers: &[BarrierSpec],
    filter: Option<SafetyFilter<'_>>,
) -> Result<CorrectionTrace> {
    dynamics.check_input(start)?;
    let nb = barriers.len();
    let n = start.num_waypoints();
    let mut tau = start.clone();
    let mut snapshots = Vec::with_capacity(grid.steps() + 1);
    for (i, (t, dt)) in grid.intervals().enumerate() {
        let mut v = checked_step(dynamics, &tau, t, i)?;
        let mut slack = vec![0.0; n];
        let mut multipliers = vec![0.0; n * nb];
        let mut degenerate = vec![false; n];
        if let Some(f) = filter {
            for k in 0..n {
                let sol = filter_step(v.waypoint(k), f.barriers, f.params, tau.waypoint(k), t, Some(dt))
                    .map_err(|e| Error::at_step(i, e))?;
                v.waypoint_mut(k).copy_from_slice(&sol.u);
                slack[k] = sol.slack;
                multipliers[k * nb..(k + 1) * nb].copy_from_slice(&sol.multipliers);
                degenerate[k] = sol.degenerate;
            }
        }
        snapshots.push(Snapshot {
            t,
            barrier: barrier_values(&tau, barriers)?,
            path: tau.clone(),
            slack,
            multipliers,
            degenerate,
        });
        tau.axpy(dt, &v);
        if !tau.is_finite() {
            return Err(Error::at_step(i, Error::NonFinite("integrated path")));
        }
    }
    snapshots.push(Snapshot {
        t: 1.0,
        barrier: barrier_values(&tau, barriers)?,
        path: tau,
        slack: vec![0.0; n],
        multipliers: vec![0.0; n * nb],
        degenerate: vec![false; n],
    });
    Ok(CorrectionTrace {
        barrier_count: nb,
        snapshots,
    })
}

/// Correction phase: VTFD from `start` with the clock restarted at 0.
pub fn run_correction(
    field: &dyn VectorField,
    alpha: f64,
    t_corr: usize,
    start: &Path,
    barriers: &[BarrierSpec],
    filter: Option<SafetyFilter<'_>>,
) -> Result<CorrectionTrace> {
    let dynamics = vtfd_field(field, alpha)?;
    let grid = TimeGrid::uniform(t_corr)?;
    filtered_flow(&dynamics, &grid, start, barriers, filter)
}

/// Everything a plan needs besides its config: the environment, the field
/// and the trap threshold.
pub struct PlanContext {
    pub env: Environment,
    pub field: Box<dyn VectorField>,
    pub zeta: f64,
    /// Reference dataset, when one was generated or loaded.
    pub dataset: Option<PathDataset>,
}

impl PlanContext {
    /// Resolves the environment, reference dataset and field of a config.
    ///
    /// The config's `H` overrides the environment's waypoint count.
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let mut env = Environment::builtin(&cfg.environment)
            .or_else(|e| match std::path::Path::new(&cfg.environment).exists() {
                true => Environment::load(std::path::Path::new(&cfg.environment)),
                false => Err(e),
            })?;
        env.dataset.waypoints = cfg.horizon + 1;
        if cfg.d != 2 {
            return Err(Error::invalid("planar environments need d = 2"));
        }
        env.validate(cfg.cbf.delta)?;
        let dataset = match &cfg.dataset.file {
            Some(f) => PathDataset::load(std::path::Path::new(f))?,
            None => generate_dataset(&env, cfg.dataset.n_paths, cfg.dataset.seed)?,
        };
        if dataset.paths[0].horizon() != cfg.horizon || dataset.paths[0].dim() != cfg.d {
            return Err(Error::DimensionMismatch {
                expected: cfg.d * (cfg.horizon + 1),
                got: dataset.paths[0].as_slice().len(),
            });
        }
        let field: Box<dyn VectorField> = match &cfg.field {
            FieldSpec::Gmm => Box::new(fit_gmm_target(
                &dataset,
                &KMeansParams {
                    components: cfg.dataset.components,
                    seed: cfg.dataset.seed,
                    ..Default::default()
                },
            )?),
            FieldSpec::Mlp { checkpoint } => {
                let ck: MlpCheckpoint = store::load_json(std::path::Path::new(checkpoint))?;
                Box::new(ck.to_field()?)
            }
        };
        if field.dim() != cfg.d || field.horizon() != cfg.horizon {
            return Err(Error::DimensionMismatch {
                expected: cfg.d * (cfg.horizon + 1),
                got: field.dim() * (field.horizon() + 1),
            });
        }
        let zeta = cfg.cbf.zeta.unwrap_or_else(|| dataset.default_zeta());
        Ok(PlanContext {
            env,
            field,
            zeta,
            dataset: Some(dataset),
        })
    }
}

#[derive(Clone, Debug)]
pub struct PlanOutput {
    pub prediction: Option<PredictionResult>,
    pub trace: CorrectionTrace,
    pub record: RunRecord,
}

/// Runs the configured method; wall-clock time is measured only if `timing`.
pub fn plan_with(cfg: &RunConfig, ctx: &PlanContext, timing: bool) -> Result<PlanOutput> {
    cfg.validate()?;
    let field = CountingField::new(&*ctx.field);
    let barriers = &ctx.env.barriers;
    let filter = cfg.safety.then_some(SafetyFilter {
        barriers,
        params: &cfg.cbf,
    });
    let mut rng = stream_rng(cfg.seed, streams::PRIOR);
    let clock = Instant::now();
    let (prediction, trace) = match cfg.method {
        Method::SafeFlowMatcher => {
            let pred = predict(&field, cfg.t_pred, &mut rng).map_err(|e| Error::in_phase("prediction", e))?;
            let trace = run_correction(&field, cfg.alpha, cfg.t_corr, &pred.path, barriers, filter)
                .map_err(|e| Error::in_phase("correction", e))?;
            (Some(pred), trace)
        }
        Method::SafeFmNaive | Method::FmUnsafe => {
            let start = sample_prior(field.dim(), field.horizon(), &mut rng);
            let filter = if cfg.method == Method::SafeFmNaive { filter } else { None };
            let grid = TimeGrid::uniform(cfg.t_corr)?;
            let trace = filtered_flow(&field, &grid, &start, barriers, filter)
                .map_err(|e| Error::in_phase("flow", e))?;
            (None, trace)
        }
    };
    let elapsed_ms = clock.elapsed().as_secs_f64() * 1e3;
    let record = summarize(cfg, ctx, &trace, field.count(), timing.then_some(elapsed_ms))?;
    Ok(PlanOutput {
        prediction,
        trace,
        record,
    })
}

/// Deterministic plan: no timing.
pub fn plan(cfg: &RunConfig, ctx: &PlanContext) -> Result<PlanOutput> {
    plan_with(cfg, ctx, false)
}

fn summarize(
    cfg: &RunConfig,
    ctx: &PlanContext,
    trace: &CorrectionTrace,
    field_evals: usize,
    elapsed_ms: Option<f64>,
) -> Result<RunRecord> {
    let path = trace.final_path();
    let nb = trace.barrier_count;
    let last = trace.snapshots.last().unwrap();
    let min_barrier = (0..nb)
        .map(|j| {
            (0..path.num_waypoints())
                .map(|k| last.barrier_at(k, j, nb))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let convergence_time = if nb == 0 {
        Some(0.0)
    } else {
        // Rounding can leave a settled value a few ulps under delta.
        settle_times(trace, cfg.cbf.delta, 1e-9)
            .into_iter()
            .try_fold(0.0f64, |acc, t| t.map(|t| acc.max(t)))
    };
    let (t_pred, t_corr) = match cfg.method {
        Method::SafeFlowMatcher => (cfg.t_pred, cfg.t_corr),
        _ => (0, cfg.t_corr),
    };
    let time_per_step_ms = match elapsed_ms {
        Some(ms) => Some(time_per_step(ms.max(f64::MIN_POSITIVE), t_pred, t_corr)?),
        None => None,
    };
    Ok(RunRecord {
        seed: cfg.seed,
        method: cfg.method.name().into(),
        config_hash: cfg.hash(),
        min_barrier,
        score: score_proxy(path, &ctx.env.goal, ctx.zeta),
        trap: detect_trap(path, ctx.zeta).flag,
        time_per_step_ms,
        curvature: curvature(path)?,
        acceleration: acceleration(path)?,
        convergence_time,
        field_evals,
        degenerate_qps: trace.degenerate_count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{AnalyticField, GmmTarget, OtConditionalField};

    fn p(v: &[f64]) -> Path {
        Path::from_columns(2, v.to_vec()).unwrap()
    }

    #[test]
    fn point_mass_telescopes_exactly() {
        let mu = p(&[1.5, -0.25, 3.0, 2.0]);
        let field = OtConditionalField::new(mu.clone());
        for t in [1, 2, 3, 7, 64, 256] {
            let grid = TimeGrid::uniform(t).unwrap();
            let end = euler_integrate(&field, &grid, &p(&[-3.0, 0.7, 0.1, 9.0])).unwrap();
            assert!(end.distance(&mu) < 1e-12, "T={t}: {}", end.distance(&mu));
        }
    }

    #[test]
    fn zero_field_leaves_start() {
        let start = p(&[0.3, 0.4]);
        let zero = AnalyticField::Constant(p(&[0.0, 0.0]));
        let end = euler_integrate(&zero, &TimeGrid::uniform(10).unwrap(), &start).unwrap();
        assert_eq!(end, start);
    }

    #[test]
    fn linear_decay_matches_exponential() {
        let field = AnalyticField::Linear { dim: 2, horizon: 0, rate: -1.0 };
        let start = p(&[2.0, -1.0]);
        let end = euler_integrate(&field, &TimeGrid::uniform(1000).unwrap(), &start).unwrap();
        let e = (-1.0f64).exp();
        for (a, b) in end.as_slice().iter().zip(start.as_slice()) {
            assert!(((a - e * b) / (e * b)).abs() < 2e-3);
        }
    }

    #[test]
    fn integration_error_names_the_step() {
        let mu = p(&[1.0, 1.0]);
        let field = OtConditionalField::new(mu);
        let grid = TimeGrid::from_times(vec![0.0, 0.5, 1.0 - 1e-12, 1.0]).unwrap();
        match euler_integrate(&field, &grid, &p(&[0.0, 0.0])) {
            Err(Error::Integration { step: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn vtfd_cancellation() {
        let mu = p(&[1.0, 2.0]);
        let field = vtfd_field(OtConditionalField::new(mu.clone()), 2.0).unwrap();
        let tau = p(&[0.0, 0.0]);
        for t in [0.0, 0.3, 0.999, 1.0] {
            assert_eq!(field.eval(&tau, t).unwrap(), p(&[2.0, 4.0]));
        }
        let raw = OtConditionalField::new(mu);
        let v0 = raw.eval(&tau, 0.0).unwrap();
        assert_eq!(field.eval(&tau, 0.0).unwrap(), &v0 * 2.0);
        assert!(vtfd_field(raw, 0.5).is_err());
    }

    #[test]
    fn vtfd_point_mass_decay() {
        let mu = p(&[1.0, -1.0, 0.5, 0.5]);
        let start = p(&[3.0, 2.0, -1.0, 0.0]);
        let field = OtConditionalField::new(mu.clone());
        let trace = run_correction(&field, 2.0, 256, &start, &[], None).unwrap();
        let e0 = start.distance(&mu);
        let e1 = trace.final_path().distance(&mu);
        assert!(e1 <= (-2.0f64).exp() * e0 * 1.05);
        let errs: Vec<f64> = trace.snapshots.iter().map(|s| s.path.distance(&mu)).collect();
        assert!(errs.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(trace.snapshots.len(), 257);
    }

    #[test]
    fn prediction_single_step_hits_point_mass() {
        let mu = p(&[1.0, -1.0, 0.5, 0.5]);
        let field = OtConditionalField::new(mu.clone());
        let a = predict(&field, 1, &mut stream_rng(3, streams::PRIOR)).unwrap();
        assert!(a.path.distance(&mu) < 1e-12);
        let b = predict(&field, 1, &mut stream_rng(3, streams::PRIOR)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn inactive_filter_matches_unfiltered() {
        let mu = p(&[1.0, 1.0, 2.0, 2.0]);
        let start = p(&[0.0, 0.0, 0.5, 0.5]);
        let barriers = [BarrierSpec::ellipse([-6.0, 6.0], [0.5, 0.5])];
        let params = CbfParams::default();
        let f = OtConditionalField::new(mu);
        let with = run_correction(
            &f,
            2.0,
            64,
            &start,
            &barriers,
            Some(SafetyFilter { barriers: &barriers, params: &params }),
        )
        .unwrap();
        let without = run_correction(&f, 2.0, 64, &start, &barriers, None).unwrap();
        assert_eq!(with, without);
    }

    #[test]
    fn filter_pushes_point_mass_out_of_obstacle() {
        // Target inside the obstacle: the filtered path must end in C_delta.
        let mu = p(&[0.1, 0.0]);
        let start = p(&[2.0, 0.0]);
        let barriers = [BarrierSpec::ellipse([0.0, 0.0], [1.0, 1.0])];
        let params = CbfParams::default();
        let f = GmmTarget::point_mass(mu, 0.05).unwrap();
        let trace = run_correction(
            &f,
            2.0,
            256,
            &start,
            &barriers,
            Some(SafetyFilter { barriers: &barriers, params: &params }),
        )
        .unwrap();
        let last = trace.snapshots.last().unwrap();
        assert!(last.barrier[0] >= params.delta - 1e-12, "{}", last.barrier[0]);
    }

    #[test]
    fn trace_csv_round_trip() {
        let mu = p(&[0.5, 0.0, 1.0, 0.1]);
        let start = p(&[3.0, 0.3, 2.0, -0.2]);
        let barriers = [
            BarrierSpec::ellipse([0.0, 0.0], [1.0, 1.0]),
            BarrierSpec::quartic([1.5, 2.0], [0.5, 0.5]),
        ];
        let params = CbfParams::default();
        let f = GmmTarget::point_mass(mu, 0.1).unwrap();
        let trace = run_correction(
            &f,
            2.0,
            16,
            &start,
            &barriers,
            Some(SafetyFilter { barriers: &barriers, params: &params }),
        )
        .unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let back = CorrectionTrace::read_csv(&buf[..]).unwrap();
        assert_eq!(back, trace);
    }

    #[test]
    fn counting_field_counts() {
        let f = CountingField::new(OtConditionalField::new(p(&[1.0, 1.0])));
        let pred = predict(&f, 1, &mut stream_rng(0, streams::PRIOR)).unwrap();
        run_correction(&f, 2.0, 256, &pred.path, &[], None).unwrap();
        assert_eq!(f.count(), 257);
    }
}
