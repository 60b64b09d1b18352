//! Evaluation metrics for generated plans and their aggregation into a table.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::env::Region;
use crate::error::{Error, Result};
use crate::safety::BarrierSpec;
use crate::trajectory::Path;

/// Lengths `||tau^k - tau^{k-1}||` for `k = 1..=H`.
pub fn segment_lengths(path: &Path) -> Vec<f64> {
    path.waypoints()
        .zip(path.waypoints().skip(1))
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (y - x) * (y - x)).sum::<f64>().sqrt())
        .collect()
}

/// Median (mean of the two middle values for even lengths); 0 when empty.
pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Minimum barrier value over every waypoint of every path.
pub fn barrier_safety(paths: &[Path], spec: &BarrierSpec) -> Result<f64> {
    if paths.is_empty() {
        return Err(Error::invalid("barrier_safety needs at least one path"));
    }
    let mut min = f64::INFINITY;
    for path in paths {
        for wp in path.waypoints() {
            min = min.min(spec.value(wp)?);
        }
    }
    Ok(min)
}

/// Open-loop surrogate for a normalized task score: `(H - k*) / H` where `k*`
/// is the first waypoint inside the goal with no jump above `zeta` before it.
pub fn score_proxy(path: &Path, goal: &Region, zeta: f64) -> f64 {
    let h = path.horizon();
    let steps = segment_lengths(path);
    for (k, wp) in path.waypoints().enumerate() {
        if k > 0 && steps[k - 1] > zeta {
            return 0.0;
        }
        if goal.contains(wp) {
            return if h == 0 { 1.0 } else { (h - k) as f64 / h as f64 };
        }
    }
    0.0
}

fn check_second_order(path: &Path, what: &str) -> Result<()> {
    if path.horizon() < 2 {
        return Err(Error::invalid(format!("{what} needs H >= 2, got {}", path.horizon())));
    }
    Ok(())
}

/// Mean unsigned turning angle between consecutive segments, in radians.
pub fn curvature(path: &Path) -> Result<f64> {
    check_second_order(path, "curvature")?;
    let wps: Vec<&[f64]> = path.waypoints().collect();
    let mut total = 0.0;
    for k in 1..wps.len() - 1 {
        let u: Vec<f64> = wps[k].iter().zip(wps[k - 1]).map(|(a, b)| a - b).collect();
        let v: Vec<f64> = wps[k + 1].iter().zip(wps[k]).map(|(a, b)| a - b).collect();
        let dot: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
        let uu: f64 = u.iter().map(|a| a * a).sum();
        let vv: f64 = v.iter().map(|a| a * a).sum();
        if uu == 0.0 || vv == 0.0 {
            continue;
        }
        // |u x v| in any dimension, summed over coordinate planes so that
        // nearly parallel segments do not cancel.
        let mut cross2 = 0.0;
        for i in 0..u.len() {
            for j in i + 1..u.len() {
                let c = u[i] * v[j] - u[j] * v[i];
                cross2 += c * c;
            }
        }
        let cross = f64::sqrt(cross2);
        total += cross.atan2(dot);
    }
    Ok(total / (wps.len() - 2) as f64)
}

/// Mean of `||tau^{k+1} - 2 tau^k + tau^{k-1}||^2` over interior waypoints.
pub fn acceleration(path: &Path) -> Result<f64> {
    check_second_order(path, "acceleration")?;
    let wps: Vec<&[f64]> = path.waypoints().collect();
    let mut total = 0.0;
    for k in 1..wps.len() - 1 {
        total += (0..path.dim())
            .map(|i| {
                let a = wps[k + 1][i] - 2.0 * wps[k][i] + wps[k - 1][i];
                a * a
            })
            .sum::<f64>();
    }
    Ok(total / (wps.len() - 2) as f64)
}

/// Total sampling time divided by the number of field-evaluating steps.
pub fn time_per_step(total_ms: f64, t_pred: usize, t_corr: usize) -> Result<f64> {
    if !(total_ms > 0.0 && total_ms.is_finite()) {
        return Err(Error::invalid("elapsed time must be positive"));
    }
    if t_pred + t_corr == 0 {
        return Err(Error::invalid("no steps to divide by"));
    }
    Ok(total_ms / (t_pred + t_corr) as f64)
}

/// Per-seed outcome of one plan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub method: String,
    pub config_hash: String,
    /// Minimum of each barrier over the final path's waypoints.
    pub min_barrier: Vec<f64>,
    pub score: f64,
    pub trap: bool,
    /// Only measured on request; wall-clock time would make outputs
    /// differ between otherwise identical runs.
    pub time_per_step_ms: Option<f64>,
    pub curvature: f64,
    pub acceleration: f64,
    /// Latest first-entry time into `{b >= delta}` over waypoints and
    /// barriers; `None` if some waypoint never entered.
    pub convergence_time: Option<f64>,
    pub field_evals: usize,
    pub degenerate_qps: usize,
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn parse_opt(s: &str) -> std::result::Result<Option<f64>, std::num::ParseFloatError> {
    if s.is_empty() {
        Ok(None)
    } else {
        s.parse().map(Some)
    }
}

impl RunRecord {
    fn header(barriers: usize) -> Vec<String> {
        let mut h: Vec<String> = ["seed", "method", "config_hash"].map(String::from).to_vec();
        h.extend((1..=barriers).map(|i| format!("BS{i}")));
        h.extend(
            [
                "score",
                "trap",
                "time_per_step_ms",
                "curvature",
                "acceleration",
                "convergence_time",
                "field_evals",
                "degenerate_qps",
            ]
            .map(String::from),
        );
        h
    }

    fn row(&self) -> Vec<String> {
        let mut r = vec![self.seed.to_string(), self.method.clone(), self.config_hash.clone()];
        r.extend(self.min_barrier.iter().map(|b| b.to_string()));
        r.extend([
            self.score.to_string(),
            self.trap.to_string(),
            opt(self.time_per_step_ms),
            self.curvature.to_string(),
            self.acceleration.to_string(),
            opt(self.convergence_time),
            self.field_evals.to_string(),
            self.degenerate_qps.to_string(),
        ]);
        r
    }

    /// Header plus one row per record; all records must share a barrier count.
    pub fn write_csv<W: Write>(records: &[RunRecord], out: W) -> Result<()> {
        let barriers = records.first().map_or(0, |r| r.min_barrier.len());
        if records.iter().any(|r| r.min_barrier.len() != barriers) {
            return Err(Error::invalid("records disagree on barrier count"));
        }
        let mut w = csv::Writer::from_writer(out);
        let fail = |e: csv::Error| Error::invalid(format!("record csv: {e}"));
        w.write_record(Self::header(barriers)).map_err(fail)?;
        for r in records {
            w.write_record(r.row()).map_err(fail)?;
        }
        w.flush().map_err(|e| fail(e.into()))?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(input: R) -> std::result::Result<Vec<RunRecord>, String> {
        let mut r = csv::Reader::from_reader(input);
        let headers = r.headers().map_err(|e| e.to_string())?.clone();
        let barriers = headers.iter().filter(|h| h.starts_with("BS")).count();
        if headers.len() != 3 + barriers + 8 {
            return Err(format!("unexpected record columns: {headers:?}"));
        }
        let mut out = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| e.to_string())?;
            let f = |i: usize| rec.get(i).unwrap_or("");
            let e = |x: &dyn std::fmt::Display| x.to_string();
            let base = 3 + barriers;
            out.push(RunRecord {
                seed: f(0).parse().map_err(|x| e(&x))?,
                method: f(1).to_string(),
                config_hash: f(2).to_string(),
                min_barrier: (0..barriers)
                    .map(|i| f(3 + i).parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|x| e(&x))?,
                score: f(base).parse().map_err(|x| e(&x))?,
                trap: f(base + 1).parse().map_err(|x| e(&x))?,
                time_per_step_ms: parse_opt(f(base + 2)).map_err(|x| e(&x))?,
                curvature: f(base + 3).parse().map_err(|x| e(&x))?,
                acceleration: f(base + 4).parse().map_err(|x| e(&x))?,
                convergence_time: parse_opt(f(base + 5)).map_err(|x| e(&x))?,
                field_evals: f(base + 6).parse().map_err(|x| e(&x))?,
                degenerate_qps: f(base + 7).parse().map_err(|x| e(&x))?,
            });
        }
        Ok(out)
    }
}

/// One row of the aggregated table: a method/config cell over its seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub label: String,
    pub runs: usize,
    pub bs: Vec<f64>,
    pub score_mean: f64,
    pub score_std: f64,
    pub time_mean_ms: Option<f64>,
    pub trap_rate: f64,
    pub curvature_mean: f64,
    pub curvature_std: f64,
    pub acceleration_mean: f64,
    pub acceleration_std: f64,
}

impl AggregateRow {
    pub fn from_records(label: impl Into<String>, records: &[RunRecord]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::invalid("cannot aggregate zero runs"));
        }
        let barriers = records[0].min_barrier.len();
        let bs = (0..barriers)
            .map(|j| {
                records
                    .iter()
                    .map(|r| r.min_barrier[j])
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let col = |f: fn(&RunRecord) -> f64| records.iter().map(f).collect::<Vec<_>>();
        let (score_mean, score_std) = mean_std(&col(|r| r.score));
        let (curvature_mean, curvature_std) = mean_std(&col(|r| r.curvature));
        let (acceleration_mean, acceleration_std) = mean_std(&col(|r| r.acceleration));
        let times: Option<Vec<f64>> = records.iter().map(|r| r.time_per_step_ms).collect();
        let traps = records.iter().filter(|r| r.trap).count();
        Ok(AggregateRow {
            label: label.into(),
            runs: records.len(),
            bs,
            score_mean,
            score_std,
            time_mean_ms: times.map(|t| mean_std(&t).0),
            trap_rate: traps as f64 / records.len() as f64,
            curvature_mean,
            curvature_std,
            acceleration_mean,
            acceleration_std,
        })
    }
}

/// Writes the aggregated table with Table-1-style columns.
pub fn write_table<W: Write>(rows: &[AggregateRow], out: W) -> Result<()> {
    let barriers = rows.iter().map(|r| r.bs.len()).max().unwrap_or(0);
    let mut w = csv::Writer::from_writer(out);
    let fail = |e: csv::Error| Error::invalid(format!("table csv: {e}"));
    let mut header = vec!["config".to_string(), "runs".to_string()];
    header.extend((1..=barriers).map(|i| format!("BS{i}")));
    header.extend(
        ["Score", "Score_std", "Time", "TrapRate", "κ", "κ_std", "a", "a_std"].map(String::from),
    );
    w.write_record(&header).map_err(fail)?;
    for r in rows {
        let mut rec = vec![r.label.clone(), r.runs.to_string()];
        rec.extend((0..barriers).map(|j| r.bs.get(j).map(|b| b.to_string()).unwrap_or_default()));
        rec.extend([
            r.score_mean.to_string(),
            r.score_std.to_string(),
            opt(r.time_mean_ms),
            r.trap_rate.to_string(),
            r.curvature_mean.to_string(),
            r.curvature_std.to_string(),
            r.acceleration_mean.to_string(),
            r.acceleration_std.to_string(),
        ]);
        w.write_record(&rec).map_err(fail)?;
    }
    w.flush().map_err(|e| fail(e.into()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn path(points: &[[f64; 2]]) -> Path {
        Path::from_waypoints(points).unwrap()
    }

    fn polygon(n: usize, laps: usize, radius: f64) -> Path {
        let pts: Vec<[f64; 2]> = (0..=n * laps)
            .map(|k| {
                let a = 2.0 * PI * k as f64 / n as f64;
                [radius * a.cos(), radius * a.sin()]
            })
            .collect();
        path(&pts)
    }

    #[test]
    fn median_cases() {
        assert_eq!(median(&mut []), 0.0);
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn barrier_safety_cases() {
        let spec = BarrierSpec::HalfspaceVelocity {
            roof: 1.0,
            velocity_scale: 1.0,
            coords: [0, 1],
        };
        // z + v = 0.99 everywhere gives b = 0.01.
        let at_delta = path(&[[0.5, 0.49], [0.9, 0.09], [0.0, 0.99]]);
        assert!((barrier_safety(std::slice::from_ref(&at_delta), &spec).unwrap() - 0.01).abs() < 1e-15);
        assert!(barrier_safety(&[], &spec).is_err());
    }

    #[test]
    fn barrier_safety_two_runs() {
        let spec = BarrierSpec::HalfspaceVelocity {
            roof: 1.0,
            velocity_scale: 1.0,
            coords: [0, 1],
        };
        let r1 = path(&[[0.0, 0.98], [0.0, 0.0]]);
        let r2 = path(&[[0.0, 0.989], [0.0, 0.5]]);
        let v = barrier_safety(&[r1, r2], &spec).unwrap();
        assert!((v - 0.011).abs() < 1e-12);
    }

    #[test]
    fn score_cases() {
        let goal = Region { center: [7.0, 7.0], radius: 0.5 };
        let p = path(&[[7.0, 7.0], [0.0, 0.0], [1.0, 1.0]]);
        assert_eq!(score_proxy(&p, &goal, 100.0), 1.0);
        let never = path(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]);
        assert_eq!(score_proxy(&never, &goal, 100.0), 0.0);

        // Straight line at H = 31 whose waypoint 24 is the first inside the goal.
        let line: Vec<[f64; 2]> = (0..32).map(|k| [k as f64 * 0.25, 0.0]).collect();
        let goal = Region { center: [6.25, 0.0], radius: 0.3 };
        assert_eq!(score_proxy(&path(&line), &goal, 1.0), 7.0 / 31.0);
        // A jump before the goal voids the score.
        assert_eq!(score_proxy(&path(&line), &goal, 0.2), 0.0);
    }

    #[test]
    fn score_monotone_in_goal_radius() {
        let line: Vec<[f64; 2]> = (0..32).map(|k| [k as f64 * 0.25, 0.1]).collect();
        let p = path(&line);
        let mut last = f64::INFINITY;
        for r in [3.0, 2.0, 1.0, 0.5, 0.2, 0.05] {
            let s = score_proxy(&p, &Region { center: [7.75, 0.0], radius: r }, 1.0);
            assert!(s <= last);
            last = s;
        }
    }

    #[test]
    fn curvature_cases() {
        let line: Vec<[f64; 2]> = (0..10).map(|k| [k as f64, 2.0 * k as f64]).collect();
        assert_eq!(curvature(&path(&line)).unwrap(), 0.0);
        let zig = path(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [2.0, 1.0], [2.0, 2.0]]);
        assert!((curvature(&zig).unwrap() - PI / 2.0).abs() < 1e-12);
        for n in [3, 4, 5, 8, 17, 100] {
            let c = curvature(&polygon(n, 2, 1.5)).unwrap();
            assert!((c - 2.0 * PI / n as f64).abs() < 1e-9, "n={n}: {c}");
        }
        assert!(curvature(&path(&[[0.0, 0.0], [1.0, 0.0]])).is_err());
    }

    #[test]
    fn zero_length_segments_count_as_straight() {
        let p = path(&[[0.0, 0.0], [1.0, 0.0], [1.0, 0.0], [1.0, 1.0]]);
        assert_eq!(curvature(&p).unwrap(), 0.0);
    }

    #[test]
    fn acceleration_cases() {
        let line: Vec<[f64; 2]> = (0..10).map(|k| [0.5 * k as f64 - 1.0, 3.0]).collect();
        assert_eq!(acceleration(&path(&line)).unwrap(), 0.0);
        let quad: Vec<[f64; 2]> = (0..10).map(|k| [(k * k) as f64, 0.0]).collect();
        assert_eq!(acceleration(&path(&quad)).unwrap(), 4.0);
    }

    #[test]
    fn time_per_step_cases() {
        assert_eq!(time_per_step(257.0, 1, 256).unwrap(), 1.0);
        assert_eq!(time_per_step(20.0, 1, 19).unwrap(), 1.0);
        assert!(time_per_step(0.0, 1, 1).is_err());
        assert!(time_per_step(10.0, 0, 0).is_err());
    }

    fn record(seed: u64, trap: bool, bs: [f64; 2]) -> RunRecord {
        RunRecord {
            seed,
            method: "safeflowmatcher".into(),
            config_hash: "abc".into(),
            min_barrier: bs.to_vec(),
            score: 0.5,
            trap,
            time_per_step_ms: None,
            curvature: 0.1,
            acceleration: 0.01 * seed as f64,
            convergence_time: Some(0.625),
            field_evals: 257,
            degenerate_qps: 0,
        }
    }

    #[test]
    fn record_csv_round_trip() {
        let mut recs = vec![record(1, false, [0.1, 0.2]), record(2, true, [1.0 / 3.0, 0.01])];
        recs[1].time_per_step_ms = Some(0.123);
        recs[1].convergence_time = None;
        let mut buf = Vec::new();
        RunRecord::write_csv(&recs, &mut buf).unwrap();
        assert_eq!(RunRecord::read_csv(&buf[..]).unwrap(), recs);
    }

    #[test]
    fn aggregate_row() {
        let recs = vec![record(1, false, [0.1, 0.2]), record(2, true, [0.3, 0.01])];
        let row = AggregateRow::from_records("x", &recs).unwrap();
        assert_eq!(row.bs, vec![0.1, 0.01]);
        assert_eq!(row.trap_rate, 0.5);
        assert_eq!(row.time_mean_ms, None);
        let mut buf = Vec::new();
        write_table(&[row], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("config,runs,BS1,BS2,Score,Score_std,Time,TrapRate,κ,κ_std,a,a_std\n"));
    }

    proptest! {
        #[test]
        fn shape_metrics_are_rigid_invariant(
            pts in proptest::collection::vec([-5.0f64..5.0, -5.0f64..5.0], 3..20),
            shift in [-10.0f64..10.0, -10.0f64..10.0],
            angle in 0.0f64..std::f64::consts::TAU,
            scale in 0.1f64..10.0,
        ) {
            let p = path(&pts);
            let mut moved = p.clone();
            moved.translate(&shift);
            let (c, s) = (angle.cos(), angle.sin());
            let rotated: Vec<[f64; 2]> = pts
                .iter()
                .map(|q| [scale * (c * q[0] - s * q[1]), scale * (s * q[0] + c * q[1])])
                .collect();
            let k = curvature(&p).unwrap();
            let a = acceleration(&p).unwrap();
            prop_assert!((curvature(&moved).unwrap() - k).abs() < 1e-9);
            prop_assert!((acceleration(&moved).unwrap() - a).abs() < 1e-9 * (1.0 + a));
            prop_assert!((curvature(&path(&rotated)).unwrap() - k).abs() < 1e-7);
        }

        #[test]
        fn barrier_safety_is_monotone(
            runs in proptest::collection::vec(proptest::collection::vec([-3.0f64..3.0, -3.0f64..3.0], 2..6), 1..5),
            extra in proptest::collection::vec([-3.0f64..3.0, -3.0f64..3.0], 2..6),
        ) {
            let spec = BarrierSpec::ellipse([0.0, 0.0], [1.0, 1.0]);
            let mut paths: Vec<Path> = runs.iter().map(|r| path(r)).collect();
            let before = barrier_safety(&paths, &spec).unwrap();
            paths.push(path(&extra));
            prop_assert!(barrier_safety(&paths, &spec).unwrap() <= before);
        }
    }
}
