//! Planning environments, the synthetic path dataset that stands in for
//! demonstration data, and the mixture fit that turns it into an exact field.

use std::path::Path as FsPath;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{GmmComponent, GmmTarget};
use crate::metrics::{median, segment_lengths};
use crate::safety::BarrierSpec;
use crate::store;
use crate::trajectory::rng::{stream_rng, streams};
use crate::trajectory::Path;

/// A disc in the plane of the first two waypoint coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub center: [f64; 2],
    pub radius: f64,
}

impl Region {
    pub fn contains(&self, waypoint: &[f64]) -> bool {
        let dx = waypoint[0] - self.center[0];
        let dy = waypoint[1] - self.center[1];
        dx * dx + dy * dy <= self.radius * self.radius
    }

    /// Uniform draw from the disc.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; 2] {
        let r = self.radius * rng.random::<f64>().sqrt();
        let a = std::f64::consts::TAU * rng.random::<f64>();
        [self.center[0] + r * a.cos(), self.center[1] + r * a.sin()]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetParams {
    /// Waypoints per path, `H + 1`.
    pub waypoints: usize,
    /// Std of the perpendicular offset of each interior control point.
    pub offset_std: f64,
    /// Jitter std as a fraction of the path's mean waypoint spacing.
    pub jitter: f64,
}

impl Default for DatasetParams {
    fn default() -> Self {
        DatasetParams {
            waypoints: 32,
            offset_std: 0.35,
            jitter: 0.25,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Environment {
    pub name: String,
    /// `[[x_min, y_min], [x_max, y_max]]`.
    pub bounds: [[f64; 2]; 2],
    pub barriers: Vec<BarrierSpec>,
    pub start: Region,
    pub goal: Region,
    pub dataset: DatasetParams,
}

/// Radial and angular resolution of the region-vs-barrier check.
const REGION_PROBES: (usize, usize) = (24, 720);

impl Environment {
    /// Two obstacles with a corridor between them; the start/goal line runs
    /// through the gap, slightly closer to the ellipse.
    pub fn corridor() -> Self {
        Environment {
            name: "corridor".into(),
            bounds: [[0.0, 0.0], [8.0, 8.0]],
            barriers: vec![
                BarrierSpec::ellipse([3.0, 4.0], [0.8, 0.8]),
                BarrierSpec::quartic([5.5, 2.5], [0.9, 0.9]),
            ],
            start: Region { center: [1.7, 1.15], radius: 0.3 },
            goal: Region { center: [5.1, 6.65], radius: 0.3 },
            dataset: DatasetParams::default(),
        }
    }

    /// The corridor without obstacles.
    pub fn open() -> Self {
        Environment {
            name: "open".into(),
            barriers: Vec::new(),
            ..Self::corridor()
        }
    }

    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "corridor" => Ok(Self::corridor()),
            "open" => Ok(Self::open()),
            _ => Err(Error::invalid(format!(
                "unknown environment {name:?}; built-ins are corridor and open"
            ))),
        }
    }

    pub fn horizon(&self) -> usize {
        self.dataset.waypoints - 1
    }

    /// Checks that both regions sit strictly inside the bounds and clear of
    /// every barrier's `delta`-inflated unsafe set.
    pub fn validate(&self, delta: f64) -> Result<()> {
        if self.barriers.len() > 2 {
            return Err(Error::invalid("at most two barriers per environment"));
        }
        for b in &self.barriers {
            b.validate()?;
            if b.min_dim() > 2 {
                return Err(Error::invalid("planar environments use coordinates 0 and 1"));
            }
        }
        let [lo, hi] = self.bounds;
        if !(lo[0] < hi[0] && lo[1] < hi[1]) {
            return Err(Error::invalid("empty bounds"));
        }
        if self.dataset.waypoints < 3 || !(self.dataset.offset_std >= 0.0 && self.dataset.jitter >= 0.0) {
            return Err(Error::invalid("dataset needs >= 3 waypoints and non-negative noise"));
        }
        for (label, region) in [("start", &self.start), ("goal", &self.goal)] {
            let [x, y] = region.center;
            let r = region.radius;
            if !(r > 0.0) {
                return Err(Error::invalid(format!("{label} region radius must be positive")));
            }
            if !(x - r > lo[0] && x + r < hi[0] && y - r > lo[1] && y + r < hi[1]) {
                return Err(Error::invalid(format!("{label} region leaves the bounds")));
            }
            let (nr, na) = REGION_PROBES;
            for i in 0..=nr {
                let rad = r * i as f64 / nr as f64;
                for j in 0..na {
                    let a = std::f64::consts::TAU * j as f64 / na as f64;
                    let p = [x + rad * a.cos(), y + rad * a.sin()];
                    for b in &self.barriers {
                        if b.value(&p)? < delta {
                            return Err(Error::invalid(format!(
                                "{label} region intersects the inflated unsafe set of {b:?}"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &FsPath) -> Result<()> {
        store::save_json(path, self)
    }

    pub fn load(path: &FsPath) -> Result<Self> {
        store::load_json(path)
    }
}

/// Uniform Catmull-Rom spline through `points`, evaluated at `s` in
/// `[0, points.len() - 1]`. End tangents use reflected phantom points.
pub fn catmull_rom(points: &[[f64; 2]], s: f64) -> [f64; 2] {
    let n = points.len();
    let seg = (s.floor() as usize).min(n - 2);
    let u = s - seg as f64;
    let get = |i: isize| -> [f64; 2] {
        if i < 0 {
            let (a, b) = (points[0], points[1]);
            [2.0 * a[0] - b[0], 2.0 * a[1] - b[1]]
        } else if i as usize >= n {
            let (a, b) = (points[n - 1], points[n - 2]);
            [2.0 * a[0] - b[0], 2.0 * a[1] - b[1]]
        } else {
            points[i as usize]
        }
    };
    let i = seg as isize;
    let (p0, p1, p2, p3) = (get(i - 1), get(i), get(i + 1), get(i + 2));
    let (u2, u3) = (u * u, u * u * u);
    let mut out = [0.0; 2];
    for c in 0..2 {
        out[c] = 0.5
            * (2.0 * p1[c]
                + (p2[c] - p0[c]) * u
                + (2.0 * p0[c] - 5.0 * p1[c] + 4.0 * p2[c] - p3[c]) * u2
                + (3.0 * p1[c] - p0[c] - 3.0 * p2[c] + p3[c]) * u3);
    }
    out
}

/// Dense samples per spline segment used to tabulate arc length.
const ARC_TABLE: usize = 256;

/// `count` points on the spline at (approximately) equal arc-length spacing.
/// Each point is an exact spline evaluation; only its parameter is
/// interpolated from the arc-length table.
pub fn resample_spline(points: &[[f64; 2]], count: usize) -> Vec<[f64; 2]> {
    let segs = points.len() - 1;
    let n = segs * ARC_TABLE;
    let params: Vec<f64> = (0..=n).map(|i| i as f64 / ARC_TABLE as f64).collect();
    let mut arc = vec![0.0; n + 1];
    let mut prev = catmull_rom(points, 0.0);
    for i in 1..=n {
        let p = catmull_rom(points, params[i]);
        arc[i] = arc[i - 1] + ((p[0] - prev[0]).powi(2) + (p[1] - prev[1]).powi(2)).sqrt();
        prev = p;
    }
    let total = arc[n];
    (0..count)
        .map(|k| {
            if k == 0 {
                return points[0];
            }
            if k == count - 1 {
                return points[segs];
            }
            let target = total * k as f64 / (count - 1) as f64;
            let j = arc.partition_point(|&a| a < target).clamp(1, n);
            let span = arc[j] - arc[j - 1];
            let frac = if span > 0.0 { (target - arc[j - 1]) / span } else { 0.0 };
            catmull_rom(points, params[j - 1] + frac * (params[j] - params[j - 1]))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathDataset {
    pub environment: String,
    pub seed: u64,
    pub params: DatasetParams,
    pub paths: Vec<Path>,
}

impl PathDataset {
    pub fn save(&self, path: &FsPath) -> Result<()> {
        store::save_json(path, self)
    }

    pub fn load(path: &FsPath) -> Result<Self> {
        let ds: PathDataset = store::load_json(path)?;
        if ds.paths.is_empty() {
            return Err(Error::malformed(path, "dataset has no paths"));
        }
        Ok(ds)
    }

    /// Median waypoint spacing over all paths.
    pub fn median_spacing(&self) -> f64 {
        let mut steps: Vec<f64> = self.paths.iter().flat_map(segment_lengths).collect();
        median(&mut steps)
    }

    /// Default local-trap threshold: four median spacings.
    pub fn default_zeta(&self) -> f64 {
        4.0 * self.median_spacing()
    }
}

/// Control points of one path: start, three interior points offset
/// perpendicular to the chord, goal.
fn control_points<R: Rng + ?Sized>(env: &Environment, rng: &mut R) -> Result<[[f64; 2]; 5]> {
    let s = env.start.sample(rng);
    let g = env.goal.sample(rng);
    let (dx, dy) = (g[0] - s[0], g[1] - s[1]);
    let len = (dx * dx + dy * dy).sqrt();
    if !(len > 0.0) {
        return Err(Error::invalid("start and goal coincide"));
    }
    let normal = [-dy / len, dx / len];
    let offset = Normal::new(0.0, env.dataset.offset_std).map_err(|e| Error::invalid(e.to_string()))?;
    let mut pts = [s, [0.0; 2], [0.0; 2], [0.0; 2], g];
    for (j, p) in pts.iter_mut().enumerate().skip(1).take(3) {
        let f = j as f64 / 4.0;
        let o: f64 = offset.sample(rng);
        *p = [s[0] + f * dx + o * normal[0], s[1] + f * dy + o * normal[1]];
    }
    Ok(pts)
}

/// A pure function of `(env, n, seed)`. Paths are not filtered for safety.
pub fn generate_dataset(env: &Environment, n_paths: usize, seed: u64) -> Result<PathDataset> {
    if n_paths == 0 {
        return Err(Error::invalid("dataset needs at least one path"));
    }
    let mut rng = stream_rng(seed, streams::DATASET);
    let count = env.dataset.waypoints;
    let mut paths = Vec::with_capacity(n_paths);
    for _ in 0..n_paths {
        let ctrl = control_points(env, &mut rng)?;
        let mut wps = resample_spline(&ctrl, count);
        let spacing = (1..count)
            .map(|k| ((wps[k][0] - wps[k - 1][0]).powi(2) + (wps[k][1] - wps[k - 1][1]).powi(2)).sqrt())
            .sum::<f64>()
            / (count - 1) as f64;
        let sd = env.dataset.jitter * spacing;
        // Endpoints stay put so they remain inside their regions.
        for wp in &mut wps[1..count - 1] {
            for x in wp.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *x += sd * z;
            }
        }
        paths.push(Path::from_waypoints(&wps)?);
    }
    Ok(PathDataset {
        environment: env.name.clone(),
        seed,
        params: env.dataset.clone(),
        paths,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansParams {
    pub components: usize,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        KMeansParams {
            components: 4,
            iterations: 50,
            seed: 0,
        }
    }
}

/// Floor for the fitted std; a dataset of identical paths would otherwise
/// produce a singular mixture.
pub const MIN_STD: f64 = 1e-6;

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// K-means on flattened paths, k-means++ seeding, then one shared isotropic std.
///
/// `components` is capped at the number of distinct paths.
pub fn fit_gmm_target(dataset: &PathDataset, params: &KMeansParams) -> Result<GmmTarget> {
    let paths = &dataset.paths;
    if params.components == 0 || paths.len() < params.components {
        return Err(Error::invalid(format!(
            "need at least {} paths for {} components, have {}",
            params.components,
            params.components,
            paths.len()
        )));
    }
    let (dim, horizon) = (paths[0].dim(), paths[0].horizon());
    if paths.iter().any(|p| p.dim() != dim || p.horizon() != horizon) {
        return Err(Error::invalid("dataset paths differ in shape"));
    }
    let xs: Vec<&[f64]> = paths.iter().map(|p| p.as_slice()).collect();
    let mut distinct: Vec<&[f64]> = Vec::new();
    for x in &xs {
        if !distinct.iter().any(|d| d == x) {
            distinct.push(x);
            if distinct.len() >= params.components {
                break;
            }
        }
    }
    let k = params.components.min(distinct.len());
    let mut rng = stream_rng(params.seed, streams::CLUSTERING);

    // k-means++ seeding.
    let mut centers: Vec<Vec<f64>> = vec![xs[rng.random_range(0..xs.len())].to_vec()];
    let mut d2: Vec<f64> = xs.iter().map(|x| sq(x, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let mut pick = rng.random::<f64>() * total;
        let mut idx = d2.len() - 1;
        for (i, &d) in d2.iter().enumerate() {
            if pick < d {
                idx = i;
                break;
            }
            pick -= d;
        }
        if d2[idx] == 0.0 {
            idx = d2.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).unwrap();
        }
        centers.push(xs[idx].to_vec());
        for (d, x) in d2.iter_mut().zip(&xs) {
            *d = d.min(sq(x, centers.last().unwrap()));
        }
    }

    let n_coords = xs[0].len();
    let mut assign = vec![0usize; xs.len()];
    let mut reseeded = false;
    for _ in 0..params.iterations {
        let mut changed = false;
        for (a, x) in assign.iter_mut().zip(&xs) {
            let best = (0..k)
                .min_by(|&i, &j| sq(x, &centers[i]).total_cmp(&sq(x, &centers[j])))
                .unwrap();
            changed |= *a != best;
            *a = best;
        }
        let mut sums = vec![vec![0.0; n_coords]; k];
        let mut counts = vec![0usize; k];
        for (a, x) in assign.iter().zip(&xs) {
            counts[*a] += 1;
            for (s, v) in sums[*a].iter_mut().zip(x.iter()) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                if reseeded {
                    return Err(Error::invalid("k-means left a cluster empty after re-seeding"));
                }
                reseeded = true;
                // Move the empty center onto the point farthest from its own center.
                let far = (0..xs.len())
                    .max_by(|&i, &j| {
                        sq(xs[i], &centers[assign[i]]).total_cmp(&sq(xs[j], &centers[assign[j]]))
                    })
                    .unwrap();
                centers[c] = xs[far].to_vec();
                changed = true;
                continue;
            }
            for (m, s) in centers[c].iter_mut().zip(&sums[c]) {
                *m = s / counts[c] as f64;
            }
        }
        if !changed {
            break;
        }
    }
    // Final assignment against the final centers.
    for (a, x) in assign.iter_mut().zip(&xs) {
        *a = (0..k)
            .min_by(|&i, &j| sq(x, &centers[i]).total_cmp(&sq(x, &centers[j])))
            .unwrap();
    }
    let mut counts = vec![0usize; k];
    let mut within = 0.0;
    for (a, x) in assign.iter().zip(&xs) {
        counts[*a] += 1;
        within += sq(x, &centers[*a]);
    }
    if counts.contains(&0) {
        return Err(Error::invalid("k-means produced an empty cluster"));
    }
    let std = (within / (xs.len() * n_coords) as f64).sqrt().max(MIN_STD);
    let n = xs.len() as f64;
    let comps = centers
        .into_iter()
        .zip(&counts)
        .map(|(c, &count)| {
            Ok(GmmComponent {
                weight: count as f64 / n,
                mean: Path::from_columns(dim, c)?,
                std,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    GmmTarget::new(comps)
}
