use serde::{Deserialize, Serialize};

use super::{check_time, VectorField, SINGULAR_T};
use crate::error::{Error, Result};
use crate::trajectory::Path;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: Path,
    /// Isotropic per-coordinate standard deviation.
    pub std: f64,
}

/// An isotropic Gaussian mixture over paths. Under the OT probability path
/// the time-`t` marginal of each component stays Gaussian, so the marginal
/// field and the posterior mean of `tau_1` are closed-form.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(into = "GmmRepr")]
pub struct GmmTarget {
    components: Vec<GmmComponent>,
}

#[derive(Serialize, Deserialize)]
struct GmmRepr {
    weights: Vec<f64>,
    means: Vec<Path>,
    stds: Vec<f64>,
}

impl From<GmmTarget> for GmmRepr {
    fn from(g: GmmTarget) -> Self {
        GmmRepr {
            weights: g.components.iter().map(|c| c.weight).collect(),
            stds: g.components.iter().map(|c| c.std).collect(),
            means: g.components.into_iter().map(|c| c.mean).collect(),
        }
    }
}

impl<'de> Deserialize<'de> for GmmTarget {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let r = GmmRepr::deserialize(de)?;
        if r.weights.len() != r.means.len() || r.weights.len() != r.stds.len() {
            return Err(serde::de::Error::custom(
                "weights, means and stds must have equal length",
            ));
        }
        let comps = r
            .weights
            .into_iter()
            .zip(r.means)
            .zip(r.stds)
            .map(|((weight, mean), std)| GmmComponent { weight, mean, std })
            .collect();
        GmmTarget::new(comps).map_err(serde::de::Error::custom)
    }
}

/// Posterior over components given `tau_t = tau`, with the posterior mean of
/// `tau_1`.
#[derive(Clone, Debug)]
pub struct GmmPosterior {
    pub weights: Vec<f64>,
    pub mean: Path,
}

impl GmmTarget {
    pub fn new(components: Vec<GmmComponent>) -> Result<Self> {
        let first = components
            .first()
            .ok_or_else(|| Error::invalid("mixture needs at least one component"))?;
        let (dim, horizon) = (first.mean.dim(), first.mean.horizon());
        let mut total = 0.0;
        for c in &components {
            if c.mean.dim() != dim || c.mean.horizon() != horizon {
                return Err(Error::invalid("mixture means must share one path shape"));
            }
            if !(c.weight > 0.0 && c.weight.is_finite()) {
                return Err(Error::invalid(format!("mixture weight {} must be positive", c.weight)));
            }
            if !(c.std > 0.0 && c.std.is_finite()) {
                return Err(Error::invalid(format!("mixture std {} must be positive", c.std)));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("mixture weights sum to {total}, not 1")));
        }
        Ok(GmmTarget { components })
    }

    /// Single component concentrated (std `std`) at `mean`.
    pub fn point_mass(mean: Path, std: f64) -> Result<Self> {
        GmmTarget::new(vec![GmmComponent {
            weight: 1.0,
            mean,
            std,
        }])
    }

    pub fn components(&self) -> &[GmmComponent] {
        &self.components
    }

    pub fn dim(&self) -> usize {
        self.components[0].mean.dim()
    }

    pub fn horizon(&self) -> usize {
        self.components[0].mean.horizon()
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Path {
        use rand_distr::{Distribution, StandardNormal};
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = &self.components[self.components.len() - 1];
        for c in &self.components {
            acc += c.weight;
            if u < acc {
                pick = c;
                break;
            }
        }
        let mut out = pick.mean.clone();
        for x in out.as_mut_slice() {
            let z: f64 = StandardNormal.sample(rng);
            *x += pick.std * z;
        }
        out
    }

    /// Component posterior and `E[tau_1 | tau_t = tau]` under the OT path
    /// `tau_t = (1 - t) tau_0 + t tau_1`, `tau_0 ~ N(0, I)`.
    ///
    /// Requires `t < 1 - 1e-9`; the time-scaled field clamps before calling.
    pub fn posterior(&self, tau: &Path, t: f64) -> Result<GmmPosterior> {
        check_time(t)?;
        self.check_input(tau)?;
        let n = tau.as_slice().len() as f64;
        let sigma2 = (1.0 - t) * (1.0 - t);
        let mut logits = Vec::with_capacity(self.components.len());
        for c in &self.components {
            let var = t * t * c.std * c.std + sigma2;
            let sq: f64 = tau
                .as_slice()
                .iter()
                .zip(c.mean.as_slice())
                .map(|(x, m)| (x - t * m) * (x - t * m))
                .sum();
            logits.push(c.weight.ln() - 0.5 * sq / var - 0.5 * n * var.ln());
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= z);

        let mut mean = Path::zeros(tau.dim(), tau.horizon());
        for (c, &w) in self.components.iter().zip(&weights) {
            if w == 0.0 {
                continue;
            }
            let var = t * t * c.std * c.std + sigma2;
            let gain = t * c.std * c.std / var;
            for ((out, x), m) in mean
                .as_mut_slice()
                .iter_mut()
                .zip(tau.as_slice())
                .zip(c.mean.as_slice())
            {
                *out += w * (m + gain * (x - t * m));
            }
        }
        Ok(GmmPosterior { weights, mean })
    }

    /// `E[(tau_1 - tau) / (1 - t) | tau_t = tau]`.
    pub fn marginal_field(&self, tau: &Path, t: f64) -> Result<Path> {
        let post = self.posterior(tau, t)?;
        let mut v = &post.mean - tau;
        v.scale(1.0 / (1.0 - t));
        Ok(v)
    }

    /// Median distance between consecutive waypoints of the component means,
    /// weighted by nothing: a typical step length of the target paths.
    pub fn median_mean_spacing(&self) -> f64 {
        let mut steps: Vec<f64> = self
            .components
            .iter()
            .flat_map(|c| crate::metrics::segment_lengths(&c.mean))
            .collect();
        crate::metrics::median(&mut steps)
    }
}

impl VectorField for GmmTarget {
    fn dim(&self) -> usize {
        GmmTarget::dim(self)
    }

    fn horizon(&self) -> usize {
        GmmTarget::horizon(self)
    }

    fn eval(&self, tau: &Path, t: f64) -> Result<Path> {
        self.marginal_field(tau, t)
    }

    /// `E[tau_1 | tau_t] - tau`, with the posterior taken at `min(t, 1 - 1e-9)`.
    fn eval_time_scaled(&self, tau: &Path, t: f64) -> Result<Path> {
        let tc = t.min(SINGULAR_T - f64::EPSILON);
        let post = self.posterior(tau, tc)?;
        Ok(&post.mean - tau)
    }
}
