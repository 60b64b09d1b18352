//! Time-dependent vector fields `v_t(tau)` over paths.

mod gmm;
mod mlp;

pub use gmm::{GmmComponent, GmmPosterior, GmmTarget};
pub use mlp::{
    cfm_loss_and_grad, cfm_train_step, Adam, CfmBatch, CfmBatchLoss, Mlp, MlpCheckpoint, MlpField,
    RngState, TrainOutcome, TrainParams, train_cfm,
};

use crate::error::{Error, Result};
use crate::trajectory::{rng::sample_prior, Path};

/// Fields of the form `(E[tau_1 | tau_t] - tau) / (1 - t)` refuse to evaluate
/// at or beyond this time.
pub const SINGULAR_T: f64 = 1.0 - 1e-9;

pub(crate) fn check_time(t: f64) -> Result<()> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::invalid(format!("field time {t} outside [0, 1)")));
    }
    if t >= SINGULAR_T {
        return Err(Error::Singularity { t });
    }
    Ok(())
}

pub trait VectorField: Send + Sync {
    fn dim(&self) -> usize;

    fn horizon(&self) -> usize;

    fn eval(&self, tau: &Path, t: f64) -> Result<Path>;

    /// `(1 - t) * v_t(tau)`, the factor shared by every time-scaled dynamics.
    ///
    /// The default multiplies an evaluation at `min(t, SINGULAR_T)`. OT-form
    /// fields override this with the cancelled expression so that `t = 1`
    /// is well defined.
    fn eval_time_scaled(&self, tau: &Path, t: f64) -> Result<Path> {
        let mut v = self.eval(tau, t.min(SINGULAR_T))?;
        v.scale(1.0 - t);
        Ok(v)
    }

    fn check_input(&self, tau: &Path) -> Result<()> {
        if tau.dim() != self.dim() || tau.horizon() != self.horizon() {
            return Err(Error::DimensionMismatch {
                expected: self.dim() * (self.horizon() + 1),
                got: tau.as_slice().len(),
            });
        }
        Ok(())
    }
}

impl<F: VectorField + ?Sized> VectorField for &F {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn horizon(&self) -> usize {
        (**self).horizon()
    }
    fn eval(&self, tau: &Path, t: f64) -> Result<Path> {
        (**self).eval(tau, t)
    }
    fn eval_time_scaled(&self, tau: &Path, t: f64) -> Result<Path> {
        (**self).eval_time_scaled(tau, t)
    }
}

impl<F: VectorField + ?Sized> VectorField for Box<F> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn horizon(&self) -> usize {
        (**self).horizon()
    }
    fn eval(&self, tau: &Path, t: f64) -> Result<Path> {
        (**self).eval(tau, t)
    }
    fn eval_time_scaled(&self, tau: &Path, t: f64) -> Result<Path> {
        (**self).eval_time_scaled(tau, t)
    }
}

/// The OT-conditional field `u_t(tau | tau_1) = (tau_1 - tau) / (1 - t)`
/// toward a fixed endpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct OtConditionalField {
    pub target: Path,
}

impl OtConditionalField {
    pub fn new(target: Path) -> Self {
        OtConditionalField { target }
    }
}

/// `(target - tau) / (1 - t)`.
pub fn ot_conditional(target: &Path, tau: &Path, t: f64) -> Result<Path> {
    check_time(t)?;
    target.check_shape(tau)?;
    let mut v = target - tau;
    v.scale(1.0 / (1.0 - t));
    Ok(v)
}

impl VectorField for OtConditionalField {
    fn dim(&self) -> usize {
        self.target.dim()
    }

    fn horizon(&self) -> usize {
        self.target.horizon()
    }

    fn eval(&self, tau: &Path, t: f64) -> Result<Path> {
        ot_conditional(&self.target, tau, t)
    }

    fn eval_time_scaled(&self, tau: &Path, _t: f64) -> Result<Path> {
        self.target.check_shape(tau)?;
        Ok(&self.target - tau)
    }
}

/// A field that is the same affine map at every time: `v(tau) = c` or `-tau`.
/// Handy as an exactly solvable test case.
#[derive(Clone, Debug)]
pub enum AnalyticField {
    Constant(Path),
    /// `v(tau) = rate * tau`.
    Linear { dim: usize, horizon: usize, rate: f64 },
}

impl VectorField for AnalyticField {
    fn dim(&self) -> usize {
        match self {
            AnalyticField::Constant(c) => c.dim(),
            AnalyticField::Linear { dim, .. } => *dim,
        }
    }

    fn horizon(&self) -> usize {
        match self {
            AnalyticField::Constant(c) => c.horizon(),
            AnalyticField::Linear { horizon, .. } => *horizon,
        }
    }

    fn eval(&self, tau: &Path, _t: f64) -> Result<Path> {
        self.check_input(tau)?;
        Ok(match self {
            AnalyticField::Constant(c) => c.clone(),
            AnalyticField::Linear { rate, .. } => tau * *rate,
        })
    }
}

/// Root-mean-square of `||a(tau, t) - b(tau, t)||` over the probes.
pub fn field_distance(
    a: &dyn VectorField,
    b: &dyn VectorField,
    probes: &[(Path, f64)],
) -> Result<f64> {
    if probes.is_empty() {
        return Err(Error::invalid("field_distance needs at least one probe"));
    }
    let mut sum = 0.0;
    for (tau, t) in probes {
        check_time(*t)?;
        let va = a.eval(tau, *t)?;
        let vb = b.eval(tau, *t)?;
        let d = va.distance(&vb);
        sum += d * d;
    }
    Ok((sum / probes.len() as f64).sqrt())
}

/// Probes `(tau_t, t)` drawn along the training interpolant
/// `tau_t = (1 - t) tau_0 + t tau_1` with `t ~ U[0, t_max]`.
pub fn interpolant_probes<R: rand::Rng + ?Sized>(
    gmm: &GmmTarget,
    count: usize,
    t_max: f64,
    rng: &mut R,
) -> Vec<(Path, f64)> {
    (0..count)
        .map(|_| {
            let t: f64 = rng.random_range(0.0..t_max);
            let noise = sample_prior(gmm.dim(), gmm.horizon(), rng);
            let data = gmm.sample(rng);
            let mut tau = &noise * (1.0 - t);
            tau.axpy(t, &data);
            (tau, t)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(v: &[f64]) -> Path {
        Path::from_columns(2, v.to_vec()).unwrap()
    }

    #[test]
    fn ot_conditional_direct_evaluation() {
        let v = ot_conditional(&p(&[1.0, 1.0]), &p(&[0.0, 0.0]), 0.5).unwrap();
        assert_eq!(v.as_slice(), &[2.0, 2.0]);
    }

    #[test]
    fn ot_conditional_on_interpolant_is_displacement() {
        let tau0 = p(&[0.3, -1.2, 2.0, 0.5]);
        let tau1 = p(&[1.5, 0.25, -0.75, 3.0]);
        for &t in &[0.0, 0.1, 0.5, 0.9, 0.99] {
            let mut tau = &tau0 * (1.0 - t);
            tau.axpy(t, &tau1);
            let v = ot_conditional(&tau1, &tau, t).unwrap();
            let want = &tau1 - &tau0;
            for (a, b) in v.as_slice().iter().zip(want.as_slice()) {
                assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "t={t}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn ot_conditional_fixed_point_and_singularity() {
        let tau1 = p(&[1.0, -2.0]);
        let v = ot_conditional(&tau1, &tau1, 0.7).unwrap();
        assert_eq!(v.norm(), 0.0);
        assert!(matches!(
            ot_conditional(&tau1, &tau1, 1.0),
            Err(Error::Singularity { .. })
        ));
        assert!(matches!(
            ot_conditional(&tau1, &tau1, SINGULAR_T),
            Err(Error::Singularity { .. })
        ));
        let f = OtConditionalField::new(tau1.clone());
        assert_eq!(f.eval_time_scaled(&p(&[0.0, 0.0]), 1.0).unwrap(), tau1);
    }

    #[test]
    fn field_distance_identities() {
        let c = p(&[3.0, 4.0]);
        let zero = AnalyticField::Constant(p(&[0.0, 0.0]));
        let shifted = AnalyticField::Constant(c.clone());
        let probes: Vec<_> = (0..5).map(|i| (p(&[i as f64, 1.0]), 0.1 * i as f64)).collect();
        assert_eq!(field_distance(&zero, &zero, &probes).unwrap(), 0.0);
        let d = field_distance(&shifted, &zero, &probes).unwrap();
        assert!((d - c.norm()).abs() < 1e-15);
        assert!(field_distance(&zero, &zero, &[]).is_err());
        assert!(field_distance(&zero, &zero, &[(p(&[0.0, 0.0]), 1.0)]).is_err());
    }
}
