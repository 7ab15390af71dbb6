//! Match quality: hold-out prediction error, balancing factor and their combination.
//!
//! `PE` is the sum over treatment arms of the mean squared residual of that
//! arm's outcome model, fitted on the holdout with only the active covariates.
//! `BF` is the matched fraction of the available control pool plus the
//! matched fraction of the available treated pool. `MQ = C·BF − PE`.
//!
//! The default outcome model is least squares with an unpenalized intercept
//! and a small ridge penalty on the covariate weights. Covariate codes enter
//! as plain numbers.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::grouper::ActiveSet;
use crate::scalar::Real;

/// Ridge penalty on non-intercept weights.
pub const RIDGE_LAMBDA: f64 = 1e-6;

/// Per-arm linear models: `[intercept, w_1, …, w_m]` over the active covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorPair<F> {
    pub active: ActiveSet,
    pub model_control: Vec<F>,
    pub model_treatment: Vec<F>,
}

impl<F: Real> PredictorPair<F> {
    pub fn predict(&self, d: &Dataset<F>, unit: usize) -> F {
        let model = if d.is_treated(unit) { &self.model_treatment } else { &self.model_control };
        let row = d.row(unit);
        self.active.iter().zip(&model[1..]).fold(model[0], |acc, (k, &w)| acc + w * F::of(f64::from(row[k])))
    }
}

/// Squared-error totals per arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmErrors<F> {
    pub sse_control: F,
    pub n_control: usize,
    pub sse_treated: F,
    pub n_treated: usize,
}

impl<F: Real> ArmErrors<F> {
    /// Control-arm MSE plus treated-arm MSE.
    pub fn pe(&self) -> F {
        self.sse_control / F::of_usize(self.n_control) + self.sse_treated / F::of_usize(self.n_treated)
    }

    /// Mean squared error over all holdout units, arms pooled.
    pub fn pooled_mse(&self) -> F {
        (self.sse_control + self.sse_treated) / F::of_usize(self.n_control + self.n_treated)
    }
}

/// Pluggable outcome model used to score candidate covariate sets.
pub trait OutcomePredictor<F: Real>: Send + Sync {
    fn arm_errors(&self, active: &ActiveSet) -> Result<ArmErrors<F>>;

    fn prediction_error(&self, active: &ActiveSet) -> Result<F> {
        self.arm_errors(active).map(|e| e.pe())
    }
}

fn arm_indices<F: Real>(holdout: &Dataset<F>) -> Result<(Vec<usize>, Vec<usize>)> {
    let (treated, control): (Vec<usize>, Vec<usize>) = (0..holdout.n_units()).partition(|&u| holdout.is_treated(u));
    if control.is_empty() {
        return Err(Error::DegenerateHoldout("no control units".into()));
    }
    if treated.is_empty() {
        return Err(Error::DegenerateHoldout("no treated units".into()));
    }
    Ok((control, treated))
}

/// Solves a symmetric positive-definite system, falling back to LU.
fn solve_spd<F: Real>(a: DMatrix<F>, b: DVector<F>) -> Result<DVector<F>> {
    if let Some(ch) = a.clone().cholesky() {
        return Ok(ch.solve(&b));
    }
    a.lu().solve(&b).ok_or_else(|| Error::InvalidData("singular normal equations".into()))
}

/// Ridge least squares for one arm via explicit normal equations on the design matrix.
fn fit_arm<F: Real>(holdout: &Dataset<F>, active: &ActiveSet, units: &[usize]) -> Result<Vec<F>> {
    let m = active.len() + 1;
    let n = units.len();
    let x = DMatrix::from_fn(n, m, |r, c| {
        if c == 0 {
            F::one()
        } else {
            F::of(f64::from(holdout.code(units[r], active.as_slice()[c - 1])))
        }
    });
    let y = DVector::from_iterator(n, units.iter().map(|&u| holdout.outcome()[u]));
    let scale = F::one() / F::of_usize(n);
    let mut gram = x.transpose() * &x * scale;
    for i in 1..m {
        gram[(i, i)] += F::of(RIDGE_LAMBDA);
    }
    let rhs = x.transpose() * y * scale;
    Ok(solve_spd(gram, rhs)?.iter().copied().collect())
}

/// Fits the per-arm linear models on the holdout, restricted to `active`.
pub fn fit_predictor<F: Real>(holdout: &Dataset<F>, active: &ActiveSet) -> Result<PredictorPair<F>> {
    active.check_within(holdout.n_covariates())?;
    let (control, treated) = arm_indices(holdout)?;
    Ok(PredictorPair {
        active: active.clone(),
        model_control: fit_arm(holdout, active, &control)?,
        model_treatment: fit_arm(holdout, active, &treated)?,
    })
}

/// Residual totals of freshly fitted per-arm models, computed row by row.
pub fn arm_errors<F: Real>(holdout: &Dataset<F>, active: &ActiveSet) -> Result<ArmErrors<F>> {
    let models = fit_predictor(holdout, active)?;
    let mut e = ArmErrors { sse_control: F::zero(), n_control: 0, sse_treated: F::zero(), n_treated: 0 };
    for u in 0..holdout.n_units() {
        let r = holdout.outcome()[u] - models.predict(holdout, u);
        if holdout.is_treated(u) {
            e.sse_treated += r * r;
            e.n_treated += 1;
        } else {
            e.sse_control += r * r;
            e.n_control += 1;
        }
    }
    Ok(e)
}

/// Hold-out prediction error for the covariates in `active`.
pub fn prediction_error<F: Real>(holdout: &Dataset<F>, active: &ActiveSet) -> Result<F> {
    arm_errors(holdout, active).map(|e| e.pe())
}

/// Centered second moments of one arm over all covariates.
#[derive(Debug, Clone)]
struct ArmMoments<F: Real> {
    n: usize,
    /// Covariance of covariate codes (1/n normalization).
    cov_xx: DMatrix<F>,
    /// Covariance of codes with the outcome.
    cov_xy: DVector<F>,
    var_y: F,
}

impl<F: Real> ArmMoments<F> {
    fn new(holdout: &Dataset<F>, units: &[usize]) -> Self {
        let p = holdout.n_covariates();
        let n = units.len();
        let inv_n = F::one() / F::of_usize(n);
        let mut mean_x = DVector::<F>::zeros(p);
        let mut mean_y = F::zero();
        for &u in units {
            for (k, &c) in holdout.row(u).iter().enumerate() {
                mean_x[k] += F::of(f64::from(c));
            }
            mean_y += holdout.outcome()[u];
        }
        mean_x *= inv_n;
        mean_y *= inv_n;
        let mut cov_xx = DMatrix::<F>::zeros(p, p);
        let mut cov_xy = DVector::<F>::zeros(p);
        let mut var_y = F::zero();
        let mut dx = DVector::<F>::zeros(p);
        for &u in units {
            for (k, &c) in holdout.row(u).iter().enumerate() {
                dx[k] = F::of(f64::from(c)) - mean_x[k];
            }
            let dy = holdout.outcome()[u] - mean_y;
            cov_xx.ger(F::one(), &dx, &dx, F::one());
            cov_xy.axpy(dy, &dx, F::one());
            var_y += dy * dy;
        }
        ArmMoments { n, cov_xx: cov_xx * inv_n, cov_xy: cov_xy * inv_n, var_y: var_y * inv_n }
    }

    /// Mean squared residual of the ridge fit on `active`.
    ///
    /// With an unpenalized intercept the weights solve
    /// `(Σxx + λI) w = Σxy` on centered moments and the in-sample MSE is
    /// `var_y − 2wᵀΣxy + wᵀΣxx w`.
    fn mse(&self, active: &ActiveSet) -> Result<F> {
        if active.is_empty() {
            return Ok(self.var_y);
        }
        let idx = active.as_slice();
        let m = idx.len();
        let sxx = DMatrix::from_fn(m, m, |r, c| self.cov_xx[(idx[r], idx[c])]);
        let sxy = DVector::from_fn(m, |r, _| self.cov_xy[idx[r]]);
        let mut a = sxx.clone();
        for i in 0..m {
            a[(i, i)] += F::of(RIDGE_LAMBDA);
        }
        let w = solve_spd(a, sxy.clone())?;
        let mse = self.var_y - (F::one() + F::one()) * w.dot(&sxy) + w.dot(&(&sxx * &w));
        Ok(if mse < F::zero() { F::zero() } else { mse })
    }
}

/// Linear predictor backed by per-arm moment matrices of the whole holdout.
///
/// Built once; scoring any covariate subset then costs one small solve per arm.
#[derive(Debug, Clone)]
pub struct LinearPredictor<F: Real> {
    control: ArmMoments<F>,
    treated: ArmMoments<F>,
    p: usize,
}

impl<F: Real> LinearPredictor<F> {
    pub fn new(holdout: &Dataset<F>) -> Result<Self> {
        let (control, treated) = arm_indices(holdout)?;
        Ok(LinearPredictor {
            control: ArmMoments::new(holdout, &control),
            treated: ArmMoments::new(holdout, &treated),
            p: holdout.n_covariates(),
        })
    }
}

impl<F: Real> OutcomePredictor<F> for LinearPredictor<F> {
    fn arm_errors(&self, active: &ActiveSet) -> Result<ArmErrors<F>> {
        active.check_within(self.p)?;
        Ok(ArmErrors {
            sse_control: self.control.mse(active)? * F::of_usize(self.control.n),
            n_control: self.control.n,
            sse_treated: self.treated.mse(active)? * F::of_usize(self.treated.n),
            n_treated: self.treated.n,
        })
    }
}

/// Matched fraction of available controls plus matched fraction of available treated.
///
/// An arm with nothing available contributes 0.
pub fn balancing_factor<F: Real>(
    matched_control: usize,
    available_control: usize,
    matched_treated: usize,
    available_treated: usize,
) -> Result<F> {
    if matched_control > available_control || matched_treated > available_treated {
        return Err(Error::InvalidArgument(format!(
            "matched counts ({matched_control}, {matched_treated}) exceed available ({available_control}, {available_treated})"
        )));
    }
    let frac = |m: usize, a: usize| if a == 0 { F::zero() } else { F::of_usize(m) / F::of_usize(a) };
    Ok(frac(matched_control, available_control) + frac(matched_treated, available_treated))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelQuality<F> {
    pub pe: F,
    pub bf: F,
    pub mq: F,
    pub c_param: F,
}

pub fn match_quality<F: Real>(pe: F, bf: F, c: F) -> LevelQuality<F> {
    LevelQuality { pe, bf, mq: c * bf - pe, c_param: c }
}
