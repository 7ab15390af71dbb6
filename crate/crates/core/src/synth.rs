//! Seeded synthetic data with known treatment effects.
//!
//! All models use binary covariates `x1..xp` and additive noise `N(0, σ)` with
//! σ a standard deviation (default 0.1).
//!
//! | model       | covariates                 | outcome                                      |
//! |-------------|----------------------------|----------------------------------------------|
//! | `quadratic` | 10, Bernoulli(0.5)         | `Σαᵢxᵢ + T·Σβᵢxᵢ + T·U·Σ_{i<γ≤5} xᵢx_γ + ε`   |
//! | `irrelevant`| quadratic (U = 1) + 20 extra, Bernoulli(0.1) control / (0.9) treated | extra covariates have zero coefficients |
//! | `decay_exp` | 20, Bernoulli(0.5)         | `Σ 5·(1/2)^i xᵢ + 10T + ε`                    |
//! | `decay_pow` | 20, Bernoulli(0.5)         | `Σ (5/i) xᵢ + 10T + ε`                        |
//! | `tradeoff`  | 20, Bernoulli(0.1 + 3(i−1)/190) control, (0.9 − 3(i−1)/190) treated | `Σ (1/i) xᵢ + 10T + ε` |
//!
//! For the quadratic models `αᵢ ~ N(10s, 1)` with `s` uniform on `{−1, 1}` and
//! `βᵢ ~ N(1.5, 0.15)`. Coefficients are drawn once per call and returned.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthModel {
    Quadratic,
    Irrelevant,
    DecayExp,
    DecayPow,
    Tradeoff,
}

impl SynthModel {
    pub const ALL: [SynthModel; 5] =
        [SynthModel::Quadratic, SynthModel::Irrelevant, SynthModel::DecayExp, SynthModel::DecayPow, SynthModel::Tradeoff];

    pub fn name(self) -> &'static str {
        match self {
            SynthModel::Quadratic => "quadratic",
            SynthModel::Irrelevant => "irrelevant",
            SynthModel::DecayExp => "decay_exp",
            SynthModel::DecayPow => "decay_pow",
            SynthModel::Tradeoff => "tradeoff",
        }
    }

    /// Default `U`: 10 for `quadratic`, 1 for `irrelevant`, unused otherwise.
    pub fn default_u(self) -> f64 {
        match self {
            SynthModel::Quadratic => 10.0,
            SynthModel::Irrelevant => 1.0,
            _ => 0.0,
        }
    }
}

impl fmt::Display for SynthModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SynthModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        SynthModel::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown model `{s}`")))
    }
}

/// Number of relevant covariates in the quadratic models.
pub const QUADRATIC_P: usize = 10;
/// Covariates entering the pairwise treatment term.
pub const QUADRATIC_PAIR_P: usize = 5;
/// Covariates in the decay and tradeoff models.
pub const DECAY_P: usize = 20;
/// Homogeneous effect in the decay and tradeoff models.
pub const CONSTANT_EFFECT: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub model: SynthModel,
    pub n_control: usize,
    pub n_treated: usize,
    /// `U`; `None` picks [`SynthModel::default_u`].
    pub u_coeff: Option<f64>,
    /// Extra zero-coefficient covariates for `irrelevant` (default 20).
    pub n_irrelevant: Option<usize>,
    pub noise_sd: f64,
    /// Force every `βᵢ` and `U` to zero (quadratic models only).
    pub zero_effect: bool,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(model: SynthModel, n_control: usize, n_treated: usize, seed: u64) -> Self {
        SynthSpec { model, n_control, n_treated, u_coeff: None, n_irrelevant: None, noise_sd: 0.1, zero_effect: false, seed }
    }

    fn validate(&self) -> Result<()> {
        if self.n_control == 0 || self.n_treated == 0 {
            return Err(Error::InvalidArgument("both arms need at least one unit".into()));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise sd must be non-negative, got {}", self.noise_sd)));
        }
        if self.u_coeff.is_some_and(|u| !u.is_finite()) {
            return Err(Error::InvalidArgument("U must be finite".into()));
        }
        Ok(())
    }
}

/// Realized model parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub model: SynthModel,
    pub alpha: Vec<f64>,
    /// Per-covariate treatment effects (quadratic models); empty otherwise.
    pub beta: Vec<f64>,
    pub u_coeff: f64,
    /// Zero-based index pairs of the pairwise treatment term.
    pub pairs: Vec<(usize, usize)>,
    /// Constant treatment effect (decay and tradeoff models).
    pub constant_effect: f64,
    pub noise_sd: f64,
    pub p_control: Vec<f64>,
    pub p_treated: Vec<f64>,
}

impl Coefficients {
    fn draw(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Self {
        let (alpha, beta, p_control, p_treated, constant_effect) = match spec.model {
            SynthModel::Quadratic | SynthModel::Irrelevant => {
                let beta_dist = Normal::new(1.5, 0.15).expect("valid normal");
                let mut alpha = Vec::with_capacity(QUADRATIC_P);
                let mut beta = Vec::with_capacity(QUADRATIC_P);
                for _ in 0..QUADRATIC_P {
                    let s = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                    alpha.push(Normal::new(10.0 * s, 1.0).expect("valid normal").sample(rng));
                    beta.push(if spec.zero_effect { 0.0 } else { beta_dist.sample(rng) });
                }
                let mut pc = vec![0.5; QUADRATIC_P];
                let mut pt = vec![0.5; QUADRATIC_P];
                if spec.model == SynthModel::Irrelevant {
                    let extra = spec.n_irrelevant.unwrap_or(20);
                    alpha.resize(QUADRATIC_P + extra, 0.0);
                    beta.resize(QUADRATIC_P + extra, 0.0);
                    pc.resize(QUADRATIC_P + extra, 0.1);
                    pt.resize(QUADRATIC_P + extra, 0.9);
                }
                (alpha, beta, pc, pt, 0.0)
            }
            SynthModel::DecayExp => {
                let alpha = (1..=DECAY_P).map(|i| 5.0 * 0.5f64.powi(i as i32)).collect();
                (alpha, vec![], vec![0.5; DECAY_P], vec![0.5; DECAY_P], CONSTANT_EFFECT)
            }
            SynthModel::DecayPow => {
                let alpha = (1..=DECAY_P).map(|i| 5.0 / i as f64).collect();
                (alpha, vec![], vec![0.5; DECAY_P], vec![0.5; DECAY_P], CONSTANT_EFFECT)
            }
            SynthModel::Tradeoff => {
                let alpha = (1..=DECAY_P).map(|i| 1.0 / i as f64).collect();
                let shift = |i: usize| 3.0 * (i as f64 - 1.0) / 190.0;
                let pc = (1..=DECAY_P).map(|i| 0.1 + shift(i)).collect();
                let pt = (1..=DECAY_P).map(|i| 0.9 - shift(i)).collect();
                (alpha, vec![], pc, pt, CONSTANT_EFFECT)
            }
        };
        let quadratic = matches!(spec.model, SynthModel::Quadratic | SynthModel::Irrelevant);
        let u_coeff = if spec.zero_effect { 0.0 } else { spec.u_coeff.unwrap_or(spec.model.default_u()) };
        let pairs = if quadratic {
            (0..QUADRATIC_PAIR_P).flat_map(|i| (i + 1..QUADRATIC_PAIR_P).map(move |g| (i, g))).collect()
        } else {
            vec![]
        };
        Coefficients {
            model: spec.model,
            alpha,
            beta,
            u_coeff: if quadratic { u_coeff } else { 0.0 },
            pairs,
            constant_effect,
            noise_sd: spec.noise_sd,
            p_control,
            p_treated,
        }
    }

    pub fn n_covariates(&self) -> usize {
        self.alpha.len()
    }

    /// Treated-minus-control outcome at covariates `x`.
    pub fn cate(&self, x: &[u32]) -> f64 {
        let linear: f64 = self.beta.iter().zip(x).map(|(b, &xi)| b * xi as f64).sum();
        let pairwise: f64 = self.pairs.iter().map(|&(i, g)| (x[i] * x[g]) as f64).sum();
        self.constant_effect + linear + self.u_coeff * pairwise
    }

    /// Noise-free outcome.
    pub fn mean_outcome(&self, x: &[u32], treated: bool) -> f64 {
        let base: f64 = self.alpha.iter().zip(x).map(|(a, &xi)| a * xi as f64).sum();
        if treated {
            base + self.cate(x)
        } else {
            base
        }
    }
}

/// One generated sample.
#[derive(Debug, Clone)]
pub struct SynthData {
    pub dataset: Dataset<f64>,
    pub true_cate: Vec<f64>,
    /// Realized noise per unit.
    pub noise: Vec<f64>,
}

/// JSON sidecar written next to a generated CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub spec: SynthSpec,
    /// The noise scale is a standard deviation.
    pub noise_is_sd: bool,
    pub coefficients: Coefficients,
    pub true_cate: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub holdout_true_cate: Option<Vec<f64>>,
}

fn sample(coef: &Coefficients, n_control: usize, n_treated: usize, rng: &mut ChaCha8Rng) -> Result<SynthData> {
    let p = coef.n_covariates();
    let n = n_control + n_treated;
    let noise_dist = Normal::new(0.0, coef.noise_sd).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut codes = Vec::with_capacity(n * p);
    let mut treatment = Vec::with_capacity(n);
    let mut outcome = Vec::with_capacity(n);
    let mut true_cate = Vec::with_capacity(n);
    let mut noise = Vec::with_capacity(n);
    for u in 0..n {
        let treated = u >= n_control;
        let probs = if treated { &coef.p_treated } else { &coef.p_control };
        let x: Vec<u32> = probs.iter().map(|&q| rng.random_bool(q) as u32).collect();
        let e = noise_dist.sample(rng);
        outcome.push(coef.mean_outcome(&x, treated) + e);
        true_cate.push(coef.cate(&x));
        noise.push(e);
        treatment.push(treated);
        codes.extend(x);
    }
    let names = (1..=p).map(|i| format!("x{i}")).collect();
    let dataset = Dataset::from_parts(names, vec![2; p], codes, treatment, outcome, None, None)?;
    Ok(SynthData { dataset, true_cate, noise })
}

/// Draws coefficients, then `n_control` control units followed by `n_treated` treated units.
pub fn generate(spec: &SynthSpec) -> Result<(SynthData, Coefficients)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let coef = Coefficients::draw(spec, &mut rng);
    let data = sample(&coef, spec.n_control, spec.n_treated, &mut rng)?;
    Ok((data, coef))
}

/// Like [`generate`], plus an independent holdout sample from the same coefficients.
pub fn generate_with_holdout(
    spec: &SynthSpec,
    holdout_control: usize,
    holdout_treated: usize,
) -> Result<(SynthData, SynthData, Coefficients)> {
    if holdout_control == 0 || holdout_treated == 0 {
        return Err(Error::InvalidArgument("holdout needs units in both arms".into()));
    }
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let coef = Coefficients::draw(spec, &mut rng);
    let data = sample(&coef, spec.n_control, spec.n_treated, &mut rng)?;
    let holdout = sample(&coef, holdout_control, holdout_treated, &mut rng)?;
    Ok((data, holdout, coef))
}
