//! The iterative matching driver.
//!
//! Level 1 matches exactly on every covariate. Each later level tries dropping
//! each remaining covariate in turn, matches the still-unmatched units on what
//! is left, and scores the trial with `MQ = C·BF − PE`. The best-scoring drop
//! is made permanent and its trial groups are committed. The loop ends at the
//! first stop condition that fires (see [`StopReason`] for the order).

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::grouper::{basic_exact_match, ActiveSet, Backend, ExactMatch};
use crate::quality::{balancing_factor, match_quality, LevelQuality, LinearPredictor, OutcomePredictor};
use crate::scalar::Real;

/// How the prediction-error stop compares a candidate's PE to the all-covariate PE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeThreshold {
    /// Stop when `PE > PE_full · (1 + ε)`.
    #[default]
    Relative,
    /// Stop when `PE > PE_full + ε`.
    Additive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlameConfig {
    /// Weight of the balancing factor against prediction error.
    pub c_param: f64,
    /// Prediction-error slack before the PE stop fires.
    pub epsilon: f64,
    pub pe_threshold: PeThreshold,
    /// Keep matched units available for later levels.
    pub replacement: bool,
    pub backend: Backend,
    pub stop_on_pe_blowup: bool,
    /// Upper bound on the number of levels, level 1 included.
    pub max_levels: Option<usize>,
    /// Stop once MQ falls below this after having reached it.
    pub mq_drop_threshold: Option<f64>,
    pub seed: u64,
}

impl Default for FlameConfig {
    fn default() -> Self {
        FlameConfig {
            c_param: 0.001,
            epsilon: 0.02,
            pe_threshold: PeThreshold::Relative,
            replacement: false,
            backend: Backend::MixedRadix,
            stop_on_pe_blowup: true,
            max_levels: None,
            mq_drop_threshold: None,
            seed: 0,
        }
    }
}

impl FlameConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_param >= 0.0 && self.c_param.is_finite()) {
            return Err(Error::InvalidArgument(format!("C must be a non-negative number, got {}", self.c_param)));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!("epsilon must be non-negative, got {}", self.epsilon)));
        }
        if self.max_levels == Some(0) {
            return Err(Error::InvalidArgument("max_levels must be at least 1".into()));
        }
        Ok(())
    }
}

/// Why a run ended. Conditions are checked in declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    NoUnmatchedData,
    OneArmExhausted,
    NoCovariatesLeft,
    PeBlowup,
    MqDrop,
    MaxLevels,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedGroup<F> {
    /// Level (1-based) at which the group formed.
    pub level: usize,
    /// Codes on that level's active covariates.
    pub active_signature: Vec<u32>,
    /// Unit row indices, ascending.
    pub members: Vec<usize>,
    pub n_treated: usize,
    pub n_control: usize,
    /// Mean treated outcome minus mean control outcome.
    pub cate: F,
    pub variance_upper_bound: F,
}

impl<F> MatchedGroup<F> {
    pub fn size(&self) -> usize {
        self.members.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord<F> {
    pub level: usize,
    pub active: ActiveSet,
    /// Covariate dropped to reach this level (`None` at level 1).
    pub dropped: Option<usize>,
    pub quality: LevelQuality<F>,
    pub groups: Vec<MatchedGroup<F>>,
    /// Units matched for the first time at this level.
    pub newly_matched: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchRun<F> {
    pub n_units: usize,
    pub n_covariates: usize,
    pub dropped_order: Vec<usize>,
    pub levels: Vec<LevelRecord<F>>,
    pub stop_reason: StopReason,
    /// Units never matched, ascending.
    pub unmatched: Vec<usize>,
    /// Per unit: (level index, group index) of its main group.
    main_group: Vec<Option<(usize, usize)>>,
}

impl<F: Real> MatchRun<F> {
    fn empty(n_covariates: usize, stop_reason: StopReason) -> Self {
        MatchRun {
            n_units: 0,
            n_covariates,
            dropped_order: Vec::new(),
            levels: Vec::new(),
            stop_reason,
            unmatched: Vec::new(),
            main_group: Vec::new(),
        }
    }

    pub fn groups(&self) -> impl Iterator<Item = &MatchedGroup<F>> {
        self.levels.iter().flat_map(|l| l.groups.iter())
    }

    pub fn n_groups(&self) -> usize {
        self.levels.iter().map(|l| l.groups.len()).sum()
    }

    pub fn n_matched(&self) -> usize {
        self.n_units - self.unmatched.len()
    }

    /// The first group the unit joined, if any.
    pub fn main_group(&self, unit: usize) -> Option<&MatchedGroup<F>> {
        self.main_group.get(unit).copied().flatten().map(|(l, g)| &self.levels[l].groups[g])
    }

    /// Estimated CATE for a unit: its main group's estimate.
    pub fn unit_cate(&self, unit: usize) -> Option<F> {
        self.main_group(unit).map(|g| g.cate)
    }
}

/// Sample variance with `n − 1` denominator; 0 for fewer than two values.
fn sample_variance<F: Real>(xs: &[F]) -> F {
    if xs.len() < 2 {
        return F::zero();
    }
    let n = F::of_usize(xs.len());
    let mean = xs.iter().fold(F::zero(), |a, &x| a + x) / n;
    xs.iter().fold(F::zero(), |a, &x| a + (x - mean) * (x - mean)) / (n - F::one())
}

/// `Var(treated) + Var(control)`, an upper bound on the variance of the
/// treated-minus-control difference when the two are non-negatively correlated.
pub fn variance_upper_bound<F: Real>(treated: &[F], control: &[F]) -> F {
    sample_variance(treated) + sample_variance(control)
}

/// Size-weighted mean of group CATEs.
pub fn estimate_ate<F: Real>(run: &MatchRun<F>) -> Result<F> {
    let (mut num, mut den) = (F::zero(), 0usize);
    for g in run.groups() {
        num += g.cate * F::of_usize(g.size());
        den += g.size();
    }
    if den == 0 {
        return Err(Error::NoEstimate);
    }
    Ok(num / F::of_usize(den))
}

fn build_group<F: Real>(d: &Dataset<F>, level: usize, signature: Vec<u32>, members: Vec<usize>) -> MatchedGroup<F> {
    let (treated, control): (Vec<F>, Vec<F>) = {
        let mut t = Vec::new();
        let mut c = Vec::new();
        for &u in &members {
            if d.is_treated(u) {
                t.push(d.outcome()[u]);
            } else {
                c.push(d.outcome()[u]);
            }
        }
        (t, c)
    };
    let mean = |xs: &[F]| xs.iter().fold(F::zero(), |a, &x| a + x) / F::of_usize(xs.len());
    MatchedGroup {
        level,
        active_signature: signature,
        n_treated: treated.len(),
        n_control: control.len(),
        cate: mean(&treated) - mean(&control),
        variance_upper_bound: variance_upper_bound(&treated, &control),
        members,
    }
}

struct Trial<F> {
    dropped: usize,
    active: ActiveSet,
    matched: ExactMatch,
    quality: LevelQuality<F>,
    newly_matched: usize,
}

/// Runs the matcher with the default linear outcome model fitted on `holdout`.
pub fn run_flame<F: Real>(matching: &Dataset<F>, holdout: &Dataset<F>, config: &FlameConfig) -> Result<MatchRun<F>> {
    config.validate()?;
    if matching.covariate_names() != holdout.covariate_names() || matching.dictionaries() != holdout.dictionaries() {
        return Err(Error::Schema("matching and holdout data use different covariates or encodings".into()));
    }
    let predictor = LinearPredictor::new(holdout)?;
    run_flame_with(matching, &predictor, config)
}

/// Runs the matcher with any outcome model.
pub fn run_flame_with<F: Real, P: OutcomePredictor<F>>(
    d: &Dataset<F>,
    predictor: &P,
    config: &FlameConfig,
) -> Result<MatchRun<F>> {
    config.validate()?;
    let n = d.n_units();
    let p = d.n_covariates();
    if n == 0 {
        return Ok(MatchRun::empty(p, StopReason::NoUnmatchedData));
    }
    if p == 0 {
        return Err(Error::InvalidArgument("no covariates to match on".into()));
    }
    let c = F::of(config.c_param);
    let all_units: Vec<usize> = (0..n).collect();

    let mut state = Driver {
        d,
        config,
        ever_matched: vec![false; n],
        main_group: vec![None; n],
        levels: Vec::new(),
    };

    let mut active = ActiveSet::all(p);
    let pe_full = predictor.prediction_error(&active)?;
    let first = basic_exact_match(d, &all_units, &active, config.backend)?;
    let (newly, bf) = state.score(&first)?;
    state.commit(None, active.clone(), first, match_quality(pe_full, bf, c), newly);

    let pe_limit = match config.pe_threshold {
        PeThreshold::Relative => pe_full * (F::one() + F::of(config.epsilon)),
        PeThreshold::Additive => pe_full + F::of(config.epsilon),
    };
    let mq_threshold = config.mq_drop_threshold.map(F::of);
    let mut reached_threshold = mq_threshold.is_some_and(|t| state.levels[0].quality.mq >= t);
    let mut dropped_order = Vec::new();

    let stop_reason = loop {
        let unmatched: Vec<usize> = all_units.iter().copied().filter(|&u| !state.ever_matched[u]).collect();
        if unmatched.is_empty() {
            break StopReason::NoUnmatchedData;
        }
        let pool = if config.replacement { &all_units } else { &unmatched };
        let pool_treated = pool.iter().filter(|&&u| d.is_treated(u)).count();
        if pool_treated == 0 || pool_treated == pool.len() {
            break StopReason::OneArmExhausted;
        }
        if active.len() <= 1 {
            break StopReason::NoCovariatesLeft;
        }

        let trials: Vec<Trial<F>> = active
            .as_slice()
            .par_iter()
            .map(|&j| -> Result<Trial<F>> {
                let reduced = active.without(j);
                let matched = basic_exact_match(d, pool, &reduced, config.backend)?;
                let (newly_matched, bf) = state.score(&matched)?;
                let pe = predictor.prediction_error(&reduced)?;
                Ok(Trial { dropped: j, active: reduced, matched, quality: match_quality(pe, bf, c), newly_matched })
            })
            .collect::<Result<_>>()?;
        // first maximum in covariate order, so ties go to the lowest index
        let best = trials
            .into_iter()
            .reduce(|best, t| if t.quality.mq > best.quality.mq { t } else { best })
            .expect("at least two active covariates");

        if config.stop_on_pe_blowup && best.quality.pe > pe_limit {
            break StopReason::PeBlowup;
        }
        if let Some(t) = mq_threshold {
            if reached_threshold && best.quality.mq < t {
                break StopReason::MqDrop;
            }
            reached_threshold |= best.quality.mq >= t;
        }
        if config.max_levels.is_some_and(|m| state.levels.len() >= m) {
            break StopReason::MaxLevels;
        }

        dropped_order.push(best.dropped);
        active = best.active.clone();
        state.commit(Some(best.dropped), best.active, best.matched, best.quality, best.newly_matched);
    };

    let unmatched = (0..n).filter(|&u| !state.ever_matched[u]).collect();
    Ok(MatchRun {
        n_units: n,
        n_covariates: p,
        dropped_order,
        levels: state.levels,
        stop_reason,
        unmatched,
        main_group: state.main_group,
    })
}

struct Driver<'a, F: Real> {
    d: &'a Dataset<F>,
    config: &'a FlameConfig,
    ever_matched: Vec<bool>,
    main_group: Vec<Option<(usize, usize)>>,
    levels: Vec<LevelRecord<F>>,
}

impl<F: Real> Driver<'_, F> {
    /// Newly matched count and balancing factor of a trial match.
    fn score(&self, m: &ExactMatch) -> Result<(usize, F)> {
        let (mut avail_c, mut avail_t) = (0, 0);
        for (u, &done) in self.ever_matched.iter().enumerate() {
            if !done {
                if self.d.is_treated(u) {
                    avail_t += 1;
                } else {
                    avail_c += 1;
                }
            }
        }
        let (mut new_c, mut new_t) = (0, 0);
        for &u in m.matched.iter().filter(|&&u| !self.ever_matched[u]) {
            if self.d.is_treated(u) {
                new_t += 1;
            } else {
                new_c += 1;
            }
        }
        Ok((new_c + new_t, balancing_factor(new_c, avail_c, new_t, avail_t)?))
    }

    fn commit(&mut self, dropped: Option<usize>, active: ActiveSet, m: ExactMatch, quality: LevelQuality<F>, newly_matched: usize) {
        let level_idx = self.levels.len();
        let level = level_idx + 1;
        let mut groups = Vec::with_capacity(m.groups.len());
        for g in m.groups.groups {
            // with replacement, a group is recorded only if it is someone's first match
            if self.config.replacement && g.members.iter().all(|&u| self.ever_matched[u]) {
                continue;
            }
            let gi = groups.len();
            for &u in &g.members {
                if !self.ever_matched[u] {
                    self.ever_matched[u] = true;
                    self.main_group[u] = Some((level_idx, gi));
                }
            }
            groups.push(build_group(self.d, level, g.signature, g.members));
        }
        self.levels.push(LevelRecord { level, active, dropped, quality, groups, newly_matched });
    }
}

/// Category of a subpopulation report row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Code(u32),
    /// Groups formed after the covariate was dropped.
    Marginalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubpopulationRow<F> {
    pub category: Category,
    /// Size-weighted mean of group CATEs.
    pub mean_cate: F,
    /// Size-weighted standard deviation of group CATEs.
    pub std_cate: F,
    pub units: usize,
    pub groups: usize,
}

/// Size-weighted CATE summary per value of one covariate.
pub fn subpopulation_report<F: Real>(run: &MatchRun<F>, by_covariate: usize) -> Result<Vec<SubpopulationRow<F>>> {
    if by_covariate >= run.n_covariates {
        return Err(Error::InvalidArgument(format!(
            "covariate index {by_covariate} out of range for {} covariates",
            run.n_covariates
        )));
    }
    let mut buckets: std::collections::BTreeMap<Category, Vec<(F, usize)>> = Default::default();
    for level in &run.levels {
        let pos = level.active.position(by_covariate);
        for g in &level.groups {
            let cat = pos.map_or(Category::Marginalized, |i| Category::Code(g.active_signature[i]));
            buckets.entry(cat).or_default().push((g.cate, g.size()));
        }
    }
    Ok(buckets
        .into_iter()
        .map(|(category, items)| {
            let units: usize = items.iter().map(|&(_, w)| w).sum();
            let total = F::of_usize(units);
            let mean = items.iter().fold(F::zero(), |a, &(x, w)| a + x * F::of_usize(w)) / total;
            let var = items.iter().fold(F::zero(), |a, &(x, w)| a + (x - mean) * (x - mean) * F::of_usize(w)) / total;
            SubpopulationRow { category, mean_cate: mean, std_cate: var.sqrt(), units, groups: items.len() }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub signature: Vec<u32>,
    pub labels: Vec<String>,
    pub unit_ids: Vec<String>,
    pub n_treated: usize,
    pub n_control: usize,
    pub cate: f64,
    pub variance_upper_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub level: usize,
    pub active_covariates: Vec<String>,
    pub dropped: Option<String>,
    pub pe: f64,
    pub bf: f64,
    pub mq: f64,
    pub newly_matched: usize,
    pub groups: Vec<GroupReport>,
}

/// JSON run report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: FlameConfig,
    pub covariates: Vec<String>,
    pub dropped_order: Vec<String>,
    pub levels: Vec<LevelReport>,
    pub ate: Option<f64>,
    pub stop_reason: StopReason,
    pub n_units: usize,
    pub n_matched: usize,
    pub n_groups: usize,
    pub unmatched_unit_ids: Vec<String>,
}

impl<F: Real> MatchRun<F> {
    pub fn report(&self, d: &Dataset<F>, config: &FlameConfig) -> RunReport {
        let names = d.covariate_names();
        let levels = self
            .levels
            .iter()
            .map(|l| LevelReport {
                level: l.level,
                active_covariates: l.active.iter().map(|k| names[k].clone()).collect(),
                dropped: l.dropped.map(|k| names[k].clone()),
                pe: l.quality.pe.as_f64(),
                bf: l.quality.bf.as_f64(),
                mq: l.quality.mq.as_f64(),
                newly_matched: l.newly_matched,
                groups: l
                    .groups
                    .iter()
                    .map(|g| GroupReport {
                        signature: g.active_signature.clone(),
                        labels: l.active.iter().zip(&g.active_signature).map(|(k, &c)| d.label(k, c).to_string()).collect(),
                        unit_ids: g.members.iter().map(|&u| d.unit_ids()[u].clone()).collect(),
                        n_treated: g.n_treated,
                        n_control: g.n_control,
                        cate: g.cate.as_f64(),
                        variance_upper_bound: g.variance_upper_bound.as_f64(),
                    })
                    .collect(),
            })
            .collect();
        RunReport {
            config: config.clone(),
            covariates: names.to_vec(),
            dropped_order: self.dropped_order.iter().map(|&k| names[k].clone()).collect(),
            levels,
            ate: estimate_ate(self).ok().map(Real::as_f64),
            stop_reason: self.stop_reason,
            n_units: self.n_units,
            n_matched: self.n_matched(),
            n_groups: self.n_groups(),
            unmatched_unit_ids: self.unmatched.iter().map(|&u| d.unit_ids()[u].clone()).collect(),
        }
    }

    /// One row per unit: `unit_id,level,signature,cate`; blank fields when unmatched.
    pub fn write_assignments_csv<W: Write>(&self, d: &Dataset<F>, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["unit_id", "level", "signature", "cate"])?;
        for u in 0..self.n_units {
            let id = d.unit_ids()[u].as_str();
            match self.main_group[u] {
                Some((li, gi)) => {
                    let level = &self.levels[li];
                    let g = &level.groups[gi];
                    let sig = level
                        .active
                        .iter()
                        .zip(&g.active_signature)
                        .map(|(k, &c)| format!("{}={}", d.covariate_names()[k], d.label(k, c)))
                        .collect::<Vec<_>>()
                        .join(";");
                    w.write_record([id, &level.level.to_string(), &sig, &g.cate.to_string()])?;
                }
                None => w.write_record([id, "", "", ""])?,
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Per-level quality series: `level,dropped,pe,bf,mq,newly_matched,cumulative_matched`.
    pub fn write_mq_series_csv<W: Write>(&self, d: &Dataset<F>, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["level", "dropped", "pe", "bf", "mq", "newly_matched", "cumulative_matched"])?;
        let mut cumulative = 0;
        for l in &self.levels {
            cumulative += l.newly_matched;
            w.write_record([
                l.level.to_string(),
                l.dropped.map(|k| d.covariate_names()[k].clone()).unwrap_or_default(),
                l.quality.pe.to_string(),
                l.quality.bf.to_string(),
                l.quality.mq.to_string(),
                l.newly_matched.to_string(),
                cumulative.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
