//! Forgetting noise for aging news features and the similarity coupling
//! (`prop`) used by the cross-event term of the point process.
//!
//! Older news is degraded by a forward Gaussian Markov chain
//! `x^s = sqrt(d_s) x^{s-1} + sqrt(1 - d_s) eps_s` with retention
//! `d_s = 1 - eta_s`; after `t` steps this is equivalent to a single draw
//! `x^t = sqrt(D_t) x^0 + sqrt(1 - D_t) eps` with `D_t = prod_{s<=t} d_s`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::rng;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum ForgettingError {
    #[error("eta[{index}] = {value} is outside (0, 1]")]
    EtaOutOfRange { index: usize, value: f64 },
    #[error("step {step} exceeds schedule length {len}")]
    StepOutOfRange { step: usize, len: usize },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("Minkowski order must be >= 1, got {0}")]
    InvalidOrder(f64),
    #[error("unknown modality '{0}'")]
    UnknownModality(String),
    #[error("age unit must be positive and finite, got {0}")]
    InvalidAgeUnit(f64),
}

/// Per-step noise variances `eta_t` with the derived retention products.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleFile", into = "ScheduleFile")]
pub struct NoiseSchedule {
    eta: Vec<f64>,
    /// `delta_bar[t] = prod_{s=1..t} (1 - eta_s)`, with `delta_bar[0] = 1`.
    delta_bar: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScheduleFile {
    eta: Vec<f64>,
}

impl TryFrom<ScheduleFile> for NoiseSchedule {
    type Error = ForgettingError;
    fn try_from(f: ScheduleFile) -> Result<Self, Self::Error> {
        NoiseSchedule::new(f.eta)
    }
}

impl From<NoiseSchedule> for ScheduleFile {
    fn from(s: NoiseSchedule) -> Self {
        ScheduleFile { eta: s.eta }
    }
}

impl NoiseSchedule {
    pub fn new(eta: Vec<f64>) -> Result<Self, ForgettingError> {
        for (index, &value) in eta.iter().enumerate() {
            if !(value > 0.0 && value <= 1.0) {
                return Err(ForgettingError::EtaOutOfRange { index, value });
            }
        }
        let mut delta_bar = Vec::with_capacity(eta.len() + 1);
        let mut acc = 1.0;
        delta_bar.push(acc);
        for e in &eta {
            acc *= 1.0 - e;
            delta_bar.push(acc);
        }
        Ok(NoiseSchedule { eta, delta_bar })
    }

    /// Linear schedule over `steps` steps whose retention `1 - eta` runs
    /// from `retain_first` down to `retain_last`.
    pub fn linear_retention(
        steps: usize,
        retain_first: f64,
        retain_last: f64,
    ) -> Result<Self, ForgettingError> {
        let eta = (0..steps)
            .map(|s| {
                let frac = if steps > 1 {
                    s as f64 / (steps - 1) as f64
                } else {
                    0.0
                };
                1.0 - (retain_first + frac * (retain_last - retain_first))
            })
            .collect();
        NoiseSchedule::new(eta)
    }

    /// Number of steps `T`.
    pub fn len(&self) -> usize {
        self.eta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eta.is_empty()
    }

    pub fn eta(&self) -> &[f64] {
        &self.eta
    }

    /// Retention of step `s` (1-based).
    pub fn delta(&self, s: usize) -> f64 {
        1.0 - self.eta[s - 1]
    }

    /// Cumulative retention after `t` steps.
    pub fn delta_bar(&self, t: usize) -> Result<f64, ForgettingError> {
        self.delta_bar
            .get(t)
            .copied()
            .ok_or(ForgettingError::StepOutOfRange {
                step: t,
                len: self.len(),
            })
    }

    fn check_step(&self, t: usize) -> Result<(), ForgettingError> {
        if t > self.len() {
            Err(ForgettingError::StepOutOfRange {
                step: t,
                len: self.len(),
            })
        } else {
            Ok(())
        }
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule::linear_retention(100, 0.9999, 0.98).expect("valid default schedule")
    }
}

/// Runs `t` steps of the Markov chain one at a time.
pub fn noise_iterative<R: Rng + ?Sized>(
    x0: &[f64],
    t: usize,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<Vec<f64>, ForgettingError> {
    schedule.check_step(t)?;
    let mut x = x0.to_vec();
    for s in 1..=t {
        let keep = schedule.delta(s);
        let (a, b) = (keep.sqrt(), (1.0 - keep).sqrt());
        for v in x.iter_mut() {
            let eps: f64 = rng.sample(StandardNormal);
            *v = a * *v + b * eps;
        }
    }
    Ok(x)
}

/// Draws `x^t` directly from its marginal given `x0`.
pub fn noise_closed_form<R: Rng + ?Sized>(
    x0: &[f64],
    t: usize,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<Vec<f64>, ForgettingError> {
    let keep = schedule.delta_bar(t)?;
    let (a, b) = (keep.sqrt(), (1.0 - keep).sqrt());
    Ok(x0
        .iter()
        .map(|v| {
            let eps: f64 = rng.sample(StandardNormal);
            a * v + b * eps
        })
        .collect())
}

/// How a Minkowski distance becomes a similarity in `(0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityMap {
    /// `exp(-d)`
    #[default]
    NegExp,
    /// `1 / (1 + d)`
    Reciprocal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimilarityConfig {
    #[serde(default = "default_order")]
    pub order: f64,
    #[serde(default)]
    pub mapping: SimilarityMap,
}

fn default_order() -> f64 {
    2.0
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        SimilarityConfig {
            order: default_order(),
            mapping: SimilarityMap::NegExp,
        }
    }
}

impl SimilarityConfig {
    pub fn validate(&self) -> Result<(), ForgettingError> {
        if self.order >= 1.0 && self.order.is_finite() {
            Ok(())
        } else {
            Err(ForgettingError::InvalidOrder(self.order))
        }
    }
}

pub fn minkowski(a: &[f64], b: &[f64], order: f64) -> Result<f64, ForgettingError> {
    if a.len() != b.len() {
        return Err(ForgettingError::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if !(order >= 1.0 && order.is_finite()) {
        return Err(ForgettingError::InvalidOrder(order));
    }
    let sum: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs().powf(order))
        .sum();
    Ok(sum.powf(1.0 / order))
}

pub fn similarity(a: &[f64], b: &[f64], config: &SimilarityConfig) -> Result<f64, ForgettingError> {
    let d = minkowski(a, b, config.order)?;
    Ok(match config.mapping {
        SimilarityMap::NegExp => (-d).exp(),
        SimilarityMap::Reciprocal => 1.0 / (1.0 + d),
    })
}

/// `tanh(2 sim - 1)`: signed coupling between a (noised) older item and a
/// current one.
pub fn prop(
    a_noised: &[f64],
    b: &[f64],
    config: &SimilarityConfig,
) -> Result<f64, ForgettingError> {
    Ok((2.0 * similarity(a_noised, b, config)? - 1.0).tanh())
}

/// Noise step count for an item that has aged `age` time units.
pub fn noise_steps_for_age(age: f64, age_unit: f64, max_steps: usize) -> usize {
    if age.is_nan() || age <= 0.0 {
        return 0;
    }
    let steps = (age / age_unit).ceil();
    if steps >= max_steps as f64 {
        max_steps
    } else {
        steps as usize
    }
}

/// Pairwise coupling between two news items, indexed by corpus position.
pub trait PropProvider: Sync {
    /// Coupling of `source` (an older item from another event) on `target`.
    fn prop(&self, source: usize, target: usize) -> f64;
}

/// Constant coupling, mostly useful for tests and ablations.
#[derive(Clone, Copy, Debug)]
pub struct ConstantProp(pub f64);

impl PropProvider for ConstantProp {
    fn prop(&self, _source: usize, _target: usize) -> f64 {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForgettingConfig {
    /// Modality compared by `prop`; the first schema modality when absent.
    #[serde(default)]
    pub modality: Option<String>,
    #[serde(default)]
    pub similarity: SimilarityConfig,
    #[serde(default)]
    pub schedule: NoiseSchedule,
    /// Time units of age per noise step.
    #[serde(default = "default_age_unit")]
    pub age_unit: f64,
}

fn default_age_unit() -> f64 {
    1.0
}

impl Default for ForgettingConfig {
    fn default() -> Self {
        ForgettingConfig {
            modality: None,
            similarity: SimilarityConfig::default(),
            schedule: NoiseSchedule::default(),
            age_unit: default_age_unit(),
        }
    }
}

/// `prop` between corpus items with the source noised according to its age
/// at the target's publication time.
///
/// The noise for item `k` aged `s` steps comes from the stream
/// `noise/<id>/<s>` of `seed`, so every evaluation order sees the same draw.
pub struct ForgettingProp<'a> {
    corpus: &'a Corpus,
    modality: String,
    config: &'a ForgettingConfig,
    seed: u64,
}

impl<'a> ForgettingProp<'a> {
    pub fn new(
        corpus: &'a Corpus,
        config: &'a ForgettingConfig,
        seed: u64,
    ) -> Result<Self, ForgettingError> {
        config.similarity.validate()?;
        if !(config.age_unit > 0.0 && config.age_unit.is_finite()) {
            return Err(ForgettingError::InvalidAgeUnit(config.age_unit));
        }
        let modality = match &config.modality {
            Some(m) => m.clone(),
            None => corpus
                .schema
                .first()
                .map(|m| m.name.clone())
                .ok_or_else(|| ForgettingError::UnknownModality("<none>".into()))?,
        };
        if corpus.modality(&modality).is_none() {
            return Err(ForgettingError::UnknownModality(modality));
        }
        Ok(ForgettingProp {
            corpus,
            modality,
            config,
            seed,
        })
    }

    /// Features of item `index` after aging `age` time units.
    pub fn aged_features(&self, index: usize, age: f64) -> Vec<f64> {
        let item = &self.corpus.items[index];
        let x0 = item.feature(&self.modality).unwrap_or(&[]);
        let steps = noise_steps_for_age(age, self.config.age_unit, self.config.schedule.len());
        if steps == 0 {
            return x0.to_vec();
        }
        let mut r = rng::stream(self.seed, &format!("noise/{}/{}", item.id, steps));
        noise_closed_form(x0, steps, &self.config.schedule, &mut r)
            .expect("step count clamped to schedule length")
    }
}

impl PropProvider for ForgettingProp<'_> {
    fn prop(&self, source: usize, target: usize) -> f64 {
        let src = &self.corpus.items[source];
        let dst = &self.corpus.items[target];
        let noised = self.aged_features(source, dst.timestamp - src.timestamp);
        let b = dst.feature(&self.modality).unwrap_or(&[]);
        prop(&noised, b, &self.config.similarity).unwrap_or(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_steps_leave_features_unchanged() {
        let s = NoiseSchedule::default();
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let x = vec![1.0, -2.0, 3.5];
        assert_eq!(noise_iterative(&x, 0, &s, &mut r).unwrap(), x);
        assert_eq!(noise_closed_form(&x, 0, &s, &mut r).unwrap(), x);
    }

    #[test]
    fn eta_one_replaces_features_with_pure_noise() {
        let s = NoiseSchedule::new(vec![1.0]).unwrap();
        let x = vec![100.0, -100.0];
        let mut r1 = ChaCha8Rng::seed_from_u64(3);
        let mut r2 = ChaCha8Rng::seed_from_u64(3);
        let out = noise_iterative(&x, 1, &s, &mut r1).unwrap();
        let eps: Vec<f64> = (0..2).map(|_| r2.sample(StandardNormal)).collect();
        assert_eq!(out, eps);
    }

    #[test]
    fn schedule_rejects_out_of_range_eta() {
        assert!(matches!(
            NoiseSchedule::new(vec![0.5, 0.0]),
            Err(ForgettingError::EtaOutOfRange { index: 1, .. })
        ));
        assert!(NoiseSchedule::new(vec![1.2]).is_err());
        let s = NoiseSchedule::new(vec![0.5]).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            noise_closed_form(&[0.0], 2, &s, &mut r),
            Err(ForgettingError::StepOutOfRange { step: 2, len: 1 })
        ));
        assert!(noise_iterative(&[0.0], 2, &s, &mut r).is_err());
    }

    #[test]
    fn delta_bar_matches_direct_product() {
        let eta: Vec<f64> = (0..10_000)
            .map(|i| 1e-5 + 1e-4 * ((i % 7) as f64))
            .collect();
        let s = NoiseSchedule::new(eta.clone()).unwrap();
        for t in [0usize, 1, 17, 999, 10_000] {
            let direct: f64 = eta[..t].iter().map(|e| 1.0 - e).product();
            assert_abs_diff_eq!(s.delta_bar(t).unwrap(), direct, epsilon = 1e-12);
        }
        for t in 1..=s.len() {
            assert!(s.delta_bar(t).unwrap() <= s.delta_bar(t - 1).unwrap());
        }
    }

    #[test]
    fn default_schedule_forgets_mildly() {
        let s = NoiseSchedule::default();
        assert_eq!(s.len(), 100);
        assert_abs_diff_eq!(s.delta(1), 0.9999, epsilon = 1e-12);
        assert_abs_diff_eq!(s.delta(100), 0.98, epsilon = 1e-12);
        assert!(s.delta_bar(100).unwrap() > 0.3);
    }

    #[test]
    fn schedule_json_round_trip() {
        let s = NoiseSchedule::new(vec![0.1, 0.2]).unwrap();
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(text, r#"{"eta":[0.1,0.2]}"#);
        let back: NoiseSchedule = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
        assert!(serde_json::from_str::<NoiseSchedule>(r#"{"eta":[0.0]}"#).is_err());
    }

    #[test]
    fn similarity_examples() {
        let cfg = SimilarityConfig::default();
        assert_eq!(similarity(&[1.0, 2.0], &[1.0, 2.0], &cfg).unwrap(), 1.0);
        assert_abs_diff_eq!(
            similarity(&[1.0, 0.0], &[0.0, 1.0], &cfg).unwrap(),
            0.243_116_734_434_214_2,
            epsilon = 1e-12
        );
        let p1 = SimilarityConfig { order: 1.0, ..cfg };
        assert_abs_diff_eq!(minkowski(&[3.0, 4.0], &[0.0, 0.0], 1.0).unwrap(), 7.0);
        assert_abs_diff_eq!(minkowski(&[3.0, 4.0], &[0.0, 0.0], 2.0).unwrap(), 5.0);
        assert!(
            similarity(&[3.0, 4.0], &[0.0, 0.0], &p1).unwrap()
                < similarity(&[3.0, 4.0], &[0.0, 0.0], &cfg).unwrap()
        );
        let recip = SimilarityConfig {
            mapping: SimilarityMap::Reciprocal,
            ..cfg
        };
        assert_abs_diff_eq!(
            similarity(&[3.0, 4.0], &[0.0, 0.0], &recip).unwrap(),
            1.0 / 6.0
        );
    }

    #[test]
    fn similarity_errors() {
        let cfg = SimilarityConfig::default();
        assert!(matches!(
            similarity(&[1.0], &[1.0, 2.0], &cfg),
            Err(ForgettingError::DimensionMismatch { left: 1, right: 2 })
        ));
        let bad = SimilarityConfig { order: 0.5, ..cfg };
        assert!(matches!(
            similarity(&[1.0], &[2.0], &bad),
            Err(ForgettingError::InvalidOrder(_))
        ));
    }

    #[test]
    fn prop_examples() {
        let cfg = SimilarityConfig::default();
        assert_abs_diff_eq!(prop(&[1.0, 1.0], &[1.0, 1.0], &cfg).unwrap(), 1f64.tanh());
        assert_abs_diff_eq!(
            prop(&[1.0, 1.0], &[1.0, 1.0], &cfg).unwrap(),
            0.761_594_155_955_764_9,
            epsilon = 1e-12
        );
        let far = prop(&[1e3, 0.0], &[0.0, 1e3], &cfg).unwrap();
        assert_abs_diff_eq!(far, -0.761_594_155_955_764_9, epsilon = 1e-12);
        // similarity exactly one half: ln 2 apart in one coordinate
        let half = prop(&[std::f64::consts::LN_2], &[0.0], &cfg).unwrap();
        assert_abs_diff_eq!(half, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn noise_steps_follow_age() {
        assert_eq!(noise_steps_for_age(0.0, 1.0, 100), 0);
        assert_eq!(noise_steps_for_age(-3.0, 1.0, 100), 0);
        assert_eq!(noise_steps_for_age(0.2, 1.0, 100), 1);
        assert_eq!(noise_steps_for_age(2.0, 1.0, 100), 2);
        assert_eq!(noise_steps_for_age(2.0, 0.5, 100), 4);
        assert_eq!(noise_steps_for_age(1e9, 1.0, 100), 100);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn vec2() -> impl Strategy<Value = Vec<f64>> {
            prop::collection::vec(-10.0..10.0f64, 3)
        }

        proptest! {
            #[test]
            fn similarity_symmetric_and_bounded(a in vec2(), b in vec2(), p in 1.0..4.0f64) {
                let cfg = SimilarityConfig { order: p, mapping: SimilarityMap::NegExp };
                let ab = similarity(&a, &b, &cfg).unwrap();
                let ba = similarity(&b, &a, &cfg).unwrap();
                prop_assert!((ab - ba).abs() < 1e-12);
                prop_assert!(ab > 0.0 && ab <= 1.0);
                prop_assert_eq!(ab == 1.0, a == b);
            }

            #[test]
            fn similarity_non_increasing_under_perturbation(
                a in vec2(), k in 0usize..3, d1 in 0.0..5.0f64, extra in 0.0..5.0f64
            ) {
                let cfg = SimilarityConfig::default();
                let mut b1 = a.clone();
                b1[k] += d1;
                let mut b2 = a.clone();
                b2[k] += d1 + extra;
                prop_assert!(similarity(&a, &b2, &cfg).unwrap() <= similarity(&a, &b1, &cfg).unwrap() + 1e-15);
            }

            #[test]
            fn prop_bounded_by_tanh_one(a in vec2(), b in vec2()) {
                let v = prop(&a, &b, &SimilarityConfig::default()).unwrap();
                prop_assert!(v > -(1f64.tanh()) && v <= 1f64.tanh());
            }
        }
    }
}
