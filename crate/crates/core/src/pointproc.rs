//! Self-exciting point process with cross-event coupling.
//!
//! The intensity of a focal event at time `t` is
//!
//! ```text
//! lambda*(t) = max(lambda0 + sum_{t_i < t} alpha e^{-beta (t - t_i)}
//!                          + sum_{t_j < t} gamma e^{-beta (t - t_j)} prop_j, EPS_FLOOR)
//! ```
//!
//! where the first sum runs over arrivals of the focal event and the second
//! over news of other events weighted by their similarity coupling `prop_j`.
//! Parameters are estimated by maximizing the log-likelihood with the
//! compensator integral replaced by a trapezoidal sum.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Event};
use crate::forgetting::PropProvider;

/// Lower bound applied to the intensity so its logarithm stays defined.
pub const EPS_FLOOR: f64 = 1e-8;

/// Smallest value the optimizer lets `lambda0` and `beta` reach.
const MIN_POSITIVE: f64 = 1e-10;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum PointProcError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("non-finite time {0}")]
    NonFiniteTime(f64),
    #[error("negative time {0}")]
    NegativeTime(f64),
    #[error("event time {time} is beyond the horizon {horizon}")]
    BeyondHorizon { time: f64, horizon: f64 },
    #[error("horizon must be positive and finite, got {0}")]
    InvalidHorizon(f64),
    #[error("grid needs at least 2 points, got {0}")]
    GridTooSmall(usize),
    #[error("times are not ascending")]
    NotAscending,
    #[error("prop value {0} outside [-1, 1]")]
    PropOutOfRange(f64),
    #[error("influence needs t > t_i (t_i = {from}, t = {to})")]
    NotCausal { from: f64, to: f64 },
    #[error("no cascade with arrivals to fit")]
    EmptyViews,
    #[error("unknown member '{0}'")]
    UnknownMember(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HawkesParams {
    pub lambda0: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl HawkesParams {
    pub fn new(lambda0: f64, alpha: f64, beta: f64, gamma: f64) -> Result<Self, PointProcError> {
        let p = HawkesParams {
            lambda0,
            alpha,
            beta,
            gamma,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), PointProcError> {
        let all = self.to_array();
        if all.iter().any(|x| !x.is_finite()) {
            return Err(PointProcError::InvalidParams(format!(
                "non-finite value in {self:?}"
            )));
        }
        if self.lambda0 <= 0.0 || self.beta <= 0.0 {
            return Err(PointProcError::InvalidParams(format!(
                "lambda0 and beta must be > 0 (got {} and {})",
                self.lambda0, self.beta
            )));
        }
        if self.alpha < 0.0 || self.gamma < 0.0 {
            return Err(PointProcError::InvalidParams(format!(
                "alpha and gamma must be >= 0 (got {} and {})",
                self.alpha, self.gamma
            )));
        }
        Ok(())
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.lambda0, self.alpha, self.beta, self.gamma]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        HawkesParams {
            lambda0: a[0],
            alpha: a[1],
            beta: a[2],
            gamma: a[3],
        }
    }
}

impl Default for HawkesParams {
    fn default() -> Self {
        HawkesParams {
            lambda0: 0.5,
            alpha: 0.5,
            beta: 1.0,
            gamma: 0.0,
        }
    }
}

/// Observation window of one focal event.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct CascadeView {
    /// Arrivals of the focal event, ascending.
    pub same_event_times: Vec<f64>,
    /// `(time, prop)` of news from other events, ascending in time.
    pub cross_event: Vec<(f64, f64)>,
    /// End of the observation window `T`.
    pub horizon: f64,
    /// When set, the first arrival is treated as given (it sits at the
    /// window origin) and contributes no log-intensity term.
    pub anchored: bool,
}

impl CascadeView {
    pub fn new(
        same_event_times: Vec<f64>,
        mut cross_event: Vec<(f64, f64)>,
        horizon: f64,
    ) -> Result<Self, PointProcError> {
        if same_event_times.windows(2).any(|w| w[1] < w[0]) {
            return Err(PointProcError::NotAscending);
        }
        for &t in &same_event_times {
            if !t.is_finite() {
                return Err(PointProcError::NonFiniteTime(t));
            }
        }
        for &(t, p) in &cross_event {
            if !t.is_finite() {
                return Err(PointProcError::NonFiniteTime(t));
            }
            if !(-1.0..=1.0).contains(&p) {
                return Err(PointProcError::PropOutOfRange(p));
            }
        }
        cross_event.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(CascadeView {
            same_event_times,
            cross_event,
            horizon,
            anchored: false,
        })
    }

    pub fn anchored(mut self) -> Self {
        self.anchored = true;
        self
    }

    /// Number of arrivals scored by the likelihood.
    pub fn scored_arrivals(&self) -> usize {
        let n = self.same_event_times.len();
        if self.anchored {
            n.saturating_sub(1)
        } else {
            n
        }
    }

    fn check_window(&self) -> Result<(), PointProcError> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(PointProcError::InvalidHorizon(self.horizon));
        }
        for &t in &self.same_event_times {
            if t > self.horizon {
                return Err(PointProcError::BeyondHorizon {
                    time: t,
                    horizon: self.horizon,
                });
            }
            if t < 0.0 {
                return Err(PointProcError::NegativeTime(t));
            }
        }
        Ok(())
    }
}

/// Cross-event term `sum_{t_j < t} gamma e^{-beta (t - t_j)} prop_j`.
fn cross_term(p: &HawkesParams, cross: &[(f64, f64)], t: f64) -> f64 {
    cross
        .iter()
        .take_while(|(tj, _)| *tj < t)
        .map(|(tj, prop)| p.gamma * (-p.beta * (t - tj)).exp() * prop)
        .sum()
}

/// Floored intensity of the focal event at `t`, by direct summation.
pub fn intensity(params: &HawkesParams, view: &CascadeView, t: f64) -> Result<f64, PointProcError> {
    if !t.is_finite() {
        return Err(PointProcError::NonFiniteTime(t));
    }
    if t < 0.0 {
        return Err(PointProcError::NegativeTime(t));
    }
    let same: f64 = view
        .same_event_times
        .iter()
        .take_while(|ti| **ti < t)
        .map(|ti| params.alpha * (-params.beta * (t - ti)).exp())
        .sum();
    let raw = params.lambda0 + same + cross_term(params, &view.cross_event, t);
    Ok(raw.max(EPS_FLOOR))
}

/// Influence of an arrival at `t_i` on the focal event at `t > t_i`.
pub fn influence(
    params: &HawkesParams,
    t_i: f64,
    t: f64,
    view: &CascadeView,
) -> Result<f64, PointProcError> {
    if !t.is_finite() || !t_i.is_finite() {
        return Err(PointProcError::NonFiniteTime(if t.is_finite() {
            t_i
        } else {
            t
        }));
    }
    if t <= t_i {
        return Err(PointProcError::NotCausal { from: t_i, to: t });
    }
    Ok(params.alpha * (-params.beta * (t - t_i)).exp() + cross_term(params, &view.cross_event, t))
}

/// Evaluates the floored intensity at ascending query times in a single
/// pass, carrying exponentially decayed sums between queries.
struct Sweep<'a> {
    p: [f64; 4],
    same: &'a [f64],
    cross: &'a [(f64, f64)],
    next_same: usize,
    next_cross: usize,
    clock: f64,
    s_same: f64,
    s_cross: f64,
}

impl<'a> Sweep<'a> {
    fn new(p: [f64; 4], view: &'a CascadeView) -> Self {
        Sweep {
            p,
            same: &view.same_event_times,
            cross: &view.cross_event,
            next_same: 0,
            next_cross: 0,
            clock: f64::NEG_INFINITY,
            s_same: 0.0,
            s_cross: 0.0,
        }
    }

    fn decay_to(&mut self, t: f64) {
        if self.clock == f64::NEG_INFINITY {
            self.clock = t;
            return;
        }
        let dt = t - self.clock;
        if dt != 0.0 {
            let f = (-self.p[2] * dt).exp();
            self.s_same *= f;
            self.s_cross *= f;
            self.clock = t;
        }
    }

    /// Intensity at `t`; queries must be non-decreasing.
    fn at(&mut self, t: f64) -> f64 {
        loop {
            let ts = self.same.get(self.next_same).copied().filter(|x| *x < t);
            let tc = self.cross.get(self.next_cross).filter(|x| x.0 < t).copied();
            match (ts, tc) {
                (None, None) => break,
                (Some(a), Some((b, _))) if a <= b => {
                    self.decay_to(a);
                    self.s_same += 1.0;
                    self.next_same += 1;
                }
                (Some(a), None) => {
                    self.decay_to(a);
                    self.s_same += 1.0;
                    self.next_same += 1;
                }
                (_, Some((b, prop))) => {
                    self.decay_to(b);
                    self.s_cross += prop;
                    self.next_cross += 1;
                }
            }
        }
        self.decay_to(t);
        let raw = self.p[0] + self.p[1] * self.s_same + self.p[3] * self.s_cross;
        raw.max(EPS_FLOOR)
    }
}

fn view_log_likelihood(p: [f64; 4], view: &CascadeView, grid_points: usize) -> f64 {
    let skip = usize::from(view.anchored && !view.same_event_times.is_empty());
    let mut sweep = Sweep::new(p, view);
    let log_terms: f64 = view.same_event_times[skip..]
        .iter()
        .map(|&t| sweep.at(t).ln())
        .sum();

    let mut sweep = Sweep::new(p, view);
    let h = view.horizon / (grid_points - 1) as f64;
    let mut integral = 0.0;
    for k in 0..grid_points {
        let t = if k + 1 == grid_points {
            view.horizon
        } else {
            k as f64 * h
        };
        let w = if k == 0 || k + 1 == grid_points {
            0.5
        } else {
            1.0
        };
        integral += w * sweep.at(t);
    }
    log_terms - integral * h
}

/// Sum in a fixed binary-tree order, so the result does not depend on how
/// the terms were produced.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        n => {
            let mid = n / 2;
            pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
        }
    }
}

fn log_likelihood_raw(p: [f64; 4], views: &[CascadeView], grid_points: usize) -> f64 {
    let terms: Vec<f64> = views
        .par_iter()
        .map(|v| view_log_likelihood(p, v, grid_points))
        .collect();
    pairwise_sum(&terms)
}

fn check_views(views: &[CascadeView], grid_points: usize) -> Result<(), PointProcError> {
    if grid_points < 2 {
        return Err(PointProcError::GridTooSmall(grid_points));
    }
    views.iter().try_for_each(CascadeView::check_window)
}

/// Discretized log-likelihood summed over cascades.
pub fn log_likelihood(
    params: &HawkesParams,
    views: &[CascadeView],
    grid_points: usize,
) -> Result<f64, PointProcError> {
    params.validate()?;
    check_views(views, grid_points)?;
    Ok(log_likelihood_raw(params.to_array(), views, grid_points))
}

/// Parameters held at their initial value during fitting.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FixedParams {
    pub lambda0: bool,
    pub alpha: bool,
    pub beta: bool,
    pub gamma: bool,
}

impl FixedParams {
    fn mask(&self) -> [bool; 4] {
        [self.lambda0, self.alpha, self.beta, self.gamma]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub grid_points: usize,
    pub max_iterations: usize,
    /// Stop once an accepted step improves the likelihood by less than
    /// `tolerance * (1 + |LL|)`.
    pub tolerance: f64,
    /// Relative central-difference step.
    pub fd_step: f64,
    pub fixed: FixedParams,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            grid_points: 4096,
            max_iterations: 2000,
            tolerance: 1e-10,
            fd_step: 1e-6,
            fixed: FixedParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: HawkesParams,
    pub log_likelihood: f64,
    pub initial_log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn project(mut x: [f64; 4]) -> [f64; 4] {
    x[0] = x[0].max(MIN_POSITIVE);
    x[1] = x[1].max(0.0);
    x[2] = x[2].max(MIN_POSITIVE);
    x[3] = x[3].max(0.0);
    x
}

/// Maximum-likelihood fit by projected gradient ascent.
///
/// Gradients are central differences. The ascent direction is scaled per
/// coordinate by `max(|x_k|, 1e-3)^2` (a gradient step in relative units),
/// and step lengths come from a backtracking Armijo search whose trial step
/// doubles after every success.
pub fn fit(
    views: &[CascadeView],
    init: &HawkesParams,
    config: &FitConfig,
) -> Result<FitResult, PointProcError> {
    init.validate()?;
    if views.iter().all(|v| v.scored_arrivals() == 0) {
        return Err(PointProcError::EmptyViews);
    }
    check_views(views, config.grid_points)?;

    let fixed = config.fixed.mask();
    let ll = |x: [f64; 4]| log_likelihood_raw(x, views, config.grid_points);
    let mut x = init.to_array();
    let mut f = ll(x);
    let initial = f;
    let mut step = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iterations {
        iterations += 1;
        let mut grad = [0.0; 4];
        let mut dir = [0.0; 4];
        for k in 0..4 {
            if fixed[k] {
                continue;
            }
            let h = config.fd_step * x[k].abs().max(1.0);
            let mut up = x;
            let mut down = x;
            up[k] += h;
            down[k] -= h;
            grad[k] = (ll(up) - ll(down)) / (2.0 * h);
            let scale = x[k].abs().max(1e-3);
            dir[k] = grad[k] * scale * scale;
        }

        let mut accepted = None;
        let mut trial = step;
        for _ in 0..60 {
            let mut cand = x;
            for k in 0..4 {
                cand[k] += trial * dir[k];
            }
            let cand = project(cand);
            let predicted: f64 = (0..4).map(|k| grad[k] * (cand[k] - x[k])).sum();
            let fc = ll(cand);
            if fc.is_finite() && fc >= f + 1e-4 * predicted && fc >= f {
                accepted = Some((cand, fc));
                break;
            }
            trial *= 0.5;
        }
        match accepted {
            None => {
                converged = true;
                break;
            }
            Some((cand, fc)) => {
                let gain = fc - f;
                x = cand;
                f = fc;
                step = trial * 2.0;
                if gain <= config.tolerance * (1.0 + f.abs()) {
                    converged = true;
                    break;
                }
            }
        }
    }

    Ok(FitResult {
        params: HawkesParams::from_array(x),
        log_likelihood: f,
        initial_log_likelihood: initial,
        iterations,
        converged,
    })
}

/// Normalized influence of member `i` (row) on member `j` (column).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventAdjacency {
    pub event_id: String,
    pub member_ids: Vec<String>,
    /// Row-major `r x r`.
    pub matrix: Vec<f64>,
}

impl EventAdjacency {
    pub fn size(&self) -> usize {
        self.member_ids.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.size() + j]
    }
}

/// Map from raw influences to `[0, 1]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjacencyNormalization {
    /// Per-event min-max.
    #[default]
    MinMax,
    /// `2 / (1 + e^{-raw / alpha}) - 1`.
    Logistic,
}

/// Raw influence of every member on every later member of `event`.
///
/// Entry `(i, j)` is `alpha e^{-beta (t_j - t_i)} + kappa_j`, clipped at
/// zero, for `t_i < t_j` and zero otherwise; `kappa_j` is the cross-event
/// term at `t_j` from all earlier news of other events, coupled to member
/// `j` through `prop`.
pub fn raw_event_influence(
    params: &HawkesParams,
    event: &Event,
    corpus: &Corpus,
    prop: &dyn PropProvider,
) -> Result<Vec<f64>, PointProcError> {
    let idx: Vec<usize> = event
        .member_ids
        .iter()
        .map(|id| {
            corpus
                .position(id)
                .ok_or_else(|| PointProcError::UnknownMember(id.clone()))
        })
        .collect::<Result<_, _>>()?;
    let times: Vec<f64> = idx.iter().map(|&i| corpus.items[i].timestamp).collect();
    let r = idx.len();

    let kappa: Vec<f64> = if params.gamma == 0.0 {
        vec![0.0; r]
    } else {
        idx.par_iter()
            .zip(&times)
            .map(|(&target, &tj)| {
                let terms: Vec<f64> = corpus
                    .items
                    .iter()
                    .enumerate()
                    .filter(|(_, it)| it.event_id != event.id && it.timestamp < tj)
                    .map(|(k, it)| {
                        params.gamma
                            * (-params.beta * (tj - it.timestamp)).exp()
                            * prop.prop(k, target)
                    })
                    .collect();
                pairwise_sum(&terms)
            })
            .collect()
    };

    let mut raw = vec![0.0; r * r];
    for i in 0..r {
        for j in 0..r {
            if times[i] < times[j] {
                let v = params.alpha * (-params.beta * (times[j] - times[i])).exp() + kappa[j];
                raw[i * r + j] = v.max(0.0);
            }
        }
    }
    Ok(raw)
}

/// Estimates the normalized influence matrix of one event.
pub fn event_adjacency(
    params: &HawkesParams,
    event: &Event,
    corpus: &Corpus,
    prop: &dyn PropProvider,
    normalization: AdjacencyNormalization,
) -> Result<EventAdjacency, PointProcError> {
    let raw = raw_event_influence(params, event, corpus, prop)?;
    let matrix = match normalization {
        AdjacencyNormalization::MinMax => {
            let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if raw.is_empty() || hi <= lo {
                vec![0.0; raw.len()]
            } else {
                raw.iter().map(|v| (v - lo) / (hi - lo)).collect()
            }
        }
        AdjacencyNormalization::Logistic => {
            let scale = params.alpha.max(EPS_FLOOR);
            raw.iter()
                .map(|v| 2.0 / (1.0 + (-v / scale).exp()) - 1.0)
                .collect()
        }
    };
    Ok(EventAdjacency {
        event_id: event.id.clone(),
        member_ids: event.member_ids.clone(),
        matrix,
    })
}

/// One likelihood view per event with at least two members.
///
/// Times are measured from the event's first member, which anchors the view;
/// the window ends at the last member. Cross-event news is coupled to the
/// anchor through `prop`.
pub fn event_views(corpus: &Corpus, prop: &dyn PropProvider) -> Vec<CascadeView> {
    corpus
        .events
        .iter()
        .filter(|e| e.size() >= 2)
        .map(|event| {
            let anchor = corpus
                .position(&event.member_ids[0])
                .expect("validated corpus");
            let origin = corpus.items[anchor].timestamp;
            let times: Vec<f64> = event
                .member_ids
                .iter()
                .map(|id| corpus.item(id).expect("validated corpus").timestamp - origin)
                .collect();
            let horizon = *times.last().expect("at least two members");
            let cross: Vec<(f64, f64)> = corpus
                .items
                .iter()
                .enumerate()
                .filter(|(_, it)| it.event_id != event.id && it.timestamp - origin < horizon)
                .map(|(k, it)| (it.timestamp - origin, prop.prop(k, anchor)))
                .collect();
            let mut view = CascadeView::new(times, cross, horizon)
                .expect("corpus times are finite and props bounded");
            view.anchored = true;
            view
        })
        .filter(|v| v.horizon > 0.0)
        .collect()
}
