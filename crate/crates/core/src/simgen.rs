//! Synthetic worlds with a known latent network: Hawkes cascades by Ogata
//! thinning, class-conditional features and label-correlated attributes.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{save_corpus, AttrValue, Corpus, CorpusError, Label, Modality, NewsItem};
use crate::hetgraph::HetGraph;
use crate::pointproc::{EventAdjacency, HawkesParams};
use crate::rng::{self, StreamRng};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid world config: {0}")]
    InvalidConfig(String),
    #[error("unstable parameters: alpha {alpha} >= beta {beta}")]
    Unstable { alpha: f64, beta: f64 },
    #[error("node sets differ: {0}")]
    NodeMismatch(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn check_kernel(params: &HawkesParams) -> Result<(), SimError> {
    let HawkesParams {
        lambda0,
        alpha,
        beta,
        ..
    } = *params;
    if !(lambda0 >= 0.0 && alpha >= 0.0 && beta > 0.0)
        || ![lambda0, alpha, beta].iter().all(|v| v.is_finite())
    {
        return Err(SimError::InvalidConfig(format!(
            "need lambda0 >= 0, alpha >= 0, beta > 0 (got {lambda0}, {alpha}, {beta})"
        )));
    }
    if alpha >= beta {
        return Err(SimError::Unstable { alpha, beta });
    }
    Ok(())
}

/// Exponential-kernel excitation `S(t) = sum_i e^{-beta (t - t_i)}`,
/// advanced in time by multiplication.
struct Excitation {
    beta: f64,
    t: f64,
    s: f64,
}

impl Excitation {
    fn advance(&mut self, to: f64) {
        self.s *= (-self.beta * (to - self.t)).exp();
        self.t = to;
    }
}

/// Ogata thinning of a self-exciting process on `[0, horizon]` with no
/// arrivals before 0 (the cross-event term is not simulated).
pub fn simulate_cascade(
    params: &HawkesParams,
    horizon: f64,
    rng: &mut StreamRng,
) -> Result<Vec<f64>, SimError> {
    check_kernel(params)?;
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(SimError::InvalidConfig(format!(
            "horizon {horizon} must be positive"
        )));
    }
    let mut ex = Excitation {
        beta: params.beta,
        t: 0.0,
        s: 0.0,
    };
    let mut times = Vec::new();
    loop {
        // The intensity only decays between arrivals, so its current value bounds it.
        let bound = params.lambda0 + params.alpha * ex.s;
        if bound <= 0.0 {
            return Ok(times);
        }
        let w: f64 = Exp1.sample(rng);
        let t = ex.t + w / bound;
        if t > horizon {
            return Ok(times);
        }
        ex.advance(t);
        let lambda = params.lambda0 + params.alpha * ex.s;
        if rng.random::<f64>() * bound <= lambda {
            times.push(t);
            ex.s += 1.0;
        }
    }
}

/// Thinning from a forced arrival at 0 until `count` arrivals exist.
pub fn simulate_count(
    params: &HawkesParams,
    count: usize,
    rng: &mut StreamRng,
) -> Result<Vec<f64>, SimError> {
    check_kernel(params)?;
    if params.lambda0 <= 0.0 && count > 1 && params.alpha == 0.0 {
        return Err(SimError::InvalidConfig(
            "a process with no intensity cannot reach the count".into(),
        ));
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    let mut ex = Excitation {
        beta: params.beta,
        t: 0.0,
        s: 1.0,
    };
    let mut times = vec![0.0];
    while times.len() < count {
        let bound = params.lambda0 + params.alpha * ex.s;
        if bound < 1e-300 {
            return Err(SimError::InvalidConfig(
                "cascade died out before reaching its count".into(),
            ));
        }
        let w: f64 = Exp1.sample(rng);
        let t = ex.t + w / bound;
        ex.advance(t);
        let lambda = params.lambda0 + params.alpha * ex.s;
        if rng.random::<f64>() * bound <= lambda {
            times.push(t);
            ex.s += 1.0;
        }
    }
    Ok(times)
}

/// Compensator increments `Lambda(t_{i-1}, t_i)` of a cascade started at
/// 0 without prior arrivals; i.i.d. Exp(1) under the true parameters.
pub fn compensator_increments(params: &HawkesParams, times: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(times.len());
    let mut prev = 0.0;
    // sum_{j < i} e^{-beta (prev - t_j)}
    let mut s = 0.0;
    for &t in times {
        let decay = (-params.beta * (t - prev)).exp();
        out.push(params.lambda0 * (t - prev) + params.alpha / params.beta * s * (1.0 - decay));
        s = s * decay + 1.0;
        prev = t;
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModalitySpec {
    pub name: String,
    pub dim: usize,
    /// Distance between the class means.
    pub separation: f64,
    /// Per-coordinate standard deviation within a class.
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeSpec {
    pub name: String,
    pub categories: usize,
    /// Probability of drawing from the label's own categories (even ones
    /// for fake, odd ones for real) instead of uniformly from all.
    pub correlation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub seed: u64,
    pub n_events: usize,
    pub n_news: usize,
    pub hawkes: HawkesParams,
    /// Probability of the fake label.
    pub class_balance: f64,
    /// Probability that a member takes its event's dominant label.
    pub event_label_coherence: f64,
    /// Fraction of items that keep their label in the corpus.
    pub labeled_fraction: f64,
    /// Events start uniformly in `[0, event_spread]`.
    pub event_spread: f64,
    pub modalities: Vec<ModalitySpec>,
    pub attributes: Vec<AttributeSpec>,
    /// Simulates all events jointly with cross-event excitation
    /// `gamma * coupling`; no truth edges are then recorded.
    pub coupled: bool,
    pub coupling: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            seed: 7,
            n_events: 20,
            n_news: 500,
            hawkes: HawkesParams {
                lambda0: 0.2,
                alpha: 0.8,
                beta: 1.2,
                gamma: 0.0,
            },
            class_balance: 0.5,
            event_label_coherence: 0.9,
            labeled_fraction: 1.0,
            event_spread: 50.0,
            modalities: vec![
                ModalitySpec {
                    name: "title".into(),
                    dim: 16,
                    separation: 1.5,
                    std: 1.0,
                },
                ModalitySpec {
                    name: "video".into(),
                    dim: 24,
                    separation: 1.5,
                    std: 1.0,
                },
            ],
            attributes: vec![
                AttributeSpec {
                    name: "publisher".into(),
                    categories: 12,
                    correlation: 0.8,
                },
                AttributeSpec {
                    name: "author_verified".into(),
                    categories: 2,
                    correlation: 0.6,
                },
            ],
            coupled: false,
            coupling: 0.5,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if self.n_events == 0 || self.n_news < self.n_events {
            return bad("need at least one event and one news item per event".into());
        }
        check_kernel(&self.hawkes)?;
        if self.hawkes.lambda0 <= 0.0 {
            return bad("lambda0 must be positive".into());
        }
        for (name, p) in [
            ("class_balance", self.class_balance),
            ("event_label_coherence", self.event_label_coherence),
            ("labeled_fraction", self.labeled_fraction),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must be in [0, 1]"));
            }
        }
        if !(self.event_spread >= 0.0 && self.event_spread.is_finite()) {
            return bad("event_spread must be non-negative".into());
        }
        if self.modalities.is_empty() {
            return bad("at least one modality is needed".into());
        }
        let mut names = BTreeSet::new();
        for m in &self.modalities {
            if m.dim == 0
                || m.std.is_nan()
                || m.std < 0.0
                || !m.separation.is_finite()
                || !names.insert(&m.name)
            {
                return bad(format!(
                    "modality '{}' needs a unique name, dim > 0 and std >= 0",
                    m.name
                ));
            }
        }
        for a in &self.attributes {
            if a.categories < 2 || !(0.0..=1.0).contains(&a.correlation) {
                return bad(format!(
                    "attribute '{}' needs >= 2 categories and correlation in [0, 1]",
                    a.name
                ));
            }
        }
        if self.coupled && !(self.coupling >= 0.0 && self.hawkes.gamma >= 0.0) {
            return bad("coupling and gamma must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthEvent {
    pub id: String,
    pub member_ids: Vec<String>,
    /// Member index pairs `[i, j]` with `t_i < t_j` and gap below the cutoff.
    pub edges: Vec<[usize; 2]>,
    pub times: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub params: HawkesParams,
    pub seed: u64,
    /// Edges join same-event pairs closer than this in time.
    pub edge_gap: f64,
    /// False for coupled worlds, whose edges are not recorded.
    pub scored: bool,
    pub events: Vec<TruthEvent>,
    pub labels: BTreeMap<String, Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest_hash: Option<String>,
}

fn unit_direction(rng: &mut StreamRng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Splits `total` as evenly as possible, the remainder going to randomly
/// chosen events.
fn event_sizes(total: usize, events: usize, rng: &mut StreamRng) -> Vec<usize> {
    let mut sizes = vec![total / events; events];
    for k in sample(rng, events, total % events) {
        sizes[k] += 1;
    }
    sizes
}

/// Joint simulation: each event starts with an arrival at its offset and
/// stops at its size; every arrival excites its own event by `alpha` and
/// the others by `gamma * coupling`.
fn simulate_coupled(
    params: &HawkesParams,
    coupling: f64,
    starts: &[f64],
    sizes: &[usize],
    rng: &mut StreamRng,
) -> Vec<Vec<f64>> {
    let k = starts.len();
    let cross = params.gamma * coupling;
    let mut times: Vec<Vec<f64>> = vec![Vec::new(); k];
    // excitation from own arrivals and from everyone's arrivals
    let mut own = vec![0.0; k];
    let mut all = 0.0;
    let mut t = 0.0;
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| starts[a].total_cmp(&starts[b]).then(a.cmp(&b)));
    let mut next_start = 0;
    let active =
        |times: &Vec<Vec<f64>>, e: usize| !times[e].is_empty() && times[e].len() < sizes[e];
    loop {
        let rates: Vec<f64> = (0..k)
            .map(|e| {
                if active(&times, e) {
                    params.lambda0 + params.alpha * own[e] + cross * (all - own[e])
                } else {
                    0.0
                }
            })
            .collect();
        let bound: f64 = rates.iter().sum();
        let start_at = order.get(next_start).map(|&e| starts[e]);
        let w: f64 = Exp1.sample(rng);
        let candidate = if bound > 0.0 {
            t + w / bound
        } else {
            f64::INFINITY
        };
        if let Some(s) = start_at {
            if s <= candidate {
                let decay = (-params.beta * (s - t)).exp();
                own.iter_mut().for_each(|x| *x *= decay);
                all *= decay;
                t = s;
                let e = order[next_start];
                next_start += 1;
                times[e].push(t);
                own[e] += 1.0;
                all += 1.0;
                continue;
            }
        }
        if !candidate.is_finite() {
            return times;
        }
        let decay = (-params.beta * (candidate - t)).exp();
        own.iter_mut().for_each(|x| *x *= decay);
        all *= decay;
        t = candidate;
        let now: Vec<f64> = (0..k)
            .map(|e| {
                if active(&times, e) {
                    params.lambda0 + params.alpha * own[e] + cross * (all - own[e])
                } else {
                    0.0
                }
            })
            .collect();
        let u = rng.random::<f64>() * bound;
        let mut acc = 0.0;
        for e in 0..k {
            acc += now[e];
            if u <= acc && now[e] > 0.0 {
                times[e].push(t);
                own[e] += 1.0;
                all += 1.0;
                break;
            }
        }
    }
}

pub struct World {
    pub corpus: Corpus,
    pub truth: GroundTruth,
}

/// Builds a corpus and its ground truth from named streams of `config.seed`.
pub fn generate_world(config: &WorldConfig) -> Result<World, SimError> {
    config.validate()?;
    let seed = config.seed;
    let sizes = event_sizes(
        config.n_news,
        config.n_events,
        &mut rng::stream(seed, "world/sizes"),
    );
    let mut start_rng = rng::stream(seed, "world/starts");
    let starts: Vec<f64> = (0..config.n_events)
        .map(|_| start_rng.random::<f64>() * config.event_spread)
        .collect();

    let mut cascades: Vec<Vec<f64>> = if config.coupled {
        simulate_coupled(
            &config.hawkes,
            config.coupling,
            &starts,
            &sizes,
            &mut rng::stream(seed, "world/coupled"),
        )
    } else {
        sizes
            .iter()
            .enumerate()
            .map(|(e, &k)| {
                let mut r = rng::stream(seed, &format!("world/cascade/{e}"));
                simulate_count(&config.hawkes, k, &mut r)
                    .map(|ts| ts.into_iter().map(|t| t + starts[e]).collect())
            })
            .collect::<Result<_, _>>()?
    };
    let t_min = cascades
        .iter()
        .flatten()
        .copied()
        .fold(f64::INFINITY, f64::min);
    for c in &mut cascades {
        c.iter_mut().for_each(|t| *t -= t_min);
    }

    let mut label_rng = rng::stream(seed, "world/labels");
    let directions: Vec<Vec<f64>> = config
        .modalities
        .iter()
        .map(|m| {
            unit_direction(
                &mut rng::stream(seed, &format!("world/direction/{}", m.name)),
                m.dim,
            )
        })
        .collect();
    let mut feat_rng = rng::stream(seed, "world/features");
    let mut attr_rng = rng::stream(seed, "world/attributes");
    let mut keep_rng = rng::stream(seed, "world/labeled");

    let mut items = Vec::with_capacity(config.n_news);
    let mut truth_events = Vec::with_capacity(config.n_events);
    let mut labels = BTreeMap::new();
    let edge_gap = 3.0 / config.hawkes.beta;
    for (e, times) in cascades.iter().enumerate() {
        let dominant = if label_rng.random::<f64>() < config.class_balance {
            Label::Fake
        } else {
            Label::Real
        };
        let mut member_ids = Vec::with_capacity(times.len());
        for &t in times {
            let id = format!("n{:05}", items.len());
            let coherent = label_rng.random::<f64>() < config.event_label_coherence;
            let own = if label_rng.random::<f64>() < config.class_balance {
                Label::Fake
            } else {
                Label::Real
            };
            let label = if coherent { dominant } else { own };
            let sign = if label == Label::Fake { 0.5 } else { -0.5 };
            let features = config
                .modalities
                .iter()
                .zip(&directions)
                .map(|(m, u)| {
                    let v = u
                        .iter()
                        .map(|ud| {
                            let z: f64 = StandardNormal.sample(&mut feat_rng);
                            sign * m.separation * ud + m.std * z
                        })
                        .collect();
                    (m.name.clone(), v)
                })
                .collect();
            let attributes = config
                .attributes
                .iter()
                .map(|a| {
                    let k = if attr_rng.random::<f64>() < a.correlation {
                        let parity = if label == Label::Fake { 0 } else { 1 };
                        let own_count = (a.categories + 1 - parity) / 2;
                        2 * attr_rng.random_range(0..own_count) + parity
                    } else {
                        attr_rng.random_range(0..a.categories)
                    };
                    (a.name.clone(), AttrValue::Number(k as f64))
                })
                .collect();
            let kept = keep_rng.random::<f64>() < config.labeled_fraction;
            labels.insert(id.clone(), label);
            items.push(NewsItem {
                id: id.clone(),
                event_id: format!("ev{e:03}"),
                timestamp: t,
                label: if kept { label } else { Label::Unlabeled },
                features,
                attributes,
            });
            member_ids.push(id);
        }
        let mut edges = Vec::new();
        if !config.coupled {
            for i in 0..times.len() {
                for j in 0..times.len() {
                    if times[i] < times[j] && times[j] - times[i] < edge_gap {
                        edges.push([i, j]);
                    }
                }
            }
        }
        truth_events.push(TruthEvent {
            id: format!("ev{e:03}"),
            member_ids,
            edges,
            times: times.clone(),
        });
    }
    let schema = config
        .modalities
        .iter()
        .map(|m| Modality::new(m.name.clone(), m.dim))
        .collect();
    let corpus = Corpus::new(schema, items)?;
    Ok(World {
        corpus,
        truth: GroundTruth {
            params: config.hawkes,
            seed,
            edge_gap,
            scored: !config.coupled,
            events: truth_events,
            labels,
            manifest_hash: None,
        },
    })
}

pub fn write_truth<W: Write>(truth: &GroundTruth, mut w: W) -> Result<(), SimError> {
    serde_json::to_writer_pretty(&mut w, truth)?;
    writeln!(w)?;
    Ok(())
}

/// Writes `corpus.jsonl` and `truth.json` into `dir`.
pub fn save_world(world: &World, dir: &Path) -> Result<(), SimError> {
    std::fs::create_dir_all(dir)?;
    save_corpus(&world.corpus, dir.join("corpus.jsonl"))?;
    let f = std::fs::File::create(dir.join("truth.json"))?;
    write_truth(&world.truth, std::io::BufWriter::new(f))
}

pub fn load_truth(path: &Path) -> Result<GroundTruth, SimError> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Recovery {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Recovery {
    fn from_sets<T: Ord>(predicted: &BTreeSet<T>, truth: &BTreeSet<T>) -> Recovery {
        let tp = predicted.intersection(truth).count();
        let fp = predicted.len() - tp;
        let fn_ = truth.len() - tp;
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Recovery {
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
            precision,
            recall,
            f1,
        }
    }
}

fn scored(truth: &GroundTruth) -> Result<(), SimError> {
    if truth.scored {
        Ok(())
    } else {
        Err(SimError::InvalidConfig(
            "coupled worlds have no scored truth".into(),
        ))
    }
}

/// Directed recovery: inferred entries `>= threshold` against the true
/// `(source, target)` member pairs of every event.
pub fn score_event_adjacencies(
    inferred: &[EventAdjacency],
    truth: &GroundTruth,
    threshold: f64,
) -> Result<Recovery, SimError> {
    scored(truth)?;
    let by_id: BTreeMap<&str, &EventAdjacency> =
        inferred.iter().map(|a| (a.event_id.as_str(), a)).collect();
    let mut predicted = BTreeSet::new();
    let mut actual = BTreeSet::new();
    for ev in &truth.events {
        for &[i, j] in &ev.edges {
            actual.insert((ev.member_ids[i].clone(), ev.member_ids[j].clone()));
        }
        let Some(adj) = by_id.get(ev.id.as_str()) else {
            if ev.member_ids.len() >= 2 {
                return Err(SimError::NodeMismatch(format!(
                    "no inferred adjacency for '{}'",
                    ev.id
                )));
            }
            continue;
        };
        if adj.member_ids != ev.member_ids {
            return Err(SimError::NodeMismatch(format!(
                "members of '{}' differ",
                ev.id
            )));
        }
        let r = adj.size();
        for i in 0..r {
            for j in 0..r {
                if i != j && adj.get(i, j) >= threshold {
                    predicted.insert((adj.member_ids[i].clone(), adj.member_ids[j].clone()));
                }
            }
        }
    }
    Ok(Recovery::from_sets(&predicted, &actual))
}

/// Undirected recovery on the graph's event layer: pairs `{u, v}` with an
/// entry `>= threshold` against unordered true pairs.
pub fn score_graph(
    graph: &HetGraph,
    truth: &GroundTruth,
    threshold: f64,
) -> Result<Recovery, SimError> {
    scored(truth)?;
    let node_set: BTreeSet<&str> = graph.node_ids.iter().map(String::as_str).collect();
    let truth_nodes: BTreeSet<&str> = truth.labels.keys().map(String::as_str).collect();
    if node_set != truth_nodes {
        return Err(SimError::NodeMismatch(
            "graph nodes differ from ground truth".into(),
        ));
    }
    let layer = graph
        .layers
        .first()
        .ok_or_else(|| SimError::NodeMismatch("graph has no layers".into()))?;
    let n = graph.n;
    let mut predicted = BTreeSet::new();
    for i in 0..n {
        for j in i + 1..n {
            if layer.values[i * n + j] >= threshold || layer.values[j * n + i] >= threshold {
                predicted.insert(pair(&graph.node_ids[i], &graph.node_ids[j]));
            }
        }
    }
    let mut actual = BTreeSet::new();
    for ev in &truth.events {
        for &[i, j] in &ev.edges {
            actual.insert(pair(&ev.member_ids[i], &ev.member_ids[j]));
        }
    }
    Ok(Recovery::from_sets(&predicted, &actual))
}

fn pair(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::validate;
    use approx::assert_abs_diff_eq;

    fn params(l: f64, a: f64, b: f64) -> HawkesParams {
        HawkesParams {
            lambda0: l,
            alpha: a,
            beta: b,
            gamma: 0.0,
        }
    }

    #[test]
    fn cascade_basics() {
        let p = params(0.5, 0.4, 1.0);
        let a = simulate_cascade(&p, 30.0, &mut rng::stream(1, "c")).unwrap();
        let b = simulate_cascade(&p, 30.0, &mut rng::stream(1, "c")).unwrap();
        assert_eq!(a, b);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert!(a.iter().all(|t| *t > 0.0 && *t <= 30.0));
        assert!(
            simulate_cascade(&params(0.0, 0.5, 1.0), 30.0, &mut rng::stream(1, "c"))
                .unwrap()
                .is_empty()
        );
        assert!(matches!(
            simulate_cascade(&params(0.5, 1.0, 1.0), 30.0, &mut rng::stream(1, "c")),
            Err(SimError::Unstable { .. })
        ));
    }

    #[test]
    fn poisson_counts_match_rate() {
        let p = params(0.7, 0.0, 1.0);
        let horizon = 10.0;
        let runs = 2000;
        let mut r = rng::stream(2, "poisson");
        let counts: Vec<f64> = (0..runs)
            .map(|_| simulate_cascade(&p, horizon, &mut r).unwrap().len() as f64)
            .collect();
        let mean = counts.iter().sum::<f64>() / runs as f64;
        let se = (p.lambda0 * horizon / runs as f64).sqrt();
        assert!((mean - p.lambda0 * horizon).abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn compensator_increments_are_unit_exponential() {
        let p = params(0.3, 0.9, 1.5);
        let mut r = rng::stream(3, "comp");
        let mut inc = Vec::new();
        while inc.len() < 20_000 {
            let ts = simulate_cascade(&p, 200.0, &mut r).unwrap();
            inc.extend(compensator_increments(&p, &ts));
        }
        let n = inc.len() as f64;
        let mean = inc.iter().sum::<f64>() / n;
        assert!((mean - 1.0).abs() < 3.0 / n.sqrt(), "mean {mean}");
        // P(X > 1) = e^-1
        let tail = inc.iter().filter(|x| **x > 1.0).count() as f64 / n;
        let e1 = (-1.0f64).exp();
        assert!(
            (tail - e1).abs() < 3.0 * (e1 * (1.0 - e1) / n).sqrt(),
            "tail {tail}"
        );
    }

    #[test]
    fn count_stopped_cascade() {
        let p = params(0.2, 0.8, 1.2);
        let ts = simulate_count(&p, 25, &mut rng::stream(4, "k")).unwrap();
        assert_eq!(ts.len(), 25);
        assert_eq!(ts[0], 0.0);
        assert!(ts.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn label_balance_within_binomial_band() {
        let cfg = WorldConfig {
            event_label_coherence: 0.0,
            ..WorldConfig::default()
        };
        let w = generate_world(&cfg).unwrap();
        let fakes = w
            .corpus
            .items
            .iter()
            .filter(|it| it.label == Label::Fake)
            .count() as f64;
        assert!(
            (fakes - 250.0).abs() <= 3.0 * (500.0f64 * 0.25).sqrt(),
            "{fakes}"
        );
    }

    #[test]
    fn world_is_valid_and_deterministic() {
        let cfg = WorldConfig {
            n_news: 120,
            n_events: 7,
            ..WorldConfig::default()
        };
        let a = generate_world(&cfg).unwrap();
        assert!(validate(&a.corpus).is_empty());
        assert_eq!(a.corpus.len(), 120);
        assert_eq!(a.corpus.events.len(), 7);
        let sizes: Vec<usize> = a.corpus.events.iter().map(|e| e.size()).collect();
        assert!(sizes.iter().all(|&s| s == 17 || s == 18));
        assert_eq!(
            a.corpus
                .items
                .iter()
                .map(|i| i.timestamp)
                .fold(f64::INFINITY, f64::min),
            0.0
        );

        let dir = tempfile::tempdir().unwrap();
        save_world(&a, &dir.path().join("a")).unwrap();
        save_world(&generate_world(&cfg).unwrap(), &dir.path().join("b")).unwrap();
        for f in ["corpus.jsonl", "truth.json"] {
            assert_eq!(
                std::fs::read(dir.path().join("a").join(f)).unwrap(),
                std::fs::read(dir.path().join("b").join(f)).unwrap()
            );
        }
        let back = load_truth(&dir.path().join("a/truth.json")).unwrap();
        assert_eq!(back, a.truth);
    }

    #[test]
    fn zero_std_gives_identical_class_features() {
        let mut cfg = WorldConfig {
            n_news: 40,
            n_events: 4,
            ..WorldConfig::default()
        };
        for m in &mut cfg.modalities {
            m.std = 0.0;
        }
        let w = generate_world(&cfg).unwrap();
        for label in [Label::Fake, Label::Real] {
            let rows: Vec<&Vec<f64>> = w
                .corpus
                .items
                .iter()
                .filter(|it| it.label == label)
                .map(|it| &it.features["title"])
                .collect();
            assert!(rows.windows(2).all(|p| p[0] == p[1]));
        }
    }

    #[test]
    fn coupled_world_has_no_scored_truth() {
        let cfg = WorldConfig {
            n_news: 60,
            n_events: 3,
            coupled: true,
            hawkes: HawkesParams {
                gamma: 0.3,
                ..WorldConfig::default().hawkes
            },
            ..WorldConfig::default()
        };
        let w = generate_world(&cfg).unwrap();
        assert!(validate(&w.corpus).is_empty());
        assert_eq!(w.corpus.len(), 60);
        assert!(!w.truth.scored);
        assert!(score_event_adjacencies(&[], &w.truth, 0.5).is_err());
    }

    fn four_node_truth() -> GroundTruth {
        GroundTruth {
            params: params(0.1, 0.5, 1.0),
            seed: 0,
            edge_gap: 3.0,
            scored: true,
            events: vec![TruthEvent {
                id: "e".into(),
                member_ids: vec!["a".into(), "b".into(), "c".into(), "d".into()],
                edges: vec![[0, 1], [1, 2], [2, 3]],
                times: vec![0.0, 1.0, 2.0, 3.0],
            }],
            labels: ["a", "b", "c", "d"]
                .iter()
                .map(|s| (s.to_string(), Label::Real))
                .collect(),
            manifest_hash: None,
        }
    }

    #[test]
    fn four_node_recovery_fixture() {
        let truth = four_node_truth();
        let mut m = vec![0.0; 16];
        // true positives (0,1), (1,2); false positive (0,3); missed (2,3)
        m[1] = 0.9;
        m[4 + 2] = 0.6;
        m[3] = 0.7;
        m[2 * 4 + 3] = 0.2;
        let adj = EventAdjacency {
            event_id: "e".into(),
            member_ids: truth.events[0].member_ids.clone(),
            matrix: m,
        };
        let r = score_event_adjacencies(std::slice::from_ref(&adj), &truth, 0.5).unwrap();
        assert_eq!(
            (r.true_positives, r.false_positives, r.false_negatives),
            (2, 1, 1)
        );
        assert_abs_diff_eq!(r.precision, 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.recall, 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.f1, 2.0 / 3.0, epsilon = 1e-15);

        let mut exact = adj.clone();
        exact.matrix = vec![0.0; 16];
        for [i, j] in &truth.events[0].edges {
            exact.matrix[i * 4 + j] = 1.0;
        }
        let r = score_event_adjacencies(&[exact], &truth, 0.5).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
        let mut zero = adj;
        zero.matrix = vec![0.0; 16];
        assert_eq!(
            score_event_adjacencies(&[zero], &truth, 0.5)
                .unwrap()
                .recall,
            0.0
        );
    }

    #[test]
    fn graph_recovery_is_undirected() {
        use crate::hetgraph::{Layer, LayerKind};
        let truth = four_node_truth();
        let mut values = vec![0.0; 16];
        for (i, j) in [(0, 1), (1, 2), (2, 3)] {
            values[i * 4 + j] = 0.8;
            values[j * 4 + i] = 0.8;
        }
        let g = HetGraph {
            n: 4,
            node_ids: vec!["a".into(), "b".into(), "c".into(), "d".into()],
            layers: vec![Layer {
                name: "ev".into(),
                kind: LayerKind::Weighted,
                values,
            }],
        };
        let r = score_graph(&g, &truth, 0.5).unwrap();
        assert_eq!(r.f1, 1.0);
    }
}
