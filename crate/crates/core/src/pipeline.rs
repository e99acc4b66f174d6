//! Stage orchestration shared by the CLI and the end-to-end tests: graph
//! inference, ablations and encoder input features.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::diffcore::{ModelState, Tensor};
use crate::forgetting::{ForgettingConfig, ForgettingError, ForgettingProp};
use crate::hetgraph::{
    assemble, validate_specs, EdgeTypeSpec, GraphError, HetGraph, Layer, LayerKind,
};
use crate::pointproc::{
    event_adjacency, event_views, fit, AdjacencyNormalization, EventAdjacency, FitConfig,
    HawkesParams, PointProcError,
};
use crate::ssl::{self, AugmentationConfig, SslError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Forgetting(#[from] ForgettingError),
    #[error(transparent)]
    PointProc(#[from] PointProcError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Ssl(#[from] SslError),
    #[error("unknown ablation '{0}'")]
    UnknownAblation(String),
}

/// Settings of the graph-inference stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferConfig {
    pub forgetting: ForgettingConfig,
    pub fit: FitConfig,
    /// Starting point of the likelihood ascent.
    pub init: HawkesParams,
    pub normalization: AdjacencyNormalization,
    pub edge_types: Vec<EdgeTypeSpec>,
}

impl Default for InferConfig {
    fn default() -> Self {
        InferConfig {
            forgetting: ForgettingConfig::default(),
            fit: FitConfig::default(),
            init: HawkesParams::default(),
            normalization: AdjacencyNormalization::MinMax,
            edge_types: EdgeTypeSpec::defaults(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventStats {
    pub event_id: String,
    pub size: usize,
    /// Ordered member pairs with a normalized influence of at least 0.5.
    pub strong_edges: usize,
    pub mean_influence: f64,
    pub max_influence: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferReport {
    pub fitted_params: HawkesParams,
    /// Absent when no event had two members to fit on.
    pub log_likelihood: Option<f64>,
    pub initial_log_likelihood: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub per_event_stats: Vec<EventStats>,
    pub warnings: Vec<String>,
}

pub struct Inference {
    pub graph: HetGraph,
    pub adjacencies: Vec<EventAdjacency>,
    pub report: InferReport,
}

fn event_stats(adj: &EventAdjacency) -> EventStats {
    let r = adj.size();
    let off: Vec<f64> = (0..r)
        .flat_map(|i| (0..r).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| adj.get(i, j))
        .collect();
    EventStats {
        event_id: adj.event_id.clone(),
        size: r,
        strong_edges: off.iter().filter(|w| **w >= 0.5).count(),
        mean_influence: if off.is_empty() {
            0.0
        } else {
            off.iter().sum::<f64>() / off.len() as f64
        },
        max_influence: off.iter().copied().fold(0.0, f64::max),
    }
}

/// Fits the process on every multi-item event, estimates per-event
/// influence and assembles the heterogeneous graph.
///
/// A corpus of single-item events has nothing to fit; the initial
/// parameters are reported unchanged and the event layer stays empty.
pub fn infer_graph(
    corpus: &Corpus,
    config: &InferConfig,
    seed: u64,
) -> Result<Inference, PipelineError> {
    validate_specs(&config.edge_types, corpus)?;
    let prop = ForgettingProp::new(corpus, &config.forgetting, seed)?;
    let views = event_views(corpus, &prop);
    let mut warnings = Vec::new();
    if views.is_empty() {
        let msg = "no event has two or more items; the event influence layer is empty".to_string();
        log::warn!("{msg}");
        warnings.push(msg);
        let graph = assemble(corpus, &config.edge_types, &[])?;
        return Ok(Inference {
            graph,
            adjacencies: Vec::new(),
            report: InferReport {
                fitted_params: config.init,
                log_likelihood: None,
                initial_log_likelihood: None,
                iterations: 0,
                converged: true,
                per_event_stats: Vec::new(),
                warnings,
            },
        });
    }
    let fitted = fit(&views, &config.init, &config.fit)?;
    log::info!(
        "fit: {:?} log-likelihood {:.6} after {} iterations",
        fitted.params,
        fitted.log_likelihood,
        fitted.iterations
    );
    if !fitted.converged {
        let msg = format!(
            "fit did not converge within {} iterations",
            config.fit.max_iterations
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let adjacencies = corpus
        .events
        .iter()
        .filter(|e| e.size() >= 2)
        .map(|e| event_adjacency(&fitted.params, e, corpus, &prop, config.normalization))
        .collect::<Result<Vec<_>, _>>()?;
    let graph = assemble(corpus, &config.edge_types, &adjacencies)?;
    Ok(Inference {
        graph,
        report: InferReport {
            fitted_params: fitted.params,
            log_likelihood: Some(fitted.log_likelihood),
            initial_log_likelihood: Some(fitted.initial_log_likelihood),
            iterations: fitted.iterations,
            converged: fitted.converged,
            per_event_stats: adjacencies.iter().map(event_stats).collect(),
            warnings,
        },
        adjacencies,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Pretrain,
    Train,
}

/// Component removals, one per row of the ablation study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    /// Replace the whole graph with the identity.
    NoLatentGraph,
    /// Zero the inferred event layer, keeping attribute layers.
    NoEventInference,
    /// Merge all layers into one untyped binary layer.
    NoEdgeTypes,
    /// Drop the unimodal augmentation loss.
    NoUniAug,
    /// Drop the cross-modal loss.
    NoCrossModal,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::NoLatentGraph,
        Ablation::NoEventInference,
        Ablation::NoEdgeTypes,
        Ablation::NoUniAug,
        Ablation::NoCrossModal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::NoLatentGraph => "no-latent-graph",
            Ablation::NoEventInference => "no-event-inference",
            Ablation::NoEdgeTypes => "no-edge-types",
            Ablation::NoUniAug => "no-uni-aug",
            Ablation::NoCrossModal => "no-cross-modal",
        }
    }

    pub fn stage(self) -> Stage {
        match self {
            Ablation::NoUniAug | Ablation::NoCrossModal => Stage::Pretrain,
            _ => Stage::Train,
        }
    }

    /// Graph the classifier sees under this ablation; pretraining
    /// ablations leave it unchanged.
    pub fn apply_graph(self, graph: &HetGraph) -> HetGraph {
        let n = graph.n;
        match self {
            Ablation::NoLatentGraph => {
                let mut values = vec![0.0; n * n];
                for i in 0..n {
                    values[i * n + i] = 1.0;
                }
                HetGraph {
                    n,
                    node_ids: graph.node_ids.clone(),
                    layers: vec![Layer {
                        name: "identity".into(),
                        kind: LayerKind::Binary,
                        values,
                    }],
                }
            }
            Ablation::NoEventInference => {
                let mut g = graph.clone();
                if let Some(first) = g.layers.first_mut() {
                    first.values.iter_mut().for_each(|v| *v = 0.0);
                }
                g
            }
            Ablation::NoEdgeTypes => {
                let mut values = vec![0.0; n * n];
                for layer in &graph.layers {
                    for (v, w) in values.iter_mut().zip(&layer.values) {
                        if *w > 0.0 {
                            *v = 1.0;
                        }
                    }
                }
                HetGraph {
                    n,
                    node_ids: graph.node_ids.clone(),
                    layers: vec![Layer {
                        name: "union".into(),
                        kind: LayerKind::Binary,
                        values,
                    }],
                }
            }
            Ablation::NoUniAug | Ablation::NoCrossModal => graph.clone(),
        }
    }

    /// Pretraining config under this ablation.
    pub fn apply_ssl(self, config: &AugmentationConfig) -> AugmentationConfig {
        let mut c = config.clone();
        match self {
            Ablation::NoUniAug => c.lambda = 0.0,
            Ablation::NoCrossModal => c.lambda = 1.0,
            _ => {}
        }
        c
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| PipelineError::UnknownAblation(s.to_string()))
    }
}

/// Raw features of every item, modalities concatenated in schema order.
pub fn raw_features(corpus: &Corpus) -> Tensor {
    let n = corpus.len();
    let width: usize = corpus.schema.iter().map(|m| m.dim).sum();
    let mut data = Vec::with_capacity(n * width);
    for item in &corpus.items {
        for m in &corpus.schema {
            data.extend_from_slice(item.feature(&m.name).expect("validated corpus"));
        }
    }
    Tensor::new(vec![n, width], data).expect("shape matches data")
}

/// Encoder input: frozen pretrained projections when a pretraining state
/// is given, raw features otherwise.
pub fn encoder_features(
    corpus: &Corpus,
    pretrained: Option<&ModelState>,
) -> Result<Tensor, PipelineError> {
    match pretrained {
        Some(state) => Ok(ssl::embed(corpus, state)?),
        None => Ok(raw_features(corpus)),
    }
}

/// Hex SHA-256 of the compact JSON form of `value`. Object keys come out
/// sorted because `serde_json::Value` maps are ordered.
pub fn manifest_hash<T: Serialize>(value: &T) -> Result<String, serde_json::Error> {
    let canonical = serde_json::to_value(value)?;
    Ok(sha256_hex(&serde_json::to_vec(&canonical)?))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{AttrValue, Label, Modality, NewsItem};
    use crate::hetgraph::EdgeKind;
    use std::collections::BTreeMap;

    fn item(id: &str, event: &str, t: f64, x: f64) -> NewsItem {
        NewsItem {
            id: id.into(),
            event_id: event.into(),
            timestamp: t,
            label: Label::Real,
            features: BTreeMap::from([("title".to_string(), vec![x, 1.0 - x])]),
            attributes: BTreeMap::from([("publisher".to_string(), AttrValue::Number(1.0))]),
        }
    }

    fn specs() -> Vec<EdgeTypeSpec> {
        vec![
            EdgeTypeSpec::new("event_influence", EdgeKind::EventInfluence),
            EdgeTypeSpec::new(
                "publisher",
                EdgeKind::CategoricalMatch {
                    attribute: "publisher".into(),
                },
            ),
        ]
    }

    #[test]
    fn single_item_events_give_empty_event_layer() {
        let corpus = Corpus::new(
            vec![Modality::new("title", 2)],
            vec![
                item("a", "e1", 0.0, 0.1),
                item("b", "e2", 1.0, 0.2),
                item("c", "e3", 2.0, 0.3),
            ],
        )
        .unwrap();
        let config = InferConfig {
            edge_types: specs(),
            ..InferConfig::default()
        };
        let out = infer_graph(&corpus, &config, 1).unwrap();
        assert!(out.graph.layers[0].values.iter().all(|v| *v == 0.0));
        assert_eq!(out.graph.layers[1].edge_count(3), 3);
        assert_eq!(out.report.warnings.len(), 1);
        assert!(out.report.log_likelihood.is_none());
    }

    #[test]
    fn inference_fills_event_layer() {
        let items = vec![
            item("a", "e1", 0.0, 0.1),
            item("b", "e1", 0.4, 0.2),
            item("c", "e1", 3.0, 0.3),
            item("d", "e2", 1.0, 0.9),
            item("e", "e2", 1.2, 0.8),
        ];
        let corpus = Corpus::new(vec![Modality::new("title", 2)], items).unwrap();
        let config = InferConfig {
            edge_types: specs(),
            ..InferConfig::default()
        };
        let out = infer_graph(&corpus, &config, 1).unwrap();
        assert_eq!(out.adjacencies.len(), 2);
        assert_eq!(out.report.per_event_stats.len(), 2);
        let g = &out.graph;
        // no cross-event entries in the event layer
        assert_eq!(g.get(0, 0, 3), 0.0);
        assert!(g.get(0, 0, 1) > 0.0);
        assert_eq!(g.get(0, 0, 1), g.get(0, 1, 0));
        let again = infer_graph(&corpus, &config, 1).unwrap();
        assert_eq!(again.graph, out.graph);
    }

    #[test]
    fn ablations_reshape_graph() {
        let n = 3;
        let g = HetGraph {
            n,
            node_ids: vec!["a".into(), "b".into(), "c".into()],
            layers: vec![
                Layer {
                    name: "ev".into(),
                    kind: LayerKind::Weighted,
                    values: vec![0.0, 0.3, 0.0, 0.3, 0.0, 0.0, 0.0, 0.0, 0.0],
                },
                Layer {
                    name: "pub".into(),
                    kind: LayerKind::Binary,
                    values: vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0],
                },
            ],
        };
        let id = Ablation::NoLatentGraph.apply_graph(&g);
        assert_eq!(id.layers.len(), 1);
        assert_eq!(
            id.layers[0].values,
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]
        );
        let z = Ablation::NoEventInference.apply_graph(&g);
        assert!(z.layers[0].values.iter().all(|v| *v == 0.0));
        assert_eq!(z.layers[1], g.layers[1]);
        let u = Ablation::NoEdgeTypes.apply_graph(&g);
        assert_eq!(u.layers.len(), 1);
        assert_eq!(
            u.layers[0].values,
            vec![0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0]
        );
        assert_eq!(Ablation::NoUniAug.apply_graph(&g), g);

        let c = AugmentationConfig::default();
        assert_eq!(Ablation::NoUniAug.apply_ssl(&c).lambda, 0.0);
        assert_eq!(Ablation::NoCrossModal.apply_ssl(&c).lambda, 1.0);
        for a in Ablation::ALL {
            assert_eq!(a.name().parse::<Ablation>().unwrap(), a);
        }
        assert!("no-such".parse::<Ablation>().is_err());
    }

    #[test]
    fn manifest_hash_ignores_key_order() {
        let a: serde_json::Value = serde_json::from_str(r#"{"x": 1, "y": [1, 2]}"#).unwrap();
        let b: serde_json::Value = serde_json::from_str(r#"{"y": [1, 2], "x": 1}"#).unwrap();
        assert_eq!(manifest_hash(&a).unwrap(), manifest_hash(&b).unwrap());
        assert_eq!(manifest_hash(&a).unwrap().len(), 64);
    }
}
