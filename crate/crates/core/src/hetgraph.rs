//! Attribute heterogeneous news graph: one adjacency layer per edge type,
//! with the inferred event-influence matrices embedded in the first layer.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{AttrValue, Corpus};
use crate::forgetting::{similarity, ForgettingError, SimilarityConfig};
use crate::pointproc::EventAdjacency;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("edge spec '{name}': {message}")]
    InvalidSpec { name: String, message: String },
    #[error("edge specs need exactly one event_influence type, in first position")]
    EventInfluencePlacement,
    #[error("unknown attribute '{0}'")]
    UnknownAttribute(String),
    #[error("unknown modality '{0}'")]
    UnknownModality(String),
    #[error("no event adjacency for event '{0}'")]
    MissingEventAdjacency(String),
    #[error("event adjacency '{event}' references unknown item '{item}'")]
    UnknownMember { event: String, item: String },
    #[error("event adjacency '{0}' has a matrix of the wrong size")]
    AdjacencySize(String),
    #[error(transparent)]
    Similarity(#[from] ForgettingError),
    #[error("graph file line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn default_rho() -> f64 {
    0.85
}

/// How one edge type is derived.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EdgeKind {
    EventInfluence,
    CategoricalMatch {
        attribute: String,
    },
    SimilarityThreshold {
        modality: String,
        #[serde(default = "default_rho")]
        rho: f64,
        #[serde(default)]
        similarity: SimilarityConfig,
    },
}

/// A named edge type. Its position in the spec list is its type index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeTypeSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: EdgeKind,
}

impl EdgeTypeSpec {
    pub fn new(name: impl Into<String>, kind: EdgeKind) -> Self {
        EdgeTypeSpec {
            name: name.into(),
            kind,
        }
    }

    /// Event influence, verified author match, publisher match and title
    /// similarity at `rho = 0.85`.
    pub fn defaults() -> Vec<EdgeTypeSpec> {
        vec![
            EdgeTypeSpec::new("event_influence", EdgeKind::EventInfluence),
            EdgeTypeSpec::new(
                "author_verified",
                EdgeKind::CategoricalMatch {
                    attribute: "author_verified".into(),
                },
            ),
            EdgeTypeSpec::new(
                "publisher",
                EdgeKind::CategoricalMatch {
                    attribute: "publisher".into(),
                },
            ),
            EdgeTypeSpec::new(
                "title_similarity",
                EdgeKind::SimilarityThreshold {
                    modality: "title".into(),
                    rho: 0.85,
                    similarity: SimilarityConfig::default(),
                },
            ),
        ]
    }
}

/// Checks the spec list against a corpus.
pub fn validate_specs(specs: &[EdgeTypeSpec], corpus: &Corpus) -> Result<(), GraphError> {
    let event_positions: Vec<usize> = specs
        .iter()
        .enumerate()
        .filter(|(_, s)| s.kind == EdgeKind::EventInfluence)
        .map(|(i, _)| i)
        .collect();
    if event_positions != [0] {
        return Err(GraphError::EventInfluencePlacement);
    }
    let mut seen = std::collections::BTreeSet::new();
    for spec in specs {
        let invalid = |message: String| GraphError::InvalidSpec {
            name: spec.name.clone(),
            message,
        };
        if spec.name.is_empty() || spec.name.contains(['\n', '\t']) {
            return Err(invalid(
                "names must be non-empty without tabs or newlines".into(),
            ));
        }
        if !seen.insert(spec.name.as_str()) {
            return Err(invalid("duplicate name".into()));
        }
        match &spec.kind {
            EdgeKind::EventInfluence => {}
            EdgeKind::CategoricalMatch { attribute } => {
                if !corpus.has_attribute(attribute) {
                    return Err(GraphError::UnknownAttribute(attribute.clone()));
                }
            }
            EdgeKind::SimilarityThreshold {
                modality,
                rho,
                similarity,
            } => {
                if !(0.0..=1.0).contains(rho) {
                    return Err(invalid(format!("rho {rho} outside [0, 1]")));
                }
                if corpus.modality(modality).is_none() {
                    return Err(GraphError::UnknownModality(modality.clone()));
                }
                similarity.validate()?;
            }
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    /// Real-valued in `[0, 1]`, nonzero only within events.
    Weighted,
    /// Symmetric `{0, 1}` with zero diagonal.
    Binary,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub name: String,
    pub kind: LayerKind,
    /// Row-major `n x n`.
    pub values: Vec<f64>,
}

impl Layer {
    pub fn edge_count(&self, n: usize) -> usize {
        match self.kind {
            LayerKind::Weighted => self.values.iter().filter(|v| **v != 0.0).count(),
            LayerKind::Binary => (0..n)
                .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                .filter(|&(i, j)| self.values[i * n + j] != 0.0)
                .count(),
        }
    }
}

/// Nodes are corpus items in id order.
#[derive(Clone, Debug, PartialEq)]
pub struct HetGraph {
    pub n: usize,
    pub node_ids: Vec<String>,
    pub layers: Vec<Layer>,
}

impl HetGraph {
    pub fn layer(&self, index: usize) -> &Layer {
        &self.layers[index]
    }

    pub fn get(&self, layer: usize, i: usize, j: usize) -> f64 {
        self.layers[layer].values[i * self.n + j]
    }
}

/// `1` where `sims[i][j] >= rho` for `i != j`. `sims` must be symmetric.
pub fn threshold_matrix(sims: &[f64], n: usize, rho: f64) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j && sims[i * n + j] >= rho {
                out[i * n + j] = 1.0;
            }
        }
    }
    out
}

/// Pairwise similarity of raw features, thresholded at `rho`.
pub fn build_similarity_layer(
    corpus: &Corpus,
    modality: &str,
    rho: f64,
    config: &SimilarityConfig,
) -> Result<Vec<f64>, GraphError> {
    if corpus.modality(modality).is_none() {
        return Err(GraphError::UnknownModality(modality.to_string()));
    }
    config.validate()?;
    let n = corpus.len();
    let feats: Vec<&[f64]> = corpus
        .items
        .iter()
        .map(|it| it.feature(modality).expect("validated corpus"))
        .collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        Ok(0.0)
                    } else {
                        // Compute with the lower index first so both halves agree bit-for-bit.
                        let (a, b) = if i < j { (i, j) } else { (j, i) };
                        similarity(feats[a], feats[b], config)
                    }
                })
                .collect::<Result<Vec<f64>, ForgettingError>>()
        })
        .collect::<Result<_, _>>()?;
    Ok(threshold_matrix(&rows.concat(), n, rho))
}

/// `1` for distinct items with equal, present attribute values.
pub fn build_categorical_layer(corpus: &Corpus, attribute: &str) -> Result<Vec<f64>, GraphError> {
    if !corpus.has_attribute(attribute) {
        return Err(GraphError::UnknownAttribute(attribute.to_string()));
    }
    let values: Vec<Option<&AttrValue>> = corpus
        .items
        .iter()
        .map(|it| it.attributes.get(attribute))
        .collect();
    let n = values.len();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        let Some(vi) = values[i] else { continue };
        for j in i + 1..n {
            if values[j] == Some(vi) {
                out[i * n + j] = 1.0;
                out[j * n + i] = 1.0;
            }
        }
    }
    Ok(out)
}

/// Scatters each event's adjacency into corpus positions, symmetrized by
/// elementwise max.
pub fn event_layer(
    corpus: &Corpus,
    adjacencies: &[EventAdjacency],
) -> Result<Vec<f64>, GraphError> {
    let n = corpus.len();
    let by_event: BTreeMap<&str, &EventAdjacency> = adjacencies
        .iter()
        .map(|a| (a.event_id.as_str(), a))
        .collect();
    let mut out = vec![0.0; n * n];
    for event in &corpus.events {
        if event.size() < 2 {
            continue;
        }
        let adj = by_event
            .get(event.id.as_str())
            .ok_or_else(|| GraphError::MissingEventAdjacency(event.id.clone()))?;
        let r = adj.size();
        if adj.matrix.len() != r * r {
            return Err(GraphError::AdjacencySize(adj.event_id.clone()));
        }
        let pos = adj
            .member_ids
            .iter()
            .map(|id| {
                corpus
                    .position(id)
                    .ok_or_else(|| GraphError::UnknownMember {
                        event: adj.event_id.clone(),
                        item: id.clone(),
                    })
            })
            .collect::<Result<Vec<usize>, _>>()?;
        for a in 0..r {
            for b in 0..r {
                if a == b {
                    continue;
                }
                let w = adj.get(a, b).max(adj.get(b, a));
                out[pos[a] * n + pos[b]] = w;
            }
        }
    }
    Ok(out)
}

/// Builds every layer of the graph. Non-event layers are built in parallel
/// and merged in spec order.
pub fn assemble(
    corpus: &Corpus,
    specs: &[EdgeTypeSpec],
    adjacencies: &[EventAdjacency],
) -> Result<HetGraph, GraphError> {
    validate_specs(specs, corpus)?;
    let layers = specs
        .par_iter()
        .map(|spec| {
            let (kind, values) = match &spec.kind {
                EdgeKind::EventInfluence => {
                    (LayerKind::Weighted, event_layer(corpus, adjacencies)?)
                }
                EdgeKind::CategoricalMatch { attribute } => (
                    LayerKind::Binary,
                    build_categorical_layer(corpus, attribute)?,
                ),
                EdgeKind::SimilarityThreshold {
                    modality,
                    rho,
                    similarity,
                } => (
                    LayerKind::Binary,
                    build_similarity_layer(corpus, modality, *rho, similarity)?,
                ),
            };
            Ok(Layer {
                name: spec.name.clone(),
                kind,
                values,
            })
        })
        .collect::<Result<Vec<Layer>, GraphError>>()?;
    Ok(HetGraph {
        n: corpus.len(),
        node_ids: corpus.items.iter().map(|it| it.id.clone()).collect(),
        layers,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphHeader {
    n: usize,
    node_ids: Vec<String>,
    layers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    manifest_hash: Option<String>,
}

/// Writes the header line, then one `# name` section per layer with
/// `i<TAB>j<TAB>w` lines. Binary layers list the upper triangle; the
/// weighted layer lists every nonzero entry.
pub fn write_graph<W: Write>(
    graph: &HetGraph,
    manifest_hash: Option<&str>,
    mut w: W,
) -> Result<(), GraphError> {
    let header = GraphHeader {
        n: graph.n,
        node_ids: graph.node_ids.clone(),
        layers: graph.layers.iter().map(|l| l.name.clone()).collect(),
        manifest_hash: manifest_hash.map(str::to_string),
    };
    writeln!(w, "{}", serde_json::to_string(&header)?)?;
    let n = graph.n;
    for layer in &graph.layers {
        writeln!(w, "# {}", layer.name)?;
        for i in 0..n {
            let start = match layer.kind {
                LayerKind::Weighted => 0,
                LayerKind::Binary => i + 1,
            };
            for j in start..n {
                let v = layer.values[i * n + j];
                if v != 0.0 {
                    writeln!(w, "{i}\t{j}\t{v}")?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn export_graph(
    graph: &HetGraph,
    manifest_hash: Option<&str>,
    path: &Path,
) -> Result<(), GraphError> {
    let file = std::fs::File::create(path)?;
    write_graph(graph, manifest_hash, std::io::BufWriter::new(file))
}

/// Parses a graph file. The first layer is read as the weighted event
/// layer, the rest as binary upper triangles. Returns the graph and the
/// embedded manifest hash, if any.
pub fn read_graph<R: Read>(r: R) -> Result<(HetGraph, Option<String>), GraphError> {
    let mut lines = BufReader::new(r).lines().enumerate();
    let malformed = |line: usize, message: &str| GraphError::Malformed {
        line: line + 1,
        message: message.to_string(),
    };
    let (_, first) = lines.next().ok_or_else(|| malformed(0, "empty file"))?;
    let header: GraphHeader =
        serde_json::from_str(&first?).map_err(|e| malformed(0, &e.to_string()))?;
    if header.node_ids.len() != header.n {
        return Err(malformed(0, "node_ids length differs from n"));
    }
    let n = header.n;
    let mut layers: Vec<Layer> = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        if let Some(name) = line.strip_prefix("# ") {
            let expected = header
                .layers
                .get(layers.len())
                .ok_or_else(|| malformed(idx, "extra layer"))?;
            if name != expected {
                return Err(malformed(
                    idx,
                    &format!("layer '{name}', expected '{expected}'"),
                ));
            }
            layers.push(Layer {
                name: name.to_string(),
                kind: if layers.is_empty() {
                    LayerKind::Weighted
                } else {
                    LayerKind::Binary
                },
                values: vec![0.0; n * n],
            });
            continue;
        }
        let layer = layers
            .last_mut()
            .ok_or_else(|| malformed(idx, "entry before any layer"))?;
        let mut parts = line.split('\t');
        let (Some(i), Some(j), Some(v), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(malformed(idx, "expected i<TAB>j<TAB>w"));
        };
        let i: usize = i.parse().map_err(|_| malformed(idx, "bad row index"))?;
        let j: usize = j.parse().map_err(|_| malformed(idx, "bad column index"))?;
        let v: f64 = v.parse().map_err(|_| malformed(idx, "bad weight"))?;
        if i >= n || j >= n {
            return Err(malformed(idx, "index out of range"));
        }
        layer.values[i * n + j] = v;
        if layer.kind == LayerKind::Binary {
            layer.values[j * n + i] = v;
        }
    }
    if layers.len() != header.layers.len() {
        return Err(malformed(0, "missing layer sections"));
    }
    Ok((
        HetGraph {
            n,
            node_ids: header.node_ids,
            layers,
        },
        header.manifest_hash,
    ))
}

pub fn import_graph(path: &Path) -> Result<(HetGraph, Option<String>), GraphError> {
    read_graph(std::fs::File::open(path)?)
}

pub fn load_edge_specs(path: &Path) -> Result<Vec<EdgeTypeSpec>, GraphError> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Label, Modality, NewsItem};
    use proptest::prelude::*;

    fn item(
        id: &str,
        event: &str,
        t: f64,
        title: Vec<f64>,
        attrs: &[(&str, AttrValue)],
    ) -> NewsItem {
        NewsItem {
            id: id.into(),
            event_id: event.into(),
            timestamp: t,
            label: Label::Unlabeled,
            features: [("title".to_string(), title)].into_iter().collect(),
            attributes: attrs
                .iter()
                .map(|(k, v)| (k.to_string(), v.clone()))
                .collect(),
        }
    }

    fn text(s: &str) -> AttrValue {
        AttrValue::Text(s.into())
    }

    fn corpus(items: Vec<NewsItem>) -> Corpus {
        let dim = items[0].features["title"].len();
        Corpus::new(vec![Modality::new("title", dim)], items).unwrap()
    }

    fn is_symmetric_binary(m: &[f64], n: usize) -> bool {
        (0..n).all(|i| {
            m[i * n + i] == 0.0
                && (0..n).all(|j| {
                    m[i * n + j] == m[j * n + i] && (m[i * n + j] == 0.0 || m[i * n + j] == 1.0)
                })
        })
    }

    #[test]
    fn identical_features_always_connect() {
        let c = corpus(vec![
            item("a", "e", 0.0, vec![0.3, 0.4], &[]),
            item("b", "e", 1.0, vec![0.3, 0.4], &[]),
        ]);
        let m = build_similarity_layer(&c, "title", 1.0, &SimilarityConfig::default()).unwrap();
        assert_eq!(m, vec![0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn threshold_is_inclusive() {
        // distance 1 under the default map gives sim = exp(-1) exactly
        let c = corpus(vec![
            item("a", "e", 0.0, vec![0.0], &[]),
            item("b", "e", 1.0, vec![1.0], &[]),
        ]);
        let rho = (-1.0f64).exp();
        let m = build_similarity_layer(&c, "title", rho, &SimilarityConfig::default()).unwrap();
        assert_eq!(m[1], 1.0);
        let m = build_similarity_layer(&c, "title", rho.next_up(), &SimilarityConfig::default())
            .unwrap();
        assert_eq!(m[1], 0.0);
    }

    #[test]
    fn three_node_threshold_matches_brute_force() {
        // sims: (1,2) = 0.9, (2,3) = 0.4, (1,3) = 0.7
        let sims = vec![1.0, 0.9, 0.7, 0.9, 1.0, 0.4, 0.7, 0.4, 1.0];
        let m = threshold_matrix(&sims, 3, 0.6);
        let mut edges = vec![];
        for i in 0..3 {
            for j in i + 1..3 {
                if m[i * 3 + j] == 1.0 {
                    edges.push((i + 1, j + 1));
                }
            }
        }
        assert_eq!(edges, vec![(1, 2), (1, 3)]);
        assert!(is_symmetric_binary(&m, 3));
    }

    #[test]
    fn categorical_examples() {
        let c = corpus(vec![
            item("1", "e", 0.0, vec![0.0], &[("p", text("a"))]),
            item("2", "e", 1.0, vec![0.0], &[("p", text("a"))]),
            item("3", "e", 2.0, vec![0.0], &[("p", text("b"))]),
            item("4", "e", 3.0, vec![0.0], &[]),
        ]);
        let m = build_categorical_layer(&c, "p").unwrap();
        let mut expect = vec![0.0; 16];
        expect[1] = 1.0;
        expect[4] = 1.0;
        assert_eq!(m, expect);
        assert!(matches!(
            build_categorical_layer(&c, "nope"),
            Err(GraphError::UnknownAttribute(_))
        ));

        let same = corpus(
            (0..4)
                .map(|i| {
                    item(
                        &format!("{i}"),
                        "e",
                        i as f64,
                        vec![0.0],
                        &[("p", AttrValue::Number(1.0))],
                    )
                })
                .collect(),
        );
        let m = build_categorical_layer(&same, "p").unwrap();
        assert_eq!(m.iter().sum::<f64>(), 12.0);
        assert!(is_symmetric_binary(&m, 4));

        let distinct = corpus(
            (0..4)
                .map(|i| {
                    item(
                        &format!("{i}"),
                        "e",
                        i as f64,
                        vec![0.0],
                        &[("p", AttrValue::Number(i as f64))],
                    )
                })
                .collect(),
        );
        assert!(build_categorical_layer(&distinct, "p")
            .unwrap()
            .iter()
            .all(|v| *v == 0.0));
    }

    fn adjacency(event: &str, members: &[&str], matrix: Vec<f64>) -> EventAdjacency {
        EventAdjacency {
            event_id: event.into(),
            member_ids: members.iter().map(|s| s.to_string()).collect(),
            matrix,
        }
    }

    #[test]
    fn single_event_scatters_symmetrized() {
        let c = corpus(vec![
            item("a", "e", 0.0, vec![0.0], &[]),
            item("b", "e", 1.0, vec![0.0], &[]),
            item("c", "e", 2.0, vec![0.0], &[]),
        ]);
        let adj = adjacency(
            "e",
            &["a", "b", "c"],
            vec![0.0, 1.0, 0.25, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0],
        );
        let specs = vec![EdgeTypeSpec::new("ev", EdgeKind::EventInfluence)];
        let g = assemble(&c, &specs, &[adj]).unwrap();
        assert_eq!(g.layers.len(), 1);
        assert_eq!(
            g.layer(0).values,
            vec![0.0, 1.0, 0.25, 1.0, 0.0, 0.5, 0.25, 0.5, 0.0]
        );
    }

    #[test]
    fn two_events_give_block_structure() {
        let c = corpus(vec![
            item("a", "e1", 0.0, vec![0.0], &[]),
            item("b", "e2", 0.5, vec![0.0], &[]),
            item("c", "e1", 1.0, vec![0.0], &[]),
            item("d", "e2", 2.0, vec![0.0], &[]),
        ]);
        let adjs = vec![
            adjacency("e1", &["a", "c"], vec![0.0, 0.8, 0.0, 0.0]),
            adjacency("e2", &["b", "d"], vec![0.0, 0.3, 0.0, 0.0]),
        ];
        let specs = vec![EdgeTypeSpec::new("ev", EdgeKind::EventInfluence)];
        let g = assemble(&c, &specs, &adjs).unwrap();
        let ev = c.event_of_items();
        for i in 0..4 {
            for j in 0..4 {
                if g.get(0, i, j) != 0.0 {
                    assert_eq!(ev[i], ev[j]);
                }
            }
        }
        assert_eq!(g.get(0, 0, 2), 0.8);
        assert_eq!(g.get(0, 3, 1), 0.3);
        assert!(matches!(
            assemble(&c, &specs, &adjs[..1]),
            Err(GraphError::MissingEventAdjacency(_))
        ));
    }

    #[test]
    fn spec_validation() {
        let c = corpus(vec![item("a", "e", 0.0, vec![0.0], &[("p", text("x"))])]);
        let cat = EdgeTypeSpec::new(
            "p",
            EdgeKind::CategoricalMatch {
                attribute: "p".into(),
            },
        );
        let ev = EdgeTypeSpec::new("ev", EdgeKind::EventInfluence);
        assert!(validate_specs(&[ev.clone(), cat.clone()], &c).is_ok());
        assert!(matches!(
            validate_specs(std::slice::from_ref(&cat), &c),
            Err(GraphError::EventInfluencePlacement)
        ));
        assert!(matches!(
            validate_specs(&[cat.clone(), ev.clone()], &c),
            Err(GraphError::EventInfluencePlacement)
        ));
        let bad_rho = EdgeTypeSpec::new(
            "s",
            EdgeKind::SimilarityThreshold {
                modality: "title".into(),
                rho: 1.5,
                similarity: SimilarityConfig::default(),
            },
        );
        assert!(validate_specs(&[ev.clone(), bad_rho], &c).is_err());
        let missing = EdgeTypeSpec::new(
            "s",
            EdgeKind::SimilarityThreshold {
                modality: "body".into(),
                rho: 0.5,
                similarity: SimilarityConfig::default(),
            },
        );
        assert!(matches!(
            validate_specs(&[ev, missing], &c),
            Err(GraphError::UnknownModality(_))
        ));
    }

    #[test]
    fn spec_json_shape() {
        let json = r#"[{"name":"ev","kind":"event_influence"},
            {"name":"pub","kind":"categorical_match","attribute":"publisher"},
            {"name":"sim","kind":"similarity_threshold","modality":"title","rho":0.5}]"#;
        let specs: Vec<EdgeTypeSpec> = serde_json::from_str(json).unwrap();
        assert_eq!(specs.len(), 3);
        assert_eq!(specs[0].kind, EdgeKind::EventInfluence);
        let back: Vec<EdgeTypeSpec> =
            serde_json::from_str(&serde_json::to_string(&specs).unwrap()).unwrap();
        assert_eq!(back, specs);
    }

    fn fixture_graph() -> HetGraph {
        HetGraph {
            n: 3,
            node_ids: vec!["a".into(), "b".into(), "c".into()],
            layers: vec![
                Layer {
                    name: "ev".into(),
                    kind: LayerKind::Weighted,
                    values: vec![0.0, 0.1, 0.0, 0.1, 0.0, 1.0 / 3.0, 0.0, 1.0 / 3.0, 0.0],
                },
                Layer {
                    name: "pub".into(),
                    kind: LayerKind::Binary,
                    values: vec![0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0],
                },
            ],
        }
    }

    #[test]
    fn export_fixture_layout() {
        let mut buf = Vec::new();
        write_graph(&fixture_graph(), None, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            r#"{"n":3,"node_ids":["a","b","c"],"layers":["ev","pub"]}"#
        );
        assert_eq!(lines[1], "# ev");
        assert_eq!(lines[6], "# pub");
        assert_eq!(lines.len(), 9);
        assert_eq!(lines[2], "0\t1\t0.1");
        assert_eq!(lines[7], "0\t1\t1");
        assert!(text.ends_with('\n') && !text.contains('\r'));
    }

    #[test]
    fn export_import_round_trip() {
        let g = fixture_graph();
        let mut buf = Vec::new();
        write_graph(&g, Some("abc"), &mut buf).unwrap();
        let (back, hash) = read_graph(buf.as_slice()).unwrap();
        assert_eq!(back, g);
        assert_eq!(hash.as_deref(), Some("abc"));
    }

    proptest! {
        #[test]
        fn similarity_layers_are_symmetric_and_monotone(
            feats in proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, 3), 2..8),
            rho1 in 0.0f64..1.0,
            rho2 in 0.0f64..1.0,
        ) {
            let items = feats
                .iter()
                .enumerate()
                .map(|(i, f)| item(&format!("n{i}"), "e", i as f64, f.clone(), &[]))
                .collect();
            let c = corpus(items);
            let n = c.len();
            let (lo, hi) = if rho1 <= rho2 { (rho1, rho2) } else { (rho2, rho1) };
            let cfg = SimilarityConfig::default();
            let a = build_similarity_layer(&c, "title", lo, &cfg).unwrap();
            let b = build_similarity_layer(&c, "title", hi, &cfg).unwrap();
            prop_assert!(is_symmetric_binary(&a, n));
            prop_assert!(is_symmetric_binary(&b, n));
            prop_assert!(a.iter().zip(&b).all(|(x, y)| y <= x));
        }

        #[test]
        fn assembly_ignores_insertion_order(
            weights in proptest::collection::vec(0.0f64..1.0, 9),
            shuffle_seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let base: Vec<NewsItem> = (0..3)
                .map(|i| item(&format!("n{i}"), "e", i as f64, vec![i as f64], &[("p", text(if i < 2 { "x" } else { "y" }))]))
                .collect();
            let mut shuffled = base.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(shuffle_seed));
            let adj = adjacency("e", &["n0", "n1", "n2"], weights);
            let specs = vec![
                EdgeTypeSpec::new("ev", EdgeKind::EventInfluence),
                EdgeTypeSpec::new("p", EdgeKind::CategoricalMatch { attribute: "p".into() }),
            ];
            let g1 = assemble(&corpus(base), &specs, std::slice::from_ref(&adj)).unwrap();
            let g2 = assemble(&corpus(shuffled), &specs, &[adj]).unwrap();
            prop_assert_eq!(g1, g2);
        }

        #[test]
        fn round_trip_is_bit_exact(weights in proptest::collection::vec(0.0f64..1.0, 9)) {
            let mut g = fixture_graph();
            g.layers[0].values = weights;
            for i in 0..3 {
                g.layers[0].values[i * 3 + i] = 0.0;
            }
            let mut buf = Vec::new();
            write_graph(&g, None, &mut buf).unwrap();
            let (back, _) = read_graph(buf.as_slice()).unwrap();
            prop_assert_eq!(back, g);
        }
    }
}
