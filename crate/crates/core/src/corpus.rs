//! News items, events and the line-delimited corpus file format.
//!
//! A corpus file is UTF-8 JSON lines. The first line is a header
//! `{"schema": [[name, dim], ...]}`; every following line is one news item:
//!
//! ```text
//! {"id": "n1", "event_id": "e1", "timestamp": 12.5, "label": "fake",
//!  "features": {"text": [..], "video": [..]}, "attributes": {"publisher": "p3"}}
//! ```
//!
//! Items are stored sorted by id and timestamps are shifted so the earliest
//! item sits at `0.0`. Events are derived by grouping on `event_id`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Error, Debug)]
pub enum CorpusError {
    #[error("empty corpus")]
    Empty,
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("invalid corpus: {}", summarize(.0))]
    Invalid(Vec<Violation>),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

fn summarize(violations: &[Violation]) -> String {
    let shown: Vec<String> = violations.iter().take(5).map(|v| v.to_string()).collect();
    let more = violations.len().saturating_sub(shown.len());
    if more > 0 {
        format!("{} (and {more} more)", shown.join("; "))
    } else {
        shown.join("; ")
    }
}

/// Ground-truth class of a news item.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Real,
    Fake,
    Unlabeled,
}

impl Label {
    /// Class index used by the classifier: real = 0, fake = 1.
    pub fn class_index(self) -> Option<usize> {
        match self {
            Label::Real => Some(0),
            Label::Fake => Some(1),
            Label::Unlabeled => None,
        }
    }

    pub fn from_class_index(index: usize) -> Option<Label> {
        match index {
            0 => Some(Label::Real),
            1 => Some(Label::Fake),
            _ => None,
        }
    }

    pub fn is_labeled(self) -> bool {
        self != Label::Unlabeled
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum LabelTag {
    Real,
    Fake,
}

impl From<Option<LabelTag>> for Label {
    fn from(tag: Option<LabelTag>) -> Self {
        match tag {
            Some(LabelTag::Real) => Label::Real,
            Some(LabelTag::Fake) => Label::Fake,
            None => Label::Unlabeled,
        }
    }
}

impl From<Label> for Option<LabelTag> {
    fn from(label: Label) -> Self {
        match label {
            Label::Real => Some(LabelTag::Real),
            Label::Fake => Some(LabelTag::Fake),
            Label::Unlabeled => None,
        }
    }
}

/// Categorical or numeric social attribute value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttrValue {
    Number(f64),
    Text(String),
}

impl fmt::Display for AttrValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttrValue::Number(x) => write!(f, "{x}"),
            AttrValue::Text(s) => f.write_str(s),
        }
    }
}

/// A modality name with its feature dimensionality.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "(String, usize)", into = "(String, usize)")]
pub struct Modality {
    pub name: String,
    pub dim: usize,
}

impl Modality {
    pub fn new(name: impl Into<String>, dim: usize) -> Self {
        Modality {
            name: name.into(),
            dim,
        }
    }
}

impl From<(String, usize)> for Modality {
    fn from((name, dim): (String, usize)) -> Self {
        Modality { name, dim }
    }
}

impl From<Modality> for (String, usize) {
    fn from(m: Modality) -> Self {
        (m.name, m.dim)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NewsItem {
    pub id: String,
    pub event_id: String,
    /// Seconds since the corpus epoch.
    pub timestamp: f64,
    pub label: Label,
    pub features: BTreeMap<String, Vec<f64>>,
    pub attributes: BTreeMap<String, AttrValue>,
}

impl NewsItem {
    pub fn feature(&self, modality: &str) -> Option<&[f64]> {
        self.features.get(modality).map(Vec::as_slice)
    }
}

/// News items about the same topic, ordered by `(timestamp, id)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Event {
    pub id: String,
    pub member_ids: Vec<String>,
}

impl Event {
    pub fn size(&self) -> usize {
        self.member_ids.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub schema: Vec<Modality>,
    /// Sorted by id.
    pub items: Vec<NewsItem>,
    /// Sorted by event id.
    pub events: Vec<Event>,
}

/// A broken corpus invariant.
#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub item_id: Option<String>,
    pub rule: Rule,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Rule {
    DuplicateId,
    MissingModality {
        modality: String,
    },
    UnknownModality {
        modality: String,
    },
    DimensionMismatch {
        modality: String,
        expected: usize,
        found: usize,
    },
    NonFiniteFeature {
        modality: String,
    },
    NonFiniteTimestamp,
    NegativeTimestamp,
    NotInAnyEvent,
    InSeveralEvents,
    EventMismatch {
        event: String,
    },
    UnknownMember {
        event: String,
    },
    EventOrder {
        event: String,
    },
    EmptyEvent {
        event: String,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let who = self.item_id.as_deref().unwrap_or("<corpus>");
        match &self.rule {
            Rule::DuplicateId => write!(f, "{who}: duplicate id"),
            Rule::MissingModality { modality } => write!(f, "{who}: missing modality '{modality}'"),
            Rule::UnknownModality { modality } => {
                write!(f, "{who}: modality '{modality}' not in schema")
            }
            Rule::DimensionMismatch {
                modality,
                expected,
                found,
            } => write!(
                f,
                "{who}: modality '{modality}' has dimension {found}, schema says {expected}"
            ),
            Rule::NonFiniteFeature { modality } => {
                write!(f, "{who}: non-finite value in modality '{modality}'")
            }
            Rule::NonFiniteTimestamp => write!(f, "{who}: non-finite timestamp"),
            Rule::NegativeTimestamp => write!(f, "{who}: negative timestamp"),
            Rule::NotInAnyEvent => write!(f, "{who}: not a member of any event"),
            Rule::InSeveralEvents => write!(f, "{who}: member of several events"),
            Rule::EventMismatch { event } => {
                write!(
                    f,
                    "{who}: listed in event '{event}' but carries another event id"
                )
            }
            Rule::UnknownMember { event } => write!(f, "{who}: unknown member of event '{event}'"),
            Rule::EventOrder { event } => write!(f, "event '{event}': members not time-ordered"),
            Rule::EmptyEvent { event } => write!(f, "event '{event}': no members"),
        }
    }
}

/// Lists every broken invariant; an empty list means the corpus is valid.
pub fn validate(corpus: &Corpus) -> Vec<Violation> {
    let mut out = Vec::new();
    let violation = |id: &str, rule: Rule| Violation {
        item_id: Some(id.to_string()),
        rule,
    };

    let mut seen: HashMap<&str, &NewsItem> = HashMap::new();
    for item in &corpus.items {
        if seen.insert(item.id.as_str(), item).is_some() {
            out.push(violation(&item.id, Rule::DuplicateId));
        }
        if !item.timestamp.is_finite() {
            out.push(violation(&item.id, Rule::NonFiniteTimestamp));
        } else if item.timestamp < 0.0 {
            out.push(violation(&item.id, Rule::NegativeTimestamp));
        }
        for m in &corpus.schema {
            match item.features.get(&m.name) {
                None => out.push(violation(
                    &item.id,
                    Rule::MissingModality {
                        modality: m.name.clone(),
                    },
                )),
                Some(v) => {
                    if v.len() != m.dim {
                        out.push(violation(
                            &item.id,
                            Rule::DimensionMismatch {
                                modality: m.name.clone(),
                                expected: m.dim,
                                found: v.len(),
                            },
                        ));
                    }
                    if v.iter().any(|x| !x.is_finite()) {
                        out.push(violation(
                            &item.id,
                            Rule::NonFiniteFeature {
                                modality: m.name.clone(),
                            },
                        ));
                    }
                }
            }
        }
        for name in item.features.keys() {
            if !corpus.schema.iter().any(|m| &m.name == name) {
                out.push(violation(
                    &item.id,
                    Rule::UnknownModality {
                        modality: name.clone(),
                    },
                ));
            }
        }
    }

    let mut membership: HashMap<&str, usize> = HashMap::new();
    for event in &corpus.events {
        if event.member_ids.is_empty() {
            out.push(Violation {
                item_id: None,
                rule: Rule::EmptyEvent {
                    event: event.id.clone(),
                },
            });
        }
        let mut previous: Option<(f64, &str)> = None;
        for id in &event.member_ids {
            *membership.entry(id.as_str()).or_default() += 1;
            match seen.get(id.as_str()) {
                None => out.push(violation(
                    id,
                    Rule::UnknownMember {
                        event: event.id.clone(),
                    },
                )),
                Some(item) => {
                    if item.event_id != event.id {
                        out.push(violation(
                            id,
                            Rule::EventMismatch {
                                event: event.id.clone(),
                            },
                        ));
                    }
                    let key = (item.timestamp, item.id.as_str());
                    if let Some(prev) = previous {
                        if key.partial_cmp(&prev) != Some(std::cmp::Ordering::Greater) {
                            out.push(Violation {
                                item_id: None,
                                rule: Rule::EventOrder {
                                    event: event.id.clone(),
                                },
                            });
                        }
                    }
                    previous = Some(key);
                }
            }
        }
    }
    for item in &corpus.items {
        match membership.get(item.id.as_str()) {
            None => out.push(violation(&item.id, Rule::NotInAnyEvent)),
            Some(&k) if k > 1 => out.push(violation(&item.id, Rule::InSeveralEvents)),
            _ => {}
        }
    }
    out
}

impl Corpus {
    /// Builds a validated corpus: sorts items by id, shifts timestamps to
    /// the earliest item and groups events.
    pub fn new(schema: Vec<Modality>, mut items: Vec<NewsItem>) -> Result<Corpus, CorpusError> {
        if items.is_empty() {
            return Err(CorpusError::Empty);
        }
        let finite_min = items
            .iter()
            .map(|it| it.timestamp)
            .filter(|t| t.is_finite())
            .fold(f64::INFINITY, f64::min);
        if finite_min.is_finite() {
            for item in &mut items {
                item.timestamp -= finite_min;
            }
        }
        items.sort_by(|a, b| a.id.cmp(&b.id));
        let events = group_events(&items);
        let corpus = Corpus {
            schema,
            items,
            events,
        };
        let violations = validate(&corpus);
        if violations.is_empty() {
            Ok(corpus)
        } else {
            Err(CorpusError::Invalid(violations))
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Position of `id` in `items`.
    pub fn position(&self, id: &str) -> Option<usize> {
        self.items
            .binary_search_by(|it| it.id.as_str().cmp(id))
            .ok()
    }

    pub fn item(&self, id: &str) -> Option<&NewsItem> {
        self.position(id).map(|i| &self.items[i])
    }

    pub fn modality(&self, name: &str) -> Option<&Modality> {
        self.schema.iter().find(|m| m.name == name)
    }

    /// Latest timestamp in the corpus.
    pub fn horizon(&self) -> f64 {
        self.items.iter().map(|it| it.timestamp).fold(0.0, f64::max)
    }

    /// Event index of every item, aligned with `items`.
    pub fn event_of_items(&self) -> Vec<usize> {
        let mut out = vec![0; self.items.len()];
        for (e, event) in self.events.iter().enumerate() {
            for id in &event.member_ids {
                if let Some(i) = self.position(id) {
                    out[i] = e;
                }
            }
        }
        out
    }

    /// Whether any item carries `attribute`.
    pub fn has_attribute(&self, attribute: &str) -> bool {
        self.items
            .iter()
            .any(|it| it.attributes.contains_key(attribute))
    }
}

fn group_events(items: &[NewsItem]) -> Vec<Event> {
    let mut groups: BTreeMap<&str, Vec<&NewsItem>> = BTreeMap::new();
    for item in items {
        groups.entry(item.event_id.as_str()).or_default().push(item);
    }
    groups
        .into_iter()
        .map(|(id, mut members)| {
            members.sort_by(|a, b| {
                a.timestamp
                    .total_cmp(&b.timestamp)
                    .then_with(|| a.id.cmp(&b.id))
            });
            Event {
                id: id.to_string(),
                member_ids: members.iter().map(|m| m.id.clone()).collect(),
            }
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderLine {
    schema: Vec<Modality>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    id: String,
    event_id: String,
    timestamp: f64,
    label: Option<LabelTag>,
    features: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    attributes: BTreeMap<String, Option<AttrValue>>,
}

/// Parses a corpus from any reader.
pub fn read_corpus<R: Read>(reader: R) -> Result<Corpus, CorpusError> {
    let reader = BufReader::new(reader);
    let mut schema: Option<Vec<Modality>> = None;
    let mut items = Vec::new();
    for (index, line) in reader.lines().enumerate() {
        let line_no = index + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |e: serde_json::Error| CorpusError::Malformed {
            line: line_no,
            message: e.to_string(),
        };
        if schema.is_none() {
            let header: HeaderLine = serde_json::from_str(&line).map_err(malformed)?;
            schema = Some(header.schema);
            continue;
        }
        let record: RecordLine = serde_json::from_str(&line).map_err(malformed)?;
        items.push(NewsItem {
            id: record.id,
            event_id: record.event_id,
            timestamp: record.timestamp,
            label: record.label.into(),
            features: record.features,
            attributes: record
                .attributes
                .into_iter()
                .filter_map(|(k, v)| v.map(|v| (k, v)))
                .collect(),
        });
    }
    let schema = schema.ok_or(CorpusError::Empty)?;
    Corpus::new(schema, items)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    read_corpus(File::open(path)?)
}

/// Writes `corpus` in the line-delimited format, items in id order.
pub fn write_corpus<W: Write>(corpus: &Corpus, writer: W) -> Result<(), CorpusError> {
    let mut w = BufWriter::new(writer);
    let header = HeaderLine {
        schema: corpus.schema.clone(),
    };
    serde_json::to_writer(&mut w, &header).map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    for item in &corpus.items {
        let record = RecordLine {
            id: item.id.clone(),
            event_id: item.event_id.clone(),
            timestamp: item.timestamp,
            label: item.label.into(),
            features: item.features.clone(),
            attributes: item
                .attributes
                .iter()
                .map(|(k, v)| (k.clone(), Some(v.clone())))
                .collect(),
        };
        serde_json::to_writer(&mut w, &record).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    write_corpus(corpus, File::create(path)?)
}

/// Ids of items whose label is known, per class index.
pub fn labeled_ids_by_class(corpus: &Corpus) -> [Vec<String>; 2] {
    let mut out = [Vec::new(), Vec::new()];
    for item in &corpus.items {
        if let Some(c) = item.label.class_index() {
            out[c].push(item.id.clone());
        }
    }
    out
}
