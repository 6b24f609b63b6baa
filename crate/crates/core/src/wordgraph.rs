//! Per-findings word graph.
//!
//! Nodes are the distinct surface forms of every token covered by an entity
//! span; repeated words collapse to one node. Three edge families connect them:
//!
//! * Type I: consecutive tokens inside one entity.
//! * Type II: a modifier entity and the entity it modifies (observation
//!   modifier and uncertainty attach to observations, anatomy modifier to
//!   anatomy); every word pair across the two entities is linked.
//! * Type III: a dependency arc whose endpoints are both node words.
//!
//! Edges are undirected. The adjacency matrix is symmetric with self-loops.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Report;
use crate::error::{CoreError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityCategory {
    Anatomy,
    Observation,
    AnatomyModifier,
    ObservationModifier,
    Uncertainty,
}

impl EntityCategory {
    pub const ALL: [EntityCategory; 5] = [
        EntityCategory::Anatomy,
        EntityCategory::Observation,
        EntityCategory::AnatomyModifier,
        EntityCategory::ObservationModifier,
        EntityCategory::Uncertainty,
    ];

    /// The category a modifier attaches to, or `None` for base categories.
    pub fn modifies(self) -> Option<EntityCategory> {
        match self {
            EntityCategory::ObservationModifier | EntityCategory::Uncertainty => {
                Some(EntityCategory::Observation)
            }
            EntityCategory::AnatomyModifier => Some(EntityCategory::Anatomy),
            EntityCategory::Anatomy | EntityCategory::Observation => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntitySpan {
    pub start: usize,
    /// Exclusive.
    pub end: usize,
    #[serde(rename = "type")]
    pub category: EntityCategory,
    /// Index of the entity this modifier modifies.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<usize>,
}

impl EntitySpan {
    pub fn new(start: usize, end: usize, category: EntityCategory) -> Self {
        Self {
            start,
            end,
            category,
            target: None,
        }
    }

    pub fn with_target(mut self, target: usize) -> Self {
        self.target = Some(target);
        self
    }

    pub fn positions(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }

    /// Smallest token distance between the two spans.
    pub fn distance(&self, other: &EntitySpan) -> usize {
        if self.end <= other.start {
            other.start - self.end + 1
        } else if other.end <= self.start {
            self.start - other.end + 1
        } else {
            0
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DependencyArc {
    /// `None` for the root arc.
    pub head: Option<usize>,
    pub dep: usize,
    pub label: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EdgeType {
    I,
    II,
    III,
}

impl EdgeType {
    pub const ALL: [EdgeType; 3] = [EdgeType::I, EdgeType::II, EdgeType::III];

    fn bit(self) -> u8 {
        match self {
            EdgeType::I => 1,
            EdgeType::II => 2,
            EdgeType::III => 4,
        }
    }
}

impl fmt::Display for EdgeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EdgeType::I => "I",
            EdgeType::II => "II",
            EdgeType::III => "III",
        })
    }
}

impl FromStr for EdgeType {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "I" | "1" => Ok(EdgeType::I),
            "II" | "2" => Ok(EdgeType::II),
            "III" | "3" => Ok(EdgeType::III),
            other => Err(CoreError::Config(format!("unknown edge type `{other}`"))),
        }
    }
}

/// Which edge families a graph is built with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EdgeTypeSet(u8);

impl EdgeTypeSet {
    pub const fn all() -> Self {
        Self(7)
    }

    pub const fn none() -> Self {
        Self(0)
    }

    pub fn of(types: &[EdgeType]) -> Self {
        Self(types.iter().fold(0, |acc, t| acc | t.bit()))
    }

    pub fn contains(self, t: EdgeType) -> bool {
        self.0 & t.bit() != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn types(self) -> Vec<EdgeType> {
        EdgeType::ALL.into_iter().filter(|&t| self.contains(t)).collect()
    }

    /// The seven non-empty subsets of {I, II, III}, singletons first.
    pub fn nonempty_subsets() -> Vec<EdgeTypeSet> {
        let mut subsets: Vec<_> = (1u8..8).map(EdgeTypeSet).collect();
        subsets.sort_by_key(|s| (s.0.count_ones(), s.0));
        subsets
    }
}

impl Default for EdgeTypeSet {
    fn default() -> Self {
        Self::all()
    }
}

impl fmt::Display for EdgeTypeSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return f.write_str("none");
        }
        let names: Vec<String> = self.types().iter().map(ToString::to_string).collect();
        f.write_str(&names.join(","))
    }
}

impl FromStr for EdgeTypeSet {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() || s.eq_ignore_ascii_case("none") {
            return Ok(Self::none());
        }
        let types = s
            .split(',')
            .map(EdgeType::from_str)
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::of(&types))
    }
}

impl Serialize for EdgeTypeSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for EdgeTypeSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Undirected node pair, stored with `u < v`.
pub type NodePair = (usize, usize);

fn pair(a: usize, b: usize) -> Option<NodePair> {
    match a.cmp(&b) {
        std::cmp::Ordering::Less => Some((a, b)),
        std::cmp::Ordering::Greater => Some((b, a)),
        std::cmp::Ordering::Equal => None,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TypedEdge {
    pub u: usize,
    pub v: usize,
    pub kind: EdgeType,
}

/// Deduplicated node list plus token-to-node bookkeeping.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NodeSet {
    /// Distinct surface forms in order of first occurrence.
    pub words: Vec<String>,
    /// Sorted token positions of each node.
    pub occurrences: Vec<Vec<usize>>,
    /// Node of each findings token, if the token is inside an entity.
    pub token_node: Vec<Option<usize>>,
}

impl NodeSet {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn node_of(&self, position: usize) -> Option<usize> {
        self.token_node.get(position).copied().flatten()
    }
}

pub fn collect_nodes(tokens: &[String], spans: &[EntitySpan]) -> NodeSet {
    let mut covered = vec![false; tokens.len()];
    for span in spans {
        for p in span.positions() {
            if p < tokens.len() {
                covered[p] = true;
            }
        }
    }
    let mut set = NodeSet {
        token_node: vec![None; tokens.len()],
        ..Default::default()
    };
    let mut index: BTreeMap<&str, usize> = BTreeMap::new();
    for (p, tok) in tokens.iter().enumerate() {
        if !covered[p] {
            continue;
        }
        let node = *index.entry(tok.as_str()).or_insert_with(|| {
            set.words.push(tok.clone());
            set.occurrences.push(Vec::new());
            set.words.len() - 1
        });
        set.occurrences[node].push(p);
        set.token_node[p] = Some(node);
    }
    set
}

pub fn type1_edges(spans: &[EntitySpan], nodes: &NodeSet) -> BTreeSet<NodePair> {
    let mut edges = BTreeSet::new();
    for span in spans {
        for p in span.start..span.end.saturating_sub(1) {
            if let (Some(a), Some(b)) = (nodes.node_of(p), nodes.node_of(p + 1)) {
                edges.extend(pair(a, b));
            }
        }
    }
    edges
}

/// The entity a modifier attaches to: its explicit target when that has the
/// right category, otherwise the nearest entity of that category (ties go to
/// the leftmost).
pub fn modifier_target(spans: &[EntitySpan], modifier: usize) -> Option<usize> {
    let m = &spans[modifier];
    let base = m.category.modifies()?;
    if let Some(t) = m.target {
        if spans.get(t).is_some_and(|s| s.category == base) {
            return Some(t);
        }
    }
    spans
        .iter()
        .enumerate()
        .filter(|(i, s)| *i != modifier && s.category == base)
        .min_by_key(|(_, s)| (m.distance(s), s.start))
        .map(|(i, _)| i)
}

pub fn type2_edges(spans: &[EntitySpan], nodes: &NodeSet) -> BTreeSet<NodePair> {
    let mut edges = BTreeSet::new();
    for (i, m) in spans.iter().enumerate() {
        let Some(t) = modifier_target(spans, i) else {
            continue;
        };
        for p in m.positions() {
            for q in spans[t].positions() {
                if let (Some(a), Some(b)) = (nodes.node_of(p), nodes.node_of(q)) {
                    edges.extend(pair(a, b));
                }
            }
        }
    }
    edges
}

pub fn type3_edges(arcs: &[DependencyArc], nodes: &NodeSet) -> BTreeSet<NodePair> {
    arcs.iter()
        .filter_map(|arc| {
            let head = nodes.node_of(arc.head?)?;
            let dep = nodes.node_of(arc.dep)?;
            pair(head, dep)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WordGraph {
    pub nodes: NodeSet,
    pub typed_edges: BTreeSet<TypedEdge>,
    adjacency: Vec<bool>,
}

impl WordGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    /// A graph with no nodes; decoders fall back to the plain path.
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.nodes.words
    }

    pub fn adjacent(&self, u: usize, v: usize) -> bool {
        self.adjacency[u * self.len() + v]
    }

    /// Row-major `|V| x |V|` adjacency with self-loops.
    pub fn adjacency(&self) -> &[bool] {
        &self.adjacency
    }

    pub fn edges_of(&self, kind: EdgeType) -> BTreeSet<NodePair> {
        self.typed_edges
            .iter()
            .filter(|e| e.kind == kind)
            .map(|e| (e.u, e.v))
            .collect()
    }

    /// Whether the words `a` and `b` are joined by an edge of `kind`.
    pub fn has_word_edge(&self, a: &str, b: &str, kind: EdgeType) -> bool {
        let find = |w: &str| self.nodes.words.iter().position(|x| x == w);
        match (find(a), find(b)) {
            (Some(x), Some(y)) => pair(x, y).is_some_and(|(u, v)| {
                self.typed_edges.contains(&TypedEdge { u, v, kind })
            }),
            _ => false,
        }
    }
}

pub fn build_graph(report: &Report, edge_types: EdgeTypeSet) -> WordGraph {
    let nodes = collect_nodes(&report.findings, &report.entities);
    let mut typed_edges = BTreeSet::new();
    let mut add = |set: BTreeSet<NodePair>, kind| {
        typed_edges.extend(set.into_iter().map(|(u, v)| TypedEdge { u, v, kind }));
    };
    if edge_types.contains(EdgeType::I) {
        add(type1_edges(&report.entities, &nodes), EdgeType::I);
    }
    if edge_types.contains(EdgeType::II) {
        add(type2_edges(&report.entities, &nodes), EdgeType::II);
    }
    if edge_types.contains(EdgeType::III) {
        add(type3_edges(&report.deps, &nodes), EdgeType::III);
    }
    let n = nodes.len();
    let mut adjacency = vec![false; n * n];
    for i in 0..n {
        adjacency[i * n + i] = true;
    }
    for e in &typed_edges {
        adjacency[e.u * n + e.v] = true;
        adjacency[e.v * n + e.u] = true;
    }
    WordGraph {
        nodes,
        typed_edges,
        adjacency,
    }
}

/// One line of the graph dump.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct GraphDump {
    pub id: String,
    pub nodes: Vec<String>,
    pub typed_edges: Vec<(usize, usize, EdgeType)>,
}

impl GraphDump {
    pub fn new(id: &str, graph: &WordGraph) -> Self {
        Self {
            id: id.to_string(),
            nodes: graph.nodes.words.clone(),
            typed_edges: graph.typed_edges.iter().map(|e| (e.u, e.v, e.kind)).collect(),
        }
    }
}

/// Corpus averages over one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub reports: usize,
    /// Mean findings length in tokens.
    pub afl: f64,
    /// Mean findings length in sentences.
    pub afs: f64,
    /// Mean typed edges per graph, self-loops excluded.
    pub afe: f64,
    /// Mean impression length in tokens.
    pub ail: f64,
    /// Mean impression length in sentences.
    pub ais: f64,
}

pub fn count_sentences(tokens: &[String]) -> usize {
    let mut count = 0;
    let mut open = false;
    for t in tokens {
        if matches!(t.as_str(), "." | "?" | "!") {
            if open {
                count += 1;
            }
            open = false;
        } else {
            open = true;
        }
    }
    count + usize::from(open)
}

pub fn graph_stats(reports: &[Report], edge_types: EdgeTypeSet) -> Result<SplitStats> {
    if reports.is_empty() {
        return Err(CoreError::Data("statistics of an empty split".into()));
    }
    let n = reports.len() as f64;
    let mean = |f: &dyn Fn(&Report) -> usize| reports.iter().map(f).sum::<usize>() as f64 / n;
    Ok(SplitStats {
        reports: reports.len(),
        afl: mean(&|r| r.findings.len()),
        afs: mean(&|r| count_sentences(&r.findings)),
        afe: mean(&|r| build_graph(r, edge_types).typed_edges.len()),
        ail: mean(&|r| r.impression.len()),
        ais: mean(&|r| count_sentences(&r.impression)),
    })
}
