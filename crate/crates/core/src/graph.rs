//! State graphs over normalized executions.
//!
//! A state is identified by a 128-bit digest of `(accessor set, mutator list)`:
//! accessors are recorded as a set, so re-reading or reading in another order
//! does not change the state, while mutators are kept in order. Before
//! hashing, each prefix is canonicalized so that calls from different
//! domains, which commute, appear in domain-name order.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::normalize::{NormalizedCall, NormalizedExecution, Normalizer, RuleSet, SemanticKind, BARRIER_DOMAIN};
use crate::trace::TraceCorpus;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateKey(pub u128);

impl StateKey {
    pub fn from_rendering(rendering: &str) -> Self {
        StateKey(xxhash_rust::xxh3::xxh3_128(rendering.as_bytes()))
    }

    pub fn root() -> Self {
        StateKey::from_rendering(&StateRendering::default().render())
    }
}

impl fmt::Display for StateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:032x}", self.0)
    }
}

impl FromStr for StateKey {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s.len() != 32 {
            return Err(format!("state digest {s:?} is not 32 hex digits"));
        }
        u128::from_str_radix(s, 16)
            .map(StateKey)
            .map_err(|_| format!("state digest {s:?} is not hexadecimal"))
    }
}

impl Serialize for StateKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for StateKey {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn render_call(call: &NormalizedCall) -> String {
    format!(
        "{}:{}{}:{}{}",
        call.tool_id.len(),
        call.tool_id,
        call.args_canonical.len(),
        call.args_canonical,
        if call.loop_collapsed { "L" } else { "-" }
    )
}

/// Canonical text from which a state digest is computed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct StateRendering {
    gets: BTreeSet<String>,
    actions: Vec<String>,
}

impl StateRendering {
    fn push(&mut self, call: &NormalizedCall) {
        match call.kind {
            SemanticKind::Annotator => {}
            SemanticKind::Accessor => {
                self.gets.insert(render_call(call));
            }
            SemanticKind::Mutator => self.actions.push(render_call(call)),
        }
    }

    fn render(&self) -> String {
        let mut out = format!("G{}[", self.gets.len());
        for g in &self.gets {
            out.push_str(g);
            out.push(';');
        }
        out.push_str(&format!("]A{}[", self.actions.len()));
        for a in &self.actions {
            out.push_str(a);
            out.push(';');
        }
        out.push(']');
        out
    }
}

/// Canonical text of the state a call sequence reaches in a merged graph,
/// ignoring repeat visits: accessors as a set, mutators as a list after
/// domain commutation. Annotators are ignored.
pub fn state_rendering(prefix: &[NormalizedCall]) -> String {
    let mut r = StateRendering::default();
    for call in &canonicalize_prefix(prefix) {
        r.push(call);
    }
    r.render()
}

/// Digest of [`state_rendering`].
pub fn state_key(prefix: &[NormalizedCall]) -> StateKey {
    StateKey::from_rendering(&state_rendering(prefix))
}

/// Key of the `visit`-th arrival (1-based) at a state within one execution.
pub fn occurrence_key(rendering: &str, visit: usize) -> StateKey {
    if visit <= 1 {
        StateKey::from_rendering(rendering)
    } else {
        StateKey::from_rendering(&format!("{rendering}#{}", visit - 1))
    }
}

/// Incremental domain-commutativity canonicalizer.
///
/// Calls from different domains commute, so a sequence is brought to normal
/// form by a stable sort on domain name: same-domain calls keep their
/// relative order. Barrier-domain calls commute with nothing and split the
/// sequence into independently sorted segments.
#[derive(Debug, Clone, Default)]
struct Canonicalizer {
    closed: Vec<NormalizedCall>,
    segment: Vec<NormalizedCall>,
}

impl Canonicalizer {
    fn push(&mut self, call: NormalizedCall) {
        if call.domain == BARRIER_DOMAIN {
            self.closed.append(&mut self.segment);
            self.closed.push(call);
            return;
        }
        let at = self.segment.partition_point(|c| c.domain <= call.domain);
        self.segment.insert(at, call);
    }

    fn finish(mut self) -> Vec<NormalizedCall> {
        self.closed.append(&mut self.segment);
        self.closed
    }
}

pub fn canonicalize_prefix(prefix: &[NormalizedCall]) -> Vec<NormalizedCall> {
    let mut c = Canonicalizer::default();
    for call in prefix {
        c.push(call.clone());
    }
    c.finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphMode {
    Disjoint,
    #[default]
    Merged,
}

impl FromStr for GraphMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "disjoint" => Ok(GraphMode::Disjoint),
            "merged" => Ok(GraphMode::Merged),
            other => Err(format!("unknown graph mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateNode {
    pub key: StateKey,
    /// Call that produced this state; `None` for the root.
    pub label: Option<NormalizedCall>,
    pub depth_min: usize,
    pub visitors: BTreeSet<String>,
}

impl StateNode {
    pub fn is_root(&self) -> bool {
        self.label.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub from: StateKey,
    pub to: StateKey,
    #[serde(rename = "w")]
    pub weight: u64,
    pub call: NormalizedCall,
}

/// The states one execution passes through; `path[k - 1]` is the state after `k` calls.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Traversal {
    pub task_id: String,
    pub path: Vec<StateKey>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergedStateGraph {
    pub mode: GraphMode,
    pub root: StateKey,
    pub nodes: BTreeMap<StateKey, StateNode>,
    pub edges: BTreeMap<(StateKey, StateKey), Edge>,
    pub traversals: Vec<Traversal>,
    /// Number of states an execution reached twice, split by an occurrence counter.
    pub repeated_states: usize,
}

impl MergedStateGraph {
    pub fn empty(mode: GraphMode) -> Self {
        let root = StateKey::root();
        let mut nodes = BTreeMap::new();
        nodes.insert(
            root,
            StateNode {
                key: root,
                label: None,
                depth_min: 0,
                visitors: BTreeSet::new(),
            },
        );
        MergedStateGraph {
            mode,
            root,
            nodes,
            edges: BTreeMap::new(),
            traversals: Vec::new(),
            repeated_states: 0,
        }
    }

    pub fn node(&self, key: &StateKey) -> Option<&StateNode> {
        self.nodes.get(key)
    }

    pub fn weight(&self, from: StateKey, to: StateKey) -> u64 {
        self.edges.get(&(from, to)).map_or(0, |e| e.weight)
    }

    /// Outgoing edges of `key`, ordered by target digest.
    pub fn children(&self, key: StateKey) -> impl Iterator<Item = &Edge> {
        self.edges
            .range((key, StateKey(0))..=(key, StateKey(u128::MAX)))
            .map(|(_, e)| e)
    }

    pub fn out_weight(&self, key: StateKey) -> u64 {
        self.children(key).map(|e| e.weight).sum()
    }

    /// Nodes sorted by `(depth_min, digest)`, the export order.
    pub fn ordered_nodes(&self) -> Vec<&StateNode> {
        let mut nodes: Vec<&StateNode> = self.nodes.values().collect();
        nodes.sort_by_key(|n| (n.depth_min, n.key));
        nodes
    }

    fn ordered_edges(&self) -> Vec<&Edge> {
        let rank: HashMap<StateKey, usize> = self
            .ordered_nodes()
            .iter()
            .enumerate()
            .map(|(i, n)| (n.key, i))
            .collect();
        let mut edges: Vec<&Edge> = self.edges.values().collect();
        edges.sort_by_key(|e| (rank[&e.from], rank[&e.to]));
        edges
    }

    fn recompute_depths(&mut self) {
        let mut depth: HashMap<StateKey, usize> = HashMap::new();
        let mut queue = VecDeque::from([self.root]);
        depth.insert(self.root, 0);
        while let Some(k) = queue.pop_front() {
            let d = depth[&k];
            let next: Vec<StateKey> = self.children(k).map(|e| e.to).collect();
            for child in next {
                if let std::collections::hash_map::Entry::Vacant(v) = depth.entry(child) {
                    v.insert(d + 1);
                    queue.push_back(child);
                }
            }
        }
        for node in self.nodes.values_mut() {
            node.depth_min = depth.get(&node.key).copied().unwrap_or(usize::MAX);
        }
    }
}

/// Accumulates executions into a state graph.
#[derive(Debug)]
pub struct GraphBuilder {
    graph: MergedStateGraph,
    renderings: HashMap<StateKey, String>,
    executions: usize,
}

impl GraphBuilder {
    pub fn new(mode: GraphMode) -> Self {
        let graph = MergedStateGraph::empty(mode);
        let mut renderings = HashMap::new();
        renderings.insert(graph.root, StateRendering::default().render());
        GraphBuilder {
            graph,
            renderings,
            executions: 0,
        }
    }

    fn intern(&mut self, rendering: String) -> Result<StateKey> {
        let key = StateKey::from_rendering(&rendering);
        match self.renderings.get(&key) {
            Some(existing) if *existing != rendering => {
                Err(Error::Internal(format!("state digest collision on {key}")))
            }
            Some(_) => Ok(key),
            None => {
                self.renderings.insert(key, rendering);
                Ok(key)
            }
        }
    }

    pub fn add_execution(&mut self, task_id: &str, calls: &[NormalizedCall]) -> Result<()> {
        let salt = self.executions;
        self.executions += 1;

        let mut canon = Canonicalizer::default();
        let mut closed = StateRendering::default();
        let mut seen: HashMap<StateKey, usize> = HashMap::new();
        let mut path = Vec::with_capacity(calls.len());
        let mut prev = self.graph.root;

        for (j, call) in calls.iter().enumerate() {
            let rendering = match self.graph.mode {
                GraphMode::Disjoint => {
                    format!("D{salt}:{}:{task_id}#{}", task_id.len(), j + 1)
                }
                GraphMode::Merged => {
                    let before = canon.closed.len();
                    canon.push(call.clone());
                    for c in &canon.closed[before..] {
                        closed.push(c);
                    }
                    let mut r = closed.clone();
                    for c in &canon.segment {
                        r.push(c);
                    }
                    r.render()
                }
            };
            let mut key = self.intern(rendering.clone())?;
            let occurrence = seen.entry(key).or_insert(0);
            *occurrence += 1;
            if *occurrence > 1 {
                let n = *occurrence - 1;
                self.graph.repeated_states += 1;
                key = self.intern(format!("{rendering}#{n}"))?;
                seen.insert(key, 1);
            }

            let node = self.graph.nodes.entry(key).or_insert_with(|| StateNode {
                key,
                label: Some(call.clone()),
                depth_min: j + 1,
                visitors: BTreeSet::new(),
            });
            node.visitors.insert(task_id.to_string());
            if let Some(label) = &mut node.label {
                if call < label {
                    *label = call.clone();
                }
            }
            let edge = self.graph.edges.entry((prev, key)).or_insert_with(|| Edge {
                from: prev,
                to: key,
                weight: 0,
                call: call.clone(),
            });
            edge.weight += 1;
            if *call < edge.call {
                edge.call = call.clone();
            }
            path.push(key);
            prev = key;
        }
        self.graph.traversals.push(Traversal {
            task_id: task_id.to_string(),
            path,
        });
        Ok(())
    }

    pub fn finish(mut self) -> MergedStateGraph {
        self.graph.recompute_depths();
        self.graph
    }
}

pub fn build_from_normalized(executions: &[NormalizedExecution], mode: GraphMode) -> Result<MergedStateGraph> {
    let mut builder = GraphBuilder::new(mode);
    for exec in executions {
        builder.add_execution(&exec.task_id, &exec.calls)?;
    }
    Ok(builder.finish())
}

pub fn build_graph(corpus: &TraceCorpus, rules: &RuleSet, mode: GraphMode) -> Result<MergedStateGraph> {
    let normalizer = Normalizer::new(rules)?;
    let view = normalizer.normalize_corpus(corpus)?;
    build_from_normalized(&view, mode)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Dot,
    Json,
}

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

pub fn to_dot(graph: &MergedStateGraph) -> String {
    let mut out = String::from("digraph states {\n  rankdir=TB;\n  node [shape=box];\n");
    for node in graph.ordered_nodes() {
        let label = match &node.label {
            None => "ROOT".to_string(),
            Some(call) => format!(
                "{}\\nd={} v={}",
                dot_escape(&call.to_string()),
                node.depth_min,
                node.visitors.len()
            ),
        };
        out.push_str(&format!("  \"{}\" [label=\"{}\"];\n", node.key, label));
    }
    for edge in graph.ordered_edges() {
        out.push_str(&format!(
            "  \"{}\" -> \"{}\" [label=\"w={}\", tooltip=\"{}\"];\n",
            edge.from,
            edge.to,
            edge.weight,
            dot_escape(&edge.call.to_string())
        ));
    }
    out.push_str("}\n");
    out
}

fn node_value(node: &StateNode) -> Value {
    json!({
        "key": node.key,
        "label": node.label,
        "depth_min": node.depth_min,
        "visitors": node.visitors,
    })
}

fn edge_value(edge: &Edge) -> Value {
    json!({
        "from": edge.from,
        "to": edge.to,
        "w": edge.weight,
        "call": edge.call,
    })
}

pub fn to_json_value(graph: &MergedStateGraph) -> Value {
    json!({
        "mode": graph.mode,
        "root": graph.root,
        "repeated_states": graph.repeated_states,
        "nodes": graph.ordered_nodes().into_iter().map(node_value).collect::<Vec<_>>(),
        "edges": graph.ordered_edges().into_iter().map(edge_value).collect::<Vec<_>>(),
        "traversals": graph.traversals,
    })
}

pub fn to_json(graph: &MergedStateGraph) -> String {
    let mut s = serde_json::to_string_pretty(&to_json_value(graph)).expect("graph serializes");
    s.push('\n');
    s
}

pub fn export(graph: &MergedStateGraph, format: ExportFormat, mut out: impl Write) -> std::io::Result<()> {
    let text = match format {
        ExportFormat::Dot => to_dot(graph),
        ExportFormat::Json => to_json(graph),
    };
    out.write_all(text.as_bytes())
}

/// Breadth-first view of at most `limit` nodes, expanding heavier edges first.
pub fn truncated_json_value(graph: &MergedStateGraph, limit: usize) -> Value {
    let total = graph.nodes.len();
    let limit = limit.max(1);
    let mut kept: BTreeSet<StateKey> = BTreeSet::new();
    let mut queue = VecDeque::from([graph.root]);
    kept.insert(graph.root);
    'bfs: while let Some(k) = queue.pop_front() {
        let mut children: Vec<&Edge> = graph.children(k).collect();
        children.sort_by(|a, b| b.weight.cmp(&a.weight).then(a.to.cmp(&b.to)));
        for e in children {
            if kept.len() >= limit {
                break 'bfs;
            }
            if kept.insert(e.to) {
                queue.push_back(e.to);
            }
        }
    }
    let nodes: Vec<Value> = graph
        .ordered_nodes()
        .into_iter()
        .filter(|n| kept.contains(&n.key))
        .map(node_value)
        .collect();
    let edges: Vec<Value> = graph
        .ordered_edges()
        .into_iter()
        .filter(|e| kept.contains(&e.from) && kept.contains(&e.to))
        .map(edge_value)
        .collect();
    json!({
        "mode": graph.mode,
        "root": graph.root,
        "truncated": kept.len() < total,
        "total_nodes": total,
        "nodes": nodes,
        "edges": edges,
    })
}

#[derive(Deserialize)]
struct GraphFile {
    mode: GraphMode,
    root: StateKey,
    #[serde(default)]
    repeated_states: usize,
    nodes: Vec<StateNode>,
    edges: Vec<Edge>,
    #[serde(default)]
    traversals: Vec<Traversal>,
}

/// Re-imports a graph written by [`to_json`].
pub fn from_json(text: &str) -> Result<MergedStateGraph> {
    let file: GraphFile = serde_json::from_str(text).map_err(|e| Error::GraphFormat(e.to_string()))?;
    let mut nodes = BTreeMap::new();
    for node in file.nodes {
        if nodes.insert(node.key, node).is_some() {
            return Err(Error::GraphFormat("duplicate node key".into()));
        }
    }
    if !nodes.contains_key(&file.root) {
        return Err(Error::GraphFormat("root node missing".into()));
    }
    let mut edges = BTreeMap::new();
    for edge in file.edges {
        if !nodes.contains_key(&edge.from) || !nodes.contains_key(&edge.to) {
            return Err(Error::GraphFormat(format!(
                "edge {} -> {} references an unknown node",
                edge.from, edge.to
            )));
        }
        if edge.weight == 0 {
            return Err(Error::GraphFormat("edge weight must be at least 1".into()));
        }
        edges.insert((edge.from, edge.to), edge);
    }
    Ok(MergedStateGraph {
        mode: file.mode,
        root: file.root,
        nodes,
        edges,
        traversals: file.traversals,
        repeated_states: file.repeated_states,
    })
}
