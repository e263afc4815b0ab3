//! Greedy meta-tool extraction from a merged state graph.
//!
//! Each round takes the heaviest eligible edge, grows it into a chain by
//! repeatedly following the child that carries a strict majority of its
//! parent's outgoing weight, and, if the chain is long enough, turns it into
//! a meta-tool. The working graph is then rebuilt from the original
//! executions with every accepted meta-tool fused in, and the search repeats
//! until no edge of weight `>= threshold` is left to try.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::graph::{build_from_normalized, GraphMode, MergedStateGraph, StateKey};
use crate::normalize::{Matcher, NormalizedCall, NormalizedExecution, Normalizer, SemanticKind, BARRIER_DOMAIN};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractionConfig {
    /// Minimum number of executions an edge must carry to seed or extend a chain.
    pub threshold: u64,
    pub max_meta_tools: Option<usize>,
    pub min_chain_calls: usize,
    /// Tool-id matchers a chain's calls must all satisfy; empty allows everything.
    pub allow: Vec<String>,
}

impl ExtractionConfig {
    pub fn new(threshold: u64) -> Self {
        ExtractionConfig {
            threshold,
            max_meta_tools: None,
            min_chain_calls: 2,
            allow: Vec::new(),
        }
    }

    /// Uses the default threshold for a corpus of `executions` runs.
    pub fn for_corpus(executions: usize) -> Self {
        ExtractionConfig::new(default_threshold(executions))
    }

    pub fn validate(&self) -> Result<()> {
        if self.threshold < 1 {
            return Err(Error::Config("threshold must be at least 1".into()));
        }
        if self.min_chain_calls < 2 {
            return Err(Error::Config("min_chain_calls must be at least 2".into()));
        }
        if self.max_meta_tools == Some(0) {
            return Err(Error::Config("max_meta_tools must be positive when set".into()));
        }
        for spec in &self.allow {
            Matcher::compile(spec).map_err(|e| Error::Config(format!("allow {spec:?}: {e}")))?;
        }
        Ok(())
    }
}

/// `max(2, ceil(0.05 * executions))`.
pub fn default_threshold(executions: usize) -> u64 {
    let five_pct = (executions as u64 * 5).div_ceil(100);
    five_pct.max(2)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MetaTool {
    pub name: String,
    pub chain: Vec<NormalizedCall>,
    pub parameters: Vec<String>,
    pub support: u64,
    /// 0 when the chain holds only plain calls, otherwise one more than the
    /// deepest fused call it contains.
    pub nesting_depth: usize,
}

impl MetaTool {
    /// The single call that replaces an occurrence of the chain.
    pub fn fused_call(&self) -> NormalizedCall {
        let first = self.chain.first().map(|c| c.domain.as_str());
        let domain = match first {
            Some(d) if self.chain.iter().all(|c| c.domain == d) => d.to_string(),
            _ => BARRIER_DOMAIN.to_string(),
        };
        let args = self
            .parameters
            .iter()
            .map(|p| format!("{p}={{{p}}}"))
            .collect::<Vec<_>>()
            .join(",");
        NormalizedCall {
            tool_id: self.name.clone(),
            args_canonical: args,
            domain,
            kind: SemanticKind::Mutator,
            loop_collapsed: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StatePair {
    pub from: StateKey,
    pub to: StateKey,
    pub weight: u64,
    pub depth: usize,
}

/// Edges with weight `>= threshold`, heaviest first, then shallowest, then by digest.
pub fn extract_state_pairs(
    graph: &MergedStateGraph,
    threshold: u64,
    blacklist: &HashSet<(StateKey, StateKey)>,
) -> Vec<StatePair> {
    let mut pairs: Vec<StatePair> = graph
        .edges
        .values()
        .filter(|e| e.weight >= threshold && !blacklist.contains(&(e.from, e.to)))
        .map(|e| StatePair {
            from: e.from,
            to: e.to,
            weight: e.weight,
            depth: graph.nodes.get(&e.from).map_or(usize::MAX, |n| n.depth_min),
        })
        .collect();
    pairs.sort_by(|a, b| {
        b.weight
            .cmp(&a.weight)
            .then(a.depth.cmp(&b.depth))
            .then(a.from.cmp(&b.from))
            .then(a.to.cmp(&b.to))
    });
    pairs
}

/// The child `z` of `node` with `w(node, z) > total / 2` and `w(node, z) >= threshold`.
pub fn select_child(graph: &MergedStateGraph, node: StateKey, threshold: u64) -> Option<StateKey> {
    let total = graph.out_weight(node);
    graph
        .children(node)
        .find(|e| 2 * e.weight > total && e.weight >= threshold)
        .map(|e| e.to)
}

/// Distinct `{NAME}` placeholders in chain arguments, in first-occurrence order.
pub fn lift_parameters(chain: &[NormalizedCall]) -> Vec<String> {
    let token = regex::Regex::new(r"\{([A-Z_]+)\}").expect("static regex");
    let mut seen = BTreeSet::new();
    let mut params = Vec::new();
    for call in chain {
        for cap in token.captures_iter(&call.args_canonical) {
            let name = cap[1].to_string();
            if seen.insert(name.clone()) {
                params.push(name);
            }
        }
    }
    params
}

fn rewrite_one(calls: Vec<NormalizedCall>, tool: &MetaTool, fused: &NormalizedCall) -> Vec<NormalizedCall> {
    if tool.chain.is_empty() || calls.len() < tool.chain.len() {
        return calls;
    }
    let mut out = Vec::with_capacity(calls.len());
    let mut i = 0;
    while i < calls.len() {
        if calls[i..].starts_with(&tool.chain) {
            out.push(fused.clone());
            i += tool.chain.len();
        } else {
            out.push(calls[i].clone());
            i += 1;
        }
    }
    out
}

/// Applies the tools in order, each replacing its chain's leftmost
/// non-overlapping occurrences. A tool's chain is written over the calls left
/// by the tools before it, which is how nesting arises.
pub fn rewrite_calls(calls: &[NormalizedCall], tools: &[MetaTool]) -> Vec<NormalizedCall> {
    tools
        .iter()
        .fold(calls.to_vec(), |acc, t| rewrite_one(acc, t, &t.fused_call()))
}

pub fn rewrite_executions(view: &[NormalizedExecution], tools: &[MetaTool]) -> Vec<NormalizedExecution> {
    view.iter()
        .map(|e| NormalizedExecution::new(e.task_id.clone(), rewrite_calls(&e.calls, tools)))
        .collect()
}

/// Inverse of [`rewrite_calls`]: recursively expands fused calls.
pub fn expand_calls(calls: &[NormalizedCall], tools: &[MetaTool]) -> Vec<NormalizedCall> {
    let fused: BTreeMap<NormalizedCall, &MetaTool> = tools.iter().map(|t| (t.fused_call(), t)).collect();
    let mut out = Vec::new();
    let mut stack: Vec<NormalizedCall> = calls.iter().rev().cloned().collect();
    while let Some(call) = stack.pop() {
        match fused.get(&call) {
            Some(tool) => stack.extend(tool.chain.iter().rev().cloned()),
            None => out.push(call),
        }
    }
    out
}

pub fn total_length(view: &[NormalizedExecution]) -> usize {
    view.iter().map(|e| e.calls.len()).sum()
}

/// Rebuilds the graph from `view` with every tool in `tools` fused in.
pub fn compress_graph(
    graph: &MergedStateGraph,
    tools: &[MetaTool],
    view: &[NormalizedExecution],
) -> Result<MergedStateGraph> {
    if tools.is_empty() {
        return Ok(graph.clone());
    }
    build_from_normalized(&rewrite_executions(view, tools), graph.mode)
}

/// One chain extension `from -> to`, with the numbers the majority test used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Extension {
    pub from: StateKey,
    pub to: StateKey,
    pub weight: u64,
    pub out_total: u64,
}

/// Record of one accepted meta-tool.
#[derive(Debug, Clone)]
pub struct ExtractionStep {
    pub tool: String,
    pub seed: StatePair,
    pub extensions: Vec<Extension>,
    /// Working graph the chain was selected from.
    pub snapshot: MergedStateGraph,
    pub length_before: usize,
    pub length_after: usize,
}

#[derive(Debug, Clone)]
pub struct Extraction {
    pub tools: Vec<MetaTool>,
    pub graph: MergedStateGraph,
    pub rewritten: Vec<NormalizedExecution>,
    pub steps: Vec<ExtractionStep>,
    /// Candidates discarded (too short, below threshold, filtered, or no gain).
    pub rejected: usize,
}

/// Number of traversals that walk the first `k` edges of `nodes`, for each `k`.
fn chain_support(graph: &MergedStateGraph, nodes: &[StateKey]) -> Vec<u64> {
    let edges = nodes.len() - 1;
    let mut support = vec![0u64; edges + 1];
    for t in &graph.traversals {
        let full: Vec<StateKey> = std::iter::once(graph.root).chain(t.path.iter().copied()).collect();
        let Some(start) = full.iter().position(|k| *k == nodes[0]) else {
            continue;
        };
        let matched = full[start..]
            .iter()
            .zip(nodes)
            .take_while(|(a, b)| a == b)
            .count()
            .saturating_sub(1);
        for s in support.iter_mut().take(matched + 1) {
            *s += 1;
        }
    }
    support
}

fn next_name(taken: &HashSet<String>, k: usize) -> String {
    let mut k = k;
    loop {
        let name = format!("mt_{k}");
        if !taken.contains(&name) {
            return name;
        }
        k += 1;
    }
}

fn nesting_depth(chain: &[NormalizedCall], tools: &[MetaTool]) -> usize {
    chain
        .iter()
        .filter_map(|c| tools.iter().find(|t| t.fused_call() == *c))
        .map(|t| t.nesting_depth + 1)
        .max()
        .unwrap_or(0)
}

pub fn extract_meta_tools(
    graph: &MergedStateGraph,
    view: &[NormalizedExecution],
    config: &ExtractionConfig,
) -> Result<Extraction> {
    config.validate()?;
    let threshold = config.threshold;
    let allow: Vec<Matcher> = config
        .allow
        .iter()
        .map(|s| Matcher::compile(s).expect("validated"))
        .collect();
    let mut taken: HashSet<String> = view
        .iter()
        .flat_map(|e| e.calls.iter().map(|c| c.tool_id.clone()))
        .collect();

    let mut working = graph.clone();
    let mut rewritten = view.to_vec();
    let mut length = total_length(view);
    let mut tools: Vec<MetaTool> = Vec::new();
    let mut steps = Vec::new();
    let mut blacklist: HashSet<(StateKey, StateKey)> = HashSet::new();
    let mut rejected = 0;

    loop {
        if config.max_meta_tools.is_some_and(|cap| tools.len() >= cap) {
            break;
        }
        let Some(seed) = extract_state_pairs(&working, threshold, &blacklist).first().copied() else {
            break;
        };

        let mut nodes = vec![seed.from, seed.to];
        let mut extensions = Vec::new();
        let mut tail = seed.to;
        while let Some(next) = select_child(&working, tail, threshold) {
            extensions.push(Extension {
                from: tail,
                to: next,
                weight: working.weight(tail, next),
                out_total: working.out_weight(tail),
            });
            nodes.push(next);
            tail = next;
        }

        // keep the longest prefix that enough executions walk end to end
        let support = chain_support(&working, &nodes);
        let edges = (1..support.len()).rev().find(|&k| support[k] >= threshold).unwrap_or(0);
        nodes.truncate(edges + 1);
        extensions.truncate(edges.saturating_sub(1));

        let chain: Vec<NormalizedCall> = nodes
            .windows(2)
            .map(|w| working.edges[&(w[0], w[1])].call.clone())
            .collect();
        let allowed = allow.is_empty()
            || chain
                .iter()
                .all(|c| tools.iter().any(|t| t.name == c.tool_id) || allow.iter().any(|m| m.is_match(&c.tool_id)));
        if chain.len() < config.min_chain_calls || !allowed {
            blacklist.insert((seed.from, seed.to));
            rejected += 1;
            continue;
        }

        let name = next_name(&taken, tools.len() + 1);
        let candidate = MetaTool {
            nesting_depth: nesting_depth(&chain, &tools),
            parameters: lift_parameters(&chain),
            support: support[edges],
            name: name.clone(),
            chain,
        };
        let mut next_tools = tools.clone();
        next_tools.push(candidate);
        let next_rewritten = rewrite_executions(view, &next_tools);
        let next_length = total_length(&next_rewritten);
        if next_length >= length {
            blacklist.insert((seed.from, seed.to));
            rejected += 1;
            continue;
        }

        let next_graph = build_from_normalized(&next_rewritten, working.mode)?;
        steps.push(ExtractionStep {
            tool: name.clone(),
            seed,
            extensions,
            snapshot: std::mem::replace(&mut working, next_graph),
            length_before: length,
            length_after: next_length,
        });
        taken.insert(name);
        tools = next_tools;
        rewritten = next_rewritten;
        length = next_length;
        blacklist.clear();
    }

    Ok(Extraction {
        tools,
        graph: working,
        rewritten,
        steps,
        rejected,
    })
}

/// Builds the merged graph for `view` and runs extraction on it.
pub fn extract_from_view(view: &[NormalizedExecution], config: &ExtractionConfig) -> Result<Extraction> {
    let graph = build_from_normalized(view, GraphMode::Merged)?;
    extract_meta_tools(&graph, view, config)
}

fn tool_value(tool: &MetaTool) -> Value {
    let chain: Vec<Value> = tool
        .chain
        .iter()
        .map(|c| {
            let mut v = json!({ "tool": c.tool_id, "args_template": c.args_canonical });
            if c.loop_collapsed {
                v["repeat"] = Value::Bool(true);
            }
            v
        })
        .collect();
    json!({
        "name": tool.name,
        "chain": chain,
        "parameters": tool.parameters,
        "support": tool.support,
        "nesting_depth": tool.nesting_depth,
    })
}

/// The meta-tool file format, in extraction order.
pub fn metatools_to_json(tools: &[MetaTool]) -> String {
    let list: Vec<Value> = tools.iter().map(tool_value).collect();
    let mut s = serde_json::to_string_pretty(&list).expect("meta-tools serialize");
    s.push('\n');
    s
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ChainEntry {
    tool: String,
    args_template: String,
    #[serde(default)]
    repeat: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ToolEntry {
    name: String,
    chain: Vec<ChainEntry>,
    parameters: Vec<String>,
    support: u64,
    nesting_depth: usize,
}

/// Reads a meta-tool file back. Domains and kinds are not stored, so they are
/// resolved with `normalizer`; a chain entry naming an earlier tool in the
/// file becomes that tool's fused call.
pub fn metatools_from_json(text: &str, normalizer: &Normalizer) -> Result<Vec<MetaTool>> {
    let entries: Vec<ToolEntry> = serde_json::from_str(text).map_err(|e| Error::MetaToolFormat(e.to_string()))?;
    let mut tools: Vec<MetaTool> = Vec::with_capacity(entries.len());
    for (i, entry) in entries.into_iter().enumerate() {
        let bad = |msg: String| Error::MetaToolFormat(format!("entry {i} ({}): {msg}", entry.name));
        if entry.name.is_empty() {
            return Err(bad("empty name".into()));
        }
        if tools.iter().any(|t| t.name == entry.name) {
            return Err(bad("duplicate name".into()));
        }
        if entry.chain.len() < 2 {
            return Err(bad("a chain needs at least two calls".into()));
        }
        let chain: Vec<NormalizedCall> = entry
            .chain
            .iter()
            .map(|c| {
                let mut call = match tools.iter().find(|t| t.name == c.tool) {
                    Some(inner) => inner.fused_call(),
                    None => NormalizedCall {
                        tool_id: c.tool.clone(),
                        args_canonical: c.args_template.clone(),
                        domain: normalizer.domain_of(&c.tool).to_string(),
                        kind: normalizer.kind_of(&c.tool),
                        loop_collapsed: false,
                    },
                };
                call.loop_collapsed = c.repeat;
                call
            })
            .collect();
        let params = lift_parameters(&chain);
        if params != entry.parameters {
            return Err(bad(format!(
                "parameters {:?} do not match the chain's {params:?}",
                entry.parameters
            )));
        }
        tools.push(MetaTool {
            name: entry.name,
            chain,
            parameters: entry.parameters,
            support: entry.support,
            nesting_depth: entry.nesting_depth,
        });
    }
    Ok(tools)
}
