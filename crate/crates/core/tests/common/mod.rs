//! Slow reference implementations used as test oracles.
//!
//! States are computed per prefix from scratch: the accessor set plus a
//! representative of the mutator sequence's commutation class, found by
//! exhaustively swapping adjacent calls from different, non-barrier domains.
//! Graph digests are only used to order ties the way the extractor does.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::path::PathBuf;

use rand::seq::IndexedRandom;
use rand::Rng;
use tracefold_core::extract::MetaTool;
use tracefold_core::graph::{occurrence_key, state_rendering, StateKey};
use tracefold_core::normalize::{NormalizedCall, NormalizedExecution, SemanticKind, BARRIER_DOMAIN};

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn label(c: &NormalizedCall) -> String {
    format!("{}|{}({})|{}", c.domain, c.tool_id, c.args_canonical, c.loop_collapsed)
}

/// Smallest member of the class of `seq` under swaps of adjacent calls from
/// different non-barrier domains.
fn class_representative(seq: Vec<NormalizedCall>) -> Vec<String> {
    let mut seen: HashSet<Vec<NormalizedCall>> = HashSet::new();
    let mut queue = VecDeque::from([seq.clone()]);
    seen.insert(seq);
    let mut best: Option<Vec<String>> = None;
    while let Some(cur) = queue.pop_front() {
        let labels: Vec<String> = cur.iter().map(label).collect();
        if best.as_ref().is_none_or(|b| labels < *b) {
            best = Some(labels);
        }
        for i in 0..cur.len().saturating_sub(1) {
            let (a, b) = (&cur[i], &cur[i + 1]);
            if a.domain != b.domain && a.domain != BARRIER_DOMAIN && b.domain != BARRIER_DOMAIN {
                let mut next = cur.clone();
                next.swap(i, i + 1);
                if seen.insert(next.clone()) {
                    queue.push_back(next);
                }
            }
        }
    }
    best.unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OracleState {
    gets: BTreeSet<String>,
    actions: Vec<String>,
}

pub fn oracle_state(prefix: &[NormalizedCall]) -> OracleState {
    let gets = prefix
        .iter()
        .filter(|c| c.kind == SemanticKind::Accessor)
        .map(label)
        .collect();
    let mutators = prefix
        .iter()
        .filter(|c| c.kind == SemanticKind::Mutator)
        .cloned()
        .collect();
    OracleState {
        gets,
        actions: class_representative(mutators),
    }
}

/// `(state, visit)` after each call of `calls`; visit counts arrivals at the
/// same state within the execution.
pub fn oracle_path(calls: &[NormalizedCall]) -> Vec<(OracleState, usize)> {
    let mut visits: HashMap<OracleState, usize> = HashMap::new();
    (1..=calls.len())
        .map(|k| {
            let s = oracle_state(&calls[..k]);
            let v = visits.entry(s.clone()).or_insert(0);
            *v += 1;
            (s, *v)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct NaiveGraph {
    pub root: StateKey,
    pub nodes: BTreeSet<StateKey>,
    /// weight and smallest call per edge
    pub edges: BTreeMap<(StateKey, StateKey), (u64, NormalizedCall)>,
    /// root first
    pub paths: Vec<Vec<StateKey>>,
}

/// Builds the merged graph one prefix at a time. Panics if two different
/// oracle states share a digest or one state gets two digests.
pub fn naive_graph(view: &[NormalizedExecution]) -> NaiveGraph {
    let root = StateKey::from_rendering(&state_rendering(&[]));
    let mut to_key: HashMap<(OracleState, usize), StateKey> = HashMap::new();
    let mut from_key: HashMap<StateKey, (OracleState, usize)> = HashMap::new();
    let mut g = NaiveGraph {
        root,
        nodes: BTreeSet::from([root]),
        edges: BTreeMap::new(),
        paths: Vec::new(),
    };
    for exec in view {
        let states = oracle_path(&exec.calls);
        let mut path = vec![root];
        for (k, node) in states.into_iter().enumerate() {
            let key = occurrence_key(&state_rendering(&exec.calls[..=k]), node.1);
            assert_ne!(key, root, "non-root state hashed to the root");
            let known = to_key.entry(node.clone()).or_insert(key);
            assert_eq!(*known, key, "one oracle state, two digests");
            let back = from_key.entry(key).or_insert(node.clone());
            assert_eq!(*back, node, "digest shared by two oracle states");
            g.nodes.insert(key);
            let call = exec.calls[k].clone();
            let prev = *path.last().unwrap();
            let e = g.edges.entry((prev, key)).or_insert((0, call.clone()));
            e.0 += 1;
            if call < e.1 {
                e.1 = call;
            }
            path.push(key);
        }
        g.paths.push(path);
    }
    g
}

impl NaiveGraph {
    pub fn depths(&self) -> HashMap<StateKey, usize> {
        let mut depth = HashMap::from([(self.root, 0)]);
        let mut queue = VecDeque::from([self.root]);
        while let Some(n) = queue.pop_front() {
            for &(from, to) in self.edges.keys() {
                if from == n && !depth.contains_key(&to) {
                    depth.insert(to, depth[&n] + 1);
                    queue.push_back(to);
                }
            }
        }
        depth
    }

    pub fn out_total(&self, n: StateKey) -> u64 {
        self.edges
            .iter()
            .filter(|((f, _), _)| *f == n)
            .map(|(_, (w, _))| *w)
            .sum()
    }

    pub fn sinks(&self) -> usize {
        if self.edges.is_empty() {
            return 0;
        }
        self.nodes
            .iter()
            .filter(|n| !self.edges.keys().any(|(f, _)| f == *n))
            .count()
    }

    /// Executions whose path walks every node of `chain` consecutively.
    pub fn support(&self, chain: &[StateKey]) -> u64 {
        self.paths
            .iter()
            .filter(|p| p.windows(chain.len()).any(|w| w == chain))
            .count() as u64
    }
}

/// Duplication fraction numerators by brute-force pairwise comparison.
pub fn naive_curve(view: &[NormalizedExecution], max_step: usize) -> Vec<(usize, usize)> {
    let paths: Vec<Vec<(OracleState, usize)>> = view.iter().map(|e| oracle_path(&e.calls)).collect();
    (1..=max_step)
        .map(|k| {
            let shared = (0..paths.len())
                .filter(|&i| {
                    paths[i].len() >= k
                        && (0..paths.len()).any(|j| j != i && paths[j].len() >= k && paths[j][k - 1] == paths[i][k - 1])
                })
                .count();
            (shared, paths.len())
        })
        .collect()
}

fn fused(tool: &MetaTool) -> NormalizedCall {
    let domains: BTreeSet<&str> = tool.chain.iter().map(|c| c.domain.as_str()).collect();
    NormalizedCall {
        tool_id: tool.name.clone(),
        args_canonical: tool
            .parameters
            .iter()
            .map(|p| format!("{p}={{{p}}}"))
            .collect::<Vec<_>>()
            .join(","),
        domain: if domains.len() == 1 {
            domains.into_iter().next().unwrap().to_string()
        } else {
            BARRIER_DOMAIN.to_string()
        },
        kind: SemanticKind::Mutator,
        loop_collapsed: false,
    }
}

pub fn naive_rewrite(view: &[NormalizedExecution], tools: &[MetaTool]) -> Vec<NormalizedExecution> {
    let mut out: Vec<NormalizedExecution> = view.to_vec();
    for tool in tools {
        let f = fused(tool);
        let k = tool.chain.len();
        for e in &mut out {
            let mut next = Vec::new();
            let mut i = 0;
            while i < e.calls.len() {
                if i + k <= e.calls.len() && e.calls[i..i + k] == tool.chain[..] {
                    next.push(f.clone());
                    i += k;
                } else {
                    next.push(e.calls[i].clone());
                    i += 1;
                }
            }
            e.calls = next;
        }
    }
    out
}

fn placeholders(chain: &[NormalizedCall]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for c in chain {
        let s = &c.args_canonical;
        let mut rest = s.as_str();
        while let Some(open) = rest.find('{') {
            let after = &rest[open + 1..];
            match after.find('}') {
                Some(close) => {
                    let name = &after[..close];
                    if !name.is_empty()
                        && name.chars().all(|ch| ch.is_ascii_uppercase() || ch == '_')
                        && !out.iter().any(|p| p == name)
                    {
                        out.push(name.to_string());
                    }
                    rest = &after[close..];
                }
                None => break,
            }
        }
    }
    out
}

pub fn total_len(view: &[NormalizedExecution]) -> usize {
    view.iter().map(|e| e.calls.len()).sum()
}

/// Rebuild-everything extraction: every round rebuilds the graph from the
/// original view rewritten by all accepted tools.
pub fn naive_extract(
    view: &[NormalizedExecution],
    threshold: u64,
    min_chain_calls: usize,
) -> (Vec<MetaTool>, Vec<NormalizedExecution>) {
    let taken: HashSet<String> = view
        .iter()
        .flat_map(|e| e.calls.iter().map(|c| c.tool_id.clone()))
        .collect();
    let mut tools: Vec<MetaTool> = Vec::new();
    let mut blacklist: HashSet<(StateKey, StateKey)> = HashSet::new();
    loop {
        let current = naive_rewrite(view, &tools);
        let g = naive_graph(&current);
        let depth = g.depths();
        let mut pairs: Vec<(u64, usize, StateKey, StateKey)> = g
            .edges
            .iter()
            .filter(|(k, (w, _))| *w >= threshold && !blacklist.contains(*k))
            .map(|(&(f, t), (w, _))| (*w, depth[&f], f, t))
            .collect();
        pairs.sort_by(|a, b| {
            b.0.cmp(&a.0)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
                .then(a.3.cmp(&b.3))
        });
        let Some(&(_, _, from, to)) = pairs.first() else {
            break;
        };

        let mut nodes = vec![from, to];
        loop {
            let tail = *nodes.last().unwrap();
            let total = g.out_total(tail);
            let next = g
                .edges
                .iter()
                .find(|((f, _), (w, _))| *f == tail && 2 * *w > total && *w >= threshold)
                .map(|((_, t), _)| *t);
            match next {
                Some(n) => nodes.push(n),
                None => break,
            }
        }
        while nodes.len() > 2 && g.support(&nodes) < threshold {
            nodes.pop();
        }
        let support = g.support(&nodes);
        let chain: Vec<NormalizedCall> = nodes.windows(2).map(|w| g.edges[&(w[0], w[1])].1.clone()).collect();
        if support < threshold || chain.len() < min_chain_calls {
            blacklist.insert((from, to));
            continue;
        }

        let mut k = tools.len() + 1;
        while taken.contains(&format!("mt_{k}")) {
            k += 1;
        }
        let nesting_depth = chain
            .iter()
            .filter_map(|c| tools.iter().find(|t| fused(t) == *c))
            .map(|t| t.nesting_depth + 1)
            .max()
            .unwrap_or(0);
        let candidate = MetaTool {
            name: format!("mt_{k}"),
            parameters: placeholders(&chain),
            chain,
            support,
            nesting_depth,
        };
        let mut next_tools = tools.clone();
        next_tools.push(candidate);
        if total_len(&naive_rewrite(view, &next_tools)) < total_len(&current) {
            tools = next_tools;
            blacklist.clear();
        } else {
            blacklist.insert((from, to));
        }
    }
    let rewritten = naive_rewrite(view, &tools);
    (tools, rewritten)
}

/// A random corpus over a small alphabet whose tools get random kinds and domains.
pub fn random_view(
    rng: &mut impl Rng,
    max_execs: usize,
    max_len: usize,
    max_alphabet: usize,
) -> Vec<NormalizedExecution> {
    let alphabet = rng.random_range(2..=max_alphabet);
    let domains = ["A", "B", "C"];
    let tools: Vec<NormalizedCall> = (0..alphabet)
        .map(|i| {
            let kind = if rng.random_bool(0.25) {
                SemanticKind::Accessor
            } else {
                SemanticKind::Mutator
            };
            NormalizedCall {
                tool_id: format!("t{i}"),
                args_canonical: if rng.random_bool(0.3) {
                    "id={ID}".into()
                } else {
                    String::new()
                },
                domain: domains.choose(rng).unwrap().to_string(),
                kind,
                loop_collapsed: rng.random_bool(0.1),
            }
        })
        .collect();
    let n = rng.random_range(1..=max_execs);
    (0..n)
        .map(|i| {
            let len = rng.random_range(0..=max_len);
            let calls = (0..len).map(|_| tools.choose(rng).unwrap().clone()).collect();
            NormalizedExecution::new(format!("e{i}"), calls)
        })
        .collect()
}

/// Every contiguous call chain of length >= 2 that occurs in at least
/// `threshold` executions and cannot be extended on either side without
/// dropping below it.
pub fn maximal_frequent_chains(view: &[NormalizedExecution], threshold: u64) -> Vec<Vec<NormalizedCall>> {
    let support = |chain: &[NormalizedCall]| {
        view.iter()
            .filter(|e| e.calls.windows(chain.len()).any(|w| w == chain))
            .count() as u64
    };
    let mut frequent: BTreeSet<Vec<NormalizedCall>> = BTreeSet::new();
    for e in view {
        for i in 0..e.calls.len() {
            for j in i + 2..=e.calls.len() {
                let c = e.calls[i..j].to_vec();
                if !frequent.contains(&c) && support(&c) >= threshold {
                    frequent.insert(c);
                }
            }
        }
    }
    frequent
        .iter()
        .filter(|c| {
            !frequent
                .iter()
                .any(|d| d.len() > c.len() && d.windows(c.len()).any(|w| w == c.as_slice()))
        })
        .cloned()
        .collect()
}
