//! Graph statistics, the step-k duplication curve and call-savings estimates.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::extract::{rewrite_executions, total_length, MetaTool};
use crate::graph::{MergedStateGraph, StateKey};
use crate::normalize::{NormalizedCall, NormalizedExecution};

/// Size of a state graph, in the columns a strategy comparison reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub nodes: usize,
    pub edges: usize,
    pub sinks: usize,
    /// `edges / (nodes - 1)`; the root has no in-edges and is left out.
    pub avg_in_degree: f64,
    /// Distinct call signatures labelling edges.
    pub endpoints: usize,
}

impl Eq for GraphStats {}

pub fn graph_stats(graph: &MergedStateGraph) -> GraphStats {
    let nodes = graph.nodes.len();
    let edges = graph.edges.len();
    let with_children: BTreeSet<StateKey> = graph.edges.keys().map(|(from, _)| *from).collect();
    let sinks = graph
        .nodes
        .keys()
        .filter(|k| !with_children.contains(k) && !(**k == graph.root && edges == 0))
        .count();
    let endpoints: BTreeSet<String> = graph.edges.values().map(|e| e.call.signature()).collect();
    GraphStats {
        nodes,
        edges,
        sinks,
        avg_in_degree: if nodes > 1 {
            edges as f64 / (nodes - 1) as f64
        } else {
            0.0
        },
        endpoints: endpoints.len(),
    }
}

const TABLE_HEADER: [&str; 6] = ["Strategy", "|V|", "|E|", "Sinks", "d_in", "Endpts"];

/// Aligned text table, one row per labelled stats entry.
pub fn stats_table(rows: &[(String, GraphStats)]) -> String {
    let cells: Vec<[String; 6]> = rows
        .iter()
        .map(|(label, s)| {
            [
                label.clone(),
                s.nodes.to_string(),
                s.edges.to_string(),
                s.sinks.to_string(),
                format!("{:.2}", s.avg_in_degree),
                s.endpoints.to_string(),
            ]
        })
        .collect();
    let mut widths = TABLE_HEADER.map(|h| h.chars().count());
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    let mut line = |row: &[String]| {
        let mut text = String::new();
        for (i, (c, w)) in row.iter().zip(widths).enumerate() {
            if i == 0 {
                let _ = write!(text, "{c:<w$}");
            } else {
                let _ = write!(text, "  {c:>w$}");
            }
        }
        out.push_str(text.trim_end());
        out.push('\n');
    };
    line(&TABLE_HEADER.map(String::from));
    for row in &cells {
        line(row);
    }
    out
}

pub fn stats_json(stats: &GraphStats) -> String {
    let mut s = serde_json::to_string_pretty(stats).expect("stats serialize");
    s.push('\n');
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DuplicationPoint {
    pub step: usize,
    /// Tasks whose state after `step` calls is reached by some other task too.
    pub shared: usize,
    pub total: usize,
    pub fraction: f64,
}

/// For each step `1..=max_step`, the share of tasks whose state after that
/// many calls coincides with another task's. Tasks that end earlier count
/// only in the denominator, so the curve is a lower bound.
pub fn duplication_curve(graph: &MergedStateGraph, max_step: usize) -> Vec<DuplicationPoint> {
    let total = graph.traversals.len();
    (1..=max_step)
        .map(|step| {
            let mut counts: HashMap<StateKey, usize> = HashMap::new();
            for t in &graph.traversals {
                if let Some(k) = t.path.get(step - 1) {
                    *counts.entry(*k).or_default() += 1;
                }
            }
            let shared = counts.values().filter(|&&n| n >= 2).sum();
            DuplicationPoint {
                step,
                shared,
                total,
                fraction: if total == 0 { 0.0 } else { shared as f64 / total as f64 },
            }
        })
        .collect()
}

/// Longest traversal, the natural `max_step` for a curve.
pub fn max_depth(graph: &MergedStateGraph) -> usize {
    graph.traversals.iter().map(|t| t.path.len()).max().unwrap_or(0)
}

pub fn curve_csv(points: &[DuplicationPoint]) -> String {
    let mut out = String::from("step,fraction\n");
    for p in points {
        let _ = writeln!(out, "{},{:.6}", p.step, p.fraction);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSavings {
    pub name: String,
    pub chain_len: usize,
    /// Occurrences in the rewritten corpus, counting those inside other meta-tools.
    pub traversals: u64,
    pub saved: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavingsReport {
    pub model: String,
    pub llm_calls_before: u64,
    pub llm_calls_after: u64,
    pub reduction_pct: f64,
    pub per_tool: Vec<ToolSavings>,
}

pub const SAVINGS_MODEL: &str = "estimate (ReAct model)";

fn count_uses(call: &NormalizedCall, fused: &HashMap<NormalizedCall, usize>, tools: &[MetaTool], counts: &mut [u64]) {
    if let Some(&i) = fused.get(call) {
        counts[i] += 1;
        for inner in &tools[i].chain {
            count_uses(inner, fused, tools, counts);
        }
    }
}

/// One LLM call per tool call; each use of a `k`-call meta-tool saves `k - 1`.
pub fn estimate_savings(tools: &[MetaTool], view: &[NormalizedExecution]) -> SavingsReport {
    let before = total_length(view) as u64;
    let rewritten = rewrite_executions(view, tools);
    let fused: HashMap<NormalizedCall, usize> = tools.iter().enumerate().map(|(i, t)| (t.fused_call(), i)).collect();
    let mut counts = vec![0u64; tools.len()];
    for exec in &rewritten {
        for call in &exec.calls {
            count_uses(call, &fused, tools, &mut counts);
        }
    }
    let per_tool: Vec<ToolSavings> = tools
        .iter()
        .zip(counts)
        .map(|(t, n)| ToolSavings {
            name: t.name.clone(),
            chain_len: t.chain.len(),
            traversals: n,
            saved: n * (t.chain.len() as u64).saturating_sub(1),
        })
        .collect();
    let saved: u64 = per_tool.iter().map(|t| t.saved).sum();
    SavingsReport {
        model: SAVINGS_MODEL.into(),
        llm_calls_before: before,
        llm_calls_after: before - saved,
        reduction_pct: if before == 0 {
            0.0
        } else {
            100.0 * saved as f64 / before as f64
        },
        per_tool,
    }
}

pub fn savings_json(report: &SavingsReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serialize");
    s.push('\n');
    s
}

pub fn savings_table(report: &SavingsReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{}", report.model);
    let _ = writeln!(out, "llm calls before: {}", report.llm_calls_before);
    let _ = writeln!(out, "llm calls after:  {}", report.llm_calls_after);
    let _ = writeln!(out, "reduction:        {:.2}%", report.reduction_pct);
    if !report.per_tool.is_empty() {
        let width = report.per_tool.iter().map(|t| t.name.len()).max().unwrap_or(4).max(4);
        let _ = writeln!(
            out,
            "{:<width$}  {:>5}  {:>10}  {:>6}",
            "tool", "len", "traversals", "saved"
        );
        for t in &report.per_tool {
            let _ = writeln!(
                out,
                "{:<width$}  {:>5}  {:>10}  {:>6}",
                t.name, t.chain_len, t.traversals, t.saved
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extract::{extract_from_view, lift_parameters, ExtractionConfig};
    use crate::graph::{build_from_normalized, GraphMode};
    use proptest::prelude::*;

    fn exec(id: &str, tools: &[&str]) -> NormalizedExecution {
        NormalizedExecution::new(id, tools.iter().map(|t| NormalizedCall::plain(*t)).collect())
    }

    fn merged(v: &[NormalizedExecution]) -> MergedStateGraph {
        build_from_normalized(v, GraphMode::Merged).unwrap()
    }

    #[test]
    fn single_chain_stats() {
        let s = graph_stats(&merged(&[exec("t", &["a", "b", "c"])]));
        assert_eq!((s.nodes, s.edges, s.sinks, s.endpoints), (4, 3, 1, 3));
        assert_eq!(s.avg_in_degree, 1.0);
    }

    #[test]
    fn empty_graph_stats() {
        let s = graph_stats(&merged(&[]));
        assert_eq!((s.nodes, s.edges, s.sinks), (1, 0, 0));
        assert_eq!(s.avg_in_degree, 0.0);
    }

    #[test]
    fn disjoint_base_shape() {
        // per-call-unique signatures, as in a raw trace dump
        let v: Vec<NormalizedExecution> = (0..5)
            .map(|i| {
                let calls = (0..3)
                    .map(|j| {
                        let mut c = NormalizedCall::plain("q");
                        c.args_canonical = format!("n={i}{j}");
                        c
                    })
                    .collect();
                NormalizedExecution::new(format!("t{i}"), calls)
            })
            .collect();
        let s = graph_stats(&build_from_normalized(&v, GraphMode::Disjoint).unwrap());
        assert_eq!((s.nodes, s.edges, s.sinks, s.endpoints), (16, 15, 5, 15));
        assert_eq!(s.avg_in_degree, 1.0);
    }

    #[test]
    fn curve_examples() {
        let same = [exec("a", &["x", "y"]), exec("b", &["x", "y"])];
        let c = duplication_curve(&merged(&same), 2);
        assert!(c.iter().all(|p| p.fraction == 1.0));

        let distinct = [exec("a", &["x"]), exec("b", &["y"]), exec("c", &["z"])];
        assert!(duplication_curve(&merged(&distinct), 3).iter().all(|p| p.shared == 0));

        let three = [
            exec("a", &["x", "y", "p"]),
            exec("b", &["x", "y", "q"]),
            exec("c", &["z", "w", "v"]),
        ];
        let c = duplication_curve(&merged(&three), 3);
        let shared: Vec<(usize, usize)> = c.iter().map(|p| (p.shared, p.total)).collect();
        assert_eq!(shared, [(2, 3), (2, 3), (0, 3)]);
    }

    #[test]
    fn short_tasks_stay_in_denominator() {
        let v = [exec("a", &["x", "y"]), exec("b", &["x", "y"]), exec("c", &["x"])];
        let c = duplication_curve(&merged(&v), 2);
        assert_eq!((c[0].shared, c[0].total), (3, 3));
        assert_eq!((c[1].shared, c[1].total), (2, 3));
    }

    #[test]
    fn curve_csv_format() {
        let v = [exec("a", &["x"]), exec("b", &["x"]), exec("c", &["y"])];
        let csv = curve_csv(&duplication_curve(&merged(&v), 1));
        assert_eq!(csv, "step,fraction\n1,0.666667\n");
    }

    #[test]
    fn savings_without_tools() {
        let r = estimate_savings(&[], &[exec("a", &["x", "y"])]);
        assert_eq!((r.llm_calls_before, r.llm_calls_after), (2, 2));
        assert_eq!(r.reduction_pct, 0.0);
    }

    #[test]
    fn savings_fused_pair() {
        let chain = vec![NormalizedCall::plain("a"), NormalizedCall::plain("b")];
        let tool = MetaTool {
            name: "mt_1".into(),
            parameters: lift_parameters(&chain),
            chain,
            support: 1,
            nesting_depth: 0,
        };
        let r = estimate_savings(&[tool], &[exec("t", &["a", "b"])]);
        assert_eq!((r.llm_calls_before, r.llm_calls_after), (2, 1));
        assert_eq!(r.per_tool[0].saved, 1);
        assert_eq!(r.reduction_pct, 50.0);
    }

    #[test]
    fn planted_savings() {
        let mut v: Vec<NormalizedExecution> = (0..60)
            .map(|i| exec(&format!("p{i}"), &["login", "get_pwd", "open", &format!("s{}", i % 7)]))
            .collect();
        v.extend((0..40).map(|i| exec(&format!("r{i}"), &[&format!("x{i}")])));
        let ex = extract_from_view(&v, &ExtractionConfig::new(30)).unwrap();
        let r = estimate_savings(&ex.tools, &v);
        assert_eq!(r.per_tool[0].traversals, 60);
        assert_eq!(r.per_tool[0].saved, 120);
        assert_eq!(r.llm_calls_before - r.llm_calls_after, 120);
    }

    #[test]
    fn table_columns() {
        let s = graph_stats(&merged(&[exec("t", &["a", "b", "c"])]));
        let t = stats_table(&[("Merged".into(), s)]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[0].split_whitespace().collect::<Vec<_>>(), TABLE_HEADER);
        assert_eq!(
            lines[1].split_whitespace().collect::<Vec<_>>(),
            ["Merged", "4", "3", "1", "1.00", "3"]
        );
    }

    fn arb_view() -> impl Strategy<Value = Vec<NormalizedExecution>> {
        prop::collection::vec(prop::collection::vec(0u8..3, 0..6), 0..8).prop_map(|execs| {
            execs
                .into_iter()
                .enumerate()
                .map(|(i, e)| {
                    NormalizedExecution::new(
                        format!("t{i}"),
                        e.iter().map(|c| NormalizedCall::plain(format!("c{c}"))).collect(),
                    )
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn savings_match_replay(v in arb_view(), t in 2u64..4) {
            let ex = extract_from_view(&v, &ExtractionConfig::new(t)).unwrap();
            let r = estimate_savings(&ex.tools, &v);
            prop_assert_eq!(r.llm_calls_after as usize, total_length(&ex.rewritten));
            prop_assert_eq!(r.llm_calls_before as usize, total_length(&v));
        }

        #[test]
        fn identity_curve_non_increasing(v in arb_view()) {
            let g = merged(&v);
            let c = duplication_curve(&g, max_depth(&g));
            prop_assert!(c.windows(2).all(|w| w[0].shared >= w[1].shared));
        }

        #[test]
        fn stats_bounds(v in arb_view()) {
            let s = graph_stats(&merged(&v));
            prop_assert!(s.sinks <= s.nodes);
            prop_assert!(s.avg_in_degree >= 0.0);
        }

        #[test]
        fn compression_does_not_add_edges(v in arb_view(), t in 2u64..4) {
            let g = merged(&v);
            let ex = extract_from_view(&v, &ExtractionConfig::new(t)).unwrap();
            prop_assert!(graph_stats(&ex.graph).edges <= graph_stats(&g).edges);
        }
    }
}
