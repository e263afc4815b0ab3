//! Iterative rule discovery: stats, sample, ask an analyst, validate, apply.
//!
//! The analyst is any [`Analyst`]; it sees rendered traces and the current
//! graph statistics and answers with a JSON proposal:
//!
//! ```json
//! {"actions": [
//!   {"action": "regex_sub", "pattern": "user_id=\\d+", "replacement": "user_id={UID}", "scope": "arg_values"},
//!   {"action": "set_domain", "match": "spotify.*", "domain": "SPOTIFY"},
//!   {"action": "set_semantic_type", "match": "*.show_*", "kind": "accessor"}
//! ]}
//! ```
//!
//! `scope` defaults to `both`. Accepted actions are applied to the whole
//! corpus; rules are never retracted.

use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::graph::{build_from_normalized, GraphMode};
use crate::metrics::{graph_stats, GraphStats};
use crate::normalize::{
    invalid_placeholders, Diagnostic, DomainAssignment, NormalizedExecution, Normalizer, RegexRule, RuleSet, Scope,
    SemanticAssignment, SemanticKind, BARRIER_DOMAIN,
};
use crate::trace::TraceCorpus;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    RegexSub {
        pattern: String,
        replacement: String,
        #[serde(default)]
        scope: Scope,
    },
    SetDomain {
        #[serde(rename = "match")]
        pattern: String,
        domain: String,
    },
    SetSemanticType {
        #[serde(rename = "match")]
        pattern: String,
        kind: SemanticKind,
    },
}

impl Action {
    fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        match self {
            Action::RegexSub {
                pattern, replacement, ..
            } => {
                if regex::Regex::new(pattern).is_err() {
                    out.push("pattern does not compile".into());
                }
                for t in invalid_placeholders(replacement) {
                    out.push(format!("invalid placeholder token {t}"));
                }
            }
            Action::SetDomain { pattern, domain } => {
                if let Err(e) = crate::normalize::Matcher::compile(pattern) {
                    out.push(e);
                }
                if domain.is_empty() {
                    out.push("empty domain".into());
                } else if domain == BARRIER_DOMAIN {
                    out.push(format!("domain {BARRIER_DOMAIN:?} is reserved"));
                }
            }
            Action::SetSemanticType { pattern, .. } => {
                if let Err(e) = crate::normalize::Matcher::compile(pattern) {
                    out.push(e);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AnalystProposal {
    pub actions: Vec<Action>,
}

/// Valid actions of a proposal, plus one diagnostic per rejected action.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct ParsedProposal {
    pub proposal: AnalystProposal,
    pub diagnostics: Vec<Diagnostic>,
}

const KINDS: [&str; 3] = ["regex_sub", "set_domain", "set_semantic_type"];

fn parse_action(raw: &Value) -> std::result::Result<Action, String> {
    let kind = raw
        .get("action")
        .and_then(Value::as_str)
        .ok_or_else(|| "missing \"action\" field".to_string())?;
    if !KINDS.contains(&kind) {
        return Err(format!("unknown action kind {kind:?}"));
    }
    let action: Action = serde_json::from_value(raw.clone()).map_err(|e| e.to_string())?;
    match action.problems().as_slice() {
        [] => Ok(action),
        problems => Err(problems.join("; ")),
    }
}

/// Validates analyst output. Never fails: structural problems come back as
/// diagnostics and any valid actions are kept.
pub fn parse_proposal(text: &str) -> ParsedProposal {
    let mut parsed = ParsedProposal::default();
    let root: Value = match serde_json::from_str(text) {
        Ok(v) => v,
        Err(e) => {
            parsed.diagnostics.push(Diagnostic {
                rule: "proposal".into(),
                reason: format!("not valid JSON: {e}"),
            });
            return parsed;
        }
    };
    let Some(actions) = root.get("actions").and_then(Value::as_array) else {
        parsed.diagnostics.push(Diagnostic {
            rule: "proposal".into(),
            reason: "expected an object with an \"actions\" array".into(),
        });
        return parsed;
    };
    for (i, raw) in actions.iter().enumerate() {
        match parse_action(raw) {
            Ok(a) => parsed.proposal.actions.push(a),
            Err(reason) => parsed.diagnostics.push(Diagnostic {
                rule: format!("actions[{i}]"),
                reason,
            }),
        }
    }
    parsed
}

/// Adds `actions` to a copy of `rules`. Regex rules run after existing ones and
/// get fresh ids `r<n>`; domain and kind assignments go in front so the most
/// recent assignment for a tool wins.
pub fn apply_actions(rules: &RuleSet, actions: &[Action]) -> RuleSet {
    let mut out = rules.clone();
    let mut ids: HashSet<String> = out.regex_rules.iter().map(|r| r.id.clone()).collect();
    let mut next = out.regex_rules.len() + 1;
    for action in actions {
        match action {
            Action::RegexSub {
                pattern,
                replacement,
                scope,
            } => {
                while ids.contains(&format!("r{next}")) {
                    next += 1;
                }
                let id = format!("r{next}");
                ids.insert(id.clone());
                out.regex_rules.push(RegexRule {
                    id,
                    pattern: pattern.clone(),
                    replacement: replacement.clone(),
                    scope: *scope,
                });
            }
            Action::SetDomain { pattern, domain } => out.domains.insert(
                0,
                DomainAssignment {
                    pattern: pattern.clone(),
                    domain: domain.clone(),
                },
            ),
            Action::SetSemanticType { pattern, kind } => out.semantics.insert(
                0,
                SemanticAssignment {
                    pattern: pattern.clone(),
                    kind: *kind,
                },
            ),
        }
    }
    out
}

/// Merged-graph stats for `corpus` under `rules`.
pub fn stats_under(corpus: &TraceCorpus, rules: &RuleSet) -> Result<GraphStats> {
    let view = Normalizer::new(rules)?.normalize_corpus(corpus)?;
    Ok(graph_stats(&build_from_normalized(&view, GraphMode::Merged)?))
}

/// Indices of a uniform sample without replacement, ascending.
///
/// Draws with `rand::seq::index::sample` from a `ChaCha8Rng` seeded by
/// `seed_from_u64(seed)`, then sorts.
pub fn sample_indices(population: usize, size: usize, seed: u64) -> Vec<usize> {
    if size >= population {
        return (0..population).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, population, size).into_vec();
    picked.sort_unstable();
    picked
}

pub fn sample_traces(corpus: &TraceCorpus, size: usize, seed: u64) -> TraceCorpus {
    corpus.subset(&sample_indices(corpus.executions.len(), size, seed))
}

/// `task_id: call -> call -> ...`, the form analysts see.
pub fn render_trace(exec: &NormalizedExecution) -> String {
    let calls: Vec<String> = exec.calls.iter().map(ToString::to_string).collect();
    format!("{}: {}", exec.task_id, calls.join(" -> "))
}

pub trait Analyst {
    fn propose(&mut self, sample: &[String], stats: &GraphStats) -> Result<String>;
}

/// Never proposes anything.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubAnalyst;

impl Analyst for StubAnalyst {
    fn propose(&mut self, _sample: &[String], _stats: &GraphStats) -> Result<String> {
        Ok(r#"{"actions":[]}"#.into())
    }
}

/// Replays canned responses in order, then proposes nothing.
#[derive(Debug, Clone, Default)]
pub struct ScriptedAnalyst {
    responses: std::collections::VecDeque<String>,
}

impl ScriptedAnalyst {
    pub fn new<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ScriptedAnalyst {
            responses: responses.into_iter().map(Into::into).collect(),
        }
    }
}

impl Analyst for ScriptedAnalyst {
    fn propose(&mut self, _sample: &[String], _stats: &GraphStats) -> Result<String> {
        Ok(self.responses.pop_front().unwrap_or_else(|| r#"{"actions":[]}"#.into()))
    }
}

pub const ANALYST_SYSTEM_PROMPT: &str = "You simplify agent tool-call traces so that equivalent \
states merge. Reply with JSON only: {\"actions\": [...]} where each action is one of \
{\"action\":\"regex_sub\",\"pattern\",\"replacement\",\"scope\":\"tool_id|arg_values|both\"}, \
{\"action\":\"set_domain\",\"match\",\"domain\"}, \
{\"action\":\"set_semantic_type\",\"match\",\"kind\":\"annotator|accessor|mutator\"}. \
Use {UPPER_CASE} placeholders for values that vary between tasks. Reply {\"actions\": []} if nothing remains.";

/// The user message sent to an external analyst.
pub fn analyst_prompt(sample: &[String], stats: &GraphStats) -> String {
    let mut out = format!(
        "Graph: {} nodes, {} edges, {} sinks, {} endpoints.\nTraces:\n",
        stats.nodes, stats.edges, stats.sinks, stats.endpoints
    );
    for line in sample {
        out.push_str(line);
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopConfig {
    pub max_iterations: usize,
    pub sample_size: usize,
    pub stop_on_empty: bool,
    pub seed: u64,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            max_iterations: 10,
            sample_size: 20,
            stop_on_empty: true,
            seed: 0,
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        if self.sample_size == 0 {
            return Err(Error::Config("sample_size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub sample: Vec<String>,
    pub stats_before: GraphStats,
    pub proposal: AnalystProposal,
    pub diagnostics: Vec<Diagnostic>,
    pub accepted_rules: usize,
    pub stats_after: GraphStats,
}

#[derive(Debug)]
pub struct LoopOutcome {
    pub rules: RuleSet,
    pub records: Vec<IterationRecord>,
    /// Set when the analyst failed; `records` holds the iterations completed before.
    pub error: Option<Error>,
}

/// Runs the loop. Each valid action is applied on its own and kept only if
/// the full-corpus node count does not grow, so rules only ever merge.
pub fn run_loop(
    corpus: &TraceCorpus,
    initial: &RuleSet,
    analyst: &mut dyn Analyst,
    config: &LoopConfig,
) -> Result<LoopOutcome> {
    config.validate()?;
    let mut rules = initial.clone();
    let mut stats = stats_under(corpus, &rules)?;
    let mut records = Vec::new();

    for iteration in 1..=config.max_iterations {
        let view = Normalizer::new(&rules)?.normalize_corpus(corpus)?;
        let picked = sample_indices(
            view.len(),
            config.sample_size,
            config.seed.wrapping_add(iteration as u64),
        );
        let rendered: Vec<String> = picked.iter().map(|&i| render_trace(&view[i])).collect();

        let text = match analyst.propose(&rendered, &stats) {
            Ok(t) => t,
            Err(e) => {
                let error = match e {
                    Error::Analyst(_) => e,
                    other => Error::Analyst(other.to_string()),
                };
                return Ok(LoopOutcome {
                    rules,
                    records,
                    error: Some(error),
                });
            }
        };
        let ParsedProposal {
            proposal,
            mut diagnostics,
        } = parse_proposal(&text);

        let stats_before = stats;
        let mut accepted = 0;
        for (i, action) in proposal.actions.iter().enumerate() {
            let candidate = apply_actions(&rules, std::slice::from_ref(action));
            let candidate_stats = stats_under(corpus, &candidate)?;
            if candidate_stats.nodes > stats.nodes {
                diagnostics.push(Diagnostic {
                    rule: format!("actions[{i}]"),
                    reason: format!(
                        "rejected: node count would grow {} -> {}",
                        stats.nodes, candidate_stats.nodes
                    ),
                });
                continue;
            }
            rules = candidate;
            stats = candidate_stats;
            accepted += 1;
        }

        records.push(IterationRecord {
            iteration,
            sample: picked.iter().map(|&i| view[i].task_id.clone()).collect(),
            stats_before,
            proposal,
            diagnostics,
            accepted_rules: accepted,
            stats_after: stats,
        });
        if accepted == 0 && config.stop_on_empty {
            break;
        }
    }

    Ok(LoopOutcome {
        rules,
        records,
        error: None,
    })
}

pub fn records_to_jsonl(records: &[IterationRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{Execution, ToolCall};
    use proptest::prelude::*;

    fn exec(id: &str, steps: Vec<ToolCall>) -> Execution {
        let mut e = Execution::from_tools(id, std::iter::empty::<String>());
        e.steps = steps;
        e
    }

    fn uid_corpus() -> TraceCorpus {
        let execs = (0..6)
            .map(|i| {
                exec(
                    &format!("t{i}"),
                    vec![
                        ToolCall::new("lookup", 0).with_arg("user_id", (100 + i).to_string()),
                        ToolCall::new("open", 1),
                    ],
                )
            })
            .collect();
        TraceCorpus::new("uid", execs).unwrap()
    }

    #[test]
    fn empty_proposal() {
        let p = parse_proposal(r#"{"actions":[]}"#);
        assert!(p.proposal.actions.is_empty());
        assert!(p.diagnostics.is_empty());
    }

    #[test]
    fn bad_pattern_dropped() {
        let p = parse_proposal(r#"{"actions":[{"action":"regex_sub","pattern":"[","replacement":"x"}]}"#);
        assert!(p.proposal.actions.is_empty());
        assert_eq!(p.diagnostics.len(), 1);
        assert_eq!(p.diagnostics[0].reason, "pattern does not compile");
    }

    #[test]
    fn mixed_proposal_keeps_valid() {
        let p = parse_proposal(
            r#"{"actions":[
                {"action":"set_domain","match":"spotify.*","domain":"SPOTIFY"},
                {"action":"drop_everything"}
            ]}"#,
        );
        assert_eq!(p.proposal.actions.len(), 1);
        assert_eq!(p.diagnostics.len(), 1);
        assert_eq!(p.diagnostics[0].rule, "actions[1]");
        assert!(p.diagnostics[0].reason.contains("unknown action kind"));
    }

    #[test]
    fn malformed_text() {
        assert_eq!(parse_proposal("not json").diagnostics.len(), 1);
        assert_eq!(parse_proposal("[]").diagnostics.len(), 1);
        let p = parse_proposal(r#"{"actions":[{"action":"set_semantic_type","match":"a","kind":"weird"}]}"#);
        assert_eq!(p.diagnostics.len(), 1);
    }

    #[test]
    fn scope_defaults_to_both() {
        let p = parse_proposal(r#"{"actions":[{"action":"regex_sub","pattern":"a","replacement":"b"}]}"#);
        assert!(matches!(
            p.proposal.actions[0],
            Action::RegexSub { scope: Scope::Both, .. }
        ));
    }

    #[test]
    fn apply_assigns_fresh_ids_and_latest_assignment_wins() {
        let mut base = RuleSet::identity();
        base.regex_rules.push(RegexRule {
            id: "r2".into(),
            pattern: "x".into(),
            replacement: "y".into(),
            scope: Scope::Both,
        });
        let actions = [
            Action::RegexSub {
                pattern: "a".into(),
                replacement: "b".into(),
                scope: Scope::ToolId,
            },
            Action::SetDomain {
                pattern: "*".into(),
                domain: "ONE".into(),
            },
            Action::SetDomain {
                pattern: "*".into(),
                domain: "TWO".into(),
            },
        ];
        let out = apply_actions(&base, &actions);
        let ids: Vec<&str> = out.regex_rules.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["r2", "r3"]);
        assert_eq!(Normalizer::new(&out).unwrap().domain_of("tool"), "TWO");
    }

    #[test]
    fn sampler_whole_corpus_and_determinism() {
        assert_eq!(sample_indices(4, 10, 7), [0, 1, 2, 3]);
        assert_eq!(sample_indices(10, 3, 42), sample_indices(10, 3, 42));
        let s = sample_indices(10, 3, 42);
        assert_eq!(s.len(), 3);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn sampler_reference_draw() {
        // the documented draw, reproduced step by step
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut expected = rand::seq::index::sample(&mut rng, 10, 3).into_vec();
        expected.sort_unstable();
        assert_eq!(sample_indices(10, 3, 5), expected);
    }

    #[test]
    fn stub_runs_one_iteration() {
        let c = uid_corpus();
        let out = run_loop(&c, &RuleSet::identity(), &mut StubAnalyst, &LoopConfig::default()).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.rules, RuleSet::identity());
        assert_eq!(out.records[0].stats_before, out.records[0].stats_after);
    }

    #[test]
    fn scripted_uid_rule_merges() {
        let c = uid_corpus();
        let mut analyst = ScriptedAnalyst::new([
            r#"{"actions":[{"action":"regex_sub","pattern":"user_id=\\d+","replacement":"user_id={UID}","scope":"arg_values"}]}"#,
        ]);
        let out = run_loop(&c, &RuleSet::identity(), &mut analyst, &LoopConfig::default()).unwrap();
        assert_eq!(out.records.len(), 2);
        assert_eq!(out.records[0].accepted_rules, 1);
        assert!(out.records[0].stats_after.nodes < out.records[0].stats_before.nodes);
        assert_eq!(out.records[0].stats_after.nodes, 3);
        assert_eq!(out.rules.regex_rules.len(), 1);
    }

    #[test]
    fn splitting_action_rejected() {
        let execs = vec![
            Execution::from_tools("a", ["read_x", "read_y"]),
            Execution::from_tools("b", ["read_y", "read_x"]),
        ];
        let c = TraceCorpus::new("reads", execs).unwrap();
        let initial = apply_actions(
            &RuleSet::identity(),
            &[Action::SetSemanticType {
                pattern: "read_*".into(),
                kind: SemanticKind::Accessor,
            }],
        );
        let mut analyst =
            ScriptedAnalyst::new([r#"{"actions":[{"action":"set_semantic_type","match":"read_*","kind":"mutator"}]}"#]);
        let out = run_loop(&c, &initial, &mut analyst, &LoopConfig::default()).unwrap();
        let r = &out.records[0];
        assert_eq!(r.accepted_rules, 0);
        assert!(r.diagnostics[0].reason.contains("node count would grow"));
        assert_eq!(out.rules, initial);
    }

    struct Failing;

    impl Analyst for Failing {
        fn propose(&mut self, _: &[String], _: &GraphStats) -> Result<String> {
            Err(Error::Analyst("timeout".into()))
        }
    }

    #[test]
    fn analyst_failure_keeps_partial_records() {
        let out = run_loop(
            &uid_corpus(),
            &RuleSet::identity(),
            &mut Failing,
            &LoopConfig::default(),
        )
        .unwrap();
        assert!(out.records.is_empty());
        assert!(matches!(out.error, Some(Error::Analyst(_))));
    }

    #[test]
    fn loop_config_validation() {
        let cfg = LoopConfig {
            sample_size: 0,
            ..LoopConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    proptest! {
        #[test]
        fn sample_is_sorted_subset(pop in 0usize..50, size in 1usize..60, seed: u64) {
            let s = sample_indices(pop, size, seed);
            prop_assert_eq!(s.len(), size.min(pop));
            prop_assert!(s.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(s.iter().all(|&i| i < pop));
        }

        #[test]
        fn loop_nodes_non_increasing(seed: u64, picks in prop::collection::vec(0usize..4, 1..5)) {
            let menu = [
                r#"{"action":"regex_sub","pattern":"\\d+","replacement":"{N}","scope":"arg_values"}"#,
                r#"{"action":"set_semantic_type","match":"lookup","kind":"accessor"}"#,
                r#"{"action":"set_semantic_type","match":"lookup","kind":"mutator"}"#,
                r#"{"action":"set_domain","match":"open","domain":"FILES"}"#,
            ];
            let responses: Vec<String> = picks.iter().map(|&i| format!("{{\"actions\":[{}]}}", menu[i])).collect();
            let cfg = LoopConfig { max_iterations: picks.len(), sample_size: 2, stop_on_empty: false, seed };
            let out = run_loop(&uid_corpus(), &RuleSet::identity(), &mut ScriptedAnalyst::new(responses), &cfg).unwrap();
            for r in &out.records {
                prop_assert!(r.stats_after.nodes <= r.stats_before.nodes);
            }
            prop_assert!(out.records.windows(2).all(|w| w[1].stats_before == w[0].stats_after));
        }
    }
}
