//! Horizontal-merging rule engine.
//!
//! A [`RuleSet`] rewrites raw tool calls into [`NormalizedCall`]s: regex
//! substitutions erase irrelevant argument detail, domain tags enable
//! commutation of independent services, semantic kinds decide how a call
//! participates in the state hash, and loop collapse folds repeated
//! consecutive calls into one node.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{Execution, ToolCall, TraceCorpus};

pub const DEFAULT_DOMAIN: &str = "DEFAULT";

/// Reserved domain for calls that must never commute with their neighbours.
pub const BARRIER_DOMAIN: &str = "*";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    ToolId,
    ArgValues,
    #[default]
    Both,
}

impl Scope {
    fn covers_tool(self) -> bool {
        matches!(self, Scope::ToolId | Scope::Both)
    }

    fn covers_args(self) -> bool {
        matches!(self, Scope::ArgValues | Scope::Both)
    }
}

impl FromStr for Scope {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tool_id" => Ok(Scope::ToolId),
            "arg_values" => Ok(Scope::ArgValues),
            "both" => Ok(Scope::Both),
            other => Err(format!("unknown scope {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegexRule {
    pub id: String,
    pub pattern: String,
    pub replacement: String,
    #[serde(default)]
    pub scope: Scope,
}

/// `match` is a glob over tool ids (`*`, `?`), or a regex when prefixed with `re:`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainAssignment {
    #[serde(rename = "match")]
    pub pattern: String,
    pub domain: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SemanticKind {
    Annotator,
    Accessor,
    Mutator,
}

impl FromStr for SemanticKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "annotator" => Ok(SemanticKind::Annotator),
            "accessor" => Ok(SemanticKind::Accessor),
            "mutator" => Ok(SemanticKind::Mutator),
            other => Err(format!("unknown semantic kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticAssignment {
    #[serde(rename = "match")]
    pub pattern: String,
    pub kind: SemanticKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RuleSet {
    #[serde(default)]
    pub regex_rules: Vec<RegexRule>,
    #[serde(default)]
    pub domains: Vec<DomainAssignment>,
    #[serde(default)]
    pub semantics: Vec<SemanticAssignment>,
    #[serde(default)]
    pub collapse_loops: bool,
}

impl RuleSet {
    pub fn identity() -> Self {
        RuleSet::default()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Rule(format!("invalid rule file: {e}")))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("rule sets always serialize")
    }
}

/// A tool call after rule application; the label alphabet of state graphs.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NormalizedCall {
    pub tool_id: String,
    pub args_canonical: String,
    pub domain: String,
    pub kind: SemanticKind,
    #[serde(default)]
    pub loop_collapsed: bool,
}

impl NormalizedCall {
    /// A mutator in the default domain with no arguments.
    pub fn plain(tool_id: impl Into<String>) -> Self {
        NormalizedCall {
            tool_id: tool_id.into(),
            args_canonical: String::new(),
            domain: DEFAULT_DOMAIN.into(),
            kind: SemanticKind::Mutator,
            loop_collapsed: false,
        }
    }

    /// Identity of the call as seen by the state hash and the endpoint count.
    pub fn signature(&self) -> String {
        format!("{}({})", self.tool_id, self.args_canonical)
    }
}

impl fmt::Display for NormalizedCall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.tool_id, self.args_canonical)?;
        if self.loop_collapsed {
            f.write_str("⟲")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizedExecution {
    pub task_id: String,
    pub calls: Vec<NormalizedCall>,
}

impl NormalizedExecution {
    pub fn new(task_id: impl Into<String>, calls: Vec<NormalizedCall>) -> Self {
        NormalizedExecution {
            task_id: task_id.into(),
            calls,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub rule: String,
    pub reason: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.rule, self.reason)
    }
}

/// Renders arguments with keys sorted, as `k1=v1,k2=v2`.
///
/// Backslashes and commas are escaped in keys and values, `=` in keys, so the
/// rendering is injective.
pub fn render_args(args: &indexmap::IndexMap<String, String>) -> String {
    let mut pairs: Vec<(&String, &String)> = args.iter().collect();
    pairs.sort();
    let mut out = String::new();
    for (i, (k, v)) in pairs.into_iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        escape_into(&mut out, k, true);
        out.push('=');
        escape_into(&mut out, v, false);
    }
    out
}

fn escape_into(out: &mut String, s: &str, is_key: bool) {
    for ch in s.chars() {
        if ch == '\\' || ch == ',' || (is_key && ch == '=') {
            out.push('\\');
        }
        out.push(ch);
    }
}

/// Compiled tool-id matcher: an anchored glob, or a regex when prefixed with `re:`.
#[derive(Debug, Clone)]
pub enum Matcher {
    Glob(Regex),
    Pattern(Regex),
}

impl Matcher {
    pub fn compile(spec: &str) -> std::result::Result<Self, String> {
        if let Some(re) = spec.strip_prefix("re:") {
            Regex::new(re)
                .map(Matcher::Pattern)
                .map_err(|_| "pattern does not compile".to_string())
        } else {
            if spec.is_empty() {
                return Err("empty match".into());
            }
            Regex::new(&glob_to_regex(spec))
                .map(Matcher::Glob)
                .map_err(|_| "pattern does not compile".to_string())
        }
    }

    pub fn is_match(&self, tool_id: &str) -> bool {
        match self {
            Matcher::Glob(re) | Matcher::Pattern(re) => re.is_match(tool_id),
        }
    }
}

fn glob_to_regex(glob: &str) -> String {
    let mut re = String::from("^");
    for ch in glob.chars() {
        match ch {
            '*' => re.push_str(".*"),
            '?' => re.push('.'),
            c => re.push_str(&regex::escape(&c.to_string())),
        }
    }
    re.push('$');
    re
}

/// Returns true if `match_spec` (glob or `re:` regex) compiles.
pub fn match_spec_compiles(match_spec: &str) -> std::result::Result<(), String> {
    Matcher::compile(match_spec).map(|_| ())
}

/// Brace tokens in a replacement that are not `${capture}` references and not
/// of the form `{[A-Z_]+}`.
pub fn invalid_placeholders(replacement: &str) -> Vec<String> {
    let token = Regex::new(r"\{[^{}]*\}").expect("static regex");
    let valid = Regex::new(r"^\{[A-Z_]+\}$").expect("static regex");
    token
        .find_iter(replacement)
        .filter(|m| !(m.start() > 0 && replacement.as_bytes()[m.start() - 1] == b'$'))
        .map(|m| m.as_str().to_string())
        .filter(|t| !valid.is_match(t))
        .collect()
}

/// Checks every invariant of a rule set; empty output means the rule set is valid.
pub fn validate_ruleset(rules: &RuleSet) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    let mut ids = HashSet::new();
    for rule in &rules.regex_rules {
        if rule.id.is_empty() {
            diags.push(Diagnostic {
                rule: String::new(),
                reason: "empty rule id".into(),
            });
        } else if !ids.insert(rule.id.as_str()) {
            diags.push(Diagnostic {
                rule: rule.id.clone(),
                reason: format!("duplicate id {}", rule.id),
            });
        }
        if Regex::new(&rule.pattern).is_err() {
            diags.push(Diagnostic {
                rule: rule.id.clone(),
                reason: "pattern does not compile".into(),
            });
        }
        for token in invalid_placeholders(&rule.replacement) {
            diags.push(Diagnostic {
                rule: rule.id.clone(),
                reason: format!("invalid placeholder token {token}"),
            });
        }
    }
    for (i, d) in rules.domains.iter().enumerate() {
        let rule = format!("domains[{i}]");
        if let Err(reason) = Matcher::compile(&d.pattern) {
            diags.push(Diagnostic {
                rule: rule.clone(),
                reason,
            });
        }
        if d.domain.is_empty() {
            diags.push(Diagnostic {
                rule,
                reason: "empty domain".into(),
            });
        } else if d.domain == BARRIER_DOMAIN {
            diags.push(Diagnostic {
                rule,
                reason: format!("domain {BARRIER_DOMAIN:?} is reserved"),
            });
        }
    }
    for (i, s) in rules.semantics.iter().enumerate() {
        if let Err(reason) = Matcher::compile(&s.pattern) {
            diags.push(Diagnostic {
                rule: format!("semantics[{i}]"),
                reason,
            });
        }
    }
    diags
}

/// Rules whose replacement text is matched again by their own pattern, so a
/// second normalization pass would change the output.
pub fn rule_warnings(rules: &RuleSet) -> Vec<Diagnostic> {
    let capture_ref = Regex::new(r"\$(\{[^}]*\}|[_0-9A-Za-z]+)").expect("static regex");
    rules
        .regex_rules
        .iter()
        .filter_map(|rule| {
            let re = Regex::new(&rule.pattern).ok()?;
            let literal = capture_ref.replace_all(&rule.replacement, "");
            re.is_match(&literal).then(|| Diagnostic {
                rule: rule.id.clone(),
                reason: "replacement re-matches its own pattern (not a fixed point)".into(),
            })
        })
        .collect()
}

/// A validated, compiled [`RuleSet`].
#[derive(Debug, Clone)]
pub struct Normalizer {
    regex_rules: Vec<(String, Regex, String, Scope)>,
    domains: Vec<(Matcher, String)>,
    semantics: Vec<(Matcher, SemanticKind)>,
    collapse_loops: bool,
}

impl Normalizer {
    pub fn new(rules: &RuleSet) -> Result<Self> {
        let diags = validate_ruleset(rules);
        if !diags.is_empty() {
            let joined: Vec<String> = diags.iter().map(ToString::to_string).collect();
            return Err(Error::Rule(joined.join("; ")));
        }
        Ok(Normalizer {
            regex_rules: rules
                .regex_rules
                .iter()
                .map(|r| {
                    (
                        r.id.clone(),
                        Regex::new(&r.pattern).expect("validated"),
                        r.replacement.clone(),
                        r.scope,
                    )
                })
                .collect(),
            domains: rules
                .domains
                .iter()
                .map(|d| (Matcher::compile(&d.pattern).expect("validated"), d.domain.clone()))
                .collect(),
            semantics: rules
                .semantics
                .iter()
                .map(|s| (Matcher::compile(&s.pattern).expect("validated"), s.kind))
                .collect(),
            collapse_loops: rules.collapse_loops,
        })
    }

    pub fn identity() -> Self {
        Normalizer::new(&RuleSet::identity()).expect("identity rules are valid")
    }

    pub fn domain_of(&self, tool_id: &str) -> &str {
        self.domains
            .iter()
            .find(|(m, _)| m.is_match(tool_id))
            .map(|(_, d)| d.as_str())
            .unwrap_or(DEFAULT_DOMAIN)
    }

    pub fn kind_of(&self, tool_id: &str) -> SemanticKind {
        self.semantics
            .iter()
            .find(|(m, _)| m.is_match(tool_id))
            .map(|(_, k)| *k)
            .unwrap_or(SemanticKind::Mutator)
    }

    pub fn normalize_call(&self, call: &ToolCall) -> Result<NormalizedCall> {
        let mut tool_id = call.tool_id.clone();
        let mut args = render_args(&call.args);
        for (id, re, replacement, scope) in &self.regex_rules {
            if scope.covers_tool() {
                tool_id = re.replace_all(&tool_id, replacement.as_str()).into_owned();
                if tool_id.is_empty() {
                    return Err(Error::Rule(format!(
                        "rule {id} rewrites tool {:?} to an empty tool id",
                        call.tool_id
                    )));
                }
            }
            if scope.covers_args() {
                args = re.replace_all(&args, replacement.as_str()).into_owned();
            }
        }
        let domain = self.domain_of(&tool_id).to_string();
        let kind = self.kind_of(&tool_id);
        Ok(NormalizedCall {
            tool_id,
            args_canonical: args,
            domain,
            kind,
            loop_collapsed: false,
        })
    }

    /// Normalizes every call, drops annotators, then collapses loops if enabled.
    pub fn normalize_execution(&self, exec: &Execution) -> Result<Vec<NormalizedCall>> {
        let mut calls = Vec::with_capacity(exec.steps.len());
        for call in &exec.steps {
            let n = self.normalize_call(call)?;
            if n.kind != SemanticKind::Annotator {
                calls.push(n);
            }
        }
        if self.collapse_loops {
            calls = collapse_runs(calls);
        }
        Ok(calls)
    }

    pub fn normalize_corpus(&self, corpus: &TraceCorpus) -> Result<Vec<NormalizedExecution>> {
        corpus
            .executions
            .iter()
            .map(|e| {
                Ok(NormalizedExecution::new(
                    e.task_id.clone(),
                    self.normalize_execution(e)?,
                ))
            })
            .collect()
    }
}

/// Replaces each maximal run of two or more equal consecutive calls by a single
/// call flagged `loop_collapsed`.
pub fn collapse_runs(calls: Vec<NormalizedCall>) -> Vec<NormalizedCall> {
    let mut out: Vec<NormalizedCall> = Vec::with_capacity(calls.len());
    for call in calls {
        match out.last_mut() {
            Some(prev) if prev.loop_collapsed && strip_loop(prev) == call => {}
            Some(prev) if *prev == call => prev.loop_collapsed = true,
            _ => out.push(call),
        }
    }
    out
}

fn strip_loop(call: &NormalizedCall) -> NormalizedCall {
    NormalizedCall {
        loop_collapsed: false,
        ..call.clone()
    }
}

pub fn normalize_call(call: &ToolCall, rules: &RuleSet) -> Result<NormalizedCall> {
    Normalizer::new(rules)?.normalize_call(call)
}

pub fn normalize_execution(exec: &Execution, rules: &RuleSet) -> Result<Vec<NormalizedCall>> {
    Normalizer::new(rules)?.normalize_execution(exec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn regex_rule(id: &str, pattern: &str, replacement: &str, scope: Scope) -> RegexRule {
        RegexRule {
            id: id.into(),
            pattern: pattern.into(),
            replacement: replacement.into(),
            scope,
        }
    }

    fn exec(tools: &[&str]) -> Execution {
        Execution::from_tools("t", tools.iter().copied())
    }

    #[test]
    fn uid_rule_over_arg_values() {
        let call = ToolCall::new("spotify.login", 0).with_arg("user_id", "8372");
        let rules = RuleSet {
            regex_rules: vec![regex_rule("uid", r"user_id=\d+", "user_id={UID}", Scope::ArgValues)],
            ..Default::default()
        };
        let n = normalize_call(&call, &rules).unwrap();
        assert!(n.args_canonical.contains("user_id={UID}"));
        assert_eq!(n.tool_id, "spotify.login");
    }

    #[test]
    fn identity_rules_leave_call_unchanged() {
        let call = ToolCall::new("a.b", 0).with_arg("x", "1");
        let n = normalize_call(&call, &RuleSet::identity()).unwrap();
        assert_eq!(n.tool_id, "a.b");
        assert_eq!(n.args_canonical, "x=1");
        assert_eq!(n.domain, DEFAULT_DOMAIN);
        assert_eq!(n.kind, SemanticKind::Mutator);
        assert!(!n.loop_collapsed);
    }

    #[test]
    fn rules_apply_sequentially() {
        let call = ToolCall::new("t", 0).with_arg("date", "2024-01-31");
        let r1 = regex_rule("r1", r"\d{4}-\d{2}-\d{2}", "DATE", Scope::ArgValues);
        let r2 = regex_rule("r2", "DATE", "{DATE}", Scope::ArgValues);
        let rules = RuleSet {
            regex_rules: vec![r1.clone(), r2.clone()],
            ..Default::default()
        };
        let combined = normalize_call(&call, &rules).unwrap();

        // one-by-one application of each rule on its own
        let mut args = render_args(&call.args);
        for r in [&r1, &r2] {
            args = Regex::new(&r.pattern)
                .unwrap()
                .replace_all(&args, r.replacement.as_str())
                .into_owned();
        }
        assert_eq!(combined.args_canonical, args);
        assert_eq!(args, "date={DATE}");
    }

    #[test]
    fn scope_is_respected() {
        let call = ToolCall::new("user_42.get", 0).with_arg("id", "42");
        let tool_only = RuleSet {
            regex_rules: vec![regex_rule("n", r"\d+", "N", Scope::ToolId)],
            ..Default::default()
        };
        let n = normalize_call(&call, &tool_only).unwrap();
        assert_eq!((n.tool_id.as_str(), n.args_canonical.as_str()), ("user_N.get", "id=42"));
        let both = RuleSet {
            regex_rules: vec![regex_rule("n", r"\d+", "N", Scope::Both)],
            ..Default::default()
        };
        let n = normalize_call(&call, &both).unwrap();
        assert_eq!((n.tool_id.as_str(), n.args_canonical.as_str()), ("user_N.get", "id=N"));
    }

    #[test]
    fn empty_tool_id_is_rule_error() {
        let rules = RuleSet {
            regex_rules: vec![regex_rule("wipe", ".*", "", Scope::ToolId)],
            ..Default::default()
        };
        let err = normalize_call(&ToolCall::new("a", 0), &rules).unwrap_err();
        assert!(matches!(err, Error::Rule(_)));
    }

    #[test]
    fn domain_and_kind_first_match_wins() {
        let rules = RuleSet {
            domains: vec![
                DomainAssignment {
                    pattern: "spotify.*".into(),
                    domain: "SPOTIFY".into(),
                },
                DomainAssignment {
                    pattern: "*".into(),
                    domain: "OTHER".into(),
                },
            ],
            semantics: vec![
                SemanticAssignment {
                    pattern: "re:\\.show_".into(),
                    kind: SemanticKind::Accessor,
                },
                SemanticAssignment {
                    pattern: "*".into(),
                    kind: SemanticKind::Annotator,
                },
            ],
            ..Default::default()
        };
        let n = Normalizer::new(&rules).unwrap();
        assert_eq!(n.domain_of("spotify.login"), "SPOTIFY");
        assert_eq!(n.domain_of("gmail.send"), "OTHER");
        assert_eq!(n.kind_of("spotify.show_songs"), SemanticKind::Accessor);
        assert_eq!(n.kind_of("spotify.login"), SemanticKind::Annotator);
    }

    #[test]
    fn glob_is_anchored() {
        let rules = RuleSet {
            domains: vec![DomainAssignment {
                pattern: "gmail.*".into(),
                domain: "GMAIL".into(),
            }],
            ..Default::default()
        };
        let n = Normalizer::new(&rules).unwrap();
        assert_eq!(n.domain_of("xgmail.send"), DEFAULT_DOMAIN);
        assert_eq!(n.domain_of("gmailXsend"), DEFAULT_DOMAIN);
        assert_eq!(n.domain_of("gmail.send"), "GMAIL");
    }

    #[test]
    fn loop_collapse_run_of_three() {
        let rules = RuleSet {
            collapse_loops: true,
            ..Default::default()
        };
        let out = normalize_execution(&exec(&["a", "a", "a"]), &rules).unwrap();
        assert_eq!(out.len(), 1);
        assert!(out[0].loop_collapsed);
        assert_eq!(out[0].tool_id, "a");
    }

    #[test]
    fn non_consecutive_repeats_kept() {
        let rules = RuleSet {
            collapse_loops: true,
            ..Default::default()
        };
        let out = normalize_execution(&exec(&["a", "b", "a"]), &rules).unwrap();
        let tools: Vec<_> = out.iter().map(|c| c.tool_id.as_str()).collect();
        assert_eq!(tools, ["a", "b", "a"]);
        assert!(out.iter().all(|c| !c.loop_collapsed));
    }

    #[test]
    fn annotators_are_dropped() {
        let rules = RuleSet {
            semantics: vec![SemanticAssignment {
                pattern: "log".into(),
                kind: SemanticKind::Annotator,
            }],
            ..Default::default()
        };
        let out = normalize_execution(&exec(&["log", "a", "log", "b"]), &rules).unwrap();
        let tools: Vec<_> = out.iter().map(|c| c.tool_id.as_str()).collect();
        assert_eq!(tools, ["a", "b"]);
    }

    #[test]
    fn validate_reports_problems() {
        assert!(validate_ruleset(&RuleSet::identity()).is_empty());

        let bad = RuleSet {
            regex_rules: vec![regex_rule("r0", "[", "x", Scope::Both)],
            ..Default::default()
        };
        let diags = validate_ruleset(&bad);
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].reason, "pattern does not compile");
        assert_eq!(diags[0].rule, "r0");

        let dup = RuleSet {
            regex_rules: vec![
                regex_rule("r1", "a", "b", Scope::Both),
                regex_rule("r1", "c", "d", Scope::Both),
            ],
            ..Default::default()
        };
        let diags = validate_ruleset(&dup);
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].reason, "duplicate id r1");
    }

    #[test]
    fn placeholder_tokens_checked() {
        assert!(invalid_placeholders("user_id={UID}").is_empty());
        assert!(invalid_placeholders("${1}={NUM}").is_empty());
        assert_eq!(invalid_placeholders("x={uid}"), ["{uid}"]);
        let rules = RuleSet {
            regex_rules: vec![regex_rule("r", "a", "{bad token}", Scope::Both)],
            ..Default::default()
        };
        assert_eq!(validate_ruleset(&rules).len(), 1);
    }

    #[test]
    fn reserved_domain_rejected() {
        let rules = RuleSet {
            domains: vec![DomainAssignment {
                pattern: "*".into(),
                domain: BARRIER_DOMAIN.into(),
            }],
            ..Default::default()
        };
        assert_eq!(validate_ruleset(&rules).len(), 1);
    }

    #[test]
    fn fixed_point_warning() {
        let rules = RuleSet {
            regex_rules: vec![
                regex_rule("uid", r"user_id=\d+", "user_id={UID}", Scope::ArgValues),
                regex_rule("ws", r"\s+", " ", Scope::ArgValues),
                regex_rule("cap", r"(\w+)=\d+", "$1={NUM}", Scope::ArgValues),
            ],
            ..Default::default()
        };
        let warnings = rule_warnings(&rules);
        assert_eq!(warnings.len(), 1);
        assert_eq!(warnings[0].rule, "ws");
    }

    #[test]
    fn arg_rendering_is_sorted_and_escaped() {
        let call = ToolCall::new("t", 0).with_arg("b", "x,y").with_arg("a", "1");
        assert_eq!(render_args(&call.args), "a=1,b=x\\,y");
    }

    #[test]
    fn rule_file_round_trip() {
        let text = r#"{"regex_rules":[{"id":"uid","pattern":"user_id=\\d+","replacement":"user_id={UID}","scope":"arg_values"}],
                       "domains":[{"match":"spotify.*","domain":"SPOTIFY"}],
                       "semantics":[{"match":"*.show_*","kind":"accessor"}],
                       "collapse_loops":true}"#;
        let rules = RuleSet::from_json(text).unwrap();
        assert_eq!(rules.regex_rules[0].scope, Scope::ArgValues);
        assert_eq!(RuleSet::from_json(&rules.to_json()).unwrap(), rules);
    }

    fn arb_tools() -> impl Strategy<Value = Vec<&'static str>> {
        proptest::collection::vec(prop_oneof![Just("a"), Just("b"), Just("log")], 0..12)
    }

    proptest! {
        #[test]
        fn identity_preserves_length_and_tools(tools in arb_tools()) {
            let out = normalize_execution(&exec(&tools), &RuleSet::identity()).unwrap();
            let got: Vec<_> = out.iter().map(|c| c.tool_id.as_str()).collect();
            prop_assert_eq!(got, tools);
        }

        // dropping annotators commutes with loop collapse when no annotator
        // interrupts a run
        #[test]
        fn annotator_drop_commutes_with_collapse(tools in arb_tools()) {
            let kept: Vec<(usize, &str)> = tools.iter().copied().enumerate().filter(|(_, t)| *t != "log").collect();
            let interrupted = kept.windows(2).any(|w| w[0].1 == w[1].1 && w[1].0 > w[0].0 + 1);
            prop_assume!(!interrupted);
            let ann = vec![SemanticAssignment { pattern: "log".into(), kind: SemanticKind::Annotator }];
            let rules = RuleSet { semantics: ann.clone(), collapse_loops: true, ..Default::default() };
            let drop_then_collapse = normalize_execution(&exec(&tools), &rules).unwrap();

            let plain = Normalizer::new(&RuleSet { semantics: ann, ..Default::default() }).unwrap();
            let all: Vec<NormalizedCall> = exec(&tools).steps.iter().map(|c| {
                let mut n = plain.normalize_call(c).unwrap();
                n.kind = SemanticKind::Mutator;
                n
            }).collect();
            let collapsed: Vec<NormalizedCall> = collapse_runs(all)
                .into_iter()
                .filter(|c| c.tool_id != "log")
                .collect();
            let a: Vec<_> = drop_then_collapse.iter().map(|c| (c.tool_id.clone(), c.loop_collapsed)).collect();
            let b: Vec<_> = collapsed.iter().map(|c| (c.tool_id.clone(), c.loop_collapsed)).collect();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn normalization_idempotent_for_fixed_point_rules(vals in proptest::collection::vec("[0-9]{1,5}", 1..5)) {
            let rules = RuleSet {
                regex_rules: vec![regex_rule("uid", r"user_id=\d+", "user_id={UID}", Scope::ArgValues)],
                ..Default::default()
            };
            let n = Normalizer::new(&rules).unwrap();
            let re = Regex::new(r"user_id=\d+").unwrap();
            for v in vals {
                let once = n.normalize_call(&ToolCall::new("t", 0).with_arg("user_id", v)).unwrap();
                let twice = re.replace_all(&once.args_canonical, "user_id={UID}");
                prop_assert_eq!(twice.as_ref(), once.args_canonical.as_str());
            }
        }
    }
}
