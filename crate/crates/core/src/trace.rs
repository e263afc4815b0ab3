//! Execution-trace data model and JSONL ingestion.
//!
//! One line of a trace file holds one execution:
//!
//! ```text
//! {"task_id": "t1", "outcome": "success", "steps": [{"tool": "a", "args": {"k": "v"}}]}
//! ```
//!
//! Argument values must already be strings. Unknown fields are ignored with a
//! warning so that producers can carry extra metadata.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// A single tool invocation inside an execution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCall {
    pub tool_id: String,
    pub args: IndexMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result_digest: Option<String>,
    /// Position of the call within its execution, 0-based.
    pub index: usize,
}

impl ToolCall {
    pub fn new(tool_id: impl Into<String>, index: usize) -> Self {
        ToolCall {
            tool_id: tool_id.into(),
            args: IndexMap::new(),
            result_digest: None,
            index,
        }
    }

    pub fn with_arg(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.args.insert(key.into(), value.into());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Success,
    Failure,
    #[default]
    Unknown,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Success => "success",
            Outcome::Failure => "failure",
            Outcome::Unknown => "unknown",
        }
    }
}

impl FromStr for Outcome {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "success" => Ok(Outcome::Success),
            "failure" => Ok(Outcome::Failure),
            "unknown" => Ok(Outcome::Unknown),
            other => Err(format!("unknown outcome {other:?}")),
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One agent run: an ordered sequence of tool calls.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Execution {
    pub task_id: String,
    pub steps: Vec<ToolCall>,
    pub outcome: Outcome,
}

impl Execution {
    /// Builds an execution from bare tool names, assigning indices in order.
    pub fn from_tools<I, S>(task_id: impl Into<String>, tools: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let steps = tools
            .into_iter()
            .enumerate()
            .map(|(i, t)| ToolCall::new(t, i))
            .collect();
        Execution {
            task_id: task_id.into(),
            steps,
            outcome: Outcome::Unknown,
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TraceCorpus {
    pub executions: Vec<Execution>,
    pub source_label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub executions: usize,
    pub total_calls: usize,
    pub distinct_tools: usize,
    pub max_length: usize,
}

impl TraceCorpus {
    /// Builds a corpus, rejecting duplicate task ids and misnumbered steps.
    pub fn new(source_label: impl Into<String>, executions: Vec<Execution>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (line, exec) in executions.iter().enumerate() {
            if !seen.insert(exec.task_id.as_str()) {
                return Err(Error::schema(line + 1, format!("duplicate task_id {:?}", exec.task_id)));
            }
            for (i, call) in exec.steps.iter().enumerate() {
                if call.index != i {
                    return Err(Error::schema(
                        line + 1,
                        format!("step {i} carries index {}", call.index),
                    ));
                }
                check_tool_id(&call.tool_id).map_err(|m| Error::schema(line + 1, m))?;
            }
        }
        Ok(TraceCorpus {
            executions,
            source_label: source_label.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.executions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.executions.is_empty()
    }

    pub fn summary(&self) -> CorpusSummary {
        corpus_summary(self)
    }

    /// Returns the sub-corpus made of the given execution indices, in the given order.
    pub fn subset(&self, indices: &[usize]) -> TraceCorpus {
        TraceCorpus {
            executions: indices.iter().map(|&i| self.executions[i].clone()).collect(),
            source_label: self.source_label.clone(),
        }
    }
}

pub fn corpus_summary(corpus: &TraceCorpus) -> CorpusSummary {
    let tools: BTreeSet<&str> = corpus
        .executions
        .iter()
        .flat_map(|e| e.steps.iter().map(|c| c.tool_id.as_str()))
        .collect();
    CorpusSummary {
        executions: corpus.executions.len(),
        total_calls: corpus.executions.iter().map(Execution::len).sum(),
        distinct_tools: tools.len(),
        max_length: corpus.executions.iter().map(Execution::len).max().unwrap_or(0),
    }
}

fn check_tool_id(tool_id: &str) -> std::result::Result<(), String> {
    if tool_id.is_empty() {
        return Err("empty tool id".into());
    }
    if tool_id.contains(['\n', '\r']) {
        return Err(format!("tool id {tool_id:?} contains a newline"));
    }
    Ok(())
}

/// Reads a JSONL trace file.
pub fn ingest_corpus(path: impl AsRef<Path>) -> Result<TraceCorpus> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_corpus(std::io::BufReader::new(file), label).map_err(|e| match e {
        Error::Io { source, .. } => Error::Io {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

/// Reads JSONL records from any buffered reader. Blank lines are skipped.
pub fn read_corpus(reader: impl BufRead, source_label: impl Into<String>) -> Result<TraceCorpus> {
    let mut executions = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|source| Error::Io {
            path: Default::default(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let exec = parse_record(&line, lineno)?;
        if !seen.insert(exec.task_id.clone()) {
            return Err(Error::schema(lineno, format!("duplicate task_id {:?}", exec.task_id)));
        }
        executions.push(exec);
    }
    Ok(TraceCorpus {
        executions,
        source_label: source_label.into(),
    })
}

pub fn parse_corpus_str(text: &str, source_label: impl Into<String>) -> Result<TraceCorpus> {
    read_corpus(text.as_bytes(), source_label)
}

fn parse_record(line: &str, lineno: usize) -> Result<Execution> {
    let value: Value = serde_json::from_str(line).map_err(|e| Error::schema(lineno, format!("invalid JSON: {e}")))?;
    let Value::Object(obj) = value else {
        return Err(Error::schema(lineno, "record is not a JSON object"));
    };
    warn_unknown(&obj, &["task_id", "outcome", "steps"], lineno, "record");

    let task_id = match obj.get("task_id") {
        Some(Value::String(s)) if !s.is_empty() => s.clone(),
        Some(Value::String(_)) => return Err(Error::schema(lineno, "empty task_id")),
        Some(_) => return Err(Error::schema(lineno, "task_id must be a string")),
        None => return Err(Error::schema(lineno, "missing task_id")),
    };
    let outcome = match obj.get("outcome") {
        None | Some(Value::Null) => Outcome::Unknown,
        Some(Value::String(s)) => s.parse().map_err(|m| Error::schema(lineno, m))?,
        Some(_) => return Err(Error::schema(lineno, "outcome must be a string")),
    };
    let steps = match obj.get("steps") {
        Some(Value::Array(items)) => items
            .iter()
            .enumerate()
            .map(|(i, item)| parse_step(item, i, lineno))
            .collect::<Result<Vec<_>>>()?,
        Some(_) => return Err(Error::schema(lineno, "steps must be an array")),
        None => return Err(Error::schema(lineno, "missing steps")),
    };
    Ok(Execution {
        task_id,
        steps,
        outcome,
    })
}

fn parse_step(item: &Value, position: usize, lineno: usize) -> Result<ToolCall> {
    let Value::Object(obj) = item else {
        return Err(Error::schema(lineno, format!("step {position} is not an object")));
    };
    warn_unknown(obj, &["tool", "args", "result_digest", "index"], lineno, "step");

    let tool_id = match obj.get("tool") {
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(Error::schema(lineno, format!("step {position}: tool must be a string"))),
        None => return Err(Error::schema(lineno, format!("step {position}: missing tool"))),
    };
    check_tool_id(&tool_id).map_err(|m| Error::schema(lineno, format!("step {position}: {m}")))?;

    let mut args = IndexMap::new();
    match obj.get("args") {
        None | Some(Value::Null) => {}
        Some(Value::Object(map)) => {
            for (k, v) in map {
                let Value::String(s) = v else {
                    return Err(Error::schema(
                        lineno,
                        format!("step {position}: argument {k:?} is not a string"),
                    ));
                };
                args.insert(k.clone(), s.clone());
            }
        }
        Some(_) => {
            return Err(Error::schema(
                lineno,
                format!("step {position}: args must be an object"),
            ))
        }
    }

    let result_digest = match obj.get("result_digest") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => {
            return Err(Error::schema(
                lineno,
                format!("step {position}: result_digest must be a string"),
            ))
        }
    };

    if let Some(index) = obj.get("index") {
        match index.as_i64() {
            Some(i) if i < 0 => return Err(Error::schema(lineno, format!("step {position}: negative index {i}"))),
            Some(i) if i as usize != position => {
                return Err(Error::schema(
                    lineno,
                    format!("step {position}: index {i} does not match position"),
                ))
            }
            Some(_) => {}
            None => {
                return Err(Error::schema(
                    lineno,
                    format!("step {position}: index must be an integer"),
                ))
            }
        }
    }

    Ok(ToolCall {
        tool_id,
        args,
        result_digest,
        index: position,
    })
}

fn warn_unknown(obj: &Map<String, Value>, known: &[&str], lineno: usize, what: &str) {
    for key in obj.keys() {
        if !known.contains(&key.as_str()) {
            log::warn!("line {lineno}: ignoring unknown {what} field {key:?}");
        }
    }
}

fn record_value(exec: &Execution) -> Value {
    let steps: Vec<Value> = exec
        .steps
        .iter()
        .map(|call| {
            let mut step = Map::new();
            step.insert("tool".into(), Value::String(call.tool_id.clone()));
            let args: Map<String, Value> = call
                .args
                .iter()
                .map(|(k, v)| (k.clone(), Value::String(v.clone())))
                .collect();
            step.insert("args".into(), Value::Object(args));
            if let Some(d) = &call.result_digest {
                step.insert("result_digest".into(), Value::String(d.clone()));
            }
            Value::Object(step)
        })
        .collect();
    let mut obj = Map::new();
    obj.insert("task_id".into(), Value::String(exec.task_id.clone()));
    obj.insert("outcome".into(), Value::String(exec.outcome.as_str().into()));
    obj.insert("steps".into(), Value::Array(steps));
    Value::Object(obj)
}

/// Writes the corpus in the same JSONL layout `read_corpus` accepts.
pub fn write_corpus(corpus: &TraceCorpus, mut out: impl Write) -> std::io::Result<()> {
    for exec in &corpus.executions {
        serde_json::to_writer(&mut out, &record_value(exec))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn corpus_to_jsonl(corpus: &TraceCorpus) -> String {
    let mut buf = Vec::new();
    write_corpus(corpus, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}
