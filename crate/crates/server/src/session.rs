use std::sync::{Arc, RwLock};

use serde::Serialize;
use tokio::sync::Mutex;
use tracefold_core::graph::{build_from_normalized, GraphMode, MergedStateGraph};
use tracefold_core::metrics::{graph_stats, GraphStats};
use tracefold_core::normalize::{NormalizedExecution, Normalizer, RuleSet};
use tracefold_core::trace::TraceCorpus;
use tracefold_core::Result;

/// A rule set together with everything derived from it.
#[derive(Debug)]
pub struct Snapshot {
    pub rules: RuleSet,
    pub stats: GraphStats,
    pub view: Vec<NormalizedExecution>,
    pub graph: MergedStateGraph,
}

impl Snapshot {
    pub fn compute(corpus: &TraceCorpus, rules: RuleSet) -> Result<Self> {
        let view = Normalizer::new(&rules)?.normalize_corpus(corpus)?;
        let graph = build_from_normalized(&view, GraphMode::Merged)?;
        Ok(Snapshot {
            stats: graph_stats(&graph),
            rules,
            view,
            graph,
        })
    }
}

#[derive(Debug, Serialize)]
pub struct SessionInfo {
    pub session_id: String,
    pub corpus: String,
    pub snapshot: usize,
    pub stats_history: Vec<GraphStats>,
}

pub struct Session {
    pub id: String,
    pub corpus_label: String,
    pub corpus: Arc<TraceCorpus>,
    snapshots: RwLock<Vec<Arc<Snapshot>>>,
    /// Held for the duration of a mutation; a second mutation gets 409.
    pub mutation: Mutex<()>,
}

impl Session {
    pub fn new(id: String, corpus_label: String, corpus: Arc<TraceCorpus>, initial: Snapshot) -> Self {
        Session {
            id,
            corpus_label,
            corpus,
            snapshots: RwLock::new(vec![Arc::new(initial)]),
            mutation: Mutex::new(()),
        }
    }

    pub fn current(&self) -> Arc<Snapshot> {
        self.snapshots
            .read()
            .expect("snapshot lock")
            .last()
            .cloned()
            .expect("snapshot 0 always present")
    }

    pub fn push(&self, snap: Snapshot) -> usize {
        let mut s = self.snapshots.write().expect("snapshot lock");
        s.push(Arc::new(snap));
        s.len() - 1
    }

    /// Drops the newest snapshot unless it is the initial one.
    pub fn pop(&self) -> Option<Arc<Snapshot>> {
        let mut s = self.snapshots.write().expect("snapshot lock");
        if s.len() <= 1 {
            return None;
        }
        s.pop();
        s.last().cloned()
    }

    pub fn info(&self) -> SessionInfo {
        let s = self.snapshots.read().expect("snapshot lock");
        SessionInfo {
            session_id: self.id.clone(),
            corpus: self.corpus_label.clone(),
            snapshot: s.len() - 1,
            stats_history: s.iter().map(|x| x.stats).collect(),
        }
    }
}
