use std::fmt::{self, Write};

use serde::Serialize;

use crate::registry::DeploymentId;
use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    RequestArrival,
    Rejected,
    Admission,
    Completion,
    Failure,
    MemoHit,
    Return,
    Trigger,
    Demotion,
    /// Offender kept as the last active deployment, moved to the back.
    Reorder,
    Promotion,
    Tick,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EventKind::RequestArrival => "request-arrival",
            EventKind::Rejected => "rejected",
            EventKind::Admission => "admission",
            EventKind::Completion => "completion",
            EventKind::Failure => "failure",
            EventKind::MemoHit => "memo-hit",
            EventKind::Return => "return",
            EventKind::Trigger => "trigger",
            EventKind::Demotion => "demotion",
            EventKind::Reorder => "reorder",
            EventKind::Promotion => "promotion",
            EventKind::Tick => "tick",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogRecord {
    pub seq: u64,
    pub time: SimTime,
    pub kind: EventKind,
    pub composition: Option<u64>,
    pub client: Option<u32>,
    pub node: Option<usize>,
    pub service: Option<String>,
    pub deployment: Option<DeploymentId>,
    pub detail: String,
}

impl LogRecord {
    pub fn new(time: SimTime, kind: EventKind) -> Self {
        Self {
            seq: 0,
            time,
            kind,
            composition: None,
            client: None,
            node: None,
            service: None,
            deployment: None,
            detail: String::new(),
        }
    }

    pub fn composition(mut self, id: u64, client: u32) -> Self {
        self.composition = Some(id);
        self.client = Some(client);
        self
    }

    pub fn node(mut self, node: usize, service: &str) -> Self {
        self.node = Some(node);
        self.service = Some(service.to_string());
        self
    }

    pub fn deployment(mut self, d: &DeploymentId) -> Self {
        self.service.get_or_insert_with(|| d.service.clone());
        self.deployment = Some(d.clone());
        self
    }

    pub fn detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }
}

/// Append-only record of control and data-plane events.
#[derive(Debug, Clone, Default)]
pub struct EventLog {
    records: Vec<LogRecord>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, mut record: LogRecord) {
        record.seq = self.records.len() as u64;
        self.records.push(record);
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.records.iter().filter(|r| r.kind == kind).count()
    }

    /// One comma-separated line per record under a header line.
    pub fn to_text(&self) -> String {
        let mut out = String::from("seq,time,kind,composition,client,node,service,deployment,detail\n");
        for r in &self.records {
            let opt = |v: Option<String>| v.unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.seq,
                r.time,
                r.kind,
                opt(r.composition.map(|c| c.to_string())),
                opt(r.client.map(|c| c.to_string())),
                opt(r.node.map(|n| n.to_string())),
                r.service.as_deref().unwrap_or(""),
                opt(r.deployment.as_ref().map(|d| d.to_string())),
                r.detail,
            );
        }
        out
    }
}
