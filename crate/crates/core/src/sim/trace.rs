//! What an observer of the untrusted side sees: message sizes, FIDs and
//! operator kinds in the clear, comparison outcomes, result sizes, and
//! block-level I/O. Plaintext never enters a trace.

use serde::{Deserialize, Serialize};

use crate::atrest::BlockId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum TraceEvent {
    FidObserved { fid: u64 },
    BlockRead { partition: u32, index: u64 },
    BlockWrite { partition: u32, index: u64 },
    MsgBytes { len: u64 },
    ResultSize { n: u64 },
    CmpBool { b: bool },
    OpKindObserved { op: u8 },
}

impl TraceEvent {
    pub fn block_read(id: BlockId) -> Self {
        TraceEvent::BlockRead {
            partition: id.partition,
            index: id.index,
        }
    }

    pub fn block_write(id: BlockId) -> Self {
        TraceEvent::BlockWrite {
            partition: id.partition,
            index: id.index,
        }
    }
}

#[derive(Serialize)]
struct Line<'a> {
    t: usize,
    #[serde(flatten)]
    event: &'a TraceEvent,
}

/// Ordered event log; the logical clock is the event index.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AdversaryTrace {
    events: Vec<TraceEvent>,
    enabled: bool,
}

impl AdversaryTrace {
    pub fn new(enabled: bool) -> Self {
        AdversaryTrace {
            events: Vec::new(),
            enabled,
        }
    }

    pub fn push(&mut self, e: TraceEvent) {
        if self.enabled {
            self.events.push(e);
        }
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    pub fn set_enabled(&mut self, on: bool) {
        self.enabled = on;
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn clear(&mut self) {
        self.events.clear();
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (t, event) in self.events.iter().enumerate() {
            out.push_str(&serde_json::to_string(&Line { t, event }).unwrap());
            out.push('\n');
        }
        out
    }

    /// Index of the first event where the traces differ.
    pub fn first_divergence(&self, other: &AdversaryTrace) -> Option<usize> {
        let n = self.events.len().min(other.events.len());
        (0..n)
            .find(|&i| self.events[i] != other.events[i])
            .or((self.events.len() != other.events.len()).then_some(n))
    }
}
