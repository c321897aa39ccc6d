//! Control-message accounting.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::trace::{RecordKind, Trace, TraceRecord};

/// Delivery counts per message kind, excluding connection setup.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub deliveries: BTreeMap<String, u64>,
    pub total_deliveries: u64,
    /// Workload events that reached at least the switch's PacketIn logic.
    pub events: u64,
    pub per_event: f64,
}

impl MetricsReport {
    pub(crate) fn observe(&mut self, rec: &TraceRecord) {
        match rec.kind {
            RecordKind::Deliver if !rec.is_setup() => {
                if let Some(msg) = &rec.msg {
                    *self
                        .deliveries
                        .entry(msg.kind_name().to_string())
                        .or_default() += 1;
                    self.total_deliveries += 1;
                }
            }
            RecordKind::Exec
                if rec.get("op") == Some("PACKET_IN") && rec.get("ack") == Some("false") =>
            {
                self.events += 1;
            }
            _ => {}
        }
        self.per_event = if self.events == 0 {
            0.0
        } else {
            self.total_deliveries as f64 / self.events as f64
        };
    }

    pub fn from_trace(trace: &Trace) -> Self {
        let mut m = MetricsReport::default();
        for r in &trace.records {
            m.observe(r);
        }
        m
    }

    pub fn count(&self, kind: &str) -> u64 {
        self.deliveries.get(kind).copied().unwrap_or(0)
    }
}
