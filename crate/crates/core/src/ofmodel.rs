//! The OpenFlow 1.4 message subset exchanged between controllers and switches.
//!
//! Only the message types the replication protocol touches are modeled. Echo,
//! features and barrier messages are absent: control channels are reliable
//! FIFO and switches process messages serially, so barriers add nothing.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ControllerId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SwitchId(pub u32);

/// A switch port. Physical ports are small integers; the reserved values
/// mirror the OpenFlow `OFPP_*` constants and never name a physical port.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PortId(pub u32);

impl PortId {
    pub const FLOOD: PortId = PortId(0xffff_fffb);
    pub const CONTROLLER: PortId = PortId(0xffff_fffd);

    pub fn is_reserved(self) -> bool {
        self.0 >= 0xffff_ff00
    }
}

impl fmt::Display for ControllerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

impl fmt::Display for SwitchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

impl fmt::Display for PortId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            PortId::FLOOD => f.write_str("FLOOD"),
            PortId::CONTROLLER => f.write_str("CONTROLLER"),
            PortId(p) => write!(f, "{p}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Role {
    Master,
    Slave,
    Equal,
}

/// Identity of one asynchronous switch event. `seq` is switch-local and starts at 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EventId {
    pub switch: SwitchId,
    pub seq: u64,
}

impl fmt::Display for EventId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.switch, self.seq)
    }
}

/// Exact match on the optional fields. An empty match is the table-miss entry.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Match {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_port: Option<PortId>,
    #[serde(
        default,
        skip_serializing_if = "Option::is_none",
        with = "crate::hexbytes::option"
    )]
    pub payload_prefix: Option<Vec<u8>>,
}

impl Match {
    pub fn matches(&self, in_port: PortId, payload: &[u8]) -> bool {
        self.in_port.is_none_or(|p| p == in_port)
            && self
                .payload_prefix
                .as_deref()
                .is_none_or(|prefix| payload.starts_with(prefix))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Action {
    Output(PortId),
    Drop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PacketInReason {
    NoMatch,
    Action,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PacketIn {
    pub event: EventId,
    pub reason: PacketInReason,
    pub in_port: PortId,
    #[serde(with = "crate::hexbytes")]
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BundleReplyKind {
    OpenOk,
    CommitOk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCode {
    IsSlave,
    BadBundle,
    StaleGeneration,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum ControlMessage {
    Hello,
    RoleRequest {
        role: Role,
        generation_id: u64,
    },
    RoleReply {
        role: Role,
        generation_id: u64,
    },
    SetAsyncConfig {
        packet_in_enabled: bool,
    },
    PacketIn(PacketIn),
    PacketOut {
        actions: Vec<Action>,
        #[serde(with = "crate::hexbytes")]
        payload: Vec<u8>,
    },
    FlowMod {
        #[serde(rename = "match")]
        matcher: Match,
        priority: i32,
        actions: Vec<Action>,
    },
    BundleOpen {
        bundle_id: u64,
    },
    BundleAdd {
        bundle_id: u64,
        inner: Box<ControlMessage>,
    },
    BundleCommit {
        bundle_id: u64,
    },
    BundleCtrlReply {
        bundle_id: u64,
        kind: BundleReplyKind,
    },
    ErrorMsg {
        code: ErrorCode,
        #[serde(with = "crate::hexbytes")]
        context: Vec<u8>,
    },
}

impl ControlMessage {
    /// Whether the message may be staged inside a bundle.
    pub fn is_bundleable(&self) -> bool {
        matches!(
            self,
            ControlMessage::FlowMod { .. } | ControlMessage::PacketOut { .. }
        )
    }

    pub fn packet_out_to_controller(payload: Vec<u8>) -> Self {
        ControlMessage::PacketOut {
            actions: vec![Action::Output(PortId::CONTROLLER)],
            payload,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            ControlMessage::Hello => "Hello",
            ControlMessage::RoleRequest { .. } => "RoleRequest",
            ControlMessage::RoleReply { .. } => "RoleReply",
            ControlMessage::SetAsyncConfig { .. } => "SetAsyncConfig",
            ControlMessage::PacketIn(p) if decode_ack(&p.payload).is_some() => "PacketIn(ack)",
            ControlMessage::PacketIn(_) => "PacketIn",
            ControlMessage::PacketOut { .. } => "PacketOut",
            ControlMessage::FlowMod { .. } => "FlowMod",
            ControlMessage::BundleOpen { .. } => "BundleOpen",
            ControlMessage::BundleAdd { .. } => "BundleAdd",
            ControlMessage::BundleCommit { .. } => "BundleCommit",
            ControlMessage::BundleCtrlReply { .. } => "BundleCtrlReply",
            ControlMessage::ErrorMsg { .. } => "ErrorMsg",
        }
    }
}

/// Commit notification carried in the payload of the PacketOut that closes
/// every command bundle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AckPayload {
    pub view: u64,
    pub log_index: u64,
    pub target_switch: SwitchId,
}

/// Leading tag of every encoded ack. Workload payloads may not start with it.
pub const ACK_MARKER: [u8; 4] = [0xfe, b'A', b'C', b'K'];

/// Marker plus big-endian view (8), index (8) and switch (4).
pub const ACK_LEN: usize = ACK_MARKER.len() + 8 + 8 + 4;

pub fn encode_ack(view: u64, log_index: u64, switch: SwitchId) -> Vec<u8> {
    let mut buf = Vec::with_capacity(ACK_LEN);
    buf.extend_from_slice(&ACK_MARKER);
    buf.extend_from_slice(&view.to_be_bytes());
    buf.extend_from_slice(&log_index.to_be_bytes());
    buf.extend_from_slice(&switch.0.to_be_bytes());
    buf
}

/// Inverse of [`encode_ack`]; `None` for anything that is not exactly an
/// encoded ack.
pub fn decode_ack(payload: &[u8]) -> Option<AckPayload> {
    let body = payload.strip_prefix(&ACK_MARKER[..])?;
    if body.len() != ACK_LEN - ACK_MARKER.len() {
        return None;
    }
    let (view, rest) = body.split_at(8);
    let (index, switch) = rest.split_at(8);
    Some(AckPayload {
        view: u64::from_be_bytes(view.try_into().ok()?),
        log_index: u64::from_be_bytes(index.try_into().ok()?),
        target_switch: SwitchId(u32::from_be_bytes(switch.try_into().ok()?)),
    })
}

pub fn has_ack_marker(payload: &[u8]) -> bool {
    payload.starts_with(&ACK_MARKER)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn zero_ack_is_marker_then_zeros() {
        let bytes = encode_ack(0, 0, SwitchId(0));
        assert_eq!(&bytes[..4], &ACK_MARKER);
        assert_eq!(bytes.len(), ACK_LEN);
        assert!(bytes[4..].iter().all(|&b| b == 0));
    }

    #[test]
    fn ack_round_trip_random_triples() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let (v, i, s) = (rng.gen::<u64>(), rng.gen::<u64>(), SwitchId(rng.gen()));
            assert_eq!(
                decode_ack(&encode_ack(v, i, s)),
                Some(AckPayload {
                    view: v,
                    log_index: i,
                    target_switch: s
                })
            );
        }
    }

    #[test]
    fn specific_ack_decodes() {
        let ack = decode_ack(&encode_ack(3, 7, SwitchId(1))).unwrap();
        assert_eq!(
            (ack.view, ack.log_index, ack.target_switch),
            (3, 7, SwitchId(1))
        );
    }

    #[test]
    fn non_acks_are_rejected() {
        assert_eq!(decode_ack(&[]), None);
        assert_eq!(decode_ack(b"\x01\x02hello"), None);
        let mut truncated = encode_ack(1, 2, SwitchId(3));
        truncated.pop();
        assert_eq!(decode_ack(&truncated), None);
        assert_eq!(decode_ack(&ACK_MARKER), None);
        let mut long = encode_ack(1, 2, SwitchId(3));
        long.push(0);
        assert_eq!(decode_ack(&long), None);
    }

    #[test]
    fn empty_match_is_table_miss_entry() {
        let m = Match::default();
        assert!(m.matches(PortId(1), b""));
        assert!(m.matches(PortId(9), b"abc"));
        let m = Match {
            in_port: Some(PortId(2)),
            payload_prefix: Some(vec![b'a']),
        };
        assert!(m.matches(PortId(2), b"abc"));
        assert!(!m.matches(PortId(1), b"abc"));
        assert!(!m.matches(PortId(2), b"xbc"));
    }

    #[test]
    fn reserved_ports_are_not_physical() {
        assert!(PortId::CONTROLLER.is_reserved());
        assert!(PortId::FLOOD.is_reserved());
        assert!(!PortId(4).is_reserved());
    }

    #[test]
    fn message_json_round_trip_is_structural() {
        let msg = ControlMessage::BundleAdd {
            bundle_id: 4,
            inner: Box::new(ControlMessage::FlowMod {
                matcher: Match {
                    in_port: None,
                    payload_prefix: Some(vec![7]),
                },
                priority: 10,
                actions: vec![Action::Output(PortId(2))],
            }),
        };
        let json = serde_json::to_string(&msg).unwrap();
        let back: ControlMessage = serde_json::from_str(&json).unwrap();
        assert_eq!(back, msg);
        assert_eq!(serde_json::to_string(&back).unwrap(), json);
    }

    proptest! {
        #[test]
        fn ack_round_trip(view in any::<u64>(), index in any::<u64>(), sw in any::<u32>()) {
            let bytes = encode_ack(view, index, SwitchId(sw));
            prop_assert!(has_ack_marker(&bytes));
            let ack = decode_ack(&bytes).unwrap();
            prop_assert_eq!(ack, AckPayload { view, log_index: index, target_switch: SwitchId(sw) });
        }

        #[test]
        fn unmarked_payloads_never_decode(payload in proptest::collection::vec(any::<u8>(), 0..40)) {
            prop_assume!(!has_ack_marker(&payload));
            prop_assert_eq!(decode_ack(&payload), None);
        }
    }
}
