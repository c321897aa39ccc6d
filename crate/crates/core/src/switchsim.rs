//! Model of an unmodified OpenFlow 1.4 switch.
//!
//! Connections carry a role and an asynchronous-message configuration.
//! Bundles are staged per connection and applied atomically on commit; the
//! commit reply goes to the requesting connection only. Dropping a
//! connection discards everything staged on it. Together with FIFO control
//! channels, the discard rule is what makes a new master's resend safe.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::ofmodel::{
    decode_ack, has_ack_marker, Action, BundleReplyKind, ControlMessage, ControllerId, ErrorCode,
    EventId, Match, PacketIn, PacketInReason, PortId, Role, SwitchId,
};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SwitchError {
    #[error("switch {switch} has no live connection from {controller}")]
    ConnectionDown {
        switch: SwitchId,
        controller: ControllerId,
    },
    #[error("data packet payload starts with the ack marker")]
    AckMarkedPayload,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConnState {
    pub controller: ControllerId,
    pub role: Role,
    /// PacketIn mask applied while the connection is SLAVE. MASTER and EQUAL
    /// connections always receive PacketIns.
    pub slave_packet_in: bool,
    pub open_bundles: BTreeMap<u64, Vec<ControlMessage>>,
    pub alive: bool,
}

impl ConnState {
    fn new(controller: ControllerId) -> Self {
        ConnState {
            controller,
            role: Role::Equal,
            slave_packet_in: false,
            open_bundles: BTreeMap::new(),
            alive: true,
        }
    }

    pub fn packet_in_enabled(&self) -> bool {
        match self.role {
            Role::Master | Role::Equal => true,
            Role::Slave => self.slave_packet_in,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowEntry {
    pub matcher: Match,
    pub priority: i32,
    pub actions: Vec<Action>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ExecKind {
    BundleCommit,
    FlowMod,
    PacketOut,
    PacketFwd,
    PacketIn,
}

/// One entry of the switch's execution log, the ground truth for what the
/// switch actually did.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecRecord {
    pub kind: ExecKind,
    pub bundle_id: Option<u64>,
    pub from: Option<ControllerId>,
    /// Number of staged messages, on `BundleCommit` records.
    pub staged: Option<usize>,
    /// The emitted event, on `PacketIn` records.
    pub event: Option<EventId>,
    /// The executed message for `FlowMod`/`PacketOut`, the emitted one for
    /// `PacketIn`. Output port for `PacketFwd`.
    pub message: Option<ControlMessage>,
    pub port: Option<PortId>,
}

impl ExecRecord {
    fn new(kind: ExecKind) -> Self {
        ExecRecord {
            kind,
            bundle_id: None,
            from: None,
            staged: None,
            event: None,
            message: None,
            port: None,
        }
    }
}

pub type Outbound = Vec<(ControllerId, ControlMessage)>;

#[derive(Debug, Clone)]
pub struct SwitchState {
    pub id: SwitchId,
    pub ports: Vec<PortId>,
    pub flow_table: Vec<FlowEntry>,
    pub conns: BTreeMap<ControllerId, ConnState>,
    pub seq_counter: u64,
    pub generation_id_seen: Option<u64>,
    /// Forward ack-marked PacketIns to every connection regardless of async
    /// configuration (vendor control-packet forwarding).
    pub clone_acks_to_all: bool,
    pub exec_log: Vec<ExecRecord>,
}

impl SwitchState {
    pub fn new(
        id: SwitchId,
        ports: Vec<PortId>,
        flow_table: Vec<FlowEntry>,
        controllers: impl IntoIterator<Item = ControllerId>,
    ) -> Self {
        SwitchState {
            id,
            ports,
            flow_table,
            conns: controllers
                .into_iter()
                .map(|c| (c, ConnState::new(c)))
                .collect(),
            seq_counter: 0,
            generation_id_seen: None,
            clone_acks_to_all: false,
            exec_log: Vec::new(),
        }
    }

    pub fn master(&self) -> Option<ControllerId> {
        self.conns
            .values()
            .find(|c| c.alive && c.role == Role::Master)
            .map(|c| c.controller)
    }

    fn live_conn(&mut self, from: ControllerId) -> Result<&mut ConnState, SwitchError> {
        let id = self.id;
        self.conns
            .get_mut(&from)
            .filter(|c| c.alive)
            .ok_or(SwitchError::ConnectionDown {
                switch: id,
                controller: from,
            })
    }

    /// Processes one controller message to completion and returns the
    /// messages the switch emits, in emission order.
    pub fn handle_message(
        &mut self,
        from: ControllerId,
        msg: ControlMessage,
    ) -> Result<Outbound, SwitchError> {
        let conn = self.live_conn(from)?;
        let role = conn.role;
        let mut out = Outbound::new();
        match msg {
            ControlMessage::Hello => {}
            ControlMessage::RoleRequest {
                role: requested,
                generation_id,
            } => {
                let stale = match (requested, self.generation_id_seen) {
                    (Role::Master, Some(seen)) => generation_id <= seen,
                    (Role::Slave, Some(seen)) => generation_id < seen,
                    _ => false,
                };
                if stale {
                    out.push((
                        from,
                        error(ErrorCode::StaleGeneration, &generation_id.to_be_bytes()),
                    ));
                } else {
                    if requested == Role::Master {
                        for c in self.conns.values_mut() {
                            if c.role == Role::Master && c.controller != from {
                                c.role = Role::Slave;
                            }
                        }
                        self.generation_id_seen = Some(generation_id);
                    }
                    if let Some(c) = self.conns.get_mut(&from) {
                        c.role = requested;
                    }
                    out.push((
                        from,
                        ControlMessage::RoleReply {
                            role: requested,
                            generation_id,
                        },
                    ));
                }
            }
            ControlMessage::SetAsyncConfig { packet_in_enabled } => {
                conn.slave_packet_in = packet_in_enabled;
            }
            ControlMessage::FlowMod { .. } | ControlMessage::PacketOut { .. } => {
                if role == Role::Slave {
                    out.push((from, error(ErrorCode::IsSlave, &[])));
                } else {
                    self.apply(from, None, msg, &mut out);
                }
            }
            ControlMessage::BundleOpen { bundle_id } => {
                if let std::collections::btree_map::Entry::Vacant(slot) =
                    conn.open_bundles.entry(bundle_id)
                {
                    slot.insert(Vec::new());
                    out.push((
                        from,
                        ControlMessage::BundleCtrlReply {
                            bundle_id,
                            kind: BundleReplyKind::OpenOk,
                        },
                    ));
                } else {
                    out.push((from, error(ErrorCode::BadBundle, &bundle_id.to_be_bytes())));
                }
            }
            ControlMessage::BundleAdd { bundle_id, inner } => {
                match conn.open_bundles.get_mut(&bundle_id) {
                    Some(staged) if inner.is_bundleable() => staged.push(*inner),
                    _ => out.push((from, error(ErrorCode::BadBundle, &bundle_id.to_be_bytes()))),
                }
            }
            ControlMessage::BundleCommit { bundle_id } => {
                if role == Role::Slave {
                    out.push((from, error(ErrorCode::IsSlave, &bundle_id.to_be_bytes())));
                } else if let Some(staged) = conn.open_bundles.remove(&bundle_id) {
                    let mut commit = ExecRecord::new(ExecKind::BundleCommit);
                    commit.bundle_id = Some(bundle_id);
                    commit.from = Some(from);
                    commit.staged = Some(staged.len());
                    self.exec_log.push(commit);
                    for m in staged {
                        self.apply(from, Some(bundle_id), m, &mut out);
                    }
                    out.push((
                        from,
                        ControlMessage::BundleCtrlReply {
                            bundle_id,
                            kind: BundleReplyKind::CommitOk,
                        },
                    ));
                } else {
                    out.push((from, error(ErrorCode::BadBundle, &bundle_id.to_be_bytes())));
                }
            }
            // Switch-to-controller messages arriving from a controller are ignored.
            ControlMessage::RoleReply { .. }
            | ControlMessage::PacketIn(_)
            | ControlMessage::BundleCtrlReply { .. }
            | ControlMessage::ErrorMsg { .. } => {}
        }
        Ok(out)
    }

    fn apply(
        &mut self,
        from: ControllerId,
        bundle_id: Option<u64>,
        msg: ControlMessage,
        out: &mut Outbound,
    ) {
        let mut rec = ExecRecord::new(match msg {
            ControlMessage::FlowMod { .. } => ExecKind::FlowMod,
            _ => ExecKind::PacketOut,
        });
        rec.bundle_id = bundle_id;
        rec.from = Some(from);
        rec.message = Some(msg.clone());
        self.exec_log.push(rec);
        match msg {
            ControlMessage::FlowMod {
                matcher,
                priority,
                actions,
            } => {
                // An add with identical match and priority overwrites.
                self.flow_table
                    .retain(|e| !(e.matcher == matcher && e.priority == priority));
                self.flow_table.push(FlowEntry {
                    matcher,
                    priority,
                    actions,
                });
            }
            ControlMessage::PacketOut { actions, payload } => {
                for action in actions {
                    if action == Action::Output(PortId::CONTROLLER) {
                        let pkt = self.new_packet_in(
                            PacketInReason::Action,
                            PortId::CONTROLLER,
                            &payload,
                        );
                        self.emit(pkt, out);
                    }
                }
            }
            _ => unreachable!("only FlowMod and PacketOut are applied"),
        }
    }

    fn new_packet_in(
        &mut self,
        reason: PacketInReason,
        in_port: PortId,
        payload: &[u8],
    ) -> PacketIn {
        self.seq_counter += 1;
        let event = EventId {
            switch: self.id,
            seq: self.seq_counter,
        };
        let pkt = PacketIn {
            event,
            reason,
            in_port,
            payload: payload.to_vec(),
        };
        let mut rec = ExecRecord::new(ExecKind::PacketIn);
        rec.event = Some(event);
        rec.port = Some(in_port);
        rec.message = Some(ControlMessage::PacketIn(pkt.clone()));
        self.exec_log.push(rec);
        pkt
    }

    fn emit(&self, pkt: PacketIn, out: &mut Outbound) {
        out.extend(
            self.deliver_packet_in(&pkt)
                .into_iter()
                .map(|(c, p)| (c, ControlMessage::PacketIn(p))),
        );
    }

    /// Fans an asynchronous event out to the eligible connections. Every copy
    /// carries the same `EventId`.
    pub fn deliver_packet_in(&self, pkt: &PacketIn) -> Vec<(ControllerId, PacketIn)> {
        let to_all = self.clone_acks_to_all && decode_ack(&pkt.payload).is_some();
        self.conns
            .values()
            .filter(|c| c.alive && (to_all || c.packet_in_enabled()))
            .map(|c| (c.controller, pkt.clone()))
            .collect()
    }

    /// A data-plane packet arrives on `in_port`.
    pub fn inject_data_packet(
        &mut self,
        in_port: PortId,
        payload: &[u8],
    ) -> Result<Outbound, SwitchError> {
        if has_ack_marker(payload) {
            return Err(SwitchError::AckMarkedPayload);
        }
        let mut out = Outbound::new();
        let hit = self
            .flow_table
            .iter()
            .enumerate()
            .filter(|(_, e)| e.matcher.matches(in_port, payload))
            // Highest priority wins; among equals the earliest installed.
            .max_by(|(ia, a), (ib, b)| a.priority.cmp(&b.priority).then(ib.cmp(ia)))
            .map(|(_, e)| e.actions.clone());
        match hit {
            Some(actions) => {
                for action in actions {
                    match action {
                        Action::Output(PortId::CONTROLLER) => {
                            let pkt = self.new_packet_in(PacketInReason::Action, in_port, payload);
                            self.emit(pkt, &mut out);
                        }
                        Action::Output(port) => {
                            let mut rec = ExecRecord::new(ExecKind::PacketFwd);
                            rec.port = Some(port);
                            self.exec_log.push(rec);
                        }
                        Action::Drop => {
                            self.exec_log.push(ExecRecord::new(ExecKind::PacketFwd));
                        }
                    }
                }
            }
            None => {
                let pkt = self.new_packet_in(PacketInReason::NoMatch, in_port, payload);
                self.emit(pkt, &mut out);
            }
        }
        Ok(out)
    }

    /// Connection teardown: the connection stops receiving, and bundles
    /// staged on it are discarded unexecuted. Returns the discarded ids.
    pub fn on_connection_drop(&mut self, c: ControllerId) -> Vec<u64> {
        match self.conns.get_mut(&c) {
            Some(conn) if conn.alive => {
                conn.alive = false;
                std::mem::take(&mut conn.open_bundles).into_keys().collect()
            }
            _ => Vec::new(),
        }
    }
}

fn error(code: ErrorCode, context: &[u8]) -> ControlMessage {
    ControlMessage::ErrorMsg {
        code,
        context: context.to_vec(),
    }
}
