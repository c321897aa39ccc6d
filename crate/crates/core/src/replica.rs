//! One controller replica.
//!
//! Every replica receives every switch event and buffers it. The leader of
//! the current view orders events in a replicated log; an entry commits once
//! a majority holds it, and all replicas apply committed entries in log
//! order. Only the leader, once it is MASTER on a switch, sends that switch
//! the resulting commands: one bundle per (log index, switch), closed by a
//! PacketOut whose payload is an ack every replica will see when the switch
//! commits the bundle.
//!
//! Failover runs in this order:
//!
//! 1. collect `DoViewChange` from a majority, adopt the most recent log, and
//!    replicate it together with a VIEW entry;
//! 2. send `RoleRequest(MASTER, view)` to every switch and wait for all
//!    replies. Control channels are FIFO and a dropped connection discards
//!    its staged bundles, so once a reply is in, every ack the switch emitted
//!    for the old master's bundles has already been received;
//! 3. propose every buffered event the log does not hold;
//! 4. resend each applied batch whose ack has not been seen, with the same
//!    bundle id.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::app::{AppState, Commands};
use crate::ofmodel::{
    decode_ack, encode_ack, ControlMessage, ControllerId, EventId, PacketIn, PortId, Role, SwitchId,
};

/// Protocol variant under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Variant {
    /// Events reach the master only; commands are sent unbundled and without
    /// acks; a new master replays every batch it has applied.
    Naive,
    /// Acks reach slaves because slaves subscribe to PacketIns.
    PaperA,
    /// Acks reach every controller through switch-side forwarding config.
    PaperB,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Naive, Variant::PaperA, Variant::PaperB];

    pub fn uses_bundles(self) -> bool {
        self != Variant::Naive
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EntryKind {
    Event {
        event: EventId,
        in_port: PortId,
        #[serde(with = "crate::hexbytes")]
        payload: Vec<u8>,
    },
    View {
        view: u64,
        leader: ControllerId,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LogEntry {
    pub index: u64,
    /// View in which the entry was proposed.
    pub view: u64,
    pub kind: EntryKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum ReplMessage {
    Append {
        view: u64,
        prev_index: u64,
        entries: Vec<LogEntry>,
        commit_index: u64,
    },
    AppendAck {
        view: u64,
        index: u64,
    },
    CommitAdvance {
        view: u64,
        commit_index: u64,
    },
    DoViewChange {
        view: u64,
        last_normal_view: u64,
        log: Vec<LogEntry>,
        commit_index: u64,
    },
}

impl ReplMessage {
    pub fn view(&self) -> u64 {
        match self {
            ReplMessage::Append { view, .. }
            | ReplMessage::AppendAck { view, .. }
            | ReplMessage::CommitAdvance { view, .. }
            | ReplMessage::DoViewChange { view, .. } => *view,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            ReplMessage::Append { .. } => "Append",
            ReplMessage::AppendAck { .. } => "AppendAck",
            ReplMessage::CommitAdvance { .. } => "CommitAdvance",
            ReplMessage::DoViewChange { .. } => "DoViewChange",
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReplicaError {
    #[error("bundle for index {0} has no commands")]
    EmptyBundle(u64),
    #[error("bundle for index {0} contains a message that cannot be bundled")]
    NotBundleable(u64),
}

/// The messages that carry one command batch to a switch: open, the
/// commands, the ack PacketOut, commit. Bundle id is the log index.
pub fn build_bundle(
    view: u64,
    index: u64,
    sw: SwitchId,
    cmds: &[ControlMessage],
) -> Result<Vec<ControlMessage>, ReplicaError> {
    if cmds.is_empty() {
        return Err(ReplicaError::EmptyBundle(index));
    }
    if !cmds.iter().all(ControlMessage::is_bundleable) {
        return Err(ReplicaError::NotBundleable(index));
    }
    let add = |inner: ControlMessage| ControlMessage::BundleAdd {
        bundle_id: index,
        inner: Box::new(inner),
    };
    let mut out = Vec::with_capacity(cmds.len() + 3);
    out.push(ControlMessage::BundleOpen { bundle_id: index });
    out.extend(cmds.iter().cloned().map(add));
    out.push(add(ControlMessage::packet_out_to_controller(encode_ack(
        view, index, sw,
    ))));
    out.push(ControlMessage::BundleCommit { bundle_id: index });
    Ok(out)
}

/// Trace-level attribution of a command message to its batch. Switches never
/// see it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchTag {
    pub index: u64,
    pub pos: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Effect {
    ToSwitch {
        sw: SwitchId,
        msg: ControlMessage,
        batch: Option<BatchTag>,
    },
    ToReplica {
        to: ControllerId,
        msg: ReplMessage,
    },
    Applied {
        index: u64,
        kind: EntryKind,
        /// Number of commands per target switch.
        commands: BTreeMap<SwitchId, usize>,
        digest: String,
    },
    /// A message from an older view was ignored.
    Stale,
    Stalled {
        alive: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Normal,
    ViewChange,
    Stalled,
}

#[derive(Debug, Clone)]
pub struct ReplicaConfig {
    pub id: ControllerId,
    pub n_replicas: usize,
    pub switches: Vec<SwitchId>,
    pub variant: Variant,
}

#[derive(Debug, Clone)]
struct ViewChangeVote {
    last_normal_view: u64,
    log: Vec<LogEntry>,
    commit_index: u64,
}

#[derive(Debug, Clone)]
pub struct ReplicaState {
    pub cfg: ReplicaConfig,
    pub view: u64,
    pub status: Status,
    pub last_normal_view: u64,
    pub log: Vec<LogEntry>,
    pub commit_index: u64,
    pub applied_index: u64,
    pub event_buffer: BTreeMap<EventId, (PortId, Vec<u8>)>,
    pub ack_table: BTreeMap<SwitchId, BTreeSet<u64>>,
    pub app: AppState,
    /// Highest index each follower acknowledged in the current view (leader only).
    pub match_index: BTreeMap<ControllerId, u64>,
    pub crashed: BTreeSet<ControllerId>,
    /// Switches on which this replica holds MASTER in the current view.
    pub mastered: BTreeSet<SwitchId>,
    pub awaiting_roles: BTreeSet<SwitchId>,
    /// Commands of every applied entry that produced any.
    pub batches: BTreeMap<u64, Commands>,
    applied_events: BTreeSet<EventId>,
    votes: BTreeMap<u64, BTreeMap<ControllerId, ViewChangeVote>>,
}

impl ReplicaState {
    pub fn new(cfg: ReplicaConfig, app: AppState) -> Self {
        ReplicaState {
            cfg,
            view: 0,
            status: Status::Normal,
            last_normal_view: 0,
            log: Vec::new(),
            commit_index: 0,
            applied_index: 0,
            event_buffer: BTreeMap::new(),
            ack_table: BTreeMap::new(),
            app,
            match_index: BTreeMap::new(),
            crashed: BTreeSet::new(),
            mastered: BTreeSet::new(),
            awaiting_roles: BTreeSet::new(),
            batches: BTreeMap::new(),
            applied_events: BTreeSet::new(),
            votes: BTreeMap::new(),
        }
    }

    pub fn id(&self) -> ControllerId {
        self.cfg.id
    }

    pub fn leader_of(&self, view: u64) -> ControllerId {
        ControllerId((view % self.cfg.n_replicas as u64) as u32)
    }

    pub fn is_leader(&self) -> bool {
        self.leader_of(self.view) == self.id()
    }

    /// Leader of the current view with the fence complete on every switch.
    pub fn is_active_leader(&self) -> bool {
        self.is_leader() && self.status == Status::Normal && self.awaiting_roles.is_empty()
    }

    fn majority(&self) -> usize {
        self.cfg.n_replicas / 2 + 1
    }

    fn peers(&self) -> Vec<ControllerId> {
        (0..self.cfg.n_replicas as u32)
            .map(ControllerId)
            .filter(|c| *c != self.id() && !self.crashed.contains(c))
            .collect()
    }

    pub fn is_acked(&self, index: u64, sw: SwitchId) -> bool {
        self.ack_table.get(&sw).is_some_and(|s| s.contains(&index))
    }

    pub fn log_contains(&self, event: EventId) -> bool {
        self.log
            .iter()
            .any(|e| matches!(e.kind, EntryKind::Event { event: ev, .. } if ev == event))
    }

    /// Initial connection setup in view 0: the leader claims every switch;
    /// the others declare themselves slaves and, outside the naive variant,
    /// subscribe to PacketIns.
    pub fn setup(&mut self) -> Vec<Effect> {
        let mut out = Vec::new();
        if self.is_leader() {
            self.claim_switches(&mut out);
        } else {
            for &sw in &self.cfg.switches {
                out.push(to_switch(
                    sw,
                    ControlMessage::RoleRequest {
                        role: Role::Slave,
                        generation_id: self.view,
                    },
                ));
                if self.cfg.variant != Variant::Naive {
                    out.push(to_switch(
                        sw,
                        ControlMessage::SetAsyncConfig {
                            packet_in_enabled: true,
                        },
                    ));
                }
            }
        }
        out
    }

    fn claim_switches(&mut self, out: &mut Vec<Effect>) {
        self.mastered.clear();
        self.awaiting_roles = self.cfg.switches.iter().copied().collect();
        for &sw in &self.cfg.switches {
            out.push(to_switch(
                sw,
                ControlMessage::RoleRequest {
                    role: Role::Master,
                    generation_id: self.view,
                },
            ));
        }
        if self.awaiting_roles.is_empty() {
            self.finish_fence(out);
        }
    }

    pub fn on_switch_message(&mut self, sw: SwitchId, msg: ControlMessage) -> Vec<Effect> {
        let mut out = Vec::new();
        if self.status == Status::Stalled {
            return out;
        }
        match msg {
            ControlMessage::PacketIn(pkt) => self.packet_in(sw, pkt, &mut out),
            ControlMessage::RoleReply {
                role: Role::Master,
                generation_id,
            } if generation_id == self.view
                && self.is_leader()
                && self.status == Status::Normal
                && self.awaiting_roles.remove(&sw) =>
            {
                self.mastered.insert(sw);
                if self.awaiting_roles.is_empty() {
                    self.finish_fence(&mut out);
                }
            }
            _ => {}
        }
        out
    }

    pub fn on_packet_in(&mut self, sw: SwitchId, pkt: PacketIn) -> Vec<Effect> {
        self.on_switch_message(sw, ControlMessage::PacketIn(pkt))
    }

    fn packet_in(&mut self, _sw: SwitchId, pkt: PacketIn, out: &mut Vec<Effect>) {
        if let Some(ack) = decode_ack(&pkt.payload) {
            self.ack_table
                .entry(ack.target_switch)
                .or_default()
                .insert(ack.log_index);
            return;
        }
        if self.applied_events.contains(&pkt.event) {
            return;
        }
        self.event_buffer
            .insert(pkt.event, (pkt.in_port, pkt.payload.clone()));
        if self.is_active_leader() && !self.log_contains(pkt.event) {
            self.propose(
                EntryKind::Event {
                    event: pkt.event,
                    in_port: pkt.in_port,
                    payload: pkt.payload,
                },
                out,
            );
        }
    }

    fn propose(&mut self, kind: EntryKind, out: &mut Vec<Effect>) {
        let index = self.log.len() as u64 + 1;
        let entry = LogEntry {
            index,
            view: self.view,
            kind,
        };
        self.log.push(entry.clone());
        for to in self.peers() {
            out.push(Effect::ToReplica {
                to,
                msg: ReplMessage::Append {
                    view: self.view,
                    prev_index: index - 1,
                    entries: vec![entry.clone()],
                    commit_index: self.commit_index,
                },
            });
        }
        self.try_commit(out);
    }

    pub fn on_repl_message(&mut self, from: ControllerId, msg: ReplMessage) -> Vec<Effect> {
        let mut out = Vec::new();
        if self.status == Status::Stalled {
            return out;
        }
        if msg.view() < self.view {
            out.push(Effect::Stale);
            return out;
        }
        match msg {
            ReplMessage::Append {
                view,
                prev_index,
                entries,
                commit_index,
            } => {
                if self.leader_of(view) == self.id() || prev_index > self.log.len() as u64 {
                    out.push(Effect::Stale);
                    return out;
                }
                self.view = view;
                self.status = Status::Normal;
                self.last_normal_view = view;
                debug_assert!(
                    prev_index >= self.commit_index
                        || entries
                            .iter()
                            .all(|e| e.index > self.commit_index
                                || self.log[e.index as usize - 1] == *e),
                    "append would rewrite committed entries"
                );
                self.log.truncate(prev_index as usize);
                self.log.extend(entries);
                self.advance_commit(commit_index.min(self.log.len() as u64), &mut out);
                out.push(Effect::ToReplica {
                    to: from,
                    msg: ReplMessage::AppendAck {
                        view,
                        index: self.log.len() as u64,
                    },
                });
            }
            ReplMessage::AppendAck { view, index } => {
                if view == self.view && self.is_leader() && self.status == Status::Normal {
                    let m = self.match_index.entry(from).or_insert(0);
                    *m = (*m).max(index);
                    self.try_commit(&mut out);
                }
            }
            ReplMessage::CommitAdvance { view, commit_index } => {
                if view == self.view && self.status == Status::Normal {
                    self.advance_commit(commit_index.min(self.log.len() as u64), &mut out);
                }
            }
            ReplMessage::DoViewChange {
                view,
                last_normal_view,
                log,
                commit_index,
            } => {
                self.votes.entry(view).or_default().insert(
                    from,
                    ViewChangeVote {
                        last_normal_view,
                        log,
                        commit_index,
                    },
                );
                if view == self.view && self.status == Status::ViewChange && self.is_leader() {
                    self.try_finish_view_change(&mut out);
                }
            }
        }
        out
    }

    fn try_commit(&mut self, out: &mut Vec<Effect>) {
        let len = self.log.len() as u64;
        let mut new_commit = self.commit_index;
        for i in (self.commit_index + 1)..=len {
            let holders = 1 + self.match_index.values().filter(|&&m| m >= i).count();
            if holders >= self.majority() {
                new_commit = i;
            }
        }
        if new_commit > self.commit_index {
            self.commit_index = new_commit;
            for to in self.peers() {
                out.push(Effect::ToReplica {
                    to,
                    msg: ReplMessage::CommitAdvance {
                        view: self.view,
                        commit_index: new_commit,
                    },
                });
            }
            self.apply_committed(out);
        }
    }

    fn advance_commit(&mut self, commit: u64, out: &mut Vec<Effect>) {
        if commit > self.commit_index {
            self.commit_index = commit;
            self.apply_committed(out);
        }
    }

    fn apply_committed(&mut self, out: &mut Vec<Effect>) {
        while self.applied_index < self.commit_index {
            let entry = self.log[self.applied_index as usize].clone();
            self.apply_entry(entry, out);
        }
    }

    /// Applies the next committed entry. Every replica advances its app state;
    /// the active leader also sends the resulting commands.
    pub fn apply_entry(&mut self, entry: LogEntry, out: &mut Vec<Effect>) {
        assert_eq!(
            entry.index,
            self.applied_index + 1,
            "entries apply in order"
        );
        assert!(
            entry.index <= self.commit_index,
            "only committed entries apply"
        );
        self.applied_index = entry.index;
        let mut counts = BTreeMap::new();
        if let EntryKind::Event {
            event,
            in_port,
            payload,
        } = &entry.kind
        {
            self.event_buffer.remove(event);
            self.applied_events.insert(*event);
            let (next, mut cmds) = self.app.process_event(event.switch, *in_port, payload);
            self.app = next;
            cmds.retain(|_, c| !c.is_empty());
            counts = cmds.iter().map(|(s, c)| (*s, c.len())).collect();
            if !cmds.is_empty() {
                self.batches.insert(entry.index, cmds);
            }
        }
        out.push(Effect::Applied {
            index: entry.index,
            kind: entry.kind,
            commands: counts,
            digest: self.app.digest(),
        });
        if self.is_active_leader() {
            if let Some(cmds) = self.batches.get(&entry.index).cloned() {
                for (sw, batch) in cmds {
                    if self.mastered.contains(&sw) && !self.is_acked(entry.index, sw) {
                        self.send_batch(entry.index, sw, &batch, out);
                    }
                }
            }
        }
    }

    fn send_batch(&self, index: u64, sw: SwitchId, cmds: &[ControlMessage], out: &mut Vec<Effect>) {
        let msgs = if self.cfg.variant.uses_bundles() {
            build_bundle(self.view, index, sw, cmds).expect("app emits bundleable commands")
        } else {
            cmds.to_vec()
        };
        out.extend(
            msgs.into_iter()
                .enumerate()
                .map(|(pos, msg)| Effect::ToSwitch {
                    sw,
                    msg,
                    batch: Some(BatchTag {
                        index,
                        pos: pos as u32,
                    }),
                }),
        );
    }

    /// Perfect failure-detector notice that `crashed` has stopped.
    pub fn on_failure_notice(&mut self, crashed: ControllerId) -> Vec<Effect> {
        let mut out = Vec::new();
        if self.status == Status::Stalled || !self.crashed.insert(crashed) {
            return out;
        }
        self.match_index.remove(&crashed);
        let alive = self.cfg.n_replicas - self.crashed.len();
        if alive < self.majority() {
            self.status = Status::Stalled;
            out.push(Effect::Stalled { alive });
            return out;
        }
        if crashed == self.leader_of(self.view) {
            let mut next = self.view + 1;
            while self.crashed.contains(&self.leader_of(next)) {
                next += 1;
            }
            self.start_view_change(next, &mut out);
        }
        out
    }

    fn start_view_change(&mut self, view: u64, out: &mut Vec<Effect>) {
        if self.status == Status::Normal {
            self.last_normal_view = self.view;
        }
        self.view = view;
        self.status = Status::ViewChange;
        self.mastered.clear();
        self.awaiting_roles.clear();
        self.match_index.clear();
        let vote = ViewChangeVote {
            last_normal_view: self.last_normal_view,
            log: self.log.clone(),
            commit_index: self.commit_index,
        };
        let leader = self.leader_of(view);
        if leader == self.id() {
            self.votes.entry(view).or_default().insert(leader, vote);
            self.try_finish_view_change(out);
        } else {
            out.push(Effect::ToReplica {
                to: leader,
                msg: ReplMessage::DoViewChange {
                    view,
                    last_normal_view: vote.last_normal_view,
                    log: vote.log,
                    commit_index: vote.commit_index,
                },
            });
        }
    }

    fn try_finish_view_change(&mut self, out: &mut Vec<Effect>) {
        let Some(votes) = self.votes.get(&self.view) else {
            return;
        };
        if votes.len() < self.majority() {
            return;
        }
        let best = votes
            .values()
            .max_by_key(|v| (v.last_normal_view, v.log.len()))
            .expect("majority is nonempty");
        let commit = votes.values().map(|v| v.commit_index).max().unwrap_or(0);
        self.log = best.log.clone();
        self.votes.retain(|v, _| *v > self.view);
        self.status = Status::Normal;
        self.last_normal_view = self.view;

        // Step 1: VIEW entry, shipped with the whole adopted log.
        let index = self.log.len() as u64 + 1;
        self.log.push(LogEntry {
            index,
            view: self.view,
            kind: EntryKind::View {
                view: self.view,
                leader: self.id(),
            },
        });
        for to in self.peers() {
            out.push(Effect::ToReplica {
                to,
                msg: ReplMessage::Append {
                    view: self.view,
                    prev_index: 0,
                    entries: self.log.clone(),
                    commit_index: commit,
                },
            });
        }
        self.advance_commit(commit, out);
        // Step 2: fence on every switch; steps 3 and 4 run when it completes.
        self.claim_switches(out);
    }

    fn finish_fence(&mut self, out: &mut Vec<Effect>) {
        // Step 3: events seen by this replica that the log does not hold.
        let missing: Vec<_> = self
            .event_buffer
            .iter()
            .filter(|(e, _)| !self.log_contains(**e))
            .map(|(e, (port, payload))| EntryKind::Event {
                event: *e,
                in_port: *port,
                payload: payload.clone(),
            })
            .collect();
        for kind in missing {
            self.propose(kind, out);
        }
        // Step 4: applied batches with no ack.
        let pending: Vec<_> = self
            .batches
            .range(..=self.applied_index)
            .flat_map(|(i, cmds)| cmds.iter().map(move |(sw, c)| (*i, *sw, c.clone())))
            .filter(|(i, sw, _)| !self.is_acked(*i, *sw))
            .collect();
        for (index, sw, cmds) in pending {
            self.send_batch(index, sw, &cmds, out);
        }
    }
}

fn to_switch(sw: SwitchId, msg: ControlMessage) -> Effect {
    Effect::ToSwitch {
        sw,
        msg,
        batch: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ofmodel::{Action, Match, PacketInReason};

    const S1: SwitchId = SwitchId(1);

    fn replica(id: u32, variant: Variant) -> ReplicaState {
        ReplicaState::new(
            ReplicaConfig {
                id: ControllerId(id),
                n_replicas: 3,
                switches: vec![S1],
                variant,
            },
            AppState::by_name("mac-learner", &[]).unwrap(),
        )
    }

    /// Leader c0 after its setup fence completed.
    fn active_leader() -> ReplicaState {
        let mut r = replica(0, Variant::PaperA);
        r.setup();
        r.on_switch_message(
            S1,
            ControlMessage::RoleReply {
                role: Role::Master,
                generation_id: 0,
            },
        );
        assert!(r.is_active_leader());
        r
    }

    fn event(seq: u64, payload: &[u8]) -> PacketIn {
        PacketIn {
            event: EventId { switch: S1, seq },
            reason: PacketInReason::NoMatch,
            in_port: PortId(1),
            payload: payload.to_vec(),
        }
    }

    fn appends(out: &[Effect]) -> usize {
        out.iter()
            .filter(|e| {
                matches!(
                    e,
                    Effect::ToReplica {
                        msg: ReplMessage::Append { .. },
                        ..
                    }
                )
            })
            .count()
    }

    fn to_switch_msgs(out: &[Effect]) -> Vec<ControlMessage> {
        out.iter()
            .filter_map(|e| match e {
                Effect::ToSwitch { msg, .. } => Some(msg.clone()),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn slave_buffers_without_sending() {
        let mut r = replica(1, Variant::PaperA);
        r.setup();
        let out = r.on_packet_in(S1, event(5, &[2, 1]));
        assert!(out.is_empty());
        assert!(r.event_buffer.contains_key(&EventId { switch: S1, seq: 5 }));
    }

    #[test]
    fn acks_land_in_ack_table_on_any_replica() {
        for id in 0..3 {
            let mut r = replica(id, Variant::PaperA);
            let mut pkt = event(9, &encode_ack(1, 3, S1));
            pkt.reason = PacketInReason::Action;
            let out = r.on_packet_in(S1, pkt);
            assert!(out.is_empty());
            assert!(r.is_acked(3, S1));
            assert!(r.event_buffer.is_empty());
        }
    }

    #[test]
    fn duplicate_event_gets_one_log_entry() {
        let mut r = active_leader();
        let out = r.on_packet_in(S1, event(1, &[2, 1]));
        assert_eq!(appends(&out), 2);
        let out = r.on_packet_in(S1, event(1, &[2, 1]));
        assert_eq!(appends(&out), 0);
        assert_eq!(r.log.len(), 1);
    }

    #[test]
    fn one_ack_commits_with_three_replicas() {
        let mut r = active_leader();
        for seq in 1..=4 {
            r.on_packet_in(S1, event(seq, &[2, 1]));
        }
        let out = r.on_repl_message(
            ControllerId(1),
            ReplMessage::AppendAck { view: 0, index: 4 },
        );
        assert_eq!(r.commit_index, 4);
        let advances = out
            .iter()
            .filter(|e| {
                matches!(
                    e,
                    Effect::ToReplica {
                        msg: ReplMessage::CommitAdvance {
                            commit_index: 4,
                            ..
                        },
                        ..
                    }
                )
            })
            .count();
        assert_eq!(advances, 2);
    }

    #[test]
    fn stale_view_append_is_ignored() {
        let mut r = replica(1, Variant::PaperA);
        r.view = 2;
        let out = r.on_repl_message(
            ControllerId(0),
            ReplMessage::Append {
                view: 0,
                prev_index: 0,
                entries: vec![LogEntry {
                    index: 1,
                    view: 0,
                    kind: EntryKind::View {
                        view: 0,
                        leader: ControllerId(0),
                    },
                }],
                commit_index: 1,
            },
        );
        assert_eq!(out, vec![Effect::Stale]);
        assert!(r.log.is_empty());
        assert_eq!(r.view, 2);
    }

    #[test]
    fn follower_apply_sends_nothing_to_switches() {
        let mut r = replica(1, Variant::PaperA);
        let entry = LogEntry {
            index: 1,
            view: 0,
            kind: EntryKind::Event {
                event: EventId { switch: S1, seq: 1 },
                in_port: PortId(1),
                payload: vec![2, 1],
            },
        };
        let out = r.on_repl_message(
            ControllerId(0),
            ReplMessage::Append {
                view: 0,
                prev_index: 0,
                entries: vec![entry],
                commit_index: 1,
            },
        );
        assert_eq!(r.applied_index, 1);
        assert_ne!(r.app, AppState::by_name("mac-learner", &[]).unwrap());
        assert!(to_switch_msgs(&out).is_empty());
        assert!(r.batches.contains_key(&1));
    }

    #[test]
    fn leader_apply_sends_the_bundle_sequence() {
        let mut r = ReplicaState::new(
            ReplicaConfig {
                id: ControllerId(0),
                n_replicas: 3,
                switches: vec![S1],
                variant: Variant::PaperA,
            },
            AppState::by_name(
                "static-router",
                &[crate::app::Route {
                    prefix: vec![7],
                    port: PortId(2),
                }],
            )
            .unwrap(),
        );
        r.setup();
        r.on_switch_message(
            S1,
            ControlMessage::RoleReply {
                role: Role::Master,
                generation_id: 0,
            },
        );
        r.on_packet_in(S1, event(1, &[7, 0]));
        let out = r.on_repl_message(
            ControllerId(2),
            ReplMessage::AppendAck { view: 0, index: 1 },
        );
        let flow_mod = ControlMessage::FlowMod {
            matcher: Match {
                in_port: None,
                payload_prefix: Some(vec![7]),
            },
            priority: 101,
            actions: vec![Action::Output(PortId(2))],
        };
        let expected = vec![
            ControlMessage::BundleOpen { bundle_id: 1 },
            ControlMessage::BundleAdd {
                bundle_id: 1,
                inner: Box::new(flow_mod),
            },
            ControlMessage::BundleAdd {
                bundle_id: 1,
                inner: Box::new(ControlMessage::packet_out_to_controller(encode_ack(
                    0, 1, S1,
                ))),
            },
            ControlMessage::BundleCommit { bundle_id: 1 },
        ];
        assert_eq!(to_switch_msgs(&out), expected);
    }

    #[test]
    fn event_without_commands_is_vacuously_complete() {
        let mut r = ReplicaState::new(
            ReplicaConfig {
                id: ControllerId(0),
                n_replicas: 3,
                switches: vec![S1],
                variant: Variant::PaperA,
            },
            AppState::by_name("static-router", &[]).unwrap(),
        );
        r.setup();
        r.on_switch_message(
            S1,
            ControlMessage::RoleReply {
                role: Role::Master,
                generation_id: 0,
            },
        );
        r.on_packet_in(S1, event(1, b"zz"));
        let out = r.on_repl_message(
            ControllerId(1),
            ReplMessage::AppendAck { view: 0, index: 1 },
        );
        assert_eq!(r.applied_index, 1);
        assert!(to_switch_msgs(&out).is_empty());
        assert!(r.batches.is_empty());
    }

    #[test]
    fn bundle_shape() {
        let fm = ControlMessage::FlowMod {
            matcher: Match::default(),
            priority: 1,
            actions: vec![],
        };
        let po = ControlMessage::PacketOut {
            actions: vec![Action::Drop],
            payload: vec![1],
        };
        assert_eq!(
            build_bundle(0, 1, S1, std::slice::from_ref(&fm))
                .unwrap()
                .len(),
            4
        );
        for k in 1..6 {
            let cmds = vec![po.clone(); k];
            assert_eq!(build_bundle(2, 9, S1, &cmds).unwrap().len(), k + 3);
        }
        assert_eq!(
            build_bundle(0, 1, S1, &[]),
            Err(ReplicaError::EmptyBundle(1))
        );
        assert_eq!(
            build_bundle(0, 1, S1, &[ControlMessage::Hello]),
            Err(ReplicaError::NotBundleable(1))
        );
        assert_eq!(
            build_bundle(3, 4, S1, &[fm.clone(), po.clone()]),
            build_bundle(3, 4, S1, &[fm, po])
        );
    }

    #[test]
    fn follower_crash_causes_no_view_change() {
        let mut r = active_leader();
        let out = r.on_failure_notice(ControllerId(2));
        assert!(out.is_empty());
        assert_eq!(r.view, 0);
        let mut f = replica(1, Variant::PaperA);
        assert!(f.on_failure_notice(ControllerId(2)).is_empty());
        assert_eq!(f.view, 0);
    }

    #[test]
    fn majority_loss_stalls() {
        let mut r = replica(1, Variant::PaperA);
        r.on_failure_notice(ControllerId(2));
        let out = r.on_failure_notice(ControllerId(0));
        assert_eq!(out, vec![Effect::Stalled { alive: 1 }]);
        assert_eq!(r.status, Status::Stalled);
        assert!(r.on_packet_in(S1, event(1, &[1, 2])).is_empty());
    }

    #[test]
    fn new_leader_waits_for_role_reply_before_resending() {
        // c1 applied entry 1 under view 0, never saw an ack.
        let mut r = replica(1, Variant::PaperA);
        let entry = LogEntry {
            index: 1,
            view: 0,
            kind: EntryKind::Event {
                event: EventId { switch: S1, seq: 1 },
                in_port: PortId(1),
                payload: vec![2, 1],
            },
        };
        r.on_repl_message(
            ControllerId(0),
            ReplMessage::Append {
                view: 0,
                prev_index: 0,
                entries: vec![entry],
                commit_index: 1,
            },
        );
        let out = r.on_failure_notice(ControllerId(0));
        assert_eq!(r.view, 1);
        assert!(out.is_empty(), "waits for a majority of view-change votes");
        let out = r.on_repl_message(
            ControllerId(2),
            ReplMessage::DoViewChange {
                view: 1,
                last_normal_view: 0,
                log: vec![],
                commit_index: 0,
            },
        );
        let msgs = to_switch_msgs(&out);
        assert_eq!(
            msgs,
            vec![ControlMessage::RoleRequest {
                role: Role::Master,
                generation_id: 1
            }]
        );
        assert_eq!(r.log.len(), 2);
        // An ack delivered ahead of the reply suppresses the resend.
        let mut ack = event(2, &encode_ack(0, 1, S1));
        ack.reason = PacketInReason::Action;
        r.on_packet_in(S1, ack);
        let out = r.on_switch_message(
            S1,
            ControlMessage::RoleReply {
                role: Role::Master,
                generation_id: 1,
            },
        );
        assert!(to_switch_msgs(&out).is_empty());
        assert!(r.is_active_leader());
    }

    #[test]
    fn new_leader_resends_unacked_batch_with_same_id() {
        let mut r = replica(1, Variant::PaperA);
        let entry = LogEntry {
            index: 1,
            view: 0,
            kind: EntryKind::Event {
                event: EventId { switch: S1, seq: 1 },
                in_port: PortId(1),
                payload: vec![2, 1],
            },
        };
        r.on_repl_message(
            ControllerId(0),
            ReplMessage::Append {
                view: 0,
                prev_index: 0,
                entries: vec![entry],
                commit_index: 1,
            },
        );
        r.on_failure_notice(ControllerId(0));
        r.on_repl_message(
            ControllerId(2),
            ReplMessage::DoViewChange {
                view: 1,
                last_normal_view: 0,
                log: vec![],
                commit_index: 0,
            },
        );
        let out = r.on_switch_message(
            S1,
            ControlMessage::RoleReply {
                role: Role::Master,
                generation_id: 1,
            },
        );
        let msgs = to_switch_msgs(&out);
        assert_eq!(
            msgs.first(),
            Some(&ControlMessage::BundleOpen { bundle_id: 1 })
        );
        assert_eq!(
            msgs.last(),
            Some(&ControlMessage::BundleCommit { bundle_id: 1 })
        );
        assert_eq!(msgs.len(), 2 + 3);
    }

    #[test]
    fn new_leader_proposes_buffered_events() {
        let mut r = replica(1, Variant::PaperA);
        r.on_packet_in(S1, event(3, &[2, 1]));
        r.on_failure_notice(ControllerId(0));
        r.on_repl_message(
            ControllerId(2),
            ReplMessage::DoViewChange {
                view: 1,
                last_normal_view: 0,
                log: vec![],
                commit_index: 0,
            },
        );
        r.on_switch_message(
            S1,
            ControlMessage::RoleReply {
                role: Role::Master,
                generation_id: 1,
            },
        );
        assert!(r.log_contains(EventId { switch: S1, seq: 3 }));
        assert_eq!(r.log.len(), 2);
    }

    #[test]
    fn view_change_adopts_the_longest_recent_log() {
        let mut r = replica(1, Variant::PaperA);
        r.on_failure_notice(ControllerId(0));
        let longer: Vec<LogEntry> = (1..=2)
            .map(|i| LogEntry {
                index: i,
                view: 0,
                kind: EntryKind::Event {
                    event: EventId { switch: S1, seq: i },
                    in_port: PortId(1),
                    payload: vec![2, 1],
                },
            })
            .collect();
        r.on_repl_message(
            ControllerId(2),
            ReplMessage::DoViewChange {
                view: 1,
                last_normal_view: 0,
                log: longer.clone(),
                commit_index: 2,
            },
        );
        assert_eq!(&r.log[..2], &longer[..]);
        assert_eq!(r.commit_index, 2);
        assert_eq!(r.applied_index, 2);
    }
}
