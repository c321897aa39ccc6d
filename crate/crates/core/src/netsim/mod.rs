//! Deterministic discrete-event harness.
//!
//! Virtual time advances by scheduled events only. Control channels are
//! reliable FIFO queues with a fixed per-hop latency; a controller crash
//! kills every channel it terminates, drops their contents and tears down
//! its switch connections. Survivors learn of the crash from a perfect
//! failure detector after `detector_delay`. Events scheduled for the same
//! instant are ordered by a tie-break drawn from the scenario seed, so one
//! seed fixes one interleaving.

mod scenario;

pub use scenario::{
    variant_name, Direction, FaultSpec, FaultTrigger, FlowSpec, Scenario, ScenarioError,
    SwitchSpec, TracePoint, WorkloadItem,
};

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::app::AppState;
use crate::metrics::MetricsReport;
use crate::ofmodel::{decode_ack, ControlMessage, ControllerId, SwitchId};
use crate::replica::{BatchTag, Effect, EntryKind, ReplicaConfig, ReplicaState};
use crate::switchsim::{ExecKind, ExecRecord, Outbound, SwitchState};
use crate::trace::{Endpoint, Msg, RecordKind, Trace, TraceRecord};

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: Trace,
    /// Counted while the run executed, not recomputed from the trace.
    pub metrics: MetricsReport,
    pub quiescent: bool,
}

#[derive(Debug, Clone)]
struct Envelope {
    msg: Msg,
    send_step: u64,
    batch: Option<BatchTag>,
}

#[derive(Debug, Default)]
struct Channel {
    queue: VecDeque<Envelope>,
    dead: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Event {
    Deliver {
        src: Endpoint,
        dst: Endpoint,
    },
    Workload(usize),
    Crash(ControllerId),
    Detect {
        observer: ControllerId,
        crashed: ControllerId,
    },
}

#[derive(Debug)]
struct PendingFault {
    target: ControllerId,
    point: TracePoint,
    seen: u32,
    fired: bool,
}

struct Sim<'a> {
    scenario: &'a Scenario,
    t: u64,
    seq: u64,
    queue: BinaryHeap<Reverse<(u64, u64, u64, Event)>>,
    rng: ChaCha8Rng,
    channels: BTreeMap<(Endpoint, Endpoint), Channel>,
    switches: BTreeMap<SwitchId, SwitchState>,
    replicas: Vec<ReplicaState>,
    alive: Vec<bool>,
    records: Vec<TraceRecord>,
    faults: Vec<PendingFault>,
    setup: bool,
    metrics: MetricsReport,
}

/// Runs a scenario to quiescence (or its step limit) and returns the trace.
pub fn run(scenario: &Scenario) -> Result<RunOutput, ScenarioError> {
    scenario.validate()?;
    let mut sim = Sim::new(scenario);
    let quiescent = sim.run();
    Ok(RunOutput {
        trace: Trace {
            records: sim.records,
        },
        metrics: sim.metrics,
        quiescent,
    })
}

impl<'a> Sim<'a> {
    fn new(scenario: &'a Scenario) -> Self {
        let controllers: Vec<ControllerId> = scenario.controllers().collect();
        let switches = scenario
            .switches
            .iter()
            .map(|s| {
                let mut sw = SwitchState::new(
                    s.id,
                    s.ports.clone(),
                    s.flows.iter().map(Into::into).collect(),
                    controllers.iter().copied(),
                );
                sw.clone_acks_to_all = scenario.variant == crate::replica::Variant::PaperB;
                (s.id, sw)
            })
            .collect();
        let app = AppState::by_name(&scenario.app, &scenario.routes).expect("validated app");
        let replicas = controllers
            .iter()
            .map(|&id| {
                ReplicaState::new(
                    ReplicaConfig {
                        id,
                        n_replicas: scenario.n_controllers,
                        switches: scenario.switches.iter().map(|s| s.id).collect(),
                        variant: scenario.variant,
                    },
                    app.clone(),
                )
            })
            .collect();
        let faults = scenario
            .faults
            .iter()
            .filter_map(|f| match &f.when {
                FaultTrigger::AtTracePoint(p) => Some(PendingFault {
                    target: f.target,
                    point: p.clone(),
                    seen: 0,
                    fired: false,
                }),
                FaultTrigger::AtTime(_) => None,
            })
            .collect();
        Sim {
            scenario,
            t: 0,
            seq: 0,
            queue: BinaryHeap::new(),
            rng: ChaCha8Rng::seed_from_u64(scenario.seed),
            channels: BTreeMap::new(),
            switches,
            replicas,
            alive: vec![true; scenario.n_controllers],
            records: Vec::new(),
            faults,
            setup: true,
            metrics: MetricsReport::default(),
        }
    }

    fn run(&mut self) -> bool {
        let s = self.scenario;
        let mut detail = BTreeMap::new();
        detail.insert("scenario".into(), s.name.clone());
        detail.insert("variant".into(), variant_name(s.variant).into());
        detail.insert("n_controllers".into(), s.n_controllers.to_string());
        detail.insert(
            "switches".into(),
            s.switches
                .iter()
                .map(|w| w.id.0.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        detail.insert("seed".into(), s.seed.to_string());
        self.record(RecordKind::Start, Endpoint::Harness, None, None, detail);

        for c in s.controllers() {
            if self.is_alive(c) {
                let effects = self.replicas[c.0 as usize].setup();
                self.apply_effects(c, effects, None);
            }
        }
        let mut steps = 0u64;
        let mut quiescent = self.drain(&mut steps);
        if quiescent {
            self.setup = false;
            let t0 = self.t;
            for (i, w) in s.workload.iter().enumerate() {
                self.schedule(t0 + w.t, Event::Workload(i));
            }
            for f in &s.faults {
                if let FaultTrigger::AtTime(at) = f.when {
                    self.schedule(t0 + at, Event::Crash(f.target));
                }
            }
            quiescent = self.drain(&mut steps);
        }
        let mut detail = BTreeMap::new();
        detail.insert("quiescent".into(), quiescent.to_string());
        detail.insert("steps".into(), steps.to_string());
        self.record(RecordKind::End, Endpoint::Harness, None, None, detail);
        quiescent
    }

    fn drain(&mut self, steps: &mut u64) -> bool {
        while let Some(Reverse((t, _, _, event))) = self.queue.pop() {
            if *steps >= self.scenario.quiesce_limit {
                return false;
            }
            *steps += 1;
            self.t = t;
            match event {
                Event::Deliver { src, dst } => self.deliver(src, dst),
                Event::Workload(i) => self.inject(i),
                Event::Crash(c) => self.crash(c),
                Event::Detect { observer, crashed } => {
                    if self.is_alive(observer) {
                        self.record(
                            RecordKind::Detect,
                            Endpoint::Controller(observer),
                            Some(Endpoint::Controller(crashed)),
                            None,
                            BTreeMap::new(),
                        );
                        if self.is_alive(observer) {
                            let effects =
                                self.replicas[observer.0 as usize].on_failure_notice(crashed);
                            self.apply_effects(observer, effects, None);
                        }
                    }
                }
            }
        }
        true
    }

    fn schedule(&mut self, t: u64, event: Event) {
        let tie = self.rng.gen::<u64>();
        self.seq += 1;
        self.queue.push(Reverse((t, tie, self.seq, event)));
    }

    fn is_alive(&self, c: ControllerId) -> bool {
        self.alive[c.0 as usize]
    }

    fn endpoint_alive(&self, e: Endpoint) -> bool {
        match e {
            Endpoint::Controller(c) => self.is_alive(c),
            _ => true,
        }
    }

    fn phase_detail(&self) -> BTreeMap<String, String> {
        let mut d = BTreeMap::new();
        if self.setup {
            d.insert("phase".into(), "setup".into());
        }
        d
    }

    /// Appends a record and fires any crash whose trace point it completes.
    fn record(
        &mut self,
        kind: RecordKind,
        actor: Endpoint,
        peer: Option<Endpoint>,
        msg: Option<Msg>,
        detail: BTreeMap<String, String>,
    ) -> u64 {
        let step = self.records.len() as u64;
        let rec = TraceRecord {
            step,
            t: self.t,
            kind,
            actor,
            peer,
            msg,
            detail,
        };
        self.metrics.observe(&rec);
        let direction = match kind {
            RecordKind::Send => Some(Direction::Send),
            RecordKind::Deliver => Some(Direction::Deliver),
            _ => None,
        };
        let mut fired = Vec::new();
        if let Some(direction) = direction {
            let kind_name = rec.msg.as_ref().map(Msg::kind_name);
            for f in self.faults.iter_mut().filter(|f| !f.fired) {
                let p = &f.point;
                if p.actor == actor
                    && p.direction == direction
                    && p.kind.as_deref().is_none_or(|k| Some(k) == kind_name)
                {
                    f.seen += 1;
                    if f.seen == p.occurrence {
                        f.fired = true;
                        fired.push(f.target);
                    }
                }
            }
        }
        self.records.push(rec);
        for c in fired {
            self.crash(c);
        }
        step
    }

    fn send(&mut self, src: Endpoint, dst: Endpoint, msg: Msg, batch: Option<BatchTag>) {
        let step = self.records.len() as u64;
        let mut detail = self.phase_detail();
        if let Some(b) = batch {
            detail.insert("batch".into(), b.index.to_string());
            detail.insert("pos".into(), b.pos.to_string());
        }
        let ch = self.channels.entry((src, dst)).or_default();
        let deliverable = !ch.dead && self.alive_pair(src, dst);
        if deliverable {
            self.channels
                .get_mut(&(src, dst))
                .expect("channel exists")
                .queue
                .push_back(Envelope {
                    msg: msg.clone(),
                    send_step: step,
                    batch,
                });
            let at = self.t + self.scenario.latency;
            self.schedule(at, Event::Deliver { src, dst });
        }
        self.record(RecordKind::Send, src, Some(dst), Some(msg.clone()), detail);
        if !deliverable {
            let mut d = BTreeMap::new();
            d.insert("reason".into(), "dead_channel".into());
            d.insert("send".into(), step.to_string());
            self.record(RecordKind::Drop, dst, Some(src), Some(msg), d);
        }
    }

    fn alive_pair(&self, a: Endpoint, b: Endpoint) -> bool {
        self.endpoint_alive(a) && self.endpoint_alive(b)
    }

    fn deliver(&mut self, src: Endpoint, dst: Endpoint) {
        let Some(env) = self
            .channels
            .get_mut(&(src, dst))
            .filter(|c| !c.dead)
            .and_then(|c| c.queue.pop_front())
        else {
            return;
        };
        let mut detail = self.phase_detail();
        detail.insert("send".into(), env.send_step.to_string());
        self.record(
            RecordKind::Deliver,
            dst,
            Some(src),
            Some(env.msg.clone()),
            detail,
        );
        // A trace-point crash fired by this very record may have killed
        // either end; the message then dies with the connection.
        if !self.alive_pair(src, dst) {
            return;
        }
        match (dst, env.msg) {
            (Endpoint::Switch(sw), Msg::Control(msg)) => {
                let from = src.controller().expect("switches hear from controllers");
                let before = self.switches[&sw].exec_log.len();
                let out = self
                    .switches
                    .get_mut(&sw)
                    .expect("known switch")
                    .handle_message(from, msg)
                    .expect("live connection");
                self.switch_outputs(sw, before, out, env.batch);
            }
            (Endpoint::Controller(c), Msg::Control(msg)) => {
                let sw = src
                    .switch()
                    .expect("control messages to controllers come from switches");
                let effects = self.replicas[c.0 as usize].on_switch_message(sw, msg);
                self.apply_effects(c, effects, None);
            }
            (Endpoint::Controller(c), Msg::Repl(msg)) => {
                let from = src.controller().expect("replication between controllers");
                let effects = self.replicas[c.0 as usize].on_repl_message(from, msg);
                self.apply_effects(c, effects, Some(from));
            }
            (dst, msg) => unreachable!("{} cannot receive {}", dst, msg.kind_name()),
        }
    }

    fn inject(&mut self, i: usize) {
        let w = &self.scenario.workload[i];
        let sw = self.switches.get_mut(&w.switch).expect("validated switch");
        let before = sw.exec_log.len();
        let out = sw
            .inject_data_packet(w.in_port, &w.payload)
            .expect("validated payload");
        self.switch_outputs(w.switch, before, out, None);
    }

    fn switch_outputs(
        &mut self,
        sw: SwitchId,
        before: usize,
        out: Outbound,
        batch: Option<BatchTag>,
    ) {
        let new: Vec<ExecRecord> = self.switches[&sw].exec_log[before..].to_vec();
        for rec in new {
            let detail = self.exec_detail(&rec, batch);
            self.record(
                RecordKind::Exec,
                Endpoint::Switch(sw),
                rec.from.map(Endpoint::Controller),
                rec.message.map(Msg::Control),
                detail,
            );
        }
        for (c, msg) in out {
            self.send(
                Endpoint::Switch(sw),
                Endpoint::Controller(c),
                Msg::Control(msg),
                None,
            );
        }
    }

    fn exec_detail(&self, rec: &ExecRecord, batch: Option<BatchTag>) -> BTreeMap<String, String> {
        let mut d = self.phase_detail();
        let op = match rec.kind {
            ExecKind::BundleCommit => "BUNDLE_COMMIT",
            ExecKind::FlowMod => "FLOWMOD",
            ExecKind::PacketOut => "PACKETOUT",
            ExecKind::PacketFwd => "PACKET_FWD",
            ExecKind::PacketIn => "PACKET_IN",
        };
        d.insert("op".into(), op.into());
        if let Some(b) = rec.bundle_id {
            d.insert("bundle".into(), b.to_string());
        }
        if let Some(n) = rec.staged {
            d.insert("staged".into(), n.to_string());
        }
        if let Some(e) = rec.event {
            d.insert("event".into(), e.to_string());
        }
        if let Some(p) = rec.port {
            d.insert("port".into(), p.to_string());
        }
        if let Some(ControlMessage::PacketIn(p)) = &rec.message {
            d.insert("ack".into(), decode_ack(&p.payload).is_some().to_string());
        }
        if let (Some(b), None, ExecKind::FlowMod | ExecKind::PacketOut) =
            (batch, rec.bundle_id, rec.kind)
        {
            d.insert("batch".into(), b.index.to_string());
            d.insert("pos".into(), b.pos.to_string());
        }
        d
    }

    fn apply_effects(&mut self, c: ControllerId, effects: Vec<Effect>, from: Option<ControllerId>) {
        let me = Endpoint::Controller(c);
        for effect in effects {
            if !self.is_alive(c) {
                return;
            }
            match effect {
                Effect::ToSwitch { sw, msg, batch } => {
                    self.send(me, Endpoint::Switch(sw), Msg::Control(msg), batch);
                }
                Effect::ToReplica { to, msg } => {
                    self.send(me, Endpoint::Controller(to), Msg::Repl(msg), None);
                }
                Effect::Applied {
                    index,
                    kind,
                    commands,
                    digest,
                } => {
                    let mut d = self.phase_detail();
                    d.insert("index".into(), index.to_string());
                    d.insert("digest".into(), digest);
                    match kind {
                        EntryKind::Event { event, .. } => {
                            d.insert("entry".into(), "EVENT".into());
                            d.insert("event".into(), event.to_string());
                        }
                        EntryKind::View { view, leader } => {
                            d.insert("entry".into(), "VIEW".into());
                            d.insert("view".into(), view.to_string());
                            d.insert("leader".into(), leader.0.to_string());
                        }
                    }
                    if !commands.is_empty() {
                        d.insert(
                            "cmds".into(),
                            commands
                                .iter()
                                .map(|(s, n)| format!("{}:{}", s.0, n))
                                .collect::<Vec<_>>()
                                .join(","),
                        );
                    }
                    self.record(RecordKind::Apply, me, None, None, d);
                }
                Effect::Stale => {
                    let mut d = self.phase_detail();
                    d.insert("reason".into(), "stale_view".into());
                    self.record(
                        RecordKind::Drop,
                        me,
                        from.map(Endpoint::Controller),
                        None,
                        d,
                    );
                }
                Effect::Stalled { alive } => {
                    let mut d = BTreeMap::new();
                    d.insert("alive".into(), alive.to_string());
                    self.record(RecordKind::Stall, me, None, None, d);
                }
            }
        }
    }

    fn crash(&mut self, c: ControllerId) {
        if !self.is_alive(c) {
            return;
        }
        self.alive[c.0 as usize] = false;
        self.record(
            RecordKind::Crash,
            Endpoint::Controller(c),
            None,
            None,
            self.phase_detail(),
        );
        let me = Endpoint::Controller(c);
        let touching: Vec<(Endpoint, Endpoint)> = self
            .channels
            .iter()
            .filter(|((s, d), ch)| !ch.dead && (*s == me || *d == me))
            .map(|(k, _)| *k)
            .collect();
        for key in touching {
            let ch = self.channels.get_mut(&key).expect("listed channel");
            ch.dead = true;
            let dropped: Vec<Envelope> = ch.queue.drain(..).collect();
            for env in dropped {
                let mut d = BTreeMap::new();
                d.insert("reason".into(), "crash".into());
                d.insert("send".into(), env.send_step.to_string());
                self.record(RecordKind::Drop, key.1, Some(key.0), Some(env.msg), d);
            }
        }
        // Channels that never carried traffic die too.
        for sw in self.scenario.switches.iter().map(|s| s.id) {
            for key in [(me, Endpoint::Switch(sw)), (Endpoint::Switch(sw), me)] {
                self.channels.entry(key).or_default().dead = true;
            }
        }
        for other in self.scenario.controllers() {
            for key in [
                (me, Endpoint::Controller(other)),
                (Endpoint::Controller(other), me),
            ] {
                self.channels.entry(key).or_default().dead = true;
            }
        }
        let switch_ids: Vec<SwitchId> = self.switches.keys().copied().collect();
        for sw in switch_ids {
            let discarded = self
                .switches
                .get_mut(&sw)
                .expect("known switch")
                .on_connection_drop(c);
            let mut d = BTreeMap::new();
            d.insert("reason".into(), "conn_drop".into());
            if !discarded.is_empty() {
                d.insert(
                    "bundles".into(),
                    discarded
                        .iter()
                        .map(u64::to_string)
                        .collect::<Vec<_>>()
                        .join(","),
                );
            }
            self.record(RecordKind::Drop, Endpoint::Switch(sw), Some(me), None, d);
        }
        let at = self.t + self.scenario.detector_delay;
        for observer in self.scenario.controllers() {
            if self.is_alive(observer) {
                self.schedule(
                    at,
                    Event::Detect {
                        observer,
                        crashed: c,
                    },
                );
            }
        }
    }
}

/// Which controller a crash sweep targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrashTarget {
    /// The leader of the initial view.
    Leader,
    Replica(ControllerId),
}

impl std::str::FromStr for CrashTarget {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "leader" {
            return Ok(CrashTarget::Leader);
        }
        s.strip_prefix("replica:")
            .and_then(|id| id.parse().ok())
            .map(|id| CrashTarget::Replica(ControllerId(id)))
            .ok_or_else(|| format!("expected `leader` or `replica:<id>`, got {s:?}"))
    }
}

/// A derived scenario with one crash inserted at a trace point.
#[derive(Debug, Clone)]
pub struct CrashPoint {
    pub point: TracePoint,
    /// The record in the base run the crash follows.
    pub base_step: u64,
    pub label: String,
    pub scenario: Scenario,
}

/// Runs the base scenario, then derives one scenario per SEND or DELIVER of
/// the target controller, crashing it right after that record.
pub fn enumerate_crash_points(
    scenario: &Scenario,
    target: CrashTarget,
) -> Result<Vec<CrashPoint>, ScenarioError> {
    if scenario.has_trace_point_faults() {
        return Err(ScenarioError::Invalid {
            line: None,
            path: "faults".into(),
            message: "crash sweeps need a scenario without trace-point faults".into(),
        });
    }
    let victim = match target {
        CrashTarget::Leader => ControllerId(0),
        CrashTarget::Replica(c) => c,
    };
    if victim.0 as usize >= scenario.n_controllers {
        return Err(ScenarioError::Invalid {
            line: None,
            path: "crash".into(),
            message: format!("no controller {}", victim.0),
        });
    }
    let base = run(scenario)?;
    let actor = Endpoint::Controller(victim);
    let mut counts: BTreeMap<Direction, u32> = BTreeMap::new();
    let mut points = Vec::new();
    for rec in &base.trace.records {
        let direction = match rec.kind {
            RecordKind::Send if rec.actor == actor => Direction::Send,
            RecordKind::Deliver if rec.actor == actor => Direction::Deliver,
            _ => continue,
        };
        let n = counts.entry(direction).or_default();
        *n += 1;
        let point = TracePoint {
            actor,
            direction,
            kind: None,
            occurrence: *n,
        };
        let mut derived = scenario.clone();
        derived.name = format!("{}+crash@{}", scenario.name, rec.step);
        derived.faults.push(FaultSpec {
            target: victim,
            when: FaultTrigger::AtTracePoint(point.clone()),
        });
        let label = format!(
            "{} {:?} #{} {} {}",
            actor,
            direction,
            n,
            rec.msg.as_ref().map(Msg::kind_name).unwrap_or("-"),
            rec.peer.map(|p| p.to_string()).unwrap_or_default(),
        );
        points.push(CrashPoint {
            point,
            base_step: rec.step,
            label,
            scenario: derived,
        });
    }
    Ok(points)
}
