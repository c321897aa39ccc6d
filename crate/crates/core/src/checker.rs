//! Trace properties.
//!
//! | id | property |
//! |----|----------|
//! | P1 | replicas apply events in prefix-compatible order |
//! | P2 | every switch event is applied by every survivor |
//! | P3 | no replica applies an event twice |
//! | P4 | every applied command batch executes exactly once per target switch |
//! | P5 | survivors end in the same (applied index, app digest) |
//! | P6 | bundles execute whole and contiguously; discarded bundles never |
//!
//! P2 and P5 are liveness statements and need a quiescent run with a live
//! majority; outside that they pass vacuously and P4 degrades to at-most-once.
//! Each verdict records which regime applied. Every witness can be replayed
//! against the trace with [`witness_holds`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ofmodel::{ControllerId, EventId, SwitchId};
use crate::trace::{parse_event, Endpoint, RecordKind, Trace, TraceRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Property {
    P1,
    P2,
    P3,
    P4,
    P5,
    P6,
}

impl Property {
    pub const ALL: [Property; 6] = [
        Property::P1,
        Property::P2,
        Property::P3,
        Property::P4,
        Property::P5,
        Property::P6,
    ];

    pub fn title(self) -> &'static str {
        match self {
            Property::P1 => "total order",
            Property::P2 => "at-least-once events",
            Property::P3 => "at-most-once events",
            Property::P4 => "exactly-once commands",
            Property::P5 => "replica convergence",
            Property::P6 => "bundle atomicity",
        }
    }
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Anomaly {
    LostEvent,
    RepeatedEvent,
    OrderDivergence,
    RepeatedCommand,
    MissingCommand,
    StateDivergence,
}

impl fmt::Display for Anomaly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Anomaly::LostEvent => "LOST_EVENT",
            Anomaly::RepeatedEvent => "REPEATED_EVENT",
            Anomaly::OrderDivergence => "ORDER_DIVERGENCE",
            Anomaly::RepeatedCommand => "REPEATED_COMMAND",
            Anomaly::MissingCommand => "MISSING_COMMAND",
            Anomaly::StateDivergence => "STATE_DIVERGENCE",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Witness {
    pub steps: Vec<u64>,
    pub description: String,
    pub anomaly: Anomaly,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub property: Property,
    pub pass: bool,
    pub witnesses: Vec<Witness>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Verdict {
    fn from_witnesses(property: Property, witnesses: Vec<Witness>) -> Self {
        Verdict {
            property,
            pass: witnesses.is_empty(),
            witnesses,
            note: None,
        }
    }

    fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CheckError {
    #[error("START record lacks `{0}`")]
    MissingHeader(&'static str),
    #[error("step {step}: {message}")]
    Malformed { step: u64, message: String },
}

/// One APPLY record, decoded.
#[derive(Debug, Clone)]
struct Applied {
    step: u64,
    index: u64,
    event: Option<EventId>,
    digest: String,
    commands: BTreeMap<SwitchId, usize>,
}

/// Facts about the run that every property needs.
struct Run<'a> {
    trace: &'a Trace,
    bundles: bool,
    crashed: BTreeSet<ControllerId>,
    survivors: Vec<ControllerId>,
    end_step: u64,
    /// Quiescent with a live majority.
    complete: bool,
    applies: BTreeMap<ControllerId, Vec<Applied>>,
}

impl<'a> Run<'a> {
    fn new(trace: &'a Trace) -> Result<Self, CheckError> {
        let start = trace.start().ok_or(CheckError::MissingHeader("START"))?;
        let n = start
            .get_u64("n_controllers")
            .ok_or(CheckError::MissingHeader("n_controllers"))? as u32;
        let variant = start
            .get("variant")
            .ok_or(CheckError::MissingHeader("variant"))?;
        let end = trace.end().ok_or(CheckError::MissingHeader("END"))?;
        let crashed: BTreeSet<ControllerId> = trace
            .of_kind(RecordKind::Crash)
            .filter_map(|r| r.actor.controller())
            .collect();
        let survivors = (0..n)
            .map(ControllerId)
            .filter(|c| !crashed.contains(c))
            .collect();
        let quiescent = end.get("quiescent") != Some("false");
        let complete = quiescent && crashed.len() <= (n / 2) as usize;

        let mut applies: BTreeMap<ControllerId, Vec<Applied>> = BTreeMap::new();
        for r in trace.of_kind(RecordKind::Apply) {
            let c = r
                .actor
                .controller()
                .ok_or_else(|| malformed(r, "APPLY by a non-controller"))?;
            let index = r
                .get_u64("index")
                .ok_or_else(|| malformed(r, "APPLY without index"))?;
            let event = match r.get("event") {
                Some(e) => Some(parse_event(e).ok_or_else(|| malformed(r, "bad event id"))?),
                None => None,
            };
            applies.entry(c).or_default().push(Applied {
                step: r.step,
                index,
                event,
                digest: r.get("digest").unwrap_or_default().to_string(),
                commands: parse_cmds(r)?,
            });
        }
        Ok(Run {
            trace,
            bundles: variant != "NAIVE",
            crashed,
            survivors,
            end_step: end.step,
            complete,
            applies,
        })
    }

    fn degraded_note(&self) -> String {
        format!(
            "run not complete ({} crashed, quiescent={}): liveness not assertable",
            self.crashed.len(),
            self.trace
                .end()
                .and_then(|e| e.get("quiescent"))
                .unwrap_or("true"),
        )
    }

    fn applies_of(&self, c: ControllerId) -> &[Applied] {
        self.applies.get(&c).map(Vec::as_slice).unwrap_or(&[])
    }

    fn execs_at(&self, sw: SwitchId) -> impl Iterator<Item = &'a TraceRecord> {
        self.trace
            .of_kind(RecordKind::Exec)
            .filter(move |r| r.actor == Endpoint::Switch(sw) && !r.is_setup())
    }

    /// Applied batches keyed by (index, switch), first APPLY step as citation.
    fn batches(&self) -> BTreeMap<(u64, SwitchId), u64> {
        let mut out = BTreeMap::new();
        for applied in self.applies.values().flatten() {
            for (&sw, &n) in &applied.commands {
                if n > 0 {
                    out.entry((applied.index, sw)).or_insert(applied.step);
                }
            }
        }
        out
    }

    /// Executions of batch `index` on `sw`: bundle commits, or for the
    /// unbundled variant the execution of the batch's first message.
    fn executions(&self, index: u64, sw: SwitchId) -> Vec<u64> {
        let bundles = self.bundles;
        self.execs_at(sw)
            .filter(|r| {
                if bundles {
                    r.get("op") == Some("BUNDLE_COMMIT") && r.get_u64("bundle") == Some(index)
                } else {
                    r.get_u64("batch") == Some(index) && r.get_u64("pos") == Some(0)
                }
            })
            .map(|r| r.step)
            .collect()
    }
}

fn malformed(r: &TraceRecord, message: &str) -> CheckError {
    CheckError::Malformed {
        step: r.step,
        message: message.into(),
    }
}

fn parse_cmds(r: &TraceRecord) -> Result<BTreeMap<SwitchId, usize>, CheckError> {
    let Some(text) = r.get("cmds") else {
        return Ok(BTreeMap::new());
    };
    text.split(',')
        .map(|pair| {
            let (sw, n) = pair
                .split_once(':')
                .ok_or_else(|| malformed(r, "bad cmds"))?;
            Ok((
                SwitchId(sw.parse().map_err(|_| malformed(r, "bad cmds switch"))?),
                n.parse().map_err(|_| malformed(r, "bad cmds count"))?,
            ))
        })
        .collect()
}

pub fn check_all(trace: &Trace) -> Result<Vec<Verdict>, CheckError> {
    let run = Run::new(trace)?;
    Ok(vec![
        total_order(&run),
        at_least_once(&run),
        at_most_once(&run),
        exactly_once_commands(&run),
        convergence(&run),
        bundle_atomicity(&run),
    ])
}

pub fn check(trace: &Trace, property: Property) -> Result<Verdict, CheckError> {
    let run = Run::new(trace)?;
    Ok(match property {
        Property::P1 => total_order(&run),
        Property::P2 => at_least_once(&run),
        Property::P3 => at_most_once(&run),
        Property::P4 => exactly_once_commands(&run),
        Property::P5 => convergence(&run),
        Property::P6 => bundle_atomicity(&run),
    })
}

fn event_sequence(applies: &[Applied]) -> Vec<(EventId, u64)> {
    applies
        .iter()
        .filter_map(|a| a.event.map(|e| (e, a.step)))
        .collect()
}

fn total_order(run: &Run) -> Verdict {
    let seqs: Vec<(ControllerId, Vec<(EventId, u64)>)> = run
        .applies
        .iter()
        .map(|(c, a)| (*c, event_sequence(a)))
        .collect();
    let mut witnesses = Vec::new();
    for (i, (ca, a)) in seqs.iter().enumerate() {
        for (cb, b) in &seqs[i + 1..] {
            if let Some(pos) = a.iter().zip(b).position(|(x, y)| x.0 != y.0) {
                witnesses.push(Witness {
                    steps: vec![a[pos].1, b[pos].1],
                    description: format!(
                        "{ca} applies {} but {cb} applies {} as event #{}",
                        a[pos].0,
                        b[pos].0,
                        pos + 1
                    ),
                    anomaly: Anomaly::OrderDivergence,
                });
            }
        }
    }
    Verdict::from_witnesses(Property::P1, witnesses)
}

fn at_least_once(run: &Run) -> Verdict {
    if !run.complete {
        return Verdict::from_witnesses(Property::P2, vec![]).with_note(run.degraded_note());
    }
    let mut witnesses = Vec::new();
    for r in run.trace.of_kind(RecordKind::Exec) {
        if r.get("op") != Some("PACKET_IN") || r.get("ack") == Some("true") {
            continue;
        }
        let Some(event) = r.get_event("event") else {
            continue;
        };
        let missing: Vec<String> = run
            .survivors
            .iter()
            .filter(|c| !run.applies_of(**c).iter().any(|a| a.event == Some(event)))
            .map(ToString::to_string)
            .collect();
        if !missing.is_empty() {
            witnesses.push(Witness {
                steps: vec![r.step],
                description: format!("event {event} never applied by {}", missing.join(",")),
                anomaly: Anomaly::LostEvent,
            });
        }
    }
    Verdict::from_witnesses(Property::P2, witnesses)
}

fn at_most_once(run: &Run) -> Verdict {
    let mut witnesses = Vec::new();
    for (c, applies) in &run.applies {
        let mut first: BTreeMap<EventId, u64> = BTreeMap::new();
        for (event, step) in event_sequence(applies) {
            if let Some(&prev) = first.get(&event) {
                witnesses.push(Witness {
                    steps: vec![prev, step],
                    description: format!("{c} applies {event} twice"),
                    anomaly: Anomaly::RepeatedEvent,
                });
            } else {
                first.insert(event, step);
            }
        }
    }
    Verdict::from_witnesses(Property::P3, witnesses)
}

fn exactly_once_commands(run: &Run) -> Verdict {
    let mut witnesses = Vec::new();
    for ((index, sw), apply_step) in run.batches() {
        let execs = run.executions(index, sw);
        let what = if run.bundles {
            "bundle commits"
        } else {
            "batch executions"
        };
        if execs.len() > 1 {
            let mut steps = vec![apply_step];
            steps.extend(&execs);
            witnesses.push(Witness {
                steps,
                description: format!("index {index} on {sw}: {} {what}", execs.len()),
                anomaly: Anomaly::RepeatedCommand,
            });
        } else if execs.is_empty() && run.complete {
            witnesses.push(Witness {
                steps: vec![apply_step, run.end_step],
                description: format!("index {index} on {sw}: no {what} by quiescence"),
                anomaly: Anomaly::MissingCommand,
            });
        }
    }
    let v = Verdict::from_witnesses(Property::P4, witnesses);
    if run.complete {
        v
    } else {
        v.with_note(format!(
            "{}; checked at-most-once only",
            run.degraded_note()
        ))
    }
}

/// Final (applied index, digest) per survivor, with the citing step.
fn final_states<'r>(run: &'r Run) -> Vec<(ControllerId, Option<&'r Applied>)> {
    run.survivors
        .iter()
        .map(|c| (*c, run.applies_of(*c).last()))
        .collect()
}

fn convergence(run: &Run) -> Verdict {
    if !run.complete {
        return Verdict::from_witnesses(Property::P5, vec![]).with_note(run.degraded_note());
    }
    let finals = final_states(run);
    let mut witnesses = Vec::new();
    if let Some((c0, first)) = finals.first() {
        let key = |a: &Option<&Applied>| a.map(|a| (a.index, a.digest.clone()));
        for (c, other) in &finals[1..] {
            if key(first) != key(other) {
                let show = |a: &Option<&Applied>| match a {
                    Some(a) => format!("({}, {})", a.index, a.digest),
                    None => "(0, initial)".into(),
                };
                let mut steps: Vec<u64> = [first, other]
                    .iter()
                    .filter_map(|a| a.map(|a| a.step))
                    .collect();
                steps.push(run.end_step);
                witnesses.push(Witness {
                    steps,
                    description: format!("{c0} ends at {} but {c} at {}", show(first), show(other)),
                    anomaly: Anomaly::StateDivergence,
                });
            }
        }
    }
    Verdict::from_witnesses(Property::P5, witnesses)
}

fn bundle_atomicity(run: &Run) -> Verdict {
    let mut witnesses = Vec::new();
    let switches: BTreeSet<SwitchId> = run
        .trace
        .records
        .iter()
        .filter_map(|r| r.actor.switch())
        .collect();
    for sw in switches {
        // Open commit window: (commit step, bundle, remaining effects).
        let mut window: Option<(u64, u64, usize)> = None;
        let mut discarded: BTreeMap<(ControllerId, u64), u64> = BTreeMap::new();
        let close_short = |window: &mut Option<(u64, u64, usize)>,
                           at: u64,
                           w: &mut Vec<Witness>| {
            if let Some((commit, bundle, left)) = window.take() {
                if left > 0 {
                    w.push(Witness {
                        steps: vec![commit, at],
                        description: format!("bundle {bundle} on {sw} is missing {left} effect(s)"),
                        anomaly: Anomaly::MissingCommand,
                    });
                }
            }
        };
        for r in &run.trace.records {
            if r.actor != Endpoint::Switch(sw) || r.is_setup() {
                continue;
            }
            if r.kind == RecordKind::Drop && r.get("reason") == Some("conn_drop") {
                if let (Some(c), Some(list)) =
                    (r.peer.and_then(Endpoint::controller), r.get("bundles"))
                {
                    for b in list.split(',').filter_map(|b| b.parse().ok()) {
                        discarded.insert((c, b), r.step);
                    }
                }
                continue;
            }
            if r.kind != RecordKind::Exec {
                continue;
            }
            let bundle = r.get_u64("bundle");
            let from = r.peer.and_then(Endpoint::controller);
            if let (Some(b), Some(c)) = (bundle, from) {
                if let Some(&drop_step) = discarded.get(&(c, b)) {
                    witnesses.push(Witness {
                        steps: vec![drop_step, r.step],
                        description: format!("discarded bundle {b} from {c} has an effect on {sw}"),
                        anomaly: Anomaly::RepeatedCommand,
                    });
                    continue;
                }
            }
            if r.get("op") == Some("BUNDLE_COMMIT") {
                close_short(&mut window, r.step, &mut witnesses);
                let staged = r.get_u64("staged").unwrap_or(0) as usize;
                window = Some((r.step, bundle.unwrap_or(0), staged));
                continue;
            }
            match (&mut window, bundle) {
                (Some((_, wb, left)), Some(b)) if *wb == b && *left > 0 => *left -= 1,
                (_, Some(b)) => {
                    close_short(&mut window, r.step, &mut witnesses);
                    witnesses.push(Witness {
                        steps: vec![r.step],
                        description: format!("effect of bundle {b} on {sw} outside its commit"),
                        anomaly: Anomaly::RepeatedCommand,
                    });
                }
                (_, None) => close_short(&mut window, r.step, &mut witnesses),
            }
        }
        close_short(&mut window, run.end_step, &mut witnesses);
    }
    Verdict::from_witnesses(Property::P6, witnesses)
}

/// Replays a witness: true iff the cited steps exist and satisfy the
/// violation predicate of `property` on `trace`.
pub fn witness_holds(trace: &Trace, property: Property, w: &Witness) -> bool {
    let Ok(run) = Run::new(trace) else {
        return false;
    };
    let Some(recs) = w
        .steps
        .iter()
        .map(|s| trace.by_step(*s))
        .collect::<Option<Vec<_>>>()
    else {
        return false;
    };
    let applied = |r: &TraceRecord| r.kind == RecordKind::Apply && r.get_event("event").is_some();
    // Position of an APPLY among its replica's event applies.
    let position = |r: &TraceRecord| {
        trace
            .of_kind(RecordKind::Apply)
            .filter(|o| o.actor == r.actor && o.step < r.step && o.get("event").is_some())
            .count()
    };
    match property {
        Property::P1 => {
            let [a, b] = recs.as_slice() else {
                return false;
            };
            applied(a)
                && applied(b)
                && a.actor != b.actor
                && a.get("event") != b.get("event")
                && position(a) == position(b)
        }
        Property::P2 => {
            let [r] = recs.as_slice() else { return false };
            let Some(event) = r.get_event("event") else {
                return false;
            };
            run.complete
                && r.kind == RecordKind::Exec
                && r.get("op") == Some("PACKET_IN")
                && r.get("ack") != Some("true")
                && run
                    .survivors
                    .iter()
                    .any(|c| !run.applies_of(*c).iter().any(|a| a.event == Some(event)))
        }
        Property::P3 => {
            let [a, b] = recs.as_slice() else {
                return false;
            };
            applied(a)
                && applied(b)
                && a.actor == b.actor
                && a.step != b.step
                && a.get("event") == b.get("event")
        }
        Property::P4 => {
            let Some(apply) = recs.first().filter(|r| r.kind == RecordKind::Apply) else {
                return false;
            };
            let Ok(cmds) = parse_cmds(apply) else {
                return false;
            };
            let Some(index) = apply.get_u64("index") else {
                return false;
            };
            cmds.iter().filter(|(_, n)| **n > 0).any(|(sw, _)| {
                let n = run.executions(index, *sw).len();
                match w.anomaly {
                    Anomaly::RepeatedCommand => n > 1,
                    Anomaly::MissingCommand => n == 0 && run.complete,
                    _ => false,
                }
            })
        }
        Property::P5 => {
            let finals = final_states(&run);
            run.complete
                && finals.windows(2).any(|p| {
                    p[0].1.map(|a| (a.index, &a.digest)) != p[1].1.map(|a| (a.index, &a.digest))
                })
                && recs
                    .iter()
                    .filter(|r| r.kind == RecordKind::Apply)
                    .all(|r| {
                        finals
                            .iter()
                            .any(|(_, a)| a.map(|a| a.step) == Some(r.step))
                    })
        }
        Property::P6 => {
            let v = bundle_atomicity(&run);
            recs.iter().all(|r| r.actor.switch().is_some())
                && v.witnesses.iter().any(|o| o.steps == w.steps)
        }
    }
}

/// Anomaly labels present in failed verdicts, deduplicated, in label order.
pub fn classify_anomalies(verdicts: &[Verdict]) -> Vec<Anomaly> {
    verdicts
        .iter()
        .filter(|v| !v.pass)
        .flat_map(|v| v.witnesses.iter().map(|w| w.anomaly))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// `RESULT pass|fail P1..P6=<+/->`
pub fn summary_line(verdicts: &[Verdict]) -> String {
    let all = verdicts.iter().all(|v| v.pass);
    let marks: String = verdicts
        .iter()
        .map(|v| if v.pass { '+' } else { '-' })
        .collect();
    format!(
        "RESULT {} P1..P6={marks}",
        if all { "pass" } else { "fail" }
    )
}
