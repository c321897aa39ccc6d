//! Hand-built traces: one violating and one passing trace per property.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use ftsdn::checker::Property;
use ftsdn::netsim::Scenario;
use ftsdn::ofmodel::{ControllerId, SwitchId};
use ftsdn::replica::Variant;
use ftsdn::trace::{Endpoint, RecordKind, Trace, TraceRecord};

pub fn scenarios_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

pub fn scenario(file: &str, variant: Variant) -> Scenario {
    let mut s = Scenario::load(&scenarios_dir().join(file)).unwrap();
    s.variant = variant;
    s
}

/// Writes `s` into `dir` and returns the path.
pub fn write_scenario(dir: &Path, name: &str, s: &Scenario) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, s.to_toml()).unwrap();
    p
}

pub struct Fixture(Vec<TraceRecord>);

fn c(i: u32) -> Endpoint {
    Endpoint::Controller(ControllerId(i))
}

fn s(i: u32) -> Endpoint {
    Endpoint::Switch(SwitchId(i))
}

impl Fixture {
    pub fn new(variant: &str) -> Self {
        let mut f = Fixture(vec![]);
        f.push(
            RecordKind::Start,
            Endpoint::Harness,
            None,
            &[("variant", variant), ("n_controllers", "3")],
        );
        f
    }

    fn push(
        &mut self,
        kind: RecordKind,
        actor: Endpoint,
        peer: Option<Endpoint>,
        detail: &[(&str, &str)],
    ) -> &mut Self {
        let step = self.0.len() as u64;
        self.0.push(TraceRecord {
            step,
            t: step,
            kind,
            actor,
            peer,
            msg: None,
            detail: detail
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        });
        self
    }

    pub fn apply(
        &mut self,
        ctl: u32,
        index: &str,
        event: &str,
        digest: &str,
        cmds: &str,
    ) -> &mut Self {
        let mut d = vec![
            ("index", index),
            ("entry", "EVENT"),
            ("event", event),
            ("digest", digest),
        ];
        if !cmds.is_empty() {
            d.push(("cmds", cmds));
        }
        self.push(RecordKind::Apply, c(ctl), None, &d)
    }

    pub fn exec(&mut self, sw: u32, from: u32, detail: &[(&str, &str)]) -> &mut Self {
        self.push(RecordKind::Exec, s(sw), Some(c(from)), detail)
    }

    pub fn event(&mut self, sw: u32, id: &str) -> &mut Self {
        self.exec(
            sw,
            0,
            &[("op", "PACKET_IN"), ("event", id), ("ack", "false")],
        )
    }

    pub fn commit(&mut self, sw: u32, from: u32, bundle: &str, staged: &str) -> &mut Self {
        self.exec(
            sw,
            from,
            &[
                ("op", "BUNDLE_COMMIT"),
                ("bundle", bundle),
                ("staged", staged),
            ],
        )
    }

    pub fn crash(&mut self, ctl: u32) -> &mut Self {
        self.push(RecordKind::Crash, c(ctl), None, &[])
    }

    pub fn conn_drop(&mut self, sw: u32, ctl: u32, bundles: &str) -> &mut Self {
        self.push(
            RecordKind::Drop,
            s(sw),
            Some(c(ctl)),
            &[("reason", "conn_drop"), ("bundles", bundles)],
        )
    }

    pub fn finish(&mut self) -> Trace {
        self.push(
            RecordKind::End,
            Endpoint::Harness,
            None,
            &[("quiescent", "true")],
        );
        Trace {
            records: std::mem::take(&mut self.0),
        }
    }
}

/// A clean three-replica run: one event, one bundle of one command.
pub fn passing(variant: &str) -> Trace {
    let mut f = Fixture::new(variant);
    f.event(1, "s1#1");
    for ctl in 0..3 {
        f.apply(ctl, "1", "s1#1", "ab", "1:1");
    }
    f.commit(1, 0, "1", "2")
        .exec(1, 0, &[("op", "FLOWMOD"), ("bundle", "1")])
        .exec(
            1,
            0,
            &[("op", "PACKETOUT"), ("bundle", "1"), ("port", "4294967293")],
        )
        .exec(
            1,
            0,
            &[("op", "PACKET_IN"), ("event", "s1#2"), ("ack", "true")],
        );
    f.finish()
}

/// A trace that violates exactly `p`.
pub fn violating(p: Property) -> Trace {
    let mut f = Fixture::new("PAPER_A");
    match p {
        Property::P1 => {
            f.event(1, "s1#1").event(1, "s1#2");
            f.apply(0, "1", "s1#1", "x", "")
                .apply(0, "2", "s1#2", "y", "");
            f.apply(1, "1", "s1#2", "z", "")
                .apply(1, "2", "s1#1", "y", "");
            f.apply(2, "1", "s1#1", "x", "")
                .apply(2, "2", "s1#2", "y", "");
        }
        Property::P2 => {
            // Delivery to the slaves suppressed: only the crashed master saw it.
            f.event(1, "s1#1").crash(0);
        }
        Property::P3 => {
            f.event(1, "s1#1");
            for ctl in 0..3 {
                f.apply(ctl, "1", "s1#1", "x", "");
            }
            f.apply(2, "2", "s1#1", "x", "");
        }
        Property::P4 => {
            f.event(1, "s1#1");
            for ctl in 0..3 {
                f.apply(ctl, "1", "s1#1", "x", "1:1");
            }
            f.commit(1, 0, "1", "0").crash(0).commit(1, 1, "1", "0");
        }
        Property::P5 => {
            f.event(1, "s1#1");
            f.apply(0, "1", "s1#1", "x", "")
                .apply(1, "1", "s1#1", "x", "")
                .apply(2, "1", "s1#1", "q", "");
        }
        Property::P6 => {
            f.conn_drop(1, 0, "9")
                .exec(1, 0, &[("op", "FLOWMOD"), ("bundle", "9")]);
        }
    }
    f.finish()
}
