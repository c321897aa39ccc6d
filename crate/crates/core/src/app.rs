//! Deterministic network applications run by every replica.
//!
//! Applications are pure: the same state and event always produce the same
//! successor state and commands. Replicas rely on this to stay convergent and
//! to rebuild a lost command batch from the log alone.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ofmodel::{Action, ControlMessage, Match, PortId, SwitchId};

/// Commands per target switch, in emission order.
pub type Commands = BTreeMap<SwitchId, Vec<ControlMessage>>;

pub trait NetworkApp: Clone + PartialEq + Serialize {
    fn process_event(&self, sw: SwitchId, in_port: PortId, payload: &[u8]) -> (Self, Commands);
}

pub const LEARNED_PRIORITY: i32 = 10;

/// Learning switch keyed on the first two payload bytes, read as
/// (destination, source) addresses.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MacLearner {
    pub table: BTreeMap<SwitchId, BTreeMap<u8, PortId>>,
}

impl NetworkApp for MacLearner {
    fn process_event(&self, sw: SwitchId, in_port: PortId, payload: &[u8]) -> (Self, Commands) {
        let (dst, src) = match payload {
            [dst, src, ..] => (*dst, *src),
            _ => return (self.clone(), Commands::new()),
        };
        let mut next = self.clone();
        let learned = next.table.entry(sw).or_default();
        let mut cmds = Vec::new();
        if learned.insert(src, in_port) != Some(in_port) {
            cmds.push(ControlMessage::FlowMod {
                matcher: Match {
                    in_port: None,
                    payload_prefix: Some(vec![src]),
                },
                priority: LEARNED_PRIORITY,
                actions: vec![Action::Output(in_port)],
            });
        }
        let out_port = learned.get(&dst).copied().unwrap_or(PortId::FLOOD);
        cmds.push(ControlMessage::PacketOut {
            actions: vec![Action::Output(out_port)],
            payload: payload.to_vec(),
        });
        (next, Commands::from([(sw, cmds)]))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Route {
    #[serde(with = "crate::hexbytes")]
    pub prefix: Vec<u8>,
    pub port: PortId,
}

/// Fixed prefix routes. A miss on a routed prefix installs the route on the
/// reporting switch, once; the packet itself is not re-emitted.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StaticRouter {
    pub routes: Vec<Route>,
    pub installed: BTreeMap<SwitchId, Vec<usize>>,
}

impl StaticRouter {
    pub fn new(routes: Vec<Route>) -> Self {
        StaticRouter {
            routes,
            installed: BTreeMap::new(),
        }
    }
}

impl NetworkApp for StaticRouter {
    fn process_event(&self, sw: SwitchId, _in_port: PortId, payload: &[u8]) -> (Self, Commands) {
        let best = self
            .routes
            .iter()
            .enumerate()
            .filter(|(_, r)| payload.starts_with(&r.prefix))
            .max_by_key(|(i, r)| (r.prefix.len(), std::cmp::Reverse(*i)));
        let Some((idx, route)) = best else {
            return (self.clone(), Commands::new());
        };
        if self.installed.get(&sw).is_some_and(|v| v.contains(&idx)) {
            return (self.clone(), Commands::new());
        }
        let mut next = self.clone();
        next.installed.entry(sw).or_default().push(idx);
        let cmd = ControlMessage::FlowMod {
            matcher: Match {
                in_port: None,
                payload_prefix: Some(route.prefix.clone()),
            },
            priority: 100 + route.prefix.len() as i32,
            actions: vec![Action::Output(route.port)],
        };
        (next, Commands::from([(sw, vec![cmd])]))
    }
}

/// The application instance a replica runs, selected by name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "app")]
pub enum AppState {
    MacLearner(MacLearner),
    StaticRouter(StaticRouter),
}

impl AppState {
    pub const NAMES: [&'static str; 2] = ["mac-learner", "static-router"];

    pub fn by_name(name: &str, routes: &[Route]) -> Option<Self> {
        match name {
            "mac-learner" => Some(AppState::MacLearner(MacLearner::default())),
            "static-router" => Some(AppState::StaticRouter(StaticRouter::new(routes.to_vec()))),
            _ => None,
        }
    }

    pub fn process_event(&self, sw: SwitchId, in_port: PortId, payload: &[u8]) -> (Self, Commands) {
        match self {
            AppState::MacLearner(a) => {
                let (s, c) = a.process_event(sw, in_port, payload);
                (AppState::MacLearner(s), c)
            }
            AppState::StaticRouter(a) => {
                let (s, c) = a.process_event(sw, in_port, payload);
                (AppState::StaticRouter(s), c)
            }
        }
    }

    /// Short hex digest of the canonical serialization.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("app state serializes");
        hex::encode(&Sha256::digest(&bytes)[..8])
    }
}
