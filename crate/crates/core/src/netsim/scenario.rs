//! Scenario description and its TOML file format.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::app::{AppState, Route};
use crate::ofmodel::{has_ack_marker, Action, ControllerId, Match, PortId, SwitchId};
use crate::replica::Variant;
use crate::switchsim::FlowEntry;
use crate::trace::Endpoint;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub variant: Variant,
    pub n_controllers: usize,
    pub switches: Vec<SwitchSpec>,
    pub app: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub routes: Vec<Route>,
    #[serde(default)]
    pub workload: Vec<WorkloadItem>,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
    #[serde(default)]
    pub detector_delay: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_quiesce_limit")]
    pub quiesce_limit: u64,
    /// Virtual-time cost of one control-channel hop.
    #[serde(default = "default_latency")]
    pub latency: u64,
}

fn default_quiesce_limit() -> u64 {
    1_000_000
}

fn default_latency() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchSpec {
    pub id: SwitchId,
    pub ports: Vec<PortId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flows: Vec<FlowSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSpec {
    #[serde(default, rename = "match")]
    pub matcher: Match,
    pub priority: i32,
    pub actions: Vec<Action>,
}

impl From<&FlowSpec> for FlowEntry {
    fn from(f: &FlowSpec) -> Self {
        FlowEntry {
            matcher: f.matcher.clone(),
            priority: f.priority,
            actions: f.actions.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadItem {
    pub t: u64,
    pub switch: SwitchId,
    pub in_port: PortId,
    #[serde(with = "crate::hexbytes")]
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Direction {
    Send,
    Deliver,
}

/// Fires on the `occurrence`-th (1-based) SEND or DELIVER record of `actor`,
/// optionally restricted to one message kind.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TracePoint {
    pub actor: Endpoint,
    pub direction: Direction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    pub occurrence: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultTrigger {
    /// Virtual time relative to the end of connection setup.
    AtTime(u64),
    AtTracePoint(TracePoint),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    pub target: ControllerId,
    pub when: FaultTrigger,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{0}")]
    Parse(String),
    #[error("{}{path}: {message}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
    Invalid {
        line: Option<usize>,
        path: String,
        message: String,
    },
    #[error("reading scenario: {0}")]
    Io(#[from] std::io::Error),
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        let scenario: Scenario =
            toml::from_str(text).map_err(|e| ScenarioError::Parse(anchor_parse_error(text, &e)))?;
        scenario.validate().map_err(|e| match e {
            ScenarioError::Invalid { path, message, .. } => ScenarioError::Invalid {
                line: locate(text, &path),
                path,
                message,
            },
            other => other,
        })?;
        Ok(scenario)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ScenarioError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn controllers(&self) -> impl Iterator<Item = ControllerId> {
        (0..self.n_controllers as u32).map(ControllerId)
    }

    pub fn has_trace_point_faults(&self) -> bool {
        self.faults
            .iter()
            .any(|f| matches!(f.when, FaultTrigger::AtTracePoint(_)))
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let invalid = |path: String, message: String| {
            Err(ScenarioError::Invalid {
                line: None,
                path,
                message,
            })
        };
        if self.n_controllers == 0 {
            return invalid(
                "n_controllers".into(),
                "need at least one controller".into(),
            );
        }
        if self.variant != Variant::Naive
            && (self.n_controllers < 3 || self.n_controllers.is_multiple_of(2))
        {
            return invalid(
                "n_controllers".into(),
                format!(
                    "{} needs an odd controller count >= 3",
                    variant_name(self.variant)
                ),
            );
        }
        if self.latency == 0 {
            return invalid("latency".into(), "must be positive".into());
        }
        if AppState::by_name(&self.app, &self.routes).is_none() {
            return invalid(
                "app".into(),
                format!(
                    "unknown app {:?} (expected one of {:?})",
                    self.app,
                    AppState::NAMES
                ),
            );
        }
        for (i, sw) in self.switches.iter().enumerate() {
            if self.switches[..i].iter().any(|o| o.id == sw.id) {
                return invalid(
                    format!("switches[{i}].id"),
                    format!("duplicate switch id {}", sw.id.0),
                );
            }
            if let Some(p) = sw.ports.iter().find(|p| p.is_reserved()) {
                return invalid(
                    format!("switches[{i}].ports"),
                    format!("reserved port {p} is not physical"),
                );
            }
        }
        for (i, w) in self.workload.iter().enumerate() {
            let Some(sw) = self.switches.iter().find(|s| s.id == w.switch) else {
                return invalid(
                    format!("workload[{i}].switch"),
                    format!("unknown switch {}", w.switch.0),
                );
            };
            if !sw.ports.contains(&w.in_port) {
                return invalid(
                    format!("workload[{i}].in_port"),
                    format!("switch {} has no port {}", w.switch.0, w.in_port),
                );
            }
            if has_ack_marker(&w.payload) {
                return invalid(
                    format!("workload[{i}].payload"),
                    "payload starts with the ack marker".into(),
                );
            }
        }
        for (i, f) in self.faults.iter().enumerate() {
            if f.target.0 as usize >= self.n_controllers {
                return invalid(
                    format!("faults[{i}].target"),
                    format!("no controller {}", f.target.0),
                );
            }
            if let FaultTrigger::AtTracePoint(p) = &f.when {
                if p.occurrence == 0 {
                    return invalid(
                        format!("faults[{i}].when"),
                        "occurrence counts from 1".into(),
                    );
                }
            }
        }
        Ok(())
    }
}

pub fn variant_name(v: Variant) -> &'static str {
    match v {
        Variant::Naive => "NAIVE",
        Variant::PaperA => "PAPER_A",
        Variant::PaperB => "PAPER_B",
    }
}

fn anchor_parse_error(text: &str, e: &toml::de::Error) -> String {
    let msg = e.message();
    match e.span() {
        Some(span) => {
            let line = text[..span.start.min(text.len())].matches('\n').count() + 1;
            format!("line {line}: {msg}")
        }
        None => msg.to_string(),
    }
}

/// Best-effort source line for a validation path such as `workload[2].payload`.
fn locate(text: &str, path: &str) -> Option<usize> {
    let (head, index) = match path.split_once('[') {
        Some((head, rest)) => (head, rest.split(']').next()?.parse::<usize>().ok()),
        None => (path.split('.').next()?, None),
    };
    let lines: Vec<&str> = text.lines().collect();
    match index {
        Some(i) => {
            let header = format!("[[{head}]]");
            let pos = lines
                .iter()
                .enumerate()
                .filter(|(_, l)| l.trim() == header)
                .nth(i)
                .map(|(n, _)| n)?;
            let key = path.rsplit('.').next().filter(|k| !k.contains('['));
            let field = key.and_then(|k| {
                lines[pos + 1..]
                    .iter()
                    .take_while(|l| !l.trim_start().starts_with("[["))
                    .position(|l| l.trim_start().starts_with(k))
                    .map(|off| pos + 1 + off)
            });
            Some(field.unwrap_or(pos) + 1)
        }
        None => lines
            .iter()
            .position(|l| l.trim_start().starts_with(head))
            .map(|n| n + 1),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
name = "t"
variant = "PAPER_A"
n_controllers = 3
app = "mac-learner"
detector_delay = 1
seed = 5

[[switches]]
id = 1
ports = [1, 2]

[[workload]]
t = 0
switch = 1
in_port = 1
payload = "0201"

[[workload]]
t = 4
switch = 1
in_port = 2
payload = "0102"

[[faults]]
target = 0
when = { at_time = 3 }

[[faults]]
target = 0
when = { at_trace_point = { actor = "c0", direction = "SEND", kind = "BundleAdd", occurrence = 2 } }
"#;

    #[test]
    fn parses_full_scenario() {
        let s = Scenario::from_toml_str(BASE).unwrap();
        assert_eq!(s.variant, Variant::PaperA);
        assert_eq!(s.workload[1].payload, vec![1, 2]);
        assert_eq!(s.faults[0].when, FaultTrigger::AtTime(3));
        assert!(s.has_trace_point_faults());
        assert_eq!(s.latency, 1);
        let again = Scenario::from_toml_str(&s.to_toml()).unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn unknown_keys_are_rejected_with_a_line() {
        let text = BASE.replace("seed = 5", "seed = 5\ncolour = \"red\"");
        let err = Scenario::from_toml_str(&text).unwrap_err().to_string();
        assert!(err.contains("colour"), "{err}");
        assert!(err.starts_with("line "), "{err}");
    }

    #[test]
    fn even_controller_count_is_rejected() {
        let err = Scenario::from_toml_str(&BASE.replace("n_controllers = 3", "n_controllers = 4"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 4: n_controllers"), "{err}");
    }

    #[test]
    fn ack_marked_workload_is_rejected_at_its_line() {
        let text = BASE.replace("payload = \"0102\"", "payload = \"fe41434b00\"");
        let err = Scenario::from_toml_str(&text).unwrap_err().to_string();
        assert!(err.contains("workload[1].payload"), "{err}");
        let line: usize = err
            .strip_prefix("line ")
            .and_then(|r| r.split(':').next())
            .and_then(|n| n.parse().ok())
            .unwrap();
        assert!(text.lines().nth(line - 1).unwrap().contains("fe41434b00"));
    }

    #[test]
    fn bad_references_are_rejected() {
        for (from, to) in [
            (
                "target = 0\nwhen = { at_time",
                "target = 7\nwhen = { at_time",
            ),
            ("in_port = 2", "in_port = 9"),
            ("app = \"mac-learner\"", "app = \"router\""),
            ("ports = [1, 2]", "ports = [1, 4294967293]"),
        ] {
            assert!(BASE.contains(from));
            assert!(
                Scenario::from_toml_str(&BASE.replace(from, to)).is_err(),
                "{to}"
            );
        }
    }
}
