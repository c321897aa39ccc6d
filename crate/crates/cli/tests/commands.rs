mod common;

use common::*;
use ftsdn::checker::Property;
use ftsdn::netsim::{CrashTarget, Direction, FaultSpec, FaultTrigger, TracePoint};
use ftsdn::ofmodel::ControllerId;
use ftsdn::replica::Variant;
use ftsdn::trace::Endpoint;
use ftsdn_cli::*;

fn capture(f: impl FnOnce(&mut Vec<u8>, &mut Vec<u8>) -> i32) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = f(&mut out, &mut err);
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

#[test]
fn run_writes_trace_and_metrics_and_ends_with_result() {
    let dir = tempfile::tempdir().unwrap();
    let opts = RunOpts {
        trace: Some(dir.path().join("t.jsonl")),
        metrics: Some(dir.path().join("m.json")),
        ..Default::default()
    };
    let (code, out, _) =
        capture(|o, e| cmd_run(&scenarios_dir().join("one_event_router.toml"), &opts, o, e));
    assert_eq!(code, 0);
    assert_eq!(out.lines().last().unwrap(), "RESULT pass P1..P6=++++++");
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("m.json")).unwrap()).unwrap();
    assert_eq!(metrics["total_deliveries"], 18);
    let (code, out, _) = capture(|o, e| cmd_check(&dir.path().join("t.jsonl"), o, e));
    assert_eq!(
        (code, out.lines().last().unwrap()),
        (0, "RESULT pass P1..P6=++++++")
    );
}

#[test]
fn malformed_scenario_exits_2_with_a_line() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    std::fs::write(
        &p,
        "name = \"x\"\nvariant = \"PAPER_A\"\nn_controllers = three\n",
    )
    .unwrap();
    let (code, _, err) = capture(|o, e| cmd_run(&p, &RunOpts::default(), o, e));
    assert_eq!(code, 2);
    assert!(err.contains("line 3"), "{err}");
    let (code, _, _) =
        capture(|o, e| cmd_run(&dir.path().join("missing.toml"), &RunOpts::default(), o, e));
    assert_eq!(code, 2);
}

#[test]
fn naive_crash_after_commands_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = scenario("two_switch_mac.toml", Variant::Naive);
    s.faults.push(FaultSpec {
        target: ControllerId(0),
        when: FaultTrigger::AtTracePoint(TracePoint {
            // By s1's third event its first batch has executed.
            actor: Endpoint::Switch(ftsdn::ofmodel::SwitchId(1)),
            direction: Direction::Send,
            kind: Some("PacketIn".into()),
            occurrence: 3,
        }),
    });
    let p = write_scenario(dir.path(), "naive.toml", &s);
    let (code, out, _) = capture(|o, e| cmd_run(&p, &RunOpts::default(), o, e));
    assert_eq!(code, 1, "{out}");
    assert!(out.contains("REPEATED_COMMAND"), "{out}");
    assert!(out.lines().last().unwrap().starts_with("RESULT fail"));
}

#[test]
fn check_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.jsonl");
    passing("PAPER_A").write(&good).unwrap();
    assert_eq!(capture(|o, e| cmd_check(&good, o, e)).0, 0);
    for p in Property::ALL {
        let path = dir.path().join(format!("{p}.jsonl"));
        violating(p).write(&path).unwrap();
        let (code, out, _) = capture(|o, e| cmd_check(&path, o, e));
        assert_eq!(code, 1, "{p}");
        assert!(
            out.lines()
                .any(|l| l.starts_with(&format!("{p} ")) && l.ends_with("FAIL")),
            "{out}"
        );
    }
    let text = std::fs::read_to_string(&good).unwrap();
    let cut = dir.path().join("cut.jsonl");
    std::fs::write(&cut, &text[..text.len() / 2]).unwrap();
    let (code, _, err) = capture(|o, e| cmd_check(&cut, o, e));
    assert_eq!(code, 2, "{err}");
}

#[test]
fn sweep_rejects_scenarios_with_trace_points() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = scenario("two_switch_mac.toml", Variant::PaperA);
    s.faults.push(FaultSpec {
        target: ControllerId(1),
        when: FaultTrigger::AtTracePoint(TracePoint {
            actor: Endpoint::Controller(ControllerId(0)),
            direction: Direction::Deliver,
            kind: None,
            occurrence: 3,
        }),
    });
    let p = write_scenario(dir.path(), "tp.toml", &s);
    let (code, _, err) =
        capture(|o, e| cmd_sweep(&p, CrashTarget::Leader, &SweepOpts::default(), o, e));
    assert_eq!(code, 2);
    assert!(err.contains("trace-point"), "{err}");
}

#[test]
fn sweep_output_is_independent_of_jobs() {
    let p = scenarios_dir().join("two_switch_mac.toml");
    let run = |jobs| {
        capture(|o, e| {
            cmd_sweep(
                &p,
                CrashTarget::Replica(ControllerId(1)),
                &SweepOpts {
                    jobs: Some(jobs),
                    ..Default::default()
                },
                o,
                e,
            )
        })
    };
    let (one, four) = (run(1), run(4));
    assert_eq!(one.0, 0);
    assert_eq!(one.1, four.1);
}

#[test]
fn variant_names_parse() {
    assert_eq!(parse_variant("paper_b"), Ok(Variant::PaperB));
    assert!(parse_variant("paxos").is_err());
}
