//! Command implementations behind the `ftsdn` binary. Each command writes its
//! report to `out`, diagnostics to `err`, and returns the process exit code.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use ftsdn::checker::{self, classify_anomalies, summary_line, Anomaly, Property, Verdict};
use ftsdn::metrics::MetricsReport;
use ftsdn::netsim::{self, variant_name, CrashPoint, CrashTarget, Scenario, ScenarioError};
use ftsdn::replica::Variant;
use ftsdn::trace::Trace;
use rayon::prelude::*;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_VIOLATION: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Clone, Default)]
pub struct RunOpts {
    pub trace: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
    pub seed: Option<u64>,
    pub variant: Option<Variant>,
}

#[derive(Debug, Clone, Default)]
pub struct SweepOpts {
    pub jobs: Option<usize>,
    pub seed: Option<u64>,
    pub variant: Option<Variant>,
}

/// Exit code for a set of verdicts.
pub fn exit_code(verdicts: &[Verdict]) -> i32 {
    if verdicts.iter().all(|v| v.pass) {
        EXIT_PASS
    } else {
        EXIT_VIOLATION
    }
}

fn load(
    path: &Path,
    seed: Option<u64>,
    variant: Option<Variant>,
    err: &mut dyn Write,
) -> Option<Scenario> {
    match Scenario::load(path) {
        Ok(mut s) => {
            if let Some(seed) = seed {
                s.seed = seed;
            }
            if let Some(v) = variant {
                s.variant = v;
                if let Err(e) = s.validate() {
                    let _ = writeln!(err, "error: {}: {e}", path.display());
                    return None;
                }
            }
            Some(s)
        }
        Err(e) => {
            let _ = writeln!(err, "error: {}: {e}", path.display());
            None
        }
    }
}

/// Full per-property report followed by the `RESULT` line.
pub fn write_report(out: &mut dyn Write, verdicts: &[Verdict]) -> std::io::Result<()> {
    for v in verdicts {
        let status = if v.pass { "pass" } else { "FAIL" };
        write!(out, "{} {:<22} {status}", v.property, v.property.title())?;
        if let Some(note) = &v.note {
            write!(out, "  ({note})")?;
        }
        writeln!(out)?;
        for w in &v.witnesses {
            let steps: Vec<String> = w.steps.iter().map(u64::to_string).collect();
            writeln!(
                out,
                "    [{}] steps {}: {}",
                w.anomaly,
                steps.join(","),
                w.description
            )?;
        }
    }
    let anomalies = classify_anomalies(verdicts);
    if !anomalies.is_empty() {
        writeln!(out, "anomalies: {}", join(&anomalies))?;
    }
    writeln!(out, "{}", summary_line(verdicts))
}

fn join<T: ToString>(items: &[T]) -> String {
    items
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

pub fn cmd_run(path: &Path, opts: &RunOpts, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let Some(scenario) = load(path, opts.seed, opts.variant, err) else {
        return EXIT_CONFIG;
    };
    let output = match netsim::run(&scenario) {
        Ok(o) => o,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_CONFIG;
        }
    };
    if let Some(p) = &opts.trace {
        if let Err(e) = output.trace.write(p) {
            let _ = writeln!(err, "error: writing {}: {e}", p.display());
            return EXIT_CONFIG;
        }
    }
    if let Some(p) = &opts.metrics {
        let json = serde_json::to_string_pretty(&output.metrics).expect("metrics serialize");
        if let Err(e) = std::fs::write(p, json + "\n") {
            let _ = writeln!(err, "error: writing {}: {e}", p.display());
            return EXIT_CONFIG;
        }
    }
    let verdicts = checker::check_all(&output.trace).expect("simulator traces are well formed");
    let m = &output.metrics;
    let _ = writeln!(
        out,
        "{} [{}] {} records, {} events, {} deliveries ({:.2}/event), quiescent={}",
        scenario.name,
        variant_name(scenario.variant),
        output.trace.records.len(),
        m.events,
        m.total_deliveries,
        m.per_event,
        output.quiescent
    );
    let _ = write_report(out, &verdicts);
    exit_code(&verdicts)
}

pub fn cmd_check(path: &Path, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let trace = match Trace::read(path) {
        Ok(t) => t,
        Err(e) => {
            let _ = writeln!(err, "error: {}: {e}", path.display());
            return EXIT_CONFIG;
        }
    };
    match checker::check_all(&trace) {
        Ok(verdicts) => {
            let _ = write_report(out, &verdicts);
            exit_code(&verdicts)
        }
        Err(e) => {
            let _ = writeln!(err, "error: {}: {e}", path.display());
            EXIT_CONFIG
        }
    }
}

/// One derived run of a sweep.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub point: CrashPoint,
    pub verdicts: Vec<Verdict>,
    pub quiescent: bool,
}

impl SweepRow {
    pub fn pass(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }

    pub fn anomalies(&self) -> Vec<Anomaly> {
        classify_anomalies(&self.verdicts)
    }
}

/// Enumerates and runs every crash point; rows come back in enumeration
/// order whatever the thread count.
pub fn sweep(
    scenario: &Scenario,
    target: CrashTarget,
    jobs: Option<usize>,
) -> Result<Vec<SweepRow>, ScenarioError> {
    let points = netsim::enumerate_crash_points(scenario, target)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .expect("thread pool");
    pool.install(|| {
        points
            .into_par_iter()
            .map(|point| {
                let output = netsim::run(&point.scenario)?;
                let verdicts =
                    checker::check_all(&output.trace).expect("simulator traces are well formed");
                Ok(SweepRow {
                    point,
                    verdicts,
                    quiescent: output.quiescent,
                })
            })
            .collect()
    })
}

/// Per-property verdicts folded over a sweep: a property fails if any run fails it.
pub fn fold_verdicts(rows: &[SweepRow]) -> Vec<Verdict> {
    Property::ALL
        .iter()
        .map(|&p| {
            let witnesses = rows
                .iter()
                .flat_map(|r| r.verdicts.iter().filter(|v| v.property == p))
                .flat_map(|v| v.witnesses.iter().cloned())
                .collect::<Vec<_>>();
            Verdict {
                property: p,
                pass: rows
                    .iter()
                    .all(|r| r.verdicts.iter().all(|v| v.property != p || v.pass)),
                witnesses,
                note: None,
            }
        })
        .collect()
}

fn marks(verdicts: &[Verdict]) -> String {
    verdicts
        .iter()
        .map(|v| if v.pass { '+' } else { '-' })
        .collect()
}

pub fn cmd_sweep(
    path: &Path,
    target: CrashTarget,
    opts: &SweepOpts,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32 {
    let Some(scenario) = load(path, opts.seed, opts.variant, err) else {
        return EXIT_CONFIG;
    };
    let rows = match sweep(&scenario, target, opts.jobs) {
        Ok(r) => r,
        Err(e) => {
            let _ = writeln!(err, "error: {}: {e}", path.display());
            return EXIT_CONFIG;
        }
    };
    let _ = writeln!(
        out,
        "{} [{}] crash sweep, {} points",
        scenario.name,
        variant_name(scenario.variant),
        rows.len()
    );
    let _ = writeln!(
        out,
        "{:>4} {:>6}  {:<36} {:<7} anomalies",
        "#", "after", "crash point", "P1..P6"
    );
    for (i, row) in rows.iter().enumerate() {
        let anomalies = row.anomalies();
        let _ = writeln!(
            out,
            "{:>4} {:>6}  {:<36} {:<7} {}",
            i + 1,
            row.point.base_step,
            row.point.label,
            marks(&row.verdicts),
            if anomalies.is_empty() {
                "-".into()
            } else {
                join(&anomalies)
            }
        );
    }
    let failed = rows.iter().filter(|r| !r.pass()).count();
    let _ = writeln!(out, "{} pass, {failed} fail", rows.len() - failed);
    let folded = fold_verdicts(&rows);
    let _ = writeln!(out, "{}", summary_line(&folded));
    exit_code(&folded)
}

/// One variant's column in a comparison.
#[derive(Debug, Clone)]
pub struct VariantSummary {
    pub variant: Variant,
    pub metrics: MetricsReport,
    pub fault_free: Vec<Verdict>,
    pub sweep: Vec<SweepRow>,
}

impl VariantSummary {
    pub fn sweep_failures(&self) -> usize {
        self.sweep.iter().filter(|r| !r.pass()).count()
    }

    pub fn anomalies(&self) -> Vec<Anomaly> {
        let mut all: BTreeSet<Anomaly> = classify_anomalies(&self.fault_free).into_iter().collect();
        all.extend(self.sweep.iter().flat_map(SweepRow::anomalies));
        all.into_iter().collect()
    }
}

/// Runs the scenario's workload without faults under every variant, plus a
/// leader crash sweep per variant.
pub fn compare(
    scenario: &Scenario,
    jobs: Option<usize>,
) -> Result<Vec<VariantSummary>, ScenarioError> {
    let mut base = scenario.clone();
    base.faults.clear();
    Variant::ALL
        .iter()
        .map(|&variant| {
            let mut s = base.clone();
            s.variant = variant;
            let output = netsim::run(&s)?;
            Ok(VariantSummary {
                variant,
                metrics: output.metrics,
                fault_free: checker::check_all(&output.trace)
                    .expect("simulator traces are well formed"),
                sweep: sweep(&s, CrashTarget::Leader, jobs)?,
            })
        })
        .collect()
}

type Column = Box<dyn Fn(&VariantSummary) -> String>;

/// Exit status reflects the bundle variants only; the naive baseline is
/// expected to fail and is reported, not judged.
pub fn cmd_compare(path: &Path, opts: &SweepOpts, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let Some(scenario) = load(path, opts.seed, None, err) else {
        return EXIT_CONFIG;
    };
    let summaries = match compare(&scenario, opts.jobs) {
        Ok(s) => s,
        Err(e) => {
            let _ = writeln!(err, "error: {}: {e}", path.display());
            return EXIT_CONFIG;
        }
    };
    let kinds: BTreeSet<&String> = summaries
        .iter()
        .flat_map(|s| s.metrics.deliveries.keys())
        .collect();
    let _ = write!(out, "{:<16}", "deliveries");
    for s in &summaries {
        let _ = write!(out, "{:>10}", variant_name(s.variant));
    }
    let _ = writeln!(out);
    for kind in kinds {
        let _ = write!(out, "{kind:<16}");
        for s in &summaries {
            let _ = write!(out, "{:>10}", s.metrics.count(kind));
        }
        let _ = writeln!(out);
    }
    let rows: [(&str, Column); 6] = [
        (
            "total",
            Box::new(|s| s.metrics.total_deliveries.to_string()),
        ),
        (
            "per event",
            Box::new(|s| format!("{:.2}", s.metrics.per_event)),
        ),
        ("fault-free", Box::new(|s| marks(&s.fault_free))),
        ("crash points", Box::new(|s| s.sweep.len().to_string())),
        ("failing", Box::new(|s| s.sweep_failures().to_string())),
        (
            "sweep P1..P6",
            Box::new(|s| marks(&fold_verdicts(&s.sweep))),
        ),
    ];
    for (name, f) in rows {
        let _ = write!(out, "{name:<16}");
        for s in &summaries {
            let _ = write!(out, "{:>10}", f(s));
        }
        let _ = writeln!(out);
    }
    for s in &summaries {
        let anomalies = s.anomalies();
        if !anomalies.is_empty() {
            let _ = writeln!(
                out,
                "{} anomalies: {}",
                variant_name(s.variant),
                join(&anomalies)
            );
        }
    }
    let judged: Vec<Verdict> = Property::ALL
        .iter()
        .map(|&p| {
            let pass = summaries
                .iter()
                .filter(|s| s.variant.uses_bundles())
                .flat_map(|s| {
                    s.fault_free
                        .iter()
                        .chain(s.sweep.iter().flat_map(|r| r.verdicts.iter()))
                })
                .all(|v| v.property != p || v.pass);
            Verdict {
                property: p,
                pass,
                witnesses: vec![],
                note: None,
            }
        })
        .collect();
    let _ = writeln!(out, "{}", summary_line(&judged));
    exit_code(&judged)
}

pub fn parse_variant(s: &str) -> Result<Variant, String> {
    Variant::ALL
        .into_iter()
        .find(|v| variant_name(*v).eq_ignore_ascii_case(s))
        .ok_or_else(|| format!("expected NAIVE, PAPER_A or PAPER_B, got {s:?}"))
}
