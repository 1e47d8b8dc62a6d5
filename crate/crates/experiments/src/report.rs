//! Summaries and plot-ready tables from a results directory.
//!
//! A results directory holds `runs.jsonl`, one [`RunRecord`] per line, as
//! written by the `sweep` and `transfer` subcommands.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::sweep::{summarise, RunRecord, Summary};

pub const RUNS_FILE: &str = "runs.jsonl";

#[derive(Debug, Default)]
pub struct Report {
    pub records: Vec<RunRecord>,
    /// Line numbers of `runs.jsonl` that did not parse.
    pub corrupt_lines: Vec<usize>,
    pub summaries: Vec<Summary>,
}

impl Report {
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn aborted(&self) -> impl Iterator<Item = &RunRecord> {
        self.records.iter().filter(|r| r.result.aborted.is_some())
    }
}

pub fn load(dir: &Path) -> anyhow::Result<Report> {
    let path = dir.join(RUNS_FILE);
    let mut report = Report::default();
    if !path.exists() {
        return Ok(report);
    }
    for (i, line) in fs::read_to_string(&path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<RunRecord>(line) {
            Ok(r) => report.records.push(r),
            Err(_) => report.corrupt_lines.push(i + 1),
        }
    }
    report.summaries = summarise(&report.records);
    Ok(report)
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// One row per run, then one summary row per configuration.
pub fn runs_csv(report: &Report) -> String {
    let mut s = String::from(
        "row,label,seed,pretrain_kf,plant_kf,n_c,n_a,td3_period,bandwidth_mbit,cer,converged,convergence_steps,cumulative_steps,aborted,median,min,max\n",
    );
    for r in &report.records {
        let p = &r.spec;
        let _ = writeln!(
            s,
            "run,{},{},{},{},{},{},{},{},{},{},{},{},{},,,",
            p.label,
            p.seed,
            p.pretrain_friction,
            p.plant_friction,
            p.critic_delay,
            p.actor_delay,
            opt(p.td3_actor_period),
            opt(p.bandwidth_mbit),
            p.cer,
            r.result.converged,
            opt(r.result.convergence_steps),
            r.result.cumulative_steps,
            r.result.aborted.as_deref().unwrap_or("").replace(',', ";"),
        );
    }
    for m in &report.summaries {
        let _ = writeln!(
            s,
            "summary,{},,,,,,,,,{},,,{},{},{},{}",
            m.label,
            m.converged,
            m.aborted,
            opt(m.median),
            opt(m.min),
            opt(m.max)
        );
    }
    s
}

/// Evaluation time series: cumulative training steps against the final
/// on-target count of each evaluation episode.
pub fn timeseries_csv(report: &Report) -> String {
    let mut s = String::from("label,seed,cumulative_steps,on_target,success\n");
    for r in &report.records {
        for e in &r.result.evaluations {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.spec.label, r.spec.seed, e.cumulative_steps, e.on_target, e.success
            );
        }
    }
    s
}

pub fn text_table(report: &Report) -> String {
    let mut s = format!(
        "{:<28} {:>4} {:>5} {:>7} {:>10} {:>10} {:>10}\n",
        "configuration", "runs", "conv", "aborted", "median", "min", "max"
    );
    for m in &report.summaries {
        let _ = writeln!(
            s,
            "{:<28} {:>4} {:>5} {:>7} {:>10} {:>10} {:>10}",
            m.label,
            m.runs,
            m.converged,
            m.aborted,
            m.median.map_or("-".into(), |v| format!("{v:.0}")),
            opt(m.min),
            opt(m.max),
        );
    }
    let aborted: Vec<_> = report.aborted().collect();
    if !aborted.is_empty() {
        s.push_str("\naborted runs:\n");
        for r in aborted {
            let _ = writeln!(
                s,
                "  {} seed {}: {}",
                r.spec.label,
                r.spec.seed,
                r.result.aborted.as_deref().unwrap_or("")
            );
        }
    }
    if !report.corrupt_lines.is_empty() {
        let _ = writeln!(s, "\ncorrupt lines in {RUNS_FILE}: {:?}", report.corrupt_lines);
    }
    s
}
