//! Post-hoc analysis of trial logs: the run summary and the CSV tables.
//!
//! The run command and the report command both funnel through [`summarize`],
//! so recomputing the summary from a log reproduces the run-time file
//! byte for byte. Restart counting replays the trust-region state machine
//! over the log in completion order; everything else is direct arithmetic
//! over the records.

use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scbo::{incumbent_index, TrialRecord, TrustRegion, TrustRegionConfig, TrustRegionEvent};
use crate::space::Configuration;

/// Headline diagnostics of one run. Field order is the JSON order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSummary {
    /// Stopped trials over all trials.
    pub stopped_fraction: f64,
    /// Train plus eval seconds spent on stopped trials, over the same sum
    /// across all trials.
    pub stopped_time_share: f64,
    pub best_objective: f64,
    pub best_config: Configuration,
    pub restarts: u64,
    pub trials: u64,
}

impl RunSummary {
    /// The exact bytes of `summary.json`.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("summary serializes");
        s.push('\n');
        s
    }
}

/// Computes the summary from completed trials in log order. The trust-region
/// constants must be the ones the run used; the replay feeds the region the
/// same success sequence the live optimizer saw (success iff the trial became
/// the incumbent), so the restart count matches the run.
pub fn summarize(records: &[TrialRecord], tr: &TrustRegionConfig) -> Result<RunSummary> {
    if records.is_empty() {
        return Err(Error::LogParse("no trial records to summarize".into()));
    }
    let mut region = TrustRegion::new(tr.clone(), 1)?;
    let mut restarts = 0u64;
    for i in 0..records.len() {
        let success = incumbent_index(&records[..=i]) == Some(i);
        if region.observe(success) == TrustRegionEvent::Restarted {
            restarts += 1;
        }
    }

    let trials = records.len() as u64;
    let stopped = records.iter().filter(|t| t.stopped).count();
    let spent =
        |t: &TrialRecord| t.train_seconds + t.eval_seconds;
    let stopped_seconds: f64 = records.iter().filter(|t| t.stopped).map(spent).sum();
    let total_seconds: f64 = records.iter().map(spent).sum();
    // An all-crashed log carries zero timings; call that a zero share. The
    // stopped sum needs the same guard: an empty f64 sum is -0.0, which
    // would otherwise serialize as "-0.0".
    let stopped_time_share = if total_seconds > 0.0 && stopped_seconds > 0.0 {
        stopped_seconds / total_seconds
    } else {
        0.0
    };

    let best = &records[incumbent_index(records).expect("nonempty")];
    Ok(RunSummary {
        stopped_fraction: stopped as f64 / trials as f64,
        stopped_time_share,
        best_objective: best.objective,
        best_config: best.config.clone(),
        restarts,
        trials,
    })
}

/// Incumbent objective after each trial, in log order. One row per trial.
pub fn best_so_far_csv(records: &[TrialRecord]) -> String {
    let mut out = String::from("trial,best_objective\n");
    for i in 0..records.len() {
        let best = incumbent_index(&records[..=i]).expect("nonempty prefix");
        out.push_str(&format!("{},{}\n", records[i].trial_id, records[best].objective));
    }
    out
}

/// Per-trial spans for timeline plots: when each trial ran, what it scored,
/// and whether it was cut short.
pub fn intervals_csv(records: &[TrialRecord]) -> String {
    let mut out = String::from("start,end,objective,stopped\n");
    for t in records {
        out.push_str(&format!(
            "{},{},{},{}\n",
            t.start_time.to_rfc3339(),
            t.end_time.to_rfc3339(),
            t.objective,
            t.stopped
        ));
    }
    out
}

/// Reads a JSONL trial log. Lines that fail to parse are skipped; their
/// 1-based line numbers come back for the caller to warn about. A log with
/// no valid records at all is an error.
pub fn read_log(path: &Path) -> Result<(Vec<TrialRecord>, Vec<usize>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut records = Vec::new();
    let mut corrupt = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        match serde_json::from_str::<TrialRecord>(&line) {
            Ok(t) => records.push(t),
            Err(_) => corrupt.push(idx + 1),
        }
    }
    if records.is_empty() {
        return Err(Error::LogParse(format!(
            "{}: no trial records ({} corrupt lines)",
            path.display(),
            corrupt.len()
        )));
    }
    Ok((records, corrupt))
}
