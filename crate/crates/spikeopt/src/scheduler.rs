//! Asynchronous evaluation pool. One coordinator owns the optimizer state and
//! the log sink; workers receive immutable (trial id, configuration, seed)
//! jobs over per-worker channels and report completions over a shared channel.
//! An idle worker is re-dispatched the moment a candidate can be produced, so
//! no thread waits on other in-flight evaluations.

use std::fs::File;
use std::io::Write;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::thread;
use std::time::Instant;

use chrono::Utc;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scbo::{ScboState, TrialRecord};
use crate::seeding;
use crate::space::{Configuration, UnitPoint};

/// Caps on a run. At least one of the two limits must be set; a run stops
/// dispatching once either is hit and then drains whatever is in flight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentBudget {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_trials: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_wall_seconds: Option<f64>,
    #[serde(default = "default_workers")]
    pub n_workers: usize,
}

fn default_workers() -> usize {
    1
}

impl ExperimentBudget {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Scheduler(format!("budget: {msg}")));
        if self.n_workers == 0 {
            return fail("n_workers must be at least 1");
        }
        if self.max_trials.is_none() && self.max_wall_seconds.is_none() {
            return fail("set max_trials or max_wall_seconds; an unbounded run never ends");
        }
        if self.max_trials == Some(0) {
            return fail("max_trials must be positive when set");
        }
        if let Some(s) = self.max_wall_seconds {
            if !s.is_finite() || s <= 0.0 {
                return fail("max_wall_seconds must be finite and positive when set");
            }
        }
        Ok(())
    }

    fn allows(&self, dispatched: u64, elapsed_seconds: f64) -> bool {
        self.max_trials.map_or(true, |m| dispatched < m)
            && self.max_wall_seconds.map_or(true, |s| elapsed_seconds < s)
    }
}

/// Outcome of one evaluation, as produced by a worker. Timings are split so
/// reports can attribute time to training versus readout scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub objective: f64,
    /// One non-negative violation per early-stop criterion; all zero when the
    /// training ran to completion.
    pub violations: Vec<f64>,
    pub stopped: bool,
    pub samples_processed: u64,
    pub train_seconds: f64,
    pub eval_seconds: f64,
}

/// A trial evaluator. Implementations must be callable from several worker
/// threads at once; per-trial state has to live in locals, not in `self`.
/// `Err` marks a failed trial (recorded with maximal penalty, pool keeps
/// going); panics are caught and treated the same way.
pub trait Evaluator: Sync {
    fn evaluate(
        &self,
        trial_id: u64,
        config: &Configuration,
        seed: u64,
    ) -> std::result::Result<Evaluation, String>;
}

/// One completion message from a worker. Exactly one report is sent per
/// dispatched job, crash or not.
#[derive(Debug)]
pub struct WorkerReport {
    pub trial_id: u64,
    pub worker_id: usize,
    pub record: TrialRecord,
    pub error: Option<String>,
}

/// Destination for completed trial records. `record` must make the trial
/// durable before returning; the coordinator appends in completion order.
pub trait TrialSink {
    fn record(&mut self, trial: &TrialRecord) -> Result<()>;
}

/// Sink that discards records. For runs where only the returned log matters.
pub struct NullSink;

impl TrialSink for NullSink {
    fn record(&mut self, _trial: &TrialRecord) -> Result<()> {
        Ok(())
    }
}

/// Newline-delimited JSON log, one record per line, flushed per line so a
/// killed process leaves exactly the completed trials behind.
#[derive(Debug)]
pub struct JsonlSink {
    path: PathBuf,
    file: File,
}

impl JsonlSink {
    pub fn create(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(JsonlSink { path, file })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl TrialSink for JsonlSink {
    fn record(&mut self, trial: &TrialRecord) -> Result<()> {
        let line = serde_json::to_string(trial)
            .map_err(|e| Error::Scheduler(format!("serialize trial {}: {e}", trial.trial_id)))?;
        let write = |f: &mut File| {
            f.write_all(line.as_bytes())?;
            f.write_all(b"\n")?;
            f.flush()
        };
        write(&mut self.file).map_err(|e| Error::io(&self.path, e))
    }
}

struct Job {
    trial_id: u64,
    config: Configuration,
    seed: u64,
}

/// Drives the optimizer to exhaustion of `budget`. Queued design points go
/// out first; afterwards every idle worker immediately gets a fresh Thompson
/// selection. Each completion is made durable via `sink`, then fed to
/// `state.update` (so the log always leads the optimizer), then appended to
/// the returned list. Worker crashes become penalty records and the pool
/// continues; coordinator errors (model fit, sink I/O) abort with whatever
/// the sink already holds.
pub fn run<E: Evaluator>(
    state: &mut ScboState,
    evaluator: &E,
    budget: &ExperimentBudget,
    sink: &mut dyn TrialSink,
) -> Result<Vec<TrialRecord>> {
    budget.validate()?;
    let n_workers = budget.n_workers;
    let n_constraints = state.n_constraints();
    let master = state.master_seed();
    let started = Instant::now();

    thread::scope(|scope| -> Result<Vec<TrialRecord>> {
        let (report_tx, report_rx) = mpsc::channel::<WorkerReport>();
        let mut job_txs: Vec<mpsc::Sender<Job>> = Vec::with_capacity(n_workers);
        for worker_id in 0..n_workers {
            let (tx, rx) = mpsc::channel::<Job>();
            job_txs.push(tx);
            let reports = report_tx.clone();
            scope.spawn(move || worker_loop(worker_id, n_constraints, rx, reports, evaluator));
        }
        // Workers hold the only senders now, so recv fails iff the pool dies.
        drop(report_tx);

        let mut log: Vec<TrialRecord> = Vec::new();
        let mut idle: Vec<usize> = (0..n_workers).rev().collect();
        let mut dispatched: u64 = 0;
        loop {
            while !idle.is_empty() && budget.allows(dispatched, started.elapsed().as_secs_f64()) {
                let config = state.next_config()?;
                let job = Job {
                    trial_id: dispatched,
                    config,
                    seed: seeding::mix(master, dispatched),
                };
                let w = idle.pop().expect("nonempty idle list");
                job_txs[w]
                    .send(job)
                    .map_err(|_| Error::Scheduler(format!("worker {w} exited early")))?;
                dispatched += 1;
            }
            if idle.len() == n_workers {
                // Budget spent and nothing in flight.
                break;
            }
            let report = report_rx
                .recv()
                .map_err(|_| Error::Scheduler("worker pool exited early".into()))?;
            idle.push(report.worker_id);
            let trial = report.record;
            sink.record(&trial)?;
            state.update(trial.clone())?;
            log.push(trial);
        }
        Ok(log)
    })
}

fn worker_loop<E: Evaluator>(
    worker_id: usize,
    n_constraints: usize,
    jobs: mpsc::Receiver<Job>,
    reports: mpsc::Sender<WorkerReport>,
    evaluator: &E,
) {
    while let Ok(job) = jobs.recv() {
        let start_time = Utc::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(|| {
            evaluator.evaluate(job.trial_id, &job.config, job.seed)
        }))
        .unwrap_or_else(|payload| Err(panic_message(payload.as_ref())));
        let end_time = Utc::now();

        let (evaluation, error) = match outcome {
            Ok(e) => (e, None),
            // Maximal penalty: worst objective, every constraint fully violated.
            Err(msg) => (
                Evaluation {
                    objective: 0.0,
                    violations: vec![1.0; n_constraints],
                    stopped: n_constraints > 0,
                    samples_processed: 0,
                    train_seconds: 0.0,
                    eval_seconds: 0.0,
                },
                Some(msg),
            ),
        };
        let record = TrialRecord {
            trial_id: job.trial_id,
            worker_id,
            config: job.config,
            objective: evaluation.objective,
            violations: evaluation.violations,
            stopped: evaluation.stopped,
            samples_processed: evaluation.samples_processed,
            train_seconds: evaluation.train_seconds,
            eval_seconds: evaluation.eval_seconds,
            start_time,
            end_time,
            seed: job.seed,
            error: error.clone(),
            unit: UnitPoint::default(),
        };
        let report = WorkerReport { trial_id: job.trial_id, worker_id, record, error };
        if reports.send(report).is_err() {
            // Coordinator is gone; nothing left to do.
            return;
        }
    }
}

fn panic_message(payload: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "worker panicked".to_string()
    }
}
