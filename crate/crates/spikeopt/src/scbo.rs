//! Constrained Bayesian optimization with a trust region: surrogate models
//! for the objective and each constraint, candidate generation inside a
//! lengthscale-shaped box around the incumbent, and feasibility-aware
//! Thompson-sampling selection.

use std::collections::VecDeque;

use chrono::{DateTime, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::GpModel;
use crate::seeding;
use crate::space::{Configuration, SearchSpace, UnitPoint};

const STATE_RNG_TAG: u64 = 0x53_43_42;
const FIT_SEED_TAG: u64 = 0x46_49_54;

/// Points closer than this in every coordinate count as one location when
/// deciding whether the surrogates have enough distinct data (mirrors the
/// model-side deduplication threshold).
const DISTINCT_EPS: f64 = 1e-12;

/// Up to this many trials the surrogates are refit after every completion;
/// past it, every `REFIT_STRIDE`th. Hyperparameters barely move per point on
/// a dense history, while each fit costs a full multistart optimization, so
/// the stride bounds model staleness at three trials (under 5% of the
/// history) and cuts the long-run fit bill to a quarter.
const REFIT_DENSE_LIMIT: usize = 64;
const REFIT_STRIDE: usize = 4;

/// Trust-region constants. Defaults follow common practice for this family
/// of optimizers; every field can be overridden from the experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrustRegionConfig {
    pub length_init: f64,
    pub length_min: f64,
    pub length_max: f64,
    /// Consecutive incumbent improvements before the region doubles.
    pub success_tolerance: usize,
    /// Consecutive non-improvements before the region halves.
    pub failure_tolerance: usize,
}

impl TrustRegionConfig {
    pub fn for_dim(dim: usize) -> Self {
        TrustRegionConfig {
            length_init: 0.8,
            length_min: 0.5f64.powi(7),
            length_max: 1.6,
            success_tolerance: 3,
            failure_tolerance: dim.max(5),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.length_min > 0.0
            && self.length_min <= self.length_init
            && self.length_init <= self.length_max
            && self.length_max.is_finite();
        if !ok {
            return Err(Error::Optimizer(format!(
                "trust-region lengths must satisfy 0 < min {} <= init {} <= max {}",
                self.length_min, self.length_init, self.length_max
            )));
        }
        if self.success_tolerance == 0 || self.failure_tolerance == 0 {
            return Err(Error::Optimizer("trust-region tolerances must be at least 1".into()));
        }
        Ok(())
    }
}

/// What one success/failure observation did to the region.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrustRegionEvent {
    Unchanged,
    Expanded,
    Shrunk,
    /// The region shrank below its floor and was reset to the initial
    /// length; the owner should schedule a fresh initial design.
    Restarted,
}

/// Success/failure counters and the box edge length. The two counters are
/// mutually exclusive: an observation of one kind zeroes the other.
#[derive(Debug, Clone, PartialEq)]
pub struct TrustRegion {
    /// Box center in unit coordinates; follows the incumbent.
    pub center: UnitPoint,
    /// Base edge length in unit-cube units before lengthscale shaping.
    pub length: f64,
    pub successes: usize,
    pub failures: usize,
    config: TrustRegionConfig,
}

impl TrustRegion {
    /// Starts at the initial length, centered on the cube midpoint.
    pub fn new(config: TrustRegionConfig, dim: usize) -> Result<Self> {
        config.validate()?;
        Ok(TrustRegion {
            center: UnitPoint(vec![0.5; dim]),
            length: config.length_init,
            successes: 0,
            failures: 0,
            config,
        })
    }

    pub fn config(&self) -> &TrustRegionConfig {
        &self.config
    }

    /// Records one trial outcome. Reaching the success tolerance doubles the
    /// length (capped at the maximum); reaching the failure tolerance halves
    /// it, and a halve that lands below the minimum resets the length to its
    /// initial value and reports a restart. Counters reset whenever they
    /// fire and whenever the opposite outcome arrives.
    pub fn observe(&mut self, success: bool) -> TrustRegionEvent {
        if success {
            self.successes += 1;
            self.failures = 0;
            if self.successes >= self.config.success_tolerance {
                self.successes = 0;
                self.length = (2.0 * self.length).min(self.config.length_max);
                TrustRegionEvent::Expanded
            } else {
                TrustRegionEvent::Unchanged
            }
        } else {
            self.failures += 1;
            self.successes = 0;
            if self.failures >= self.config.failure_tolerance {
                self.failures = 0;
                self.length /= 2.0;
                if self.length < self.config.length_min {
                    self.length = self.config.length_init;
                    TrustRegionEvent::Restarted
                } else {
                    TrustRegionEvent::Shrunk
                }
            } else {
                TrustRegionEvent::Unchanged
            }
        }
    }
}

/// One evaluated trial, in the shape written to the run log (one JSON
/// object per line). Timestamps are RFC 3339 UTC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: u64,
    pub worker_id: usize,
    pub config: Configuration,
    /// Validation accuracy in [0, 1].
    pub objective: f64,
    /// One non-negative value per constraint; 0 means satisfied.
    pub violations: Vec<f64>,
    /// True iff training was cut short, which holds iff some violation is
    /// positive.
    pub stopped: bool,
    pub samples_processed: u64,
    pub train_seconds: f64,
    pub eval_seconds: f64,
    pub start_time: DateTime<Utc>,
    pub end_time: DateTime<Utc>,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
    /// Unit-cube embedding of `config`; recomputed on ingest, not logged.
    #[serde(skip)]
    pub unit: UnitPoint,
}

impl TrialRecord {
    pub fn is_feasible(&self) -> bool {
        self.violations.iter().all(|&v| v <= 0.0)
    }

    pub fn violation_sum(&self) -> f64 {
        self.violations.iter().sum()
    }
}

/// True when `a` is strictly better than `b`: any feasible trial beats any
/// infeasible one; feasible trials compare by objective (ties to the lower
/// trial id); infeasible trials compare by total violation, then objective,
/// then lower trial id.
fn beats(a: &TrialRecord, b: &TrialRecord) -> bool {
    match (a.is_feasible(), b.is_feasible()) {
        (true, false) => true,
        (false, true) => false,
        (true, true) => {
            a.objective > b.objective || (a.objective == b.objective && a.trial_id < b.trial_id)
        }
        (false, false) => {
            let (va, vb) = (a.violation_sum(), b.violation_sum());
            va < vb
                || (va == vb
                    && (a.objective > b.objective
                        || (a.objective == b.objective && a.trial_id < b.trial_id)))
        }
    }
}

/// Index of the incumbent under the feasibility-first ordering, or None for
/// an empty history. Shared by the live optimizer and post-hoc reporting.
pub fn incumbent_index(records: &[TrialRecord]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, t) in records.iter().enumerate() {
        match best {
            None => best = Some(i),
            Some(b) => {
                if beats(t, &records[b]) {
                    best = Some(i);
                }
            }
        }
    }
    best
}

/// Optimizer settings. `for_dim` supplies the defaults; the config file can
/// override any field.
#[derive(Debug, Clone, PartialEq)]
pub struct ScboConfig {
    /// Size of each prior-sampled design (at startup and after restarts).
    pub n_init: usize,
    /// Candidate points scored per selection.
    pub n_cand: usize,
    /// Selections drawn per Thompson sweep.
    pub batch_size: usize,
    /// Margin subtracted from constraint targets so satisfied observations
    /// carry strictly negative values.
    pub eps_feas: f64,
    /// Per-coordinate perturbation probability; None means min(1, 20/dim).
    pub perturb_prob: Option<f64>,
    /// When false, trials that stopped early are left out of the objective
    /// surrogate (their accuracies are real but penalized measurements).
    pub objective_includes_stopped: bool,
    pub trust_region: TrustRegionConfig,
}

impl ScboConfig {
    pub fn for_dim(dim: usize) -> Self {
        ScboConfig {
            n_init: (2 * dim).max(2),
            n_cand: 5000.min(100 * dim.max(1)),
            batch_size: 1,
            eps_feas: 0.01,
            perturb_prob: None,
            objective_includes_stopped: true,
            trust_region: TrustRegionConfig::for_dim(dim),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_init < 2 {
            return Err(Error::Optimizer("initial design needs at least 2 points".into()));
        }
        if self.n_cand == 0 {
            return Err(Error::Optimizer("candidate count must be positive".into()));
        }
        if self.batch_size == 0 || self.batch_size > self.n_cand {
            return Err(Error::Optimizer(format!(
                "batch size {} outside 1..={}",
                self.batch_size, self.n_cand
            )));
        }
        if !(self.eps_feas.is_finite() && self.eps_feas >= 0.0) {
            return Err(Error::Optimizer(format!("feasibility margin {} invalid", self.eps_feas)));
        }
        if let Some(p) = self.perturb_prob {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Optimizer(format!(
                    "perturbation probability {p} outside [0, 1]"
                )));
            }
        }
        self.trust_region.validate()
    }
}

/// Full optimizer state: append-only history, surrogate models, the trust
/// region, queued configurations, and in-flight points.
#[derive(Debug, Clone)]
pub struct ScboState {
    space: SearchSpace,
    config: ScboConfig,
    n_constraints: usize,
    history: Vec<TrialRecord>,
    objective_model: Option<GpModel>,
    constraint_models: Vec<GpModel>,
    region: TrustRegion,
    /// Canonical unit points of dispatched-but-unfinished selections.
    pending: Vec<UnitPoint>,
    /// Prior-sampled configurations awaiting dispatch (initial design and
    /// post-restart designs).
    init_queue: VecDeque<Configuration>,
    /// Selected-but-not-yet-dispatched configurations from the last sweep.
    batch_queue: VecDeque<Configuration>,
    restarts: u64,
    refits: u64,
    rng: ChaCha8Rng,
    master_seed: u64,
}

impl ScboState {
    /// Builds the state and queues an `n_init`-point prior design. No models
    /// exist yet; the region starts at its initial length around the cube
    /// midpoint.
    pub fn new(
        space: SearchSpace,
        config: ScboConfig,
        n_constraints: usize,
        master_seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let dim = space.dim();
        let region = TrustRegion::new(config.trust_region.clone(), dim)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seeding::mix(master_seed, STATE_RNG_TAG));
        let init_queue: VecDeque<Configuration> =
            space.sample_prior(config.n_init, &mut rng).into();
        Ok(ScboState {
            space,
            config,
            n_constraints,
            history: Vec::new(),
            objective_model: None,
            constraint_models: Vec::new(),
            region,
            pending: Vec::new(),
            init_queue,
            batch_queue: VecDeque::new(),
            restarts: 0,
            refits: 0,
            rng,
            master_seed,
        })
    }

    pub fn space(&self) -> &SearchSpace {
        &self.space
    }

    pub fn config(&self) -> &ScboConfig {
        &self.config
    }

    pub fn history(&self) -> &[TrialRecord] {
        &self.history
    }

    pub fn region(&self) -> &TrustRegion {
        &self.region
    }

    pub fn pending(&self) -> &[UnitPoint] {
        &self.pending
    }

    pub fn restarts(&self) -> u64 {
        self.restarts
    }

    /// Number of surrogate refits performed; at most one per ingested trial.
    pub fn refits(&self) -> u64 {
        self.refits
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn n_constraints(&self) -> usize {
        self.n_constraints
    }

    pub fn models_fitted(&self) -> bool {
        self.objective_model.is_some()
    }

    pub fn objective_model(&self) -> Option<&GpModel> {
        self.objective_model.as_ref()
    }

    pub fn constraint_models(&self) -> &[GpModel] {
        &self.constraint_models
    }

    /// Best trial so far under the feasibility-first ordering.
    pub fn incumbent(&self) -> Option<&TrialRecord> {
        incumbent_index(&self.history).map(|i| &self.history[i])
    }

    fn perturb_prob(&self) -> f64 {
        self.config.perturb_prob.unwrap_or_else(|| (20.0 / self.space.dim() as f64).min(1.0))
    }

    /// The next configuration to evaluate: queued design points first, then
    /// prior samples until the surrogates exist, then Thompson selections.
    pub fn next_config(&mut self) -> Result<Configuration> {
        if let Some(c) = self.init_queue.pop_front() {
            return Ok(c);
        }
        if let Some(c) = self.batch_queue.pop_front() {
            return Ok(c);
        }
        if self.objective_model.is_none() {
            // Design exhausted but too little distinct data to model yet.
            let mut one = self.space.sample_prior(1, &mut self.rng);
            return Ok(one.pop().expect("sample_prior(1)"));
        }
        let batch = self.select_batch(self.config.batch_size, self.config.n_cand)?;
        self.batch_queue.extend(batch);
        self.batch_queue
            .pop_front()
            .ok_or_else(|| Error::Optimizer("empty selection batch".into()))
    }

    /// Candidate points inside the trust-region box around the incumbent.
    /// The box edge along dimension i is `length * l_i / geomean(l)` using
    /// the objective model's lengthscales, clipped to the unit cube. Each
    /// coordinate is perturbed (uniform within the box) with the configured
    /// probability and copied from the center otherwise.
    pub fn generate_candidates(&mut self, n_cand: usize) -> Result<Vec<UnitPoint>> {
        let seed = self.rng.gen::<u64>();
        self.candidates_from_seed(n_cand, seed)
    }

    fn candidates_from_seed(&self, n_cand: usize, seed: u64) -> Result<Vec<UnitPoint>> {
        let model = self
            .objective_model
            .as_ref()
            .ok_or_else(|| Error::Optimizer("candidate generation needs fitted models".into()))?;
        if n_cand == 0 {
            return Err(Error::Optimizer("candidate count must be positive".into()));
        }
        let dim = self.space.dim();
        let center: Vec<f64> = match self.incumbent() {
            Some(t) => t.unit.coords().to_vec(),
            None => vec![0.5; dim],
        };
        let ls = &model.kernel().lengthscales;
        let log_mean = ls.iter().map(|l| l.ln()).sum::<f64>() / dim as f64;
        let geomean = log_mean.exp();
        let mut lo = vec![0.0; dim];
        let mut hi = vec![0.0; dim];
        for i in 0..dim {
            let edge = self.region.length * ls[i] / geomean;
            lo[i] = (center[i] - edge / 2.0).clamp(0.0, 1.0);
            hi[i] = (center[i] + edge / 2.0).clamp(0.0, 1.0);
        }
        let p = self.perturb_prob();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cands = (0..n_cand)
            .map(|_| {
                // Draw order per coordinate: perturbation coin, then the
                // uniform only when it landed.
                let coords = (0..dim)
                    .map(|i| {
                        if rng.gen::<f64>() < p && hi[i] > lo[i] {
                            rng.gen_range(lo[i]..hi[i])
                        } else {
                            center[i]
                        }
                    })
                    .collect();
                UnitPoint(coords)
            })
            .collect();
        Ok(cands)
    }

    /// Thompson-samples the surrogates over a fresh candidate set and picks
    /// `q` points without replacement: sample-feasible candidates (every
    /// constraint draw <= 0) ranked by sampled objective first, then, if
    /// those run out, candidates with the smallest sum of positive
    /// constraint draws. Selections are converted to configurations and
    /// their canonical unit points recorded as pending.
    pub fn select_batch(&mut self, q: usize, n_cand: usize) -> Result<Vec<Configuration>> {
        if q == 0 || q > n_cand {
            return Err(Error::Optimizer(format!("batch size {q} outside 1..={n_cand}")));
        }
        let base = self.rng.gen::<u64>();
        // Child seeds are derived by index so the candidate and objective
        // streams do not depend on how many constraints exist.
        let cands = self.candidates_from_seed(n_cand, seeding::mix(base, 1))?;
        let objective = self
            .objective_model
            .as_ref()
            .ok_or_else(|| Error::Optimizer("selection needs fitted models".into()))?;
        let obj_draw = objective.thompson_draw(
            &cands,
            &mut ChaCha8Rng::seed_from_u64(seeding::mix(base, 2)),
        )?;
        let cons_draws: Vec<Vec<f64>> = self
            .constraint_models
            .iter()
            .enumerate()
            .map(|(i, m)| {
                m.thompson_draw(
                    &cands,
                    &mut ChaCha8Rng::seed_from_u64(seeding::mix(base, 3 + i as u64)),
                )
            })
            .collect::<Result<_>>()?;

        let n = cands.len();
        let mut feasible: Vec<usize> = Vec::new();
        let mut rest: Vec<usize> = Vec::new();
        for i in 0..n {
            if cons_draws.iter().all(|d| d[i] <= 0.0) {
                feasible.push(i);
            } else {
                rest.push(i);
            }
        }
        // Highest sampled objective first; index breaks exact ties.
        feasible.sort_by(|&a, &b| {
            obj_draw[b].partial_cmp(&obj_draw[a]).unwrap().then(a.cmp(&b))
        });
        let mut chosen: Vec<usize> = feasible.into_iter().take(q).collect();
        if chosen.len() < q {
            let shortfall_key = |i: usize| -> f64 {
                cons_draws.iter().map(|d| d[i].max(0.0)).sum()
            };
            rest.sort_by(|&a, &b| {
                shortfall_key(a).partial_cmp(&shortfall_key(b)).unwrap().then(a.cmp(&b))
            });
            let need = q - chosen.len();
            chosen.extend(rest.into_iter().take(need));
        }

        let mut out = Vec::with_capacity(chosen.len());
        for idx in chosen {
            let config = self.space.to_configuration(&cands[idx])?;
            let canonical = self.space.to_unit(&config)?;
            self.pending.push(canonical);
            out.push(config);
        }
        Ok(out)
    }

    /// Ingests a completed trial: validates it, retires its pending entry,
    /// appends it to history, moves the region (success iff the trial is the
    /// new incumbent), schedules a fresh prior design on restart, and refits
    /// the surrogates on the full history per the refit cadence.
    pub fn update(&mut self, mut trial: TrialRecord) -> Result<()> {
        if self.history.iter().any(|t| t.trial_id == trial.trial_id) {
            return Err(Error::Optimizer(format!("duplicate trial id {}", trial.trial_id)));
        }
        if trial.violations.len() != self.n_constraints {
            return Err(Error::Optimizer(format!(
                "trial {} carries {} violations, experiment has {} constraints",
                trial.trial_id,
                trial.violations.len(),
                self.n_constraints
            )));
        }
        if !(0.0..=1.0).contains(&trial.objective) {
            return Err(Error::Optimizer(format!(
                "trial {} objective {} outside [0, 1]",
                trial.trial_id, trial.objective
            )));
        }
        if trial.violations.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Optimizer(format!(
                "trial {} has a negative or non-finite violation",
                trial.trial_id
            )));
        }
        let violated = trial.violations.iter().any(|&v| v > 0.0);
        if trial.stopped != violated {
            return Err(Error::Optimizer(format!(
                "trial {}: stopped flag {} disagrees with violations {:?}",
                trial.trial_id, trial.stopped, trial.violations
            )));
        }
        trial.unit = self.space.to_unit(&trial.config)?;
        if let Some(pos) = self.pending.iter().position(|u| u.coords() == trial.unit.coords()) {
            self.pending.remove(pos);
        }

        self.history.push(trial);
        let best = incumbent_index(&self.history).expect("nonempty history");
        let success = best == self.history.len() - 1;
        self.region.center = self.history[best].unit.clone();
        if self.region.observe(success) == TrustRegionEvent::Restarted {
            self.restarts += 1;
            let fresh = self.space.sample_prior(self.config.n_init, &mut self.rng);
            self.init_queue.extend(fresh);
        }
        if self.should_refit() {
            return self.refit();
        }
        Ok(())
    }

    /// Refit after every completion while the history is small or no model
    /// exists yet, then on a fixed stride. Depends only on the history
    /// length, so identically fed states stay identical.
    fn should_refit(&self) -> bool {
        let n = self.history.len();
        self.objective_model.is_none() || n <= REFIT_DENSE_LIMIT || n % REFIT_STRIDE == 0
    }

    /// Refits the objective and constraint models on all history, seeded
    /// from the master seed and the history length. Does nothing until two
    /// distinct locations exist.
    fn refit(&mut self) -> Result<()> {
        let xs: Vec<UnitPoint> = self.history.iter().map(|t| t.unit.clone()).collect();
        if distinct_count(&xs) < 2 {
            return Ok(());
        }
        let (ox, oy): (Vec<UnitPoint>, Vec<f64>) = if self.config.objective_includes_stopped {
            (xs.clone(), self.history.iter().map(|t| t.objective).collect())
        } else {
            let kept: Vec<&TrialRecord> = self.history.iter().filter(|t| !t.stopped).collect();
            let kept_x: Vec<UnitPoint> = kept.iter().map(|t| t.unit.clone()).collect();
            if distinct_count(&kept_x) < 2 {
                // Not enough unstopped data; fall back to everything.
                (xs.clone(), self.history.iter().map(|t| t.objective).collect())
            } else {
                (kept_x, kept.iter().map(|t| t.objective).collect())
            }
        };
        let n = self.history.len() as u64;
        self.refits += 1;
        let seed = seeding::derive(self.master_seed, &[FIT_SEED_TAG, n, 0]);
        self.objective_model = Some(GpModel::fit(&ox, &oy, seed)?);
        self.constraint_models = (0..self.n_constraints)
            .map(|c| {
                let ty: Vec<f64> = self
                    .history
                    .iter()
                    .map(|t| t.violations[c] - self.config.eps_feas)
                    .collect();
                let seed = seeding::derive(self.master_seed, &[FIT_SEED_TAG, n, 1 + c as u64]);
                GpModel::fit(&xs, &ty, seed)
            })
            .collect::<Result<_>>()?;
        Ok(())
    }
}

fn distinct_count(points: &[UnitPoint]) -> usize {
    let mut kept: Vec<&UnitPoint> = Vec::new();
    'outer: for p in points {
        for q in &kept {
            let close = p
                .coords()
                .iter()
                .zip(q.coords())
                .all(|(a, b)| (a - b).abs() <= DISTINCT_EPS);
            if close {
                continue 'outer;
            }
        }
        kept.push(p);
    }
    kept.len()
}
