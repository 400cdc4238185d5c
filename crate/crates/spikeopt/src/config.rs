//! Experiment configuration: a strict TOML schema, its resolution into
//! runtime types, and the evaluator that turns one configuration into a
//! trained, scored network.
//!
//! The file is validated completely before any computation: unknown keys are
//! rejected at every level, every searched or fixed name must map to a known
//! simulator knob, and together they must cover all of them. The raw
//! [`ConfigFile`] survives resolution so the exact post-override form can be
//! frozen next to the run's log and re-launched later.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::earlystop::{Layer, StopCriterion};
use crate::error::{Error, Result};
use crate::scbo::{ScboConfig, TrustRegionConfig};
use crate::scheduler::{Evaluation, Evaluator, ExperimentBudget};
use crate::seeding;
use crate::snn::{self, Dataset, DatasetSource, Decoder, NetworkSpec, NeuronParams};
use crate::space::{
    Configuration, Group, ParamKind, ParamSpec, ParamValue, Sampler, SearchSpace,
};

const DATASET_SEED_TAG: u64 = 0x44_41;
const TRAIN_SEED_TAG: u64 = 0;
const ASSIGN_SEED_TAG: u64 = 1;
const EVAL_SEED_TAG: u64 = 2;

/// Value domain expected by a simulator knob.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum KnobKind {
    Real,
    Int,
    Choice,
}

/// Every name a parameter or fixed entry may carry, with the value kind the
/// network builder expects. Searched and fixed names must partition this set.
const KNOBS: &[(&str, KnobKind)] = &[
    ("lambda_minus", KnobKind::Real),
    ("lambda_plus", KnobKind::Real),
    ("map_size", KnobKind::Int),
    ("decoder", KnobKind::Choice),
    ("epochs", KnobKind::Int),
    ("weight_norm", KnobKind::Real),
    ("exc_v_th", KnobKind::Real),
    ("exc_v_rest", KnobKind::Real),
    ("exc_tau", KnobKind::Real),
    ("exc_t_ref", KnobKind::Int),
    ("exc_theta_plus", KnobKind::Real),
    ("exc_tau_theta", KnobKind::Real),
    ("exc_strength", KnobKind::Real),
    ("inh_v_th", KnobKind::Real),
    ("inh_v_rest", KnobKind::Real),
    ("inh_tau", KnobKind::Real),
    ("inh_t_ref", KnobKind::Int),
    ("inh_strength", KnobKind::Real),
];

fn knob_kind(name: &str) -> Option<KnobKind> {
    KNOBS.iter().find(|(n, _)| *n == name).map(|(_, k)| *k)
}

/// Raw experiment file, structurally faithful to the TOML. Kept around after
/// resolution so overrides can be frozen to disk verbatim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub budget: ExperimentBudget,
    #[serde(default)]
    pub scbo: ScboSection,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub earlystop: Vec<CriterionSection>,
    pub simulator: SimulatorSection,
    pub params: Vec<ParamSection>,
}

/// One searched hyperparameter. Bounds are required for numeric kinds and
/// forbidden for categorical ones; the sampler defaults to random choice for
/// categorical parameters and is required otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamSection {
    pub name: String,
    pub kind: ParamKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampler: Option<Sampler>,
    pub group: Group,
}

impl ParamSection {
    fn to_spec(&self) -> Result<ParamSpec> {
        let fail = |field: &str, msg: &str| {
            Err(Error::Config(format!("parameter `{}`: {field}: {msg}", self.name)))
        };
        let need_f64 = |field: &str, v: &Option<f64>| match v {
            Some(x) => Ok(*x),
            None => Err(Error::Config(format!(
                "parameter `{}`: {field}: missing bound",
                self.name
            ))),
        };
        let need_int = |field: &str, v: &Option<f64>| -> Result<i64> {
            let x = need_f64(field, v)?;
            if x.fract() != 0.0 || x.abs() > i64::MAX as f64 {
                return Err(Error::Config(format!(
                    "parameter `{}`: {field}: {x} is not an integer",
                    self.name
                )));
            }
            Ok(x as i64)
        };
        match self.kind {
            ParamKind::Continuous | ParamKind::Discrete => {
                if self.choices.is_some() {
                    return fail("choices", "only categorical parameters take choices");
                }
                let sampler = match self.sampler {
                    Some(s) => s,
                    None => return fail("sampler", "missing (uniform, log-uniform, or r-log-uniform)"),
                };
                if self.kind == ParamKind::Continuous {
                    let lower = need_f64("lower", &self.lower)?;
                    let upper = need_f64("upper", &self.upper)?;
                    Ok(ParamSpec::continuous(&self.name, lower, upper, sampler, self.group))
                } else {
                    let lower = need_int("lower", &self.lower)?;
                    let upper = need_int("upper", &self.upper)?;
                    Ok(ParamSpec::discrete(&self.name, lower, upper, sampler, self.group))
                }
            }
            ParamKind::Categorical => {
                if self.lower.is_some() || self.upper.is_some() {
                    return fail("lower/upper", "categorical parameters take choices, not bounds");
                }
                if matches!(self.sampler, Some(s) if s != Sampler::RandomChoice) {
                    return fail("sampler", "categorical parameters sample by random choice");
                }
                let choices = match &self.choices {
                    Some(c) => c.clone(),
                    None => return fail("choices", "missing choice list"),
                };
                Ok(ParamSpec::categorical(&self.name, choices, self.group))
            }
        }
    }
}

/// Optimizer constants; anything omitted falls back to the dimension-derived
/// default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScboSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_init: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_cand: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_feas: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturb_prob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective_includes_stopped: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trust_region: Option<TrustRegionSection>,
}

impl ScboSection {
    fn resolve(&self, dim: usize) -> Result<ScboConfig> {
        let mut cfg = ScboConfig::for_dim(dim);
        if let Some(v) = self.n_init {
            cfg.n_init = v;
        }
        if let Some(v) = self.n_cand {
            cfg.n_cand = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.eps_feas {
            cfg.eps_feas = v;
        }
        if self.perturb_prob.is_some() {
            cfg.perturb_prob = self.perturb_prob;
        }
        if let Some(v) = self.objective_includes_stopped {
            cfg.objective_includes_stopped = v;
        }
        if let Some(tr) = &self.trust_region {
            tr.apply(&mut cfg.trust_region);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrustRegionSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length_init: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub success_tolerance: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_tolerance: Option<usize>,
}

impl TrustRegionSection {
    fn apply(&self, tr: &mut TrustRegionConfig) {
        if let Some(v) = self.length_init {
            tr.length_init = v;
        }
        if let Some(v) = self.length_min {
            tr.length_min = v;
        }
        if let Some(v) = self.length_max {
            tr.length_max = v;
        }
        if let Some(v) = self.success_tolerance {
            tr.success_tolerance = v;
        }
        if let Some(v) = self.failure_tolerance {
            tr.failure_tolerance = v;
        }
    }
}

/// One spike-silence constraint. Order in the file is the order of the
/// violations vector everywhere downstream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriterionSection {
    pub layer: Layer,
    pub min_spikes: u64,
    pub max_silent_share: f64,
}

/// Simulator constants that are not searched, plus the dataset and any
/// network knobs pinned to a single value under `[simulator.fixed]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulatorSection {
    pub dataset: DatasetSource,
    #[serde(default = "default_frames")]
    pub frames: usize,
    #[serde(default = "default_r_max")]
    pub r_max: f64,
    #[serde(default = "default_w_max")]
    pub w_max: f64,
    #[serde(default = "default_exc_v_reset")]
    pub exc_v_reset: f64,
    #[serde(default = "default_inh_v_reset")]
    pub inh_v_reset: f64,
    #[serde(default = "default_tau_trace")]
    pub tau_trace_pre: f64,
    #[serde(default = "default_tau_trace")]
    pub tau_trace_post: f64,
    #[serde(default = "default_stop_check")]
    pub stop_check_interval: usize,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub fixed: BTreeMap<String, toml::Value>,
}

fn default_frames() -> usize {
    100
}
fn default_r_max() -> f64 {
    0.25
}
fn default_w_max() -> f64 {
    1.0
}
fn default_exc_v_reset() -> f64 {
    -60.0
}
fn default_inh_v_reset() -> f64 {
    -45.0
}
fn default_tau_trace() -> f64 {
    20.0
}
fn default_stop_check() -> usize {
    1
}

/// Command-line or environment values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub max_trials: Option<u64>,
    pub max_seconds: Option<f64>,
    pub out: Option<PathBuf>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<ConfigFile> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<ConfigFile> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(w) = o.workers {
            self.budget.n_workers = w;
        }
        if let Some(t) = o.max_trials {
            self.budget.max_trials = Some(t);
        }
        if let Some(s) = o.max_seconds {
            self.budget.max_wall_seconds = Some(s);
        }
        if let Some(p) = &o.out {
            self.out_dir = Some(p.clone());
        }
    }

    /// The exact file to freeze next to a run's log: parsing it again yields
    /// this value back.
    pub fn frozen_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("freeze: {e}")))
    }

    /// Validates everything and produces the runtime bundle. No dataset is
    /// loaded and no model is touched here.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let specs: Vec<ParamSpec> =
            self.params.iter().map(|p| p.to_spec()).collect::<Result<_>>()?;
        let space = SearchSpace::new(specs)?;
        let scbo = self.scbo.resolve(space.dim())?;
        self.budget.validate()?;

        let criteria: Vec<StopCriterion> = self
            .earlystop
            .iter()
            .map(|c| StopCriterion::new(c.layer, c.min_spikes, c.max_silent_share))
            .collect::<Result<_>>()?;

        let sim = &self.simulator;
        if sim.frames == 0 {
            return Err(Error::Config("simulator: frames must be positive".into()));
        }
        if !(sim.r_max > 0.0 && sim.r_max <= 1.0) {
            return Err(Error::Config(format!(
                "simulator: r_max {} outside (0, 1]",
                sim.r_max
            )));
        }
        if !(sim.w_max > 0.0 && sim.w_max.is_finite()) {
            return Err(Error::Config(format!("simulator: w_max {} must be positive", sim.w_max)));
        }
        if sim.stop_check_interval == 0 {
            return Err(Error::Config("simulator: stop_check_interval must be positive".into()));
        }
        if !(sim.tau_trace_pre > 0.0 && sim.tau_trace_post > 0.0) {
            return Err(Error::Config("simulator: trace time constants must be positive".into()));
        }

        // Searched and fixed names must be known knobs, not overlap, agree in
        // kind, and jointly cover the whole knob set.
        let mut searched: BTreeSet<&str> = BTreeSet::new();
        for p in &self.params {
            let kind = knob_kind(&p.name).ok_or_else(|| {
                Error::Config(format!("parameter `{}` is not a simulator knob", p.name))
            })?;
            if !searched.insert(p.name.as_str()) {
                return Err(Error::Config(format!("parameter `{}` declared twice", p.name)));
            }
            match kind {
                KnobKind::Real => {
                    if p.kind == ParamKind::Categorical {
                        return Err(Error::Config(format!(
                            "parameter `{}` must be continuous or discrete",
                            p.name
                        )));
                    }
                }
                KnobKind::Int => {
                    if p.kind != ParamKind::Discrete {
                        return Err(Error::Config(format!(
                            "parameter `{}` must be discrete",
                            p.name
                        )));
                    }
                }
                KnobKind::Choice => {
                    if p.kind != ParamKind::Categorical {
                        return Err(Error::Config(format!(
                            "parameter `{}` must be categorical",
                            p.name
                        )));
                    }
                    for c in p.choices.as_deref().unwrap_or(&[]) {
                        Decoder::from_name(c)?;
                    }
                }
            }
        }
        let mut fixed: BTreeMap<String, ParamValue> = BTreeMap::new();
        for (name, raw) in &sim.fixed {
            let kind = knob_kind(name).ok_or_else(|| {
                Error::Config(format!("fixed entry `{name}` is not a simulator knob"))
            })?;
            if searched.contains(name.as_str()) {
                return Err(Error::Config(format!(
                    "`{name}` is both searched and fixed; pick one"
                )));
            }
            let value = match (kind, raw) {
                (KnobKind::Real, toml::Value::Float(f)) => ParamValue::Real(*f),
                (KnobKind::Real, toml::Value::Integer(i)) => ParamValue::Real(*i as f64),
                (KnobKind::Int, toml::Value::Integer(i)) => ParamValue::Int(*i),
                (KnobKind::Choice, toml::Value::String(s)) => {
                    Decoder::from_name(s)?;
                    ParamValue::Choice(s.clone())
                }
                (_, other) => {
                    return Err(Error::Config(format!(
                        "fixed entry `{name}`: {} value does not fit this knob",
                        other.type_str()
                    )))
                }
            };
            fixed.insert(name.clone(), value);
        }
        let missing: Vec<&str> = KNOBS
            .iter()
            .map(|(n, _)| *n)
            .filter(|n| !searched.contains(n) && !fixed.contains_key(*n))
            .collect();
        if !missing.is_empty() {
            return Err(Error::Config(format!(
                "simulator knobs neither searched nor fixed: {}",
                missing.join(", ")
            )));
        }

        Ok(ExperimentConfig {
            space,
            scbo,
            criteria,
            profile: SimulatorProfile {
                dataset: sim.dataset.clone(),
                frames: sim.frames,
                r_max: sim.r_max,
                w_max: sim.w_max,
                exc_v_reset: sim.exc_v_reset,
                inh_v_reset: sim.inh_v_reset,
                tau_trace_pre: sim.tau_trace_pre,
                tau_trace_post: sim.tau_trace_post,
                stop_check_interval: sim.stop_check_interval,
                fixed,
            },
            budget: self.budget.clone(),
            seed: self.seed,
            out_dir: self.out_dir.clone(),
        })
    }
}

/// Fully validated runtime view of a [`ConfigFile`].
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub space: SearchSpace,
    pub scbo: ScboConfig,
    pub criteria: Vec<StopCriterion>,
    pub profile: SimulatorProfile,
    pub budget: ExperimentBudget,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Loads the dataset (once, shared by all workers) and builds the
    /// evaluator.
    pub fn evaluator(&self) -> Result<SnnEvaluator> {
        SnnEvaluator::new(self.profile.clone(), self.criteria.clone(), self.seed)
    }
}

/// Simulator constants plus pinned network knobs, everything a worker needs
/// besides the per-trial configuration.
#[derive(Debug, Clone)]
pub struct SimulatorProfile {
    pub dataset: DatasetSource,
    pub frames: usize,
    pub r_max: f64,
    pub w_max: f64,
    pub exc_v_reset: f64,
    pub inh_v_reset: f64,
    pub tau_trace_pre: f64,
    pub tau_trace_post: f64,
    pub stop_check_interval: usize,
    pub fixed: BTreeMap<String, ParamValue>,
}

/// Shared-state evaluator: owns the dataset and stopping criteria, builds a
/// network per trial, trains it under the criteria, fits the readout on the
/// training split, and scores accuracy on the validation split.
pub struct SnnEvaluator {
    profile: SimulatorProfile,
    criteria: Vec<StopCriterion>,
    train_data: Dataset,
    valid_data: Dataset,
}

impl SnnEvaluator {
    pub fn new(
        profile: SimulatorProfile,
        criteria: Vec<StopCriterion>,
        master_seed: u64,
    ) -> Result<Self> {
        let (train_data, valid_data) =
            profile.dataset.load(seeding::mix(master_seed, DATASET_SEED_TAG))?;
        Ok(SnnEvaluator { profile, criteria, train_data, valid_data })
    }

    pub fn train_data(&self) -> &Dataset {
        &self.train_data
    }

    pub fn valid_data(&self) -> &Dataset {
        &self.valid_data
    }

    /// The per-trial network: profile constants plus pinned and searched
    /// knob values. Coverage was proven at resolve time, so a missing name
    /// here means the configuration came from a different space.
    pub fn network_spec(&self, config: &Configuration) -> Result<NetworkSpec> {
        let mut values: BTreeMap<&str, &ParamValue> = BTreeMap::new();
        for (k, v) in &self.profile.fixed {
            values.insert(k.as_str(), v);
        }
        for (k, v) in &config.0 {
            values.insert(k.as_str(), v);
        }
        let real = |key: &str| -> Result<f64> {
            match values.get(key) {
                Some(ParamValue::Real(x)) => Ok(*x),
                Some(ParamValue::Int(n)) => Ok(*n as f64),
                Some(_) => Err(Error::Config(format!("knob `{key}` needs a number"))),
                None => Err(Error::Config(format!("knob `{key}` missing from configuration"))),
            }
        };
        let int = |key: &str| -> Result<i64> {
            match values.get(key) {
                Some(ParamValue::Int(n)) => Ok(*n),
                Some(_) => Err(Error::Config(format!("knob `{key}` needs an integer"))),
                None => Err(Error::Config(format!("knob `{key}` missing from configuration"))),
            }
        };
        let decoder = match values.get("decoder") {
            Some(ParamValue::Choice(s)) => Decoder::from_name(s)?,
            Some(_) => return Err(Error::Config("knob `decoder` needs a choice label".into())),
            None => return Err(Error::Config("knob `decoder` missing from configuration".into())),
        };

        let exc = NeuronParams {
            v_th: real("exc_v_th")?,
            v_rest: real("exc_v_rest")?,
            v_reset: self.profile.exc_v_reset,
            tau: real("exc_tau")?,
            t_ref: int("exc_t_ref")? as u32,
            theta_plus: real("exc_theta_plus")?,
            tau_theta: real("exc_tau_theta")?,
        };
        // The inhibitory threshold is static: no adaptation knobs exist for it.
        let inh = NeuronParams {
            v_th: real("inh_v_th")?,
            v_rest: real("inh_v_rest")?,
            v_reset: self.profile.inh_v_reset,
            tau: real("inh_tau")?,
            t_ref: int("inh_t_ref")? as u32,
            theta_plus: 0.0,
            tau_theta: 1e7,
        };
        Ok(NetworkSpec {
            n_inputs: self.train_data.pixels(),
            map_size: int("map_size")? as usize,
            frames: self.profile.frames,
            r_max: self.profile.r_max,
            w_max: self.profile.w_max,
            weight_norm: real("weight_norm")?,
            lambda_plus: real("lambda_plus")?,
            lambda_minus: real("lambda_minus")?,
            tau_trace_pre: self.profile.tau_trace_pre,
            tau_trace_post: self.profile.tau_trace_post,
            exc,
            inh,
            exc_strength: real("exc_strength")?,
            inh_strength: real("inh_strength")?,
            epochs: int("epochs")? as usize,
            decoder,
            stop_check_interval: self.profile.stop_check_interval,
        })
    }
}

impl Evaluator for SnnEvaluator {
    fn evaluate(
        &self,
        _trial_id: u64,
        config: &Configuration,
        seed: u64,
    ) -> std::result::Result<Evaluation, String> {
        let spec = self.network_spec(config).map_err(|e| e.to_string())?;

        let train_clock = Instant::now();
        let (net, outcome) = snn::train(
            &spec,
            &self.train_data,
            &self.criteria,
            seeding::mix(seed, TRAIN_SEED_TAG),
        )
        .map_err(|e| e.to_string())?;
        let train_seconds = train_clock.elapsed().as_secs_f64();

        // Stopped networks still get scored: their accuracy is a real
        // measurement the objective model may use.
        let eval_clock = Instant::now();
        let readout =
            snn::fit_readout(&net, &self.train_data, seeding::mix(seed, ASSIGN_SEED_TAG))
                .map_err(|e| e.to_string())?;
        let objective =
            snn::evaluate(&net, &readout, &self.valid_data, seeding::mix(seed, EVAL_SEED_TAG))
                .map_err(|e| e.to_string())?;
        let eval_seconds = eval_clock.elapsed().as_secs_f64();

        Ok(Evaluation {
            objective,
            violations: outcome.violations,
            stopped: outcome.stopped,
            samples_processed: outcome.samples_processed,
            train_seconds,
            eval_seconds,
        })
    }
}

/// Profiles compiled into the binary, usable as `--config <name>` without a
/// file on disk.
pub fn builtin(name: &str) -> Option<&'static str> {
    match name {
        "exp1-desk" => Some(include_str!("../../../configs/exp1-desk.toml")),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> String {
        r#"
seed = 9

[budget]
max_trials = 4
n_workers = 1

[simulator]
frames = 30
stop_check_interval = 1

[simulator.dataset]
kind = "synthetic"
classes = 2
side = 4
train = 8
valid = 6
test = 2

[simulator.fixed]
lambda_minus = 0.0005
lambda_plus = 0.008
map_size = 10
decoder = "max"
epochs = 1
exc_v_th = -55.0
exc_v_rest = -65.0
exc_t_ref = 5
exc_theta_plus = 0.05
exc_tau_theta = 1e7
exc_strength = 22.5
inh_v_th = -40.0
inh_v_rest = -60.0
inh_tau = 10.0
inh_t_ref = 2
inh_strength = 1.0

[[earlystop]]
layer = "excitatory"
min_spikes = 1
max_silent_share = 0.5

[[params]]
name = "exc_tau"
kind = "continuous"
lower = 50.0
upper = 200.0
sampler = "log-uniform"
group = "G1"

[[params]]
name = "weight_norm"
kind = "continuous"
lower = 2.0
upper = 8.0
sampler = "uniform"
group = "G5"
"#
        .to_string()
    }

    fn config_of(key: &str, value: f64, key2: &str, value2: f64) -> Configuration {
        let mut c = Configuration::default();
        c.0.insert(key.into(), ParamValue::Real(value));
        c.0.insert(key2.into(), ParamValue::Real(value2));
        c
    }

    #[test]
    fn bundled_profile_parses_and_resolves() {
        let file = ConfigFile::parse(builtin("exp1-desk").unwrap()).unwrap();
        let cfg = file.resolve().unwrap();

        assert_eq!(cfg.space.dim(), 18);
        assert_eq!(cfg.seed, 41);
        assert_eq!(cfg.budget.max_trials, Some(200));
        assert_eq!(cfg.budget.n_workers, 4);
        assert_eq!(cfg.scbo.n_init, 36);
        assert_eq!(cfg.scbo.n_cand, 1000);
        assert_eq!(cfg.scbo.eps_feas, 0.01);
        // Dimension-derived trust-region default survives the merge.
        assert_eq!(cfg.scbo.trust_region.failure_tolerance, 18);

        assert_eq!(cfg.criteria.len(), 2);
        assert_eq!(cfg.criteria[0].layer, Layer::Excitatory);
        assert_eq!(cfg.criteria[0].min_spikes, 5);
        assert_eq!(cfg.criteria[1].layer, Layer::Inhibitory);
        assert_eq!(cfg.criteria[1].min_spikes, 1);
        assert_eq!(cfg.criteria[0].max_silent_share, 0.1);

        assert_eq!(cfg.profile.frames, 100);
        assert_eq!(cfg.profile.r_max, 0.25);
        assert_eq!(cfg.profile.w_max, 1.0);
        assert!(cfg.profile.fixed.is_empty());

        let map = cfg.space.param("map_size").unwrap();
        assert_eq!(map.kind, ParamKind::Discrete);
        assert_eq!((map.lower, map.upper), (20.0, 200.0));
        let lm = cfg.space.param("lambda_minus").unwrap();
        assert_eq!(lm.sampler, Sampler::RLogUniform);
        let dec = cfg.space.param("decoder").unwrap();
        assert_eq!(dec.choices.len(), 4);
    }

    #[test]
    fn unknown_keys_are_rejected_at_every_level() {
        let base = tiny_config();
        for (inject, needle) in [
            ("\ntyop = 3\n", "tyop"),
            ("\n[scbo]\nbananas = 1\n", "bananas"),
            ("\n[extra_section]\nx = 1\n", "extra_section"),
        ] {
            let text = format!("{base}{inject}");
            let err = ConfigFile::parse(&text).unwrap_err().to_string();
            assert!(err.contains(needle), "expected `{needle}` in: {err}");
        }
        // Unknown field inside a param entry.
        let text = base.replace("group = \"G5\"", "group = \"G5\"\nwat = 2");
        let err = ConfigFile::parse(&text).unwrap_err().to_string();
        assert!(err.contains("wat"), "got: {err}");
    }

    #[test]
    fn missing_bound_names_the_parameter_and_field() {
        let text = tiny_config().replace("upper = 200.0\n", "");
        let err = ConfigFile::parse(&text).unwrap().resolve().unwrap_err().to_string();
        assert!(err.contains("exc_tau"), "got: {err}");
        assert!(err.contains("upper"), "got: {err}");
    }

    #[test]
    fn knob_coverage_must_be_exhaustive_and_disjoint() {
        // Drop a fixed knob: resolve must name what is missing.
        let text = tiny_config().replace("inh_strength = 1.0\n", "");
        let err = ConfigFile::parse(&text).unwrap().resolve().unwrap_err().to_string();
        assert!(err.contains("inh_strength"), "got: {err}");

        // Fix a knob that is also searched.
        let text = tiny_config().replace("map_size = 10", "map_size = 10\nexc_tau = 80.0");
        let err = ConfigFile::parse(&text).unwrap().resolve().unwrap_err().to_string();
        assert!(err.contains("exc_tau"), "got: {err}");
        assert!(err.contains("both"), "got: {err}");

        // A name that maps to nothing.
        let text = tiny_config().replace("map_size = 10", "map_size = 10\nwarp_drive = 1.0");
        let err = ConfigFile::parse(&text).unwrap().resolve().unwrap_err().to_string();
        assert!(err.contains("warp_drive"), "got: {err}");
    }

    #[test]
    fn knob_kinds_are_checked_against_parameter_kinds() {
        // map_size must be discrete.
        let text = tiny_config()
            .replace("map_size = 10\n", "")
            .replace(
                "[[params]]\nname = \"exc_tau\"\nkind = \"continuous\"",
                "[[params]]\nname = \"map_size\"\nkind = \"continuous\"",
            );
        let err = ConfigFile::parse(&text).unwrap().resolve().unwrap_err().to_string();
        assert!(err.contains("map_size"), "got: {err}");
        assert!(err.contains("discrete"), "got: {err}");

        // Fixed values must fit the knob's kind.
        let text = tiny_config().replace("decoder = \"max\"", "decoder = 3");
        let err = ConfigFile::parse(&text).unwrap().resolve().unwrap_err().to_string();
        assert!(err.contains("decoder"), "got: {err}");

        let text = tiny_config().replace("inh_tau = 10.0", "inh_tau = \"fast\"");
        let err = ConfigFile::parse(&text).unwrap().resolve().unwrap_err().to_string();
        assert!(err.contains("inh_tau"), "got: {err}");

        // An unknown decoder choice is caught at resolve time.
        let text = tiny_config().replace("decoder = \"max\"", "decoder = \"fastest\"");
        let err = ConfigFile::parse(&text).unwrap().resolve().unwrap_err().to_string();
        assert!(err.contains("fastest"), "got: {err}");
    }

    #[test]
    fn overrides_take_precedence_and_the_frozen_file_round_trips() {
        let mut file = ConfigFile::parse(&tiny_config()).unwrap();
        file.apply(&Overrides {
            seed: Some(77),
            workers: Some(3),
            max_trials: Some(9),
            max_seconds: Some(120.0),
            out: Some(PathBuf::from("runs/x")),
        });
        let frozen = file.frozen_toml().unwrap();
        let reparsed = ConfigFile::parse(&frozen).unwrap();
        assert_eq!(reparsed, file);

        let cfg = reparsed.resolve().unwrap();
        assert_eq!(cfg.seed, 77);
        assert_eq!(cfg.budget.n_workers, 3);
        assert_eq!(cfg.budget.max_trials, Some(9));
        assert_eq!(cfg.budget.max_wall_seconds, Some(120.0));
        assert_eq!(cfg.out_dir.as_deref(), Some(Path::new("runs/x")));
    }

    #[test]
    fn bundled_profile_freezes_and_round_trips() {
        let file = ConfigFile::parse(builtin("exp1-desk").unwrap()).unwrap();
        let frozen = file.frozen_toml().unwrap();
        let reparsed = ConfigFile::parse(&frozen).unwrap();
        assert_eq!(reparsed, file);
    }

    #[test]
    fn network_spec_mapping_obeys_fixed_and_searched_values() {
        let cfg = ConfigFile::parse(&tiny_config()).unwrap().resolve().unwrap();
        let eval = cfg.evaluator().unwrap();

        let spec = eval
            .network_spec(&config_of("exc_tau", 120.0, "weight_norm", 4.0))
            .unwrap();
        assert_eq!(spec.exc.tau, 120.0);
        assert_eq!(spec.weight_norm, 4.0);
        assert_eq!(spec.n_inputs, 16);
        assert_eq!(spec.map_size, 10);
        assert_eq!(spec.decoder, Decoder::Max);
        assert_eq!(spec.epochs, 1);
        assert_eq!(spec.exc.v_reset, -60.0);
        assert_eq!(spec.inh.v_reset, -45.0);
        assert_eq!(spec.exc.t_ref, 5);
        assert_eq!(spec.inh.theta_plus, 0.0);
        assert_eq!(spec.frames, 30);
        spec.validate().unwrap();

        // A configuration missing a searched knob cannot build a network.
        let mut partial = Configuration::default();
        partial.0.insert("exc_tau".into(), ParamValue::Real(120.0));
        let err = eval.network_spec(&partial).unwrap_err().to_string();
        assert!(err.contains("weight_norm"), "got: {err}");
    }

    #[test]
    fn evaluator_scores_deterministically_and_consistently() {
        let cfg = ConfigFile::parse(&tiny_config()).unwrap().resolve().unwrap();
        let eval = cfg.evaluator().unwrap();
        let config = config_of("exc_tau", 100.0, "weight_norm", 5.0);

        let a = eval.evaluate(0, &config, 1234).unwrap();
        let b = eval.evaluate(0, &config, 1234).unwrap();
        assert!((0.0..=1.0).contains(&a.objective));
        assert_eq!(a.violations.len(), cfg.criteria.len());
        assert_eq!(a.stopped, a.violations.iter().any(|&v| v > 0.0));
        assert!(a.samples_processed > 0);

        assert_eq!(a.objective, b.objective);
        assert_eq!(a.violations, b.violations);
        assert_eq!(a.samples_processed, b.samples_processed);

        // A different trial seed changes the spike stream.
        let c = eval.evaluate(0, &config, 4321).unwrap();
        assert_eq!(c.violations.len(), cfg.criteria.len());
    }

    #[test]
    fn builtin_lookup_knows_its_catalog() {
        assert!(builtin("exp1-desk").is_some());
        assert!(builtin("exp9-moon").is_none());
    }
}
