//! Two-layer winner-take-all spiking network: excitatory neurons with
//! plastic input synapses, paired one-to-one with inhibitory neurons that
//! project back onto every other excitatory channel.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::earlystop::{Layer, StopCriterion, StopOutcome, StopState};
use crate::error::{Error, Result};
use crate::seeding;
use crate::snn::dataset::Dataset;
use crate::snn::decoder::Decoder;
use crate::snn::encoding::{bernoulli_encode, SpikeTrain};
use crate::snn::neuron::{LifNeuron, NeuronParams};

/// Fresh synapses start uniform in [0, 0.3 * w_max].
const INIT_WEIGHT_SCALE: f64 = 0.3;

const WEIGHT_INIT_TAG: u64 = 0x57_49;
const TRAIN_ENCODE_TAG: u64 = 0x54_45;

/// Everything needed to build and train one network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub n_inputs: usize,
    /// Number of excitatory neurons (and of paired inhibitory neurons).
    pub map_size: usize,
    /// Frames per sample presentation.
    pub frames: usize,
    /// Encoder per-frame firing probability cap.
    pub r_max: f64,
    /// Soft upper weight bound used by potentiation.
    pub w_max: f64,
    /// Target per-neuron column sum restored after every sample.
    pub weight_norm: f64,
    pub lambda_plus: f64,
    pub lambda_minus: f64,
    /// Decay time constant of the presynaptic (input) traces. frames
    pub tau_trace_pre: f64,
    /// Decay time constant of the postsynaptic (excitatory) traces. frames
    pub tau_trace_post: f64,
    pub exc: NeuronParams,
    pub inh: NeuronParams,
    /// Drive delivered to an inhibitory neuron when its excitatory partner
    /// fires.
    pub exc_strength: f64,
    /// Drive subtracted from every other excitatory neuron per inhibitory
    /// spike of the previous frame.
    pub inh_strength: f64,
    pub epochs: usize,
    pub decoder: Decoder,
    /// Early-stop checks run every this many samples.
    pub stop_check_interval: usize,
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Simulator(msg));
        if self.n_inputs == 0 {
            return fail("network needs at least one input".into());
        }
        if self.map_size == 0 || self.map_size > u16::MAX as usize {
            return fail(format!("map size {} outside 1..={}", self.map_size, u16::MAX));
        }
        if self.frames == 0 {
            return fail("presentation needs at least one frame".into());
        }
        if !(self.r_max > 0.0 && self.r_max <= 1.0) {
            return fail(format!("rate cap {} outside (0, 1]", self.r_max));
        }
        for (name, v, lo) in [
            ("w_max", self.w_max, true),
            ("weight_norm", self.weight_norm, true),
            ("tau_trace_pre", self.tau_trace_pre, true),
            ("tau_trace_post", self.tau_trace_post, true),
        ] {
            if !(v.is_finite() && (!lo || v > 0.0)) {
                return fail(format!("{name} must be a positive finite number, got {v}"));
            }
        }
        for (name, v) in [("lambda_plus", self.lambda_plus), ("lambda_minus", self.lambda_minus)] {
            // Rates above 1 would let one pairing overshoot the soft bounds.
            if !(v.is_finite() && (0.0..=1.0).contains(&v)) {
                return fail(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        for (name, v) in [("exc_strength", self.exc_strength), ("inh_strength", self.inh_strength)] {
            if !(v.is_finite() && v >= 0.0) {
                return fail(format!("{name} must be non-negative, got {v}"));
            }
        }
        if self.epochs == 0 {
            return fail("need at least one epoch".into());
        }
        if self.stop_check_interval == 0 {
            return fail("stop check interval must be at least one sample".into());
        }
        self.exc.validate("excitatory layer")?;
        self.inh.validate("inhibitory layer")?;
        Ok(())
    }
}

/// Pair-based trace STDP with soft bounds, applied after traces were pinned
/// to 1 for this frame's own spikes. Depression runs first: every presynaptic
/// spike scales its outgoing row by `1 - lambda_minus * post_trace`.
/// Potentiation then moves each spiking neuron's column toward `w_max` by
/// `lambda_plus * pre_trace * (w_max - w)`. Weights stay non-negative for
/// rates in [0, 1].
#[allow(clippy::too_many_arguments)]
pub fn stdp_update(
    weights: &mut [f64],
    n_inputs: usize,
    map_size: usize,
    pre_trace: &[f64],
    post_trace: &[f64],
    pre_spikes: &[usize],
    post_spikes: &[usize],
    lambda_minus: f64,
    lambda_plus: f64,
    w_max: f64,
) {
    debug_assert_eq!(weights.len(), n_inputs * map_size);
    if lambda_minus > 0.0 {
        for &i in pre_spikes {
            let row = &mut weights[i * map_size..(i + 1) * map_size];
            for (w, &pt) in row.iter_mut().zip(post_trace) {
                *w *= (1.0 - lambda_minus * pt).max(0.0);
            }
        }
    }
    if lambda_plus > 0.0 {
        for &j in post_spikes {
            for i in 0..n_inputs {
                let w = &mut weights[i * map_size + j];
                *w += lambda_plus * pre_trace[i] * (w_max - *w);
            }
        }
    }
}

/// Rescales every column (synapses into one excitatory neuron) so its sum is
/// `target`. Pure rescaling: relative weights within a column are preserved
/// and nothing is clipped. All-zero columns are left alone.
pub fn normalize_weights(weights: &mut [f64], n_inputs: usize, map_size: usize, target: f64) {
    debug_assert_eq!(weights.len(), n_inputs * map_size);
    for j in 0..map_size {
        let mut sum = 0.0;
        for i in 0..n_inputs {
            sum += weights[i * map_size + j];
        }
        if sum > 0.0 {
            let scale = target / sum;
            for i in 0..n_inputs {
                weights[i * map_size + j] *= scale;
            }
        }
    }
}

/// Spike totals from one presentation.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct SampleStats {
    pub exc_total: u64,
    pub inh_total: u64,
    /// Per-excitatory-neuron spike counts.
    pub exc_counts: Vec<u64>,
}

/// One plastic presentation. Per frame, in order: traces decay; input spikes
/// drive the excitatory layer together with lateral inhibition from the
/// previous frame's inhibitory spikes (each neuron excluding its own
/// partner); inhibitory neurons integrate their partners' same-frame spikes;
/// traces pin to 1 for this frame's spikes; the pair update runs. Adaptive
/// thresholds grow on spikes and decay every frame. Membrane state and
/// traces start fresh; `theta` carries across presentations.
#[allow(clippy::too_many_arguments)]
pub(crate) fn present_train(
    spec: &NetworkSpec,
    weights: &mut [f64],
    theta_exc: &mut [f64],
    theta_inh: &mut [f64],
    input: &SpikeTrain,
    mut events: Option<&mut Vec<u16>>,
) -> SampleStats {
    let m = spec.map_size;
    let n_in = spec.n_inputs;
    let pre_decay = (-1.0 / spec.tau_trace_pre).exp();
    let post_decay = (-1.0 / spec.tau_trace_post).exp();
    // Matches the per-step threshold decay inside the neuron model; hoisted
    // because it is constant across the whole presentation.
    let exc_theta_decay = (-1.0 / spec.exc.tau_theta).exp();
    let inh_theta_decay = (-1.0 / spec.inh.tau_theta).exp();

    let mut exc: Vec<LifNeuron> = (0..m).map(|_| LifNeuron::new(&spec.exc)).collect();
    let mut inh: Vec<LifNeuron> = (0..m).map(|_| LifNeuron::new(&spec.inh)).collect();
    let mut pre_trace = vec![0.0f64; n_in];
    let mut post_trace = vec![0.0f64; m];
    let mut drive = vec![0.0f64; m];
    let mut exc_spiked = vec![false; m];
    let mut inh_prev = vec![false; m];
    let mut inh_prev_count = 0usize;
    let mut pre_idx: Vec<usize> = Vec::with_capacity(n_in);
    let mut exc_idx: Vec<usize> = Vec::with_capacity(m);
    let mut stats = SampleStats { exc_total: 0, inh_total: 0, exc_counts: vec![0; m] };

    for t in 0..input.frames() {
        for v in pre_trace.iter_mut() {
            *v *= pre_decay;
        }
        for v in post_trace.iter_mut() {
            *v *= post_decay;
        }

        pre_idx.clear();
        for (i, &s) in input.frame(t).iter().enumerate() {
            if s {
                pre_idx.push(i);
            }
        }

        drive.fill(0.0);
        for &i in &pre_idx {
            let row = &weights[i * m..(i + 1) * m];
            for (d, &w) in drive.iter_mut().zip(row) {
                *d += w;
            }
        }
        if inh_prev_count > 0 && spec.inh_strength > 0.0 {
            for (j, d) in drive.iter_mut().enumerate() {
                let others = inh_prev_count - usize::from(inh_prev[j]);
                *d -= spec.inh_strength * others as f64;
            }
        }

        exc_idx.clear();
        for j in 0..m {
            let spike = exc[j].step_frozen(drive[j], theta_exc[j], &spec.exc);
            exc_spiked[j] = spike;
            if spike {
                theta_exc[j] += spec.exc.theta_plus;
                exc_idx.push(j);
                stats.exc_counts[j] += 1;
            }
            theta_exc[j] *= exc_theta_decay;
        }
        stats.exc_total += exc_idx.len() as u64;
        if let Some(ev) = events.as_deref_mut() {
            for &j in &exc_idx {
                ev.push(j as u16);
            }
        }

        let mut inh_now = 0usize;
        for j in 0..m {
            let di = if exc_spiked[j] { spec.exc_strength } else { 0.0 };
            let spike = inh[j].step_frozen(di, theta_inh[j], &spec.inh);
            if spike {
                theta_inh[j] += spec.inh.theta_plus;
                inh_now += 1;
            }
            inh_prev[j] = spike;
            theta_inh[j] *= inh_theta_decay;
        }
        inh_prev_count = inh_now;
        stats.inh_total += inh_now as u64;

        for &i in &pre_idx {
            pre_trace[i] = 1.0;
        }
        for &j in &exc_idx {
            post_trace[j] = 1.0;
        }
        stdp_update(
            weights,
            n_in,
            m,
            &pre_trace,
            &post_trace,
            &pre_idx,
            &exc_idx,
            spec.lambda_minus,
            spec.lambda_plus,
            spec.w_max,
        );
    }
    stats
}

/// One frozen presentation: identical dynamics to `present_train` with
/// plasticity off and thresholds held fixed. Used for label assignment and
/// accuracy evaluation.
pub(crate) fn present_frozen(
    spec: &NetworkSpec,
    weights: &[f64],
    theta_exc: &[f64],
    theta_inh: &[f64],
    input: &SpikeTrain,
    mut events: Option<&mut Vec<u16>>,
) -> SampleStats {
    let m = spec.map_size;
    let mut exc: Vec<LifNeuron> = (0..m).map(|_| LifNeuron::new(&spec.exc)).collect();
    let mut inh: Vec<LifNeuron> = (0..m).map(|_| LifNeuron::new(&spec.inh)).collect();
    let mut drive = vec![0.0f64; m];
    let mut exc_spiked = vec![false; m];
    let mut inh_prev = vec![false; m];
    let mut inh_prev_count = 0usize;
    let mut pre_idx: Vec<usize> = Vec::with_capacity(spec.n_inputs);
    let mut stats = SampleStats { exc_total: 0, inh_total: 0, exc_counts: vec![0; m] };

    for t in 0..input.frames() {
        pre_idx.clear();
        for (i, &s) in input.frame(t).iter().enumerate() {
            if s {
                pre_idx.push(i);
            }
        }
        drive.fill(0.0);
        for &i in &pre_idx {
            let row = &weights[i * m..(i + 1) * m];
            for (d, &w) in drive.iter_mut().zip(row) {
                *d += w;
            }
        }
        if inh_prev_count > 0 && spec.inh_strength > 0.0 {
            for (j, d) in drive.iter_mut().enumerate() {
                let others = inh_prev_count - usize::from(inh_prev[j]);
                *d -= spec.inh_strength * others as f64;
            }
        }
        for j in 0..m {
            let spike = exc[j].step_frozen(drive[j], theta_exc[j], &spec.exc);
            exc_spiked[j] = spike;
            if spike {
                stats.exc_counts[j] += 1;
                stats.exc_total += 1;
                if let Some(ev) = events.as_deref_mut() {
                    ev.push(j as u16);
                }
            }
        }
        let mut inh_now = 0usize;
        for j in 0..m {
            let di = if exc_spiked[j] { spec.exc_strength } else { 0.0 };
            let spike = inh[j].step_frozen(di, theta_inh[j], &spec.inh);
            if spike {
                inh_now += 1;
            }
            inh_prev[j] = spike;
        }
        inh_prev_count = inh_now;
        stats.inh_total += inh_now as u64;
    }
    stats
}

/// A trained network: learned weights plus frozen adaptive thresholds.
#[derive(Debug, Clone)]
pub struct TrainedNetwork {
    pub spec: NetworkSpec,
    /// Input weights, row-major: `weights[i * map_size + j]` connects input
    /// `i` to excitatory neuron `j`.
    pub weights: Vec<f64>,
    pub theta_exc: Vec<f64>,
    pub theta_inh: Vec<f64>,
}

/// Trains on `data` for `spec.epochs` passes, watching the spike-silence
/// criteria after every `stop_check_interval` samples. Silence counters
/// reset at epoch boundaries; the processed-sample tally does not. Weight
/// columns are renormalized after every sample. Returns the network and the
/// stop bookkeeping; training that trips a criterion ends at the next check.
pub fn train(
    spec: &NetworkSpec,
    data: &Dataset,
    criteria: &[StopCriterion],
    seed: u64,
) -> Result<(TrainedNetwork, StopOutcome)> {
    spec.validate()?;
    data.validate()?;
    if data.pixels() != spec.n_inputs {
        return Err(Error::Simulator(format!(
            "network expects {} inputs but images have {} pixels",
            spec.n_inputs,
            data.pixels()
        )));
    }

    let m = spec.map_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seeding::mix(seed, WEIGHT_INIT_TAG));
    let cap = INIT_WEIGHT_SCALE * spec.w_max;
    let mut weights: Vec<f64> = (0..spec.n_inputs * m).map(|_| rng.gen_range(0.0..cap)).collect();
    // Columns hold the target sum from the very first presentation.
    normalize_weights(&mut weights, spec.n_inputs, m, spec.weight_norm);
    let mut theta_exc = vec![0.0f64; m];
    let mut theta_inh = vec![0.0f64; m];

    let mut stop = if criteria.is_empty() {
        None
    } else {
        Some(StopState::new(criteria.to_vec(), data.len() as u64)?)
    };
    let mut processed = 0u64;

    'epochs: for epoch in 0..spec.epochs {
        if epoch > 0 {
            if let Some(s) = stop.as_mut() {
                s.reset_epoch();
            }
        }
        for (idx, img) in data.images.iter().enumerate() {
            let enc_seed = seeding::derive(seed, &[TRAIN_ENCODE_TAG, epoch as u64, idx as u64]);
            let raster = bernoulli_encode(
                img,
                spec.frames,
                spec.r_max,
                &mut ChaCha8Rng::seed_from_u64(enc_seed),
            )?;
            let stats =
                present_train(spec, &mut weights, &mut theta_exc, &mut theta_inh, &raster, None);
            normalize_weights(&mut weights, spec.n_inputs, m, spec.weight_norm);
            processed += 1;
            if let Some(s) = stop.as_mut() {
                for c in s.criteria().to_vec() {
                    let total = match c.layer {
                        Layer::Excitatory => stats.exc_total,
                        Layer::Inhibitory => stats.inh_total,
                    };
                    s.observe(c.layer, total)?;
                }
                if (idx + 1) % spec.stop_check_interval == 0 && s.should_stop() {
                    break 'epochs;
                }
            }
        }
    }

    let outcome = match &stop {
        Some(s) => s.outcome(),
        None => StopOutcome {
            stopped: false,
            counts: Default::default(),
            samples_total: data.len() as u64,
            samples_processed: processed,
            violations: Vec::new(),
        },
    };
    Ok((TrainedNetwork { spec: spec.clone(), weights, theta_exc, theta_inh }, outcome))
}
