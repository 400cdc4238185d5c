//! Spike-count early stopping.
//!
//! A training run is watched one sample at a time. For each monitored layer a
//! silent-sample counter goes up whenever the layer's spike total for the
//! sample falls below that layer's activity floor. As soon as the silent
//! fraction of any layer exceeds its tolerated share, the run is cut short.
//! The amount by which each layer's final silent fraction exceeds its share
//! is the run's constraint violation vector, which the optimizer models.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Monitored layer identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    Excitatory,
    Inhibitory,
}

impl std::fmt::Display for Layer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Layer::Excitatory => write!(f, "excitatory"),
            Layer::Inhibitory => write!(f, "inhibitory"),
        }
    }
}

/// Per-layer stopping rule: a sample is silent when the layer emits fewer
/// than `min_spikes` spikes, and the run stops once more than a
/// `max_silent_share` fraction of the epoch's samples were silent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopCriterion {
    pub layer: Layer,
    /// Activity floor (spike count *strictly below* this is silent).
    pub min_spikes: u64,
    /// Tolerated silent fraction of the epoch, in `[0, 1]`.
    pub max_silent_share: f64,
}

impl StopCriterion {
    pub fn new(layer: Layer, min_spikes: u64, max_silent_share: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&max_silent_share) {
            return Err(Error::EarlyStop(format!(
                "{layer}: tolerated silent share {max_silent_share} outside [0, 1]"
            )));
        }
        Ok(StopCriterion { layer, min_spikes, max_silent_share })
    }
}

/// Snapshot of the stopping bookkeeping at the end of (or partway through) a
/// training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopOutcome {
    pub stopped: bool,
    /// Current-epoch silent-sample counts per monitored layer.
    pub counts: BTreeMap<Layer, u64>,
    /// Per-epoch sample count (the violation denominator).
    pub samples_total: u64,
    /// Samples fully observed so far, cumulative across epochs.
    pub samples_processed: u64,
    /// Per-criterion violations, in criteria order.
    pub violations: Vec<f64>,
}

impl StopOutcome {
    /// Scalar violation used in summaries: the sum over criteria.
    pub fn violation_sum(&self) -> f64 {
        self.violations.iter().sum()
    }
}

/// Streaming counter state for one training run.
#[derive(Debug, Clone)]
pub struct StopState {
    criteria: Vec<StopCriterion>,
    samples_total: u64,
    /// Current-epoch silent counts, one per criterion.
    silent: Vec<u64>,
    /// Cumulative observation counts, one per criterion.
    observed: Vec<u64>,
}

impl StopState {
    /// `samples_total` is the per-epoch presentation count.
    pub fn new(criteria: Vec<StopCriterion>, samples_total: u64) -> Result<Self> {
        if samples_total == 0 {
            return Err(Error::EarlyStop("per-epoch sample count must be positive".into()));
        }
        let mut layers: Vec<Layer> = criteria.iter().map(|c| c.layer).collect();
        layers.sort();
        layers.dedup();
        if layers.len() != criteria.len() {
            return Err(Error::EarlyStop("duplicate criterion for a layer".into()));
        }
        let n = criteria.len();
        Ok(StopState { criteria, samples_total, silent: vec![0; n], observed: vec![0; n] })
    }

    pub fn criteria(&self) -> &[StopCriterion] {
        &self.criteria
    }

    pub fn samples_total(&self) -> u64 {
        self.samples_total
    }

    /// Records one layer's spike total for the current sample. Call exactly
    /// once per monitored layer per sample.
    pub fn observe(&mut self, layer: Layer, spike_sum: u64) -> Result<()> {
        let idx = self
            .criteria
            .iter()
            .position(|c| c.layer == layer)
            .ok_or_else(|| Error::EarlyStop(format!("no criterion monitors layer `{layer}`")))?;
        if spike_sum < self.criteria[idx].min_spikes {
            self.silent[idx] += 1;
        }
        self.observed[idx] += 1;
        Ok(())
    }

    /// True once any layer's silent fraction strictly exceeds its share.
    /// The denominator is the per-epoch sample count, not the number of
    /// samples seen so far.
    pub fn should_stop(&self) -> bool {
        self.criteria.iter().zip(&self.silent).any(|(c, &count)| {
            count as f64 / self.samples_total as f64 > c.max_silent_share
        })
    }

    /// Per-criterion violations: how far each silent fraction overshoots its
    /// tolerated share, floored at zero.
    pub fn violations(&self) -> Vec<f64> {
        self.criteria
            .iter()
            .zip(&self.silent)
            .map(|(c, &count)| {
                (count as f64 / self.samples_total as f64 - c.max_silent_share).max(0.0)
            })
            .collect()
    }

    pub fn violation_sum(&self) -> f64 {
        self.violations().iter().sum()
    }

    /// Samples whose every monitored layer has been observed, cumulative
    /// across epochs.
    pub fn samples_processed(&self) -> u64 {
        self.observed.iter().copied().min().unwrap_or(0)
    }

    /// Clears the per-epoch silent counters. Observation totals persist.
    pub fn reset_epoch(&mut self) {
        self.silent.iter_mut().for_each(|c| *c = 0);
    }

    pub fn outcome(&self) -> StopOutcome {
        StopOutcome {
            stopped: self.should_stop(),
            counts: self.criteria.iter().map(|c| c.layer).zip(self.silent.iter().copied()).collect(),
            samples_total: self.samples_total,
            samples_processed: self.samples_processed(),
            violations: self.violations(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn crit(layer: Layer, min_spikes: u64, share: f64) -> StopCriterion {
        StopCriterion::new(layer, min_spikes, share).unwrap()
    }

    #[test]
    fn silence_is_a_strict_inequality() {
        let mut s = StopState::new(vec![crit(Layer::Excitatory, 5, 0.5)], 10).unwrap();
        s.observe(Layer::Excitatory, 5).unwrap(); // not silent: 5 < 5 is false
        s.observe(Layer::Excitatory, 4).unwrap(); // silent
        assert_eq!(s.outcome().counts[&Layer::Excitatory], 1);
    }

    #[test]
    fn zero_floor_never_counts_silence() {
        let mut s = StopState::new(vec![crit(Layer::Excitatory, 0, 0.0)], 10).unwrap();
        for _ in 0..10 {
            s.observe(Layer::Excitatory, 0).unwrap();
        }
        assert_eq!(s.outcome().counts[&Layer::Excitatory], 0);
        assert!(!s.should_stop());
        assert_eq!(s.violations(), vec![0.0]);
    }

    #[test]
    fn stop_is_a_strict_threshold() {
        let mut s = StopState::new(vec![crit(Layer::Excitatory, 1, 0.2)], 10).unwrap();
        s.observe(Layer::Excitatory, 0).unwrap();
        s.observe(Layer::Excitatory, 0).unwrap();
        assert!(!s.should_stop(), "2/10 == 0.2 must not stop");
        s.observe(Layer::Excitatory, 0).unwrap();
        assert!(s.should_stop(), "3/10 > 0.2 must stop");
    }

    #[test]
    fn full_tolerance_never_stops() {
        let mut s = StopState::new(vec![crit(Layer::Excitatory, 100, 1.0)], 4).unwrap();
        for _ in 0..4 {
            s.observe(Layer::Excitatory, 0).unwrap();
        }
        assert!(!s.should_stop(), "count/S == 1.0 is not > 1.0");
        assert_eq!(s.violations(), vec![0.0]);
    }

    #[test]
    fn violation_matches_hand_value() {
        let mut s = StopState::new(vec![crit(Layer::Excitatory, 1, 0.1)], 10).unwrap();
        for _ in 0..5 {
            s.observe(Layer::Excitatory, 0).unwrap();
        }
        assert_eq!(s.violations(), vec![5.0 / 10.0 - 0.1]);
        assert!((s.violation_sum() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn violation_sum_over_two_layers() {
        let criteria = vec![crit(Layer::Excitatory, 1, 0.1), crit(Layer::Inhibitory, 1, 0.25)];
        let mut s = StopState::new(criteria, 10).unwrap();
        for i in 0..10 {
            // 4 silent excitatory samples, 3 silent inhibitory samples.
            s.observe(Layer::Excitatory, if i < 4 { 0 } else { 9 }).unwrap();
            s.observe(Layer::Inhibitory, if i < 3 { 0 } else { 9 }).unwrap();
        }
        let v = s.violations();
        assert!((v[0] - 0.3).abs() < 1e-15);
        assert!((v[1] - 0.05).abs() < 1e-15);
        assert!((s.violation_sum() - 0.35).abs() < 1e-15);
    }

    #[test]
    fn unmonitored_layer_is_an_error() {
        let mut s = StopState::new(vec![crit(Layer::Excitatory, 1, 0.5)], 10).unwrap();
        assert!(s.observe(Layer::Inhibitory, 3).is_err());
    }

    #[test]
    fn epoch_reset_clears_counts_but_not_progress() {
        let mut s = StopState::new(vec![crit(Layer::Excitatory, 1, 0.9)], 4).unwrap();
        for _ in 0..4 {
            s.observe(Layer::Excitatory, 0).unwrap();
        }
        assert_eq!(s.samples_processed(), 4);
        s.reset_epoch();
        assert_eq!(s.outcome().counts[&Layer::Excitatory], 0);
        assert_eq!(s.samples_processed(), 4, "processed total survives the epoch boundary");
    }

    #[test]
    fn samples_processed_is_min_over_layers() {
        let criteria = vec![crit(Layer::Excitatory, 1, 0.9), crit(Layer::Inhibitory, 1, 0.9)];
        let mut s = StopState::new(criteria, 10).unwrap();
        s.observe(Layer::Excitatory, 3).unwrap();
        assert_eq!(s.samples_processed(), 0, "sample incomplete until every layer reported");
        s.observe(Layer::Inhibitory, 3).unwrap();
        assert_eq!(s.samples_processed(), 1);
    }

    #[test]
    fn trace_of_all_silent_stream_stops_at_third_sample() {
        // S = 10, share 0.2: the third silent sample pushes 3/10 over the line.
        let mut s = StopState::new(vec![crit(Layer::Excitatory, 1, 0.2)], 10).unwrap();
        let mut stopped_at = None;
        for i in 1..=10u64 {
            s.observe(Layer::Excitatory, 0).unwrap();
            if s.should_stop() {
                stopped_at = Some(i);
                break;
            }
        }
        assert_eq!(stopped_at, Some(3));
    }

    /// Offline reference: replay the whole loop after the fact.
    fn offline_stop_index(sums: &[u64], min_spikes: u64, share: f64, s_total: u64) -> Option<usize> {
        let mut count = 0u64;
        for (i, &sum) in sums.iter().enumerate() {
            if sum < min_spikes {
                count += 1;
            }
            if count as f64 / s_total as f64 > share {
                return Some(i + 1);
            }
        }
        None
    }

    #[test]
    fn streaming_matches_offline_replay() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5150);
        for _ in 0..500 {
            let s_total = rng.gen_range(1..=50u64);
            let min_spikes = rng.gen_range(0..=6u64);
            let share = rng.gen::<f64>();
            let sums: Vec<u64> = (0..s_total).map(|_| rng.gen_range(0..=8u64)).collect();

            let mut state =
                StopState::new(vec![crit(Layer::Excitatory, min_spikes, share)], s_total).unwrap();
            let mut streaming = None;
            for (i, &sum) in sums.iter().enumerate() {
                state.observe(Layer::Excitatory, sum).unwrap();
                if state.should_stop() {
                    streaming = Some(i + 1);
                    break;
                }
            }
            assert_eq!(streaming, offline_stop_index(&sums, min_spikes, share, s_total));
        }
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(StopCriterion::new(Layer::Excitatory, 1, 1.5).is_err());
        assert!(StopState::new(vec![], 0).is_err());
        let dup = vec![crit(Layer::Excitatory, 1, 0.5), crit(Layer::Excitatory, 2, 0.5)];
        assert!(StopState::new(dup, 10).is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn violations_stay_in_range(
                count in 0u64..=300,
                s_total in 1u64..=300,
                share in 0.0f64..=1.0,
            ) {
                let count = count.min(s_total);
                let mut state =
                    StopState::new(vec![crit(Layer::Excitatory, 1, share)], s_total).unwrap();
                for i in 0..s_total {
                    state.observe(Layer::Excitatory, if i < count { 0 } else { 10 }).unwrap();
                }
                let v = state.violations()[0];
                prop_assert!(v >= 0.0);
                prop_assert!(v <= 1.0 - share + 1e-15);
                // Positive violation exactly when the stop rule fires.
                prop_assert_eq!(v > 0.0, state.should_stop());
            }

            #[test]
            fn silent_counts_never_decrease(sums in proptest::collection::vec(0u64..=5, 1..60)) {
                let mut state =
                    StopState::new(vec![crit(Layer::Excitatory, 3, 1.0)], sums.len() as u64).unwrap();
                let mut last = 0;
                for &sum in &sums {
                    state.observe(Layer::Excitatory, sum).unwrap();
                    let now = state.outcome().counts[&Layer::Excitatory];
                    prop_assert!(now >= last);
                    prop_assert!(now <= state.samples_processed());
                    last = now;
                }
            }
        }
    }
}
