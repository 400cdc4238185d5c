//! Readout of class predictions from excitatory spike activity.

use std::collections::HashMap;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::seeding;
use crate::snn::dataset::Dataset;
use crate::snn::encoding::bernoulli_encode;
use crate::snn::network::{present_frozen, SampleStats, TrainedNetwork};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const ASSIGN_ENCODE_TAG: u64 = 0x41_53;
const EVAL_ENCODE_TAG: u64 = 0x45_56;

/// How spike activity is turned into a class prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decoder {
    /// Highest mean count over the neurons assigned to each class.
    Average,
    /// Label of the single most active neuron.
    Max,
    /// Class evidence summed over sliding windows of n consecutive
    /// excitatory firing events.
    NGram(usize),
}

impl Decoder {
    pub fn from_name(name: &str) -> Result<Decoder> {
        match name {
            "average" => Ok(Decoder::Average),
            "max" => Ok(Decoder::Max),
            other => {
                if let Some(prefix) = other.strip_suffix("-gram") {
                    let n: usize = prefix
                        .parse()
                        .map_err(|_| Error::Value {
                            param: "decoder".into(),
                            msg: format!("unknown decoder {other:?}"),
                        })?;
                    if n == 0 {
                        return Err(Error::Value {
                            param: "decoder".into(),
                            msg: "0-gram windows are empty".into(),
                        });
                    }
                    Ok(Decoder::NGram(n))
                } else {
                    Err(Error::Value {
                        param: "decoder".into(),
                        msg: format!("unknown decoder {other:?}"),
                    })
                }
            }
        }
    }

    pub fn name(&self) -> String {
        match self {
            Decoder::Average => "average".into(),
            Decoder::Max => "max".into(),
            Decoder::NGram(n) => format!("{n}-gram"),
        }
    }

    fn needs_events(&self) -> bool {
        matches!(self, Decoder::NGram(_))
    }
}

/// Per-class evidence table keyed by n-gram of neuron ids.
type NGramTable = HashMap<Vec<u16>, Vec<f64>>;

/// Fitted readout state: class labels per neuron and, for n-gram decoding,
/// the window evidence table.
#[derive(Debug, Clone)]
pub struct Readout {
    pub labels: Vec<usize>,
    /// Neurons that never spiked while labels were fitted; they carry
    /// label 0 and are excluded from class averages.
    pub dead: Vec<bool>,
    pub n_classes: usize,
    pub ngram: Option<NGramTable>,
}

fn run_frozen(net: &TrainedNetwork, image: &[f64], seed: u64, events: bool) -> Result<(SampleStats, Vec<u16>)> {
    let raster = bernoulli_encode(
        image,
        net.spec.frames,
        net.spec.r_max,
        &mut ChaCha8Rng::seed_from_u64(seed),
    )?;
    let mut ev = Vec::new();
    let stats = present_frozen(
        &net.spec,
        &net.weights,
        &net.theta_exc,
        &net.theta_inh,
        &raster,
        events.then_some(&mut ev),
    );
    Ok((stats, ev))
}

fn frozen_pass(net: &TrainedNetwork, data: &Dataset, seed: u64, tag: u64, events: bool) -> Result<Vec<(SampleStats, Vec<u16>)>> {
    let job = |idx: usize| {
        let s = seeding::derive(seed, &[tag, idx as u64]);
        run_frozen(net, &data.images[idx], s, events)
    };
    #[cfg(feature = "parallel")]
    {
        (0..data.len()).into_par_iter().map(job).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..data.len()).map(job).collect()
    }
}

/// Fits the readout on `data`: each neuron takes the class with the highest
/// mean spike count over that class's samples (ties to the lowest class,
/// never-spiking neurons to class 0 with the dead flag), and n-gram decoders
/// additionally accumulate per-window class evidence.
pub fn fit_readout(net: &TrainedNetwork, data: &Dataset, seed: u64) -> Result<Readout> {
    data.validate()?;
    if data.pixels() != net.spec.n_inputs {
        return Err(Error::Simulator(format!(
            "readout data has {} pixels, network expects {}",
            data.pixels(),
            net.spec.n_inputs
        )));
    }
    let m = net.spec.map_size;
    let k = data.n_classes;
    let decoder = net.spec.decoder;
    let runs = frozen_pass(net, data, seed, ASSIGN_ENCODE_TAG, decoder.needs_events())?;

    let mut sums = vec![0.0f64; k * m]; // class-major
    let mut class_n = vec![0u64; k];
    let mut table: NGramTable = HashMap::new();
    for ((stats, events), &label) in runs.iter().zip(&data.labels) {
        class_n[label] += 1;
        for (j, &c) in stats.exc_counts.iter().enumerate() {
            sums[label * m + j] += c as f64;
        }
        if let Decoder::NGram(n) = decoder {
            if events.len() >= n {
                for win in events.windows(n) {
                    table.entry(win.to_vec()).or_insert_with(|| vec![0.0; k])[label] += 1.0;
                }
            }
        }
    }

    let mut labels = vec![0usize; m];
    let mut dead = vec![false; m];
    for j in 0..m {
        let mut best_class = 0usize;
        let mut best_mean = f64::NEG_INFINITY;
        let mut total = 0.0;
        for c in 0..k {
            let mean = if class_n[c] > 0 { sums[c * m + j] / class_n[c] as f64 } else { 0.0 };
            total += sums[c * m + j];
            if mean > best_mean {
                best_mean = mean;
                best_class = c;
            }
        }
        if total == 0.0 {
            labels[j] = 0;
            dead[j] = true;
        } else {
            labels[j] = best_class;
        }
    }
    Ok(Readout {
        labels,
        dead,
        n_classes: k,
        ngram: decoder.needs_events().then_some(table),
    })
}

/// Predicts a class from one sample's activity. Samples with no excitatory
/// spikes at all fall back to class 0, as do n-gram samples whose windows
/// all miss the table. Ties break toward the lowest class (for `Max`, the
/// lowest neuron id).
pub(crate) fn predict(readout: &Readout, decoder: &Decoder, counts: &[u64], events: &[u16]) -> usize {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return 0;
    }
    match decoder {
        Decoder::Max => {
            let mut best = 0usize;
            for (j, &c) in counts.iter().enumerate() {
                if c > counts[best] {
                    best = j;
                }
            }
            readout.labels[best]
        }
        Decoder::Average => {
            let k = readout.n_classes;
            let mut sum = vec![0.0f64; k];
            let mut n = vec![0u64; k];
            for (j, &c) in counts.iter().enumerate() {
                if !readout.dead[j] {
                    sum[readout.labels[j]] += c as f64;
                    n[readout.labels[j]] += 1;
                }
            }
            argmax_class(&(0..k).map(|c| if n[c] > 0 { sum[c] / n[c] as f64 } else { 0.0 }).collect::<Vec<_>>())
        }
        Decoder::NGram(n) => {
            let table = readout.ngram.as_ref().expect("n-gram readout fitted without a table");
            let k = readout.n_classes;
            let mut score = vec![0.0f64; k];
            if events.len() >= *n {
                for win in events.windows(*n) {
                    if let Some(row) = table.get(win) {
                        for (s, &v) in score.iter_mut().zip(row) {
                            *s += v;
                        }
                    }
                }
            }
            argmax_class(&score)
        }
    }
}

fn argmax_class(score: &[f64]) -> usize {
    let mut best = 0usize;
    for (c, &s) in score.iter().enumerate() {
        if s > score[best] {
            best = c;
        }
    }
    best
}

/// Classification accuracy of a fitted readout on `data`.
pub fn evaluate(net: &TrainedNetwork, readout: &Readout, data: &Dataset, seed: u64) -> Result<f64> {
    data.validate()?;
    if data.pixels() != net.spec.n_inputs {
        return Err(Error::Simulator(format!(
            "evaluation data has {} pixels, network expects {}",
            data.pixels(),
            net.spec.n_inputs
        )));
    }
    if readout.labels.len() != net.spec.map_size {
        return Err(Error::Simulator("readout fitted for a different map size".into()));
    }
    if readout.ngram.is_none() && net.spec.decoder.needs_events() {
        return Err(Error::Simulator("n-gram decoding needs a readout fitted with a table".into()));
    }
    let decoder = net.spec.decoder;
    let runs = frozen_pass(net, data, seed, EVAL_ENCODE_TAG, decoder.needs_events())?;
    let correct: usize = runs
        .iter()
        .zip(&data.labels)
        .filter(|((stats, events), &label)| predict(readout, &decoder, &stats.exc_counts, events) == label)
        .count();
    Ok(correct as f64 / data.len() as f64)
}
