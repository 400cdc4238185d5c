//! Desk-scale spiking network simulator: rate-coded inputs feed a plastic
//! excitatory layer with paired lateral inhibition; class labels are read
//! out from spike counts.

pub mod dataset;
pub mod decoder;
pub mod encoding;
pub mod network;
pub mod neuron;

pub use dataset::{load_idx, Dataset, DatasetSource, SyntheticSpec};
pub use decoder::{evaluate, fit_readout, Decoder, Readout};
pub use encoding::{bernoulli_encode, SpikeTrain};
pub use network::{normalize_weights, stdp_update, train, NetworkSpec, TrainedNetwork};
pub use neuron::{LifNeuron, NeuronParams};
