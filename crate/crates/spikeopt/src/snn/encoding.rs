//! Bernoulli rate coding of static images into spike rasters.

use rand::Rng;

use crate::error::{Error, Result};

/// Dense raster of input spikes, frame-major: bit `(t, i)` says unit `i`
/// fired in frame `t`.
#[derive(Debug, Clone)]
pub struct SpikeTrain {
    frames: usize,
    units: usize,
    bits: Vec<bool>,
}

impl SpikeTrain {
    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn units(&self) -> usize {
        self.units
    }

    pub fn is_spike(&self, frame: usize, unit: usize) -> bool {
        self.bits[frame * self.units + unit]
    }

    /// All unit flags for one frame.
    pub fn frame(&self, t: usize) -> &[bool] {
        &self.bits[t * self.units..(t + 1) * self.units]
    }

    pub fn total_spikes(&self) -> u64 {
        self.bits.iter().map(|&b| b as u64).sum()
    }
}

/// Encodes an image as independent per-frame Bernoulli spikes with
/// probability `intensity * r_max`, clamped to [0, 1]. Intensities are
/// expected in [0, 1]; `r_max` caps the per-frame firing probability.
///
/// Draws consume the generator frame by frame, unit by unit, so equal seeds
/// give equal rasters.
pub fn bernoulli_encode<R: Rng>(
    image: &[f64],
    frames: usize,
    r_max: f64,
    rng: &mut R,
) -> Result<SpikeTrain> {
    if image.is_empty() || frames == 0 {
        return Err(Error::Simulator("cannot encode an empty image or zero frames".into()));
    }
    if !(r_max > 0.0 && r_max <= 1.0) {
        return Err(Error::Simulator(format!("rate cap {r_max} outside (0, 1]")));
    }
    let probs: Vec<f64> = image
        .iter()
        .map(|&x| {
            if !x.is_finite() {
                return Err(Error::Simulator("non-finite pixel intensity".into()));
            }
            Ok((x * r_max).clamp(0.0, 1.0))
        })
        .collect::<Result<_>>()?;
    let units = image.len();
    let mut bits = vec![false; frames * units];
    for t in 0..frames {
        let row = &mut bits[t * units..(t + 1) * units];
        for (slot, &p) in row.iter_mut().zip(&probs) {
            *slot = rng.gen::<f64>() < p;
        }
    }
    Ok(SpikeTrain { frames, units, bits })
}
