use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};

/// Binary `[units × timesteps]` matrix, stored time-major so that the
/// population vector at one timestep is a contiguous slice.
///
/// Timesteps are 0-based in this API: `column(0)` is the first sample.
#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SpikeTrain {
    units: usize,
    steps: usize,
    data: Vec<u8>,
}

impl SpikeTrain {
    pub fn zeros(units: usize, steps: usize) -> Self {
        SpikeTrain {
            units,
            steps,
            data: vec![0; units * steps],
        }
    }

    /// Builds a train from per-timestep population vectors.
    pub fn from_columns(units: usize, columns: &[Vec<u8>]) -> Result<Self> {
        let mut train = SpikeTrain::zeros(units, columns.len());
        for (t, col) in columns.iter().enumerate() {
            train.set_column(t, col)?;
        }
        Ok(train)
    }

    pub fn units(&self) -> usize {
        self.units
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn column(&self, t: usize) -> &[u8] {
        &self.data[t * self.units..(t + 1) * self.units]
    }

    pub fn set_column(&mut self, t: usize, values: &[u8]) -> Result<()> {
        ensure_len("spike column", values.len(), self.units)?;
        if values.iter().any(|&v| v > 1) {
            return Err(Error::shape("spike trains are binary"));
        }
        self.data[t * self.units..(t + 1) * self.units].copy_from_slice(values);
        Ok(())
    }

    #[inline]
    pub fn get(&self, unit: usize, t: usize) -> u8 {
        self.data[t * self.units + unit]
    }

    #[inline]
    pub fn set(&mut self, unit: usize, t: usize, spike: bool) {
        self.data[t * self.units + unit] = u8::from(spike);
    }

    /// Raw time-major storage.
    pub fn as_slice(&self) -> &[u8] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    /// Per-unit spike counts.
    pub fn unit_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.units];
        for t in 0..self.steps {
            for (c, &s) in counts.iter_mut().zip(self.column(t)) {
                *c += s as usize;
            }
        }
        counts
    }
}

/// Mean of all entries: spikes per unit per timestep.
///
/// # Panics
/// If the train has no entries.
pub fn spike_rate(train: &SpikeTrain) -> f64 {
    let n = train.units() * train.steps();
    assert!(n > 0, "spike_rate of an empty train");
    train.count() as f64 / n as f64
}

/// Real-valued reference sequence with possibly undefined timesteps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    dim: usize,
    steps: Vec<Option<Vec<f64>>>,
}

impl Reference {
    pub fn new(dim: usize, steps: Vec<Option<Vec<f64>>>) -> Result<Self> {
        for v in steps.iter().flatten() {
            ensure_len("reference step", v.len(), dim)?;
        }
        Ok(Reference { dim, steps })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn at(&self, t: usize) -> Option<&[f64]> {
        self.steps.get(t).and_then(|s| s.as_deref())
    }

    /// Indicator of the timesteps carrying a target.
    pub fn defined_mask(&self) -> Vec<bool> {
        self.steps.iter().map(Option::is_some).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spike_rate_examples() {
        assert_eq!(spike_rate(&SpikeTrain::zeros(3, 4)), 0.0);
        let mut ones = SpikeTrain::zeros(2, 2);
        for u in 0..2 {
            for t in 0..2 {
                ones.set(u, t, true);
            }
        }
        assert_eq!(spike_rate(&ones), 1.0);
        let mut three = SpikeTrain::zeros(2, 6);
        three.set(0, 0, true);
        three.set(1, 3, true);
        three.set(1, 5, true);
        assert_eq!(spike_rate(&three), 0.25);
        assert_eq!(three.unit_counts(), vec![1, 2]);
    }

    #[test]
    #[should_panic]
    fn spike_rate_rejects_empty() {
        spike_rate(&SpikeTrain::zeros(0, 5));
    }

    #[test]
    fn columns_are_validated() {
        let mut train = SpikeTrain::zeros(2, 1);
        assert!(train.set_column(0, &[1]).is_err());
        assert!(train.set_column(0, &[1, 2]).is_err());
        train.set_column(0, &[1, 0]).unwrap();
        assert_eq!(train.column(0), &[1, 0]);
    }
}
