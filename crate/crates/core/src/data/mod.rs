//! Datasets of labelled multichannel recordings: CSV storage, per-sample
//! standardization, protocol-aware splitting, synthetic generation and the
//! test-time perturbations used by the robustness experiments.

mod csv;
mod perturb;
mod split;
mod synthetic;

pub use self::csv::{read_csv, read_csv_from, write_csv, write_csv_to};
pub use perturb::{channel_std, drift_ramp, inject_drift, inject_drift_with, mask_channels, mask_channels_with, masked_count};
pub use split::{split, split_indices, Protocol, Split, SplitSpec};
pub use synthetic::{generate_synthetic, Edge, SyntheticSpec};

use crate::error::{invalid, Result};
use crate::tensor::Tensor;

/// Standard deviations below this are treated as this value when standardizing.
pub const STD_FLOOR: f64 = 1e-8;

/// One recording `x: [T, C]` with its class and subject.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub x: Tensor<f64>,
    pub label: usize,
    pub subject: i64,
}

/// Samples sharing one `(T, C, K)` geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    seq_len: usize,
    channels: usize,
    n_classes: usize,
    samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(seq_len: usize, channels: usize, n_classes: usize) -> Result<Self> {
        if seq_len == 0 || channels == 0 || n_classes == 0 {
            return Err(invalid(format!(
                "dataset dimensions must be positive, got T={seq_len}, C={channels}, K={n_classes}"
            )));
        }
        Ok(Self {
            seq_len,
            channels,
            n_classes,
            samples: Vec::new(),
        })
    }

    pub fn push(&mut self, sample: Sample) -> Result<()> {
        if sample.x.shape() != [self.seq_len, self.channels] {
            return Err(invalid(format!(
                "sample shape {:?} does not match dataset [{}, {}]",
                sample.x.shape(),
                self.seq_len,
                self.channels
            )));
        }
        if sample.label >= self.n_classes {
            return Err(invalid(format!("label {} outside 0..{}", sample.label, self.n_classes)));
        }
        if !sample.x.all_finite() {
            return Err(invalid("sample contains non-finite values"));
        }
        self.samples.push(sample);
        Ok(())
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Sorted distinct subject ids.
    pub fn subjects(&self) -> Vec<i64> {
        let mut ids: Vec<i64> = self.samples.iter().map(|s| s.subject).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    /// Samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            ..self.empty_like()
        }
    }

    fn empty_like(&self) -> Self {
        Self {
            seq_len: self.seq_len,
            channels: self.channels,
            n_classes: self.n_classes,
            samples: Vec::new(),
        }
    }

    /// Applies `f` to every recording, keeping labels and subjects.
    pub fn map_x(&self, mut f: impl FnMut(&Tensor<f64>) -> Result<Tensor<f64>>) -> Result<Self> {
        let mut out = self.empty_like();
        for s in &self.samples {
            out.push(Sample {
                x: f(&s.x)?,
                label: s.label,
                subject: s.subject,
            })?;
        }
        Ok(out)
    }

    /// Per-sample, per-channel z-scoring.
    pub fn standardize(&self) -> Self {
        let mut out = self.clone();
        for s in &mut out.samples {
            s.x = standardize_sample(&s.x);
        }
        out
    }
}

/// `(x − mean) / max(std, 1e-8)` per column of `x: [T, C]`.
pub fn standardize_sample(x: &Tensor<f64>) -> Tensor<f64> {
    let (t, c) = (x.shape()[0], x.shape()[1]);
    let mut out = x.clone();
    for ch in 0..c {
        let col = (0..t).map(|i| x.data()[i * c + ch]);
        let mean = col.clone().sum::<f64>() / t as f64;
        let var = col.map(|v| (v - mean).powi(2)).sum::<f64>() / t as f64;
        let std = var.sqrt().max(STD_FLOOR);
        for i in 0..t {
            let v = &mut out.data_mut()[i * c + ch];
            *v = (*v - mean) / std;
        }
    }
    out
}
