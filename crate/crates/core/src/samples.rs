use dceeg_autodiff::{Real, Tensor};
use dceeg_signal::EpochDataset;

use crate::error::{CoreError, Result};

/// Epochs as one flat `[N, E, L]` buffer plus class indices.
#[derive(Clone, Debug, PartialEq)]
pub struct Samples<T> {
    pub data: Vec<T>,
    pub labels: Vec<usize>,
    pub electrodes: usize,
    pub window: usize,
}

impl<T: Real> Samples<T> {
    pub fn new(data: Vec<T>, labels: Vec<usize>, electrodes: usize, window: usize) -> Result<Self> {
        if data.len() != labels.len() * electrodes * window {
            return Err(CoreError::Mismatch(format!(
                "{} values cannot hold {} epochs of {electrodes}×{window}",
                data.len(),
                labels.len()
            )));
        }
        Ok(Samples {
            data,
            labels,
            electrodes,
            window,
        })
    }

    pub fn from_dataset(ds: &EpochDataset) -> Result<Self> {
        let labels = ds.labels();
        let data = ds
            .epochs
            .iter()
            .flat_map(|e| e.data.iter().map(|&v| T::of(v)))
            .collect();
        Self::new(data, labels, ds.channels.len(), ds.window_samples)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn stride(&self) -> usize {
        self.electrodes * self.window
    }

    pub fn epoch(&self, i: usize) -> &[T] {
        &self.data[i * self.stride()..(i + 1) * self.stride()]
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        let data = idx
            .iter()
            .flat_map(|&i| self.epoch(i).iter().copied())
            .collect();
        Samples {
            data,
            labels: self.batch_labels(idx),
            electrodes: self.electrodes,
            window: self.window,
        }
    }

    /// `[b, 1, E, L]` input tensor for the epochs at `idx`.
    pub fn batch(&self, idx: &[usize]) -> Tensor<T> {
        let data = idx
            .iter()
            .flat_map(|&i| self.epoch(i).iter().copied())
            .collect();
        Tensor::new(vec![idx.len(), 1, self.electrodes, self.window], data).expect("batch shape")
    }

    pub fn batch_labels(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.labels[i]).collect()
    }
}

/// Consecutive index chunks of at most `size`.
pub fn chunks(order: &[usize], size: usize) -> impl Iterator<Item = &[usize]> {
    order.chunks(size.max(1))
}
