use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::manifest::DatasetManifest;

/// A stacked mini-batch: images `N×3×H×W`, masks `N×1×H×W`.
#[derive(Clone, Debug)]
pub struct Batch {
    pub ids: Vec<String>,
    pub images: Tensor<f32>,
    pub masks: Tensor<f32>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Iterator over mini-batches of manifest entries. Augmented entries are
/// materialized lazily, one batch at a time.
pub struct BatchIter<'a> {
    manifest: &'a DatasetManifest,
    order: Vec<usize>,
    batch_size: usize,
    cursor: usize,
}

/// Batches `entries` of `m` in order, or in a fresh random order when
/// `shuffle` is set. The last batch may be smaller than `batch_size`.
pub fn batch_iter<'a, R: Rng + ?Sized>(
    m: &'a DatasetManifest,
    entries: &[usize],
    batch_size: usize,
    shuffle: bool,
    rng: &mut R,
) -> Result<BatchIter<'a>> {
    if batch_size == 0 {
        return Err(Error::InvalidParameter("batch size must be at least 1".into()));
    }
    if entries.is_empty() {
        return Err(Error::Dataset("cannot iterate over an empty split".into()));
    }
    if let Some(&bad) = entries.iter().find(|&&i| i >= m.len()) {
        return Err(Error::InvalidParameter(format!("entry {bad} out of range")));
    }
    let mut order = entries.to_vec();
    if shuffle {
        order.shuffle(rng);
    }
    Ok(BatchIter {
        manifest: m,
        order,
        batch_size,
        cursor: 0,
    })
}

impl BatchIter<'_> {
    pub fn num_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }
}

impl Iterator for BatchIter<'_> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let idx = &self.order[self.cursor..end];
        self.cursor = end;
        let samples: Vec<_> = idx.iter().map(|&i| self.manifest.materialize(i)).collect();
        let ids = idx.iter().map(|&i| self.manifest.entry_id(i)).collect();
        let images: Vec<_> = samples.iter().map(|s| s.image.clone()).collect();
        let masks: Vec<_> = samples.iter().map(|s| s.mask.clone()).collect();
        Some(Tensor::stack_batch(&images).and_then(|images| {
            Ok(Batch {
                ids,
                images,
                masks: Tensor::stack_batch(&masks)?,
            })
        }))
    }
}
