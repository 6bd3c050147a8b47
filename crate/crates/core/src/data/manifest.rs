use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::augment::{apply_augmentation, augmented_id};
use super::sample::{AugmentKind, Provenance, Sample};

/// Hold-out role of an original sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Dataset(format!("unknown split '{s}'"))),
        }
    }
}

/// A manifest entry: an original or an augmented view of one.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Entry {
    /// Index into [`DatasetManifest::originals`].
    pub origin: usize,
    pub provenance: Provenance,
}

/// Original samples plus the entries (originals and augmented views) derived
/// from them. Split and fold assignments live on originals; augmented
/// entries inherit them. Augmented views are materialized on demand.
#[derive(Clone, Debug, Default)]
pub struct DatasetManifest {
    pub originals: Vec<Sample>,
    pub entries: Vec<Entry>,
    pub splits: Vec<Option<Split>>,
    pub folds: Vec<Option<usize>>,
    pub num_folds: Option<usize>,
}

/// Per-original roles for one training run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitPlan {
    pub roles: Vec<Split>,
}

impl SplitPlan {
    pub fn count(&self, split: Split) -> usize {
        self.roles.iter().filter(|&&r| r == split).count()
    }
}

/// Largest-remainder apportionment of `n` items by `ratios`.
/// Ties in the fractional part go to the earlier ratio.
pub fn apportion(n: usize, ratios: &[f64]) -> Vec<usize> {
    let total: f64 = ratios.iter().sum();
    let exact: Vec<f64> = ratios.iter().map(|r| n as f64 * r / total).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| (e + 1e-9).floor() as usize).collect();
    let mut order: Vec<usize> = (0..ratios.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - counts[a] as f64;
        let fb = exact[b] - counts[b] as f64;
        fb.partial_cmp(&fa).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    let assigned: usize = counts.iter().sum();
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Size of the validation set carved from `train` originals (one ninth, rounded).
pub fn validation_carve(train: usize) -> usize {
    ((train as f64) / 9.0).round() as usize
}

impl DatasetManifest {
    /// A manifest whose entries are exactly the originals, with nothing assigned.
    pub fn from_samples(originals: Vec<Sample>) -> Self {
        let n = originals.len();
        DatasetManifest {
            entries: (0..n)
                .map(|origin| Entry {
                    origin,
                    provenance: Provenance::Original,
                })
                .collect(),
            originals,
            splits: vec![None; n],
            folds: vec![None; n],
            num_folds: None,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_originals(&self) -> usize {
        self.originals.len()
    }

    pub fn is_augmented(&self) -> bool {
        self.entries.iter().any(|e| !e.provenance.is_original())
    }

    /// Appends the four augmented views of every original (×5 in total).
    /// Calling it twice is a no-op.
    pub fn augment(&mut self) {
        if self.is_augmented() {
            return;
        }
        let mut entries = Vec::with_capacity(self.originals.len() * 5);
        for origin in 0..self.originals.len() {
            entries.push(Entry {
                origin,
                provenance: Provenance::Original,
            });
            entries.extend(AugmentKind::ALL.iter().map(|&k| Entry {
                origin,
                provenance: Provenance::Augmented(k),
            }));
        }
        self.entries = entries;
    }

    pub fn entry_id(&self, i: usize) -> String {
        let e = self.entries[i];
        let id = &self.originals[e.origin].id;
        match e.provenance {
            Provenance::Original => id.clone(),
            Provenance::Augmented(k) => augmented_id(id, k),
        }
    }

    pub fn entry_split(&self, i: usize) -> Option<Split> {
        self.splits[self.entries[i].origin]
    }

    pub fn entry_fold(&self, i: usize) -> Option<usize> {
        self.folds[self.entries[i].origin]
    }

    /// Builds the sample for entry `i`, applying its augmentation.
    pub fn materialize(&self, i: usize) -> Sample {
        let e = self.entries[i];
        let s = &self.originals[e.origin];
        match e.provenance {
            Provenance::Original => s.clone(),
            Provenance::Augmented(k) => apply_augmentation(s, k),
        }
    }

    /// Common spatial size of all originals.
    pub fn image_size(&self) -> Result<(usize, usize)> {
        let first = self
            .originals
            .first()
            .ok_or_else(|| Error::Dataset("dataset is empty".into()))?;
        let size = (first.height(), first.width());
        if let Some(s) = self.originals.iter().find(|s| (s.height(), s.width()) != size) {
            return Err(Error::Dataset(format!(
                "sample '{}' is {}×{}, expected {}×{}",
                s.id,
                s.height(),
                s.width(),
                size.0,
                size.1
            )));
        }
        Ok(size)
    }

    /// Shuffles originals and assigns train/val/test with the given ratios.
    pub fn split_holdout(&mut self, ratios: [f64; 3], rng: &mut impl Rng) -> Result<()> {
        let n = self.originals.len();
        if n < 10 {
            return Err(Error::Dataset(format!(
                "hold-out split needs at least 10 samples, got {n}"
            )));
        }
        if ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) || ratios.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InvalidParameter(format!("bad split ratios {ratios:?}")));
        }
        let counts = apportion(n, &ratios);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let roles = [Split::Train, Split::Val, Split::Test];
        let mut cursor = 0;
        for (role, count) in roles.iter().zip(counts) {
            for &i in &order[cursor..cursor + count] {
                self.splits[i] = Some(*role);
            }
            cursor += count;
        }
        Ok(())
    }

    /// Shuffles originals and deals them round-robin into `k` folds.
    pub fn split_kfold(&mut self, k: usize, rng: &mut impl Rng) -> Result<()> {
        let n = self.originals.len();
        if k < 2 {
            return Err(Error::InvalidParameter(format!("k-fold needs k >= 2, got {k}")));
        }
        if k > n {
            return Err(Error::Dataset(format!("cannot make {k} folds from {n} samples")));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        for (pos, &i) in order.iter().enumerate() {
            self.folds[i] = Some(pos % k);
        }
        self.num_folds = Some(k);
        Ok(())
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_folds.unwrap_or(0)];
        for f in self.folds.iter().flatten() {
            sizes[*f] += 1;
        }
        sizes
    }

    /// Roles from the hold-out assignment.
    pub fn holdout_plan(&self) -> Result<SplitPlan> {
        let roles = self
            .splits
            .iter()
            .enumerate()
            .map(|(i, s)| s.ok_or_else(|| Error::Dataset(format!("sample '{}' has no split", self.originals[i].id))))
            .collect::<Result<_>>()?;
        Ok(SplitPlan { roles })
    }

    /// Roles for fold `fold`: that fold is test, one ninth of the remaining
    /// originals (chosen with `seed`) is validation, the rest is train.
    pub fn kfold_plan(&self, fold: usize, seed: u64) -> Result<SplitPlan> {
        let k = self
            .num_folds
            .ok_or_else(|| Error::Dataset("manifest has no fold assignment".into()))?;
        if fold >= k {
            return Err(Error::InvalidParameter(format!("fold {fold} out of range for k={k}")));
        }
        let mut roles = Vec::with_capacity(self.folds.len());
        let mut train = Vec::new();
        for (i, f) in self.folds.iter().enumerate() {
            let f = f.ok_or_else(|| Error::Dataset(format!("sample '{}' has no fold", self.originals[i].id)))?;
            if f == fold {
                roles.push(Split::Test);
            } else {
                roles.push(Split::Train);
                train.push(i);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ fold as u64);
        train.shuffle(&mut rng);
        for &i in train.iter().take(validation_carve(train.len())) {
            roles[i] = Split::Val;
        }
        Ok(SplitPlan { roles })
    }

    /// Entry indices playing `split` under `plan`. Validation and test only
    /// ever contain originals.
    pub fn entries_for(&self, plan: &SplitPlan, split: Split) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| plan.roles[e.origin] == split && (split == Split::Train || e.provenance.is_original()))
            .map(|(i, _)| i)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn apportion_matches_hand_counts() {
        assert_eq!(apportion(780, &[0.8, 0.1, 0.1]), vec![624, 78, 78]);
        assert_eq!(apportion(10, &[0.8, 0.1, 0.1]), vec![8, 1, 1]);
        assert_eq!(apportion(11, &[0.8, 0.1, 0.1]), vec![9, 1, 1]);
        assert_eq!(apportion(15, &[0.8, 0.1, 0.1]), vec![12, 2, 1]);
    }

    #[test]
    fn carve_rounds_to_nearest() {
        assert_eq!(validation_carve(9), 1);
        assert_eq!(validation_carve(4), 0);
        assert_eq!(validation_carve(510), 57);
    }
}
