//! K-shot training subsets drawn from a labelled pool, against a test set
//! that never changes with K.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{EnvError, Sample};

pub const ALLOWED_SHOTS: [usize; 3] = [10, 20, 256];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FewShotSampler {
    pub shots_per_class: usize,
    pub seed: u64,
}

impl FewShotSampler {
    pub fn new(shots_per_class: usize, seed: u64) -> Result<Self, EnvError> {
        let s = Self { shots_per_class, seed };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if ALLOWED_SHOTS.contains(&self.shots_per_class) {
            Ok(())
        } else {
            Err(EnvError::BadShots(self.shots_per_class))
        }
    }
}

/// A pool to sample training shots from plus a fixed test set.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub classes: usize,
    pub pool: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Takes `min(shots, available)` pool samples per class. Each class is
/// shuffled with its own stream of the master seed, and the first `shots`
/// are kept, so a smaller shot count always selects a subset of a larger
/// one. Train samples come out grouped by class, in shuffled order.
pub fn few_shot_split(dataset: &LabeledDataset, sampler: &FewShotSampler) -> Result<(Vec<Sample>, Vec<Sample>), EnvError> {
    sampler.validate()?;
    let test_ids: BTreeSet<&str> = dataset.test.iter().map(|s| s.id.as_str()).collect();
    if let Some(s) = dataset.pool.iter().find(|s| test_ids.contains(s.id.as_str())) {
        return Err(EnvError::Overlap(s.id.clone()));
    }
    let mut train = Vec::new();
    for c in 0..dataset.classes {
        let mut members: Vec<&Sample> = dataset.pool.iter().filter(|s| s.class == c).collect();
        if members.is_empty() {
            return Err(EnvError::EmptyClass(c));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(sampler.seed);
        rng.set_stream(c as u64);
        members.shuffle(&mut rng);
        train.extend(members.into_iter().take(sampler.shots_per_class).cloned());
    }
    Ok((train, dataset.test.clone()))
}
