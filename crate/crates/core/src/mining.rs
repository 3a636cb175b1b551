//! Online triplet selection.
//!
//! Batches are drawn from the TRAIN split with an equal number of trials
//! for every label combination; within a batch, every (anchor, positive,
//! negative) triple matching a loss component is used. No hard-triplet
//! selection is performed: the hinge already zeroes satisfied triplets.

use std::collections::BTreeMap;

use crate::dataio::{Dataset, LabelVector, Split};
use crate::losses::{similarity_level, LossComponent, TripletSet};
use crate::rng::SplitMix64;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchSize {
    /// Fixed batch size; must be divisible by the number of combinations.
    Total(usize),
    /// This many trials per combination.
    PerCombination(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchSpec {
    pub size: BatchSize,
    /// Label tuples to sample from; empty means every tuple present in TRAIN.
    pub allowed_combinations: Vec<LabelVector>,
}

impl Default for BatchSpec {
    fn default() -> Self {
        Self {
            size: BatchSize::Total(32),
            allowed_combinations: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub labels: Vec<LabelVector>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Precomputed per-combination TRAIN populations for repeated sampling.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    combos: Vec<(LabelVector, Vec<usize>)>,
    quota: usize,
}

impl BatchSampler {
    pub fn new(dataset: &Dataset, spec: &BatchSpec) -> Result<Self> {
        let mut populations: BTreeMap<LabelVector, Vec<usize>> = BTreeMap::new();
        for i in 0..dataset.len() {
            if dataset.split(i) == Split::Train {
                populations.entry(dataset.label(i).clone()).or_default().push(i);
            }
        }
        let combos: Vec<(LabelVector, Vec<usize>)> = if spec.allowed_combinations.is_empty() {
            populations.into_iter().collect()
        } else {
            let mut allowed = spec.allowed_combinations.clone();
            allowed.sort();
            allowed.dedup();
            allowed
                .into_iter()
                .map(|combo| match populations.remove(&combo) {
                    Some(pop) => Ok((combo, pop)),
                    None => Err(Error::EmptyCombination(combo.0)),
                })
                .collect::<Result<_>>()?
        };
        if combos.is_empty() {
            return Err(Error::DegenerateData("no TRAIN trials to sample from".into()));
        }
        let quota = match spec.size {
            BatchSize::PerCombination(q) => q,
            BatchSize::Total(n) => {
                if n % combos.len() != 0 {
                    return Err(Error::InvalidConfig(format!(
                        "batch_size {n} is not divisible by the {} label combinations",
                        combos.len()
                    )));
                }
                n / combos.len()
            }
        };
        if quota == 0 {
            return Err(Error::InvalidConfig(format!(
                "batch size gives zero trials per combination ({} combinations)",
                combos.len()
            )));
        }
        Ok(Self { combos, quota })
    }

    pub fn batch_size(&self) -> usize {
        self.quota * self.combos.len()
    }

    pub fn combinations(&self) -> impl Iterator<Item = &LabelVector> {
        self.combos.iter().map(|(c, _)| c)
    }

    /// Draws `quota` trials per combination (without replacement when the
    /// population allows it), grouped by combination in ascending order.
    pub fn sample(&self, dataset: &Dataset, rng: &mut SplitMix64) -> Batch {
        let mut indices = Vec::with_capacity(self.batch_size());
        for (_, pop) in &self.combos {
            if pop.len() >= self.quota {
                // Partial Fisher–Yates over a scratch copy.
                let mut scratch = pop.clone();
                for i in 0..self.quota {
                    let j = i + rng.next_index(scratch.len() - i);
                    scratch.swap(i, j);
                }
                indices.extend_from_slice(&scratch[..self.quota]);
            } else {
                indices.extend((0..self.quota).map(|_| pop[rng.next_index(pop.len())]));
            }
        }
        let labels = indices.iter().map(|&i| dataset.label(i).clone()).collect();
        Batch { indices, labels }
    }
}

/// One balanced batch; `rng` is advanced in place.
pub fn sample_batch(dataset: &Dataset, spec: &BatchSpec, rng: &mut SplitMix64) -> Result<Batch> {
    Ok(BatchSampler::new(dataset, spec)?.sample(dataset, rng))
}

/// Every (a, p, n) whose (a, p) level matches the component's positive
/// level and (a, n) level its negative level, ordered by (a, p, n).
pub fn enumerate_component_triplets(
    labels: &[LabelVector],
    component: &LossComponent,
) -> Result<TripletSet> {
    let n = labels.len();
    let mut triples = Vec::new();
    for a in 0..n {
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for j in (0..n).filter(|&j| j != a) {
            let level = similarity_level(&labels[a], &labels[j])?;
            if level.k() != component.positive.k() {
                return Err(Error::LabelCountMismatch {
                    expected: component.positive.k(),
                    actual: level.k(),
                });
            }
            if component.positive.matches(&level) {
                pos.push(j);
            } else if component.negative.matches(&level) {
                neg.push(j);
            }
        }
        for &p in &pos {
            for &q in &neg {
                triples.push((a, p, q));
            }
        }
    }
    Ok(TripletSet::new(triples))
}
