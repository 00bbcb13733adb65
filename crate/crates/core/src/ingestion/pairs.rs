//! Labeled pair construction for contrastive training.
//!
//! Label convention follows the contrastive loss: `0` for two sequences of the
//! same subject, `1` for different subjects.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::SequenceTensor;

#[derive(Debug, Error, PartialEq)]
pub enum PairError {
    #[error("requested {requested} positive pairs but only {available} distinct same-subject pairs exist")]
    InsufficientPositives { requested: usize, available: usize },
    #[error("requested {requested} negative pairs but only {available} distinct cross-subject pairs exist")]
    InsufficientNegatives { requested: usize, available: usize },
    #[error("label {label} contradicts subjects `{a}` / `{b}`")]
    LabelMismatch { a: String, b: String, label: u8 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequencePair {
    pub a: SequenceTensor,
    pub b: SequenceTensor,
    label: u8,
}

impl SequencePair {
    /// Builds a pair, deriving the label from the subject ids.
    pub fn new(a: SequenceTensor, b: SequenceTensor) -> Self {
        let label = u8::from(a.subject_id() != b.subject_id());
        Self { a, b, label }
    }

    /// Builds a pair with an explicit label, checked against the subject ids.
    pub fn with_label(a: SequenceTensor, b: SequenceTensor, label: u8) -> Result<Self, PairError> {
        let pair = Self::new(a, b);
        if pair.label != label {
            return Err(PairError::LabelMismatch {
                a: pair.a.subject_id().to_string(),
                b: pair.b.subject_id().to_string(),
                label,
            });
        }
        Ok(pair)
    }

    /// `0` same subject, `1` different subjects.
    pub fn label(&self) -> u8 {
        self.label
    }

    pub fn is_positive(&self) -> bool {
        self.label == 0
    }
}

/// Requested numbers of same-subject and cross-subject pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRatio {
    pub positives: usize,
    pub negatives: usize,
}

impl PairRatio {
    pub fn new(positives: usize, negatives: usize) -> Self {
        Self {
            positives,
            negatives,
        }
    }

    /// One positive per training subject, negatives filling up to `total`
    /// (400 in the CASIA-B and SZU protocols).
    pub fn one_positive_per_subject(subjects: usize, total: usize) -> Self {
        Self::new(subjects, total.saturating_sub(subjects))
    }

    /// `total` pairs split `pos : neg`, e.g. `1:1` or `1:2`. Positives are rounded
    /// to nearest, negatives take the remainder.
    pub fn from_ratio(total: usize, pos: usize, neg: usize) -> Self {
        let positives = ((total * pos) as f64 / (pos + neg) as f64).round() as usize;
        Self::new(positives, total - positives)
    }

    pub fn total(&self) -> usize {
        self.positives + self.negatives
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSet {
    pub pairs: Vec<SequencePair>,
    pub seed: u64,
    pub ratio: PairRatio,
}

impl PairSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn count_positive(&self) -> usize {
        self.pairs.iter().filter(|p| p.is_positive()).count()
    }
}

/// Samples `n_positive` same-subject and `n_negative` cross-subject pairs
/// without replacement.
///
/// Positives are drawn round-robin over subjects (in a seeded random order),
/// each draw taking a uniformly random unused pair of that subject's sequences,
/// so `n_positive == #subjects` yields exactly one positive per subject.
/// Negatives pick an unordered subject pair uniformly, then one sequence of
/// each uniformly. The final list is shuffled. Output depends only on the
/// inputs and `seed`.
pub fn build_pairs(
    sequences: &[SequenceTensor],
    n_positive: usize,
    n_negative: usize,
    seed: u64,
) -> Result<PairSet, PairError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Group by subject, BTreeMap for a stable subject order.
    let mut by_subject: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in sequences.iter().enumerate() {
        by_subject.entry(s.subject_id()).or_default().push(i);
    }
    let groups: Vec<&Vec<usize>> = by_subject.values().collect();

    let available_pos: usize = groups.iter().map(|g| g.len() * (g.len().saturating_sub(1)) / 2).sum();
    if n_positive > available_pos {
        return Err(PairError::InsufficientPositives {
            requested: n_positive,
            available: available_pos,
        });
    }
    let total: usize = sequences.len();
    let available_neg: usize = groups
        .iter()
        .map(|g| g.len() * (total - g.len()))
        .sum::<usize>()
        / 2;
    if n_negative > available_neg {
        return Err(PairError::InsufficientNegatives {
            requested: n_negative,
            available: available_neg,
        });
    }

    let mut index_pairs: Vec<(usize, usize)> = Vec::with_capacity(n_positive + n_negative);

    // Positives: each eligible subject gets a shuffled queue of its pairs.
    let mut queues: Vec<Vec<(usize, usize)>> = groups
        .iter()
        .filter(|g| g.len() >= 2)
        .map(|g| {
            let mut q = Vec::with_capacity(g.len() * (g.len() - 1) / 2);
            for i in 0..g.len() {
                for j in i + 1..g.len() {
                    q.push((g[i], g[j]));
                }
            }
            q.shuffle(&mut rng);
            q
        })
        .collect();
    queues.shuffle(&mut rng);
    'outer: while index_pairs.len() < n_positive {
        for q in queues.iter_mut() {
            if index_pairs.len() == n_positive {
                break 'outer;
            }
            if let Some(p) = q.pop() {
                index_pairs.push(p);
            }
        }
    }

    // Negatives: rejection sampling over (subject pair, sequence, sequence).
    let mut used: HashSet<(usize, usize)> = HashSet::with_capacity(n_negative);
    let n_groups = groups.len();
    while used.len() < n_negative {
        let s = rng.random_range(0..n_groups);
        let mut t = rng.random_range(0..n_groups - 1);
        if t >= s {
            t += 1;
        }
        let a = groups[s][rng.random_range(0..groups[s].len())];
        let b = groups[t][rng.random_range(0..groups[t].len())];
        if used.insert((a.min(b), a.max(b))) {
            index_pairs.push((a, b));
        }
    }

    index_pairs.shuffle(&mut rng);
    let pairs = index_pairs
        .into_iter()
        .map(|(a, b)| SequencePair::new(sequences[a].clone(), sequences[b].clone()))
        .collect();
    Ok(PairSet {
        pairs,
        seed,
        ratio: PairRatio::new(n_positive, n_negative),
    })
}
