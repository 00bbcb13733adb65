//! Rank-1 identification, pair verification, distance matrices and reports.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingestion::SequencePair;
use crate::model::{Condition, Provenance};
use crate::network::{contrastive_loss, pair_distance, similarity_score, Embedding, NetworkError, SiameseModel};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty gallery")]
    EmptyGallery,
    #[error("no probes")]
    EmptyProbes,
    #[error("no pairs")]
    EmptyPairs,
    #[error("embedding lengths differ")]
    RaggedEmbeddings,
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// An embedding with the record it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEmbedding {
    pub provenance: Provenance,
    pub embedding: Embedding,
}

impl LabeledEmbedding {
    pub fn subject_id(&self) -> &str {
        &self.provenance.subject_id
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GalleryIndex {
    entries: Vec<(String, Embedding)>,
}

impl GalleryIndex {
    pub fn new(entries: Vec<(String, Embedding)>) -> Result<Self, EvalError> {
        let first = entries.first().ok_or(EvalError::EmptyGallery)?;
        if entries.iter().any(|(_, e)| e.len() != first.1.len()) {
            return Err(EvalError::RaggedEmbeddings);
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[(String, Embedding)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// First record of each subject becomes the gallery, everything else a probe.
pub fn split_gallery(items: &[LabeledEmbedding]) -> (Vec<LabeledEmbedding>, Vec<LabeledEmbedding>) {
    let mut seen = std::collections::HashSet::new();
    let mut gallery = Vec::new();
    let mut probes = Vec::new();
    for it in items {
        if seen.insert(it.subject_id().to_string()) {
            gallery.push(it.clone());
        } else {
            probes.push(it.clone());
        }
    }
    (gallery, probes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rank1Result {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    /// Gallery position chosen for each probe.
    pub matches: Vec<usize>,
}

/// Nearest gallery entry per probe; ties go to the lowest gallery position.
pub fn rank1_identify(gallery: &GalleryIndex, probes: &[(String, Embedding)]) -> Result<Rank1Result, EvalError> {
    if probes.is_empty() {
        return Err(EvalError::EmptyProbes);
    }
    let mut matches = Vec::with_capacity(probes.len());
    let mut correct = 0;
    for (subject, e) in probes {
        let mut best = (f64::INFINITY, 0);
        for (i, (_, g)) in gallery.entries.iter().enumerate() {
            let d = pair_distance(e, g).map_err(|_| EvalError::RaggedEmbeddings)?;
            if d < best.0 {
                best = (d, i);
            }
        }
        if gallery.entries[best.1].0 == *subject {
            correct += 1;
        }
        matches.push(best.1);
    }
    Ok(Rank1Result {
        correct,
        total: probes.len(),
        accuracy: 100.0 * correct as f64 / probes.len() as f64,
        matches,
    })
}

/// How a pair is declared "same subject".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "threshold")]
pub enum ThresholdPolicy {
    /// Similar iff `D < τ`.
    Distance(f64),
    /// Similar iff the head scores above 0.5.
    Head,
}

impl ThresholdPolicy {
    /// `τ = m/2`.
    pub fn default_for_margin(margin: f64) -> Self {
        ThresholdPolicy::Distance(margin / 2.0)
    }

    fn predicts_similar(&self, model: &SiameseModel, a: &Embedding, b: &Embedding) -> Result<bool, EvalError> {
        Ok(match self {
            ThresholdPolicy::Distance(tau) => pair_distance(a, b)? < *tau,
            ThresholdPolicy::Head => similarity_score(&model.head, a, b)? > 0.5,
        })
    }
}

/// Percentage of pairs whose prediction matches the label.
pub fn pair_verification_accuracy(
    model: &SiameseModel,
    pairs: &[SequencePair],
    policy: ThresholdPolicy,
) -> Result<f64, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyPairs);
    }
    let mut correct = 0;
    for p in pairs {
        let a = model.encode(&p.a)?;
        let b = model.encode(&p.b)?;
        if policy.predicts_similar(model, &a, &b)? == p.is_positive() {
            correct += 1;
        }
    }
    Ok(100.0 * correct as f64 / pairs.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub ids: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl DistanceMatrix {
    /// `id` header row, then one row per id; shortest round-trip decimals.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id");
        for id in &self.ids {
            out.push(',');
            out.push_str(id);
        }
        out.push('\n');
        for (id, row) in self.ids.iter().zip(&self.values) {
            out.push_str(id);
            for v in row {
                out.push_str(&format!(",{v:?}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Pairwise Euclidean distances. Each entry is computed once and mirrored.
pub fn distance_matrix(embeddings: &[(String, Embedding)]) -> Result<DistanceMatrix, EvalError> {
    let n = embeddings.len();
    let mut values = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = pair_distance(&embeddings[i].1, &embeddings[j].1).map_err(|_| EvalError::RaggedEmbeddings)?;
            values[i][j] = d;
            values[j][i] = d;
        }
    }
    Ok(DistanceMatrix {
        ids: embeddings.iter().map(|(id, _)| id.clone()).collect(),
        values,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownRow {
    pub view_deg: f64,
    pub condition: Condition,
    pub probes: usize,
    pub correct: usize,
    pub rank1_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCounts {
    pub subjects: usize,
    pub gallery: usize,
    pub probes: usize,
    pub correct: usize,
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rank1_accuracy: f64,
    pub pair_accuracy: f64,
    pub mean_contrastive_loss: f64,
    pub threshold: ThresholdPolicy,
    pub landmarks: String,
    pub feature_dim: usize,
    pub counts: EvalCounts,
    pub breakdown: Vec<BreakdownRow>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn breakdown_csv(&self) -> String {
        let mut out = String::from("view_deg,condition,probes,correct,rank1_accuracy\n");
        for r in &self.breakdown {
            let cond = serde_json::to_value(&r.condition).expect("condition serializes");
            out.push_str(&format!(
                "{:?},{},{},{},{:?}\n",
                r.view_deg,
                cond.as_str().unwrap_or_default(),
                r.probes,
                r.correct,
                r.rank1_accuracy
            ));
        }
        out
    }
}

/// Builds the full report from labeled embeddings. Gallery is the first
/// record per subject. Pair metrics run over every probe-gallery pair.
pub fn evaluate_embeddings(
    model: &SiameseModel,
    items: &[LabeledEmbedding],
    policy: ThresholdPolicy,
    landmarks: String,
    feature_dim: usize,
) -> Result<EvalReport, EvalError> {
    let (gallery, probes) = split_gallery(items);
    let index = GalleryIndex::new(
        gallery
            .iter()
            .map(|g| (g.subject_id().to_string(), g.embedding.clone()))
            .collect(),
    )?;
    let probe_list: Vec<(String, Embedding)> = probes
        .iter()
        .map(|p| (p.subject_id().to_string(), p.embedding.clone()))
        .collect();
    let rank1 = rank1_identify(&index, &probe_list)?;

    let mut loss = 0.0;
    let mut right = 0;
    let mut n_pairs = 0;
    for p in &probes {
        for g in &gallery {
            let label = u8::from(p.subject_id() != g.subject_id());
            let d = pair_distance(&p.embedding, &g.embedding)?;
            loss += contrastive_loss(d, label, model.margin);
            if policy.predicts_similar(model, &p.embedding, &g.embedding)? == (label == 0) {
                right += 1;
            }
            n_pairs += 1;
        }
    }

    let mut groups: BTreeMap<(u64, String), (f64, Condition, usize, usize)> = BTreeMap::new();
    for (p, &m) in probes.iter().zip(&rank1.matches) {
        let cond = serde_json::to_string(&p.provenance.condition).expect("condition serializes");
        let key = (p.provenance.view_deg.to_bits(), cond);
        let e = groups
            .entry(key)
            .or_insert((p.provenance.view_deg, p.provenance.condition.clone(), 0, 0));
        e.2 += 1;
        if index.entries()[m].0 == p.subject_id() {
            e.3 += 1;
        }
    }
    let mut breakdown: Vec<BreakdownRow> = groups
        .into_values()
        .map(|(view_deg, condition, probes, correct)| BreakdownRow {
            view_deg,
            condition,
            probes,
            correct,
            rank1_accuracy: 100.0 * correct as f64 / probes as f64,
        })
        .collect();
    breakdown.sort_by(|a, b| a.view_deg.total_cmp(&b.view_deg));

    Ok(EvalReport {
        rank1_accuracy: rank1.accuracy,
        pair_accuracy: 100.0 * right as f64 / n_pairs as f64,
        mean_contrastive_loss: loss / n_pairs as f64,
        threshold: policy,
        landmarks,
        feature_dim,
        counts: EvalCounts {
            subjects: gallery.len(),
            gallery: gallery.len(),
            probes: probes.len(),
            correct: rank1.correct,
            pairs: n_pairs,
        },
        breakdown,
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<(), EvalError> {
    let io = |source| EvalError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut f = std::fs::File::create(path).map_err(io)?;
    f.write_all(text.as_bytes()).map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn emb(v: &[f64]) -> Embedding {
        Embedding(v.to_vec())
    }

    #[test]
    fn three_of_four_is_seventy_five() {
        let gallery = GalleryIndex::new(vec![
            ("a".into(), emb(&[0.0, 0.0])),
            ("b".into(), emb(&[10.0, 0.0])),
            ("c".into(), emb(&[0.0, 10.0])),
        ])
        .unwrap();
        let probes = vec![
            ("a".into(), emb(&[1.0, 0.0])),
            ("b".into(), emb(&[9.0, 1.0])),
            ("c".into(), emb(&[0.5, 9.0])),
            ("a".into(), emb(&[9.5, 0.2])),
        ];
        let r = rank1_identify(&gallery, &probes).unwrap();
        assert_eq!(r.accuracy, 75.0);
        assert_eq!(r.matches, vec![0, 1, 2, 1]);
    }

    #[test]
    fn brute_force_assignments() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut rand_emb = || emb(&(0..4).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>());
        let gallery: Vec<(String, Embedding)> = ["x", "y", "z"].iter().map(|s| (s.to_string(), rand_emb())).collect();
        let probes: Vec<(String, Embedding)> = (0..12).map(|i| (["x", "y", "z"][i % 3].to_string(), rand_emb())).collect();
        let r = rank1_identify(&GalleryIndex::new(gallery.clone()).unwrap(), &probes).unwrap();
        for (k, (_, p)) in probes.iter().enumerate() {
            let table: Vec<f64> = gallery
                .iter()
                .map(|(_, g)| p.0.iter().zip(&g.0).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
                .collect();
            let best = (0..3).min_by(|&i, &j| table[i].partial_cmp(&table[j]).unwrap()).unwrap();
            assert_eq!(r.matches[k], best);
        }
    }

    #[test]
    fn ties_pick_lowest_gallery_position() {
        let gallery =
            GalleryIndex::new(vec![("a".into(), emb(&[1.0])), ("b".into(), emb(&[-1.0]))]).unwrap();
        let r = rank1_identify(&gallery, &[("b".into(), emb(&[0.0]))]).unwrap();
        assert_eq!(r.matches, vec![0]);
        assert_eq!(r.accuracy, 0.0);
    }

    #[test]
    fn exact_twin_always_found() {
        let gallery = GalleryIndex::new(vec![("a".into(), emb(&[1.0, 2.0])), ("b".into(), emb(&[1.0, 2.1]))]).unwrap();
        let r = rank1_identify(&gallery, &[("b".into(), emb(&[1.0, 2.1]))]).unwrap();
        assert_eq!(r.accuracy, 100.0);
    }

    #[test]
    fn single_subject_gallery_counts_its_probes() {
        let gallery = GalleryIndex::new(vec![("a".into(), emb(&[0.0]))]).unwrap();
        let probes = vec![("a".into(), emb(&[1.0])), ("b".into(), emb(&[2.0])), ("a".into(), emb(&[3.0]))];
        let r = rank1_identify(&gallery, &probes).unwrap();
        assert!((r.accuracy - 100.0 * 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_inputs_rejected() {
        assert!(matches!(GalleryIndex::new(vec![]), Err(EvalError::EmptyGallery)));
        let g = GalleryIndex::new(vec![("a".into(), emb(&[0.0]))]).unwrap();
        assert!(matches!(rank1_identify(&g, &[]), Err(EvalError::EmptyProbes)));
    }

    #[test]
    fn distance_matrix_shape_and_symmetry() {
        let single = distance_matrix(&[("p1".into(), emb(&[3.0, 4.0]))]).unwrap();
        assert_eq!(single.values, vec![vec![0.0]]);

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let items: Vec<(String, Embedding)> = (0..9)
            .map(|i| (format!("p{i}"), emb(&(0..5).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<_>>())))
            .collect();
        let m = distance_matrix(&items).unwrap();
        for i in 0..9 {
            assert_eq!(m.values[i][i], 0.0);
            for j in 0..9 {
                assert_eq!(m.values[i][j], m.values[j][i]);
                for k in 0..9 {
                    assert!(m.values[i][k] <= m.values[i][j] + m.values[j][k] + 1e-12);
                }
            }
        }
        let csv = m.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "id,p0,p1,p2,p3,p4,p5,p6,p7,p8");
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row[0], "p0");
        assert_eq!(row[2].parse::<f64>().unwrap(), m.values[0][1]);
    }

    #[test]
    fn orthogonal_map_preserves_assignments() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut rand_emb = || emb(&(0..2).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>());
        let gallery: Vec<(String, Embedding)> = (0..4).map(|i| (format!("s{i}"), rand_emb())).collect();
        let probes: Vec<(String, Embedding)> = (0..20).map(|i| (format!("s{}", i % 4), rand_emb())).collect();
        let (s, c) = 0.7f64.sin_cos();
        let rot = |e: &Embedding| emb(&[c * e.0[0] - s * e.0[1], s * e.0[0] + c * e.0[1]]);
        let r1 = rank1_identify(&GalleryIndex::new(gallery.clone()).unwrap(), &probes).unwrap();
        let r2 = rank1_identify(
            &GalleryIndex::new(gallery.iter().map(|(i, e)| (i.clone(), rot(e))).collect()).unwrap(),
            &probes.iter().map(|(i, e)| (i.clone(), rot(e))).collect::<Vec<_>>(),
        )
        .unwrap();
        assert_eq!(r1.matches, r2.matches);
    }
}
