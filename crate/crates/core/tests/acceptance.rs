//! Acceptance suite. Each test prints one PASS/FAIL line to stderr (written
//! directly, so it shows even when libtest captures output) and then asserts.
//!
//! cargo test --release --test acceptance

use std::io::Write;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use gaitkit::evaluation::{rank1_identify, EvalReport, GalleryIndex, ThresholdPolicy};
use gaitkit::ingestion::{build_pairs, PairSet, SequencePair};
use gaitkit::model::{Condition, LandmarkSubset, Provenance, RawTrajectory, SequenceTensor};
use gaitkit::network::{contrastive_loss, pair_loss, Activation, CellKind, Embedding, EncoderConfig, EncoderParams, SiameseModel};
use gaitkit::pipeline::{embed, evaluate, fit, fit_preprocessing, PipelineError, RunConfig};
use gaitkit::procrustes::{apply_transform, gpa_fit, opa_fit, GpaOptions, ShapeConfig, SimilarityTransform};
use gaitkit::synthgen::{generate_cohort, SynthConfig};
use gaitkit::training::{train_model, Checkpoint, TrainConfig};
use nalgebra::{DMatrix, DVector, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;

const SEPARATION: f64 = 0.25;
const SEED: u64 = 7;
const TRAIN_SUBJECTS: usize = 12;
const PER_SUBJECT: usize = 8;

fn report(name: &str, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "[{tag}] {name}: {detail}");
    assert!(pass, "{name}: {detail}");
}

fn random_rotation(rng: &mut impl Rng) -> DMatrix<f64> {
    let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let q = UnitQuaternion::from_scaled_axis(axis.normalize() * rng.random_range(-3.1..3.1));
    DMatrix::from_iterator(3, 3, q.to_rotation_matrix().matrix().iter().copied())
}

fn random_similarity(rng: &mut impl Rng) -> SimilarityTransform {
    let r = random_rotation(rng);
    SimilarityTransform::new(rng.random_range(0.2..5.0), r, DVector::from_fn(3, |_, _| rng.random_range(-10.0..10.0)))
        .unwrap()
}

fn random_shape(rng: &mut impl Rng, k: usize) -> ShapeConfig {
    ShapeConfig::new(DMatrix::from_fn(k, 3, |_, _| rng.random_range(-1.0..1.0))).unwrap()
}

fn cohort(seed: u64) -> Vec<RawTrajectory> {
    generate_cohort(&SynthConfig {
        subjects: 20,
        trajectories_per_subject: PER_SUBJECT,
        separation: SEPARATION,
        seed,
        ..Default::default()
    })
    .unwrap()
}

fn run_config(landmarks: &str) -> RunConfig {
    let mut cfg = RunConfig {
        landmarks: landmarks.parse().unwrap(),
        positive_pairs: 200,
        negative_pairs: 200,
        ..Default::default()
    };
    cfg.train.seed = SEED;
    cfg
}

struct Run {
    test: Vec<RawTrajectory>,
    checkpoint: Checkpoint,
    report: EvalReport,
    train_time: Duration,
    total_time: Duration,
}

fn full_run(landmarks: &str) -> Run {
    let start = Instant::now();
    let data = cohort(SEED);
    let (train, test) = data.split_at(TRAIN_SUBJECTS * PER_SUBJECT);
    let cfg = run_config(landmarks);
    let t0 = Instant::now();
    let checkpoint = fit(train, &cfg).unwrap();
    let train_time = t0.elapsed();
    let report = evaluate(&checkpoint.params, test, cfg.policy(checkpoint.params.model.margin)).unwrap();
    Run {
        test: test.to_vec(),
        checkpoint,
        report,
        train_time,
        total_time: start.elapsed(),
    }
}

fn baseline() -> &'static Run {
    static RUN: OnceLock<Run> = OnceLock::new();
    RUN.get_or_init(|| full_run("0-32"))
}

/// Nearest neighbour on the preprocessed, untrained features.
fn raw_feature_rank1(run: &Run) -> f64 {
    let pre = &run.checkpoint.params.preprocessing;
    let feats: Vec<(String, Vec<f64>)> = run
        .test
        .iter()
        .map(|t| (t.subject_id.clone(), pre.tensor(t).unwrap().values().to_vec()))
        .collect();
    let mut gallery: Vec<&(String, Vec<f64>)> = Vec::new();
    let mut probes = Vec::new();
    for f in &feats {
        if gallery.iter().any(|g| g.0 == f.0) {
            probes.push(f);
        } else {
            gallery.push(f);
        }
    }
    let correct = probes
        .iter()
        .filter(|p| {
            let best = gallery
                .iter()
                .map(|g| g.1.iter().zip(&p.1).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
                .enumerate()
                .fold((0, f64::INFINITY), |acc, (i, d)| if d < acc.1 { (i, d) } else { acc });
            gallery[best.0].0 == p.0
        })
        .count();
    100.0 * correct as f64 / probes.len() as f64
}

#[test]
fn gradient_check_all_cells() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut tensor = |subject: &str| {
        SequenceTensor::new(
            6,
            6,
            (0..36).map(|_| rng.random_range(-1.0..1.0)).collect(),
            Provenance {
                subject_id: subject.into(),
                view_deg: 0.0,
                condition: Condition::Nm,
            },
        )
        .unwrap()
    };
    let a = tensor("a");
    let pairs = [SequencePair::new(a.clone(), tensor("a")), SequencePair::new(a, tensor("b"))];
    let mut details = Vec::new();
    let mut all_ok = true;
    for kind in [CellKind::Gru, CellKind::Lstm, CellKind::Rnn] {
        let mut rng = ChaCha8Rng::seed_from_u64(102);
        let cfg = EncoderConfig {
            cell: kind,
            activation: Activation::Tanh,
            input_dim: 6,
            hidden_dim: 4,
            layers: 2,
            bidirectional: true,
        };
        let model = SiameseModel::new(EncoderParams::random(cfg, &mut rng), 1.0);
        let n = model.encoder.num_parameters();
        let mut worst: f64 = 0.0;
        let mut failures = 0;
        for p in &pairs {
            let (w, f) = common::check(&model, p);
            worst = worst.max(w);
            failures += f;
        }
        all_ok &= failures == 0;
        details.push(format!("{kind:?} {n} params, {failures} off, worst rel {worst:.1e}"));
    }
    let elapsed = start.elapsed();
    report(
        "gradient check (H=4, N=6, F=6, 2-layer bidirectional)",
        all_ok && elapsed < Duration::from_secs(60),
        &format!("{}; {:.1?}", details.join("; "), elapsed),
    );
}

#[test]
fn opa_recovers_similarity_transforms() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (mut rot_err, mut scale_err, mut resid): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..100 {
        let x = random_shape(&mut rng, 33);
        let t = random_similarity(&mut rng);
        let y = apply_transform(&x, &t).unwrap();
        let (fitted, r) = opa_fit(&x, &y, true).unwrap();
        rot_err = rot_err.max((fitted.rotation() - t.rotation()).norm());
        scale_err = scale_err.max((fitted.scale() - t.scale()).abs() / t.scale());
        resid = resid.max(r);
    }
    let elapsed = start.elapsed();
    report(
        "OPA recovery (100 shapes, k=33, d=3)",
        rot_err < 1e-9 && scale_err < 1e-9 && resid < 1e-9 && elapsed < Duration::from_secs(10),
        &format!("rotation {rot_err:.1e}, scale {scale_err:.1e}, residual {resid:.1e}; {elapsed:.1?}"),
    );
}

#[test]
fn gpa_monotone_and_converges() {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut monotone = true;
    for trial in 0..10 {
        let base = random_shape(&mut rng, 33);
        let configs: Vec<ShapeConfig> = (0..20)
            .map(|_| {
                let noisy = ShapeConfig::new(base.points().map(|v| v + 0.05 * (trial as f64 + 1.0) * rng.random_range(-1.0..1.0)))
                    .unwrap();
                apply_transform(&noisy, &random_similarity(&mut rng)).unwrap()
            })
            .collect();
        let g = gpa_fit(&configs, &GpaOptions::default()).unwrap();
        monotone &= g.history.windows(2).all(|w| w[1] <= w[0]);
    }

    let base = random_shape(&mut rng, 33);
    let copies: Vec<ShapeConfig> =
        (0..50).map(|_| apply_transform(&base, &random_similarity(&mut rng)).unwrap()).collect();
    let opts = GpaOptions {
        tol: 0.0,
        ..GpaOptions::default()
    };
    let g = gpa_fit(&copies, &opts).unwrap();
    let reached = g.history.iter().position(|&v| v < 1e-12).map(|i| i + 1);
    report(
        "GPA (monotone history; 50 noise-free copies)",
        monotone && reached.is_some_and(|i| i <= 100),
        &format!("monotone on 10 noisy sets: {monotone}; G < 1e-12 at iteration {reached:?}, final G {:.1e}", g.objective()),
    );
}

#[test]
fn exact_reference_values() {
    let a = contrastive_loss(0.5, 0, 1.0);
    let b = contrastive_loss(0.0, 1, 1.0);
    let e = |v: f64| Embedding(vec![v]);
    let gallery = GalleryIndex::new(vec![("s1".into(), e(0.0)), ("s2".into(), e(10.0)), ("s3".into(), e(20.0))]).unwrap();
    let probes = [("s1".into(), e(1.0)), ("s2".into(), e(11.0)), ("s3".into(), e(19.0)), ("s1".into(), e(18.0))];
    let r = rank1_identify(&gallery, &probes).unwrap();
    report(
        "exact values",
        a == 0.25 && b == 1.0 && r.accuracy == 75.0,
        &format!("L(0.5,0,1) = {a}, L(0,1,1) = {b}, rank-1 3 of 4 = {}", r.accuracy),
    );
}

#[test]
fn overfits_ten_pairs() {
    let start = Instant::now();
    let data = generate_cohort(&SynthConfig {
        subjects: 5,
        trajectories_per_subject: 4,
        separation: SEPARATION,
        seed: 11,
        ..Default::default()
    })
    .unwrap();
    let cfg = run_config("0-32");
    let (_, tensors) = fit_preprocessing(&data, &cfg.landmarks, &cfg.segmentation, &cfg.align).unwrap();
    let pairs: PairSet = build_pairs(&tensors, 5, 5, 11).unwrap();
    assert_eq!(pairs.len(), 10);
    let train = TrainConfig {
        hidden_dim: 8,
        epochs: 200,
        learning_rate: 1e-2,
        seed: 11,
        ..Default::default()
    };
    let trained = train_model(&pairs, &train).unwrap();
    let mean = pairs.pairs.iter().map(|p| pair_loss(&trained.model, p).unwrap()).sum::<f64>() / pairs.len() as f64;
    let elapsed = start.elapsed();
    report(
        "overfit (10 pairs, H=8, 200 epochs)",
        mean < 0.01 && elapsed < Duration::from_secs(120),
        &format!("mean contrastive loss {mean:.2e}; {elapsed:.1?}"),
    );
}

#[test]
fn end_to_end_identification() {
    let run = baseline();
    let oracle = raw_feature_rank1(run);
    let r = &run.report;
    report(
        "end-to-end synthetic identification",
        oracle >= 80.0
            && r.rank1_accuracy >= 90.0
            && r.counts.gallery == 8
            && r.counts.probes == 8 * (PER_SUBJECT - 1)
            && run.total_time < Duration::from_secs(600),
        &format!(
            "raw-feature 1-NN {oracle:.2}%, rank-1 {:.2}%, pair accuracy {:.2}%, {} probes; train {:.1?}, total {:.1?}",
            r.rank1_accuracy, r.pair_accuracy, r.counts.probes, run.train_time, run.total_time
        ),
    );
}

#[test]
fn alignment_invariance() {
    let run = baseline();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let moved: Vec<RawTrajectory> = run
        .test
        .iter()
        .map(|t| {
            let tr = random_similarity(&mut rng);
            let frames = t
                .frames()
                .iter()
                .map(|f| f.map_points(|_, p| tr.apply_point(&p).try_into().unwrap()).unwrap())
                .collect();
            t.with_frames(frames).unwrap()
        })
        .collect();
    let params = &run.checkpoint.params;
    let before = embed(params, &run.test).unwrap();
    let after = embed(params, &moved).unwrap();
    let max_diff = before
        .iter()
        .zip(&after)
        .flat_map(|(a, b)| a.embedding.0.iter().zip(&b.embedding.0).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max);
    let policy = ThresholdPolicy::default_for_margin(params.model.margin);
    let moved_report = evaluate(params, &moved, policy).unwrap();
    let delta = moved_report.rank1_accuracy - run.report.rank1_accuracy;
    report(
        "alignment invariance",
        max_diff < 1e-6 && delta == 0.0,
        &format!("max embedding change {max_diff:.1e}, rank-1 change {delta}"),
    );
}

#[test]
fn determinism() {
    let first = baseline();
    let second = full_run("0-32");
    let same_ckpt = first.checkpoint.to_bytes() == second.checkpoint.to_bytes();
    let same_report = first.report.to_json() == second.report.to_json();
    report(
        "determinism (two identical-seed runs)",
        same_ckpt && same_report,
        &format!(
            "checkpoint bytes identical: {same_ckpt} ({} bytes), EvalReport JSON identical: {same_report}",
            first.checkpoint.to_bytes().len()
        ),
    );
}

#[test]
fn landmark_subsets() {
    let mut lines = Vec::new();
    let mut ok = true;
    for (subset, f) in [("0-32", 99), ("11-32", 66), ("23-32", 30)] {
        let parsed: LandmarkSubset = subset.parse().unwrap();
        let run: Result<EvalReport, PipelineError> = if subset == "0-32" {
            Ok(baseline().report.clone())
        } else {
            let data = cohort(SEED);
            let (train, test) = data.split_at(TRAIN_SUBJECTS * PER_SUBJECT);
            let cfg = run_config(subset);
            fit(train, &cfg).and_then(|c| evaluate(&c.params, test, cfg.policy(c.params.model.margin)))
        };
        match run {
            Ok(r) => {
                ok &= parsed.feature_dim() == f && r.feature_dim == f;
                lines.push(format!("{subset}: F={} rank-1 {:.2}%", r.feature_dim, r.rank1_accuracy));
            }
            Err(e) => {
                ok = false;
                lines.push(format!("{subset}: {e}"));
            }
        }
    }
    report("landmark subsets", ok, &lines.join(", "));
}
