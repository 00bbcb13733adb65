use gaitkit::evaluation::{distance_matrix, rank1_identify, GalleryIndex};
use gaitkit::ingestion::SequencePair;
use gaitkit::model::{Condition, Provenance, SequenceTensor};
use gaitkit::network::{contrastive_loss, pair_distance, pair_loss, Embedding, EncoderConfig, EncoderParams, SiameseModel};
use gaitkit::training::NormalizationStats;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tensor(values: Vec<f64>, f: usize, subject: &str) -> SequenceTensor {
    let n = values.len() / f;
    SequenceTensor::new(
        n,
        f,
        values,
        Provenance {
            subject_id: subject.into(),
            view_deg: 0.0,
            condition: Condition::Nm,
        },
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn contrastive_loss_is_nonnegative_and_zero_at_the_ends(d in 0.0f64..5.0, m in 0.1f64..3.0) {
        prop_assert!(contrastive_loss(d, 0, m) >= 0.0);
        prop_assert!(contrastive_loss(d, 1, m) >= 0.0);
        prop_assert_eq!(contrastive_loss(0.0, 0, m), 0.0);
        if d >= m {
            prop_assert_eq!(contrastive_loss(d, 1, m), 0.0);
        }
    }

    #[test]
    fn distance_matrix_is_a_metric(points in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 2..7)) {
        let items: Vec<_> = points.iter().enumerate().map(|(i, p)| (format!("p{i}"), Embedding(p.clone()))).collect();
        let m = distance_matrix(&items).unwrap();
        let n = items.len();
        for i in 0..n {
            prop_assert_eq!(m.values[i][i], 0.0);
            for j in 0..n {
                prop_assert_eq!(m.values[i][j], m.values[j][i]);
                for k in 0..n {
                    prop_assert!(m.values[i][k] <= m.values[i][j] + m.values[j][k] + 1e-12);
                }
            }
        }
    }

    #[test]
    fn probes_equal_to_gallery_are_all_identified(points in prop::collection::hash_set(-100i32..100, 1..10)) {
        let gallery: Vec<_> = points.iter().map(|&p| (format!("s{p}"), Embedding(vec![p as f64]))).collect();
        let r = rank1_identify(&GalleryIndex::new(gallery.clone()).unwrap(), &gallery).unwrap();
        prop_assert_eq!(r.accuracy, 100.0);
    }

    #[test]
    fn standardized_columns_have_zero_mean(values in prop::collection::vec(-10.0f64..10.0, 4..40)) {
        let f = 2;
        let values = values[..values.len() / f * f].to_vec();
        let t = tensor(values, f, "a");
        let stats = NormalizationStats::fit(std::slice::from_ref(&t)).unwrap();
        let z = stats.apply(&t).unwrap();
        for c in 0..f {
            let mean = (0..z.rows()).map(|r| z.row(r)[c]).sum::<f64>() / z.rows() as f64;
            prop_assert!(mean.abs() < 1e-9);
        }
    }

    #[test]
    fn pair_loss_is_symmetric(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = EncoderConfig { hidden_dim: 3, ..EncoderConfig::dual_stack_bigru(2) };
        let model = SiameseModel::new(EncoderParams::random(cfg, &mut rng), 1.0);
        let vals: Vec<f64> = (0..16).map(|i| ((seed + i) as f64 * 0.37).sin()).collect();
        let a = tensor(vals[..8].to_vec(), 2, "a");
        let b = tensor(vals[8..].to_vec(), 2, "b");
        let ab = pair_loss(&model, &SequencePair::new(a.clone(), b.clone())).unwrap();
        let ba = pair_loss(&model, &SequencePair::new(b.clone(), a.clone())).unwrap();
        prop_assert_eq!(ab, ba);
        let d = pair_distance(&model.encode(&a).unwrap(), &model.encode(&b).unwrap()).unwrap();
        prop_assert_eq!(ab, contrastive_loss(d, 1, 1.0));
    }
}
