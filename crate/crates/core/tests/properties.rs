mod common;

use std::sync::LazyLock;

use proptest::prelude::*;

use mao_core::backbone::{argmax_lowest_id, Backbone, BackboneConfig, PromptSource};
use mao_core::dataset::{generate, split_base_new, Dataset, DatasetSpec};
use mao_core::evaluator::{accuracy, harmonic_mean, round2};
use mao_core::numerics::{l2_normalize, norm, softmax_temp, Rng};
use mao_core::pseudo::{build_pseudo_pairs, LabelerMode};
use mao_core::sampler::{build_index, shrink_to_fit};
use mao_core::trainer::{base_loss, candidate_set, new_candidates, new_loss, sgd_step};

use common::*;

static WORLD: LazyLock<(Dataset, Backbone)> = LazyLock::new(default_world);
static JOINT: LazyLock<(Dataset, Backbone)> = LazyLock::new(|| world(small_spec(4, 4), joint()));

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn softmax_sums_to_one(logits in prop::collection::vec(-30.0f64..30.0, 1..40), tau in 0.005f64..2.0) {
        let p = softmax_temp(&logits, tau).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn normalized_vectors_have_unit_norm(v in prop::collection::vec(-1e3f64..1e3, 1..64)) {
        prop_assume!(v.iter().any(|&x| x.abs() > 1e-6));
        prop_assert!((norm(&l2_normalize(&v).unwrap()) - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn harmonic_mean_is_at_most_arithmetic(a in 0.01f64..100.0, b in 0.01f64..100.0) {
        let h = harmonic_mean(a, b).unwrap();
        prop_assert!(h <= (a + b) / 2.0 + 1e-12);
        prop_assert!(h >= a.min(b) - 1e-12);
    }

    #[test]
    fn harmonic_mean_of_equal_pair_is_the_value(a in 0.01f64..100.0) {
        prop_assert!((harmonic_mean(a, a).unwrap() - a).abs() <= 1e-12);
    }

    #[test]
    fn round2_is_within_half_a_cent(x in -1e4f64..1e4) {
        prop_assert!((round2(x) - x).abs() <= 0.005 + 1e-9);
    }

    #[test]
    fn shrink_fits_and_keeps_positive(b in 1usize..16, k in 1usize..32, n_base in 1usize..64) {
        let (b2, k2, changed) = shrink_to_fit(b, k, n_base);
        prop_assert!(b2 >= 1 && k2 >= 1);
        prop_assert!(b2 * k2 <= n_base || (b2, k2) == (1, 1));
        prop_assert!(b2 <= b && k2 <= k);
        prop_assert_eq!(changed, (b2, k2) != (b, k));
        if b * k <= n_base {
            prop_assert_eq!((b2, k2), (b, k));
        }
    }

    #[test]
    fn candidate_set_is_sorted_unique_cover(ids in prop::collection::vec(0usize..64, 1..40)) {
        let c = candidate_set(&ids);
        prop_assert!(c.ids().windows(2).all(|w| w[0] < w[1]));
        prop_assert!(ids.iter().all(|&i| c.contains(i)));
        prop_assert!(c.len() <= ids.len());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn proba_row_is_invariant_to_embedding_scale(img in 0usize..1024, scale in 0.01f64..100.0) {
        let (ds, bb) = &*WORLD;
        let x = &ds.images()[img % ds.images().len()].features;
        let cands = ds.class_ids();
        let bank = bb.text_bank(PromptSource::Hard, &cands).unwrap();
        let emb = bb.encode_image(PromptSource::Hard, x).unwrap();
        let scaled: Vec<f64> = emb.iter().map(|v| v * scale).collect();
        let unit = l2_normalize(&scaled).unwrap();
        let logits: Vec<f64> = bank.unit.iter().map(|t| t.iter().zip(&unit).map(|(a, b)| a * b).sum()).collect();
        let from_scaled = softmax_temp(&logits, bb.config.tau).unwrap();
        let direct = bb.proba_with(PromptSource::Hard, &bank, x).unwrap();
        for (u, v) in from_scaled.iter().zip(&direct) {
            prop_assert!((u - v).abs() <= 1e-12);
        }
        prop_assert_eq!(argmax_lowest_id(&cands, &from_scaled).0, argmax_lowest_id(&cands, &direct).0);
    }

    #[test]
    fn hard_batches_have_size_b_k_and_contain_anchors(seed in 0u64..1000, b in 1usize..=2, k_pow in 0u32..4) {
        let (ds, _) = &*WORLD;
        let k = 1usize << k_pow;
        let idx = build_index(ds).unwrap();
        let mut rng = Rng::new(seed);
        let anchors = idx.uniform_batch(b, &mut rng).unwrap();
        let batch = idx.expand_batch(&anchors, k, &mut rng).unwrap();
        prop_assert_eq!(batch.pairs.len(), b * k);
        for (j, &(_, c)) in anchors.iter().enumerate() {
            prop_assert_eq!(batch.pairs[j * k].1, c);
        }
        for &(img, c) in &batch.pairs {
            prop_assert_eq!(ds.image(img).true_class(), c);
        }
        prop_assert!(candidate_set(&batch.classes()).len() <= b * k);
    }

    #[test]
    fn loss_never_touches_frozen_weights(seed in 0u64..1000, joint_world in any::<bool>()) {
        let (ds, bb) = if joint_world { &*JOINT } else { &*WORLD };
        let idx = build_index(ds).unwrap();
        let mut rng = Rng::new(seed);
        let mut prompt = bb.init_prompt();
        let anchors = idx.uniform_batch(2, &mut rng).unwrap();
        let batch = idx.expand_batch(&anchors, 2, &mut rng).unwrap();
        let cset = candidate_set(&batch.classes());
        base_loss(bb, &mut prompt, &batch, &cset, ds).unwrap();
        sgd_step(&mut prompt, 0.01).unwrap();
        for p in bb.frozen_params() {
            prop_assert!(p.grad.data().iter().all(|&g| g == 0.0));
            prop_assert!(!p.trainable);
        }
    }

    #[test]
    fn new_candidates_respect_ar(seed in 0u64..1000, ar in any::<bool>()) {
        let (ds, bb) = &*WORLD;
        let mut rng = Rng::new(seed);
        let new = ds.new_classes();
        let cands = new_candidates(&new, &ds.base_classes(), ar);
        if ar {
            prop_assert_eq!(cands.ids(), &new[..]);
        } else {
            prop_assert_eq!(cands.len(), ds.n_classes());
        }
        let unl: Vec<usize> = (0..4).map(|_| ds.train_images_of(new[rng.below(new.len())])[0]).collect();
        let mut prompt = bb.init_prompt();
        let pairs = build_pseudo_pairs(bb, LabelerMode::Foundation, &prompt, &unl, ds, &new).unwrap();
        let out = new_loss(bb, &mut prompt, &pairs, &cands, ds).unwrap();
        prop_assert!(out.loss.is_finite() && out.loss > 0.0);
    }

    #[test]
    fn foundation_labels_ignore_the_prompt(seed in 0u64..1000, shift in -1.0f64..1.0) {
        let (ds, bb) = &*WORLD;
        let mut rng = Rng::new(seed);
        let new = ds.new_classes();
        let unl: Vec<usize> = (0..8).map(|_| {
            let imgs = ds.train_images_of(new[rng.below(new.len())]);
            imgs[rng.below(imgs.len())]
        }).collect();
        let p0 = bb.init_prompt();
        let mut p1 = p0.clone();
        for v in p1.text.tokens.value.data_mut() {
            *v += shift * rng.normal();
        }
        let a = build_pseudo_pairs(bb, LabelerMode::Foundation, &p0, &unl, ds, &new).unwrap();
        let b = build_pseudo_pairs(bb, LabelerMode::Foundation, &p1, &unl, ds, &new).unwrap();
        prop_assert_eq!(a, b);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn generation_is_deterministic_and_split_exact(seed in 0u64..10_000, n_super in 2usize..6, per in 2usize..5) {
        let spec = DatasetSpec { seed, ..small_spec(n_super, per) };
        let a = split_base_new(generate(&spec).unwrap()).unwrap();
        let b = split_base_new(generate(&spec).unwrap()).unwrap();
        prop_assert_eq!(a.to_text(), b.to_text());
        let (base, new) = (a.base_classes(), a.new_classes());
        prop_assert_eq!(base.len() + new.len(), a.n_classes());
        prop_assert_eq!(base.len(), a.n_classes().div_ceil(2));
        prop_assert!(base.iter().all(|c| !new.contains(c)));
        prop_assert!(base.iter().max() < new.iter().min());
    }

    #[test]
    fn prompt_is_the_only_trainable_state(seed in 0u64..10_000, l in 1usize..8, dt in 2usize..12, joint_variant in any::<bool>()) {
        let (ds, _) = &*JOINT;
        let base = if joint_variant { joint() } else { BackboneConfig::default() };
        let cfg = BackboneConfig { seed, prompt_len: l, d_token: dt, ..base };
        let bb = Backbone::pretrained(&cfg, ds).unwrap();
        let visual = if joint_variant { ds.spec.d_img } else { 0 };
        prop_assert_eq!(bb.param_count(), l * dt + visual);
        prop_assert_eq!(bb.init_prompt().param_count(), bb.param_count());
        let again = Backbone::pretrained(&cfg, ds).unwrap();
        prop_assert_eq!(bb.hard_template.clone(), again.hard_template.clone());
    }

    #[test]
    fn evaluation_is_pure(seed in 0u64..1000) {
        let (ds, bb) = &*WORLD;
        let mut prompt = bb.init_prompt();
        let mut rng = Rng::new(seed);
        for v in prompt.text.tokens.value.data_mut() {
            *v += 0.1 * rng.normal();
        }
        let before = prompt.clone();
        let ids = ds.test_images_in(&ds.base_classes());
        let a = accuracy(bb, PromptSource::Learned(&prompt), ds, &ids, &ds.base_classes()).unwrap();
        let b = accuracy(bb, PromptSource::Learned(&prompt), ds, &ids, &ds.base_classes()).unwrap();
        prop_assert_eq!(a.to_bits(), b.to_bits());
        prop_assert_eq!(prompt, before);
        prop_assert!((0.0..=100.0).contains(&a));
    }
}

#[test]
fn softmax_sums_to_one_on_ten_thousand_inputs() {
    let mut rng = Rng::new(1);
    for _ in 0..10_000 {
        let n = 1 + rng.below(32);
        let logits = rng.normal_vec(n, 10.0);
        let tau = 0.01 + rng.uniform();
        let p = softmax_temp(&logits, tau).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn normalizing_random_vectors_gives_unit_norm() {
    let mut rng = Rng::new(2);
    for _ in 0..10_000 {
        let (n, std) = (1 + rng.below(64), 1.0 + 100.0 * rng.uniform());
        let v = rng.normal_vec(n, std);
        assert!((norm(&l2_normalize(&v).unwrap()) - 1.0).abs() <= 1e-12);
    }
}
