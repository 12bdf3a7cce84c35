mod oracles;

use proptest::prelude::*;
use rand::Rng;
use syncurator_core::channels::{ChannelSet, POSE_COMPONENTS};
use syncurator_core::curation::{
    build_manifest, leave_one_out_weights, rank, ChannelCorrelations, Composition, PairScore,
    Ratio, ScoringWeights,
};
use syncurator_core::dsp;
use syncurator_core::evalmetrics::evaluate_embeddings;
use syncurator_core::landmarks::{
    detection_coverage, parse_bundle, LandmarkError, PairKind, SchemaError, Subsystem,
};
use syncurator_core::synthbench::{generate_pair, SynthSpec};
use syncurator_core::Channel;

fn series(min_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-100.0f64..100.0, min_len..120)
}

fn correlations() -> impl Strategy<Value = ChannelCorrelations> {
    (-1.0f64..=1.0, -1.0f64..=1.0, -1.0f64..=1.0, -1.0f64..=1.0).prop_map(
        |(speech, gaze, blink, pose)| ChannelCorrelations {
            speech,
            gaze,
            blink,
            pose,
        },
    )
}

fn weights() -> impl Strategy<Value = ScoringWeights> {
    prop::array::uniform4(0.0f64..10.0)
        .prop_filter("non-zero total", |w| w.iter().sum::<f64>() > 1e-3)
        .prop_map(|w| ScoringWeights::from_array(w).unwrap())
}

fn score_with(id: usize, kind: PairKind, c: &ChannelCorrelations, w: &ScoringWeights) -> PairScore {
    PairScore {
        pair_id: format!("p{id:04}"),
        kind,
        speech_corr: Some(c.speech),
        gaze_corr: Some(c.gaze),
        blink_corr: Some(c.blink),
        pose_corr: Some(c.pose),
        sync_score: Some(c.weighted(w)),
        coverage_face: 1.0,
        coverage_pose: 1.0,
        degenerate_frames: 0,
        discarded: false,
        discard_reason: None,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bundle_round_trips(seed in any::<u64>(), frames in 1usize..6) {
        let b = oracles::random_bundle(&mut oracles::rng(seed), frames, 0.3);
        let first = parse_bundle(b.to_json().as_bytes()).unwrap();
        let second = parse_bundle(first.to_json().as_bytes()).unwrap();
        prop_assert_eq!(&first, &second);
        prop_assert_eq!(&first, &b);
    }

    #[test]
    fn coverage_never_rises_when_detections_drop(seed in any::<u64>(), drop in 0usize..10) {
        let mut b = oracles::random_bundle(&mut oracles::rng(seed), 10, 0.2);
        for s in [Subsystem::Face, Subsystem::Pose] {
            let before = detection_coverage(&b, s);
            match s {
                Subsystem::Face => b.frames[drop].face = None,
                Subsystem::Pose => b.frames[drop].pose = None,
            }
            prop_assert!(detection_coverage(&b, s) <= before);
        }
    }

    #[test]
    fn frame_index_gaps_name_first_bad_index(seed in any::<u64>(), at in 1usize..6, skip in 1usize..4) {
        let mut b = oracles::random_bundle(&mut oracles::rng(seed), 6, 0.5);
        for f in &mut b.frames[at..] {
            f.frame_index += skip;
        }
        match parse_bundle(b.to_json().as_bytes()) {
            Err(LandmarkError::Schema(SchemaError::FrameIndex { position, found })) => {
                prop_assert_eq!(position, at);
                prop_assert_eq!(found, at + skip);
            }
            other => prop_assert!(false, "unexpected {:?}", other),
        }
    }

    #[test]
    fn missing_detections_propagate_per_subsystem(seed in any::<u64>()) {
        let b = oracles::random_bundle(&mut oracles::rng(seed), 12, 0.4);
        let set = ChannelSet::extract(&b).signals;
        for (t, f) in b.frames.iter().enumerate() {
            for sig in set.components() {
                let expect = if POSE_COMPONENTS.contains(&sig.component.as_str()) { f.pose.is_some() } else { f.face.is_some() };
                prop_assert_eq!(sig.values[t].is_some(), expect);
            }
        }
    }

    #[test]
    fn double_z_normalization_is_near_idempotent(x in series(3), scale in 0.01f64..50.0) {
        let x: Vec<f64> = x.iter().map(|v| v * scale).collect();
        prop_assume!(dsp::moments(&x).1 >= 0.01);
        let once = dsp::zscore(&x, 1e-6);
        let twice = dsp::zscore(&once, 1e-6);
        for (a, b) in once.iter().zip(&twice) {
            prop_assert!((a - b).abs() <= 1e-5);
        }
    }

    #[test]
    fn smoothing_preserves_quadratics(a in -10.0f64..10.0, b in -1.0f64..1.0, c in -0.05f64..0.05, n in 9usize..150) {
        let y: Vec<f64> = (0..n).map(|t| a + b * t as f64 + c * (t * t) as f64).collect();
        for (s, v) in dsp::smooth(&y, 9, 2).iter().zip(&y) {
            prop_assert!((s - v).abs() <= 1e-9);
        }
    }

    #[test]
    fn pearson_is_symmetric_and_affine_invariant(
        pair in (3usize..100).prop_flat_map(|n| (prop::collection::vec(-5.0f64..5.0, n), prop::collection::vec(-5.0f64..5.0, n))),
        slope in 0.01f64..100.0,
        shift in -100.0f64..100.0,
    ) {
        let (a, b) = pair;
        let ab = dsp::pearson(&a, &b).unwrap();
        prop_assert_eq!(ab, dsp::pearson(&b, &a).unwrap());
        prop_assert!((-1.0..=1.0).contains(&ab));
        let a2: Vec<f64> = a.iter().map(|x| slope * x + shift).collect();
        prop_assume!(dsp::moments(&a).1 > 1e-3 && dsp::moments(&b).1 > 1e-3);
        prop_assert!((dsp::pearson(&a2, &b).unwrap() - ab).abs() <= 1e-9);
    }

    #[test]
    fn interpolation_keeps_valid_samples(v in prop::collection::vec(prop::option::weighted(0.7, -10.0f64..10.0), 1..80)) {
        prop_assume!(v.iter().any(Option::is_some));
        let filled = dsp::fill_gaps(&v).unwrap();
        for (f, o) in filled.iter().zip(&v) {
            if let Some(o) = o {
                prop_assert_eq!(f, o);
            }
        }
    }

    #[test]
    fn weighted_score_is_bounded(c in correlations(), w in weights()) {
        let s = c.weighted(&w);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&s));
    }

    #[test]
    fn ranking_ignores_weight_scale(cs in prop::collection::vec(correlations(), 2..30), raw in prop::array::uniform4(0.01f64..5.0), s in 0.01f64..100.0) {
        let w1 = ScoringWeights::from_array(raw).unwrap();
        let w2 = ScoringWeights::from_array(raw.map(|x| x * s)).unwrap();
        let a: Vec<PairScore> = cs.iter().enumerate().map(|(i, c)| score_with(i, PairKind::EditedPair, c, &w1)).collect();
        let b: Vec<PairScore> = cs.iter().enumerate().map(|(i, c)| score_with(i, PairKind::EditedPair, c, &w2)).collect();
        let ids = |v: &[PairScore]| rank(v).iter().map(|p| p.pair_id.clone()).collect::<Vec<_>>();
        prop_assert_eq!(ids(&a), ids(&b));
    }

    #[test]
    fn leave_one_out_ignores_dropped_channel(c in correlations(), other in -1.0f64..=1.0, w in weights(), k in 0usize..4) {
        let drop = Channel::ALL[k];
        prop_assume!(leave_one_out_weights(&w, drop).is_ok());
        let loo = leave_one_out_weights(&w, drop).unwrap();
        let mut changed = c;
        match drop {
            Channel::Speech => changed.speech = other,
            Channel::Gaze => changed.gaze = other,
            Channel::Blink => changed.blink = other,
            Channel::Pose => changed.pose = other,
        }
        prop_assert_eq!(c.weighted(&loo), changed.weighted(&loo));
    }

    #[test]
    fn manifests_are_deterministic(cs in prop::collection::vec(correlations(), 8..40), seed in any::<u64>(), k in 0usize..4) {
        let w = ScoringWeights::default();
        let scores: Vec<PairScore> = cs
            .iter()
            .enumerate()
            .map(|(i, c)| score_with(i, if i % 2 == 0 { PairKind::EditedPair } else { PairKind::IdenticalPair }, c, &w))
            .collect();
        let comp = [Composition::Filtered, Composition::IdOnly, Composition::EditOnly, Composition::Random][k];
        let a = build_manifest(&scores, 4, Ratio::default(), comp, seed).unwrap();
        let b = build_manifest(&scores, 4, Ratio::default(), comp, seed).unwrap();
        prop_assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn metric_values_stay_in_range(seed in any::<u64>(), frames in 1usize..12) {
        let mut r = oracles::rng(seed);
        let missing = r.random_range(0..frames);
        let b = oracles::random_embeddings(&mut r, frames, 8, 4, missing);
        let report = evaluate_embeddings(&b, false);
        for cell in [&report.directional_clip_image, &report.directional_clip_text_dual, &report.clip_text_align, &report.arcface_sim] {
            if let Some(v) = &cell.value {
                prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(v));
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn synthesis_is_pure(seed in any::<u64>(), lag in -5i64..10, noise in 0.0f64..0.01, dropout in 0.0f64..0.5) {
        let spec = SynthSpec { lag_frames: lag, noise_sigma: noise, dropout_rate: dropout, seed, ..Default::default() };
        let a = generate_pair(&spec).unwrap();
        let b = generate_pair(&spec).unwrap();
        prop_assert_eq!(a.source.to_json(), b.source.to_json());
        prop_assert_eq!(a.edited.to_json(), b.edited.to_json());
    }
}
