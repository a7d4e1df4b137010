use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use selffeed::data::{ExampleKind, Split};
use selffeed::sim::*;
use selffeed::text::Speaker;

mod support;

use support::tiny_world as tiny;

#[test]
fn learning_curve_report_is_deterministic() {
    let cfg = tiny();
    let arms = [
        Arm::new("HH", false, false),
        Arm::new("HH+HB+FB", true, true),
    ];
    let a = learning_curve_experiment(&cfg, &arms, 2, 9).unwrap();
    let b = learning_curve_experiment(&cfg, &arms, 2, 9).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.arms.len(), 2);
    assert!(a.arms[0].vs_first.is_none());
    assert!(a.arms[1].vs_first.is_some());
    for arm in &a.arms {
        assert_eq!(arm.values.len(), 2);
        assert!(arm.values.iter().all(|v| (0.0..=1.0).contains(v)));
    }
    let first: Vec<u64> = a.arms[0].seeds.clone();
    assert!(a.arms[1].seeds.iter().all(|s| !first.contains(s)));
    let table = a.table();
    assert!(table.lines().count() >= 3 && table.contains("HH+HB+FB"));
}

#[test]
fn freshness_without_retraining_is_one_procedure() {
    let r = freshness_experiment(&tiny(), 6, 2, 4, false).unwrap();
    assert_eq!(r.arms[0].values, r.arms[1].values);
    assert!(r.arms[1].vs_first.unwrap().p >= 0.5);
}

#[test]
fn detector_scores_are_f1_values() {
    let d = detector_experiment(&tiny(), 3).unwrap();
    for v in [
        d.classifier,
        d.regex,
        d.uncertainty_top,
        d.uncertainty_gap,
        d.positive_rate,
    ] {
        assert!((0.0..=1.0).contains(&v), "{d:?}");
    }
}

#[test]
fn deployment_examples_are_well_formed() {
    let cfg = tiny();
    let world = World::build(&cfg, 5).unwrap();
    let (bot, ratings) = world.bootstrap(&cfg, 5).unwrap();
    assert!(ratings
        .records
        .iter()
        .all(|r| r.x.len() == 3 && r.validate().is_ok()));
    let out = run_deployment(&bot, &world.domain, cfg.user, cfg.deployment.clone(), 1).unwrap();
    assert_eq!(out.transcripts.len(), cfg.deployment.conversations);
    for (kind, last) in [
        (ExampleKind::HbDialogue, Speaker::Bot),
        (ExampleKind::Feedback, Speaker::Human),
    ] {
        for r in &out.dataset(kind).records {
            assert!(r.validate().is_ok(), "{r:?}");
            assert_eq!(r.x.last().unwrap().speaker, last);
            assert!(r.x.len() <= cfg.deployment.controller.history_limit);
        }
    }
    let again = run_deployment(&bot, &world.domain, cfg.user, cfg.deployment.clone(), 1).unwrap();
    assert_eq!(out, again);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn user_replies_follow_the_table(seed in 0u64..1000, chain in 0usize..12, pos in 0usize..4, hit in any::<bool>(), noise in 0.0f64..0.3) {
        let d = SyntheticDomain::generate(tiny().domain, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let user = SimUser { tolerance: 0.7, style_mix: [1.0, 0.0, 0.0, 0.0], label_noise: 0.0 };
        let at = Cursor { chain, pos };
        let truth = d.utterance(Cursor { chain, pos: pos + 1 }).to_string();
        let reply = if hit { truth.clone() } else { "off table".to_string() };
        let r = simulate_user_reply(&d, &user, at, &reply, &mut rng);
        match r.kind {
            ReactionKind::Continue => {
                prop_assert!(hit);
                prop_assert!((3..=5).contains(&r.rating));
            }
            ReactionKind::Dissatisfied => {
                prop_assert!(!hit);
                prop_assert_eq!(r.rating, 1);
                prop_assert_eq!(r.feedback.as_deref(), Some(truth.as_str()));
            }
            ReactionKind::TopicSwitch => {
                prop_assert!(!hit);
                prop_assert_eq!(r.rating, 2);
            }
        }
        prop_assert!(r.next.pos + 1 < d.config.chain_len);
        prop_assert_eq!(d.chains[r.next.chain].split, Split::Train);

        let noisy = SimUser { label_noise: noise, ..user };
        let r = simulate_user_reply(&d, &noisy, at, &reply, &mut rng);
        prop_assert!((1..=5).contains(&r.rating));
    }
}
