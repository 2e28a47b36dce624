use plugid_core::eval::{self, EvalReport, OmissionReport, OmissionRun};
use plugid_core::net::{self, Head, NetConfig, Prediction};
use plugid_core::{encode_target, LabelSet, LoadClass};
use proptest::prelude::*;

fn label_set() -> impl Strategy<Value = LabelSet> {
    proptest::sample::subsequence(LoadClass::ALL.to_vec(), 1..=3)
        .prop_map(|v| LabelSet::new(&v).unwrap())
}

fn prediction() -> impl Strategy<Value = Prediction> {
    proptest::collection::vec(-5.0f64..5.0, LoadClass::COUNT + 3)
        .prop_map(|logits| net::predict_from_logits(&logits, &NetConfig::default()))
}

proptest! {
    #[test]
    fn strict_never_exceeds_its_parts(
        cases in proptest::collection::vec((prediction(), label_set()), 1..60)
    ) {
        let (preds, truths): (Vec<_>, Vec<_>) = cases.into_iter().unzip();
        let r = EvalReport::from_runs(&[eval::tally(&preds, &truths).unwrap()]);
        prop_assert!(r.invariants_hold());
        let strict = eval::strict_accuracy(&preds, &truths).unwrap();
        prop_assert!(strict <= eval::class_detection_accuracy(&preds, &truths).unwrap());
        prop_assert!(strict <= eval::count_accuracy(&preds, &truths).unwrap());
    }

    #[test]
    fn omission_chain_holds(
        truth in label_set(),
        preds in proptest::collection::vec(prediction(), 1..40)
    ) {
        let run = OmissionRun::score(&preds, &truth);
        prop_assert_eq!(run.samples, preds.len());
        prop_assert_eq!(run.counts.iter().sum::<usize>(), preds.len());
        prop_assert_eq!(run.top_sets.values().sum::<usize>(), preds.len());
        let report = OmissionReport::from_runs(vec![(truth.combo_id(), vec![run])]);
        prop_assert!(report.invariants_hold());
    }

    #[test]
    fn targets_are_normalized(labels in label_set()) {
        let t = encode_target(labels.classes(), LoadClass::COUNT).unwrap();
        prop_assert!((t.class_part.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert_eq!(t.count_part.iter().sum::<f64>(), 1.0);
        prop_assert_eq!(t.load_count(), labels.len());
    }

    #[test]
    fn combo_ids_round_trip(labels in label_set()) {
        let id = labels.combo_id();
        prop_assert_eq!(LabelSet::parse_combo_id(&id).unwrap(), labels);
    }

    #[test]
    fn split_head_probabilities_are_normalized(
        logits in proptest::collection::vec(-30.0f64..30.0, LoadClass::COUNT + 3)
    ) {
        let cfg = NetConfig { head: Head::SplitSoftmax, ..NetConfig::default() };
        let p = net::predict_from_logits(&logits, &cfg);
        prop_assert!((p.class_probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!((p.count_probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert_eq!(p.top_set.len(), p.n_hat);
        prop_assert!((1..=3).contains(&p.n_hat));
    }
}
