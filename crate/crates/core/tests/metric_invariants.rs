use groundkit::metrics::{self, EvalOptions, EvalRecord};
use proptest::prelude::*;

fn sentence() -> impl Strategy<Value = String> {
    prop::collection::vec(
        prop::sample::select(vec!["the", "cat", "sat", "on", "mat", "a", "dog", "ran", "far"]),
        1..10,
    )
    .prop_map(|w| w.join(" "))
}

fn records() -> impl Strategy<Value = Vec<EvalRecord>> {
    prop::collection::vec((sentence(), sentence(), sentence()), 1..12).prop_map(|v| {
        v.into_iter()
            .map(|(p, r, k)| {
                EvalRecord::new(p, r)
                    .with_knowledge(k)
                    .with_items(vec!["Cat (1999)".into()])
            })
            .collect()
    })
}

/// Upper-case every other word and scatter punctuation; metric tokens do not change.
fn noisy(text: &str) -> String {
    text.split(' ')
        .enumerate()
        .map(|(i, w)| {
            if i % 2 == 0 {
                format!("{}!", w.to_uppercase())
            } else {
                format!("({w}),")
            }
        })
        .collect::<Vec<_>>()
        .join("  ")
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn corpus_metrics_ignore_record_order(mut recs in records(), seed in any::<u64>()) {
        let opts = EvalOptions { smoothed_bleu: true };
        let a = metrics::evaluate(&recs, opts).unwrap();
        let n = recs.len();
        recs.rotate_left((seed as usize) % n);
        recs.reverse();
        let b = metrics::evaluate(&recs, opts).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn metrics_ignore_case_and_punctuation(recs in records()) {
        let loud: Vec<EvalRecord> = recs
            .iter()
            .map(|r| {
                EvalRecord::new(noisy(&r.prediction), noisy(&r.reference))
                    .with_knowledge(noisy(r.golden_knowledge_text.as_deref().unwrap()))
                    .with_items(vec!["CAT (1999)".into()])
            })
            .collect();
        let opts = EvalOptions::default();
        prop_assert_eq!(metrics::evaluate(&recs, opts).unwrap(), metrics::evaluate(&loud, opts).unwrap());
    }

    #[test]
    fn scores_are_bounded(recs in records()) {
        let r = metrics::evaluate(&recs, EvalOptions { smoothed_bleu: true }).unwrap();
        for v in [r.bleu4, r.bleu4_smoothed.unwrap(), r.rouge_l, r.f1, r.kf1.unwrap(), r.dist1, r.dist2, r.dist4, r.rec.unwrap()] {
            prop_assert!((0.0..=1.0).contains(&v), "{v}");
        }
    }

    #[test]
    fn f1_and_rouge_are_symmetric(p in sentence(), r in sentence()) {
        prop_assert_eq!(metrics::unigram_f1_pair(&p, &r), metrics::unigram_f1_pair(&r, &p));
        prop_assert_eq!(metrics::rouge_l_pair(&p, &r), metrics::rouge_l_pair(&r, &p));
    }
}
