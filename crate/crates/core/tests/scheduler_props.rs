use explore_core::scheduler::{
    apply_tiering, sample_concepts, softmax_distribution, temperature_from_smr, SamplingPlan,
    TierSpec,
};
use proptest::prelude::*;

fn plan_for(scores: &[f64]) -> SamplingPlan {
    let scored: Vec<(usize, f64)> = scores.iter().copied().enumerate().collect();
    SamplingPlan::build(&scored, 3.0, &TierSpec::default()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tier_masses_and_ratios(scores in prop::collection::vec(0.0f64..1.0, 2..3000)) {
        let plan = plan_for(&scores);
        let p = &plan.probabilities;
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        let res = TierSpec::default().resolve(p.len());
        for ((a, b), m) in res.ranges.iter().zip(&res.masses) {
            let mass: f64 = p[*a..*b].iter().sum();
            prop_assert!((mass - m).abs() <= 1e-12, "tier {a}..{b}: {mass} vs {m}");
            for i in *a..*b {
                // Ratio to the tier head equals the softmax ratio.
                let want = plan.softmax[i] / plan.softmax[*a];
                let got = p[i] / p[*a];
                prop_assert!((got / want - 1.0).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn softmax_ratio_is_exp_smr(scores in prop::collection::vec(-5.0f64..5.0, 2..500), smr in 0.5f64..6.0) {
        let (lo, hi) = scores.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &s| (l.min(s), h.max(s)));
        prop_assume!(hi - lo > 1e-6);
        let p = softmax_distribution(&scores, temperature_from_smr(&scores, smr).unwrap());
        let (pl, ph) = p.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &s| (l.min(s), h.max(s)));
        prop_assert!((ph / pl - smr.exp()).abs() <= 1e-6 * smr.exp());
    }

    #[test]
    fn argmax_survives_default_tiering(scores in prop::collection::vec(0.0f64..1.0, 2..3000)) {
        let plan = plan_for(&scores);
        let top = plan.probabilities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(plan.probabilities[0], top);
    }

    #[test]
    fn sampling_is_deterministic(scores in prop::collection::vec(0.0f64..1.0, 1..200), seed in any::<u64>()) {
        let plan = plan_for(&scores);
        let a = sample_concepts(&plan, 50, seed).unwrap();
        prop_assert_eq!(&a, &sample_concepts(&plan, 50, seed).unwrap());
        prop_assert!(a.iter().all(|c| *c < scores.len()));
    }
}

#[test]
fn tiers_clip_and_redistribute() {
    let p = vec![0.25; 4];
    let out = apply_tiering(&p, &TierSpec::default()).unwrap();
    assert_eq!(out, p);
    let t = TierSpec::new(vec![1, 2], vec![0.5, 0.3, 0.2]).unwrap();
    let out = apply_tiering(&[0.5, 0.5, 0.0], &t).unwrap();
    assert!((out[0] - 0.5 / 0.8).abs() < 1e-15 && out[2] == 0.0);
    assert!(TierSpec::new(vec![2, 2], vec![0.5, 0.3, 0.2]).is_err());
}
