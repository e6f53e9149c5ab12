use std::collections::HashMap;

use explore_core::concept_model::{
    oracle, rbf_kernel, score_all, GpModel, Observation, DEFAULT_JITTER,
};
use explore_core::vocabulary::{Concept, Vocabulary};
use proptest::prelude::*;

fn obs_strategy() -> impl Strategy<Value = (usize, Vec<(Vec<f64>, f64)>)> {
    (1usize..6).prop_flat_map(|d| {
        (
            Just(d),
            prop::collection::vec((prop::collection::vec(-1.0f64..1.0, d), 0.0f64..1.0), 1..25),
        )
    })
}

fn to_obs(v: &[(Vec<f64>, f64)]) -> Vec<Observation> {
    v.iter()
        .enumerate()
        .map(|(i, (e, r))| Observation {
            concept_id: i,
            embedding: e.clone(),
            reward: *r,
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn posterior_matches_oracle_and_is_sane(
        (d, data) in obs_strategy(),
        q in prop::collection::vec(prop::collection::vec(-1.5f64..1.5, 6), 1..8),
    ) {
        let obs = to_obs(&data);
        let m = GpModel::fit(&obs, DEFAULT_JITTER).unwrap();
        let (pts, ys) = m.training_data();
        let queries: Vec<Vec<f64>> = q.iter().map(|x| x[..d].to_vec()).collect();
        let dense = oracle::posterior(pts, ys, m.jitter(), false, &queries).unwrap();
        for (x, (dm, dv)) in queries.iter().zip(dense) {
            let (mu, var) = m.predict_raw(x).unwrap();
            prop_assert!((mu - dm).abs() <= 1e-8);
            prop_assert!((var - dv).abs() <= 1e-8);
            prop_assert!(var >= -1e-8);
            prop_assert!(m.predict(x).unwrap().1 >= 0.0);
        }
    }

    #[test]
    fn order_does_not_matter((_d, data) in obs_strategy()) {
        let a = to_obs(&data);
        let mut b = a.clone();
        b.reverse();
        let (ma, mb) = (GpModel::fit(&a, DEFAULT_JITTER).unwrap(), GpModel::fit(&b, DEFAULT_JITTER).unwrap());
        for o in &a {
            let (x, y) = (ma.predict(&o.embedding).unwrap(), mb.predict(&o.embedding).unwrap());
            prop_assert!((x.0 - y.0).abs() <= 1e-9 && (x.1 - y.1).abs() <= 1e-9);
        }
    }

    #[test]
    fn kernel_symmetric_and_unit_diagonal(a in prop::collection::vec(-2.0f64..2.0, 4), b in prop::collection::vec(-2.0f64..2.0, 4)) {
        prop_assert_eq!(rbf_kernel(&a, &b).unwrap(), rbf_kernel(&b, &a).unwrap());
        prop_assert_eq!(rbf_kernel(&a, &a).unwrap(), 1.0);
        let k = rbf_kernel(&a, &b).unwrap();
        prop_assert!(k > 0.0 && k <= 1.0);
    }

    #[test]
    fn unobserved_score_is_mean_plus_bonus((d, data) in obs_strategy(), extra in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 6), 1..10)) {
        let obs = to_obs(&data);
        let m = GpModel::fit(&obs, DEFAULT_JITTER).unwrap();
        let n = obs.len();
        let concepts: Vec<Concept> = obs
            .iter()
            .map(|o| Concept::new(o.concept_id, format!("c{}", o.concept_id), o.embedding.clone()))
            .chain(extra.iter().enumerate().map(|(i, e)| Concept::new(n + i, format!("u{i}"), e[..d].to_vec())))
            .collect();
        let vocab = Vocabulary::new(concepts).unwrap();
        let observed: HashMap<usize, Vec<f64>> = obs.iter().map(|o| (o.concept_id, vec![o.reward])).collect();
        for p in score_all(&m, &vocab, &observed).unwrap() {
            prop_assert!(p.std >= 0.0);
            match observed.get(&p.concept_id) {
                Some(r) => prop_assert_eq!(p.score, r[0]),
                None => prop_assert!(p.score >= p.mean),
            }
        }
    }
}
