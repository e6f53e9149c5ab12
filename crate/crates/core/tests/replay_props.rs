use explore_core::relevance::{ImageRecord, TargetSet};
use explore_core::replay::{compose_training_set, retain_top_fraction, ReplayBuffer};
use proptest::prelude::*;

fn rec(id: u64, reward: f64) -> ImageRecord {
    ImageRecord {
        id,
        representation: vec![reward, 1.0],
        source_concept: (id % 7) as usize,
        descriptor: String::new(),
        descriptor_index: 0,
        rank: 0,
        content_key: id,
        reward: Some(reward),
        iteration: 0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn kept_dominate_dropped(rewards in prop::collection::vec(0.0f64..1.0, 1..200), f in 0.05f64..=1.0) {
        let recs: Vec<_> = rewards.iter().enumerate().map(|(i, &r)| rec(i as u64, r)).collect();
        let kept = retain_top_fraction(&recs, f).unwrap();
        prop_assert_eq!(kept.len(), (f * recs.len() as f64 - 1e-9).ceil().max(1.0) as usize);
        let ids: std::collections::HashSet<u64> = kept.iter().map(|r| r.id).collect();
        let min_kept = kept.iter().map(|r| r.reward.unwrap()).fold(f64::INFINITY, f64::min);
        for r in recs.iter().filter(|r| !ids.contains(&r.id)) {
            prop_assert!(min_kept >= r.reward.unwrap());
        }
    }

    #[test]
    fn buffer_grows_by_ceil_half(batches in prop::collection::vec(0usize..60, 1..10)) {
        let mut buf = ReplayBuffer::new();
        let (mut next, mut want) = (0u64, 0usize);
        for n in batches {
            let recs: Vec<_> = (0..n).map(|i| rec(next + i as u64, (i % 5) as f64 / 5.0)).collect();
            next += n as u64;
            buf.extend(retain_top_fraction(&recs, 0.5).unwrap()).unwrap();
            want += n.div_ceil(2);
            prop_assert_eq!(buf.len(), want);
        }
    }

    #[test]
    fn history_size_is_exact(n_cand in 0usize..50, n_buf in 0usize..100, pcr in 0.0f64..4.0, seed in any::<u64>()) {
        let cands: Vec<_> = (0..n_cand).map(|i| rec(i as u64, 0.5)).collect();
        let mut buf = ReplayBuffer::new();
        buf.extend((0..n_buf).map(|i| rec(1000 + i as u64, 0.1)).collect()).unwrap();
        let t = TargetSet::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let ts = compose_training_set(&cands, &buf, &t, pcr, seed).unwrap();
        prop_assert_eq!(ts.history.len(), (pcr * n_cand as f64).round() as usize);
        prop_assert_eq!(ts.candidate_ids, cands.iter().map(|r| r.id).collect::<Vec<_>>());
    }
}

#[test]
fn buffer_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut buf = ReplayBuffer::new();
    buf.extend((0..20).map(|i| rec(i, i as f64 / 20.0)).collect())
        .unwrap();
    let p = dir.path().join("b.rplb");
    buf.save(&p).unwrap();
    assert_eq!(ReplayBuffer::load(&p).unwrap().records(), buf.records());
}
