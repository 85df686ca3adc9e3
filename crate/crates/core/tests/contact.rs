mod common;

use common::{chi_squared_uniform, tracker_action, CHI2_CRIT_1PCT};
use modular_arcade::contact::{softmax, ContactTable};
use modular_arcade::env::{
    reset, ContactEvent, ContactKind, EnvKind, ObjectId, Point, RewardEvent, ShapeBitmap,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn paddle_table() -> ContactTable {
    ContactTable::for_shape(&ShapeBitmap::rect(15, 3))
}

fn event(dx: i32, tick: u64, kind: ContactKind) -> ContactEvent {
    ContactEvent {
        controllable_id: ObjectId(1),
        other_id: ObjectId(0),
        offset: Point::new(dx, 0),
        tick,
        kind,
    }
}

fn reward(amount: i64, tick: u64) -> RewardEvent {
    RewardEvent { amount, tick }
}

#[test]
fn edge_hit_then_score_raises_edge_value() {
    let mut t = paddle_table();
    let mut tick = 0;
    for _ in 0..20 {
        t.record_contact(&event(7, tick, ContactKind::Hit));
        t.settle_rewards(&[reward(1, tick + 30)], tick + 30);
        tick += 200;
        t.settle_rewards(&[], tick);
    }
    let s = t.stats(7).unwrap();
    assert_eq!(s.count, 20);
    assert_eq!(s.mean, 1.0);
}

#[test]
fn centre_hit_without_score_accrues_zero() {
    let mut t = paddle_table();
    t.record_contact(&event(0, 10, ContactKind::Hit));
    assert!(t.settle_rewards(&[], 100).is_empty());
    let settled = t.settle_rewards(&[], 131);
    assert_eq!(settled.len(), 1);
    assert_eq!(settled[0].credit, 0.0);
    assert_eq!(t.stats(0).unwrap().count, 1);
    assert_eq!(t.stats(0).unwrap().mean, 0.0);
}

#[test]
fn miss_then_penalty_is_negative_beyond_edge() {
    let mut t = paddle_table();
    t.record_contact(&event(9, 50, ContactKind::Miss));
    t.settle_rewards(&[reward(-1, 52)], 52);
    t.flush();
    assert!(t.stats(8).unwrap().mean < 0.0);
}

#[test]
fn reward_goes_to_latest_contact() {
    let mut t = paddle_table();
    t.record_contact(&event(-3, 0, ContactKind::Hit));
    t.record_contact(&event(4, 20, ContactKind::Hit));
    t.settle_rewards(&[reward(1, 25)], 25);
    t.flush();
    assert_eq!(t.stats(-3).unwrap().mean, 0.0);
    assert_eq!(t.stats(4).unwrap().mean, 1.0);
}

#[test]
fn reward_after_deadline_is_dropped() {
    let mut t = paddle_table();
    t.record_contact(&event(0, 0, ContactKind::Hit));
    t.settle_rewards(&[reward(1, 121)], 130);
    assert_eq!(t.dropped_rewards(), 1);
    assert_eq!(t.stats(0).unwrap().mean, 0.0);
}

/// Kernel-smoothed value computed directly from the definition.
fn kernel_oracle(table: &[(i32, f64)], at: i32) -> f64 {
    let w = |d: i32| match d.abs() {
        0 => 1.0,
        1 => 2.0 / 3.0,
        2 => 1.0 / 3.0,
        _ => 0.0,
    };
    let num: f64 = table.iter().map(|(b, m)| w(b - at) * m).sum();
    let den: f64 = table.iter().map(|(b, _)| w(b - at)).sum();
    num / den
}

#[test]
fn edge_value_leakage_is_bounded() {
    let mut t = paddle_table();
    let mut table = Vec::new();
    for b in t.buckets().collect::<Vec<_>>() {
        let m = match b.abs() {
            8 => -1.0,
            4..=7 => 1.0,
            _ => 0.0,
        };
        t.push_sample(b, m).unwrap();
        table.push((b, m));
    }
    let got = t.expected_reward(5);
    let want = kernel_oracle(&table, 5);
    assert!((got - want).abs() < 1e-12);
    assert!((got - 1.0).abs() <= 0.2, "value {got}");
    // the outermost in-shape bucket borders the beyond-edge one
    assert!((t.expected_reward(7) - kernel_oracle(&table, 7)).abs() < 1e-12);
}

#[test]
fn cold_temperature_picks_argmax() {
    let mut t = paddle_table();
    for b in t.buckets().collect::<Vec<_>>() {
        t.push_sample(b, if b == -6 { 1.0 } else { 0.0 }).unwrap();
    }
    let best = t.best_bucket();
    assert_eq!(best, -6);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let hits = (0..10_000)
        .filter(|_| t.sample_contact_point(0.01, &mut rng).x == best)
        .count();
    assert!(hits >= 9_900, "{hits}");
}

#[test]
fn uniform_values_sample_uniformly() {
    let t = paddle_table();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let buckets: Vec<i32> = t.admissible_buckets().collect();
    let mut counts = vec![0u64; buckets.len()];
    for _ in 0..10_000 {
        let dx = t.sample_contact_point(0.3, &mut rng).x;
        counts[buckets.iter().position(|b| *b == dx).unwrap()] += 1;
    }
    let stat = chi_squared_uniform(&counts);
    assert!(stat < CHI2_CRIT_1PCT[buckets.len() - 2], "chi2 {stat}");
}

#[test]
fn table_csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("contacts.csv");
    let mut t = paddle_table();
    for (b, v) in [(0, 0.0), (0, 1.0), (5, 1.0), (8, -1.0), (-2, 0.5)] {
        t.push_sample(b, v).unwrap();
    }
    t.save_csv(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("bucket_dx,count,mean,variance\n"));
    assert_eq!(text.lines().count(), 18);
    let mut back = paddle_table();
    back.load_csv(&path).unwrap();
    for b in t.buckets() {
        let (x, y) = (t.stats(b).unwrap(), back.stats(b).unwrap());
        assert_eq!((x.count, x.mean), (y.count, y.mean));
        assert!((x.variance() - y.variance()).abs() < 1e-12);
    }

    std::fs::write(&path, "bucket_dx,count,mean,variance\n0,1,oops,0\n").unwrap();
    let err = paddle_table().load_csv(&path).unwrap_err();
    assert!(err.to_string().contains(":2"), "{err}");
}

#[test]
fn duel_play_fills_the_table() {
    let mut state = reset(EnvKind::Duel, 5);
    let mut t = ContactTable::for_shape(&state.controllable().shape);
    for _ in 0..4000 {
        if state.terminal {
            break;
        }
        let ev = state.step(tracker_action(&state), 2).unwrap();
        for c in &ev.contacts {
            t.record_contact(c);
        }
        t.settle_rewards(&ev.rewards, state.tick);
    }
    t.flush();
    let settled: u64 = t.buckets().map(|b| t.stats(b).unwrap().count).sum();
    assert!(settled > 10, "{settled}");
}

fn arb_table() -> impl Strategy<Value = Vec<(i32, Vec<f64>)>> {
    proptest::collection::vec(
        (-8i32..=8, proptest::collection::vec(-1.0f64..1.0, 1..6)),
        0..20,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sampling_is_monotone_in_value(samples in arb_table(), tau in 0.05f64..2.0) {
        let mut t = paddle_table();
        for (b, xs) in &samples {
            for x in xs {
                t.push_sample(*b, *x).unwrap();
            }
        }
        let probs = t.probabilities(tau);
        let total: f64 = probs.iter().map(|p| p.1).sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        for &(a, pa) in &probs {
            for &(b, pb) in &probs {
                if t.expected_reward(a) > t.expected_reward(b) {
                    prop_assert!(pa > pb, "bucket {} vs {}", a, b);
                }
            }
        }
    }

    #[test]
    fn beyond_edge_and_gaps_are_never_sampled(samples in arb_table(), seed in any::<u64>()) {
        let bar = ShapeBitmap::split_bar(31, 3, 5);
        let mut t = ContactTable::for_shape(&bar);
        for (b, xs) in &samples {
            for x in xs {
                t.push_sample(*b * 2, *x).unwrap();
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..200 {
            let dx = t.sample_contact_point(0.1, &mut rng).x;
            prop_assert!(bar.column_set(dx), "sampled dx {}", dx);
        }
    }

    #[test]
    fn streaming_mean_matches_replayed_log(
        contacts in proptest::collection::vec((-9i32..=9, 0u64..3, any::<bool>()), 1..40),
        rewards in proptest::collection::vec((0usize..40, -1i64..=1, 0u64..150), 0..40),
    ) {
        let mut t = paddle_table();
        let mut tick = 0;
        let mut schedule = Vec::new();
        for (dx, gap, miss) in &contacts {
            tick += gap * 40;
            let kind = if *miss { ContactKind::Miss } else { ContactKind::Hit };
            schedule.push(event(*dx, tick, kind));
        }
        let mut log = Vec::new();
        for (i, c) in schedule.iter().enumerate() {
            t.record_contact(c);
            let rs: Vec<RewardEvent> = rewards
                .iter()
                .filter(|r| r.0 == i)
                .map(|r| reward(r.1, c.tick + r.2))
                .collect();
            log.extend(t.settle_rewards(&rs, c.tick));
        }
        log.extend(t.flush());
        for b in t.buckets() {
            let credits: Vec<f64> = log.iter().filter(|s| s.bucket == b).map(|s| s.credit).collect();
            let s = t.stats(b).unwrap();
            prop_assert_eq!(s.count as usize, credits.len());
            if !credits.is_empty() {
                let batch = credits.iter().sum::<f64>() / credits.len() as f64;
                prop_assert!((s.mean - batch).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_is_normalised(values in proptest::collection::vec(-5.0f64..5.0, 1..20), tau in 0.01f64..3.0) {
        let vals: Vec<(i32, f64)> = values.iter().enumerate().map(|(i, v)| (i as i32, *v)).collect();
        let p = softmax(&vals, tau);
        prop_assert!((p.iter().map(|x| x.1).sum::<f64>() - 1.0).abs() < 1e-9);
    }
}
