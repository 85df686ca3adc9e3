mod common;

use std::sync::Arc;

use modular_arcade::agent::{compute_goal, run_episode, Agent, AgentConfig, EpisodeSummary, Variant};
use modular_arcade::env::{
    reset, Action, EnvKind, ObjectClass, ObjectId, ObjectRecord, Point, Rect, ShapeBitmap,
};
use modular_arcade::trajectory::{PredictorConfig, TrajectoryForecast};
use proptest::prelude::*;

fn small_config(variant: Variant, seed: u64) -> AgentConfig {
    AgentConfig {
        variant,
        predictor: PredictorConfig {
            warmup: 32,
            ..AgentConfig::default().predictor
        },
        warmup_steps: 100,
        ..AgentConfig::default()
    }
    .with_seed(seed)
}

fn train(env: EnvKind, variant: Variant, seed: u64, steps: u64) -> (Agent, Vec<EpisodeSummary>) {
    let mut agent = Agent::new(small_config(variant, seed), &reset(env, seed)).unwrap();
    let mut done = 0;
    let mut out = Vec::new();
    let mut ep = 0;
    while done < steps {
        let mut state = reset(env, seed * 100 + ep);
        ep += 1;
        let s = run_episode(&mut state, &mut agent, (steps - done).min(400)).unwrap();
        done += s.steps;
        out.push(s);
    }
    (agent, out)
}

#[test]
fn zero_budget_is_rejected() {
    let mut state = reset(EnvKind::Duel, 0);
    let mut agent = Agent::new(small_config(Variant::Full, 0), &state).unwrap();
    assert!(run_episode(&mut state, &mut agent, 0).is_err());
}

#[test]
fn agent_refuses_a_different_game() {
    let mut agent = Agent::new(small_config(Variant::Full, 0), &reset(EnvKind::Duel, 0)).unwrap();
    let mut bricks = reset(EnvKind::Bricks, 0);
    assert!(run_episode(&mut bricks, &mut agent, 10).is_err());
}

#[test]
fn same_seed_same_summaries() {
    let (a, sa) = train(EnvKind::Duel, Variant::Full, 3, 600);
    let (b, sb) = train(EnvKind::Duel, Variant::Full, 3, 600);
    assert_eq!(sa, sb);
    assert_eq!(a.fingerprint(), b.fingerprint());
}

#[test]
fn debug_log_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let mut logs = Vec::new();
    for run in 0..2 {
        let path = dir.path().join(format!("run{run}.jsonl"));
        let mut agent = Agent::new(small_config(Variant::Full, 9), &reset(EnvKind::Bricks, 9)).unwrap();
        agent.enable_debug_log(&path).unwrap();
        let mut state = reset(EnvKind::Bricks, 9);
        run_episode(&mut state, &mut agent, 300).unwrap();
        drop(agent);
        logs.push(std::fs::read(&path).unwrap());
    }
    assert!(!logs[0].is_empty());
    assert_eq!(logs[0], logs[1]);
    let first: serde_json::Value = serde_json::from_slice(logs[0].split(|b| *b == b'\n').next().unwrap()).unwrap();
    for key in ["tick", "controllable", "goal", "action", "predictor_loss"] {
        assert!(first.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn live_goals_are_admissible() {
    let mut agent = Agent::new(small_config(Variant::Full, 4), &reset(EnvKind::Duel, 4)).unwrap();
    let mut state = reset(EnvKind::Duel, 4);
    let mut seen = 0;
    let fs = agent.config().frame_skip;
    let mut percept = agent.perceive(&state, &Default::default()).unwrap();
    agent.begin_episode();
    for _ in 0..1_500 {
        if state.terminal {
            break;
        }
        let action = agent.tick(&percept).unwrap();
        if let (Some(g), Some(f)) = (agent.active_goal(), agent.active_forecast()) {
            let area = agent.registry().controllable().unwrap().observed_area;
            assert!(area.contains(g.goal), "{:?} outside {:?}", g.goal, area);
            let p = f.positions[g.intercept - 1];
            let hit = g.goal + g.offset;
            // intersection lies on the forecast step that reaches the area
            let prev = if g.intercept > 1 { f.positions[g.intercept - 2] } else { f.start };
            let lo = (prev.0.min(p.0) - 0.5, prev.1.min(p.1) - 0.5);
            let hi = (prev.0.max(p.0) + 0.5, prev.1.max(p.1) + 0.5);
            assert!((hit.x as f64) >= lo.0 && (hit.x as f64) <= hi.0, "{hit:?} not on step {prev:?}->{p:?}");
            assert!((hit.y as f64) >= lo.1 && (hit.y as f64) <= hi.1, "{hit:?} not on step {prev:?}->{p:?}");
            seen += 1;
        }
        let events = state.step(action, fs).unwrap();
        percept = agent.perceive(&state, &events).unwrap();
    }
    assert!(seen > 100, "only {seen} steps had an active goal");
}

#[test]
fn evaluation_is_pure() {
    let (agent, _) = train(EnvKind::Duel, Variant::Full, 5, 400);
    let before = agent.fingerprint();
    agent.evaluate(3, 42, 200).unwrap();
    assert_eq!(agent.fingerprint(), before);
}

#[test]
fn evaluation_ignores_leftover_play_state() {
    let (agent, _) = train(EnvKind::Duel, Variant::Full, 6, 1_500);
    let mut played = agent.clone();
    played.freeze();
    let mut state = reset(EnvKind::Duel, 77);
    run_episode(&mut state, &mut played, 300).unwrap();
    assert_eq!(agent.evaluate(3, 8, 400).unwrap(), played.evaluate(3, 8, 400).unwrap());
}

#[test]
fn checkpoint_round_trip_preserves_behaviour() {
    let (agent, _) = train(EnvKind::Duel, Variant::Full, 6, 500);
    let dir = tempfile::tempdir().unwrap();
    agent.save(dir.path()).unwrap();
    let restored = Agent::from_checkpoint(dir.path()).unwrap();
    let a = agent.evaluate(2, 8, 200).unwrap();
    let b = restored.evaluate(2, 8, 200).unwrap();
    assert_eq!(a, b);
}

#[test]
fn pixel_percepts_drive_the_same_loop() {
    let mut cfg = small_config(Variant::Full, 7);
    cfg.use_pixels = true;
    let mut agent = Agent::new(cfg, &reset(EnvKind::Duel, 7)).unwrap();
    let mut state = reset(EnvKind::Duel, 7);
    let s = run_episode(&mut state, &mut agent, 400).unwrap();
    assert_eq!(s.steps, 400);
    assert!(agent.predictor().samples_seen() > 100);
    assert!(agent.registry().controllable().is_some());
}

#[test]
fn baselines_do_not_learn() {
    for v in [Variant::Random, Variant::Tracker] {
        let (agent, _) = train(EnvKind::Bricks, v, 1, 300);
        assert_eq!(agent.predictor().samples_seen(), 0);
        assert_eq!(agent.controller().updates(), 0);
    }
}

#[test]
fn tracker_follows_the_ball() {
    let mut agent = Agent::new(small_config(Variant::Tracker, 2), &reset(EnvKind::Duel, 2)).unwrap();
    let mut state = reset(EnvKind::Duel, 2);
    agent.begin_episode();
    let fs = agent.config().frame_skip;
    let mut percept = agent.perceive(&state, &Default::default()).unwrap();
    for _ in 0..200 {
        let a = agent.tick(&percept).unwrap();
        let ball = state.ball().unwrap().position().x;
        let paddle = state.controllable().position().x;
        let want = if ball < paddle - 1 {
            Action::Left
        } else if ball > paddle + 1 {
            Action::Right
        } else {
            Action::Noop
        };
        assert_eq!(a, want);
        let ev = state.step(a, fs).unwrap();
        percept = agent.perceive(&state, &ev).unwrap();
    }
}

/// Independent oracle for the intersection point: march each forecast step
/// in fine increments and return the first sample inside the band.
fn band_entry_oracle(f: &TrajectoryForecast, band: Rect) -> Option<(usize, (f64, f64))> {
    let mut prev = f.start;
    for (i, &p) in f.positions.iter().enumerate() {
        if band.contains_f(p.0, p.1) {
            return Some((i + 1, p));
        }
        for s in 1..=4_000 {
            let t = s as f64 / 4_000.0;
            let q = (prev.0 + t * (p.0 - prev.0), prev.1 + t * (p.1 - prev.1));
            if band.contains_f(q.0, q.1) {
                return Some((i + 1, q));
            }
        }
        prev = p;
    }
    None
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn goals_are_admissible_and_offsets_exact(
        x0 in 0i32..60, x1 in 60i32..150, y in 150i32..185,
        sx in 0.0f64..160.0, sy in 0.0f64..120.0,
        vx in -6.0f64..6.0, vy in 0.5f64..9.0,
        ox in -9i32..=9, oy in -3i32..=3,
    ) {
        let shape = Arc::new(ShapeBitmap::rect(16, 4));
        let mut paddle = ObjectRecord::new(
            ObjectId(1), ObjectClass::Paddle, shape, Point::new(x0, y),
            EnvKind::Duel.action_set(), 4,
        );
        paddle.push_position(Point::new(x1, y));
        let ball = ShapeBitmap::rect(2, 2);
        let n = 40;
        let forecast = TrajectoryForecast {
            start: (sx, sy),
            positions: (1..=n).map(|i| (sx + vx * i as f64, sy + vy * i as f64)).collect(),
            velocities: vec![(vx, vy); n],
            clamped: vec![false; n],
        };
        let area = paddle.observed_area;
        let band = Rect {
            min_x: area.min_x - (8 + 1 + 1),
            max_x: area.max_x + (8 + 1 + 1),
            min_y: area.min_y - (2 + 1 + 1),
            max_y: area.max_y + (2 + 1 + 1),
        };
        let cmd = compute_goal(&forecast, &paddle, &ball, Point::new(ox, oy), 1);
        let oracle = band_entry_oracle(&forecast, band);
        prop_assert_eq!(cmd.is_some(), oracle.is_some());
        if let (Some(cmd), Some((step, hit))) = (cmd, oracle) {
            prop_assert!(area.contains(cmd.goal));
            prop_assert_eq!(cmd.intercept, step);
            let got = cmd.goal + cmd.offset;
            prop_assert!((got.x as f64 - hit.0).abs() <= 1.0 && (got.y as f64 - hit.1).abs() <= 1.0,
                "{:?} vs oracle {:?}", got, hit);
            // an unclamped goal keeps the sampled offset
            let raw = got - Point::new(ox, oy);
            if area.contains(raw) {
                prop_assert_eq!(cmd.offset, Point::new(ox, oy));
            }
        }
    }
}
