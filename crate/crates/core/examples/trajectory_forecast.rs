//! Train the ball-velocity predictor on duel play, then compare a 40-tick
//! forecast with what the simulator actually does.
//!
//! `cargo run --release --example trajectory_forecast -- [samples]`

use modular_arcade::env::{reset, Action, EnvKind, BALL_ID};
use modular_arcade::trajectory::{PredictorConfig, Sensor, TrajectoryPredictor, World};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> modular_arcade::Result<()> {
    let samples: u64 = std::env::args().nth(1).map_or(5_000, |a| a.parse().expect("sample count"));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut state = reset(EnvKind::Duel, 1);
    let config = PredictorConfig { seed: 1, ..PredictorConfig::default() };
    let base = Sensor::for_shape(config.m, &state.ball().expect("ball in play").shape).base_radius;
    let mut predictor = TrajectoryPredictor::new(config, base)?;

    let mut episode = 0;
    while predictor.samples_seen() < samples {
        let pad = state.controllable().position();
        let action = match state.ball() {
            _ if rng.gen_bool(0.2) => [Action::Noop, Action::Left, Action::Right][rng.gen_range(0..3)],
            Some(b) if b.position().x < pad.x - 2 => Action::Left,
            Some(b) if b.position().x > pad.x + 2 => Action::Right,
            _ => Action::Noop,
        };
        state.step(action, 2)?;
        if state.terminal {
            episode += 1;
            state = reset(EnvKind::Duel, 100 + episode);
        }
        let world = World::from_state(&state, &[BALL_ID]);
        predictor.observe_and_train(state.ball().expect("ball in play"), &world)?;
    }
    println!("trained on {} samples, buffer loss {:.5}", predictor.samples_seen(), predictor.buffer_loss()?.unwrap_or(f64::NAN));

    // the paddle stays put below, so it belongs in the forecast world
    let world = World::from_state(&state, &[BALL_ID]);
    let seed = predictor.rollout_seed(BALL_ID).expect("ball has history");
    let forecast = predictor.predict_steps(&seed, &world, 40)?;
    let mut truth = state.clone();
    let mut worst: f64 = 0.0;
    for (i, p) in forecast.positions.iter().enumerate() {
        truth.step(Action::Noop, 1)?;
        let Some(ball) = truth.ball() else { break };
        let b = ball.position();
        let err = ((p.0 - b.x as f64).powi(2) + (p.1 - b.y as f64).powi(2)).sqrt();
        worst = worst.max(err);
        if i % 5 == 4 {
            println!("tick {:2}: forecast ({:6.1}, {:6.1}) actual ({:3}, {:3})", i + 1, p.0, p.1, b.x, b.y);
        }
    }
    println!("worst error over the forecast: {worst:.2} px");
    Ok(())
}
