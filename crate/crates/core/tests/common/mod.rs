//! Helpers shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

use std::collections::BTreeSet;

use modular_arcade::env::{
    render, reset, Action, EnvKind, EnvState, Frame, ObjectId, Point, BALL_ID, CONTROLLABLE_ID,
};
use modular_arcade::pixel::{match_objects, ShapeTemplate};
use modular_arcade::neural::{DenseNet, HeadSpec, Topology, TrainBatch};
use modular_arcade::trajectory::{PredictorConfig, Sensor, TrajectoryPredictor, World};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Pearson chi-squared statistic for observed counts against uniform.
pub fn chi_squared_uniform(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum()
}

/// Upper 1% critical values of chi-squared for 1..=20 degrees of freedom.
pub const CHI2_CRIT_1PCT: [f64; 20] = [
    6.635, 9.210, 11.345, 13.277, 15.086, 16.812, 18.475, 20.090, 21.666, 23.209, 24.725,
    26.217, 27.688, 29.141, 30.578, 32.000, 33.409, 34.805, 36.191, 37.566,
];

// ---- neural ----

pub fn split_net(input: usize, trunk: usize, head: usize) -> Topology {
    Topology {
        input,
        trunk: vec![trunk, trunk],
        heads: vec![
            HeadSpec::new("vx", vec![head], 1),
            HeadSpec::new("vy", vec![head], 1),
        ],
    }
}

pub fn random_batch(net: &DenseNet, rows: usize, rng: &mut ChaCha8Rng) -> TrainBatch {
    let w = net.input_width();
    let x = Array2::from_shape_fn((rows, w), |_| rng.gen_range(-1.0..1.0));
    let targets = net
        .topology()
        .heads
        .iter()
        .map(|h| Array2::from_shape_fn((rows, h.outputs), |_| rng.gen_range(-2.0..2.0)))
        .collect();
    TrainBatch::new(x, targets)
}

/// Signs of every hidden pre-activation, recomputed from the raw layers.
pub fn relu_pattern(net: &DenseNet, x: &Array2<f64>) -> Vec<bool> {
    let topo = net.topology();
    let layers = net.layers();
    let mut signs = Vec::new();
    let mut a = x.clone();
    let mut idx = 0;
    for _ in &topo.trunk {
        let z = a.dot(&layers[idx].weights.t()) + &layers[idx].bias;
        signs.extend(z.iter().map(|v| *v > 0.0));
        a = z.mapv(|v| v.max(0.0));
        idx += 1;
    }
    for head in &topo.heads {
        let mut h = a.clone();
        for _ in &head.hidden {
            let z = h.dot(&layers[idx].weights.t()) + &layers[idx].bias;
            signs.extend(z.iter().map(|v| *v > 0.0));
            h = z.mapv(|v| v.max(0.0));
            idx += 1;
        }
        idx += 1;
    }
    signs
}

pub struct GradCheck {
    pub compared: usize,
    pub worst_rel_err: f64,
    pub failures: usize,
}

/// Compare `probes` random parameters against central differences with
/// h = 1e-4. Probes whose perturbation crosses a ReLU kink are skipped,
/// since the difference quotient there is not a derivative.
pub fn gradient_check(
    net: &DenseNet,
    batch: &TrainBatch,
    probes: usize,
    rng: &mut ChaCha8Rng,
) -> GradCheck {
    const H: f64 = 1e-4;
    let (_, grads) = net.backward(batch).unwrap();
    let base = relu_pattern(net, &batch.inputs);
    let mut out = GradCheck {
        compared: 0,
        worst_rel_err: 0.0,
        failures: 0,
    };
    for _ in 0..probes {
        let i = rng.gen_range(0..net.param_count());
        let mut plus = net.clone();
        plus.set_param(i, net.param(i) + H);
        let mut minus = net.clone();
        minus.set_param(i, net.param(i) - H);
        if relu_pattern(&plus, &batch.inputs) != base || relu_pattern(&minus, &batch.inputs) != base {
            continue;
        }
        let numeric = (plus.loss(batch).unwrap() - minus.loss(batch).unwrap()) / (2.0 * H);
        let analytic = grads.get(i);
        let err = (analytic - numeric).abs();
        let scale = analytic.abs().max(numeric.abs());
        // tiny gradients are compared absolutely; rounding dominates there
        let rel = if err < 1e-9 { 0.0 } else { err / scale };
        out.worst_rel_err = out.worst_rel_err.max(rel);
        if rel > 1e-4 {
            out.failures += 1;
        }
        out.compared += 1;
    }
    out
}

// ---- duel ball dynamics ----

pub fn tracker_action(state: &EnvState) -> Action {
    let pad = state.controllable().position();
    match state.ball() {
        Some(b) if b.position().x < pad.x - 2 => Action::Left,
        Some(b) if b.position().x > pad.x + 2 => Action::Right,
        _ => Action::Noop,
    }
}

/// Train a predictor on `samples` samples of duel play (tracker with random
/// jitter, frame skip 2).
pub fn train_duel_predictor(seed: u64, samples: u64) -> TrajectoryPredictor {
    let mut state = reset(EnvKind::Duel, seed);
    let shape = state.ball().unwrap().shape.clone();
    let cfg = PredictorConfig {
        seed,
        ..PredictorConfig::default()
    };
    let base = Sensor::for_shape(cfg.m, &shape).base_radius;
    let mut predictor = TrajectoryPredictor::new(cfg, base).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd0e1);
    let mut episode = 0;
    while predictor.samples_seen() < samples {
        let action = if rng.gen_bool(0.2) {
            [Action::Noop, Action::Left, Action::Right][rng.gen_range(0..3)]
        } else {
            tracker_action(&state)
        };
        state.step(action, 2).unwrap();
        if state.terminal {
            episode += 1;
            state = reset(EnvKind::Duel, seed.wrapping_mul(1000) + episode);
        }
        let world = World::from_state(&state, &[BALL_ID]);
        predictor.observe_and_train(state.ball().unwrap(), &world).unwrap();
    }
    predictor
}

/// Horizontal ball-centre limits between the duel side walls.
pub fn duel_x_limits(state: &EnvState) -> (i32, i32) {
    let l = &state.layout;
    let half = state.ball().unwrap().shape.half_width();
    (l.wall_thickness + half, l.width - 1 - l.wall_thickness - half)
}

/// Analytic ball path: straight lines mirrored at the side-wall limits.
/// Returns positions for ticks 1..=n and the number of reflections.
pub fn analytic_path(start: Point, v: Point, limits: (i32, i32), n: usize) -> (Vec<Point>, usize) {
    let (lo, hi) = limits;
    let period = 2 * (hi - lo);
    let fold = |u: i32| {
        let w = (u - lo).rem_euclid(period);
        if w <= period / 2 {
            lo + w
        } else {
            lo + period - w
        }
    };
    let mut out = Vec::with_capacity(n);
    let mut bounces = 0;
    let mut prev_dir = v.x.signum();
    let mut prev_x = start.x;
    for t in 1..=n as i32 {
        let x = fold(start.x + v.x * t);
        let dir = (x - prev_x).signum();
        if dir != 0 && prev_dir != 0 && dir != prev_dir {
            bounces += 1;
        }
        if dir != 0 {
            prev_dir = dir;
        }
        prev_x = x;
        out.push(Point::new(x, start.y + v.y * t));
    }
    (out, bounces)
}

pub struct RolloutErrors {
    pub obstacle_free: Vec<f64>,
    pub single_bounce: Vec<f64>,
}

/// Mean per-step position error of 20-step rollouts against the analytic
/// path, for `per_kind` obstacle-free and `per_kind` single-bounce starts.
pub fn duel_rollout_errors(predictor: &mut TrajectoryPredictor, seed: u64, per_kind: usize) -> RolloutErrors {
    const STEPS: usize = 20;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xe7a1);
    let mut errs = RolloutErrors {
        obstacle_free: Vec::new(),
        single_bounce: Vec::new(),
    };
    let mut attempts = 0;
    while errs.obstacle_free.len() < per_kind || errs.single_bounce.len() < per_kind {
        attempts += 1;
        assert!(attempts < 100_000, "could not generate rollout starts");
        let mut state = reset(EnvKind::Duel, seed);
        let (lo, hi) = duel_x_limits(&state);
        let v = Point::new([-2, -1, 1, 2][rng.gen_range(0..4)], if rng.gen_bool(0.5) { 2 } else { -2 });
        let pos = Point::new(rng.gen_range(lo..=hi), rng.gen_range(70..=120));
        state.set_ball(pos, v);
        predictor.forget(BALL_ID);
        // a few live ticks fill the history queue
        for _ in 0..5 {
            state.step(Action::Noop, 1).unwrap();
            let world = World::from_state(&state, &[BALL_ID]);
            predictor.observe(state.ball().unwrap(), &world).unwrap();
        }
        let start = state.ball().unwrap().position();
        let (truth, bounces) = analytic_path(start, state.ball_velocity, (lo, hi), STEPS);
        let bucket = match bounces {
            0 if errs.obstacle_free.len() < per_kind => &mut errs.obstacle_free,
            1 if errs.single_bounce.len() < per_kind => &mut errs.single_bounce,
            _ => continue,
        };
        let world = World::from_state(&state, &[BALL_ID, CONTROLLABLE_ID]);
        let seed_state = predictor.rollout_seed(BALL_ID).unwrap();
        let fc = predictor.predict_steps(&seed_state, &world, STEPS).unwrap();
        let err = fc
            .positions
            .iter()
            .zip(&truth)
            .map(|(p, t)| ((p.0 - t.x as f64).powi(2) + (p.1 - t.y as f64).powi(2)).sqrt())
            .sum::<f64>()
            / STEPS as f64;
        bucket.push(err);
    }
    errs
}

pub fn template_of<'a>(templates: &'a [ShapeTemplate], state: &EnvState, id: ObjectId) -> &'a ShapeTemplate {
    let obj = &state.objects[&id];
    templates
        .iter()
        .find(|t| t.class == obj.class && *t.shape == *obj.shape)
        .expect("template for object")
}

/// An object is unoccluded when every cell of its shape shows its colour.
pub fn unoccluded(state: &EnvState, frame: &Frame, id: ObjectId) -> bool {
    let obj = &state.objects[&id];
    let colour = obj.class.palette_index();
    obj.cells().all(|c| frame.get(c.x, c.y) == Some(colour))
}

/// Checks every unoccluded object is found at its exact position. Returns
/// the number of objects checked.
pub fn check_round_trip(prev: &EnvState, state: &EnvState, templates: &[ShapeTemplate]) -> Result<usize, String> {
    let frame = render(state);
    let prev_frame = render(prev);
    let ex = match_objects(&frame, Some(&prev_frame), templates).map_err(|e| e.to_string())?;
    let mut checked = 0;
    for id in state.objects.keys() {
        if !unoccluded(state, &frame, *id) {
            continue;
        }
        let t = template_of(templates, state, *id);
        let want = state.objects[id].position();
        let found: BTreeSet<Point> = ex
            .detections
            .iter()
            .filter(|d| d.template == t.id)
            .map(|d| d.position)
            .collect();
        if !found.contains(&want) {
            return Err(format!("{:?} {:?} at {:?} not found in {:?}", id, t.class, want, found));
        }
        checked += 1;
    }
    Ok(checked)
}
