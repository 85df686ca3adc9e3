//! Velocity predictor for non-controllable objects and its recursive rollout.
//!
//! The network input is a queue of the last `k` velocities, each followed by
//! the sensor reading taken at the position that velocity produced. Each
//! rollout step runs the network, pushes the predicted velocity, moves the
//! anterior position, senses there and pushes the reading.
//!
//! Sensor layout: concentric square rings of 8 probes around the position.
//! Ring `i` sits at Chebyshev radius `base + i`, where `base` is one more
//! than the tracked shape's half extent, and lists its probes as left,
//! right, up, down, up-left, up-right, down-left, down-right. A width `m`
//! takes the first `m` probes, so a wider sensor only appends bits.

use std::collections::{BTreeMap, VecDeque};
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{EnvState, ObjectId, ObjectRecord, Point, ShapeBitmap};
use crate::error::{Error, Result};
use crate::neural::{Adam, DenseNet, HeadSpec, Topology, TrainBatch};

pub type Vec2 = (f64, f64);

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorConfig {
    pub k: usize,
    pub m: usize,
    pub n: usize,
    pub trunk: Vec<usize>,
    pub head_hidden: usize,
    /// Velocities are divided by this before entering the network.
    pub velocity_scale: f64,
    /// Round predicted velocities to whole pixels during rollout.
    pub quantize: bool,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub warmup: usize,
    pub learning_rate: f64,
    pub updates_per_observe: usize,
    pub seed: u64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            k: 4,
            m: 32,
            n: 96,
            trunk: vec![64, 64],
            head_hidden: 32,
            velocity_scale: 4.0,
            quantize: true,
            buffer_capacity: 10_000,
            batch_size: 32,
            warmup: 200,
            learning_rate: 1e-3,
            updates_per_observe: 1,
            seed: 0,
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.m == 0 || self.n == 0 {
            return Err(Error::Config(format!(
                "k, m and n must be at least 1 (got k={}, m={}, n={})",
                self.k, self.m, self.n
            )));
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 {
            return Err(Error::Config("batch size and buffer capacity must be positive".into()));
        }
        if !(self.velocity_scale > 0.0) {
            return Err(Error::Config("velocity_scale must be positive".into()));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.k * (2 + self.m)
    }

    pub fn topology(&self) -> Topology {
        let hidden = if self.head_hidden == 0 { vec![] } else { vec![self.head_hidden] };
        Topology {
            input: self.input_width(),
            trunk: self.trunk.clone(),
            heads: vec![
                HeadSpec::new("vx", hidden.clone(), 1),
                HeadSpec::new("vy", hidden, 1),
            ],
        }
    }
}

/// Binary occupancy of the playfield. Cells outside read as occupied.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    width: i32,
    height: i32,
    cells: Vec<bool>,
}

impl World {
    pub fn empty(width: i32, height: i32) -> Self {
        Self {
            width,
            height,
            cells: vec![false; (width.max(0) * height.max(0)) as usize],
        }
    }

    /// All objects of `state` except the listed ids.
    pub fn from_state(state: &EnvState, exclude: &[ObjectId]) -> Self {
        let mut world = Self::empty(state.width(), state.height());
        for obj in state.objects.values().filter(|o| !exclude.contains(&o.id)) {
            world.add_shape(&obj.shape, obj.position());
        }
        world
    }

    pub fn add_shape(&mut self, shape: &ShapeBitmap, at: Point) {
        for (dx, dy) in shape.offsets() {
            self.set(at.x + dx, at.y + dy);
        }
    }

    pub fn set(&mut self, x: i32, y: i32) {
        if self.inside(x, y) {
            self.cells[(y * self.width + x) as usize] = true;
        }
    }

    pub fn inside(&self, x: i32, y: i32) -> bool {
        x >= 0 && y >= 0 && x < self.width && y < self.height
    }

    pub fn occupied(&self, x: i32, y: i32) -> bool {
        !self.inside(x, y) || self.cells[(y * self.width + x) as usize]
    }

    pub fn width(&self) -> i32 {
        self.width
    }

    pub fn height(&self) -> i32 {
        self.height
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SensorVector(pub Vec<bool>);

impl SensorVector {
    pub fn zeros(m: usize) -> Self {
        Self(vec![false; m])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count_set(&self) -> usize {
        self.0.iter().filter(|b| **b).count()
    }
}

const RING: [(i32, i32); 8] = [
    (-1, 0),
    (1, 0),
    (0, -1),
    (0, 1),
    (-1, -1),
    (1, -1),
    (-1, 1),
    (1, 1),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sensor {
    pub m: usize,
    pub base_radius: i32,
}

impl Sensor {
    pub fn new(m: usize, base_radius: i32) -> Self {
        Self { m, base_radius }
    }

    /// Rings start just outside the shape's bounding box.
    pub fn for_shape(m: usize, shape: &ShapeBitmap) -> Self {
        Self::new(m, shape.half_width().max(shape.half_height()) + 1)
    }

    /// Probe offsets relative to the position, in bit order.
    pub fn probes(&self) -> Vec<(i32, i32)> {
        (0..self.m)
            .map(|j| {
                let r = self.base_radius + (j / 8) as i32;
                let (ux, uy) = RING[j % 8];
                (ux * r, uy * r)
            })
            .collect()
    }

    pub fn sense(&self, pos: Point, world: &World) -> SensorVector {
        SensorVector(
            self.probes()
                .into_iter()
                .map(|(dx, dy)| world.occupied(pos.x + dx, pos.y + dy))
                .collect(),
        )
    }
}

/// Flatten queues as `[v_{t-k+1}, s_{t-k+1}, ..., v_t, s_t]`, oldest first.
pub fn build_input(velocities: &[Vec2], sensors: &[SensorVector]) -> Result<Vec<f64>> {
    if velocities.len() != sensors.len() {
        return Err(Error::Shape(format!(
            "{} velocities but {} sensor readings",
            velocities.len(),
            sensors.len()
        )));
    }
    let m = sensors.first().map_or(0, SensorVector::len);
    if sensors.iter().any(|s| s.len() != m) {
        return Err(Error::Shape("sensor readings differ in width".into()));
    }
    let mut out = Vec::with_capacity(velocities.len() * (2 + m));
    for (v, s) in velocities.iter().zip(sensors) {
        out.push(v.0);
        out.push(v.1);
        out.extend(s.0.iter().map(|&b| if b { 1.0 } else { 0.0 }));
    }
    Ok(out)
}

/// Queues that seed (and are advanced by) a rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutState {
    pub pos: Vec2,
    pub velocity_queue: VecDeque<Vec2>,
    pub sensor_queue: VecDeque<SensorVector>,
    pub trajectory: Vec<Vec2>,
}

impl RolloutState {
    /// Zero-padded queues at `pos`.
    pub fn new(pos: Vec2, k: usize, m: usize) -> Self {
        Self {
            pos,
            velocity_queue: std::iter::repeat((0.0, 0.0)).take(k).collect(),
            sensor_queue: std::iter::repeat(SensorVector::zeros(m)).take(k).collect(),
            trajectory: Vec::new(),
        }
    }

    /// Push an observed or predicted step, dropping the oldest entry.
    pub fn push(&mut self, velocity: Vec2, sensor: SensorVector) {
        self.velocity_queue.pop_front();
        self.velocity_queue.push_back(velocity);
        self.sensor_queue.pop_front();
        self.sensor_queue.push_back(sensor);
    }

    pub fn input(&self) -> Result<Vec<f64>> {
        let v: Vec<Vec2> = self.velocity_queue.iter().copied().collect();
        let s: Vec<SensorVector> = self.sensor_queue.iter().cloned().collect();
        build_input(&v, &s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryForecast {
    pub start: Vec2,
    pub positions: Vec<Vec2>,
    pub velocities: Vec<Vec2>,
    /// Steps whose position was clamped into the playfield.
    pub clamped: Vec<bool>,
}

impl TrajectoryForecast {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "x", "y", "vx", "vy"])?;
        for (i, (p, v)) in self.positions.iter().zip(&self.velocities).enumerate() {
            w.write_record(&[
                (i + 1).to_string(),
                p.0.to_string(),
                p.1.to_string(),
                v.0.to_string(),
                v.1.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<forecast csv>", e))
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(file)
    }
}

/// Per-object observation queue used to build training pairs.
#[derive(Debug, Clone)]
struct Track {
    state: RolloutState,
    last: Point,
    /// Real (non-padding) entries in the queue, capped at k.
    filled: usize,
}

/// Learner for one class of moving objects (shared weights across objects).
#[derive(Debug, Clone)]
pub struct TrajectoryPredictor {
    config: PredictorConfig,
    sensor_base: i32,
    net: DenseNet,
    adam: Adam,
    inputs: Vec<Vec<f64>>,
    targets: Vec<Vec2>,
    next_slot: usize,
    rng: ChaCha8Rng,
    tracks: BTreeMap<ObjectId, Track>,
    samples_seen: u64,
    updates: u64,
}

impl TrajectoryPredictor {
    /// `sensor_base` is the innermost ring radius (see [`Sensor::for_shape`]).
    pub fn new(config: PredictorConfig, sensor_base: i32) -> Result<Self> {
        config.validate()?;
        let net = DenseNet::new(config.topology(), config.seed)?;
        let adam = Adam::new(&net, config.learning_rate);
        let rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7472_616a);
        Ok(Self {
            sensor_base,
            net,
            adam,
            inputs: Vec::new(),
            targets: Vec::new(),
            next_slot: 0,
            rng,
            tracks: BTreeMap::new(),
            samples_seen: 0,
            updates: 0,
            config,
        })
    }

    pub fn config(&self) -> &PredictorConfig {
        &self.config
    }

    pub fn sensor(&self) -> Sensor {
        Sensor::new(self.config.m, self.sensor_base)
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    /// Replace the weights (checkpoint restore); topology must match.
    pub fn set_net(&mut self, net: DenseNet) -> Result<()> {
        if net.topology() != self.net.topology() {
            return Err(Error::Checkpoint("predictor topology mismatch".into()));
        }
        self.adam = Adam::new(&net, self.config.learning_rate);
        self.net = net;
        Ok(())
    }

    pub fn samples_seen(&self) -> u64 {
        self.samples_seen
    }

    pub fn buffer_len(&self) -> usize {
        self.inputs.len()
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    fn encode(&self, mut input: Vec<f64>) -> Vec<f64> {
        let stride = 2 + self.config.m;
        for slot in input.chunks_mut(stride) {
            slot[0] /= self.config.velocity_scale;
            slot[1] /= self.config.velocity_scale;
        }
        input
    }

    /// Store one supervised pair: queues as seen at `t`, velocity at `t + 1`.
    pub fn record_sample(&mut self, velocities: &[Vec2], sensors: &[SensorVector], target: Vec2) -> Result<()> {
        if velocities.len() != self.config.k {
            return Err(Error::Shape(format!(
                "expected {} queued velocities, got {}",
                self.config.k,
                velocities.len()
            )));
        }
        if sensors.iter().any(|s| s.len() != self.config.m) {
            return Err(Error::Shape(format!("sensor width must be {}", self.config.m)));
        }
        let input = self.encode(build_input(velocities, sensors)?);
        let s = self.config.velocity_scale;
        let target = (target.0 / s, target.1 / s);
        if self.inputs.len() < self.config.buffer_capacity {
            self.inputs.push(input);
            self.targets.push(target);
        } else {
            self.inputs[self.next_slot] = input;
            self.targets[self.next_slot] = target;
        }
        self.next_slot = (self.next_slot + 1) % self.config.buffer_capacity;
        self.samples_seen += 1;
        Ok(())
    }

    /// Fold new history entries of `record` into its track and the sample buffer.
    /// Returns the number of samples added.
    pub fn observe(&mut self, record: &ObjectRecord, world: &World) -> Result<usize> {
        let sensor = self.sensor();
        let (k, m) = (self.config.k, self.config.m);
        let history = &record.position_history;
        let current = record.position();

        // Find how many trailing entries are new. A track whose last point is
        // no longer in the history (respawn, long gap) starts over.
        let known = self.tracks.get(&record.id).and_then(|t| {
            history.iter().rposition(|p| *p == t.last)
        });
        let fresh: Vec<Point> = match known {
            Some(i) => history.iter().skip(i + 1).copied().collect(),
            None => {
                self.tracks.insert(
                    record.id,
                    Track {
                        state: RolloutState::new(to_vec2(current), k, m),
                        last: current,
                        filled: 0,
                    },
                );
                return Ok(0);
            }
        };
        let mut added = 0;
        for p in fresh {
            let track = self.tracks.get_mut(&record.id).expect("track exists");
            let v = p - track.last;
            let v = (v.x as f64, v.y as f64);
            let pending = if track.filled > 0 {
                Some((
                    track.state.velocity_queue.iter().copied().collect::<Vec<_>>(),
                    track.state.sensor_queue.iter().cloned().collect::<Vec<_>>(),
                ))
            } else {
                None
            };
            let reading = sensor.sense(p, world);
            track.state.push(v, reading);
            track.state.pos = to_vec2(p);
            track.last = p;
            track.filled = (track.filled + 1).min(k);
            if let Some((vq, sq)) = pending {
                self.record_sample(&vq, &sq, v)?;
                added += 1;
            }
        }
        Ok(added)
    }

    /// One batched update, or `None` before warmup.
    pub fn train_step(&mut self) -> Result<Option<f64>> {
        let n = self.inputs.len();
        if n == 0 || n < self.config.warmup.min(self.config.buffer_capacity) {
            return Ok(None);
        }
        let b = self.config.batch_size;
        let w = self.config.input_width();
        let mut x = Array2::zeros((b, w));
        let mut tx = Array2::zeros((b, 1));
        let mut ty = Array2::zeros((b, 1));
        for row in 0..b {
            let i = self.rng.gen_range(0..n);
            x.row_mut(row)
                .as_slice_mut()
                .expect("standard layout")
                .copy_from_slice(&self.inputs[i]);
            tx[[row, 0]] = self.targets[i].0;
            ty[[row, 0]] = self.targets[i].1;
        }
        let (loss, grads) = self.net.backward(&TrainBatch::new(x, vec![tx, ty]))?;
        self.net.apply_update(&grads, &mut self.adam);
        self.updates += 1;
        Ok(Some(loss))
    }

    /// Observe then run the configured number of updates. Returns the mean
    /// loss, or `None` when nothing could be trained yet.
    pub fn observe_and_train(&mut self, record: &ObjectRecord, world: &World) -> Result<Option<f64>> {
        self.observe(record, world)?;
        let mut total = 0.0;
        let mut count = 0;
        for _ in 0..self.config.updates_per_observe {
            if let Some(l) = self.train_step()? {
                total += l;
                count += 1;
            }
        }
        Ok((count > 0).then(|| total / count as f64))
    }

    /// Mean loss over the whole buffer (diagnostics).
    pub fn buffer_loss(&self) -> Result<Option<f64>> {
        self.loss_on(self)
    }

    /// Loss of this predictor's network on another predictor's samples
    /// (held-out evaluation).
    pub fn loss_on(&self, data: &TrajectoryPredictor) -> Result<Option<f64>> {
        if data.inputs.is_empty() {
            return Ok(None);
        }
        if data.config.input_width() != self.config.input_width() {
            return Err(Error::Shape("predictors disagree on input width".into()));
        }
        let n = data.inputs.len();
        let w = data.config.input_width();
        let x = Array2::from_shape_fn((n, w), |(r, c)| data.inputs[r][c]);
        let tx = Array2::from_shape_fn((n, 1), |(r, _)| data.targets[r].0);
        let ty = Array2::from_shape_fn((n, 1), |(r, _)| data.targets[r].1);
        Ok(Some(self.net.loss(&TrainBatch::new(x, vec![tx, ty]))?))
    }

    /// Rollout seed for a tracked object, from its live history.
    pub fn rollout_seed(&self, id: ObjectId) -> Option<RolloutState> {
        self.tracks.get(&id).map(|t| {
            let mut s = t.state.clone();
            s.trajectory.clear();
            s
        })
    }

    /// Forget a tracked object (it left the scene).
    pub fn forget(&mut self, id: ObjectId) {
        self.tracks.remove(&id);
    }

    pub fn forget_all(&mut self) {
        self.tracks.clear();
    }

    pub fn predict_velocity(&self, state: &RolloutState) -> Result<Vec2> {
        let input = self.encode(state.input()?);
        let out = self.net.forward_heads(&input)?;
        let s = self.config.velocity_scale;
        let (mut vx, mut vy) = (out[0][0] * s, out[1][0] * s);
        if self.config.quantize {
            vx = vx.round();
            vy = vy.round();
        }
        Ok((vx, vy))
    }

    /// `config.n` recursive steps from `start` against a frozen world.
    pub fn predict_trajectory(&self, start: &RolloutState, world: &World) -> Result<TrajectoryForecast> {
        self.predict_steps(start, world, self.config.n)
    }

    pub fn predict_steps(&self, start: &RolloutState, world: &World, n: usize) -> Result<TrajectoryForecast> {
        if start.velocity_queue.len() != self.config.k || start.sensor_queue.len() != self.config.k {
            return Err(Error::Shape(format!("rollout queues must hold {} entries", self.config.k)));
        }
        let sensor = self.sensor();
        let mut state = start.clone();
        let (max_x, max_y) = ((world.width() - 1) as f64, (world.height() - 1) as f64);
        let mut fc = TrajectoryForecast {
            start: start.pos,
            positions: Vec::with_capacity(n),
            velocities: Vec::with_capacity(n),
            clamped: Vec::with_capacity(n),
        };
        for _ in 0..n {
            let v = self.predict_velocity(&state)?;
            let raw = (state.pos.0 + v.0, state.pos.1 + v.1);
            let pos = (raw.0.clamp(0.0, max_x.max(0.0)), raw.1.clamp(0.0, max_y.max(0.0)));
            let clamped = pos != raw;
            let applied = (pos.0 - state.pos.0, pos.1 - state.pos.1);
            // the position is the running sum of applied velocities, bit for bit
            let pos = (state.pos.0 + applied.0, state.pos.1 + applied.1);
            let reading = sensor.sense(round_point(pos), world);
            state.push(applied, reading);
            state.pos = pos;
            state.trajectory.push(pos);
            fc.positions.push(pos);
            fc.velocities.push(applied);
            fc.clamped.push(clamped);
        }
        Ok(fc)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.net.save(path)
    }

    pub fn load_weights(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let net = DenseNet::load(path, Some(&self.config.topology()))?;
        self.set_net(net)
    }
}

pub fn to_vec2(p: Point) -> Vec2 {
    (p.x as f64, p.y as f64)
}

pub fn round_point(p: Vec2) -> Point {
    Point::new(p.0.round() as i32, p.1.round() as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(bits: &[u8]) -> SensorVector {
        SensorVector(bits.iter().map(|b| *b == 1).collect())
    }

    #[test]
    fn build_input_single_slot() {
        let out = build_input(&[(2.0, -1.0)], &[s(&[0, 1, 0])]).unwrap();
        assert_eq!(out, vec![2.0, -1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn build_input_padding_and_width() {
        let mut st = RolloutState::new((0.0, 0.0), 2, 3);
        st.push((1.0, 1.0), s(&[1, 1, 1]));
        let out = st.input().unwrap();
        assert!(out[..5].iter().all(|v| *v == 0.0));
        let st = RolloutState::new((0.0, 0.0), 4, 8);
        assert_eq!(st.input().unwrap().len(), 40);
    }

    #[test]
    fn build_input_rejects_mismatch() {
        assert!(matches!(
            build_input(&[(0.0, 0.0)], &[]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn empty_interior_senses_nothing() {
        let world = World::empty(100, 100);
        let v = Sensor::new(32, 2).sense(Point::new(50, 50), &world);
        assert_eq!(v.count_set(), 0);
    }

    #[test]
    fn outside_reads_as_wall() {
        let world = World::empty(10, 10);
        let v = Sensor::new(8, 2).sense(Point::new(0, 5), &world);
        assert_eq!(v.0, vec![true, false, false, false, true, false, true, false]);
    }

    #[test]
    fn zero_sizes_rejected() {
        let cfg = PredictorConfig { n: 0, ..Default::default() };
        assert!(matches!(TrajectoryPredictor::new(cfg, 2), Err(Error::Config(_))));
        let cfg = PredictorConfig { k: 0, ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
