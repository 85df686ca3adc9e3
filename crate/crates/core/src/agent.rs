//! Agent loop: object registry, trajectory forecasts, contact-point choice
//! and goal commands for the controller.
//!
//! The registry records one position per agent step, whether objects come
//! from the simulator or from pixel extraction, so the predictor learns
//! per-step dynamics at the agent's frame skip.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::hash::{Hash, Hasher};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::contact::{ContactTable, Temperature};
use crate::controller::{ControllerConfig, GoalController, GoalObservation};
use crate::env::{
    render, Action, ContactEvent, EnvKind, EnvState, Frame, ObjectClass,
    ObjectId, ObjectKind, ObjectRecord, Point, Rect, RewardEvent, ShapeBitmap, StepEvents,
};
use crate::error::{Error, Result};
use crate::kv::KvConfig;
use crate::pixel::{match_objects, templates_for, Expect, ShapeTemplate};
use crate::trajectory::{
    round_point, to_vec2, PredictorConfig, Sensor, TrajectoryForecast, TrajectoryPredictor, World,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Full,
    NoHer,
    Random,
    Tracker,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NoHer, Variant::Random, Variant::Tracker];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoHer => "no_her",
            Variant::Random => "random",
            Variant::Tracker => "tracker",
        }
    }

    pub fn learns(self) -> bool {
        matches!(self, Variant::Full | Variant::NoHer)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "no_her" => Ok(Variant::NoHer),
            "random" => Ok(Variant::Random),
            "tracker" | "tracker_baseline" => Ok(Variant::Tracker),
            other => Err(Error::Config(format!(
                "unknown variant `{other}` (expected full, no_her, random, tracker)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub variant: Variant,
    pub predictor: PredictorConfig,
    pub controller: ControllerConfig,
    pub temperature: Temperature,
    pub attribution_horizon: u64,
    pub contact_prior: f64,
    pub frame_skip: u32,
    pub replan_ticks: u64,
    /// Replan when the target strays this far (px) from the active forecast.
    pub replan_deviation: f64,
    pub warmup_steps: u64,
    /// Steps before an unreached practice goal is replaced.
    pub idle_goal_timeout: u64,
    /// Steps a lost object is extrapolated before it is dropped.
    pub coast_steps: u32,
    pub use_pixels: bool,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Full,
            predictor: PredictorConfig {
                n: 40,
                ..PredictorConfig::default()
            },
            controller: ControllerConfig::default(),
            temperature: Temperature::default(),
            attribution_horizon: ContactTable::DEFAULT_HORIZON,
            contact_prior: ContactTable::DEFAULT_PRIOR,
            frame_skip: crate::env::DEFAULT_FRAME_SKIP,
            replan_ticks: 8,
            replan_deviation: 3.0,
            warmup_steps: 500,
            idle_goal_timeout: 25,
            coast_steps: 5,
            use_pixels: false,
            seed: 0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        self.predictor.validate()?;
        self.controller.validate()?;
        if self.frame_skip == 0 || self.replan_ticks == 0 {
            return Err(Error::Config("frame_skip and replan_ticks must be positive".into()));
        }
        if !(self.temperature.value > 0.0 && self.temperature.floor > 0.0) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        Ok(())
    }

    /// Seed every learner from the agent seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.predictor.seed = seed.wrapping_mul(3).wrapping_add(1);
        self.controller.seed = seed.wrapping_mul(5).wrapping_add(2);
        self.controller.her = self.variant != Variant::NoHer;
        self
    }

    /// Read overrides from a key-value config. Unknown keys are errors.
    pub fn apply_kv(&mut self, kv: &KvConfig) -> Result<()> {
        const KNOWN: &[&str] = &[
            "variant", "seed", "frame_skip", "replan_ticks", "replan_deviation",
            "warmup_steps", "idle_goal_timeout", "coast_steps", "use_pixels", "tau", "tau_decay",
            "tau_floor", "horizon", "prior", "k", "m", "n", "trunk", "head_hidden",
            "predictor_batch", "predictor_warmup", "predictor_buffer", "quantize",
            "controller_k", "rho", "gamma", "target_sync", "capacity", "batch", "epsilon_steps",
            "epsilon_end", "updates_per_step", "her_samples", "learning_rate",
        ];
        for key in kv.keys() {
            if !KNOWN.contains(&key) {
                return Err(Error::Config(format!("unknown config key `{key}`")));
            }
        }
        if let Some(v) = kv.get_str("variant") {
            self.variant = v.parse()?;
        }
        kv.apply("seed", &mut self.seed)?;
        kv.apply("frame_skip", &mut self.frame_skip)?;
        kv.apply("replan_ticks", &mut self.replan_ticks)?;
        kv.apply("replan_deviation", &mut self.replan_deviation)?;
        kv.apply("warmup_steps", &mut self.warmup_steps)?;
        kv.apply("idle_goal_timeout", &mut self.idle_goal_timeout)?;
        kv.apply("coast_steps", &mut self.coast_steps)?;
        kv.apply("use_pixels", &mut self.use_pixels)?;
        kv.apply("tau", &mut self.temperature.value)?;
        kv.apply("tau_decay", &mut self.temperature.decay)?;
        kv.apply("tau_floor", &mut self.temperature.floor)?;
        kv.apply("horizon", &mut self.attribution_horizon)?;
        kv.apply("prior", &mut self.contact_prior)?;
        let p = &mut self.predictor;
        kv.apply("k", &mut p.k)?;
        kv.apply("m", &mut p.m)?;
        kv.apply("n", &mut p.n)?;
        if let Some(t) = kv.get_list::<usize>("trunk")? {
            p.trunk = t.clone();
            self.controller.trunk = t;
        }
        kv.apply("head_hidden", &mut p.head_hidden)?;
        kv.apply("predictor_batch", &mut p.batch_size)?;
        kv.apply("predictor_warmup", &mut p.warmup)?;
        kv.apply("predictor_buffer", &mut p.buffer_capacity)?;
        kv.apply("quantize", &mut p.quantize)?;
        let c = &mut self.controller;
        kv.apply("controller_k", &mut c.k)?;
        kv.apply("rho", &mut c.rho)?;
        kv.apply("gamma", &mut c.gamma)?;
        kv.apply("target_sync", &mut c.target_sync)?;
        kv.apply("capacity", &mut c.capacity)?;
        kv.apply("batch", &mut c.batch_size)?;
        kv.apply("epsilon_steps", &mut c.epsilon_steps)?;
        kv.apply("epsilon_end", &mut c.epsilon_end)?;
        kv.apply("updates_per_step", &mut c.updates_per_step)?;
        kv.apply("her_samples", &mut c.her_samples)?;
        if let Some(lr) = kv.get::<f64>("learning_rate")? {
            c.learning_rate = lr;
            p.learning_rate = lr;
        }
        self.validate()
    }

    /// Flat description for manifests.
    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::default();
        let p = &self.predictor;
        let c = &self.controller;
        kv.insert("variant", self.variant);
        kv.insert("seed", self.seed);
        kv.insert("frame_skip", self.frame_skip);
        kv.insert("replan_ticks", self.replan_ticks);
        kv.insert("replan_deviation", self.replan_deviation);
        kv.insert("warmup_steps", self.warmup_steps);
        kv.insert("idle_goal_timeout", self.idle_goal_timeout);
        kv.insert("coast_steps", self.coast_steps);
        kv.insert("use_pixels", self.use_pixels);
        kv.insert("tau", self.temperature.value);
        kv.insert("tau_decay", self.temperature.decay);
        kv.insert("tau_floor", self.temperature.floor);
        kv.insert("horizon", self.attribution_horizon);
        kv.insert("prior", self.contact_prior);
        kv.insert("k", p.k);
        kv.insert("m", p.m);
        kv.insert("n", p.n);
        kv.insert("trunk", p.trunk.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(","));
        kv.insert("head_hidden", p.head_hidden);
        kv.insert("predictor_batch", p.batch_size);
        kv.insert("predictor_warmup", p.warmup);
        kv.insert("predictor_buffer", p.buffer_capacity);
        kv.insert("quantize", p.quantize);
        kv.insert("controller_k", c.k);
        kv.insert("rho", c.rho);
        kv.insert("gamma", c.gamma);
        kv.insert("target_sync", c.target_sync);
        kv.insert("capacity", c.capacity);
        kv.insert("batch", c.batch_size);
        kv.insert("epsilon_steps", c.epsilon_steps);
        kv.insert("epsilon_end", c.epsilon_end);
        kv.insert("updates_per_step", c.updates_per_step);
        kv.insert("her_samples", c.her_samples);
        kv.insert("her", c.her);
        kv.insert("learning_rate", c.learning_rate);
        kv
    }
}

/// One object as seen by the agent in a step.
#[derive(Debug, Clone, PartialEq)]
pub struct PerceivedObject {
    pub id: ObjectId,
    pub class: ObjectClass,
    pub shape: Arc<ShapeBitmap>,
    pub position: Point,
}

/// Everything the agent receives after an environment step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Percept {
    pub objects: Vec<PerceivedObject>,
    pub rewards: Vec<RewardEvent>,
    pub contacts: Vec<ContactEvent>,
    pub tick: u64,
    pub terminal: bool,
    pub width: i32,
    pub height: i32,
}

impl Percept {
    pub fn from_state(state: &EnvState, events: &StepEvents) -> Self {
        Self {
            objects: state
                .objects
                .values()
                .map(|o| PerceivedObject {
                    id: o.id,
                    class: o.class,
                    shape: o.shape.clone(),
                    position: o.position(),
                })
                .collect(),
            rewards: events.rewards.clone(),
            contacts: events.contacts.clone(),
            tick: state.tick,
            terminal: state.terminal,
            width: state.width(),
            height: state.height(),
        }
    }

    /// Objects extracted from a rendered frame. Single-instance templates
    /// get stable ids; repeated static shapes are numbered in scan order.
    pub fn from_frame(
        frame: &Frame,
        previous: Option<&Frame>,
        templates: &[ShapeTemplate],
        state: &EnvState,
        events: &StepEvents,
    ) -> Result<Self> {
        let ex = match_objects(frame, previous, templates)?;
        let mut counters: BTreeMap<u32, u32> = BTreeMap::new();
        let objects = ex
            .detections
            .iter()
            .map(|d| {
                let t = &templates[templates.iter().position(|t| t.id == d.template).expect("known template")];
                let id = match t.expect {
                    Expect::One => ObjectId(1_000 + t.id),
                    Expect::Many => {
                        let n = counters.entry(t.id).or_default();
                        *n += 1;
                        ObjectId(100_000 + t.id * 10_000 + *n)
                    }
                };
                PerceivedObject {
                    id,
                    class: d.class,
                    shape: t.shape.clone(),
                    position: d.position,
                }
            })
            .collect();
        Ok(Self {
            objects,
            rewards: events.rewards.clone(),
            contacts: events.contacts.clone(),
            tick: state.tick,
            terminal: state.terminal,
            width: frame.width as i32,
            height: frame.height as i32,
        })
    }
}

/// Per-step object histories built from percepts.
#[derive(Debug, Clone, PartialEq)]
pub struct Registry {
    records: BTreeMap<ObjectId, ObjectRecord>,
    missing: BTreeMap<ObjectId, u32>,
    restart: bool,
    actions: Vec<Action>,
    history_cap: usize,
    jump_limit: i32,
    coast_steps: u32,
    width: i32,
    height: i32,
    /// Controllable area restored from a checkpoint.
    known_area: Option<Rect>,
}

impl Registry {
    pub fn new(actions: Vec<Action>, coast_steps: u32, jump_limit: i32) -> Self {
        Self {
            records: BTreeMap::new(),
            missing: BTreeMap::new(),
            restart: false,
            actions,
            history_cap: 32,
            jump_limit,
            coast_steps,
            width: 0,
            height: 0,
            known_area: None,
        }
    }

    /// Histories restart on the next update; observed areas persist.
    pub fn begin_episode(&mut self) {
        self.restart = true;
        self.missing.clear();
    }

    pub fn update(&mut self, percept: &Percept) {
        self.width = percept.width;
        self.height = percept.height;
        let restart = std::mem::take(&mut self.restart);
        let mut seen = Vec::with_capacity(percept.objects.len());
        for o in &percept.objects {
            seen.push(o.id);
            self.missing.remove(&o.id);
            match self.records.get_mut(&o.id) {
                Some(r) => {
                    let d = o.position - r.position();
                    if restart || d.x.abs() > self.jump_limit || d.y.abs() > self.jump_limit {
                        r.restart_at(o.position);
                    } else if o.class.kind() != ObjectKind::Static || d != Point::default() {
                        r.push_position(o.position);
                    }
                }
                None => {
                    let actions = if o.class.kind() == ObjectKind::Controllable {
                        self.actions.clone()
                    } else {
                        Vec::new()
                    };
                    let mut rec =
                        ObjectRecord::new(o.id, o.class, o.shape.clone(), o.position, actions, self.history_cap);
                    if let (ObjectKind::Controllable, Some(a)) = (rec.kind, self.known_area) {
                        rec.observed_area.include(Point::new(a.min_x, a.min_y));
                        rec.observed_area.include(Point::new(a.max_x, a.max_y));
                    }
                    self.records.insert(o.id, rec);
                }
            }
        }
        let absent: Vec<ObjectId> = self.records.keys().filter(|id| !seen.contains(id)).copied().collect();
        for id in absent {
            let rec = self.records.get_mut(&id).expect("present");
            let n = self.missing.entry(id).or_default();
            *n += 1;
            let coast = rec.kind != ObjectKind::Static && *n <= self.coast_steps && rec.velocity().is_some();
            if coast {
                let v = rec.velocity().expect("checked");
                let next = rec.position() + v;
                rec.push_position(next);
            } else if rec.kind != ObjectKind::Controllable {
                self.records.remove(&id);
                self.missing.remove(&id);
            }
        }
    }

    pub fn get(&self, id: ObjectId) -> Option<&ObjectRecord> {
        self.records.get(&id)
    }

    pub fn records(&self) -> impl Iterator<Item = &ObjectRecord> {
        self.records.values()
    }

    pub fn controllable(&self) -> Option<&ObjectRecord> {
        self.records.values().find(|r| r.kind == ObjectKind::Controllable)
    }

    pub fn controllable_mut(&mut self) -> Option<&mut ObjectRecord> {
        self.records.values_mut().find(|r| r.kind == ObjectKind::Controllable)
    }

    /// The tracked non-controllable target (the ball), if currently seen or coasting.
    pub fn target(&self) -> Option<&ObjectRecord> {
        self.records.values().find(|r| r.class == ObjectClass::Ball)
    }

    /// Whether an object is being extrapolated rather than observed.
    pub fn is_coasting(&self, id: ObjectId) -> bool {
        self.missing.get(&id).is_some_and(|n| *n > 0)
    }

    pub fn world(&self, exclude: &[ObjectId]) -> World {
        let mut w = World::empty(self.width, self.height);
        for r in self.records.values().filter(|r| !exclude.contains(&r.id)) {
            w.add_shape(&r.shape, r.position());
        }
        w
    }
}

/// A commanded goal for the controllable object.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GoalCommand {
    pub goal: Point,
    /// Forecast step (1-based) at which the target reaches the area.
    pub intercept: usize,
    pub offset: Point,
    pub forecast_id: u64,
}

/// Clip the segment `a -> b` to `r`; returns the entry point.
fn segment_entry(a: (f64, f64), b: (f64, f64), r: &Rect) -> Option<(f64, f64)> {
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    let d = (b.0 - a.0, b.1 - a.1);
    let checks = [
        (-d.0, a.0 - r.min_x as f64),
        (d.0, r.max_x as f64 - a.0),
        (-d.1, a.1 - r.min_y as f64),
        (d.1, r.max_y as f64 - a.1),
    ];
    for (p, q) in checks {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let t = q / p;
            if p < 0.0 {
                t0 = t0.max(t);
            } else {
                t1 = t1.min(t);
            }
        }
    }
    (t0 <= t1).then(|| (a.0 + t0 * d.0, a.1 + t0 * d.1))
}

/// First point where the forecast reaches the controllable's accessible
/// area, turned into a goal for the shape's centre.
///
/// The accessible area is the observed area grown by the reach of both
/// shapes, i.e. every target position that touches the controllable at some
/// admissible place. A forecast point inside it is taken as is; a step that
/// jumps across it uses the segment's entry point. The goal is the
/// intersection minus the contact offset, clamped into the observed area;
/// the returned offset is adjusted so `goal + offset` equals the
/// intersection exactly.
pub fn compute_goal(
    forecast: &TrajectoryForecast,
    controllable: &ObjectRecord,
    target_shape: &ShapeBitmap,
    offset: Point,
    forecast_id: u64,
) -> Option<GoalCommand> {
    let area = controllable.observed_area;
    let mx = controllable.shape.half_width() + target_shape.half_width() + 1;
    let my = controllable.shape.half_height() + target_shape.half_height() + 1;
    let band = Rect {
        min_x: area.min_x - mx,
        min_y: area.min_y - my,
        max_x: area.max_x + mx,
        max_y: area.max_y + my,
    };
    let mut prev = forecast.start;
    for (i, &p) in forecast.positions.iter().enumerate() {
        let hit = if band.contains_f(p.0, p.1) {
            Some(p)
        } else {
            segment_entry(prev, p, &band)
        };
        prev = p;
        if let Some(h) = hit {
            let inter = round_point(h);
            let raw = inter - offset;
            let goal = Point::new(
                raw.x.clamp(area.min_x, area.max_x),
                raw.y.clamp(area.min_y, area.max_y),
            );
            return Some(GoalCommand {
                goal,
                intercept: i + 1,
                offset: inter - goal,
                forecast_id,
            });
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq)]
struct ActiveGoal {
    command: GoalCommand,
    forecast: TrajectoryForecast,
    issued_step: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AgentStats {
    pub predictor_loss_sum: f64,
    pub predictor_updates: u64,
    pub controller_loss_sum: f64,
    pub controller_updates: u64,
    pub goals_issued: u64,
    pub forecasts: u64,
    /// Contacts that happened while a goal was active.
    pub goals_checked: u64,
    /// ... of which the controllable was within the goal radius.
    pub goals_met: u64,
}

/// The full agent. Cloning gives an independent snapshot.
#[derive(Debug, Clone)]
pub struct Agent {
    config: AgentConfig,
    env: EnvKind,
    actions: Vec<Action>,
    lane_center: i32,
    registry: Registry,
    predictor: TrajectoryPredictor,
    controller: GoalController,
    contacts: ContactTable,
    temperature: Temperature,
    rng: ChaCha8Rng,
    learning: bool,
    steps: u64,
    ticks_since_plan: u64,
    last_tick: u64,
    active: Option<ActiveGoal>,
    approach_offset: Option<Point>,
    idle_goal: Option<(Point, u64)>,
    sticky: (Action, u32),
    pending: Option<(GoalObservation, Action)>,
    last_goal: Option<(f64, f64)>,
    action_history: Vec<Action>,
    forecast_counter: u64,
    stats: AgentStats,
    templates: Vec<ShapeTemplate>,
    prev_frame: Option<Frame>,
    log: Option<Arc<std::sync::Mutex<BufWriter<File>>>>,
}

impl Agent {
    /// Build an agent for the environment `state` belongs to.
    pub fn new(config: AgentConfig, state: &EnvState) -> Result<Self> {
        config.validate()?;
        let actions = state.action_set().to_vec();
        let ball_shape = state
            .ball()
            .map(|b| b.shape.clone())
            .ok_or_else(|| Error::Config("environment has no ball".into()))?;
        let sensor = Sensor::for_shape(config.predictor.m, &ball_shape);
        let predictor = TrajectoryPredictor::new(config.predictor.clone(), sensor.base_radius)?;
        let extent = (state.width() as f64, state.height() as f64);
        let controller = GoalController::new(config.controller.clone(), actions.clone(), extent)?;
        let contacts = ContactTable::new(
            &state.controllable().shape,
            config.attribution_horizon,
            config.contact_prior,
        )?;
        let (lo, hi) = state.layout.paddle_lane();
        // a respawn moves the ball farther than it can travel in one step
        let jump = 3 * state.layout.ball_speed_y.max(state.layout.paddle_speed) * config.frame_skip as i32;
        Ok(Self {
            registry: Registry::new(actions.clone(), config.coast_steps, jump),
            action_history: vec![Action::Noop; config.controller.k],
            rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0x6167_656e),
            temperature: config.temperature,
            learning: config.variant.learns(),
            env: state.env(),
            lane_center: (lo + hi) / 2,
            templates: templates_for(state),
            actions,
            predictor,
            controller,
            contacts,
            steps: 0,
            ticks_since_plan: 0,
            last_tick: 0,
            active: None,
            approach_offset: None,
            idle_goal: None,
            sticky: (Action::Noop, 0),
            pending: None,
            last_goal: None,
            forecast_counter: 0,
            stats: AgentStats::default(),
            prev_frame: None,
            log: None,
            config,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn env(&self) -> EnvKind {
        self.env
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn predictor(&self) -> &TrajectoryPredictor {
        &self.predictor
    }

    pub fn controller(&self) -> &GoalController {
        &self.controller
    }

    pub fn contacts(&self) -> &ContactTable {
        &self.contacts
    }

    pub fn stats(&self) -> &AgentStats {
        &self.stats
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn temperature(&self) -> f64 {
        self.temperature.value
    }

    pub fn active_goal(&self) -> Option<GoalCommand> {
        self.active.as_ref().map(|a| a.command)
    }

    pub fn active_forecast(&self) -> Option<&TrajectoryForecast> {
        self.active.as_ref().map(|a| &a.forecast)
    }

    pub fn is_learning(&self) -> bool {
        self.learning
    }

    /// Frozen policy: greedy controller, coldest sampling temperature, no updates.
    pub fn freeze(&mut self) {
        self.learning = false;
        self.temperature.value = self.temperature.floor;
        self.log = None;
    }

    /// Write one JSON object per step to `path`.
    pub fn enable_debug_log(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.log = Some(Arc::new(std::sync::Mutex::new(BufWriter::new(file))));
        Ok(())
    }

    /// Hash of every learned quantity; equal for behaviourally identical snapshots.
    pub fn fingerprint(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.predictor.net().fingerprint().hash(&mut h);
        self.controller.net().fingerprint().hash(&mut h);
        for b in self.contacts.buckets() {
            let s = self.contacts.stats(b).expect("in range");
            s.count.hash(&mut h);
            s.mean.to_bits().hash(&mut h);
        }
        if let Some(c) = self.registry.controllable() {
            let a = c.observed_area;
            (a.min_x, a.min_y, a.max_x, a.max_y).hash(&mut h);
        }
        self.steps.hash(&mut h);
        self.temperature.value.to_bits().hash(&mut h);
        h.finish()
    }

    /// Build the percept for `state` (from pixels when configured).
    pub fn perceive(&mut self, state: &EnvState, events: &StepEvents) -> Result<Percept> {
        if !self.config.use_pixels {
            return Ok(Percept::from_state(state, events));
        }
        let frame = render(state);
        let p = Percept::from_frame(&frame, self.prev_frame.as_ref(), &self.templates, state, events)?;
        self.prev_frame = Some(frame);
        Ok(p)
    }

    pub fn begin_episode(&mut self) {
        self.registry.begin_episode();
        self.active = None;
        self.approach_offset = None;
        self.idle_goal = None;
        self.pending = None;
        self.last_goal = None;
        self.prev_frame = None;
        self.ticks_since_plan = 0;
        self.action_history = vec![Action::Noop; self.config.controller.k];
    }

    pub fn end_episode(&mut self) {
        if self.learning {
            self.controller.finish_episode();
            self.contacts.flush();
            self.temperature.end_episode();
        }
        if let Some(log) = &self.log {
            let _ = log.lock().expect("log lock").flush();
        }
    }

    fn random_action(&mut self) -> Action {
        self.actions[self.rng.gen_range(0..self.actions.len())]
    }

    fn towards(&self, from: i32, to: i32) -> Action {
        if to < from - 1 {
            Action::Left
        } else if to > from + 1 {
            Action::Right
        } else {
            Action::Noop
        }
    }

    fn close_transition(&mut self, percept: &Percept, position: Point) -> Result<()> {
        let Some((obs, action)) = self.pending.take() else {
            return Ok(());
        };
        let next = obs.advance(action, to_vec2(position));
        let reached = self.controller.reward(next.current, next.goal) >= 1.0;
        self.action_history = next.action_history.clone();
        if self.learning {
            self.controller.record(obs, action, next, percept.terminal);
            for _ in 0..self.config.controller.updates_per_step {
                if let Some(l) = self.controller.learn_step()? {
                    self.stats.controller_loss_sum += l;
                    self.stats.controller_updates += 1;
                }
            }
            if reached || percept.terminal {
                self.controller.finish_episode();
            }
        }
        Ok(())
    }

    fn replan(&mut self, target: &ObjectRecord, controllable: &ObjectRecord) -> Result<()> {
        let Some(seed) = self.predictor.rollout_seed(target.id) else {
            self.active = None;
            return Ok(());
        };
        let world = self.registry.world(&[target.id, controllable.id]);
        let forecast = self.predictor.predict_trajectory(&seed, &world)?;
        self.stats.forecasts += 1;
        self.forecast_counter += 1;
        let offset = match self.approach_offset {
            Some(o) => o,
            None => {
                let o = self.contacts.sample_contact_point(self.temperature.value, &mut self.rng);
                self.approach_offset = Some(o);
                o
            }
        };
        let command = compute_goal(&forecast, controllable, &target.shape, offset, self.forecast_counter);
        self.active = command.map(|command| {
            if self.active.as_ref().map(|a| a.command.goal) != Some(command.goal) {
                self.stats.goals_issued += 1;
            }
            ActiveGoal {
                command,
                forecast,
                issued_step: self.steps,
            }
        });
        Ok(())
    }

    /// One agent step: learn from the percept and choose the next action.
    pub fn tick(&mut self, percept: &Percept) -> Result<Action> {
        self.registry.update(percept);
        let elapsed = percept.tick.saturating_sub(self.last_tick);
        self.last_tick = percept.tick;
        let Some(controllable) = self.registry.controllable().cloned() else {
            self.pending = None;
            return Ok(Action::Noop);
        };
        let target = self.registry.target().cloned();

        if self.learning {
            if let Some(t) = &target {
                if !self.registry.is_coasting(t.id) {
                    let world = self.registry.world(&[t.id]);
                    if let Some(l) = self.predictor.observe_and_train(t, &world)? {
                        self.stats.predictor_loss_sum += l;
                        self.stats.predictor_updates += 1;
                    }
                }
            }
            for c in &percept.contacts {
                self.contacts.record_contact(c);
            }
            self.contacts.settle_rewards(&percept.rewards, percept.tick);
        } else if let (true, Some(t)) = (self.config.variant.learns(), &target) {
            // keep rollout queues current without training
            let world = self.registry.world(&[t.id]);
            self.predictor.observe(t, &world)?;
        }

        // contact events only ever involve the controllable object
        let touched = !percept.contacts.is_empty();
        if touched {
            if let Some(a) = &self.active {
                self.stats.goals_checked += 1;
                if crate::controller::distance(to_vec2(controllable.position()), to_vec2(a.command.goal))
                    <= self.config.controller.rho
                {
                    self.stats.goals_met += 1;
                }
            }
        }

        self.close_transition(percept, controllable.position())?;
        if percept.terminal {
            self.write_log(percept, &controllable, target.as_ref(), None, Action::Noop);
            return Ok(Action::Noop);
        }
        self.steps += 1;

        let action = match self.config.variant {
            Variant::Random => self.random_action(),
            Variant::Tracker => match &target {
                Some(t) => self.towards(controllable.position().x, t.position().x),
                None => Action::Noop,
            },
            Variant::Full | Variant::NoHer => {
                self.learned_action(elapsed, touched, &controllable, target.as_ref())?
            }
        };
        let goal = self.pending.as_ref().map(|p| round_point(p.0.goal));
        self.write_log(percept, &controllable, target.as_ref(), goal, action);
        Ok(action)
    }

    fn learned_action(
        &mut self,
        elapsed: u64,
        touched: bool,
        controllable: &ObjectRecord,
        target: Option<&ObjectRecord>,
    ) -> Result<Action> {
        let here = controllable.position();

        // Warmup: sticky random actions, stored as practice toward a random goal.
        if self.learning && self.steps <= self.config.warmup_steps {
            if self.sticky.1 == 0 {
                let a = self.random_action();
                self.sticky = (a, self.rng.gen_range(1..=16));
            }
            self.sticky.1 -= 1;
            let goal = self.practice_goal(controllable);
            return self.command(here, goal, Some(self.sticky.0));
        }

        if touched {
            self.active = None;
            self.approach_offset = None;
        }
        self.ticks_since_plan += elapsed.max(1);
        if let Some(a) = &self.active {
            let age = self.steps - a.issued_step;
            if age as usize > a.command.intercept + 2 {
                self.active = None;
            }
        }
        match target {
            Some(t) if !self.registry.is_coasting(t.id) => {
                let deviation = self.active.as_ref().and_then(|a| {
                    let i = (self.steps - a.issued_step) as usize;
                    a.forecast.positions.get(i.checked_sub(1)?).map(|p| {
                        crate::controller::distance(*p, to_vec2(t.position()))
                    })
                });
                let stale = self.ticks_since_plan >= self.config.replan_ticks;
                if self.active.is_none()
                    || stale
                    || deviation.is_some_and(|d| d > self.config.replan_deviation)
                {
                    self.replan(t, controllable)?;
                    self.ticks_since_plan = 0;
                }
            }
            _ => self.active = None,
        }

        if let Some(a) = &self.active {
            let goal = a.command.goal;
            self.idle_goal = None;
            return self.command(here, goal, None);
        }
        self.approach_offset = None;
        if self.learning {
            let goal = self.practice_goal(controllable);
            self.command(here, goal, None)
        } else {
            self.pending = None;
            self.last_goal = None;
            Ok(self.towards(here.x, self.lane_center))
        }
    }

    /// Self-generated goal inside the observed area, replaced when reached
    /// or stale.
    fn practice_goal(&mut self, controllable: &ObjectRecord) -> Point {
        let here = controllable.position();
        let rho = self.config.controller.rho;
        let keep = self.idle_goal.is_some_and(|(g, deadline)| {
            self.steps < deadline && crate::controller::distance(to_vec2(here), to_vec2(g)) > rho
        });
        if !keep {
            let area = controllable.observed_area;
            let g = Point::new(
                self.rng.gen_range(area.min_x..=area.max_x),
                self.rng.gen_range(area.min_y..=area.max_y),
            );
            self.idle_goal = Some((g, self.steps + self.config.idle_goal_timeout));
        }
        self.idle_goal.expect("set above").0
    }

    /// Act toward `goal` (or take `forced`) and remember the transition.
    fn command(&mut self, here: Point, goal: Point, forced: Option<Action>) -> Result<Action> {
        let obs = GoalObservation {
            current: to_vec2(here),
            goal: to_vec2(goal),
            action_history: self.action_history.clone(),
        };
        if self.learning {
            if self.last_goal.is_some_and(|g| g != obs.goal) {
                self.controller.finish_episode();
            }
        }
        let action = match forced {
            Some(a) => a,
            None if self.learning => {
                let eps = self.controller.epsilon();
                self.controller.act(&obs, eps)?
            }
            None => self.controller.greedy(&obs)?,
        };
        self.last_goal = Some(obs.goal);
        self.pending = Some((obs, action));
        Ok(action)
    }

    fn write_log(
        &self,
        percept: &Percept,
        controllable: &ObjectRecord,
        target: Option<&ObjectRecord>,
        goal: Option<Point>,
        action: Action,
    ) {
        let Some(log) = &self.log else {
            return;
        };
        let pos = |p: Point| serde_json::json!([p.x, p.y]);
        let line = serde_json::json!({
            "tick": percept.tick,
            "step": self.steps,
            "controllable": pos(controllable.position()),
            "target": target.map(|t| pos(t.position())),
            "goal": goal.map(pos),
            "action": action.label(),
            "predictor_loss": if self.stats.predictor_updates > 0 { Some(self.stats.predictor_loss_sum / self.stats.predictor_updates as f64) } else { None },
            "controller_loss": if self.stats.controller_updates > 0 { Some(self.stats.controller_loss_sum / self.stats.controller_updates as f64) } else { None },
        });
        let mut w = log.lock().expect("log lock");
        let _ = writeln!(w, "{line}");
    }
}

/// Outcome of one episode.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EpisodeSummary {
    pub score: i64,
    pub steps: u64,
    pub hits: u64,
    pub misses: u64,
    pub rallies: u64,
    pub rally_hits: u64,
    pub terminal: bool,
}

impl EpisodeSummary {
    /// Hits over hits plus misses; `None` before any contact.
    pub fn interception_rate(&self) -> Option<f64> {
        let n = self.hits + self.misses;
        (n > 0).then(|| self.hits as f64 / n as f64)
    }

    pub fn mean_rally_length(&self) -> Option<f64> {
        (self.rallies > 0).then(|| self.rally_hits as f64 / self.rallies as f64)
    }
}

/// Run the agent in `state` until the episode ends or `max_steps` agent steps pass.
pub fn run_episode(state: &mut EnvState, agent: &mut Agent, max_steps: u64) -> Result<EpisodeSummary> {
    if max_steps == 0 {
        return Err(Error::Config("episode step budget must be positive".into()));
    }
    if state.env() != agent.env() {
        return Err(Error::Config(format!(
            "agent built for {} cannot play {}",
            agent.env(),
            state.env()
        )));
    }
    let fs = agent.config().frame_skip;
    let start_score = state.score;
    let mut out = EpisodeSummary::default();
    let mut rally = 0u64;
    agent.begin_episode();
    let mut percept = agent.perceive(state, &StepEvents::default())?;
    while !state.terminal && out.steps < max_steps {
        let action = agent.tick(&percept)?;
        let events = state.step(action, fs)?;
        out.steps += 1;
        for c in &events.contacts {
            match c.kind {
                crate::env::ContactKind::Hit => {
                    out.hits += 1;
                    rally += 1;
                }
                crate::env::ContactKind::Miss => out.misses += 1,
            }
        }
        if !events.serves.is_empty() {
            out.rallies += 1;
            out.rally_hits += rally;
            rally = 0;
        }
        percept = agent.perceive(state, &events)?;
    }
    if rally > 0 {
        out.rallies += 1;
        out.rally_hits += rally;
    }
    if state.terminal {
        agent.tick(&percept)?;
    }
    agent.end_episode();
    out.score = state.score - start_score;
    out.terminal = state.terminal;
    Ok(out)
}

/// Aggregate of frozen-policy episodes.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EvalMetrics {
    pub episodes: u64,
    pub mean_score: f64,
    pub max_score: i64,
    pub hits: u64,
    pub misses: u64,
    pub interception_rate: f64,
    pub mean_rally_length: f64,
    pub goal_success: f64,
}

impl Agent {
    /// Frozen copy holding only learned quantities: live tracks, control
    /// state and randomness are rebuilt, so a restored checkpoint evaluates
    /// exactly like the agent that wrote it.
    fn eval_snapshot(&self, seed: u64) -> Agent {
        let mut agent = self.clone();
        agent.freeze();
        let area = self.registry.controllable().map(|c| c.observed_area).or(self.registry.known_area);
        agent.registry = Registry::new(self.actions.clone(), self.config.coast_steps, self.registry.jump_limit);
        agent.registry.known_area = area;
        agent.predictor.forget_all();
        agent.rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6576_616c);
        agent.action_history = vec![Action::Noop; self.config.controller.k];
        agent.ticks_since_plan = 0;
        agent.last_tick = 0;
        agent.active = None;
        agent.approach_offset = None;
        agent.idle_goal = None;
        agent.sticky = (Action::Noop, 0);
        agent.pending = None;
        agent.last_goal = None;
        agent.forecast_counter = 0;
        agent.prev_frame = None;
        agent.stats = AgentStats::default();
        agent
    }

    /// Greedy evaluation on fresh episodes; `self` is left untouched.
    pub fn evaluate(&self, episodes: u64, seed: u64, max_steps: u64) -> Result<EvalMetrics> {
        if episodes == 0 {
            return Err(Error::Config("evaluation needs at least one episode".into()));
        }
        let mut agent = self.eval_snapshot(seed);
        let mut m = EvalMetrics {
            episodes,
            max_score: i64::MIN,
            ..EvalMetrics::default()
        };
        let (mut rallies, mut rally_hits, mut total) = (0u64, 0u64, 0i64);
        for e in 0..episodes {
            let mut state = crate::env::reset(self.env, seed.wrapping_add(e));
            let s = run_episode(&mut state, &mut agent, max_steps)?;
            total += s.score;
            m.max_score = m.max_score.max(s.score);
            m.hits += s.hits;
            m.misses += s.misses;
            rallies += s.rallies;
            rally_hits += s.rally_hits;
        }
        m.mean_score = total as f64 / episodes as f64;
        let contacts = m.hits + m.misses;
        m.interception_rate = if contacts > 0 { m.hits as f64 / contacts as f64 } else { 0.0 };
        m.mean_rally_length = if rallies > 0 { rally_hits as f64 / rallies as f64 } else { 0.0 };
        m.goal_success = if agent.stats.goals_checked > 0 {
            agent.stats.goals_met as f64 / agent.stats.goals_checked as f64
        } else {
            0.0
        };
        Ok(m)
    }

    /// Write every learned component into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.predictor.save(dir.join("predictor.bin"))?;
        self.controller.save(dir.join("controller"))?;
        self.contacts.save_csv(dir.join("contacts.csv"))?;
        let mut kv = self.config.to_kv();
        kv.insert("env", self.env);
        kv.insert("steps", self.steps);
        kv.insert("temperature", self.temperature.value);
        if let Some(a) = self.registry.controllable().map(|c| c.observed_area).or(self.registry.known_area) {
            kv.insert("area", format!("{},{},{},{}", a.min_x, a.min_y, a.max_x, a.max_y));
        }
        let path = dir.join("agent.txt");
        std::fs::write(&path, kv.to_text()).map_err(|e| Error::io(&path, e))
    }

    /// Rebuild an agent from a directory written by [`Agent::save`].
    pub fn from_checkpoint(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let kv = KvConfig::load(dir.join("agent.txt"))?;
        let env: EnvKind = kv
            .get("env")?
            .ok_or_else(|| Error::Config("checkpoint lacks `env`".into()))?;
        let mut config = AgentConfig::default();
        config.apply_kv(&kv.without(&["env", "steps", "temperature", "area", "her"]))?;
        let config = config.clone().with_seed(config.seed);
        let mut agent = Agent::new(config, &crate::env::reset(env, 0))?;
        agent.load(dir)?;
        Ok(agent)
    }

    /// Restore learned components saved by [`Agent::save`] into an agent
    /// built with the same configuration.
    pub fn load(&mut self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let kv = KvConfig::load(dir.join("agent.txt"))?;
        let env: EnvKind = kv
            .get("env")?
            .ok_or_else(|| Error::Config("checkpoint lacks `env`".into()))?;
        if env != self.env {
            return Err(Error::Config(format!("checkpoint is for {env}, agent plays {}", self.env)));
        }
        self.predictor.load_weights(dir.join("predictor.bin"))?;
        self.controller.load(dir.join("controller"))?;
        self.contacts.load_csv(dir.join("contacts.csv"))?;
        kv.apply("steps", &mut self.steps)?;
        kv.apply("temperature", &mut self.temperature.value)?;
        if let Some(v) = kv.get_list::<i32>("area")? {
            let [min_x, min_y, max_x, max_y] = v[..] else {
                return Err(Error::Config("`area` needs four integers".into()));
            };
            let area = Rect { min_x, min_y, max_x, max_y };
            self.registry.known_area = Some(area);
            if let Some(c) = self.registry.controllable_mut() {
                c.observed_area.include(Point::new(min_x, min_y));
                c.observed_area.include(Point::new(max_x, max_y));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::reset;
    use crate::trajectory::PredictorConfig;

    fn forecast(start: (f64, f64), v: (f64, f64), n: usize) -> TrajectoryForecast {
        let positions = (1..=n).map(|i| (start.0 + v.0 * i as f64, start.1 + v.1 * i as f64)).collect();
        TrajectoryForecast {
            start,
            positions,
            velocities: vec![v; n],
            clamped: vec![false; n],
        }
    }

    fn paddle(area: Rect) -> ObjectRecord {
        let shape = Arc::new(ShapeBitmap::rect(16, 4));
        let mut r = ObjectRecord::new(
            ObjectId(1),
            ObjectClass::Paddle,
            shape,
            Point::new(area.min_x, area.min_y),
            vec![Action::Noop, Action::Left, Action::Right],
            8,
        );
        r.push_position(Point::new(area.max_x, area.max_y));
        r
    }

    #[test]
    fn goal_lands_on_first_band_entry() {
        let p = paddle(Rect { min_x: 20, min_y: 180, max_x: 140, max_y: 180 });
        let ball = ShapeBitmap::rect(2, 2);
        let f = forecast((60.0, 100.0), (1.0, 4.0), 30);
        let g = compute_goal(&f, &p, &ball, Point::new(0, 0), 7).expect("reaches the lane");
        // band starts at 180 - (2 + 1 + 1) = 176 => step 19 at y = 176
        assert_eq!(g.intercept, 19);
        assert_eq!(g.goal, Point::new(79, 180));
        assert_eq!(g.goal + g.offset, Point::new(79, 176));
        assert_eq!(g.forecast_id, 7);
    }

    #[test]
    fn goal_is_clamped_and_offset_compensates() {
        let p = paddle(Rect { min_x: 20, min_y: 180, max_x: 140, max_y: 180 });
        let ball = ShapeBitmap::rect(2, 2);
        let f = forecast((10.0, 100.0), (0.0, 4.0), 30);
        let g = compute_goal(&f, &p, &ball, Point::new(-5, 0), 0).unwrap();
        assert_eq!(g.goal.x, 20);
        assert_eq!(g.goal + g.offset, Point::new(10, 176));
    }

    #[test]
    fn forecast_jumping_over_band_uses_segment_entry() {
        let p = paddle(Rect { min_x: 20, min_y: 180, max_x: 140, max_y: 180 });
        let ball = ShapeBitmap::rect(2, 2);
        // steps of 20 px straddle the 9 px band
        let f = forecast((50.0, 130.0), (0.0, 20.0), 5);
        let g = compute_goal(&f, &p, &ball, Point::default(), 0).unwrap();
        assert_eq!(g.intercept, 3);
        assert_eq!(g.goal + g.offset, Point::new(50, 176));
    }

    #[test]
    fn forecast_moving_away_gives_no_goal() {
        let p = paddle(Rect { min_x: 20, min_y: 180, max_x: 140, max_y: 180 });
        let f = forecast((60.0, 100.0), (1.0, -4.0), 20);
        assert!(compute_goal(&f, &p, &ShapeBitmap::rect(2, 2), Point::default(), 0).is_none());
    }

    #[test]
    fn registry_coasts_then_drops_lost_objects() {
        let state = reset(EnvKind::Duel, 1);
        let mut reg = Registry::new(state.action_set().to_vec(), 2, 12);
        let mut p = Percept::from_state(&state, &StepEvents::default());
        reg.update(&p);
        let ball = p.objects.iter().position(|o| o.class == ObjectClass::Ball).unwrap();
        p.objects[ball].position = p.objects[ball].position + Point::new(2, 2);
        reg.update(&p);
        let id = p.objects[ball].id;
        let seen = reg.get(id).unwrap().position();
        p.objects.remove(ball);
        reg.update(&p);
        assert!(reg.is_coasting(id));
        assert_eq!(reg.get(id).unwrap().position(), seen + Point::new(2, 2));
        reg.update(&p);
        reg.update(&p);
        assert!(reg.get(id).is_none());
    }

    #[test]
    fn registry_restarts_history_on_jump() {
        let state = reset(EnvKind::Duel, 1);
        let mut reg = Registry::new(state.action_set().to_vec(), 2, 12);
        let mut p = Percept::from_state(&state, &StepEvents::default());
        reg.update(&p);
        let ball = p.objects.iter().position(|o| o.class == ObjectClass::Ball).unwrap();
        p.objects[ball].position = p.objects[ball].position + Point::new(0, 40);
        reg.update(&p);
        let r = reg.get(p.objects[ball].id).unwrap();
        assert_eq!(r.position_history.len(), 1);
        assert!(r.velocity().is_none());
    }

    #[test]
    fn evaluation_leaves_agent_unchanged() {
        let state = reset(EnvKind::Duel, 3);
        let cfg = AgentConfig {
            predictor: PredictorConfig { n: 10, warmup: 10, ..AgentConfig::default().predictor },
            warmup_steps: 20,
            ..AgentConfig::default()
        }
        .with_seed(3);
        let mut agent = Agent::new(cfg, &state).unwrap();
        let mut s = reset(EnvKind::Duel, 3);
        run_episode(&mut s, &mut agent, 60).unwrap();
        let before = agent.fingerprint();
        agent.evaluate(1, 99, 40).unwrap();
        assert_eq!(agent.fingerprint(), before);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("best".parse::<Variant>().is_err());
    }
}
