//! Goal-conditioned action-value controller for the controllable object,
//! trained by temporal-difference updates with hindsight relabelling.
//!
//! Input: current position and goal, each normalised to `[-1, 1]` by the
//! playfield size, followed by the last `k` actions one-hot encoded.

use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{reset, Action, EnvKind, EnvState};
use crate::error::{Error, Result};
use crate::kv::KvConfig;
use crate::neural::{Adam, DenseNet, HeadSpec, Topology, TrainBatch};
use crate::trajectory::Vec2;

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerConfig {
    pub k: usize,
    /// Goal radius in pixels.
    pub rho: f64,
    pub gamma: f64,
    pub target_sync: u64,
    pub capacity: usize,
    pub batch_size: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_steps: u64,
    pub learning_rate: f64,
    pub trunk: Vec<usize>,
    pub her: bool,
    pub her_samples: usize,
    /// Learning updates per recorded environment step.
    pub updates_per_step: usize,
    pub seed: u64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            k: 4,
            rho: 2.0,
            gamma: 0.98,
            target_sync: 200,
            capacity: 50_000,
            batch_size: 64,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_steps: 5_000,
            learning_rate: 1e-3,
            trunk: vec![64, 64],
            her: true,
            her_samples: 4,
            updates_per_step: 4,
            seed: 0,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("controller history k must be at least 1".into()));
        }
        if !(self.rho >= 0.0) || !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config("rho must be >= 0 and gamma in [0, 1]".into()));
        }
        if self.batch_size == 0 || self.capacity < self.batch_size || self.target_sync == 0 {
            return Err(Error::Config(
                "batch size, capacity and target sync must be positive with capacity >= batch".into(),
            ));
        }
        Ok(())
    }

    pub fn topology(&self, actions: usize) -> Topology {
        Topology {
            input: 4 + self.k * actions,
            trunk: self.trunk.clone(),
            heads: vec![HeadSpec::new("q", vec![], actions)],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GoalObservation {
    pub current: Vec2,
    pub goal: Vec2,
    /// Oldest first; exactly `k` entries.
    pub action_history: Vec<Action>,
}

impl GoalObservation {
    pub fn new(current: Vec2, goal: Vec2, k: usize) -> Self {
        Self {
            current,
            goal,
            action_history: vec![Action::Noop; k],
        }
    }

    /// Observation after taking `action` and arriving at `next`.
    pub fn advance(&self, action: Action, next: Vec2) -> Self {
        let mut history = self.action_history.clone();
        history.remove(0);
        history.push(action);
        Self {
            current: next,
            goal: self.goal,
            action_history: history,
        }
    }

    pub fn distance_to_goal(&self) -> f64 {
        distance(self.current, self.goal)
    }
}

pub fn distance(a: Vec2, b: Vec2) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GoalTransition {
    pub observation: GoalObservation,
    pub action: Action,
    pub reward: f64,
    pub next: GoalObservation,
    /// Environment-side termination; hindsight copies keep it unchanged.
    pub done: bool,
}

impl GoalTransition {
    pub fn with_goal(&self, goal: Vec2, rho: f64) -> Self {
        let mut t = self.clone();
        t.observation.goal = goal;
        t.next.goal = goal;
        t.reward = goal_reward(t.next.current, goal, rho);
        t
    }
}

pub fn goal_reward(position: Vec2, goal: Vec2, rho: f64) -> f64 {
    if distance(position, goal) <= rho {
        1.0
    } else {
        0.0
    }
}

/// Fixed-capacity ring of transitions with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayStore {
    items: Vec<GoalTransition>,
    next: usize,
    capacity: usize,
    episodes: u64,
}

impl ReplayStore {
    pub fn new(capacity: usize) -> Self {
        Self {
            items: Vec::new(),
            next: 0,
            capacity,
            episodes: 0,
        }
    }

    pub fn push(&mut self, t: GoalTransition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn push_episode(&mut self, episode: Vec<GoalTransition>) {
        self.episodes += 1;
        for t in episode {
            self.push(t);
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    pub fn items(&self) -> &[GoalTransition] {
        &self.items
    }

    pub fn sample_index(&self, rng: &mut impl Rng) -> usize {
        rng.gen_range(0..self.items.len())
    }
}

#[derive(Debug, Clone)]
pub struct GoalController {
    config: ControllerConfig,
    actions: Vec<Action>,
    extent: Vec2,
    net: DenseNet,
    target: DenseNet,
    adam: Adam,
    store: ReplayStore,
    episode: Vec<GoalTransition>,
    rng: ChaCha8Rng,
    steps: u64,
    updates: u64,
}

impl GoalController {
    /// `extent` is the playfield size used for normalisation.
    pub fn new(config: ControllerConfig, actions: Vec<Action>, extent: Vec2) -> Result<Self> {
        config.validate()?;
        if actions.is_empty() {
            return Err(Error::Config("controller needs at least one action".into()));
        }
        let net = DenseNet::new(config.topology(actions.len()), config.seed)?;
        Ok(Self {
            target: net.clone(),
            adam: Adam::new(&net, config.learning_rate),
            net,
            store: ReplayStore::new(config.capacity),
            episode: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0x676f_616c),
            steps: 0,
            updates: 0,
            actions,
            extent,
            config,
        })
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    pub fn net(&self) -> &DenseNet {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut DenseNet {
        &mut self.net
    }

    pub fn store(&self) -> &ReplayStore {
        &self.store
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    fn normalise(&self, p: Vec2) -> Vec2 {
        let sx = (self.extent.0 - 1.0).max(1.0);
        let sy = (self.extent.1 - 1.0).max(1.0);
        (2.0 * p.0 / sx - 1.0, 2.0 * p.1 / sy - 1.0)
    }

    pub fn encode(&self, obs: &GoalObservation) -> Result<Vec<f64>> {
        if obs.action_history.len() != self.config.k {
            return Err(Error::Shape(format!(
                "action history has {} entries, expected {}",
                obs.action_history.len(),
                self.config.k
            )));
        }
        let a = self.actions.len();
        let mut out = vec![0.0; 4 + self.config.k * a];
        let c = self.normalise(obs.current);
        let g = self.normalise(obs.goal);
        out[..4].copy_from_slice(&[c.0, c.1, g.0, g.1]);
        for (i, act) in obs.action_history.iter().enumerate() {
            let idx = self.action_index(*act).unwrap_or(0);
            out[4 + i * a + idx] = 1.0;
        }
        Ok(out)
    }

    pub fn action_index(&self, action: Action) -> Option<usize> {
        self.actions.iter().position(|a| *a == action)
    }

    pub fn q_values(&self, obs: &GoalObservation) -> Result<Vec<f64>> {
        let out = self.net.forward_heads(&self.encode(obs)?)?;
        Ok(out[0].to_vec())
    }

    /// Argmax action; ties go to the lowest index.
    pub fn greedy(&self, obs: &GoalObservation) -> Result<Action> {
        let q = self.q_values(obs)?;
        Ok(self.actions[argmax(&q)])
    }

    /// ε-greedy action using the controller's own random stream.
    pub fn act(&mut self, obs: &GoalObservation, epsilon: f64) -> Result<Action> {
        if self.rng.gen::<f64>() < epsilon {
            Ok(self.actions[self.rng.gen_range(0..self.actions.len())])
        } else {
            self.greedy(obs)
        }
    }

    /// Linear exploration schedule over recorded steps.
    pub fn epsilon(&self) -> f64 {
        let c = &self.config;
        let frac = (self.steps as f64 / c.epsilon_steps.max(1) as f64).min(1.0);
        c.epsilon_start + (c.epsilon_end - c.epsilon_start) * frac
    }

    pub fn reward(&self, position: Vec2, goal: Vec2) -> f64 {
        goal_reward(position, goal, self.config.rho)
    }

    /// Append a transition to the running goal episode.
    pub fn record(&mut self, observation: GoalObservation, action: Action, next: GoalObservation, done: bool) {
        self.steps += 1;
        let reward = self.reward(next.current, next.goal);
        self.episode.push(GoalTransition {
            observation,
            action,
            reward,
            next,
            done,
        });
    }

    pub fn episode_len(&self) -> usize {
        self.episode.len()
    }

    /// Close the running goal episode and store it (relabelled when enabled).
    pub fn finish_episode(&mut self) {
        if self.episode.is_empty() {
            return;
        }
        let episode = std::mem::take(&mut self.episode);
        let stored = if self.config.her {
            relabel_episode(&episode, self.config.her_samples, self.config.rho, &mut self.rng)
        } else {
            episode
        };
        self.store.push_episode(stored);
    }

    /// One TD update, or `None` while the store holds fewer than a batch.
    pub fn learn_step(&mut self) -> Result<Option<f64>> {
        let b = self.config.batch_size;
        if self.store.len() < b {
            return Ok(None);
        }
        let indices: Vec<usize> = (0..b).map(|_| self.store.sample_index(&mut self.rng)).collect();
        let batch: Vec<GoalTransition> = indices.iter().map(|&i| self.store.items[i].clone()).collect();
        let loss = self.td_update(&batch)?;
        Ok(Some(loss))
    }

    /// TD targets `r + γ (1 − terminal) max_a' Q_target(s', a')`, clamped to
    /// [0, 1]; a transition is terminal when it reaches its goal or the
    /// environment ended.
    pub fn td_targets(&self, batch: &[GoalTransition]) -> Result<Vec<f64>> {
        let width = self.net.input_width();
        let mut next = Array2::zeros((batch.len(), width));
        for (r, t) in batch.iter().enumerate() {
            let enc = self.encode(&t.next)?;
            next.row_mut(r).as_slice_mut().expect("row").copy_from_slice(&enc);
        }
        let q_next = &self.target.forward_batch(next.view())?[0];
        Ok(batch
            .iter()
            .enumerate()
            .map(|(r, t)| {
                if t.reward >= 1.0 || t.done {
                    t.reward
                } else {
                    let best = q_next.row(r).iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    // rewards are 0/1 and reaching ends the episode, so returns lie in [0, 1]
                    (t.reward + self.config.gamma * best).clamp(0.0, 1.0)
                }
            })
            .collect())
    }

    /// Loss of the online network against the current TD targets.
    pub fn td_loss(&self, batch: &[GoalTransition]) -> Result<f64> {
        let tb = self.td_batch(batch)?;
        self.net.loss(&tb)
    }

    fn td_batch(&self, batch: &[GoalTransition]) -> Result<TrainBatch> {
        let targets = self.td_targets(batch)?;
        let a = self.actions.len();
        let width = self.net.input_width();
        let mut x = Array2::zeros((batch.len(), width));
        let mut y = Array2::zeros((batch.len(), a));
        let mut mask = Array2::zeros((batch.len(), a));
        for (r, t) in batch.iter().enumerate() {
            let enc = self.encode(&t.observation)?;
            x.row_mut(r).as_slice_mut().expect("row").copy_from_slice(&enc);
            let ai = self
                .action_index(t.action)
                .ok_or_else(|| Error::InvalidAction {
                    action: t.action.label().into(),
                    allowed: self.actions.iter().map(|a| a.label()).collect::<Vec<_>>().join(", "),
                })?;
            y[[r, ai]] = targets[r];
            mask[[r, ai]] = 1.0;
        }
        let mut tb = TrainBatch::new(x, vec![y]);
        tb.weights = Some(vec![mask]);
        Ok(tb)
    }

    /// One update on an explicit batch.
    pub fn td_update(&mut self, batch: &[GoalTransition]) -> Result<f64> {
        let tb = self.td_batch(batch)?;
        let (loss, grads) = self.net.backward(&tb)?;
        self.net.apply_update(&grads, &mut self.adam);
        self.updates += 1;
        if self.updates % self.config.target_sync == 0 {
            self.target = self.net.clone();
        }
        Ok(loss)
    }

    pub fn sync_target(&mut self) {
        self.target = self.net.clone();
    }

    pub fn header(&self) -> KvConfig {
        let mut kv = KvConfig::default();
        kv.insert("k", self.config.k);
        kv.insert("rho", self.config.rho);
        kv.insert("gamma", self.config.gamma);
        kv.insert(
            "actions",
            self.actions.iter().map(|a| a.label()).collect::<Vec<_>>().join(","),
        );
        kv
    }

    /// Write `<stem>.bin` (network) and `<stem>.txt` (header).
    pub fn save(&self, stem: impl AsRef<Path>) -> Result<()> {
        let stem = stem.as_ref();
        self.net.save(stem.with_extension("bin"))?;
        let txt = stem.with_extension("txt");
        std::fs::write(&txt, self.header().to_text()).map_err(|e| Error::io(&txt, e))
    }

    /// Restore weights saved by [`GoalController::save`]; the header must
    /// agree with this controller's configuration.
    pub fn load(&mut self, stem: impl AsRef<Path>) -> Result<()> {
        let stem = stem.as_ref();
        let header = KvConfig::load(stem.with_extension("txt"))?;
        let mismatch = |field: &str| Error::Checkpoint(format!("controller header field `{field}` differs"));
        if header.get::<usize>("k")? != Some(self.config.k) {
            return Err(mismatch("k"));
        }
        if header.get::<f64>("rho")? != Some(self.config.rho) {
            return Err(mismatch("rho"));
        }
        if header.get::<f64>("gamma")? != Some(self.config.gamma) {
            return Err(mismatch("gamma"));
        }
        if header.get_str("actions") != self.header().get_str("actions") {
            return Err(mismatch("actions"));
        }
        let net = DenseNet::load(stem.with_extension("bin"), Some(self.net.topology()))?;
        self.target = net.clone();
        self.adam = Adam::new(&net, self.config.learning_rate);
        self.net = net;
        Ok(())
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Originals followed by hindsight copies: for each transition, up to
/// `samples` goals drawn from positions achieved at or after it in the same
/// episode (duplicates dropped).
pub fn relabel_episode(
    episode: &[GoalTransition],
    samples: usize,
    rho: f64,
    rng: &mut impl Rng,
) -> Vec<GoalTransition> {
    let mut out: Vec<GoalTransition> = episode.to_vec();
    let n = episode.len();
    for (t, tr) in episode.iter().enumerate() {
        let mut goals: Vec<Vec2> = Vec::with_capacity(samples);
        for _ in 0..samples {
            let j = rng.gen_range(t..n);
            let g = episode[j].next.current;
            if !goals.contains(&g) {
                goals.push(g);
            }
        }
        out.extend(goals.into_iter().map(|g| tr.with_goal(g, rho)));
    }
    out
}

/// Settings for self-generated goal practice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrillConfig {
    /// Steps before an unreached goal is abandoned.
    pub timeout: usize,
    pub frame_skip: u32,
}

impl Default for DrillConfig {
    fn default() -> Self {
        Self {
            timeout: 50,
            frame_skip: crate::env::DEFAULT_FRAME_SKIP,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DrillStats {
    pub steps: u64,
    pub goals: u64,
    pub reached: u64,
    pub mean_loss: f64,
}

impl DrillStats {
    pub fn success_rate(&self) -> f64 {
        if self.goals == 0 {
            0.0
        } else {
            self.reached as f64 / self.goals as f64
        }
    }
}

fn controllable_pos(state: &EnvState) -> Vec2 {
    let p = state.controllable().position();
    (p.x as f64, p.y as f64)
}

/// Random goal on the controllable's lane at least `rho` away from `from`.
fn random_goal(state: &EnvState, from: Vec2, rho: f64, rng: &mut impl Rng) -> Vec2 {
    let (lo, hi) = state.layout.paddle_lane();
    loop {
        let g = (rng.gen_range(lo..=hi) as f64, from.1);
        if distance(g, from) > rho {
            return g;
        }
    }
}

/// Train on random lane goals for `budget` env steps.
pub fn train_on_random_goals(
    controller: &mut GoalController,
    env: EnvKind,
    seed: u64,
    budget: u64,
    drill: DrillConfig,
) -> Result<DrillStats> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6472_696c);
    let mut state = reset(env, seed);
    let mut episodes = 0u64;
    let mut stats = DrillStats::default();
    let (mut loss_sum, mut loss_n) = (0.0, 0u64);
    let k = controller.config.k;
    let mut history = vec![Action::Noop; k];
    while stats.steps < budget {
        let here = controllable_pos(&state);
        let goal = random_goal(&state, here, controller.config.rho, &mut rng);
        let mut obs = GoalObservation {
            current: here,
            goal,
            action_history: history.clone(),
        };
        stats.goals += 1;
        for _ in 0..drill.timeout {
            let action = controller.act(&obs, controller.epsilon())?;
            state.step(action, drill.frame_skip)?;
            let next = obs.advance(action, controllable_pos(&state));
            let reached = controller.reward(next.current, goal) >= 1.0;
            controller.record(obs, action, next.clone(), state.terminal);
            for _ in 0..controller.config.updates_per_step {
                if let Some(l) = controller.learn_step()? {
                    loss_sum += l;
                    loss_n += 1;
                }
            }
            stats.steps += 1;
            obs = next;
            if reached {
                stats.reached += 1;
            }
            if reached || state.terminal || stats.steps >= budget {
                break;
            }
        }
        controller.finish_episode();
        history = obs.action_history;
        if state.terminal {
            episodes += 1;
            state = reset(env, seed.wrapping_add(episodes * 7919));
            history = vec![Action::Noop; k];
        }
    }
    stats.mean_loss = if loss_n > 0 { loss_sum / loss_n as f64 } else { 0.0 };
    Ok(stats)
}

/// Greedy goal-reaching success over `goals` random lane goals. Does not
/// modify the controller.
pub fn evaluate_goal_reaching(
    controller: &GoalController,
    env: EnvKind,
    seed: u64,
    goals: usize,
    drill: DrillConfig,
) -> Result<DrillStats> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6576_616c);
    let mut state = reset(env, seed);
    let mut stats = DrillStats::default();
    let k = controller.config.k;
    for _ in 0..goals {
        if state.terminal {
            state = reset(env, seed.wrapping_add(stats.goals + 1));
        }
        let here = controllable_pos(&state);
        let goal = random_goal(&state, here, controller.config.rho, &mut rng);
        let mut obs = GoalObservation::new(here, goal, k);
        stats.goals += 1;
        for _ in 0..drill.timeout {
            let action = controller.greedy(&obs)?;
            state.step(action, drill.frame_skip)?;
            stats.steps += 1;
            obs = obs.advance(action, controllable_pos(&state));
            if controller.reward(obs.current, goal) >= 1.0 {
                stats.reached += 1;
                break;
            }
            if state.terminal {
                break;
            }
        }
    }
    Ok(stats)
}
