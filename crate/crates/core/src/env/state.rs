use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::layout::Layout;
use super::shape::ShapeBitmap;
use super::types::{
    Action, ContactEvent, ContactKind, EnvKind, ObjectClass, ObjectId, ObjectKind, ObjectRecord,
    Point, RewardEvent,
};
use crate::error::{Error, Result};

pub const BALL_ID: ObjectId = ObjectId(0);
pub const CONTROLLABLE_ID: ObjectId = ObjectId(1);
pub const OPPONENT_ID: ObjectId = ObjectId(2);
const WALL_BASE: u32 = 10;
const BUMPER_BASE: u32 = 50;
const BRICK_BASE: u32 = 100;

/// Horizontal rebound speed for a contact `dx` pixels from the centre of a
/// paddle whose half width (including the one-pixel contact margin) is
/// `reach`. Monotone in `dx`; the edge gives the steepest angle.
///
/// | `|dx| / reach` | outgoing `|vx|` |
/// |----------------|-----------------|
/// | < 0.2          | 0               |
/// | < 0.6          | 1               |
/// | otherwise      | 2               |
pub fn rebound_vx(dx: i32, reach: i32) -> i32 {
    let frac = dx.abs() as f64 / reach.max(1) as f64;
    let speed = if frac < 0.2 {
        0
    } else if frac < 0.6 {
        1
    } else {
        2
    };
    speed * dx.signum()
}

/// Everything that happened during one `step` call.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StepEvents {
    pub rewards: Vec<RewardEvent>,
    pub contacts: Vec<ContactEvent>,
    /// Ticks at which the ball was (re)served.
    pub serves: Vec<u64>,
}

impl StepEvents {
    pub fn reward_sum(&self) -> i64 {
        self.rewards.iter().map(|r| r.amount).sum()
    }

    fn extend(&mut self, other: StepEvents) {
        self.rewards.extend(other.rewards);
        self.contacts.extend(other.contacts);
        self.serves.extend(other.serves);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Axis {
    X,
    Y,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Exit {
    Top,
    Bottom,
}

/// Complete, self-contained environment state; cloning it forks the game,
/// including the random stream.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub layout: Arc<Layout>,
    pub tick: u64,
    pub objects: BTreeMap<ObjectId, ObjectRecord>,
    pub score: i64,
    pub terminal: bool,
    /// Ball velocity in pixels per tick.
    pub ball_velocity: Point,
    pub agent_points: u32,
    pub opponent_points: u32,
    /// Lives (bricks) or balls (pinball_lite) left.
    pub remaining: u32,
    /// Flippers raised during the current step (pinball_lite `both`).
    pub raised: bool,
    miss_armed: bool,
    static_grid: Vec<u32>,
    rng: ChaCha8Rng,
}

pub fn reset(env: EnvKind, seed: u64) -> EnvState {
    EnvState::new(Layout::default_for(env), seed).expect("default layouts are valid")
}

impl EnvState {
    pub fn new(layout: Layout, seed: u64) -> Result<Self> {
        layout.validate()?;
        let layout = Arc::new(layout);
        let l = &*layout;
        let cap = l.history_len;
        let mut objects = BTreeMap::new();
        let mut add = |id: ObjectId, class: ObjectClass, shape: ShapeBitmap, pos: Point| {
            let actions = if class.kind() == ObjectKind::Controllable {
                l.env.action_set()
            } else {
                Vec::new()
            };
            objects.insert(
                id,
                ObjectRecord::new(id, class, Arc::new(shape), pos, actions, cap),
            );
        };

        let t = l.wall_thickness;
        let side = ShapeBitmap::rect(t as usize, l.height as usize);
        add(
            ObjectId(WALL_BASE),
            ObjectClass::Wall,
            side.clone(),
            anchor_for(&side, 0, 0),
        );
        add(
            ObjectId(WALL_BASE + 1),
            ObjectClass::Wall,
            side.clone(),
            anchor_for(&side, l.width - t, 0),
        );
        if !l.open_top() {
            let top = ShapeBitmap::rect((l.width - 2 * t) as usize, t as usize);
            add(
                ObjectId(WALL_BASE + 2),
                ObjectClass::Wall,
                top.clone(),
                anchor_for(&top, t, 0),
            );
        }

        let lane_mid = l.width / 2;
        let controllable_shape = match l.env {
            EnvKind::PinballLite => {
                ShapeBitmap::split_bar(l.paddle_width, l.paddle_height, l.flipper_gap)
            }
            _ => ShapeBitmap::rect(l.paddle_width, l.paddle_height),
        };
        let controllable_class = match l.env {
            EnvKind::PinballLite => ObjectClass::Flippers,
            _ => ObjectClass::Paddle,
        };
        add(
            CONTROLLABLE_ID,
            controllable_class,
            controllable_shape,
            Point::new(lane_mid, l.paddle_y),
        );

        match l.env {
            EnvKind::Duel => {
                add(
                    OPPONENT_ID,
                    ObjectClass::Opponent,
                    ShapeBitmap::rect(l.paddle_width, l.paddle_height),
                    Point::new(lane_mid, l.opponent_y),
                );
            }
            EnvKind::Bricks => {
                let brick = ShapeBitmap::rect(l.brick_width, l.brick_height);
                let pitch_x = l.brick_width as i32 + l.brick_gap;
                let pitch_y = l.brick_height as i32 + l.brick_gap;
                let total = l.brick_cols as i32 * pitch_x - l.brick_gap;
                let inner = l.width - 2 * t;
                if total > inner {
                    return Err(Error::Config(format!(
                        "{} brick columns need {total} px, only {inner} available",
                        l.brick_cols
                    )));
                }
                let x0 = t + (inner - total) / 2;
                for row in 0..l.brick_rows {
                    for col in 0..l.brick_cols {
                        let id = ObjectId(BRICK_BASE + (row * l.brick_cols + col) as u32);
                        let left = x0 + col as i32 * pitch_x;
                        let top = l.brick_top + row as i32 * pitch_y;
                        add(id, ObjectClass::Brick, brick.clone(), anchor_for(&brick, left, top));
                    }
                }
            }
            EnvKind::PinballLite => {
                let bumper = ShapeBitmap::octagon(l.bumper_size);
                for (i, &p) in l.bumpers.iter().enumerate() {
                    add(ObjectId(BUMPER_BASE + i as u32), ObjectClass::Bumper, bumper.clone(), p);
                }
            }
        }

        let ball = ShapeBitmap::rect(l.ball_size, l.ball_size);
        add(BALL_ID, ObjectClass::Ball, ball, Point::new(lane_mid, l.serve_y));

        let remaining = match l.env {
            EnvKind::Duel => 0,
            EnvKind::Bricks => l.lives,
            EnvKind::PinballLite => l.balls,
        };
        let mut state = EnvState {
            layout: layout.clone(),
            tick: 0,
            objects,
            score: 0,
            terminal: false,
            ball_velocity: Point::default(),
            agent_points: 0,
            opponent_points: 0,
            remaining,
            raised: false,
            miss_armed: false,
            static_grid: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        state.rebuild_static_grid();
        for obj in state.objects.values() {
            if obj.kind == ObjectKind::Static {
                continue;
            }
            if obj.cells().any(|c| state.static_at(c).is_some()) {
                return Err(Error::Config(format!(
                    "{} {} overlaps the static layout",
                    obj.class.name(),
                    obj.id
                )));
            }
        }
        state.serve();
        Ok(state)
    }

    pub fn env(&self) -> EnvKind {
        self.layout.env
    }

    pub fn width(&self) -> i32 {
        self.layout.width
    }

    pub fn height(&self) -> i32 {
        self.layout.height
    }

    pub fn ball(&self) -> Option<&ObjectRecord> {
        self.objects.get(&BALL_ID)
    }

    pub fn controllable(&self) -> &ObjectRecord {
        &self.objects[&CONTROLLABLE_ID]
    }

    pub fn action_set(&self) -> &[Action] {
        &self.controllable().action_set
    }

    pub fn brick_count(&self) -> usize {
        self.objects
            .values()
            .filter(|o| o.class == ObjectClass::Brick)
            .count()
    }

    /// Rebuild the occupancy grid of static objects (after layout edits).
    pub fn rebuild_static_grid(&mut self) {
        let (w, h) = (self.width() as usize, self.height() as usize);
        let mut grid = vec![0u32; w * h];
        for obj in self.objects.values().filter(|o| o.kind == ObjectKind::Static) {
            for c in obj.cells() {
                if in_bounds(c, w as i32, h as i32) {
                    grid[c.y as usize * w + c.x as usize] = obj.id.0 + 1;
                }
            }
        }
        self.static_grid = grid;
    }

    /// Insert or replace an object (used to build custom scenes).
    pub fn insert_object(&mut self, obj: ObjectRecord) {
        self.objects.insert(obj.id, obj);
        self.rebuild_static_grid();
    }

    pub fn remove_object(&mut self, id: ObjectId) -> Option<ObjectRecord> {
        let removed = self.objects.remove(&id);
        self.rebuild_static_grid();
        removed
    }

    /// Teleport the ball and set its per-tick velocity.
    pub fn set_ball(&mut self, pos: Point, velocity: Point) {
        if let Some(ball) = self.objects.get_mut(&BALL_ID) {
            ball.place(pos);
        }
        self.ball_velocity = velocity;
        self.miss_armed = pos.y < self.layout.paddle_y;
    }

    fn static_at(&self, p: Point) -> Option<ObjectId> {
        if !in_bounds(p, self.width(), self.height()) {
            return None;
        }
        match self.static_grid[p.y as usize * self.width() as usize + p.x as usize] {
            0 => None,
            id => Some(ObjectId(id - 1)),
        }
    }

    /// Advance `frame_skip` ticks with `action` held.
    pub fn step(&mut self, action: Action, frame_skip: u32) -> Result<StepEvents> {
        if self.terminal {
            return Err(Error::EpisodeFinished { tick: self.tick });
        }
        if !self.action_set().contains(&action) {
            let allowed: Vec<&str> = self.action_set().iter().map(|a| a.label()).collect();
            return Err(Error::InvalidAction {
                action: action.label().into(),
                allowed: allowed.join(", "),
            });
        }
        if frame_skip == 0 {
            return Err(Error::Config("frame_skip must be >= 1".into()));
        }
        let mut events = StepEvents::default();
        self.raised = action == Action::Both;
        for _ in 0..frame_skip {
            let ev = self.tick_once(action);
            events.extend(ev);
            if self.terminal {
                break;
            }
        }
        Ok(events)
    }

    fn tick_once(&mut self, action: Action) -> StepEvents {
        let mut ev = StepEvents::default();
        self.tick += 1;

        self.move_paddle(CONTROLLABLE_ID, action.direction() * self.layout.paddle_speed);
        if self.env() == EnvKind::Duel {
            let step = self.opponent_step();
            self.move_paddle(OPPONENT_ID, step);
        }

        let mut ball_pos = self.objects[&BALL_ID].position();
        let mut vel = self.ball_velocity;
        let mut rx = vel.x.abs();
        let mut ry = vel.y.abs();
        let mut exit = None;
        'movement: while rx > 0 || ry > 0 {
            for axis in [Axis::X, Axis::Y] {
                let remaining = match axis {
                    Axis::X => &mut rx,
                    Axis::Y => &mut ry,
                };
                if *remaining == 0 {
                    continue;
                }
                *remaining -= 1;
                match self.ball_unit(&mut ball_pos, &mut vel, axis, &mut ev) {
                    UnitOutcome::Moved => {}
                    UnitOutcome::Stop => break 'movement,
                    UnitOutcome::Exit(e) => {
                        exit = Some(e);
                        break 'movement;
                    }
                }
            }
        }
        self.ball_velocity = vel;
        if vel.y < 0 {
            self.miss_armed = true;
        }

        // A ball that drops past the controllable line without a hit is a miss.
        let paddle = self.controllable().position();
        if self.miss_armed && vel.y > 0 && ball_pos.y >= paddle.y {
            self.miss_armed = false;
            let half = self.controllable().shape.half_width();
            let raw = ball_pos.x - paddle.x;
            ev.contacts.push(ContactEvent {
                controllable_id: CONTROLLABLE_ID,
                other_id: BALL_ID,
                offset: Point::new(raw.clamp(-half - 1, half + 1), 0),
                tick: self.tick,
                kind: ContactKind::Miss,
            });
        }

        if let Some(ball) = self.objects.get_mut(&BALL_ID) {
            ball.push_position(ball_pos);
        }
        if let Some(e) = exit {
            self.handle_exit(e, &mut ev);
        }
        ev
    }

    fn opponent_step(&mut self) -> i32 {
        let Some(opp) = self.objects.get(&OPPONENT_ID) else {
            return 0;
        };
        let ball = self.objects[&BALL_ID].position();
        let target = if self.ball_velocity.y < 0 {
            ball.x
        } else {
            self.width() / 2
        };
        let stall: f64 = self.rng.gen();
        if stall < self.layout.opponent_stall {
            return 0;
        }
        (target - opp.position().x).clamp(-self.layout.opponent_speed, self.layout.opponent_speed)
    }

    fn move_paddle(&mut self, id: ObjectId, dx: i32) {
        if dx == 0 {
            if let Some(p) = self.objects.get_mut(&id) {
                let pos = p.position();
                p.push_position(pos);
            }
            return;
        }
        let Some(paddle) = self.objects.get(&id) else {
            return;
        };
        let (lo, hi) = self.layout.paddle_lane();
        let mut pos = paddle.position();
        let ball = &self.objects[&BALL_ID];
        for _ in 0..dx.abs() {
            let cand = Point::new(pos.x + dx.signum(), pos.y);
            if cand.x < lo || cand.x > hi {
                break;
            }
            if shapes_overlap(&paddle.shape, cand, &ball.shape, ball.position(), false) {
                break;
            }
            pos = cand;
        }
        self.objects.get_mut(&id).unwrap().push_position(pos);
    }

    /// Move the ball one pixel along `axis`, resolving collisions.
    fn ball_unit(
        &mut self,
        pos: &mut Point,
        vel: &mut Point,
        axis: Axis,
        ev: &mut StepEvents,
    ) -> UnitOutcome {
        let dir = match axis {
            Axis::X => vel.x.signum(),
            Axis::Y => vel.y.signum(),
        };
        let shift = |p: Point, d: i32| match axis {
            Axis::X => Point::new(p.x + d, p.y),
            Axis::Y => Point::new(p.x, p.y + d),
        };
        let cand = shift(*pos, dir);

        if axis == Axis::Y {
            if cand.y >= self.height() - 2 {
                *pos = cand;
                return UnitOutcome::Exit(Exit::Bottom);
            }
            if self.layout.open_top() && cand.y <= 1 {
                *pos = cand;
                return UnitOutcome::Exit(Exit::Top);
            }
        }

        match self.blocker_at(cand) {
            Blocker::None => {
                *pos = cand;
                UnitOutcome::Moved
            }
            Blocker::Paddle(id) => {
                self.paddle_rebound(id, *pos, vel, ev);
                UnitOutcome::Stop
            }
            Blocker::Solid(ids) => {
                for id in ids {
                    self.hit_static(id, ev);
                }
                match axis {
                    Axis::X => vel.x = -vel.x,
                    Axis::Y => vel.y = -vel.y,
                }
                let back = shift(*pos, -dir);
                if matches!(self.blocker_at(back), Blocker::None) {
                    *pos = back;
                }
                UnitOutcome::Moved
            }
        }
    }

    fn hit_static(&mut self, id: ObjectId, ev: &mut StepEvents) {
        let Some(obj) = self.objects.get(&id) else {
            return;
        };
        match obj.class {
            ObjectClass::Brick => {
                let obj = self.objects.remove(&id).expect("brick exists");
                let w = self.width() as usize;
                for c in obj.cells() {
                    if in_bounds(c, self.width(), self.height()) {
                        self.static_grid[c.y as usize * w + c.x as usize] = 0;
                    }
                }
                self.reward(1, ev);
                if self.brick_count() == 0 {
                    self.terminal = true;
                }
            }
            ObjectClass::Bumper => self.reward(1, ev),
            _ => {}
        }
    }

    fn reward(&mut self, amount: i64, ev: &mut StepEvents) {
        self.score += amount;
        ev.rewards.push(RewardEvent {
            amount,
            tick: self.tick,
        });
    }

    fn paddle_rebound(&mut self, id: ObjectId, ball: Point, vel: &mut Point, ev: &mut StepEvents) {
        let paddle = &self.objects[&id];
        let p = paddle.position();
        let half = paddle.shape.half_width();
        let half_h = paddle.shape.half_height();
        let dx = ball.x - p.x;
        vel.x = rebound_vx(dx.clamp(-half - 1, half + 1), half + 1);
        let speed = self.layout.ball_speed_y;
        vel.y = if ball.y < p.y { -speed } else { speed };
        if id == CONTROLLABLE_ID {
            self.miss_armed = false;
            ev.contacts.push(ContactEvent {
                controllable_id: CONTROLLABLE_ID,
                other_id: BALL_ID,
                offset: Point::new(dx.clamp(-half, half), (ball.y - p.y).clamp(-half_h, half_h)),
                tick: self.tick,
                kind: ContactKind::Hit,
            });
        }
    }

    fn blocker_at(&self, ball_pos: Point) -> Blocker {
        let ball = &self.objects[&BALL_ID];
        for id in [CONTROLLABLE_ID, OPPONENT_ID] {
            if let Some(p) = self.objects.get(&id) {
                let solid_gap = id == CONTROLLABLE_ID && self.raised;
                if shapes_overlap(&ball.shape, ball_pos, &p.shape, p.position(), solid_gap) {
                    return Blocker::Paddle(id);
                }
            }
        }
        let mut ids: Vec<ObjectId> = Vec::new();
        let mut outside = false;
        for (dx, dy) in ball.shape.offsets() {
            let c = Point::new(ball_pos.x + dx, ball_pos.y + dy);
            if !in_bounds(c, self.width(), self.height()) {
                outside = true;
            } else if let Some(id) = self.static_at(c) {
                if !ids.contains(&id) {
                    ids.push(id);
                }
            }
        }
        if ids.is_empty() && !outside {
            Blocker::None
        } else {
            Blocker::Solid(ids)
        }
    }

    fn handle_exit(&mut self, exit: Exit, ev: &mut StepEvents) {
        match (self.env(), exit) {
            (EnvKind::Duel, Exit::Top) => {
                self.agent_points += 1;
                self.reward(1, ev);
            }
            (EnvKind::Duel, Exit::Bottom) => {
                self.opponent_points += 1;
                self.reward(-1, ev);
            }
            (_, Exit::Bottom) => {
                self.remaining = self.remaining.saturating_sub(1);
            }
            (_, Exit::Top) => unreachable!("only duel has an open top"),
        }
        self.terminal = self.terminal
            || match self.env() {
                EnvKind::Duel => {
                    self.agent_points >= self.layout.win_points
                        || self.opponent_points >= self.layout.win_points
                }
                _ => self.remaining == 0,
            };
        if !self.terminal {
            self.serve();
            ev.serves.push(self.tick);
        }
    }

    fn serve(&mut self) {
        let l = self.layout.clone();
        let spread = l.serve_spread.max(0);
        let x = l.width / 2 + self.rng.gen_range(-spread..=spread);
        let vx = *[-2, -1, 1, 2].choose(&mut self.rng).expect("non-empty");
        let pos = Point::new(x, l.serve_y);
        if let Some(ball) = self.objects.get_mut(&BALL_ID) {
            ball.restart_at(pos);
        }
        self.ball_velocity = Point::new(vx, l.ball_speed_y);
        self.miss_armed = true;
    }
}

enum UnitOutcome {
    Moved,
    Stop,
    Exit(Exit),
}

enum Blocker {
    None,
    Paddle(ObjectId),
    Solid(Vec<ObjectId>),
}

fn in_bounds(p: Point, w: i32, h: i32) -> bool {
    p.x >= 0 && p.y >= 0 && p.x < w && p.y < h
}

/// Anchor position that puts the shape's top-left cell at `(left, top)`.
pub fn anchor_for(shape: &ShapeBitmap, left: i32, top: i32) -> Point {
    let (ax, ay) = shape.anchor();
    Point::new(left + ax, top + ay)
}

/// Exact mask overlap test. With `b_full_rect` the second shape is treated as
/// its full bounding box (raised flippers close their gap).
pub fn shapes_overlap(
    a: &ShapeBitmap,
    pa: Point,
    b: &ShapeBitmap,
    pb: Point,
    b_full_rect: bool,
) -> bool {
    let (a0, a1, a2, a3) = a.extent();
    let (b0, b1, b2, b3) = b.extent();
    if pa.x + a2 < pb.x + b0 || pb.x + b2 < pa.x + a0 || pa.y + a3 < pb.y + b1 || pb.y + b3 < pa.y + a1
    {
        return false;
    }
    let (bax, bay) = b.anchor();
    a.offsets().any(|(dx, dy)| {
        let col = pa.x + dx - pb.x + bax;
        let row = pa.y + dy - pb.y + bay;
        if col < 0 || row < 0 || col as usize >= b.width() || row as usize >= b.height() {
            return false;
        }
        b_full_rect || b.is_set(col as usize, row as usize)
    })
}
