use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::shape::ShapeBitmap;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: i32,
    pub y: i32,
}

impl Point {
    pub const fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }
}

impl std::ops::Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl std::ops::Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

/// Inclusive axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub min_x: i32,
    pub min_y: i32,
    pub max_x: i32,
    pub max_y: i32,
}

impl Rect {
    pub fn at(p: Point) -> Self {
        Self {
            min_x: p.x,
            min_y: p.y,
            max_x: p.x,
            max_y: p.y,
        }
    }

    pub fn include(&mut self, p: Point) {
        self.min_x = self.min_x.min(p.x);
        self.min_y = self.min_y.min(p.y);
        self.max_x = self.max_x.max(p.x);
        self.max_y = self.max_y.max(p.y);
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.min_x && p.x <= self.max_x && p.y >= self.min_y && p.y <= self.max_y
    }

    pub fn contains_f(&self, x: f64, y: f64) -> bool {
        x >= self.min_x as f64
            && x <= self.max_x as f64
            && y >= self.min_y as f64
            && y <= self.max_y as f64
    }

    pub fn width(&self) -> i32 {
        self.max_x - self.min_x + 1
    }

    pub fn height(&self) -> i32 {
        self.max_y - self.min_y + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ObjectId(pub u32);

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    Controllable,
    NonControllable,
    Static,
}

/// Object class; each class renders with its own palette index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectClass {
    Wall,
    Ball,
    Paddle,
    Opponent,
    Brick,
    Bumper,
    Flippers,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 7] = [
        ObjectClass::Wall,
        ObjectClass::Ball,
        ObjectClass::Paddle,
        ObjectClass::Opponent,
        ObjectClass::Brick,
        ObjectClass::Bumper,
        ObjectClass::Flippers,
    ];

    pub fn palette_index(self) -> u8 {
        match self {
            ObjectClass::Wall => 1,
            ObjectClass::Ball => 2,
            ObjectClass::Paddle => 3,
            ObjectClass::Opponent => 4,
            ObjectClass::Brick => 5,
            ObjectClass::Bumper => 6,
            ObjectClass::Flippers => 7,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ObjectClass::Wall => "wall",
            ObjectClass::Ball => "ball",
            ObjectClass::Paddle => "paddle",
            ObjectClass::Opponent => "opponent",
            ObjectClass::Brick => "brick",
            ObjectClass::Bumper => "bumper",
            ObjectClass::Flippers => "flippers",
        }
    }

    pub fn kind(self) -> ObjectKind {
        match self {
            ObjectClass::Paddle | ObjectClass::Flippers => ObjectKind::Controllable,
            ObjectClass::Ball | ObjectClass::Opponent => ObjectKind::NonControllable,
            ObjectClass::Wall | ObjectClass::Brick | ObjectClass::Bumper => ObjectKind::Static,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Noop,
    Left,
    Right,
    Both,
}

impl Action {
    pub fn label(self) -> &'static str {
        match self {
            Action::Noop => "noop",
            Action::Left => "left",
            Action::Right => "right",
            Action::Both => "both",
        }
    }

    /// Horizontal direction of travel for the controllable object.
    pub fn direction(self) -> i32 {
        match self {
            Action::Left => -1,
            Action::Right => 1,
            Action::Noop | Action::Both => 0,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Action {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noop" => Ok(Action::Noop),
            "left" => Ok(Action::Left),
            "right" => Ok(Action::Right),
            "both" => Ok(Action::Both),
            other => Err(Error::Config(format!("unknown action `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Duel,
    Bricks,
    PinballLite,
}

impl EnvKind {
    pub const ALL: [EnvKind; 3] = [EnvKind::Duel, EnvKind::Bricks, EnvKind::PinballLite];

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Duel => "duel",
            EnvKind::Bricks => "bricks",
            EnvKind::PinballLite => "pinball_lite",
        }
    }

    pub fn action_set(self) -> Vec<Action> {
        match self {
            EnvKind::Duel | EnvKind::Bricks => vec![Action::Noop, Action::Left, Action::Right],
            EnvKind::PinballLite => vec![Action::Noop, Action::Left, Action::Right, Action::Both],
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "duel" => Ok(EnvKind::Duel),
            "bricks" => Ok(EnvKind::Bricks),
            "pinball_lite" | "pinball" => Ok(EnvKind::PinballLite),
            other => Err(Error::Config(format!(
                "unknown environment `{other}` (expected duel, bricks or pinball_lite)"
            ))),
        }
    }
}

/// One tracked game object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub id: ObjectId,
    pub class: ObjectClass,
    pub kind: ObjectKind,
    pub shape: Arc<ShapeBitmap>,
    /// Newest last.
    pub position_history: VecDeque<Point>,
    /// `velocity_history[i]` is the displacement that produced the position
    /// aligned with it at the tail of `position_history`.
    pub velocity_history: VecDeque<Point>,
    pub observed_area: Rect,
    pub action_set: Vec<Action>,
    history_cap: usize,
}

impl ObjectRecord {
    pub fn new(
        id: ObjectId,
        class: ObjectClass,
        shape: Arc<ShapeBitmap>,
        position: Point,
        action_set: Vec<Action>,
        history_cap: usize,
    ) -> Self {
        let kind = class.kind();
        debug_assert_eq!(kind == ObjectKind::Controllable, !action_set.is_empty());
        let mut position_history = VecDeque::with_capacity(history_cap.max(2));
        position_history.push_back(position);
        Self {
            id,
            class,
            kind,
            shape,
            position_history,
            velocity_history: VecDeque::new(),
            observed_area: Rect::at(position),
            action_set,
            history_cap: history_cap.max(2),
        }
    }

    pub fn position(&self) -> Point {
        *self
            .position_history
            .back()
            .expect("position history is never empty")
    }

    pub fn velocity(&self) -> Option<Point> {
        self.velocity_history.back().copied()
    }

    /// Append an observation; the velocity is the difference to the previous one.
    pub fn push_position(&mut self, p: Point) {
        let prev = self.position();
        self.position_history.push_back(p);
        self.velocity_history.push_back(p - prev);
        while self.position_history.len() > self.history_cap {
            self.position_history.pop_front();
        }
        while self.velocity_history.len() >= self.history_cap {
            self.velocity_history.pop_front();
        }
        self.observed_area.include(p);
    }

    /// Restart the history at `p` (teleport, respawn); keeps the observed area.
    pub fn restart_at(&mut self, p: Point) {
        self.position_history.clear();
        self.velocity_history.clear();
        self.position_history.push_back(p);
        self.observed_area.include(p);
    }

    /// Overwrite the current position without recording motion (layout edits).
    pub fn place(&mut self, p: Point) {
        self.restart_at(p);
    }

    pub fn history_cap(&self) -> usize {
        self.history_cap
    }

    /// Absolute pixel cells covered by the shape at the current position.
    pub fn cells(&self) -> impl Iterator<Item = Point> + '_ {
        let p = self.position();
        self.shape.offsets().map(move |(dx, dy)| Point::new(p.x + dx, p.y + dy))
    }

    /// Bounding box at the current position.
    pub fn bbox(&self) -> Rect {
        let p = self.position();
        let (a, b, c, d) = self.shape.extent();
        Rect {
            min_x: p.x + a,
            min_y: p.y + b,
            max_x: p.x + c,
            max_y: p.y + d,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardEvent {
    pub amount: i64,
    pub tick: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContactKind {
    /// The shapes overlapped.
    Hit,
    /// The ball crossed the controllable object's line without touching it.
    Miss,
}

/// Contact between the controllable object and another object.
///
/// `offset` is the contact point relative to the centre of the controllable
/// shape; it stays within the shape's bounding box grown by one pixel, which
/// is where misses beyond the edge land.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContactEvent {
    pub controllable_id: ObjectId,
    pub other_id: ObjectId,
    pub offset: Point,
    pub tick: u64,
    pub kind: ContactKind,
}
