//! Deterministic object-based arcade environments.
//!
//! Three games share one physics core: integer positions, integer per-tick
//! velocities, pixel-by-pixel ball motion with mirror reflection off static
//! surfaces, and a paddle rebound whose outgoing angle depends on where the
//! ball lands (see [`rebound_vx`]).
//!
//! * `duel`: the agent's paddle at the bottom against a scripted opponent at
//!   the top; first to 21 points.
//! * `bricks`: a paddle under a brick wall; +1 per brick, five lives.
//! * `pinball_lite`: a sliding flipper pair with a centre drain gap under
//!   octagonal bumpers; +1 per bumper hit, three balls. Action `both` raises
//!   both flippers, closing the gap for that step.

mod layout;
mod log;
mod render;
mod shape;
mod state;
mod types;

pub use layout::Layout;
pub use log::EventLog;
pub use render::{render, Frame, PALETTE};
pub use shape::ShapeBitmap;
pub use state::{
    anchor_for, rebound_vx, reset, shapes_overlap, EnvState, StepEvents, BALL_ID, CONTROLLABLE_ID,
    OPPONENT_ID,
};
pub use types::{
    Action, ContactEvent, ContactKind, EnvKind, ObjectClass, ObjectId, ObjectKind, ObjectRecord,
    Point, Rect, RewardEvent,
};

/// Default number of internal ticks per `step`.
pub const DEFAULT_FRAME_SKIP: u32 = 2;
