use std::path::Path;

use serde::{Deserialize, Serialize};

use super::types::{EnvKind, Point};
use crate::error::{Error, Result};
use crate::kv::KvConfig;

/// Fixed geometry and rules of one environment.
///
/// Every field can be overridden from a `key = value` layout file; keys match
/// the field names. `bumpers` is written as `x:y` pairs separated by commas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub env: EnvKind,
    pub width: i32,
    pub height: i32,
    pub wall_thickness: i32,
    pub ball_size: usize,
    /// Vertical ball speed in pixels per tick; horizontal speed comes from
    /// the rebound table and is at most 2.
    pub ball_speed_y: i32,
    pub serve_y: i32,
    pub serve_spread: i32,
    pub paddle_width: usize,
    pub paddle_height: usize,
    pub paddle_y: i32,
    pub paddle_speed: i32,
    pub history_len: usize,
    // duel
    pub opponent_y: i32,
    pub opponent_speed: i32,
    pub opponent_stall: f64,
    pub win_points: u32,
    // bricks
    pub brick_rows: usize,
    pub brick_cols: usize,
    pub brick_width: usize,
    pub brick_height: usize,
    pub brick_gap: i32,
    pub brick_top: i32,
    pub lives: u32,
    // pinball_lite
    pub bumpers: Vec<Point>,
    pub bumper_size: usize,
    pub flipper_gap: usize,
    pub balls: u32,
}

impl Layout {
    pub fn default_for(env: EnvKind) -> Self {
        let base = Layout {
            env,
            width: 160,
            height: 192,
            wall_thickness: 4,
            ball_size: 3,
            ball_speed_y: 2,
            serve_y: 96,
            serve_spread: 24,
            paddle_width: 15,
            paddle_height: 3,
            paddle_y: 180,
            paddle_speed: 2,
            history_len: 32,
            opponent_y: 12,
            opponent_speed: 1,
            opponent_stall: 0.1,
            win_points: 21,
            brick_rows: 0,
            brick_cols: 0,
            brick_width: 14,
            brick_height: 5,
            brick_gap: 1,
            brick_top: 30,
            lives: 5,
            bumpers: Vec::new(),
            bumper_size: 15,
            flipper_gap: 5,
            balls: 3,
        };
        match env {
            EnvKind::Duel => base,
            EnvKind::Bricks => Layout {
                brick_rows: 6,
                brick_cols: 10,
                serve_y: 100,
                ..base
            },
            EnvKind::PinballLite => Layout {
                paddle_width: 31,
                serve_y: 140,
                bumpers: vec![
                    Point::new(40, 44),
                    Point::new(120, 44),
                    Point::new(80, 72),
                    Point::new(44, 104),
                    Point::new(116, 104),
                ],
                ..base
            },
        }
    }

    pub fn from_kv(cfg: &KvConfig) -> Result<Self> {
        let env: EnvKind = match cfg.get_str("env") {
            Some(name) => name.parse()?,
            None => return Err(Error::Config("layout file lacks `env = ...`".into())),
        };
        let mut l = Layout::default_for(env);
        l.override_from(cfg)?;
        Ok(l)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_kv(&KvConfig::load(path)?)
    }

    pub fn override_from(&mut self, cfg: &KvConfig) -> Result<()> {
        cfg.apply("width", &mut self.width)?;
        cfg.apply("height", &mut self.height)?;
        cfg.apply("wall_thickness", &mut self.wall_thickness)?;
        cfg.apply("ball_size", &mut self.ball_size)?;
        cfg.apply("ball_speed_y", &mut self.ball_speed_y)?;
        cfg.apply("serve_y", &mut self.serve_y)?;
        cfg.apply("serve_spread", &mut self.serve_spread)?;
        cfg.apply("paddle_width", &mut self.paddle_width)?;
        cfg.apply("paddle_height", &mut self.paddle_height)?;
        cfg.apply("paddle_y", &mut self.paddle_y)?;
        cfg.apply("paddle_speed", &mut self.paddle_speed)?;
        cfg.apply("history_len", &mut self.history_len)?;
        cfg.apply("opponent_y", &mut self.opponent_y)?;
        cfg.apply("opponent_speed", &mut self.opponent_speed)?;
        cfg.apply("opponent_stall", &mut self.opponent_stall)?;
        cfg.apply("win_points", &mut self.win_points)?;
        cfg.apply("brick_rows", &mut self.brick_rows)?;
        cfg.apply("brick_cols", &mut self.brick_cols)?;
        cfg.apply("brick_width", &mut self.brick_width)?;
        cfg.apply("brick_height", &mut self.brick_height)?;
        cfg.apply("brick_gap", &mut self.brick_gap)?;
        cfg.apply("brick_top", &mut self.brick_top)?;
        cfg.apply("lives", &mut self.lives)?;
        cfg.apply("bumper_size", &mut self.bumper_size)?;
        cfg.apply("flipper_gap", &mut self.flipper_gap)?;
        cfg.apply("balls", &mut self.balls)?;
        if let Some(raw) = cfg.get_list::<String>("bumpers")? {
            self.bumpers = raw
                .iter()
                .map(|pair| {
                    let (x, y) = pair
                        .split_once(':')
                        .ok_or_else(|| Error::Config(format!("bumper `{pair}` is not x:y")))?;
                    let parse = |s: &str| {
                        s.trim()
                            .parse::<i32>()
                            .map_err(|e| Error::Config(format!("bumper `{pair}`: {e}")))
                    };
                    Ok(Point::new(parse(x)?, parse(y)?))
                })
                .collect::<Result<_>>()?;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.width < 32 || self.height < 32 {
            return bad(format!("playfield {}x{} too small", self.width, self.height));
        }
        if self.ball_size == 0 || self.paddle_width == 0 || self.paddle_height == 0 {
            return bad("ball and paddle need non-zero size".into());
        }
        if !(1..=4).contains(&self.ball_speed_y) {
            return bad(format!("ball_speed_y {} outside 1..=4", self.ball_speed_y));
        }
        if self.paddle_speed < 1 {
            return bad("paddle_speed must be >= 1".into());
        }
        if self.paddle_y <= self.serve_y || self.paddle_y >= self.height - 2 {
            return bad(format!("paddle_y {} must lie between serve_y and the bottom edge", self.paddle_y));
        }
        if self.history_len < 2 {
            return bad("history_len must be >= 2".into());
        }
        if !(0.0..1.0).contains(&self.opponent_stall) {
            return bad("opponent_stall must be in [0, 1)".into());
        }
        if self.env == EnvKind::PinballLite && self.flipper_gap + 2 > self.paddle_width {
            return bad("flipper_gap leaves no flipper".into());
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::default();
        kv.insert("env", self.env);
        kv.insert("width", self.width);
        kv.insert("height", self.height);
        kv.insert("wall_thickness", self.wall_thickness);
        kv.insert("ball_size", self.ball_size);
        kv.insert("ball_speed_y", self.ball_speed_y);
        kv.insert("serve_y", self.serve_y);
        kv.insert("serve_spread", self.serve_spread);
        kv.insert("paddle_width", self.paddle_width);
        kv.insert("paddle_height", self.paddle_height);
        kv.insert("paddle_y", self.paddle_y);
        kv.insert("paddle_speed", self.paddle_speed);
        kv.insert("history_len", self.history_len);
        kv.insert("opponent_y", self.opponent_y);
        kv.insert("opponent_speed", self.opponent_speed);
        kv.insert("opponent_stall", self.opponent_stall);
        kv.insert("win_points", self.win_points);
        kv.insert("brick_rows", self.brick_rows);
        kv.insert("brick_cols", self.brick_cols);
        kv.insert("brick_width", self.brick_width);
        kv.insert("brick_height", self.brick_height);
        kv.insert("brick_gap", self.brick_gap);
        kv.insert("brick_top", self.brick_top);
        kv.insert("lives", self.lives);
        kv.insert("bumper_size", self.bumper_size);
        kv.insert("flipper_gap", self.flipper_gap);
        kv.insert("balls", self.balls);
        let bumpers: Vec<String> = self.bumpers.iter().map(|p| format!("{}:{}", p.x, p.y)).collect();
        kv.insert("bumpers", bumpers.join(", "));
        kv
    }

    /// Horizontal range the paddle centre can occupy.
    pub fn paddle_lane(&self) -> (i32, i32) {
        let half = (self.paddle_width / 2) as i32;
        let right_half = self.paddle_width as i32 - 1 - half;
        (
            self.wall_thickness + half,
            self.width - 1 - self.wall_thickness - right_half,
        )
    }

    /// Whether balls leave through the top edge (duel) rather than bouncing.
    pub fn open_top(&self) -> bool {
        self.env == EnvKind::Duel
    }
}
