//! Reward statistics per contact offset on the controllable shape.
//!
//! Offsets are bucketed along x at 1 px resolution over the shape's extent
//! plus one beyond-edge bucket on each side. A contact stays pending for a
//! fixed horizon; rewards arriving meanwhile are credited to the most recent
//! pending contact, and when the horizon expires the accumulated credit
//! updates the bucket's running mean and variance.

use std::io::Write;
use std::path::Path;

use rand::Rng;

use crate::env::{ContactEvent, ContactKind, Point, RewardEvent, ShapeBitmap};
use crate::error::{Error, Result};

/// Triangular kernel weights at distance 0, 1, 2.
const KERNEL: [f64; 3] = [1.0, 2.0 / 3.0, 1.0 / 3.0];

/// Expected rewards are snapped to multiples of 2^-40 so that values equal
/// in exact arithmetic compare equal whatever neighbours produced them.
const GRID: f64 = (1u64 << 40) as f64;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BucketStats {
    pub count: u64,
    pub mean: f64,
    m2: f64,
}

impl BucketStats {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    /// Sample variance; zero below two samples.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendingContact {
    pub bucket: i32,
    pub tick: u64,
    pub deadline: u64,
    pub credit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SettledContact {
    pub bucket: i32,
    pub tick: u64,
    pub credit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContactTable {
    reach: i32,
    admissible: Vec<bool>,
    buckets: Vec<BucketStats>,
    pending: Vec<PendingContact>,
    horizon: u64,
    prior: f64,
    dropped: u64,
}

impl ContactTable {
    pub const DEFAULT_HORIZON: u64 = 120;
    pub const DEFAULT_PRIOR: f64 = 0.5;

    pub fn new(shape: &ShapeBitmap, horizon: u64, prior: f64) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::Config("attribution horizon must be positive".into()));
        }
        let reach = shape.half_width() + 1;
        let admissible = (-reach..=reach).map(|dx| shape.column_set(dx)).collect();
        Ok(Self {
            reach,
            admissible,
            buckets: vec![BucketStats::default(); (2 * reach + 1) as usize],
            pending: Vec::new(),
            horizon,
            prior,
            dropped: 0,
        })
    }

    pub fn for_shape(shape: &ShapeBitmap) -> Self {
        Self::new(shape, Self::DEFAULT_HORIZON, Self::DEFAULT_PRIOR).expect("defaults are valid")
    }

    /// Largest bucket magnitude; `±reach` are the beyond-edge buckets.
    pub fn reach(&self) -> i32 {
        self.reach
    }

    pub fn buckets(&self) -> impl Iterator<Item = i32> {
        -self.reach..=self.reach
    }

    pub fn admissible_buckets(&self) -> impl Iterator<Item = i32> + '_ {
        self.buckets().filter(|&b| self.is_admissible(b))
    }

    pub fn is_admissible(&self, bucket: i32) -> bool {
        self.index(bucket).is_some_and(|i| self.admissible[i])
    }

    fn index(&self, bucket: i32) -> Option<usize> {
        (bucket.abs() <= self.reach).then(|| (bucket + self.reach) as usize)
    }

    pub fn stats(&self, bucket: i32) -> Option<BucketStats> {
        self.index(bucket).map(|i| self.buckets[i])
    }

    pub fn pending(&self) -> &[PendingContact] {
        &self.pending
    }

    /// Rewards that arrived with no pending contact.
    pub fn dropped_rewards(&self) -> u64 {
        self.dropped
    }

    pub fn horizon(&self) -> u64 {
        self.horizon
    }

    pub fn prior(&self) -> f64 {
        self.prior
    }

    /// Bucket for an event offset. Misses over solid columns count as
    /// passing the nearer edge.
    pub fn bucket_for(&self, event: &ContactEvent) -> i32 {
        let dx = event.offset.x.clamp(-self.reach, self.reach);
        match event.kind {
            ContactKind::Hit => dx.clamp(-self.reach + 1, self.reach - 1),
            ContactKind::Miss if self.is_admissible(dx) => {
                if dx < 0 {
                    -self.reach
                } else {
                    self.reach
                }
            }
            ContactKind::Miss => dx,
        }
    }

    /// Open a pending contact. A second event in the same tick is merged into
    /// the first.
    pub fn record_contact(&mut self, event: &ContactEvent) {
        if self.pending.last().is_some_and(|p| p.tick == event.tick) {
            return;
        }
        let bucket = self.bucket_for(event);
        self.pending.push(PendingContact {
            bucket,
            tick: event.tick,
            deadline: event.tick + self.horizon,
            credit: 0.0,
        });
    }

    /// Credit rewards, then close contacts whose deadline is before `now`.
    pub fn settle_rewards(&mut self, rewards: &[RewardEvent], now: u64) -> Vec<SettledContact> {
        for r in rewards {
            let target = self
                .pending
                .iter_mut()
                .rev()
                .find(|p| p.tick <= r.tick && r.tick <= p.deadline);
            match target {
                Some(p) => p.credit += r.amount as f64,
                None => {
                    self.dropped += 1;
                    log::debug!("reward {} at tick {} has no pending contact", r.amount, r.tick);
                }
            }
        }
        let mut settled = Vec::new();
        let mut keep = Vec::with_capacity(self.pending.len());
        for p in std::mem::take(&mut self.pending) {
            if p.deadline < now {
                let i = self.index(p.bucket).expect("bucket in range");
                self.buckets[i].push(p.credit);
                settled.push(SettledContact {
                    bucket: p.bucket,
                    tick: p.tick,
                    credit: p.credit,
                });
            } else {
                keep.push(p);
            }
        }
        self.pending = keep;
        settled
    }

    /// Settle everything still pending (end of run).
    pub fn flush(&mut self) -> Vec<SettledContact> {
        self.settle_rewards(&[], u64::MAX)
    }

    /// Add one settled sample directly (synthetic streams, replays).
    pub fn push_sample(&mut self, bucket: i32, credit: f64) -> Result<()> {
        let i = self
            .index(bucket)
            .ok_or_else(|| Error::Config(format!("bucket {bucket} outside ±{}", self.reach)))?;
        self.buckets[i].push(credit);
        Ok(())
    }

    /// Count-weighted triangular smoothing over ±2 buckets; the prior when
    /// no neighbour has data.
    pub fn expected_reward(&self, bucket: i32) -> f64 {
        let mut terms = [(0.0, 0.0); 5];
        let mut max_w: f64 = 0.0;
        for (slot, d) in (-2i32..=2).enumerate() {
            if let Some(s) = self.stats(bucket + d).filter(|s| s.count > 0) {
                let w = KERNEL[d.unsigned_abs() as usize] * s.count as f64;
                terms[slot] = (w, s.mean);
                max_w = max_w.max(w);
            }
        }
        if max_w == 0.0 {
            return self.prior;
        }
        // Scale-free weights: proportional weightings give bit-identical
        // values, which keeps the sampling order exact.
        let (mut num, mut den) = (0.0, 0.0);
        for (w, m) in terms {
            let w = w / max_w;
            num += w * m;
            den += w;
        }
        (num / den * GRID).round() / GRID
    }

    /// Admissible bucket with the highest expected reward (lowest dx on ties).
    pub fn best_bucket(&self) -> i32 {
        let mut best = None;
        for b in self.admissible_buckets() {
            let v = self.expected_reward(b);
            if best.is_none_or(|(_, bv)| v > bv) {
                best = Some((b, v));
            }
        }
        best.map_or(0, |(b, _)| b)
    }

    /// Softmax probabilities over admissible buckets.
    pub fn probabilities(&self, temperature: f64) -> Vec<(i32, f64)> {
        let values: Vec<(i32, f64)> = self
            .admissible_buckets()
            .map(|b| (b, self.expected_reward(b)))
            .collect();
        softmax(&values, temperature)
    }

    pub fn sample_contact_point(&self, temperature: f64, rng: &mut impl Rng) -> Point {
        let probs = self.probabilities(temperature);
        let mut u: f64 = rng.gen();
        for &(b, p) in &probs {
            if u < p {
                return Point::new(b, 0);
            }
            u -= p;
        }
        Point::new(probs.last().map_or(0, |x| x.0), 0)
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bucket_dx", "count", "mean", "variance"])?;
        for b in self.buckets() {
            let s = self.stats(b).expect("in range");
            w.write_record(&[
                b.to_string(),
                s.count.to_string(),
                s.mean.to_string(),
                s.variance().to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<contact csv>", e))
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(file)
    }

    /// Restore bucket counts and means from a dump. Variances are rebuilt
    /// from the stored sample variance.
    pub fn load_csv(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Checkpoint(format!("{other:?}")),
        })?;
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let parse_err = |m: String| Error::Parse {
                path: path.to_path_buf(),
                line: line + 2,
                message: m,
            };
            let field = |i: usize| rec.get(i).ok_or_else(|| parse_err(format!("missing column {i}")));
            let bucket: i32 = field(0)?.parse().map_err(|e| parse_err(format!("{e}")))?;
            let count: u64 = field(1)?.parse().map_err(|e| parse_err(format!("{e}")))?;
            let mean: f64 = field(2)?.parse().map_err(|e| parse_err(format!("{e}")))?;
            let var: f64 = field(3)?.parse().map_err(|e| parse_err(format!("{e}")))?;
            let i = self
                .index(bucket)
                .ok_or_else(|| parse_err(format!("bucket {bucket} out of range")))?;
            self.buckets[i] = BucketStats {
                count,
                mean,
                m2: var * count.saturating_sub(1) as f64,
            };
        }
        Ok(())
    }
}

/// Numerically stable softmax of `value / temperature`.
pub fn softmax(values: &[(i32, f64)], temperature: f64) -> Vec<(i32, f64)> {
    let t = temperature.max(f64::MIN_POSITIVE);
    let max = values.iter().map(|v| v.1).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| ((v.1 - max) / t).exp()).collect();
    let total: f64 = exps.iter().sum();
    values
        .iter()
        .zip(exps)
        .map(|(v, e)| (v.0, e / total))
        .collect()
}

/// Exponentially decayed sampling temperature with a floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Temperature {
    pub value: f64,
    pub decay: f64,
    pub floor: f64,
}

impl Default for Temperature {
    fn default() -> Self {
        Self {
            value: 0.3,
            decay: 0.999,
            floor: 0.05,
        }
    }
}

impl Temperature {
    pub fn end_episode(&mut self) {
        self.value = (self.value * self.decay).max(self.floor);
    }
}
