//! Object extraction from rendered frames: colour selection, frame
//! differencing and exact shape matching.
//!
//! Every object class has its own palette index, so a full match of a
//! template's bitmap in its colour is an exact detection.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use crate::env::{EnvState, Frame, ObjectClass, ObjectKind, Point, ShapeBitmap};
use crate::error::{Error, Result};

/// Binary image with frame dimensions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn get(&self, x: i32, y: i32) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.bits[y as usize * self.width + x as usize]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    pub fn and(&self, other: &Mask) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| *a && *b).collect(),
        }
    }

    /// Square dilation with Chebyshev radius `r`.
    pub fn dilate(&self, r: usize) -> Mask {
        let (w, h) = (self.width, self.height);
        // separable: rows then columns
        let mut rows = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                if self.bits[y * w + x] {
                    for xx in x.saturating_sub(r)..=(x + r).min(w - 1) {
                        rows[y * w + xx] = true;
                    }
                }
            }
        }
        let mut out = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                if rows[y * w + x] {
                    for yy in y.saturating_sub(r)..=(y + r).min(h - 1) {
                        out[yy * w + x] = true;
                    }
                }
            }
        }
        Mask {
            width: w,
            height: h,
            bits: out,
        }
    }

    pub fn set_points(&self) -> impl Iterator<Item = Point> + '_ {
        self.bits.iter().enumerate().filter(|(_, b)| **b).map(move |(i, _)| {
            Point::new((i % self.width) as i32, (i / self.width) as i32)
        })
    }
}

pub fn color_select(frame: &Frame, index: u8) -> Mask {
    Mask {
        width: frame.width,
        height: frame.height,
        bits: frame.cells.iter().map(|c| *c == index).collect(),
    }
}

pub fn frame_diff(current: &Frame, previous: &Frame) -> Result<Mask> {
    if current.width != previous.width || current.height != previous.height {
        return Err(Error::Shape(format!(
            "frames are {}x{} and {}x{}",
            current.width, current.height, previous.width, previous.height
        )));
    }
    Ok(Mask {
        width: current.width,
        height: current.height,
        bits: current.cells.iter().zip(&previous.cells).map(|(a, b)| a != b).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Expect {
    One,
    Many,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeTemplate {
    pub id: u32,
    pub palette: u8,
    pub class: ObjectClass,
    pub kind: ObjectKind,
    pub shape: Arc<ShapeBitmap>,
    pub expect: Expect,
}

/// One template per distinct (class, shape) found in `state`.
pub fn templates_for(state: &EnvState) -> Vec<ShapeTemplate> {
    let mut seen: BTreeMap<(u8, usize, usize, Vec<bool>), (ObjectClass, Arc<ShapeBitmap>, usize)> =
        BTreeMap::new();
    for obj in state.objects.values() {
        let key = (
            obj.class.palette_index(),
            obj.shape.width(),
            obj.shape.height(),
            obj.shape.mask().to_vec(),
        );
        seen.entry(key)
            .and_modify(|e| e.2 += 1)
            .or_insert((obj.class, obj.shape.clone(), 1));
    }
    seen.into_values()
        .enumerate()
        .map(|(i, (class, shape, count))| ShapeTemplate {
            id: i as u32,
            palette: class.palette_index(),
            class,
            kind: class.kind(),
            shape,
            expect: if count == 1 && class.kind() != ObjectKind::Static {
                Expect::One
            } else {
                Expect::Many
            },
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Detection {
    pub template: u32,
    pub class: ObjectClass,
    /// Shape anchor, as used by object records.
    pub position: Point,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Extraction {
    pub detections: Vec<Detection>,
    /// Single-instance templates that were not found.
    pub lost: Vec<u32>,
}

impl Extraction {
    pub fn of_class(&self, class: ObjectClass) -> impl Iterator<Item = &Detection> {
        self.detections.iter().filter(move |d| d.class == class)
    }

    pub fn first(&self, class: ObjectClass) -> Option<Point> {
        self.of_class(class).next().map(|d| d.position)
    }
}

fn full_match(color: &Mask, shape: &ShapeBitmap, anchor: Point, taken: &Mask) -> bool {
    shape.offsets().all(|(dx, dy)| {
        let (x, y) = (anchor.x + dx, anchor.y + dy);
        color.get(x, y) && !taken.get(x, y)
    })
}

fn find(color: &Mask, candidates: &Mask, template: &ShapeTemplate, taken: &mut Mask) -> Vec<Point> {
    let shape = &template.shape;
    let Some(first) = shape.offsets().next() else {
        return Vec::new();
    };
    let mut found = Vec::new();
    // the first set cell of a match is a candidate cell
    for c in candidates.set_points() {
        let anchor = Point::new(c.x - first.0, c.y - first.1);
        if !taken.get(c.x, c.y) && full_match(color, shape, anchor, taken) {
            for (dx, dy) in shape.offsets() {
                let (x, y) = (anchor.x + dx, anchor.y + dy);
                taken.bits[y as usize * taken.width + x as usize] = true;
            }
            found.push(anchor);
            if template.expect == Expect::One {
                break;
            }
        }
    }
    found
}

/// Detect every template in `frame`. Moving templates search near changed
/// pixels first (when a previous frame is given) and fall back to the whole
/// colour mask when nothing matches there.
pub fn match_objects(
    frame: &Frame,
    previous: Option<&Frame>,
    templates: &[ShapeTemplate],
) -> Result<Extraction> {
    if templates.is_empty() {
        return Err(Error::Config("no templates to match".into()));
    }
    let diff = previous.map(|p| frame_diff(frame, p)).transpose()?;
    let mut out = Extraction::default();
    let mut colours: BTreeMap<u8, Mask> = BTreeMap::new();
    let mut taken: BTreeMap<u8, Mask> = BTreeMap::new();
    // larger shapes first so a small template never eats part of a larger one
    let mut order: Vec<&ShapeTemplate> = templates.iter().collect();
    order.sort_by_key(|t| (std::cmp::Reverse(t.shape.set_count()), t.id));
    for t in order {
        let color = colours
            .entry(t.palette)
            .or_insert_with(|| color_select(frame, t.palette))
            .clone();
        let taken = taken
            .entry(t.palette)
            .or_insert_with(|| Mask::empty(frame.width, frame.height));
        let mut hits = Vec::new();
        if let (Some(d), false) = (&diff, t.kind == ObjectKind::Static) {
            let reach = t.shape.width().max(t.shape.height());
            let gate = color.and(&d.dilate(reach));
            if !gate.is_empty() {
                hits = find(&color, &gate, t, taken);
            }
        }
        if hits.is_empty() {
            hits = find(&color, &color, t, taken);
        }
        if hits.is_empty() && t.expect == Expect::One {
            out.lost.push(t.id);
        }
        out.detections.extend(hits.into_iter().map(|p| Detection {
            template: t.id,
            class: t.class,
            position: p,
        }));
    }
    out.detections.sort_by_key(|d| (d.template, d.position.y, d.position.x));
    out.lost.sort_unstable();
    Ok(out)
}

/// Extract a recorded stream of PPM frames.
pub fn extract_stream(paths: &[impl AsRef<Path>], templates: &[ShapeTemplate]) -> Result<Vec<Extraction>> {
    let mut prev: Option<Frame> = None;
    let mut out = Vec::with_capacity(paths.len());
    for p in paths {
        let frame = Frame::load_ppm(p)?;
        out.push(match_objects(&frame, prev.as_ref(), templates)?);
        prev = Some(frame);
    }
    Ok(out)
}
