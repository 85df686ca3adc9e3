use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::state::EnvState;
use super::types::{ObjectClass, ObjectKind};
use crate::error::{Error, Result};

/// Palette-indexed frame, row-major. Index 0 is the background.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub cells: Vec<u8>,
}

/// RGB colour for each palette index.
pub const PALETTE: [[u8; 3]; 8] = [
    [0, 0, 0],
    [142, 142, 142],
    [236, 236, 236],
    [92, 186, 92],
    [213, 130, 74],
    [200, 72, 72],
    [84, 92, 214],
    [232, 232, 74],
];

impl Frame {
    pub fn blank(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            cells: vec![0; width * height],
        }
    }

    pub fn get(&self, x: i32, y: i32) -> Option<u8> {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            return None;
        }
        Some(self.cells[y as usize * self.width + x as usize])
    }

    pub fn count(&self, index: u8) -> usize {
        self.cells.iter().filter(|&&c| c == index).count()
    }

    /// Binary portable pixmap (P6) using [`PALETTE`].
    pub fn write_ppm(&self, mut out: impl Write) -> std::io::Result<()> {
        write!(out, "P6\n{} {}\n255\n", self.width, self.height)?;
        let mut buf = Vec::with_capacity(self.cells.len() * 3);
        for &c in &self.cells {
            buf.extend_from_slice(&PALETTE[c as usize % PALETTE.len()]);
        }
        out.write_all(&buf)
    }

    pub fn save_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_ppm(std::io::BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }

    /// Read a P6 pixmap whose colours all come from [`PALETTE`].
    pub fn read_ppm(input: impl Read) -> Result<Self> {
        let mut r = BufReader::new(input);
        let mut header = Vec::new();
        while header.len() < 4 {
            let mut line = String::new();
            if r.read_line(&mut line).map_err(|e| Error::io("<ppm>", e))? == 0 {
                return Err(Error::Shape("truncated ppm header".into()));
            }
            let line = line.split('#').next().unwrap_or("");
            header.extend(line.split_whitespace().map(str::to_owned));
        }
        if header[0] != "P6" || header[3] != "255" {
            return Err(Error::Shape(format!("unsupported pixmap header {header:?}")));
        }
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| Error::Shape(format!("bad pixmap dimension `{s}`: {e}")))
        };
        let (width, height) = (parse(&header[1])?, parse(&header[2])?);
        let mut rgb = vec![0u8; width * height * 3];
        r.read_exact(&mut rgb).map_err(|e| Error::io("<ppm>", e))?;
        let cells = rgb
            .chunks_exact(3)
            .map(|px| {
                PALETTE
                    .iter()
                    .position(|c| c == px)
                    .map(|i| i as u8)
                    .ok_or_else(|| Error::Shape(format!("colour {px:?} is not in the palette")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            width,
            height,
            cells,
        })
    }

    pub fn load_ppm(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_ppm(file)
    }
}

/// Draw every object with its class colour. Static objects go first, then the
/// ball, then paddles, so a paddle occludes a ball pressed against it.
pub fn render(state: &EnvState) -> Frame {
    let mut frame = Frame::blank(state.width() as usize, state.height() as usize);
    let rank = |class: ObjectClass, kind: ObjectKind| match (class, kind) {
        (_, ObjectKind::Static) => 0,
        (ObjectClass::Ball, _) => 1,
        _ => 2,
    };
    let mut order: Vec<_> = state.objects.values().collect();
    order.sort_by_key(|o| (rank(o.class, o.kind), o.id));
    for obj in order {
        let colour = obj.class.palette_index();
        for c in obj.cells() {
            if c.x >= 0 && c.y >= 0 && (c.x as usize) < frame.width && (c.y as usize) < frame.height {
                frame.cells[c.y as usize * frame.width + c.x as usize] = colour;
            }
        }
    }
    frame
}
