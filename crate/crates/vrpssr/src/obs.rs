//! Agent-facing state encodings: three binary feature planes plus a
//! remaining-time scalar, and a grayscale render for humans (PGM export).

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{CustomerStatus, EnvState};
use crate::error::Result;
use crate::instance::Cell;

/// Binary feature planes, row 0 at the top of the screen (grid row y = H-1),
/// so planes and renders share orientation.
///
/// Plane 0: vehicle (single pixel). Plane 1: active customers.
/// Plane 2: potential customers. Served customers appear nowhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub width: u32,
    pub height: u32,
    /// Three row-major H*W planes of 0/1 bytes.
    pub planes: [Vec<u8>; 3],
    /// (T - t) / T, in [0, 1].
    pub time_left: f64,
}

impl Observation {
    pub fn plane_index(&self, cell: Cell) -> usize {
        let row = (self.height - 1 - cell.y as u32) as usize;
        row * self.width as usize + cell.x as usize
    }

    pub fn plane_sum(&self, plane: usize) -> u32 {
        self.planes[plane].iter().map(|v| *v as u32).sum()
    }

    /// Recovers the vehicle cell from plane 0.
    pub fn vehicle_cell(&self) -> Cell {
        let idx = self.planes[0]
            .iter()
            .position(|v| *v == 1)
            .expect("plane 0 sums to 1");
        let row = idx as u32 / self.width;
        let col = idx as u32 % self.width;
        Cell::new(col as i32, (self.height - 1 - row) as i32)
    }

    /// Admissibility mask derived from the vehicle pixel: all five actions
    /// minus moves that leave the grid. Action order matches `env::ACTIONS`.
    pub fn admissible_mask(&self) -> [bool; 5] {
        let v = self.vehicle_cell();
        [
            (v.y as u32) + 1 < self.height, // Up
            v.y > 0,                        // Down
            v.x > 0,                        // Left
            (v.x as u32) + 1 < self.width,  // Right
            true,                           // Wait
        ]
    }

    /// Flattens planes then the time scalar into a network input vector.
    pub fn to_input<F: num_traits::Float>(&self) -> Vec<F> {
        let mut out = Vec::with_capacity(self.planes[0].len() * 3 + 1);
        for plane in &self.planes {
            out.extend(plane.iter().map(|v| F::from(*v).unwrap()));
        }
        out.push(F::from(self.time_left).unwrap());
        out
    }
}

pub fn feature_layers(state: &EnvState) -> Observation {
    let cfg = &state.instance.config;
    let n = (cfg.width * cfg.height) as usize;
    let mut obs = Observation {
        width: cfg.width,
        height: cfg.height,
        planes: [vec![0u8; n], vec![0u8; n], vec![0u8; n]],
        time_left: if cfg.horizon == 0 {
            0.0
        } else {
            (cfg.horizon - state.t.min(cfg.horizon)) as f64 / cfg.horizon as f64
        },
    };
    let v = obs.plane_index(state.vehicle);
    obs.planes[0][v] = 1;
    for (i, c) in state.instance.customers.iter().enumerate() {
        match state.status[i] {
            CustomerStatus::Active => {
                let idx = obs.plane_index(c.cell);
                obs.planes[1][idx] = 1;
            }
            CustomerStatus::Potential => {
                let idx = obs.plane_index(c.cell);
                obs.planes[2][idx] = 1;
            }
            CustomerStatus::Served => {}
        }
    }
    obs
}

/// Grayscale values used by the render. Only the qualitative ordering
/// matters to the game; these exact bytes are the documented defaults.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Palette {
    pub background: u8,
    pub border: u8,
    pub depot: u8,
    pub potential: u8,
    pub active: u8,
    pub vehicle: u8,
    pub time_bar: u8,
}

impl Default for Palette {
    fn default() -> Self {
        Palette {
            background: 0,
            border: 60,
            depot: 100,
            potential: 160,
            active: 250,
            vehicle: 255,
            time_bar: 255,
        }
    }
}

pub const BORDER_PX: u32 = 2;
pub const TIME_BAR_PX: u32 = 2;

/// Grayscale frame: playable W x H area, 2px border on every side, and a 2px
/// time bar above the top border (36x38 for the 32x32 grid).
#[derive(Debug, Clone, PartialEq)]
pub struct RenderFrame {
    pub width: u32,
    pub height: u32,
    /// Row-major bytes, row 0 at the top.
    pub pixels: Vec<u8>,
}

impl RenderFrame {
    pub fn get(&self, col: u32, row: u32) -> u8 {
        self.pixels[(row * self.width + col) as usize]
    }

    fn set(&mut self, col: u32, row: u32, value: u8) {
        self.pixels[(row * self.width + col) as usize] = value;
    }
}

pub fn render_frame(state: &EnvState) -> RenderFrame {
    render_frame_with_palette(state, Palette::default())
}

pub fn render_frame_with_palette(state: &EnvState, palette: Palette) -> RenderFrame {
    let cfg = &state.instance.config;
    let (w, h) = (cfg.width, cfg.height);
    let width = w + 2 * BORDER_PX;
    let height = h + 2 * BORDER_PX + TIME_BAR_PX;
    let mut frame = RenderFrame {
        width,
        height,
        pixels: vec![palette.background; (width * height) as usize],
    };

    // Border ring around the playable area.
    for row in TIME_BAR_PX..height {
        for col in 0..width {
            let in_playable = row >= TIME_BAR_PX + BORDER_PX
                && row < TIME_BAR_PX + BORDER_PX + h
                && col >= BORDER_PX
                && col < BORDER_PX + w;
            if !in_playable {
                frame.set(col, row, palette.border);
            }
        }
    }

    // Time bar fills left-to-right over the playable width.
    let time_left = if cfg.horizon == 0 {
        0.0
    } else {
        (cfg.horizon - state.t.min(cfg.horizon)) as f64 / cfg.horizon as f64
    };
    let fill = (time_left * w as f64).round() as u32;
    for row in 0..TIME_BAR_PX {
        for col in 0..fill {
            frame.set(BORDER_PX + col, row, palette.time_bar);
        }
    }

    let playable = |cell: Cell| -> (u32, u32) {
        (
            BORDER_PX + cell.x as u32,
            TIME_BAR_PX + BORDER_PX + (h - 1 - cell.y as u32),
        )
    };

    // Draw order, bottom to top: depot, potential customers, vehicle ring,
    // active customers.
    let (dc, dr) = playable(cfg.depot);
    frame.set(dc, dr, palette.depot);

    for (i, c) in state.instance.customers.iter().enumerate() {
        if state.status[i] == CustomerStatus::Potential {
            let (col, row) = playable(c.cell);
            frame.set(col, row, palette.potential);
        }
    }

    // Vehicle: white 3x3 ring with an open central pixel, clipped to the
    // playable area.
    for dy in -1i32..=1 {
        for dx in -1i32..=1 {
            if dx == 0 && dy == 0 {
                continue;
            }
            let cell = Cell::new(state.vehicle.x + dx, state.vehicle.y + dy);
            if cfg.contains(cell) {
                let (col, row) = playable(cell);
                frame.set(col, row, palette.vehicle);
            }
        }
    }

    for (i, c) in state.instance.customers.iter().enumerate() {
        if state.status[i] == CustomerStatus::Active {
            let (col, row) = playable(c.cell);
            frame.set(col, row, palette.active);
        }
    }

    frame
}

/// Writes a frame as a binary PGM (P5) file.
pub fn write_pgm(frame: &RenderFrame, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    write!(f, "P5\n{} {}\n255\n", frame.width, frame.height)?;
    f.write_all(&frame.pixels)?;
    Ok(())
}
