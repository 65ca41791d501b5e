//! Heatmap PNGs with fixed colormaps. Axis labels and value ranges travel as
//! PNG text chunks, so identical inputs give identical bytes.

use std::f64::consts::PI;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Colormap {
    /// Perceptually ordered dark-blue → yellow, for non-negative data.
    Sequential,
    /// Blue → white → red, symmetric about zero.
    Diverging,
    /// Periodic hue wheel for phases on [−π, π).
    Cyclic,
}

const SEQUENTIAL: [[u8; 3]; 9] = [
    [68, 1, 84],
    [71, 44, 122],
    [59, 81, 139],
    [44, 113, 142],
    [33, 144, 141],
    [39, 173, 129],
    [92, 200, 99],
    [170, 220, 50],
    [253, 231, 37],
];

const DIVERGING: [[u8; 3]; 5] = [[33, 102, 172], [146, 197, 222], [247, 247, 247], [244, 165, 130], [178, 24, 43]];

const MISSING: [u8; 3] = [128, 128, 128];

fn lerp_table(table: &[[u8; 3]], x: f64) -> [u8; 3] {
    let x = x.clamp(0.0, 1.0) * (table.len() - 1) as f64;
    let i = (x.floor() as usize).min(table.len() - 2);
    let f = x - i as f64;
    std::array::from_fn(|c| (table[i][c] as f64 * (1.0 - f) + table[i + 1][c] as f64 * f).round() as u8)
}

fn hue(x: f64) -> [u8; 3] {
    // cosine palette: exactly periodic in x with period 1
    std::array::from_fn(|c| {
        let phase = 2.0 * PI * (x + c as f64 / 3.0);
        (127.5 + 110.0 * phase.cos()).round() as u8
    })
}

impl Colormap {
    fn color(&self, v: f64, lo: f64, hi: f64) -> [u8; 3] {
        if !v.is_finite() {
            return MISSING;
        }
        match self {
            Colormap::Sequential => lerp_table(&SEQUENTIAL, if hi > lo { (v - lo) / (hi - lo) } else { 0.5 }),
            Colormap::Diverging => {
                let m = lo.abs().max(hi.abs());
                lerp_table(&DIVERGING, if m > 0.0 { 0.5 + 0.5 * v / m } else { 0.5 })
            }
            Colormap::Cyclic => hue((v - lo) / (hi - lo)),
        }
    }
}

/// Row-major cell values plus the annotations stored in the file.
#[derive(Debug, Clone)]
pub struct Heatmap<'a> {
    pub rows: usize,
    pub cols: usize,
    pub values: &'a [f64],
    pub colormap: Colormap,
    /// Value range; `None` uses the finite data range (phases always use
    /// [−π, π)).
    pub range: Option<(f64, f64)>,
    /// Pixels per cell along each axis.
    pub cell_px: usize,
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
}

impl Heatmap<'_> {
    fn value_range(&self) -> (f64, f64) {
        if self.colormap == Colormap::Cyclic {
            return (-PI, PI);
        }
        if let Some(r) = self.range {
            return r;
        }
        let finite = self.values.iter().filter(|v| v.is_finite());
        let lo = finite.clone().cloned().fold(f64::INFINITY, f64::min);
        let hi = finite.cloned().fold(f64::NEG_INFINITY, f64::max);
        if lo.is_finite() {
            (lo, hi)
        } else {
            (0.0, 1.0)
        }
    }

    /// RGB pixels, first data row at the top.
    pub fn pixels(&self) -> Result<Vec<u8>> {
        if self.values.len() != self.rows * self.cols || self.rows == 0 || self.cols == 0 {
            return Err(Error::Shape(format!(
                "heatmap has {} values for {}×{} cells",
                self.values.len(),
                self.rows,
                self.cols
            )));
        }
        let s = self.cell_px.max(1);
        let (lo, hi) = self.value_range();
        let width = self.cols * s;
        let mut out = vec![0u8; width * self.rows * s * 3];
        for r in 0..self.rows {
            for c in 0..self.cols {
                let rgb = self.colormap.color(self.values[r * self.cols + c], lo, hi);
                for dy in 0..s {
                    for dx in 0..s {
                        let p = ((r * s + dy) * width + c * s + dx) * 3;
                        out[p..p + 3].copy_from_slice(&rgb);
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        let pixels = self.pixels()?;
        let s = self.cell_px.max(1);
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut enc = png::Encoder::new(BufWriter::new(file), (self.cols * s) as u32, (self.rows * s) as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_compression(png::Compression::Default);
        let (lo, hi) = self.value_range();
        let png_err = |e: png::EncodingError| match e {
            png::EncodingError::IoError(io) => Error::io(path, io),
            other => Error::Numeric(format!("PNG encoding failed: {other}")),
        };
        for (k, v) in [
            ("Title", self.title.clone()),
            ("x_axis", format!("{} [{}, {}]", self.x_label, self.x_range.0, self.x_range.1)),
            ("y_axis", format!("{} [{}, {}] top to bottom", self.y_label, self.y_range.0, self.y_range.1)),
            ("value_range", format!("[{lo}, {hi}]")),
            ("cells", format!("{}x{}", self.rows, self.cols)),
        ] {
            enc.add_text_chunk(k.to_string(), v).map_err(png_err)?;
        }
        let mut w = enc.write_header().map_err(png_err)?;
        w.write_image_data(&pixels).map_err(png_err)?;
        w.finish().map_err(png_err)
    }
}

/// Wrap a phase onto [−π, π).
pub fn wrap_phase(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y >= PI {
        -PI
    } else {
        y
    }
}
