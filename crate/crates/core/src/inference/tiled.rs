//! Windowed inference with blended overlaps.
//!
//! When the window covers the whole image the backend is called once on the
//! full input and its output returned untouched. Otherwise tiles are laid
//! out at stride `window - overlap`, with the last tile on each axis pushed
//! flush against the right/bottom edge, and per-pixel predictions are
//! combined as `sum(w_t * y_t) / sum(w_t)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, Rect};
use crate::par;

/// Lower bound on Hann weights so tile borders never get zero weight.
pub const HANN_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Blend {
    Uniform,
    #[default]
    Hann,
}

impl Blend {
    pub fn as_str(self) -> &'static str {
        match self {
            Blend::Uniform => "uniform",
            Blend::Hann => "hann",
        }
    }
}

impl FromStr for Blend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Blend::Uniform),
            "hann" => Ok(Blend::Hann),
            other => Err(Error::Config(format!(
                "unknown blend '{other}' (expected uniform or hann)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TileSpec {
    pub window: usize,
    pub overlap: usize,
    pub blend: Blend,
}

impl TileSpec {
    pub const DEFAULT_WINDOW: usize = 768;
    pub const DEFAULT_OVERLAP: usize = 32;

    pub fn new(window: usize, overlap: usize, blend: Blend) -> Result<Self> {
        let spec = TileSpec {
            window,
            overlap,
            blend,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || !self.window.is_multiple_of(8) {
            return Err(Error::InvalidParams(format!(
                "tile window must be a positive multiple of 8, got {}",
                self.window
            )));
        }
        if self.overlap >= self.window {
            return Err(Error::InvalidParams(format!(
                "tile overlap {} must be smaller than window {}",
                self.overlap, self.window
            )));
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        self.window - self.overlap
    }

    pub fn is_single_tile(&self, width: usize, height: usize) -> bool {
        self.window >= width.max(height)
    }
}

impl Default for TileSpec {
    fn default() -> Self {
        TileSpec {
            window: Self::DEFAULT_WINDOW,
            overlap: Self::DEFAULT_OVERLAP,
            blend: Blend::Hann,
        }
    }
}

impl fmt::Display for TileSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "window={},overlap={},blend={}",
            self.window,
            self.overlap,
            self.blend.as_str()
        )
    }
}

/// Tile origins along one axis. Axes no longer than the window get one tile.
pub fn axis_positions(dim: usize, window: usize, stride: usize) -> Vec<usize> {
    if dim <= window {
        return vec![0];
    }
    let mut pos = Vec::new();
    let mut p = 0;
    while p + window < dim {
        pos.push(p);
        p += stride;
    }
    pos.push(dim - window);
    pos
}

/// Tiles in row-major order (top row first).
pub fn tile_layout(width: usize, height: usize, spec: &TileSpec) -> Vec<Rect> {
    let tw = spec.window.min(width);
    let th = spec.window.min(height);
    let xs = axis_positions(width, spec.window, spec.stride());
    let ys = axis_positions(height, spec.window, spec.stride());
    ys.iter()
        .flat_map(|&y| xs.iter().map(move |&x| Rect::new(x, y, tw, th)))
        .collect()
}

/// One-dimensional blend profile over a tile side of `len` pixels.
pub fn blend_profile(len: usize, blend: Blend) -> Vec<f64> {
    match blend {
        Blend::Uniform => vec![1.0; len],
        Blend::Hann => (0..len)
            .map(|i| {
                let s = (std::f64::consts::PI * (i as f64 + 0.5) / len as f64).sin();
                (s * s).max(HANN_FLOOR)
            })
            .collect(),
    }
}

/// Per-pixel sum of tile weights (the normalizer of the blend).
pub fn weight_accumulator(width: usize, height: usize, spec: &TileSpec) -> Vec<f64> {
    let mut acc = vec![0f64; width * height];
    for r in tile_layout(width, height, spec) {
        let wx = blend_profile(r.w, spec.blend);
        let wy = blend_profile(r.h, spec.blend);
        for (j, wyj) in wy.iter().enumerate() {
            for (i, wxi) in wx.iter().enumerate() {
                acc[(r.y0 + j) * width + r.x0 + i] += wxi * wyj;
            }
        }
    }
    acc
}

/// Runs `f` tile by tile and blends. Tiles may run in parallel; blending is
/// done afterwards in tile order so the result is independent of scheduling.
pub fn tiled_denoise<F>(f: &F, x: &Image, spec: &TileSpec) -> Result<Image>
where
    F: Fn(&Image) -> Result<Image> + Sync + ?Sized,
{
    spec.validate()?;
    let (w, h, ch) = (x.width(), x.height(), x.channels());
    if spec.is_single_tile(w, h) {
        return f(x);
    }
    let tiles = tile_layout(w, h, spec);
    let outputs = par::map_slice(&tiles, |r| -> Result<Image> {
        let tag = || format!("tile ({},{}) {}x{}", r.x0, r.y0, r.w, r.h);
        let input = x.crop(*r)?;
        let y = f(&input).map_err(|e| e.tagged(tag()))?;
        if !y.same_shape(&input) {
            return Err(Error::ShapeMismatch {
                left: input.shape_string(),
                right: y.shape_string(),
            }
            .tagged(tag()));
        }
        Ok(y)
    });

    let n = w * h;
    let mut acc = vec![0f64; n * ch];
    let mut norm = vec![0f64; n];
    for (r, out) in tiles.iter().zip(outputs) {
        let out = out?;
        let wx = blend_profile(r.w, spec.blend);
        let wy = blend_profile(r.h, spec.blend);
        for (j, wyj) in wy.iter().enumerate() {
            for (i, wxi) in wx.iter().enumerate() {
                let wt = wxi * wyj;
                let idx = (r.y0 + j) * w + r.x0 + i;
                norm[idx] += wt;
                for c in 0..ch {
                    acc[c * n + idx] += wt * out.get(c, i, j) as f64;
                }
            }
        }
    }
    let data = acc
        .iter()
        .enumerate()
        .map(|(i, s)| (s / norm[i % n]) as f32)
        .collect();
    Image::new(w, h, ch, data)
}
