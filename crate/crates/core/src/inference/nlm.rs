//! Pixelwise non-local means for color images.
//!
//! For pixel `p` and every candidate `q` in the `search x search` window
//! centered on `p`, the patch distance is the mean squared difference over
//! the `patch x patch` neighbourhoods and all channels. The weight is
//! `exp(-max(d2 - 2 sigma^2, 0) / h^2)`, so pure noise between identical
//! patches costs nothing. `p` itself takes part with weight 1. Borders are
//! reflect-padded, so windows near the edge see mirrored content.
//!
//! Patch sums use a per-offset integral image over bands of
//! [`BAND_ROWS`] output rows; the band height is fixed, so output does not
//! depend on how many workers process the bands.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::inference::filters::reflect;
use crate::par;

pub const BAND_ROWS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NlmParams {
    pub patch: usize,
    pub search: usize,
    /// Filtering strength on the `[0, 1]` scale.
    pub h: f64,
    /// Noise standard deviation on the `[0, 1]` scale.
    pub sigma: f64,
}

impl NlmParams {
    /// Patch 7, search 21, `h = 0.35 sigma` (or 0.01 when `sigma` is 0).
    pub fn for_sigma(sigma: f64) -> Self {
        NlmParams {
            patch: 7,
            search: 21,
            h: if sigma > 0.0 { 0.35 * sigma } else { 0.01 },
            sigma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch.is_multiple_of(2) || self.search.is_multiple_of(2) {
            return Err(Error::InvalidParams(format!(
                "nlm patch ({}) and search ({}) must be odd",
                self.patch, self.search
            )));
        }
        if !(self.h.is_finite() && self.h > 0.0) {
            return Err(Error::InvalidParams(format!("nlm h must be > 0, got {}", self.h)));
        }
        if self.sigma.is_nan() || self.sigma < 0.0 {
            return Err(Error::InvalidParams(format!(
                "nlm sigma must be >= 0, got {}",
                self.sigma
            )));
        }
        Ok(())
    }
}

struct Padded {
    planes: Vec<Vec<f64>>,
    width: usize,
    pad: usize,
}

impl Padded {
    fn new(img: &Image, pad: usize) -> Self {
        let (w, h) = (img.width(), img.height());
        let pw = w + 2 * pad;
        let ph = h + 2 * pad;
        let planes = (0..img.channels())
            .map(|c| {
                let src = img.plane(c);
                let mut p = Vec::with_capacity(pw * ph);
                for yy in 0..ph {
                    let sy = reflect(yy as isize - pad as isize, h);
                    for xx in 0..pw {
                        let sx = reflect(xx as isize - pad as isize, w);
                        p.push(src[sy * w + sx] as f64);
                    }
                }
                p
            })
            .collect();
        Padded {
            planes,
            width: pw,
            pad,
        }
    }
}

pub fn nlm_denoise(x: &Image, params: &NlmParams) -> Result<Image> {
    params.validate()?;
    let (w, h, ch) = (x.width(), x.height(), x.channels());
    let pr = params.patch / 2;
    let sr = params.search / 2;
    let padded = Padded::new(x, pr + sr);
    let inv_h2 = 1.0 / (params.h * params.h);
    let bias = 2.0 * params.sigma * params.sigma;
    let norm = 1.0 / (ch * params.patch * params.patch) as f64;

    let n_bands = h.div_ceil(BAND_ROWS);
    let bands = par::map_range(n_bands, |b| {
        let y0 = b * BAND_ROWS;
        let y1 = (y0 + BAND_ROWS).min(h);
        denoise_band(&padded, w, y0, y1, ch, pr, sr, inv_h2, bias, norm)
    });

    let n = w * h;
    let mut out = vec![0f32; n * ch];
    for (b, band) in bands.into_iter().enumerate() {
        let y0 = b * BAND_ROWS;
        let rows = band.len() / (w * ch);
        for c in 0..ch {
            for r in 0..rows {
                let src = &band[(c * rows + r) * w..(c * rows + r + 1) * w];
                let dst = c * n + (y0 + r) * w;
                out[dst..dst + w].copy_from_slice(src);
            }
        }
    }
    Image::new(w, h, ch, out)
}

/// Returns the band's output as `[c][row][x]`.
#[allow(clippy::too_many_arguments)]
fn denoise_band(
    p: &Padded,
    w: usize,
    y0: usize,
    y1: usize,
    ch: usize,
    pr: usize,
    sr: usize,
    inv_h2: f64,
    bias: f64,
    norm: f64,
) -> Vec<f32> {
    let rows = y1 - y0;
    let pw = p.width;
    let pad = p.pad;
    // Region of patch-center-support in padded coords:
    // rows y0+pad-pr .. y1+pad+pr, cols pad-pr .. w+pad+pr.
    let ry0 = y0 + pad - pr;
    let rh = rows + 2 * pr;
    let rx0 = pad - pr;
    let rw = w + 2 * pr;
    let iw = rw + 1;
    let mut integral = vec![0f64; iw * (rh + 1)];
    let mut wsum = vec![0f64; rows * w];
    let mut acc = vec![0f64; ch * rows * w];
    let ps = 2 * pr + 1;

    for dy in -(sr as isize)..=(sr as isize) {
        for dx in -(sr as isize)..=(sr as isize) {
            for r in 0..rh {
                let yy = ry0 + r;
                let yq = (yy as isize + dy) as usize;
                let mut run = 0.0;
                for cidx in 0..rw {
                    let xx = rx0 + cidx;
                    let xq = (xx as isize + dx) as usize;
                    let mut d = 0.0;
                    for plane in &p.planes {
                        let diff = plane[yy * pw + xx] - plane[yq * pw + xq];
                        d += diff * diff;
                    }
                    run += d;
                    integral[(r + 1) * iw + cidx + 1] = integral[r * iw + cidx + 1] + run;
                }
            }
            for r in 0..rows {
                for x in 0..w {
                    // Patch centered at region coords (x + pr, r + pr).
                    let (top, left) = (r, x);
                    let (bot, right) = (r + ps, x + ps);
                    let s = integral[bot * iw + right] - integral[top * iw + right]
                        - integral[bot * iw + left]
                        + integral[top * iw + left];
                    let d2 = s * norm;
                    let wt = (-(d2 - bias).max(0.0) * inv_h2).exp();
                    wsum[r * w + x] += wt;
                    let yq = (y0 + r + pad) as isize + dy;
                    let xq = (x + pad) as isize + dx;
                    let qi = yq as usize * pw + xq as usize;
                    for (c, plane) in p.planes.iter().enumerate() {
                        acc[(c * rows + r) * w + x] += wt * plane[qi];
                    }
                }
            }
        }
    }
    let mut out = vec![0f32; ch * rows * w];
    for c in 0..ch {
        for i in 0..rows * w {
            out[c * rows * w + i] = (acc[c * rows * w + i] / wsum[i]) as f32;
        }
    }
    out
}
