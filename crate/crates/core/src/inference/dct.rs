//! Sliding-window DCT hard thresholding.
//!
//! Blocks of `block x block` at stride `block / 2` (last row/column of blocks
//! aligned to the right/bottom edge) are transformed with the orthonormal
//! 2-D DCT-II per channel. AC coefficients with magnitude below the threshold
//! are zeroed, the block is inverted, and overlapping estimates are averaged
//! with equal weight.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DctParams {
    pub block: usize,
    /// Hard threshold on the `[0, 1]` scale.
    pub threshold: f64,
}

impl DctParams {
    /// Block 8 with the classic `2.7 sigma` hard threshold.
    pub fn for_sigma(sigma: f64) -> Self {
        DctParams {
            block: 8,
            threshold: 2.7 * sigma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.block != 8 && self.block != 16 {
            return Err(Error::InvalidParams(format!(
                "dct block must be 8 or 16, got {}",
                self.block
            )));
        }
        if self.threshold.is_nan() || self.threshold < 0.0 {
            return Err(Error::InvalidParams(format!(
                "dct threshold must be >= 0, got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// Orthonormal DCT-II basis, `basis[k * n + i]`.
pub fn dct_basis(n: usize) -> Vec<f64> {
    let mut m = vec![0f64; n * n];
    for k in 0..n {
        let alpha = if k == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt()
        };
        for i in 0..n {
            m[k * n + i] =
                alpha * (std::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2 * n) as f64).cos();
        }
    }
    m
}

/// Block origins along one axis covering `0..dim`, last one flush with the end.
pub fn block_positions(dim: usize, block: usize, stride: usize) -> Vec<usize> {
    let mut pos = Vec::new();
    let mut p = 0;
    while p + block < dim {
        pos.push(p);
        p += stride;
    }
    pos.push(dim - block);
    pos
}

/// Forward transform, threshold, inverse, in place on a row-major block.
fn filter_block(blk: &mut [f64], basis: &[f64], n: usize, threshold: f64, tmp: &mut [f64]) {
    // rows: tmp = blk * C^T
    for r in 0..n {
        for k in 0..n {
            let mut s = 0.0;
            for i in 0..n {
                s += blk[r * n + i] * basis[k * n + i];
            }
            tmp[r * n + k] = s;
        }
    }
    // cols: coef = C * tmp
    for k in 0..n {
        for c in 0..n {
            let mut s = 0.0;
            for i in 0..n {
                s += basis[k * n + i] * tmp[i * n + c];
            }
            blk[k * n + c] = s;
        }
    }
    // index 0 is DC
    for v in blk.iter_mut().skip(1) {
        if v.abs() < threshold {
            *v = 0.0;
        }
    }
    // inverse cols: tmp = C^T * coef
    for i in 0..n {
        for c in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                s += basis[k * n + i] * blk[k * n + c];
            }
            tmp[i * n + c] = s;
        }
    }
    // inverse rows: blk = tmp * C
    for r in 0..n {
        for i in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                s += tmp[r * n + k] * basis[k * n + i];
            }
            blk[r * n + i] = s;
        }
    }
}

pub fn dct_threshold_denoise(x: &Image, params: &DctParams) -> Result<Image> {
    params.validate()?;
    let n = params.block;
    let (w, h, ch) = (x.width(), x.height(), x.channels());
    if w < n || h < n {
        return Err(Error::TooSmall {
            width: w,
            height: h,
            required: n,
        });
    }
    let basis = dct_basis(n);
    let xs = block_positions(w, n, n / 2);
    let ys = block_positions(h, n, n / 2);

    // One job per (channel, block row): returns filtered blocks of that row.
    let jobs: Vec<(usize, usize)> = (0..ch)
        .flat_map(|c| (0..ys.len()).map(move |r| (c, r)))
        .collect();
    let strips = par::map_slice(&jobs, |&(c, r)| {
        let plane = x.plane(c);
        let y0 = ys[r];
        let mut blk = vec![0f64; n * n];
        let mut tmp = vec![0f64; n * n];
        let mut out = Vec::with_capacity(xs.len() * n * n);
        for &x0 in &xs {
            for by in 0..n {
                for bx in 0..n {
                    blk[by * n + bx] = plane[(y0 + by) * w + x0 + bx] as f64;
                }
            }
            filter_block(&mut blk, &basis, n, params.threshold, &mut tmp);
            out.extend_from_slice(&blk);
        }
        out
    });

    let plane_len = w * h;
    let mut acc = vec![0f64; plane_len * ch];
    let mut count = vec![0u32; plane_len];
    for (j, &(c, r)) in jobs.iter().enumerate() {
        let y0 = ys[r];
        for (bi, &x0) in xs.iter().enumerate() {
            let blk = &strips[j][bi * n * n..(bi + 1) * n * n];
            for by in 0..n {
                for bx in 0..n {
                    let idx = (y0 + by) * w + x0 + bx;
                    acc[c * plane_len + idx] += blk[by * n + bx];
                    if c == 0 {
                        count[idx] += 1;
                    }
                }
            }
        }
    }
    let data = acc
        .iter()
        .enumerate()
        .map(|(i, s)| (s / count[i % plane_len] as f64) as f32)
        .collect();
    Image::new(w, h, ch, data)
}
