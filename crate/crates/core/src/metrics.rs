//! PSNR, SSIM, and wall-time/peak-memory measurement.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// Returned instead of infinity when two images are identical.
pub const PSNR_CAP_DB: f64 = 99.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PsnrMode {
    /// MSE pooled over all channels and pixels.
    #[default]
    Joint,
    /// Mean of per-channel PSNR values.
    ChannelMean,
}

impl PsnrMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PsnrMode::Joint => "joint",
            PsnrMode::ChannelMean => "channel_mean",
        }
    }
}

impl std::str::FromStr for PsnrMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(PsnrMode::Joint),
            "channel_mean" => Ok(PsnrMode::ChannelMean),
            other => Err(Error::Config(format!(
                "unknown psnr mode '{other}' (expected joint or channel_mean)"
            ))),
        }
    }
}

fn psnr_from_mse(mse: f64, max_val: f64) -> f64 {
    if mse == 0.0 {
        PSNR_CAP_DB
    } else {
        (10.0 * (max_val * max_val / mse).log10()).min(PSNR_CAP_DB)
    }
}

fn sq_err_sum(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum()
}

/// `10 log10(max^2 / MSE)` with the MSE pooled over every sample.
pub fn psnr(a: &Image, b: &Image, max_val: f64) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let mse = sq_err_sum(a.data(), b.data()) / a.data().len() as f64;
    Ok(psnr_from_mse(mse, max_val))
}

pub fn psnr_with_mode(a: &Image, b: &Image, max_val: f64, mode: PsnrMode) -> Result<f64> {
    match mode {
        PsnrMode::Joint => psnr(a, b, max_val),
        PsnrMode::ChannelMean => {
            a.ensure_same_shape(b)?;
            let n = a.plane_len() as f64;
            let total: f64 = (0..a.channels())
                .map(|c| psnr_from_mse(sq_err_sum(a.plane(c), b.plane(c)) / n, max_val))
                .sum();
            Ok(total / a.channels() as f64)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub std: f64,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range of the samples.
    pub range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 11,
            std: 1.5,
            k1: 0.01,
            k2: 0.03,
            range: 1.0,
        }
    }
}

impl SsimParams {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.range).powi(2)
    }

    /// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
    pub fn taps(&self) -> Vec<f64> {
        let r = (self.window / 2) as f64;
        let g: Vec<f64> = (0..self.window)
            .map(|i| {
                let d = i as f64 - r;
                (-d * d / (2.0 * self.std * self.std)).exp()
            })
            .collect();
        let s: f64 = g.iter().sum();
        g.into_iter().map(|v| v / s).collect()
    }
}

/// Valid-mode separable filter of a `w x h` plane.
fn filter_valid(src: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (ow, oh) = (w + 1 - k, h + 1 - k);
    let mut tmp = vec![0f64; ow * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = taps.iter().zip(&row[x..x + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0f64; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut s = 0.0;
            for (j, t) in taps.iter().enumerate() {
                s += t * tmp[(y + j) * ow + x];
            }
            out[y * ow + x] = s;
        }
    }
    out
}

/// Mean SSIM over valid (unpadded) windows, averaged over channels.
pub fn ssim(a: &Image, b: &Image, p: &SsimParams) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let (w, h) = (a.width(), a.height());
    if w < p.window || h < p.window {
        return Err(Error::TooSmall {
            width: w,
            height: h,
            required: p.window,
        });
    }
    let taps = p.taps();
    let (c1, c2) = (p.c1(), p.c2());
    let mut total = 0.0;
    for c in 0..a.channels() {
        let pa: Vec<f64> = a.plane(c).iter().map(|&v| v as f64).collect();
        let pb: Vec<f64> = b.plane(c).iter().map(|&v| v as f64).collect();
        let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
            pa.iter().zip(&pb).map(|(x, y)| f(*x, *y)).collect()
        };
        let mu_a = filter_valid(&pa, w, h, &taps);
        let mu_b = filter_valid(&pb, w, h, &taps);
        let e_aa = filter_valid(&prod(&|x, _| x * x), w, h, &taps);
        let e_bb = filter_valid(&prod(&|_, y| y * y), w, h, &taps);
        let e_ab = filter_valid(&prod(&|x, y| x * y), w, h, &taps);
        let n = mu_a.len();
        let mut sum = 0.0;
        for i in 0..n {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += sum / n as f64;
    }
    Ok(total / a.channels() as f64)
}

/// How `peak_mem_mb` was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemMethod {
    /// OS resident-set high-water mark (process level).
    HighWaterMark,
    /// Resident set sampled before and after only.
    Sampled,
    Unavailable,
}

#[derive(Debug, Clone)]
pub struct Measured<T> {
    pub value: T,
    pub wall_ms: f64,
    /// Peak process resident set in MiB, approximate.
    pub peak_mem_mb: f64,
    /// Resident set right before the call.
    pub baseline_mem_mb: f64,
    pub mem_method: MemMethod,
}

#[derive(Debug, Clone, Copy, Default)]
struct MemSample {
    rss_kb: Option<u64>,
    hwm_kb: Option<u64>,
}

fn read_mem() -> MemSample {
    let Ok(status) = std::fs::read_to_string("/proc/self/status") else {
        return MemSample::default();
    };
    let field = |name: &str| {
        status
            .lines()
            .find_map(|l| l.strip_prefix(name))
            .and_then(|rest| rest.split_whitespace().next())
            .and_then(|v| v.parse::<u64>().ok())
    };
    MemSample {
        rss_kb: field("VmRSS:"),
        hwm_kb: field("VmHWM:"),
    }
}

/// Resets the kernel's resident-set high-water mark. Linux only, best effort.
pub fn reset_peak_rss() -> bool {
    std::fs::write("/proc/self/clear_refs", "5").is_ok()
}

/// Times `f` on a monotonic clock and records process peak memory.
pub fn measure<T>(f: impl FnOnce() -> T) -> Measured<T> {
    measure_inner(f, false)
}

/// Like [`measure`], but first resets the high-water mark so the peak covers
/// only this call. Other threads' allocations still count.
pub fn measure_resetting_peak<T>(f: impl FnOnce() -> T) -> Measured<T> {
    measure_inner(f, true)
}

fn measure_inner<T>(f: impl FnOnce() -> T, reset: bool) -> Measured<T> {
    if reset {
        reset_peak_rss();
    }
    let before = read_mem();
    let start = Instant::now();
    let value = f();
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    let after = read_mem();
    let kb = |v: u64| v as f64 / 1024.0;
    let samples = [before.rss_kb, after.rss_kb];
    let sampled_peak = samples.iter().flatten().copied().max();
    let (peak, method) = match (after.hwm_kb, sampled_peak) {
        (Some(h), s) => (Some(h.max(s.unwrap_or(0))), MemMethod::HighWaterMark),
        (None, Some(s)) => (Some(s), MemMethod::Sampled),
        (None, None) => (None, MemMethod::Unavailable),
    };
    Measured {
        value,
        wall_ms,
        peak_mem_mb: peak.map(kb).unwrap_or(0.0),
        baseline_mem_mb: before.rss_kb.map(kb).unwrap_or(0.0),
        mem_method: method,
    }
}
