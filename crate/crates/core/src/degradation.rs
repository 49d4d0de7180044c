//! Seeded additive white Gaussian noise, `x = y + n`, `n ~ N(0, sigma^2)`.
//!
//! Randomness comes from SplitMix64 (Steele, Lea, Flood 2014; the
//! `SplittableRandom` mixer as published by Vigna). Its output for draw `i`
//! depends only on `state0 + (i + 1) * 0x9E3779B97F4A7C15`, so each stream is
//! counter-based and fully determined by its initial state.
//!
//! Per-image streams: `state0 = fnv1a64(image_id) ^ mix64(seed ^ 0x6A09E667F3BCC909)`,
//! where `fnv1a64` is 64-bit FNV-1a over the UTF-8 bytes of the id and `mix64`
//! is the SplitMix64 finalizer.
//!
//! Normals come from Box–Muller on pairs of draws: `u1 = (a >> 11) + 1` and
//! `u2 = b >> 11`, both scaled by `2^-53`, give
//! `r = sqrt(-2 ln u1)`, `z0 = r cos(2 pi u2)`, `z1 = r sin(2 pi u2)`.
//! `z0` is used before `z1`. Transcendentals come from `libm`, so results do
//! not depend on the platform math library. Noise is added in planar index
//! order in f64 and rounded once to f32.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::image::Image;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const SEED_SALT: u64 = 0x6A09_E667_F3BC_C909;
const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub const DEFAULT_SIGMA: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ClipMode {
    #[default]
    None,
    Clip01,
}

impl ClipMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ClipMode::None => "none",
            ClipMode::Clip01 => "clip01",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Standard deviation on the 0..255 scale.
    pub sigma_8bit: f64,
    pub seed: u64,
    pub clip_mode: ClipMode,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            sigma_8bit: DEFAULT_SIGMA,
            seed: 0,
            clip_mode: ClipMode::None,
        }
    }
}

impl NoiseSpec {
    pub fn new(sigma_8bit: f64, seed: u64) -> Self {
        NoiseSpec {
            sigma_8bit,
            seed,
            clip_mode: ClipMode::None,
        }
    }

    /// Sigma on the `[0, 1]` intensity scale.
    pub fn sigma_unit(&self) -> f64 {
        self.sigma_8bit / 255.0
    }

    pub fn canonical(&self) -> String {
        format!(
            "sigma={};seed={};clip={}",
            self.sigma_8bit,
            self.seed,
            self.clip_mode.as_str()
        )
    }

    /// Short hex digest of the canonical form.
    pub fn digest(&self) -> String {
        short_hash(self.canonical().as_bytes())
    }
}

pub(crate) fn short_hash(bytes: &[u8]) -> String {
    let d = Sha256::digest(bytes);
    d[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// A SplitMix64 stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngStream {
    state: u64,
}

impl RngStream {
    pub fn from_state(state: u64) -> Self {
        RngStream { state }
    }

    pub fn state(&self) -> u64 {
        self.state
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n` via the multiply-high reduction. `n` must be > 0.
    #[inline]
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    /// One Box–Muller pair `(z0, z1)`.
    pub fn normal_pair(&mut self) -> (f64, f64) {
        let scale = 1.0 / (1u64 << 53) as f64;
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * scale;
        let u2 = (self.next_u64() >> 11) as f64 * scale;
        let r = libm::sqrt(-2.0 * libm::log(u1));
        let theta = 2.0 * std::f64::consts::PI * u2;
        (r * libm::cos(theta), r * libm::sin(theta))
    }

    /// Fills `out` with standard normals, consuming pairs in order.
    pub fn fill_normals(&mut self, out: &mut [f64]) {
        let mut chunks = out.chunks_exact_mut(2);
        for pair in &mut chunks {
            let (a, b) = self.normal_pair();
            pair[0] = a;
            pair[1] = b;
        }
        if let [last] = chunks.into_remainder() {
            *last = self.normal_pair().0;
        }
    }
}

/// The noise stream for one image, independent of evaluation order.
pub fn derive_stream(seed: u64, image_id: &str) -> RngStream {
    RngStream::from_state(fnv1a64(image_id.as_bytes()) ^ mix64(seed ^ SEED_SALT))
}

pub fn add_gaussian_noise(y: &Image, spec: &NoiseSpec, stream: &mut RngStream) -> Image {
    let sigma = spec.sigma_unit();
    if sigma == 0.0 {
        let out = y.clone();
        return match spec.clip_mode {
            ClipMode::None => out,
            ClipMode::Clip01 => out.clamped01(),
        };
    }
    let mut z = vec![0f64; y.data().len()];
    stream.fill_normals(&mut z);
    let mut x = y.clone();
    for (v, n) in x.data_mut().iter_mut().zip(&z) {
        let noisy = (*v as f64 + sigma * n) as f32;
        *v = match spec.clip_mode {
            ClipMode::None => noisy,
            ClipMode::Clip01 => noisy.clamp(0.0, 1.0),
        };
    }
    x
}

/// Convenience wrapper: derive the per-image stream and add noise.
pub fn degrade(y: &Image, spec: &NoiseSpec, image_id: &str) -> Image {
    let mut stream = derive_stream(spec.seed, image_id);
    add_gaussian_noise(y, spec, &mut stream)
}
