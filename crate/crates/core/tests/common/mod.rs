#![allow(dead_code)]

pub mod oracles;

use std::path::Path;

use dnbench::image::{save_png, PngDepth};
use dnbench::Image;

/// xorshift64*, kept separate from the library RNG on purpose.
pub struct TestRng(u64);

impl TestRng {
    pub fn new(seed: u64) -> Self {
        TestRng(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1)
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.0;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.0 = x;
        x.wrapping_mul(0x2545_F491_4F6C_DD1D)
    }

    pub fn unit(&mut self) -> f32 {
        (self.next_u64() >> 40) as f32 / (1u64 << 24) as f32
    }
}

pub fn random_image(w: usize, h: usize, seed: u64) -> Image {
    let mut rng = TestRng::new(seed);
    let data = (0..w * h * 3).map(|_| rng.unit()).collect();
    Image::new(w, h, 3, data).unwrap()
}

/// Smooth gradients plus a few flat rectangles, in `[0.1, 0.9]`.
pub fn piecewise_smooth(w: usize, h: usize, seed: u64) -> Image {
    let mut rng = TestRng::new(seed);
    let rects: Vec<(usize, usize, usize, usize, [f32; 3])> = (0..4)
        .map(|_| {
            let x0 = rng.next_u64() as usize % w;
            let y0 = rng.next_u64() as usize % h;
            let rw = 8 + rng.next_u64() as usize % (w / 2);
            let rh = 8 + rng.next_u64() as usize % (h / 2);
            (x0, y0, rw, rh, [rng.unit(), rng.unit(), rng.unit()])
        })
        .collect();
    Image::from_fn(w, h, 3, |c, x, y| {
        let mut v = 0.3 + 0.2 * (x as f32 / w as f32) + 0.1 * (c as f32) * (y as f32 / h as f32);
        for &(x0, y0, rw, rh, col) in &rects {
            if x >= x0 && x < x0 + rw && y >= y0 && y < y0 + rh {
                v = 0.1 + 0.8 * col[c];
            }
        }
        v.clamp(0.1, 0.9)
    })
}

/// Writes `n` random-content 8-bit PNGs named `img_000.png`...
pub fn write_corpus(dir: &Path, n: usize, w: usize, h: usize, seed: u64) {
    std::fs::create_dir_all(dir).unwrap();
    for i in 0..n {
        let img = piecewise_smooth(w, h, seed + i as u64);
        save_png(&img, dir.join(format!("img_{i:03}.png")), PngDepth::Eight).unwrap();
    }
}
