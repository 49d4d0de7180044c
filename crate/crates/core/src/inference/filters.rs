//! Separable linear filters with reflect (mirror without edge repeat) borders.

use crate::image::Image;
use crate::par;

/// Mirror index into `0..n` without repeating the edge sample
/// (`-1 -> 1`, `n -> n-2`), applied repeatedly for far offsets.
#[inline]
pub fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

/// Normalized Gaussian taps with radius `ceil(3 * std)`.
pub fn gaussian_kernel(std: f64) -> Vec<f64> {
    let radius = (3.0 * std).ceil().max(1.0) as isize;
    let k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * std * std)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Filters every plane with `kx` along rows then `ky` along columns.
/// Both kernels must have odd length. An empty kernel skips that axis.
pub fn separable(img: &Image, kx: &[f64], ky: &[f64]) -> Image {
    let (w, h) = (img.width(), img.height());
    let rx = kx.len() as isize / 2;
    let ry = ky.len() as isize / 2;
    let mut out = img.clone();
    for c in 0..img.channels() {
        let src = img.plane(c);
        let mut tmp = vec![0f64; w * h];
        if kx.is_empty() {
            for (t, s) in tmp.iter_mut().zip(src) {
                *t = *s as f64;
            }
        } else {
            par::for_each_chunk_mut(&mut tmp, w, |y, row| {
                let line = &src[y * w..(y + 1) * w];
                for (x, t) in row.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for (k, wt) in kx.iter().enumerate() {
                        acc += wt * line[reflect(x as isize + k as isize - rx, w)] as f64;
                    }
                    *t = acc;
                }
            });
        }
        let tmp = &tmp;
        par::for_each_chunk_mut(out.plane_mut(c), w, |y, row| {
            if ky.is_empty() {
                for (x, o) in row.iter_mut().enumerate() {
                    *o = tmp[y * w + x] as f32;
                }
                return;
            }
            for (x, o) in row.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (k, wt) in ky.iter().enumerate() {
                    acc += wt * tmp[reflect(y as isize + k as isize - ry, h) * w + x];
                }
                *o = acc as f32;
            }
        });
    }
    out
}

/// Isotropic Gaussian blur. `std == 0` returns the input unchanged.
pub fn gaussian_blur(img: &Image, std: f64) -> Image {
    if std == 0.0 {
        return img.clone();
    }
    let k = gaussian_kernel(std);
    separable(img, &k, &k)
}

/// Mean over `[x - radius, x + radius]` along rows only. Not rotation
/// equivariant, which makes it a useful probe for the self-ensemble.
pub fn box_blur_horizontal(img: &Image, radius: usize) -> Image {
    if radius == 0 {
        return img.clone();
    }
    let taps = 2 * radius + 1;
    let k = vec![1.0 / taps as f64; taps];
    separable(img, &k, &[])
}
