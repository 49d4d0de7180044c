//! Slow, direct reference implementations.

use dnbench::Image;

fn refl(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let mut i = i;
    while i < 0 || i >= n {
        if i < 0 {
            i = -i;
        }
        if i >= n {
            i = 2 * (n - 1) - i;
        }
    }
    i as usize
}

/// Pixelwise NLM: mean squared patch distance over pixels and channels.
pub fn nlm(x: &Image, patch: usize, search: usize, h: f64, sigma: f64) -> Image {
    let (w, hh, ch) = (x.width(), x.height(), x.channels());
    let (pr, sr) = ((patch / 2) as isize, (search / 2) as isize);
    let at = |c: usize, px: isize, py: isize| x.get(c, refl(px, w), refl(py, hh)) as f64;
    let mut out = Image::filled(w, hh, ch, 0.0);
    for py in 0..hh as isize {
        for px in 0..w as isize {
            let mut wsum = 0.0;
            let mut acc = vec![0.0; ch];
            for dy in -sr..=sr {
                for dx in -sr..=sr {
                    let (qx, qy) = (px + dx, py + dy);
                    let mut d = 0.0;
                    for c in 0..ch {
                        for j in -pr..=pr {
                            for i in -pr..=pr {
                                let diff = at(c, px + i, py + j) - at(c, qx + i, qy + j);
                                d += diff * diff;
                            }
                        }
                    }
                    d /= (ch * patch * patch) as f64;
                    let wt = (-(d - 2.0 * sigma * sigma).max(0.0) / (h * h)).exp();
                    wsum += wt;
                    for (c, a) in acc.iter_mut().enumerate() {
                        *a += wt * at(c, qx, qy);
                    }
                }
            }
            for (c, a) in acc.iter().enumerate() {
                out.set(c, px as usize, py as usize, (a / wsum) as f32);
            }
        }
    }
    out
}

fn dct_coef(n: usize, k: usize, i: usize) -> f64 {
    let a = if k == 0 { 1.0 / n as f64 } else { 2.0 / n as f64 };
    a.sqrt() * (std::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2 * n) as f64).cos()
}

/// Direct 2-D transform of one block, with AC hard thresholding.
fn dct_block(b: &[f64], n: usize, t: f64) -> Vec<f64> {
    let mut coef = vec![0.0; n * n];
    for v in 0..n {
        for u in 0..n {
            let mut s = 0.0;
            for y in 0..n {
                for x in 0..n {
                    s += dct_coef(n, v, y) * dct_coef(n, u, x) * b[y * n + x];
                }
            }
            coef[v * n + u] = if (u, v) != (0, 0) && s.abs() < t { 0.0 } else { s };
        }
    }
    let mut out = vec![0.0; n * n];
    for y in 0..n {
        for x in 0..n {
            let mut s = 0.0;
            for v in 0..n {
                for u in 0..n {
                    s += dct_coef(n, v, y) * dct_coef(n, u, x) * coef[v * n + u];
                }
            }
            out[y * n + x] = s;
        }
    }
    out
}

fn starts(dim: usize, n: usize) -> Vec<usize> {
    let mut s: Vec<usize> = (0..).map(|k| k * n / 2).take_while(|&p| p + n <= dim).collect();
    if *s.last().unwrap() + n < dim {
        s.push(dim - n);
    }
    s
}

/// Sliding-block DCT thresholding with half-block stride and uniform averaging.
pub fn dct(x: &Image, n: usize, t: f64) -> Image {
    let (w, h) = (x.width(), x.height());
    let mut out = Image::filled(w, h, x.channels(), 0.0);
    for c in 0..x.channels() {
        let mut acc = vec![0.0; w * h];
        let mut cnt = vec![0.0; w * h];
        for &y0 in &starts(h, n) {
            for &x0 in &starts(w, n) {
                let blk: Vec<f64> = (0..n * n)
                    .map(|k| x.get(c, x0 + k % n, y0 + k / n) as f64)
                    .collect();
                for (k, v) in dct_block(&blk, n, t).into_iter().enumerate() {
                    acc[(y0 + k / n) * w + x0 + k % n] += v;
                    cnt[(y0 + k / n) * w + x0 + k % n] += 1.0;
                }
            }
        }
        for i in 0..w * h {
            out.set(c, i % w, i / w, (acc[i] / cnt[i]) as f32);
        }
    }
    out
}

/// SSIM with an explicit 11x11 Gaussian window at every valid position.
pub fn ssim(a: &Image, b: &Image) -> f64 {
    let g: Vec<f64> = (0..11)
        .map(|i| (-((i as f64 - 5.0).powi(2)) / (2.0 * 1.5 * 1.5)).exp())
        .collect();
    let gs: f64 = g.iter().sum();
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let (w, h) = (a.width(), a.height());
    let mut total = 0.0;
    for c in 0..a.channels() {
        let mut sum = 0.0;
        let mut count = 0;
        for y0 in 0..=h - 11 {
            for x0 in 0..=w - 11 {
                let wt = |i: usize, j: usize| g[i] * g[j] / (gs * gs);
                let (mut ma, mut mb) = (0.0, 0.0);
                for j in 0..11 {
                    for i in 0..11 {
                        ma += wt(i, j) * a.get(c, x0 + i, y0 + j) as f64;
                        mb += wt(i, j) * b.get(c, x0 + i, y0 + j) as f64;
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for j in 0..11 {
                    for i in 0..11 {
                        let da = a.get(c, x0 + i, y0 + j) as f64 - ma;
                        let db = b.get(c, x0 + i, y0 + j) as f64 - mb;
                        va += wt(i, j) * da * da;
                        vb += wt(i, j) * db * db;
                        cov += wt(i, j) * da * db;
                    }
                }
                sum += (2.0 * ma * mb + c1) * (2.0 * cov + c2)
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
        total += sum / count as f64;
    }
    total / a.channels() as f64
}

/// Destination-to-source pixel map of a geometric transform.
type Map = fn(usize, usize, usize, usize) -> (usize, usize);

/// The eight symmetries of the square as `(swaps_dims, dst(x, y) -> src)`,
/// written out per element.
pub const SYMMETRIES: [(bool, Map); 8] = [
    (false, |x, y, _, _| (x, y)),
    // 90 degrees counter-clockwise
    (true, |x, y, w, _| (w - 1 - y, x)),
    (false, |x, y, w, h| (w - 1 - x, h - 1 - y)),
    (true, |x, y, _, h| (y, h - 1 - x)),
    (false, |x, y, w, _| (w - 1 - x, y)),
    (false, |x, y, _, h| (x, h - 1 - y)),
    (true, |x, y, _, _| (y, x)),
    (true, |x, y, w, h| (w - 1 - y, h - 1 - x)),
];

/// Returns the transformed image and the source index of every destination sample.
fn transform(img: &Image, t: (bool, Map)) -> (Image, Vec<(usize, usize)>) {
    let (w, h) = (img.width(), img.height());
    let (dw, dh) = if t.0 { (h, w) } else { (w, h) };
    let mut out = Image::filled(dw, dh, img.channels(), 0.0);
    let mut src = Vec::with_capacity(dw * dh);
    for y in 0..dh {
        for x in 0..dw {
            let (sx, sy) = t.1(x, y, w, h);
            src.push((sx, sy));
            for c in 0..img.channels() {
                out.set(c, x, y, img.get(c, sx, sy));
            }
        }
    }
    (out, src)
}

/// Mean over the eight symmetries of `t^-1(f(t(x)))`, undoing each
/// transform by scattering samples back to their recorded origin.
pub fn ensemble8(f: impl Fn(&Image) -> Image, x: &Image) -> Image {
    let (w, h, ch) = (x.width(), x.height(), x.channels());
    let mut acc = vec![0.0f64; w * h * ch];
    for t in SYMMETRIES {
        let (tx, src) = transform(x, t);
        let y = f(&tx);
        for (k, &(sx, sy)) in src.iter().enumerate() {
            let (dx, dy) = (k % tx.width(), k / tx.width());
            for c in 0..ch {
                acc[(c * h + sy) * w + sx] += y.get(c, dx, dy) as f64;
            }
        }
    }
    Image::new(w, h, ch, acc.into_iter().map(|v| (v / 8.0) as f32).collect()).unwrap()
}
