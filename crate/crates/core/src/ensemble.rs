//! The eight symmetries of the square and the geometric self-ensemble.
//!
//! Convention: for a source of size `W x H`, every element maps destination
//! pixel `(x', y')` to a source pixel. Rotations are counter-clockwise:
//!
//! | element        | dst size | source of `(x', y')`      |
//! |----------------|----------|---------------------------|
//! | identity       | W x H    | `(x', y')`                |
//! | rot90          | H x W    | `(W-1-y', x')`            |
//! | rot180         | W x H    | `(W-1-x', H-1-y')`        |
//! | rot270         | H x W    | `(y', H-1-x')`            |
//! | hflip          | W x H    | `(W-1-x', y')`            |
//! | vflip          | W x H    | `(x', H-1-y')`            |
//! | transpose      | H x W    | `(y', x')`                |
//! | anti-transpose | H x W    | `(W-1-y', H-1-x')`        |

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dihedral {
    Identity,
    Rot90,
    Rot180,
    Rot270,
    Hflip,
    Vflip,
    Transpose,
    AntiTranspose,
}

impl Dihedral {
    pub const ALL: [Dihedral; 8] = [
        Dihedral::Identity,
        Dihedral::Rot90,
        Dihedral::Rot180,
        Dihedral::Rot270,
        Dihedral::Hflip,
        Dihedral::Vflip,
        Dihedral::Transpose,
        Dihedral::AntiTranspose,
    ];

    /// The shape-preserving subgroup: identity, both flips, and their product.
    pub const FLIPS: [Dihedral; 4] = [
        Dihedral::Identity,
        Dihedral::Rot180,
        Dihedral::Hflip,
        Dihedral::Vflip,
    ];

    /// `(swap, flip_x, flip_y)`: destination coordinates are first mirrored
    /// per axis (in destination extents), then swapped if `swap`.
    fn parts(self) -> (bool, bool, bool) {
        match self {
            Dihedral::Identity => (false, false, false),
            Dihedral::Hflip => (false, true, false),
            Dihedral::Vflip => (false, false, true),
            Dihedral::Rot180 => (false, true, true),
            Dihedral::Transpose => (true, false, false),
            Dihedral::Rot90 => (true, false, true),
            Dihedral::Rot270 => (true, true, false),
            Dihedral::AntiTranspose => (true, true, true),
        }
    }

    /// Integer matrix of the map from centered source to destination coordinates.
    fn matrix(self) -> [[i8; 2]; 2] {
        let (swap, fx, fy) = self.parts();
        let sx = if fx { -1 } else { 1 };
        let sy = if fy { -1 } else { 1 };
        // dst = F * P * src
        if swap {
            [[0, sx], [sy, 0]]
        } else {
            [[sx, 0], [0, sy]]
        }
    }

    fn from_matrix(m: [[i8; 2]; 2]) -> Dihedral {
        *Dihedral::ALL
            .iter()
            .find(|d| d.matrix() == m)
            .expect("matrix outside the dihedral group")
    }

    pub fn swaps_axes(self) -> bool {
        self.parts().0
    }

    /// `a.then(b)` applies `self` first, then `b`.
    pub fn then(self, b: Dihedral) -> Dihedral {
        let (p, q) = (b.matrix(), self.matrix());
        let mut m = [[0i8; 2]; 2];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = p[i][0] * q[0][j] + p[i][1] * q[1][j];
            }
        }
        Dihedral::from_matrix(m)
    }

    pub fn inverse(self) -> Dihedral {
        let m = self.matrix();
        Dihedral::from_matrix([[m[0][0], m[1][0]], [m[0][1], m[1][1]]])
    }

    pub fn name(self) -> &'static str {
        match self {
            Dihedral::Identity => "identity",
            Dihedral::Rot90 => "rot90",
            Dihedral::Rot180 => "rot180",
            Dihedral::Rot270 => "rot270",
            Dihedral::Hflip => "hflip",
            Dihedral::Vflip => "vflip",
            Dihedral::Transpose => "transpose",
            Dihedral::AntiTranspose => "anti_transpose",
        }
    }

    /// Exact pixel permutation of `img`.
    pub fn apply(self, img: &Image) -> Image {
        if self == Dihedral::Identity {
            return img.clone();
        }
        let (w, h, ch) = (img.width(), img.height(), img.channels());
        let (swap, fx, fy) = self.parts();
        let (dw, dh) = if swap { (h, w) } else { (w, h) };
        let n = w * h;
        let mut out = vec![0f32; n * ch];
        for c in 0..ch {
            let src = img.plane(c);
            let dst = &mut out[c * n..(c + 1) * n];
            for yd in 0..dh {
                let v = if fy { dh - 1 - yd } else { yd };
                for xd in 0..dw {
                    let u = if fx { dw - 1 - xd } else { xd };
                    let (xs, ys) = if swap { (v, u) } else { (u, v) };
                    dst[yd * dw + xd] = src[ys * w + xs];
                }
            }
        }
        Image::new(dw, dh, ch, out).expect("permutation preserves sample count")
    }
}

impl fmt::Display for Dihedral {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EnsembleMode {
    #[default]
    Off,
    Flips4,
    Full8,
}

impl EnsembleMode {
    pub fn elements(self) -> &'static [Dihedral] {
        match self {
            EnsembleMode::Off => &Dihedral::ALL[..1],
            EnsembleMode::Flips4 => &Dihedral::FLIPS,
            EnsembleMode::Full8 => &Dihedral::ALL,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EnsembleMode::Off => "off",
            EnsembleMode::Flips4 => "flips4",
            EnsembleMode::Full8 => "full8",
        }
    }

    /// Table-style label: `1-pass`, `x4`, `x8`.
    pub fn label(self) -> &'static str {
        match self {
            EnsembleMode::Off => "1-pass",
            EnsembleMode::Flips4 => "x4",
            EnsembleMode::Full8 => "x8",
        }
    }
}

impl FromStr for EnsembleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" | "none" => Ok(EnsembleMode::Off),
            "flips4" => Ok(EnsembleMode::Flips4),
            "full8" | "x8" => Ok(EnsembleMode::Full8),
            other => Err(Error::Config(format!(
                "unknown ensemble mode '{other}' (expected off, flips4, full8)"
            ))),
        }
    }
}

/// Mean over `elements` of `inverse(t)(f(t(x)))`.
///
/// Members may be evaluated in parallel; the sum is taken in f64 in the order
/// of `elements`, then divided by the member count, so the result does not
/// depend on completion order. A single identity member calls `f` directly.
pub fn self_ensemble<F>(f: &F, x: &Image, elements: &[Dihedral]) -> Result<Image>
where
    F: Fn(&Image) -> Result<Image> + Sync + ?Sized,
{
    if elements.is_empty() {
        return Err(Error::InvalidParams("empty ensemble".into()));
    }
    if elements == [Dihedral::Identity] {
        return f(x);
    }
    let outputs = par::map_slice(elements, |&t| -> Result<Image> {
        let y = f(&t.apply(x)).map_err(|e| e.tagged(format!("ensemble member {t}")))?;
        let back = t.inverse().apply(&y);
        if !back.same_shape(x) {
            return Err(Error::ShapeMismatch {
                left: x.shape_string(),
                right: back.shape_string(),
            }
            .tagged(format!("ensemble member {t}")));
        }
        Ok(back)
    });
    let mut acc = vec![0f64; x.data().len()];
    for out in outputs {
        for (a, v) in acc.iter_mut().zip(out?.data()) {
            *a += *v as f64;
        }
    }
    let k = elements.len() as f64;
    let data = acc.into_iter().map(|s| (s / k) as f32).collect();
    Image::new(x.width(), x.height(), x.channels(), data)
}
