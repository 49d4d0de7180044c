//! Denoiser backends and the inference wrapper chain.
//!
//! A [`Backend`] is a configured restoration function `x -> y_hat`. Built-in
//! backends are classical filters that are cheap, deterministic and checkable
//! against brute-force references; [`external`] plugs in any trained model.
//!
//! Backends are selected with a spec string `kind[:key=value,...]`:
//!
//! | kind            | keys (defaults)                                         |
//! |-----------------|---------------------------------------------------------|
//! | `identity`      |                                                         |
//! | `gaussian_blur` | `std` (1.5)                                             |
//! | `box_blur_h`    | `radius` (2)                                            |
//! | `nlm`           | `patch` (7), `search` (21), `h` (0.35 sigma), `sigma` (noise) |
//! | `dct_threshold` | `block` (8), `threshold` (2.7 sigma)                    |
//! | `external`      | command and limits come from [`ExternalConfig`]          |
//!
//! `sigma` values are on the `[0, 1]` scale; defaults derive from the run's
//! noise level. Any kind also accepts `name=...` to relabel it in reports.

pub mod dct;
pub mod external;
pub mod filters;
pub mod nlm;
pub mod tiled;

use std::collections::BTreeMap;
use std::fmt;

use crate::ensemble::{self_ensemble, EnsembleMode};
use crate::error::{Error, Result};
use crate::image::Image;

pub use dct::{dct_threshold_denoise, DctParams};
pub use external::{external_denoise, ExternalBackend, ExternalConfig, ExternalOutput};
pub use nlm::{nlm_denoise, NlmParams};
pub use tiled::{tiled_denoise, Blend, TileSpec};

#[derive(Debug)]
pub enum BackendKind {
    Identity,
    GaussianBlur { std: f64 },
    BoxBlurH { radius: usize },
    Nlm(NlmParams),
    DctThreshold(DctParams),
    External(ExternalBackend),
}

#[derive(Debug)]
pub struct Backend {
    name: String,
    kind: BackendKind,
}

/// Run-level values backend defaults depend on.
#[derive(Debug, Clone, Default)]
pub struct BackendContext {
    /// Noise sigma on the `[0, 1]` scale.
    pub sigma: f64,
    pub external: Option<ExternalConfig>,
}

fn parse_params(s: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for item in s.split(',').map(str::trim).filter(|i| !i.is_empty()) {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("backend parameter '{item}' is not key=value")))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn take<T: std::str::FromStr>(
    params: &mut BTreeMap<String, String>,
    key: &str,
    default: T,
) -> Result<T> {
    match params.remove(key) {
        None => Ok(default),
        Some(v) => v
            .parse()
            .map_err(|_| Error::Config(format!("invalid value '{v}' for backend parameter {key}"))),
    }
}

impl Backend {
    pub fn new(name: impl Into<String>, kind: BackendKind) -> Result<Self> {
        match &kind {
            BackendKind::GaussianBlur { std } if !(std.is_finite() && *std >= 0.0) => {
                return Err(Error::InvalidParams(format!(
                    "gaussian_blur std must be finite and >= 0, got {std}"
                )))
            }
            BackendKind::Nlm(p) => p.validate()?,
            BackendKind::DctThreshold(p) => p.validate()?,
            _ => {}
        }
        Ok(Backend {
            name: name.into(),
            kind,
        })
    }

    pub fn identity() -> Self {
        Backend {
            name: "identity".into(),
            kind: BackendKind::Identity,
        }
    }

    pub fn gaussian_blur(std: f64) -> Result<Self> {
        Backend::new("gaussian_blur", BackendKind::GaussianBlur { std })
    }

    pub fn box_blur_h(radius: usize) -> Self {
        Backend {
            name: "box_blur_h".into(),
            kind: BackendKind::BoxBlurH { radius },
        }
    }

    /// Parses a `kind[:key=value,...]` spec.
    pub fn parse(spec: &str, ctx: &BackendContext) -> Result<Self> {
        let (kind, rest) = spec.split_once(':').unwrap_or((spec, ""));
        let kind = kind.trim();
        let mut p = parse_params(rest)?;
        let name = p.remove("name").unwrap_or_else(|| kind.to_string());
        let backend_kind = match kind {
            "identity" => BackendKind::Identity,
            "gaussian_blur" => BackendKind::GaussianBlur {
                std: take(&mut p, "std", 1.5)?,
            },
            "box_blur_h" => BackendKind::BoxBlurH {
                radius: take(&mut p, "radius", 2)?,
            },
            "nlm" => {
                let sigma = take(&mut p, "sigma", ctx.sigma)?;
                let d = NlmParams::for_sigma(sigma);
                BackendKind::Nlm(NlmParams {
                    patch: take(&mut p, "patch", d.patch)?,
                    search: take(&mut p, "search", d.search)?,
                    h: take(&mut p, "h", d.h)?,
                    sigma,
                })
            }
            "dct_threshold" => {
                let d = DctParams::for_sigma(ctx.sigma);
                BackendKind::DctThreshold(DctParams {
                    block: take(&mut p, "block", d.block)?,
                    threshold: take(&mut p, "threshold", d.threshold)?,
                })
            }
            "external" => {
                let mut cfg = ctx.external.clone().ok_or_else(|| {
                    Error::Config("external backend needs an external command".into())
                })?;
                cfg.deterministic = take(&mut p, "deterministic", cfg.deterministic)?;
                BackendKind::External(ExternalBackend::new(cfg)?)
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown backend '{other}' (expected identity, gaussian_blur, box_blur_h, nlm, dct_threshold, external)"
                )))
            }
        };
        if let Some(k) = p.keys().next() {
            return Err(Error::Config(format!(
                "unknown parameter '{k}' for backend {kind}"
            )));
        }
        Backend::new(name, backend_kind)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> &BackendKind {
        &self.kind
    }

    pub fn is_deterministic(&self) -> bool {
        match &self.kind {
            BackendKind::External(e) => e.config().deterministic,
            _ => true,
        }
    }

    /// Canonical spec with every parameter resolved.
    pub fn describe(&self) -> String {
        match &self.kind {
            BackendKind::Identity => "identity".to_string(),
            BackendKind::GaussianBlur { std } => format!("gaussian_blur:std={std}"),
            BackendKind::BoxBlurH { radius } => format!("box_blur_h:radius={radius}"),
            BackendKind::Nlm(p) => format!(
                "nlm:h={},patch={},search={},sigma={}",
                p.h, p.patch, p.search, p.sigma
            ),
            BackendKind::DctThreshold(p) => {
                format!("dct_threshold:block={},threshold={}", p.block, p.threshold)
            }
            BackendKind::External(e) => {
                let c = e.config();
                format!(
                    "external:cmd={},deterministic={},timeout_s={}",
                    c.command,
                    c.deterministic,
                    c.timeout.as_secs_f64()
                )
            }
        }
    }

    pub fn denoise(&self, x: &Image) -> Result<Image> {
        match &self.kind {
            BackendKind::Identity => Ok(x.clone()),
            BackendKind::GaussianBlur { std } => Ok(filters::gaussian_blur(x, *std)),
            BackendKind::BoxBlurH { radius } => Ok(filters::box_blur_horizontal(x, *radius)),
            BackendKind::Nlm(p) => nlm_denoise(x, p),
            BackendKind::DctThreshold(p) => dct_threshold_denoise(x, p),
            BackendKind::External(e) => e.run(x).map(|o| o.image),
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

/// Backend, optionally tiled, optionally inside the self-ensemble.
///
/// The ensemble is the outer layer: each transformed input goes through
/// the tiled wrapper, matching "wrapped model under x8".
#[derive(Debug, Clone, Copy)]
pub struct Pipeline<'a> {
    pub backend: &'a Backend,
    pub tile: Option<TileSpec>,
    pub ensemble: EnsembleMode,
}

impl<'a> Pipeline<'a> {
    pub fn new(backend: &'a Backend) -> Self {
        Pipeline {
            backend,
            tile: None,
            ensemble: EnsembleMode::Off,
        }
    }

    pub fn with_tile(mut self, tile: Option<TileSpec>) -> Self {
        self.tile = tile;
        self
    }

    pub fn with_ensemble(mut self, ensemble: EnsembleMode) -> Self {
        self.ensemble = ensemble;
        self
    }

    fn single(&self, x: &Image) -> Result<Image> {
        let out = match &self.tile {
            Some(spec) => tiled_denoise(&|t: &Image| self.backend.denoise(t), x, spec)?,
            None => self.backend.denoise(x)?,
        };
        if !out.same_shape(x) {
            return Err(Error::ShapeMismatch {
                left: x.shape_string(),
                right: out.shape_string(),
            });
        }
        Ok(out)
    }

    pub fn run(&self, x: &Image) -> Result<Image> {
        if x.channels() != 3 {
            return Err(Error::InvalidImage(format!(
                "denoising expects 3 channels, got {}",
                x.channels()
            )));
        }
        self_ensemble(&|t: &Image| self.single(t), x, self.ensemble.elements())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx() -> BackendContext {
        BackendContext {
            sigma: 50.0 / 255.0,
            external: None,
        }
    }

    #[test]
    fn parse_specs() {
        let b = Backend::parse("gaussian_blur:std=0.8", &ctx()).unwrap();
        assert_eq!(b.describe(), "gaussian_blur:std=0.8");
        let b = Backend::parse("nlm:patch=5,name=nlm5", &ctx()).unwrap();
        assert_eq!(b.name(), "nlm5");
        match b.kind() {
            BackendKind::Nlm(p) => {
                assert_eq!(p.patch, 5);
                assert_eq!(p.search, 21);
                assert!((p.h - 0.35 * 50.0 / 255.0).abs() < 1e-15);
            }
            k => panic!("{k:?}"),
        }
        assert!(Backend::parse("nlm:patch=4", &ctx()).is_err());
        assert!(Backend::parse("nlm:bogus=1", &ctx()).is_err());
        assert!(Backend::parse("median", &ctx()).is_err());
        assert!(Backend::parse("external", &ctx()).is_err());
        assert!(Backend::parse("gaussian_blur:std=-1", &ctx()).is_err());
    }

    #[test]
    fn identity_and_degenerate_blur() {
        let x = Image::from_fn(16, 16, 3, |c, x, y| ((c * 5 + x * 3 + y) % 7) as f32 / 6.0);
        assert!(Backend::identity().denoise(&x).unwrap().bit_eq(&x));
        assert!(Backend::gaussian_blur(0.0).unwrap().denoise(&x).unwrap().bit_eq(&x));
        let c = Image::filled(16, 16, 3, 0.25);
        let out = Backend::gaussian_blur(1.5).unwrap().denoise(&c).unwrap();
        assert!(out.max_abs_diff(&c) < 1e-6);
    }

    #[test]
    fn pipeline_requires_rgb() {
        let b = Backend::identity();
        let gray = Image::filled(8, 8, 1, 0.0);
        assert!(Pipeline::new(&b).run(&gray).is_err());
    }
}
