//! Dataset evaluation and the 2x2 (wrapper x ensemble) ablation.
//!
//! Per image: load clean, crop to a multiple of 8, synthesize (or load) the
//! noisy input, run the wrapper chain under [`measure`], then score PSNR and
//! SSIM against the clean crop. Only the wrapper chain is timed.
//!
//! Images are processed in parallel, but every random draw is keyed by
//! `(seed, image_id)` and records are assembled in image-id order, so
//! reports are identical for any worker count.

use std::path::{Path, PathBuf};
use std::time::Duration;

use sha2::{Digest, Sha256};

use crate::config::KvDoc;
use crate::dataprep::list_pngs;
use crate::degradation::{degrade, short_hash, ClipMode, NoiseSpec};
use crate::ensemble::EnsembleMode;
use crate::error::{Error, Result};
use crate::image::{load_any, load_png_with_depth, Image, PngDepth};
use crate::inference::{Backend, BackendContext, Blend, ExternalConfig, Pipeline, TileSpec};
use crate::metrics::{measure, measure_resetting_peak, psnr_with_mode, ssim, PsnrMode, SsimParams};
use crate::par;
use crate::report::{
    ablation_deltas, AblationReport, EvalRecord, Failure, ReportMeta, VariantSummary,
};

pub const CROP_MULTIPLE: usize = 8;

/// Keys accepted in a run config file. CLI flags use the same names with
/// dashes.
pub const RUN_KEYS: &[&str] = &[
    "clean",
    "noisy",
    "sigma",
    "seed",
    "clip_noise",
    "backend",
    "ensemble",
    "tile_window",
    "tile_overlap",
    "blend",
    "psnr_mode",
    "as_8bit",
    "workers",
    "external_cmd",
    "external_timeout",
    "external_concurrency",
    "external_workdir",
    "external_deterministic",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub clean_dir: PathBuf,
    /// Pre-made noisy inputs (`{id}.dnb` or `{id}.png`); synthesized when absent.
    pub noisy_dir: Option<PathBuf>,
    pub noise: NoiseSpec,
    pub backend: String,
    pub external: Option<ExternalConfig>,
    pub ensemble: EnsembleMode,
    /// Tiled wrapper; `None` runs the backend on the full image.
    pub tile: Option<TileSpec>,
    pub psnr_mode: PsnrMode,
    pub as_8bit: bool,
    /// Worker threads; 0 picks the library default. Not part of the digest.
    pub workers: usize,
}

impl RunConfig {
    pub fn new(clean_dir: impl Into<PathBuf>) -> Self {
        RunConfig {
            clean_dir: clean_dir.into(),
            noisy_dir: None,
            noise: NoiseSpec::default(),
            backend: "identity".into(),
            external: None,
            ensemble: EnsembleMode::Off,
            tile: None,
            psnr_mode: PsnrMode::Joint,
            as_8bit: false,
            workers: 0,
        }
    }

    pub fn from_kv(doc: &KvDoc) -> Result<Self> {
        doc.check_keys(RUN_KEYS)?;
        let mut cfg = RunConfig::new(doc.require::<PathBuf>("clean")?);
        cfg.noisy_dir = doc.parsed("noisy")?;
        cfg.noise.sigma_8bit = doc.parsed("sigma")?.unwrap_or(cfg.noise.sigma_8bit);
        cfg.noise.seed = doc.parsed("seed")?.unwrap_or(0);
        if doc.parsed::<bool>("clip_noise")?.unwrap_or(false) {
            cfg.noise.clip_mode = ClipMode::Clip01;
        }
        cfg.backend = doc.parsed("backend")?.unwrap_or(cfg.backend);
        cfg.ensemble = doc.parsed("ensemble")?.unwrap_or_default();
        if let Some(window) = doc.parsed::<usize>("tile_window")? {
            cfg.tile = Some(TileSpec::new(
                window,
                doc.parsed("tile_overlap")?.unwrap_or(TileSpec::DEFAULT_OVERLAP),
                doc.parsed::<Blend>("blend")?.unwrap_or_default(),
            )?);
        }
        cfg.psnr_mode = doc.parsed("psnr_mode")?.unwrap_or_default();
        cfg.as_8bit = doc.parsed("as_8bit")?.unwrap_or(false);
        cfg.workers = doc.parsed("workers")?.unwrap_or(0);
        if let Some(cmd) = doc.parsed::<String>("external_cmd")? {
            let mut ext = ExternalConfig::new(cmd);
            if let Some(t) = doc.parsed::<f64>("external_timeout")? {
                if !(t.is_finite() && t > 0.0) {
                    return Err(Error::Config(format!("external_timeout must be > 0, got {t}")));
                }
                ext.timeout = Duration::from_secs_f64(t);
            }
            if let Some(n) = doc.parsed("external_concurrency")? {
                ext.max_concurrent = n;
            }
            if let Some(dir) = doc.parsed("external_workdir")? {
                ext.workdir = dir;
            }
            ext.deterministic = doc.parsed("external_deterministic")?.unwrap_or(false);
            cfg.external = Some(ext);
        }
        Ok(cfg)
    }

    /// Everything that can change results, as a config document.
    pub fn to_kv(&self) -> KvDoc {
        let mut doc = KvDoc::new();
        doc.set("clean", self.clean_dir.display());
        if let Some(n) = &self.noisy_dir {
            doc.set("noisy", n.display());
        }
        doc.set("sigma", self.noise.sigma_8bit);
        doc.set("seed", self.noise.seed);
        doc.set("clip_noise", self.noise.clip_mode == ClipMode::Clip01);
        doc.set("backend", &self.backend);
        doc.set("ensemble", self.ensemble.as_str());
        if let Some(t) = &self.tile {
            doc.set("tile_window", t.window);
            doc.set("tile_overlap", t.overlap);
            doc.set("blend", t.blend.as_str());
        }
        doc.set("psnr_mode", self.psnr_mode.as_str());
        doc.set("as_8bit", self.as_8bit);
        if let Some(e) = &self.external {
            doc.set("external_cmd", &e.command);
            doc.set("external_timeout", e.timeout.as_secs_f64());
            doc.set("external_deterministic", e.deterministic);
        }
        doc
    }

    pub fn digest(&self) -> String {
        short_hash(self.to_kv().to_canonical().as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        if !self.clean_dir.is_dir() {
            return Err(Error::Config(format!(
                "clean directory {} does not exist",
                self.clean_dir.display()
            )));
        }
        if let Some(n) = &self.noisy_dir {
            if !n.is_dir() {
                return Err(Error::Config(format!(
                    "noisy directory {} does not exist",
                    n.display()
                )));
            }
        }
        if !(self.noise.sigma_8bit.is_finite() && self.noise.sigma_8bit >= 0.0) {
            return Err(Error::Config(format!(
                "sigma must be finite and >= 0, got {}",
                self.noise.sigma_8bit
            )));
        }
        if let Some(t) = &self.tile {
            t.validate()?;
        }
        Ok(())
    }

    pub fn build_backend(&self) -> Result<Backend> {
        Backend::parse(
            &self.backend,
            &BackendContext {
                sigma: self.noise.sigma_unit(),
                external: self.external.clone(),
            },
        )
    }
}

struct Prepared {
    id: String,
    clean: Image,
    noisy: Image,
    depth: Option<PngDepth>,
    noisy_digest: String,
}

/// Digest of an image's shape and exact sample bits.
pub fn image_digest(img: &Image) -> String {
    let mut h = Sha256::new();
    h.update(img.shape_string().as_bytes());
    for v in img.data() {
        h.update(v.to_le_bytes());
    }
    h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn image_id(path: &Path) -> String {
    path.file_stem()
        .unwrap_or_default()
        .to_string_lossy()
        .into_owned()
}

fn find_noisy(dir: &Path, id: &str) -> Option<PathBuf> {
    ["dnb", "png"]
        .iter()
        .map(|ext| dir.join(format!("{id}.{ext}")))
        .find(|p| p.is_file())
}

fn prepare(cfg: &RunConfig, path: &Path) -> Result<Prepared> {
    let id = image_id(path);
    let (clean, depth) = load_png_with_depth(path)?;
    if clean.channels() != 3 {
        return Err(Error::InvalidImage("clean image must be RGB".into()));
    }
    let clean = clean.crop_to_multiple(CROP_MULTIPLE)?;
    let noisy = match &cfg.noisy_dir {
        None => degrade(&clean, &cfg.noise, &id),
        Some(dir) => {
            let p = find_noisy(dir, &id).ok_or_else(|| {
                Error::Config(format!("no noisy input for {id} in {}", dir.display()))
            })?;
            let raw = load_any(&p)?;
            let noisy = if raw.same_shape(&clean) {
                raw
            } else {
                raw.crop_to_multiple(CROP_MULTIPLE)?
            };
            clean.ensure_same_shape(&noisy)?;
            noisy
        }
    };
    let noisy_digest = image_digest(&noisy);
    Ok(Prepared {
        id,
        clean,
        noisy,
        depth: Some(depth),
        noisy_digest,
    })
}

fn prepare_all(cfg: &RunConfig) -> Result<Vec<std::result::Result<Prepared, Failure>>> {
    cfg.validate()?;
    let files = list_pngs(&cfg.clean_dir)?;
    if files.is_empty() {
        return Err(Error::EmptyInput(cfg.clean_dir.clone()));
    }
    let mut ids: Vec<(String, PathBuf)> = files.into_iter().map(|p| (image_id(&p), p)).collect();
    ids.sort();
    Ok(par::map_slice(&ids, |(id, p)| {
        prepare(cfg, p).map_err(|e| Failure {
            variant: None,
            image_id: id.clone(),
            error: e.to_string(),
        })
    }))
}

/// One row of an evaluation: a name plus how the backend is wrapped.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub name: String,
    pub tile: Option<TileSpec>,
    pub ensemble: EnsembleMode,
}

impl Variant {
    pub fn label(backend: &str, tile: Option<TileSpec>, ensemble: EnsembleMode) -> String {
        match tile {
            None => format!("{backend}, {}", ensemble.label()),
            Some(_) => format!("Wrapped {backend}, {}", ensemble.label()),
        }
    }
}

fn evaluate(
    cfg: &RunConfig,
    backend: &Backend,
    variant: &Variant,
    inputs: &[&Prepared],
) -> Vec<std::result::Result<EvalRecord, Failure>> {
    let pipeline = Pipeline::new(backend)
        .with_tile(variant.tile)
        .with_ensemble(variant.ensemble);
    let noise_digest = cfg.noise.digest();
    let ssim_params = SsimParams::default();
    let fail = |id: &str, e: Error| Failure {
        variant: Some(variant.name.clone()),
        image_id: id.to_string(),
        error: e.to_string(),
    };
    par::map_slice(inputs, |p| {
        let m = if cfg.workers == 1 {
            measure_resetting_peak(|| pipeline.run(&p.noisy))
        } else {
            measure(|| pipeline.run(&p.noisy))
        };
        let restored = m.value.map_err(|e| fail(&p.id, e))?;
        let (restored, clean) = if cfg.as_8bit {
            (restored.quantized(PngDepth::Eight), p.clean.quantized(PngDepth::Eight))
        } else {
            (restored, p.clean.clone())
        };
        let psnr_db =
            psnr_with_mode(&restored, &clean, 1.0, cfg.psnr_mode).map_err(|e| fail(&p.id, e))?;
        let ssim_v = ssim(&restored, &clean, &ssim_params).map_err(|e| fail(&p.id, e))?;
        if !psnr_db.is_finite() || !ssim_v.is_finite() {
            return Err(fail(
                &p.id,
                Error::InvalidImage("restored image has non-finite samples".into()),
            ));
        }
        Ok(EvalRecord {
            variant: variant.name.clone(),
            image_id: p.id.clone(),
            psnr_db,
            ssim: ssim_v,
            wall_ms: m.wall_ms,
            peak_mem_mb: m.peak_mem_mb,
            mem_method: m.mem_method,
            backend: backend.name().to_string(),
            ensemble: variant.ensemble,
            tile: variant.tile,
            noise_digest: noise_digest.clone(),
            noisy_digest: p.noisy_digest.clone(),
            source_depth: p.depth.map(|d| d.bits()),
        })
    })
}

fn meta(cfg: &RunConfig, backend: &Backend) -> ReportMeta {
    ReportMeta {
        tool: concat!("dnbench ", env!("CARGO_PKG_VERSION")).to_string(),
        config_digest: cfg.digest(),
        config: cfg.to_kv().to_canonical(),
        noise: cfg.noise,
        noise_digest: cfg.noise.digest(),
        noise_source: if cfg.noisy_dir.is_some() {
            "paired".into()
        } else {
            "synthesized".into()
        },
        backend: backend.describe(),
        backend_deterministic: backend.is_deterministic(),
        crop_multiple: CROP_MULTIPLE,
        psnr_mode: cfg.psnr_mode,
        psnr_cap_db: crate::metrics::PSNR_CAP_DB,
        as_8bit: cfg.as_8bit,
        ssim_protocol: "gaussian window 11 taps std 1.5, K1=0.01, K2=0.03, L=1, valid windows, mean over windows then channels".into(),
        ensemble_averaging: "float: f32 member outputs summed in f64 in element order, divided by K".into(),
        timing: "wall clock of the wrapper chain only; excludes image I/O, noise synthesis and metrics".into(),
        memory: "approximate, process-level peak resident set in MiB; GPU memory of external models is not captured".into(),
    }
}

/// Evaluates `variants` on the same noisy inputs.
pub fn run_variants(cfg: &RunConfig, variants: &[Variant]) -> Result<AblationReport> {
    let backend = cfg.build_backend()?;
    par::with_workers(cfg.workers, || {
        let prepared = prepare_all(cfg)?;
        let mut failures = Vec::new();
        let mut ok = Vec::new();
        for p in &prepared {
            match p {
                Ok(p) => ok.push(p),
                Err(f) => failures.push(f.clone()),
            }
        }
        let mut records = Vec::new();
        let mut summaries = Vec::new();
        for v in variants {
            let mut mine = Vec::new();
            for r in evaluate(cfg, &backend, v, &ok) {
                match r {
                    Ok(rec) => mine.push(rec),
                    Err(f) => failures.push(f),
                }
            }
            summaries.push(VariantSummary::from_records(&v.name, v.ensemble, v.tile, &mine));
            records.extend(mine);
        }
        let deltas = ablation_deltas(&summaries);
        Ok(AblationReport {
            meta: Some(meta(cfg, &backend)),
            variants: summaries,
            deltas,
            records,
            failures,
        })
    })
}

/// Single-variant evaluation with the configured tiling and ensemble.
pub fn run_eval(cfg: &RunConfig) -> Result<AblationReport> {
    let backend_name = cfg.build_backend()?.name().to_string();
    run_variants(
        cfg,
        &[Variant {
            name: Variant::label(&backend_name, cfg.tile, cfg.ensemble),
            tile: cfg.tile,
            ensemble: cfg.ensemble,
        }],
    )
}

/// Tiled off/on x ensemble off/on. The ensemble rows use the configured mode
/// (full8 when it is off); the wrapped rows use the configured tile spec or
/// the default 768-pixel window.
pub fn run_ablation_matrix(cfg: &RunConfig) -> Result<AblationReport> {
    let name = cfg.build_backend()?.name().to_string();
    let ens = match cfg.ensemble {
        EnsembleMode::Off => EnsembleMode::Full8,
        other => other,
    };
    let tile = Some(cfg.tile.unwrap_or_default());
    let variants: Vec<Variant> = [
        (None, EnsembleMode::Off),
        (None, ens),
        (tile, EnsembleMode::Off),
        (tile, ens),
    ]
    .into_iter()
    .map(|(tile, ensemble)| Variant {
        name: Variant::label(&name, tile, ensemble),
        tile,
        ensemble,
    })
    .collect();
    run_variants(cfg, &variants)
}

/// Writes noisy versions of every clean image (cropped to a multiple of 8)
/// as 8-bit PNG, plus lossless `DNB1` files when `raw` is set.
pub fn export_noisy(cfg: &RunConfig, out_dir: &Path, raw: bool) -> Result<Vec<Failure>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let prepared = par::with_workers(cfg.workers, || prepare_all(cfg))?;
    let mut failures = Vec::new();
    for p in prepared {
        let written = p.and_then(|p| {
            let fail = |e: Error| Failure {
                variant: None,
                image_id: p.id.clone(),
                error: e.to_string(),
            };
            crate::image::save_png(&p.noisy, out_dir.join(format!("{}.png", p.id)), PngDepth::Eight)
                .map_err(fail)?;
            if raw {
                crate::image::save_raw_f32(&p.noisy, out_dir.join(format!("{}.dnb", p.id)))
                    .map_err(fail)?;
            }
            Ok(())
        });
        if let Err(f) = written {
            failures.push(f);
        }
    }
    Ok(failures)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_roundtrip_and_digest_ignores_workers() {
        let mut doc = KvDoc::new();
        doc.set("clean", "/data/clean");
        doc.set("sigma", 50);
        doc.set("seed", 9);
        doc.set("backend", "nlm:patch=5");
        doc.set("ensemble", "full8");
        doc.set("tile_window", 256);
        doc.set("workers", 4);
        let cfg = RunConfig::from_kv(&doc).unwrap();
        assert_eq!(cfg.tile.unwrap().overlap, TileSpec::DEFAULT_OVERLAP);
        let back = RunConfig::from_kv(&cfg.to_kv()).unwrap();
        assert_eq!(back.digest(), cfg.digest());
        let mut other = cfg.clone();
        other.workers = 1;
        assert_eq!(other.digest(), cfg.digest());
        other.noise.seed = 10;
        assert_ne!(other.digest(), cfg.digest());
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut doc = KvDoc::new();
        doc.set("clean", "/x");
        doc.set("colour", "red");
        assert!(RunConfig::from_kv(&doc).is_err());
    }

    #[test]
    fn labels() {
        assert_eq!(Variant::label("nlm", None, EnsembleMode::Full8), "nlm, x8");
        assert_eq!(
            Variant::label("nlm", Some(TileSpec::default()), EnsembleMode::Off),
            "Wrapped nlm, 1-pass"
        );
    }
}
