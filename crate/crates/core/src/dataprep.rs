//! Training-data preparation: ~2K sub-image cropping of very large sources,
//! the two-stage patch/batch schedule, and seeded patch sampling.
//!
//! Nothing here trains a model. Learning rate, optimizer and loss are kept
//! as metadata so a stage config reads like the recipe it describes.
//!
//! Stage I changes patch size at equal thirds of the sample sequence
//! (equivalently, of its iterations). That split is an assumption; the
//! recipe only lists the sizes.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::KvDoc;
use crate::degradation::derive_stream;
use crate::error::{Error, Result};
use crate::image::{load_png_with_depth, save_png, Rect};
use crate::par;

pub const DEFAULT_TARGET_LONG_SIDE: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stage {
    I,
    II,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::I => "I",
            Stage::II => "II",
        })
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "I" | "1" => Ok(Stage::I),
            "II" | "2" => Ok(Stage::II),
            other => Err(Error::Config(format!("unknown stage '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchPhase {
    pub patch: usize,
    pub batch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub stage: Stage,
    pub sources: Vec<String>,
    pub patch_schedule: Vec<PatchPhase>,
    pub iterations: u64,
    pub initial_lr: f64,
    pub optimizer: String,
    pub loss: String,
}

const STAGE_KEYS: &[&str] = &[
    "stage",
    "sources",
    "patch_schedule",
    "iterations",
    "initial_lr",
    "optimizer",
    "loss",
];

impl StageConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_schedule.is_empty() {
            return Err(Error::Config("empty patch schedule".into()));
        }
        for ph in &self.patch_schedule {
            if ph.patch == 0 || ph.patch % 8 != 0 {
                return Err(Error::Config(format!(
                    "patch size {} is not a positive multiple of 8",
                    ph.patch
                )));
            }
            if ph.batch == 0 {
                return Err(Error::Config("batch size must be >= 1".into()));
            }
        }
        if self.stage == Stage::I
            && self
                .patch_schedule
                .windows(2)
                .any(|w| w[1].patch <= w[0].patch)
        {
            return Err(Error::Config(
                "stage I patch sizes must be strictly increasing".into(),
            ));
        }
        Ok(())
    }

    pub fn max_patch(&self) -> usize {
        self.patch_schedule.iter().map(|p| p.patch).max().unwrap_or(0)
    }

    /// Schedule phase used by draw `i` of `n`: `floor(i * phases / n)`.
    pub fn phase_for_draw(&self, i: usize, n: usize) -> usize {
        (i * self.patch_schedule.len() / n.max(1)).min(self.patch_schedule.len() - 1)
    }

    /// Iterations spent in each phase under the equal-split assumption;
    /// any remainder goes to the earliest phases.
    pub fn phase_iterations(&self) -> Vec<u64> {
        let k = self.patch_schedule.len() as u64;
        let (base, rem) = (self.iterations / k, self.iterations % k);
        (0..k).map(|i| base + u64::from(i < rem)).collect()
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut doc = KvDoc::new();
        doc.set("stage", self.stage);
        doc.set("sources", self.sources.join(","));
        doc.set(
            "patch_schedule",
            self.patch_schedule
                .iter()
                .map(|p| format!("{}x{}", p.patch, p.batch))
                .collect::<Vec<_>>()
                .join(","),
        );
        doc.set("iterations", self.iterations);
        doc.set("initial_lr", self.initial_lr);
        doc.set("optimizer", &self.optimizer);
        doc.set("loss", &self.loss);
        doc
    }

    pub fn from_kv(doc: &KvDoc) -> Result<Self> {
        doc.check_keys(STAGE_KEYS)?;
        let list = |key: &str| -> Result<Vec<String>> {
            Ok(doc
                .require::<String>(key)?
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect())
        };
        let patch_schedule = list("patch_schedule")?
            .iter()
            .map(|item| {
                let (p, b) = item.split_once('x').ok_or_else(|| {
                    Error::Config(format!("schedule item '{item}' is not PATCHxBATCH"))
                })?;
                Ok(PatchPhase {
                    patch: p.parse().map_err(|_| Error::Config(format!("bad patch '{p}'")))?,
                    batch: b.parse().map_err(|_| Error::Config(format!("bad batch '{b}'")))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let cfg = StageConfig {
            stage: doc.require("stage")?,
            sources: list("sources")?,
            patch_schedule,
            iterations: doc.require("iterations")?,
            initial_lr: doc.require("initial_lr")?,
            optimizer: doc.parsed("optimizer")?.unwrap_or_default(),
            loss: doc.parsed("loss")?.unwrap_or_default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// The two-stage recipe: Stage I on four corpora with a growing patch,
/// Stage II adding three ultra-high-resolution corpora at patch 768.
pub fn default_stage_configs() -> (StageConfig, StageConfig) {
    let base: Vec<String> = ["DIV2K", "Flickr2K", "OST", "LSDIR"]
        .into_iter()
        .map(String::from)
        .collect();
    let mut extended = base.clone();
    extended.extend(["LIU4K-v2", "NKUSR8K", "DIV8K"].map(String::from));
    let phase = |patch, batch| PatchPhase { patch, batch };
    (
        StageConfig {
            stage: Stage::I,
            sources: base,
            patch_schedule: vec![phase(256, 4), phase(448, 2), phase(768, 1)],
            iterations: 300_000,
            initial_lr: 1e-4,
            optimizer: "AdamW".into(),
            loss: "MSE".into(),
        },
        StageConfig {
            stage: Stage::II,
            sources: extended,
            patch_schedule: vec![phase(768, 4)],
            iterations: 300_000,
            initial_lr: 1e-5,
            optimizer: "AdamW".into(),
            loss: "MSE".into(),
        },
    )
}

/// Splits `dim` into `ceil(dim / target)` runs whose lengths differ by at
/// most one, longer runs first. Returns `(offset, len)` pairs.
pub fn equal_split(dim: usize, target: usize) -> Vec<(usize, usize)> {
    let n = dim.div_ceil(target).max(1);
    let (base, rem) = (dim / n, dim % n);
    let mut off = 0;
    (0..n)
        .map(|i| {
            let len = base + usize::from(i < rem);
            let run = (off, len);
            off += len;
            run
        })
        .collect()
}

/// Grid of `(row, col, rect)` with long side <= `target`.
pub fn subimage_grid(width: usize, height: usize, target: usize) -> Vec<(usize, usize, Rect)> {
    let cols = equal_split(width, target);
    let rows = equal_split(height, target);
    rows.iter()
        .enumerate()
        .flat_map(|(r, &(y0, h))| {
            cols.iter()
                .enumerate()
                .map(move |(c, &(x0, w))| (r, c, Rect::new(x0, y0, w, h)))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ManifestEntry {
    Tile {
        source: PathBuf,
        rect: Rect,
        out: PathBuf,
    },
    Failed {
        source: PathBuf,
        error: String,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubimageSummary {
    /// Source images before cropping (including unreadable ones).
    pub sources_found: usize,
    pub sources_failed: usize,
    /// Sub-images written after cropping and filtering.
    pub tiles_written: usize,
    pub tiles_discarded: usize,
}

#[derive(Debug, Clone, Default)]
pub struct SubimageManifest {
    pub entries: Vec<ManifestEntry>,
    pub summary: SubimageSummary,
}

pub(crate) fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .is_some_and(|e| e.eq_ignore_ascii_case("png"))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Crops every PNG in `src_dir` into a grid of sub-images written to
/// `dst_dir` as `{stem}_r{row}c{col}.png`, and writes `manifest.jsonl`
/// there in source-name order.
pub fn make_subimages(
    src_dir: &Path,
    dst_dir: &Path,
    target_long_side: usize,
    min_side: usize,
) -> Result<SubimageManifest> {
    if target_long_side == 0 {
        return Err(Error::InvalidParams("target long side must be >= 1".into()));
    }
    std::fs::create_dir_all(dst_dir).map_err(|e| Error::io(dst_dir, e))?;
    let files = list_pngs(src_dir)?;
    let per_source = par::map_slice(&files, |src| -> (Vec<ManifestEntry>, usize) {
        let fail = |e: Error| {
            log::warn!("skipping {}: {e}", src.display());
            (
                vec![ManifestEntry::Failed {
                    source: src.clone(),
                    error: e.to_string(),
                }],
                0,
            )
        };
        let (img, depth) = match load_png_with_depth(src) {
            Ok(v) => v,
            Err(e) => return fail(e),
        };
        let stem = src.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let mut entries = Vec::new();
        let mut discarded = 0;
        for (r, c, rect) in subimage_grid(img.width(), img.height(), target_long_side) {
            if rect.w < min_side || rect.h < min_side {
                discarded += 1;
                continue;
            }
            let out = dst_dir.join(format!("{stem}_r{r}c{c}.png"));
            let written = img.crop(rect).and_then(|tile| save_png(&tile, &out, depth));
            if let Err(e) = written {
                return fail(e);
            }
            entries.push(ManifestEntry::Tile {
                source: src.clone(),
                rect,
                out,
            });
        }
        (entries, discarded)
    });

    let mut manifest = SubimageManifest::default();
    manifest.summary.sources_found = files.len();
    for (entries, discarded) in per_source {
        manifest.summary.tiles_discarded += discarded;
        for e in entries {
            match e {
                ManifestEntry::Tile { .. } => manifest.summary.tiles_written += 1,
                ManifestEntry::Failed { .. } => manifest.summary.sources_failed += 1,
            }
            manifest.entries.push(e);
        }
    }
    write_manifest(&dst_dir.join("manifest.jsonl"), &manifest.entries)?;
    Ok(manifest)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut f = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    for e in entries {
        serde_json::to_writer(&mut f, e)?;
        f.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchSample {
    pub source_path: PathBuf,
    pub rect: Rect,
    pub stage: Stage,
    pub draw_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchSampling {
    pub samples: Vec<PatchSample>,
    /// Manifest tiles too small for the largest scheduled patch.
    pub filtered: usize,
}

/// Draws `n` patches. Draw `i` is keyed by `(seed, i)` alone: its source is
/// uniform over eligible tiles and its origin uniform over valid positions.
pub fn sample_patches(
    manifest: &[ManifestEntry],
    cfg: &StageConfig,
    seed: u64,
    n: usize,
) -> Result<PatchSampling> {
    cfg.validate()?;
    let max_patch = cfg.max_patch();
    let tiles: Vec<(&PathBuf, Rect)> = manifest
        .iter()
        .filter_map(|e| match e {
            ManifestEntry::Tile { out, rect, .. } => Some((out, *rect)),
            ManifestEntry::Failed { .. } => None,
        })
        .collect();
    let eligible: Vec<(&PathBuf, Rect)> = tiles
        .iter()
        .copied()
        .filter(|(_, r)| r.w >= max_patch && r.h >= max_patch)
        .collect();
    let filtered = tiles.len() - eligible.len();
    if filtered > 0 {
        log::warn!("{filtered} manifest tiles are smaller than patch {max_patch}");
    }
    if eligible.is_empty() {
        return Err(Error::NoEligibleImages(format!(
            "no manifest tile is at least {max_patch}x{max_patch}"
        )));
    }
    let samples = (0..n)
        .map(|i| {
            let patch = cfg.patch_schedule[cfg.phase_for_draw(i, n)].patch;
            let mut rng = derive_stream(seed, &format!("patch-draw:{i}"));
            let (path, r) = eligible[rng.below(eligible.len() as u64) as usize];
            let x0 = rng.below((r.w - patch + 1) as u64) as usize;
            let y0 = rng.below((r.h - patch + 1) as u64) as usize;
            PatchSample {
                source_path: path.clone(),
                rect: Rect::new(x0, y0, patch, patch),
                stage: cfg.stage,
                draw_index: i,
            }
        })
        .collect();
    Ok(PatchSampling { samples, filtered })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_split_cases() {
        assert_eq!(equal_split(4096, 2048), vec![(0, 2048), (2048, 2048)]);
        assert_eq!(equal_split(2000, 2048), vec![(0, 2000)]);
        assert_eq!(
            equal_split(5000, 2048),
            vec![(0, 1667), (1667, 1667), (3334, 1666)]
        );
    }

    #[test]
    fn grid_partitions_image() {
        let grid = subimage_grid(5000, 2048, 2048);
        assert_eq!(grid.len(), 3);
        let total: usize = grid.iter().map(|(_, _, r)| r.area()).sum();
        assert_eq!(total, 5000 * 2048);
    }

    #[test]
    fn stage_validation() {
        let (mut s1, _) = default_stage_configs();
        s1.validate().unwrap();
        s1.patch_schedule[1].patch = 200;
        assert!(s1.validate().is_err());
        let (mut s1, _) = default_stage_configs();
        s1.patch_schedule.swap(0, 1);
        assert!(s1.validate().is_err());
    }

    #[test]
    fn phase_arithmetic() {
        let (s1, s2) = default_stage_configs();
        assert_eq!(
            (0..3).map(|i| s1.phase_for_draw(i, 3)).collect::<Vec<_>>(),
            vec![0, 1, 2]
        );
        assert_eq!(s1.phase_iterations(), vec![100_000; 3]);
        assert_eq!(s2.phase_for_draw(5, 9), 0);
    }

    #[test]
    fn kv_roundtrip() {
        let (s1, s2) = default_stage_configs();
        for s in [s1, s2] {
            let text = s.to_kv().to_canonical();
            let back = StageConfig::from_kv(&KvDoc::parse(&text).unwrap()).unwrap();
            assert_eq!(back, s);
        }
    }

    #[test]
    fn sampling_needs_eligible_tiles() {
        let (s1, _) = default_stage_configs();
        let manifest = vec![ManifestEntry::Tile {
            source: "a.png".into(),
            rect: Rect::new(0, 0, 700, 900),
            out: "a_r0c0.png".into(),
        }];
        assert!(matches!(
            sample_patches(&manifest, &s1, 1, 3),
            Err(Error::NoEligibleImages(_))
        ));
    }
}
