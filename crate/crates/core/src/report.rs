//! Evaluation records, aggregate tables, deltas, and their renderings.
//!
//! JSON is the canonical schema. Struct fields serialize in declaration
//! order. Aggregates carry both full-precision values and 4-decimal display
//! strings. [`canonical_json`] drops the measured fields (time, memory), so
//! it depends only on the config and seed.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ensemble::EnsembleMode;
use crate::error::{Error, Result};
use crate::inference::TileSpec;
use crate::metrics::{MemMethod, PsnrMode};
use crate::degradation::NoiseSpec;

/// Keys removed by [`canonical_json`].
pub const MEASURED_KEYS: &[&str] = &[
    "wall_ms",
    "peak_mem_mb",
    "mem_method",
    "mean_wall_ms",
    "max_peak_mem_mb",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
    Markdown,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            "markdown" | "md" => Ok(Format::Markdown),
            other => Err(Error::Config(format!(
                "unknown format '{other}' (expected json, csv, markdown)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub variant: String,
    pub image_id: String,
    pub psnr_db: f64,
    pub ssim: f64,
    #[serde(default)]
    pub wall_ms: f64,
    #[serde(default)]
    pub peak_mem_mb: f64,
    #[serde(default = "unavailable")]
    pub mem_method: MemMethod,
    pub backend: String,
    pub ensemble: EnsembleMode,
    pub tile: Option<TileSpec>,
    pub noise_digest: String,
    /// Digest of the exact noisy input fed to the pipeline.
    pub noisy_digest: String,
    /// Bit depth of the clean source PNG, if it was a PNG.
    pub source_depth: Option<u8>,
}

fn unavailable() -> MemMethod {
    MemMethod::Unavailable
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub variant: Option<String>,
    pub image_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub name: String,
    pub ensemble: EnsembleMode,
    pub tile: Option<TileSpec>,
    pub n_images: usize,
    pub mean_psnr_db: Option<f64>,
    pub mean_ssim: Option<f64>,
    #[serde(default)]
    pub mean_wall_ms: Option<f64>,
    #[serde(default)]
    pub max_peak_mem_mb: Option<f64>,
    pub psnr_display: Option<String>,
    pub ssim_display: Option<String>,
}

fn display4(v: Option<f64>) -> Option<String> {
    v.map(|v| format!("{v:.4}"))
}

fn signed4(v: Option<f64>) -> Option<String> {
    v.map(|v| {
        let s = format!("{v:+.4}");
        // "-0.0000" reads as a regression; show exact ties as +0.0000.
        if s == "-0.0000" {
            "+0.0000".into()
        } else {
            s
        }
    })
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl VariantSummary {
    /// Aggregates the records belonging to `name`.
    pub fn from_records(
        name: &str,
        ensemble: EnsembleMode,
        tile: Option<TileSpec>,
        records: &[EvalRecord],
    ) -> Self {
        let mine: Vec<&EvalRecord> = records.iter().filter(|r| r.variant == name).collect();
        let mean_psnr_db = mean(mine.iter().map(|r| r.psnr_db));
        let mean_ssim = mean(mine.iter().map(|r| r.ssim));
        VariantSummary {
            name: name.to_string(),
            ensemble,
            tile,
            n_images: mine.len(),
            mean_psnr_db,
            mean_ssim,
            mean_wall_ms: mean(mine.iter().map(|r| r.wall_ms)),
            max_peak_mem_mb: mine.iter().map(|r| r.peak_mem_mb).reduce(f64::max),
            psnr_display: display4(mean_psnr_db),
            ssim_display: display4(mean_ssim),
        }
    }

    /// A row from published aggregates alone, with no per-image records.
    pub fn from_aggregates(
        name: &str,
        psnr_db: f64,
        ssim: f64,
        wall_ms: f64,
        peak_mem_mb: f64,
        n_images: usize,
    ) -> Self {
        VariantSummary {
            name: name.to_string(),
            ensemble: EnsembleMode::Off,
            tile: None,
            n_images,
            mean_psnr_db: Some(psnr_db),
            mean_ssim: Some(ssim),
            mean_wall_ms: Some(wall_ms),
            max_peak_mem_mb: Some(peak_mem_mb),
            psnr_display: display4(Some(psnr_db)),
            ssim_display: display4(Some(ssim)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub label: String,
    pub from: String,
    pub to: String,
    pub psnr_db: Option<f64>,
    pub ssim: Option<f64>,
    pub psnr_display: Option<String>,
    pub ssim_display: Option<String>,
}

impl DeltaRow {
    pub fn between(label: &str, from: &VariantSummary, to: &VariantSummary) -> Self {
        let diff = |a: Option<f64>, b: Option<f64>| a.zip(b).map(|(a, b)| b - a);
        let psnr = diff(from.mean_psnr_db, to.mean_psnr_db);
        let ssim = diff(from.mean_ssim, to.mean_ssim);
        DeltaRow {
            label: label.to_string(),
            from: from.name.clone(),
            to: to.name.clone(),
            psnr_db: psnr,
            ssim,
            psnr_display: signed4(psnr),
            ssim_display: signed4(ssim),
        }
    }
}

/// Deltas for a 2x2 matrix ordered
/// `[direct 1-pass, direct ensemble, wrapped 1-pass, wrapped ensemble]`.
pub fn ablation_deltas(v: &[VariantSummary]) -> Vec<DeltaRow> {
    if v.len() != 4 {
        return Vec::new();
    }
    vec![
        DeltaRow::between("ensemble effect (direct)", &v[0], &v[1]),
        DeltaRow::between("ensemble effect (wrapped)", &v[2], &v[3]),
        DeltaRow::between("wrapper effect (1-pass)", &v[0], &v[2]),
        DeltaRow::between("wrapper effect (ensemble)", &v[1], &v[3]),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub tool: String,
    pub config_digest: String,
    /// Canonical config the digest was computed from.
    pub config: String,
    pub noise: NoiseSpec,
    pub noise_digest: String,
    /// `synthesized` or `paired`.
    pub noise_source: String,
    pub backend: String,
    pub backend_deterministic: bool,
    pub crop_multiple: usize,
    pub psnr_mode: PsnrMode,
    pub psnr_cap_db: f64,
    pub as_8bit: bool,
    pub ssim_protocol: String,
    pub ensemble_averaging: String,
    pub timing: String,
    pub memory: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub meta: Option<ReportMeta>,
    pub variants: Vec<VariantSummary>,
    pub deltas: Vec<DeltaRow>,
    pub records: Vec<EvalRecord>,
    pub failures: Vec<Failure>,
}

impl AblationReport {
    /// Report built from aggregate rows only.
    pub fn from_variants(variants: Vec<VariantSummary>) -> Self {
        let deltas = ablation_deltas(&variants);
        AblationReport {
            meta: None,
            variants,
            deltas,
            records: Vec::new(),
            failures: Vec::new(),
        }
    }

    pub fn is_partial(&self) -> bool {
        !self.failures.is_empty()
    }

    pub fn image_ids(&self, variant: &str) -> BTreeSet<&str> {
        self.records
            .iter()
            .filter(|r| r.variant == variant)
            .map(|r| r.image_id.as_str())
            .collect()
    }

    /// Largest gap between stored aggregates and ones recomputed from the
    /// embedded records (PSNR and SSIM means).
    pub fn aggregate_drift(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for v in &self.variants {
            let again = VariantSummary::from_records(&v.name, v.ensemble, v.tile, &self.records);
            for (a, b) in [
                (v.mean_psnr_db, again.mean_psnr_db),
                (v.mean_ssim, again.mean_ssim),
            ] {
                match (a, b) {
                    (Some(a), Some(b)) => worst = worst.max((a - b).abs()),
                    (None, None) => {}
                    _ => return f64::INFINITY,
                }
            }
            if v.n_images != again.n_images {
                return f64::INFINITY;
            }
        }
        worst
    }
}

fn strip_keys(v: &mut serde_json::Value, keys: &[&str]) {
    match v {
        serde_json::Value::Object(map) => {
            for k in keys {
                map.remove(*k);
            }
            for child in map.values_mut() {
                strip_keys(child, keys);
            }
        }
        serde_json::Value::Array(items) => {
            for child in items {
                strip_keys(child, keys);
            }
        }
        _ => {}
    }
}

/// JSON without wall time and memory fields.
pub fn canonical_json<T: Serialize>(value: &T) -> Result<String> {
    let mut v = serde_json::to_value(value)?;
    strip_keys(&mut v, MEASURED_KEYS);
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}

pub fn full_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn opt(v: Option<f64>, decimals: usize) -> String {
    v.map(|v| format!("{v:.decimals$}")).unwrap_or_else(|| "-".into())
}

fn md_escape(s: &str) -> String {
    s.replace('|', "\\|")
}

fn render_markdown(report: &AblationReport) -> String {
    let mut out = String::new();
    if let Some(m) = &report.meta {
        let _ = writeln!(out, "Backend: `{}`  ", m.backend);
        let _ = writeln!(
            out,
            "Noise: sigma={} seed={} clip={} ({})  ",
            m.noise.sigma_8bit,
            m.noise.seed,
            m.noise.clip_mode.as_str(),
            m.noise_source
        );
        let _ = writeln!(out, "Config digest: `{}`\n", m.config_digest);
    }
    out.push_str("| Method | PSNR | SSIM | Time/ms | Mem/MB | Images |\n");
    out.push_str("|---|---:|---:|---:|---:|---:|\n");
    for v in &report.variants {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} |",
            md_escape(&v.name),
            opt(v.mean_psnr_db, 4),
            opt(v.mean_ssim, 4),
            opt(v.mean_wall_ms, 2),
            opt(v.max_peak_mem_mb, 0),
            v.n_images
        );
    }
    if !report.deltas.is_empty() {
        out.push_str("\n| Effect | From | To | dPSNR (dB) | dSSIM |\n");
        out.push_str("|---|---|---|---:|---:|\n");
        for d in &report.deltas {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} |",
                d.label,
                md_escape(&d.from),
                md_escape(&d.to),
                d.psnr_display.as_deref().unwrap_or("-"),
                d.ssim_display.as_deref().unwrap_or("-"),
            );
        }
    }
    if !report.failures.is_empty() {
        let _ = writeln!(out, "\n{} failed image(s):\n", report.failures.len());
        for f in &report.failures {
            let _ = writeln!(
                out,
                "- {} [{}]: {}",
                f.image_id,
                f.variant.as_deref().unwrap_or("all"),
                f.error
            );
        }
    }
    out
}

fn render_csv(report: &AblationReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "variant",
        "image_id",
        "psnr_db",
        "ssim",
        "wall_ms",
        "peak_mem_mb",
        "backend",
        "ensemble",
        "tile",
        "noise_digest",
        "noisy_digest",
    ])?;
    for r in &report.records {
        w.write_record([
            r.variant.clone(),
            r.image_id.clone(),
            r.psnr_db.to_string(),
            r.ssim.to_string(),
            format!("{:.3}", r.wall_ms),
            format!("{:.1}", r.peak_mem_mb),
            r.backend.clone(),
            r.ensemble.as_str().to_string(),
            r.tile.map(|t| t.to_string()).unwrap_or_else(|| "off".into()),
            r.noise_digest.clone(),
            r.noisy_digest.clone(),
        ])?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Config(format!("csv buffer: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn render_report(report: &AblationReport, fmt: Format) -> Result<Vec<u8>> {
    Ok(match fmt {
        Format::Json => full_json(report)?,
        Format::Csv => render_csv(report)?,
        Format::Markdown => render_markdown(report),
    }
    .into_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageDelta {
    pub image_id: String,
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantComparison {
    pub baseline: String,
    pub candidate: String,
    pub n_images: usize,
    pub psnr_db: Option<f64>,
    pub ssim: Option<f64>,
    pub psnr_display: Option<String>,
    pub ssim_display: Option<String>,
    pub per_image: Vec<ImageDelta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub baseline_digest: Option<String>,
    pub candidate_digest: Option<String>,
    pub rows: Vec<VariantComparison>,
}

/// Candidate minus baseline, variant by variant (paired by position).
///
/// Refuses to compare unless each variant pair covers exactly the same image
/// ids.
pub fn compare_runs(baseline: &AblationReport, candidate: &AblationReport) -> Result<CompareReport> {
    if baseline.variants.len() != candidate.variants.len() {
        return Err(Error::ImageSetMismatch(format!(
            "baseline has {} variants, candidate has {}",
            baseline.variants.len(),
            candidate.variants.len()
        )));
    }
    let mut rows = Vec::new();
    for (b, c) in baseline.variants.iter().zip(&candidate.variants) {
        let ids_b = baseline.image_ids(&b.name);
        let ids_c = candidate.image_ids(&c.name);
        if ids_b != ids_c {
            let only_b: Vec<_> = ids_b.difference(&ids_c).take(5).collect();
            let only_c: Vec<_> = ids_c.difference(&ids_b).take(5).collect();
            return Err(Error::ImageSetMismatch(format!(
                "{} vs {}: only in baseline {only_b:?}, only in candidate {only_c:?}",
                b.name, c.name
            )));
        }
        if ids_b.is_empty() && b.n_images != c.n_images {
            return Err(Error::ImageSetMismatch(format!(
                "{} covers {} images, {} covers {}",
                b.name, b.n_images, c.name, c.n_images
            )));
        }
        let per_image = ids_b
            .iter()
            .map(|id| {
                let (rb, rc) = (
                    find_record(baseline, &b.name, id),
                    find_record(candidate, &c.name, id),
                );
                ImageDelta {
                    image_id: id.to_string(),
                    psnr_db: rc.psnr_db - rb.psnr_db,
                    ssim: rc.ssim - rb.ssim,
                }
            })
            .collect();
        let d = DeltaRow::between("", b, c);
        rows.push(VariantComparison {
            baseline: b.name.clone(),
            candidate: c.name.clone(),
            n_images: c.n_images,
            psnr_db: d.psnr_db,
            ssim: d.ssim,
            psnr_display: d.psnr_display,
            ssim_display: d.ssim_display,
            per_image,
        });
    }
    let digest = |r: &AblationReport| r.meta.as_ref().map(|m| m.config_digest.clone());
    Ok(CompareReport {
        baseline_digest: digest(baseline),
        candidate_digest: digest(candidate),
        rows,
    })
}

fn find_record<'a>(rep: &'a AblationReport, variant: &str, id: &str) -> &'a EvalRecord {
    rep.records
        .iter()
        .find(|r| r.variant == variant && r.image_id == id)
        .expect("id came from this report")
}

pub fn render_compare(cmp: &CompareReport, fmt: Format) -> Result<Vec<u8>> {
    let text = match fmt {
        Format::Json => full_json(cmp)?,
        Format::Markdown => {
            let mut out = String::new();
            out.push_str("| Baseline | Candidate | Images | dPSNR (dB) | dSSIM |\n");
            out.push_str("|---|---|---:|---:|---:|\n");
            for r in &cmp.rows {
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {} | {} |",
                    md_escape(&r.baseline),
                    md_escape(&r.candidate),
                    r.n_images,
                    r.psnr_display.as_deref().unwrap_or("-"),
                    r.ssim_display.as_deref().unwrap_or("-"),
                );
            }
            out
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["baseline", "candidate", "image_id", "psnr_db", "ssim"])?;
            for r in &cmp.rows {
                w.write_record([
                    r.baseline.as_str(),
                    r.candidate.as_str(),
                    "*",
                    &r.psnr_db.map(|v| v.to_string()).unwrap_or_default(),
                    &r.ssim.map(|v| v.to_string()).unwrap_or_default(),
                ])?;
                for d in &r.per_image {
                    w.write_record([
                        r.baseline.as_str(),
                        r.candidate.as_str(),
                        d.image_id.as_str(),
                        &d.psnr_db.to_string(),
                        &d.ssim.to_string(),
                    ])?;
                }
            }
            let bytes = w
                .into_inner()
                .map_err(|e| Error::Config(format!("csv buffer: {e}")))?;
            String::from_utf8(bytes).expect("csv output is utf-8")
        }
    };
    Ok(text.into_bytes())
}
