use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use dnbench::config::KvDoc;
use dnbench::dataprep::{
    default_stage_configs, make_subimages, read_manifest, sample_patches, Stage, StageConfig,
};
use dnbench::harness::{export_noisy, run_ablation_matrix, run_eval, RunConfig};
use dnbench::report::{compare_runs, render_compare, render_report, AblationReport, Format};

/// Gaussian color denoising benchmark harness.
#[derive(Parser)]
#[command(name = "dnbench", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Evaluate one backend configuration on a clean image set.
    Eval(RunArgs),
    /// Run the direct/wrapped x 1-pass/ensemble matrix.
    Ablate(RunArgs),
    /// Per-variant and per-image deltas between two JSON reports.
    Compare {
        baseline: PathBuf,
        candidate: PathBuf,
        #[arg(long, default_value = "markdown")]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Crop large training images into ~2K sub-images and write manifest.jsonl.
    PrepSubimages {
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        dst: PathBuf,
        #[arg(long, default_value_t = 2048)]
        target: usize,
        /// Discard sub-images with a side shorter than this.
        #[arg(long, default_value_t = 0)]
        min_side: usize,
    },
    /// Draw training patch locations from a sub-image manifest.
    SamplePatches {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "I")]
        stage: Stage,
        /// Stage config file overriding the built-in schedule.
        #[arg(long)]
        stage_config: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSONL output; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the synthesized noisy inputs for a clean image set.
    Noise {
        #[arg(long)]
        clean: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50.0)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        clip_noise: bool,
        /// Also write lossless DNB1 float files.
        #[arg(long)]
        raw: bool,
        #[arg(long, default_value_t = 0)]
        workers: usize,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Config file; flags given on the command line override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    clean: Option<PathBuf>,
    /// Paired noisy inputs instead of synthesized noise.
    #[arg(long)]
    noisy: Option<PathBuf>,
    /// Noise level on the 0-255 scale [default: 50].
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Backend spec, e.g. `nlm`, `dct:block=16`, `external` [default: identity].
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    ensemble: Option<String>,
    #[arg(long)]
    tile_window: Option<usize>,
    #[arg(long)]
    tile_overlap: Option<usize>,
    #[arg(long)]
    blend: Option<String>,
    #[arg(long)]
    psnr_mode: Option<String>,
    #[arg(long)]
    workers: Option<usize>,
    /// Quantize output and reference to 8 bits before scoring.
    #[arg(long)]
    as_8bit: bool,
    /// Clip the noisy input to [0, 1].
    #[arg(long)]
    clip_noise: bool,
    /// Command for the `external` backend, with {in} and {out} placeholders.
    #[arg(long)]
    external_cmd: Option<String>,
    /// Seconds.
    #[arg(long)]
    external_timeout: Option<f64>,
    #[arg(long)]
    external_concurrency: Option<usize>,
    #[arg(long, default_value = "markdown")]
    format: Format,
    /// Report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn run_config(&self) -> anyhow::Result<RunConfig> {
        let mut doc = match &self.config {
            Some(p) => KvDoc::load(p)?,
            None => KvDoc::new(),
        };
        let mut set = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                doc.set(k, v);
            }
        };
        let s = |v: &Option<PathBuf>| v.as_ref().map(|p| p.display().to_string());
        set("clean", s(&self.clean));
        set("noisy", s(&self.noisy));
        set("sigma", self.sigma.map(|v| v.to_string()));
        set("seed", self.seed.map(|v| v.to_string()));
        set("backend", self.backend.clone());
        set("ensemble", self.ensemble.clone());
        set("tile_window", self.tile_window.map(|v| v.to_string()));
        set("tile_overlap", self.tile_overlap.map(|v| v.to_string()));
        set("blend", self.blend.clone());
        set("psnr_mode", self.psnr_mode.clone());
        set("workers", self.workers.map(|v| v.to_string()));
        set("as_8bit", self.as_8bit.then(|| "true".into()));
        set("clip_noise", self.clip_noise.then(|| "true".into()));
        set("external_cmd", self.external_cmd.clone());
        set("external_timeout", self.external_timeout.map(|v| v.to_string()));
        set("external_concurrency", self.external_concurrency.map(|v| v.to_string()));
        if doc.get("clean").is_none() {
            bail!("--clean (or `clean` in --config) is required");
        }
        Ok(RunConfig::from_kv(&doc)?)
    }
}

fn emit(bytes: &[u8], out: Option<&Path>) -> anyhow::Result<()> {
    match out {
        Some(p) => std::fs::write(p, bytes).with_context(|| format!("writing {}", p.display())),
        None => Ok(std::io::stdout().write_all(bytes)?),
    }
}

fn load_report(path: &Path) -> anyhow::Result<AblationReport> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing report {}", path.display()))
}

fn partial_exit(n_failures: usize) -> ExitCode {
    if n_failures == 0 {
        ExitCode::SUCCESS
    } else {
        eprintln!("{n_failures} image(s) failed");
        ExitCode::from(2)
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.cmd {
        Cmd::Eval(args) => {
            let cfg = args.run_config()?;
            let report = run_eval(&cfg)?;
            for f in &report.failures {
                log::error!("{}: {}", f.image_id, f.error);
            }
            emit(&render_report(&report, args.format)?, args.out.as_deref())?;
            Ok(partial_exit(report.failures.len()))
        }
        Cmd::Ablate(args) => {
            let cfg = args.run_config()?;
            let report = run_ablation_matrix(&cfg)?;
            for f in &report.failures {
                log::error!("{}: {}", f.image_id, f.error);
            }
            emit(&render_report(&report, args.format)?, args.out.as_deref())?;
            Ok(partial_exit(report.failures.len()))
        }
        Cmd::Compare {
            baseline,
            candidate,
            format,
            out,
        } => {
            let cmp = compare_runs(&load_report(&baseline)?, &load_report(&candidate)?)?;
            emit(&render_compare(&cmp, format)?, out.as_deref())?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::PrepSubimages {
            src,
            dst,
            target,
            min_side,
        } => {
            let m = make_subimages(&src, &dst, target, min_side)?;
            let s = &m.summary;
            eprintln!(
                "sources: {} found, {} failed; sub-images: {} written, {} discarded",
                s.sources_found, s.sources_failed, s.tiles_written, s.tiles_discarded
            );
            Ok(partial_exit(s.sources_failed))
        }
        Cmd::SamplePatches {
            manifest,
            stage,
            stage_config,
            n,
            seed,
            out,
        } => {
            let cfg = match stage_config {
                Some(p) => StageConfig::from_kv(&KvDoc::load(&p)?)?,
                None => {
                    let (one, two) = default_stage_configs();
                    match stage {
                        Stage::I => one,
                        Stage::II => two,
                    }
                }
            };
            let sampling = sample_patches(&read_manifest(&manifest)?, &cfg, seed, n)?;
            let mut text = String::new();
            for s in &sampling.samples {
                text.push_str(&serde_json::to_string(s)?);
                text.push('\n');
            }
            emit(text.as_bytes(), out.as_deref())?;
            if sampling.filtered > 0 {
                eprintln!("{} sub-images too small for the schedule", sampling.filtered);
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Noise {
            clean,
            out,
            sigma,
            seed,
            clip_noise,
            raw,
            workers,
        } => {
            let mut doc = KvDoc::new();
            doc.set("clean", clean.display());
            doc.set("sigma", sigma);
            doc.set("seed", seed);
            doc.set("clip_noise", clip_noise);
            doc.set("workers", workers);
            let failures = export_noisy(&RunConfig::from_kv(&doc)?, &out, raw)?;
            for f in &failures {
                log::error!("{}: {}", f.image_id, f.error);
            }
            Ok(partial_exit(failures.len()))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
