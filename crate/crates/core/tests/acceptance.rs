//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest
//! harness so the lines are always printed.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::{oracles, piecewise_smooth, random_image, write_corpus};
use dnbench::dataprep::{default_stage_configs, subimage_grid, PatchPhase, Stage};
use dnbench::degradation::{degrade, NoiseSpec};
use dnbench::ensemble::{self_ensemble, Dihedral, EnsembleMode};
use dnbench::harness::{run_ablation_matrix, run_eval, RunConfig};
use dnbench::inference::dct::{dct_threshold_denoise, DctParams};
use dnbench::inference::filters::box_blur_horizontal;
use dnbench::inference::nlm::{nlm_denoise, NlmParams};
use dnbench::inference::tiled::{blend_profile, tile_layout, weight_accumulator, Blend, TileSpec};
use dnbench::inference::{Backend, Pipeline};
use dnbench::metrics::{psnr, ssim, SsimParams};
use dnbench::report::{
    canonical_json, compare_runs, render_compare, render_report, AblationReport, Format,
    VariantSummary,
};
use dnbench::Image;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! check {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

fn within(elapsed: Duration, limit_s: f64) -> Outcome {
    let s = elapsed.as_secs_f64();
    check!(s < limit_s, "took {s:.2}s, limit {limit_s}s");
    Ok(format!("{s:.2}s"))
}

fn noisy_input_level() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    write_corpus(dir.path(), 20, 256, 256, 1000);
    let mut cfg = RunConfig::new(dir.path());
    cfg.noise = NoiseSpec::new(50.0, 1);
    let start = Instant::now();
    let report = run_eval(&cfg).map_err(|e| e.to_string())?;
    let t = within(start.elapsed(), 10.0)?;
    let v = &report.variants[0];
    check!(v.n_images == 20, "{} images evaluated", v.n_images);
    let mean = v.mean_psnr_db.unwrap();
    let analytic = 20.0 * (255.0f64 / 50.0).log10();
    check!((mean - 14.15).abs() <= 0.10, "mean PSNR {mean:.4} dB");
    Ok(format!("mean PSNR {mean:.4} dB (analytic {analytic:.4}), {t}"))
}

fn group_laws() -> Outcome {
    let start = Instant::now();
    let mut pairs = 0;
    for (w, h, seed) in [(5, 7, 1), (8, 8, 2)] {
        let x = random_image(w, h, seed);
        for a in Dihedral::ALL {
            check!(a.inverse().apply(&a.apply(&x)).bit_eq(&x), "{a} inverse on {w}x{h}");
            for b in Dihedral::ALL {
                check!(
                    a.then(b).apply(&x).bit_eq(&b.apply(&a.apply(&x))),
                    "{a} then {b} on {w}x{h}"
                );
                pairs += 1;
            }
        }
    }
    let t = within(start.elapsed(), 1.0)?;
    Ok(format!("{pairs} compositions and 16 inverses bit-exact, {t}"))
}

fn ensemble_oracle() -> Outcome {
    let mut worst = 0f64;
    for seed in 0..10 {
        let x = random_image(32, 32, 50 + seed);
        let f = |img: &Image| Ok(box_blur_horizontal(img, 2));
        let got = self_ensemble(&f, &x, &Dihedral::ALL).map_err(|e| e.to_string())?;
        let want = oracles::ensemble8(|img| box_blur_horizontal(img, 2), &x);
        worst = worst.max(got.max_abs_diff(&want));
    }
    check!(worst <= 1e-6, "max deviation {worst:e}");
    Ok(format!("max deviation {worst:.1e} over 10 images"))
}

fn equivariance_collapse() -> Outcome {
    let x = random_image(48, 40, 7);
    let mut worst = 0f64;
    for backend in [Backend::identity(), Backend::gaussian_blur(1.5).unwrap()] {
        let single = Pipeline::new(&backend).run(&x).map_err(|e| e.to_string())?;
        let ens = Pipeline::new(&backend)
            .with_ensemble(EnsembleMode::Full8)
            .run(&x)
            .map_err(|e| e.to_string())?;
        worst = worst.max(ens.max_abs_diff(&single));
    }
    check!(worst <= 1e-6, "max |ensemble - single| {worst:e}");

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    write_corpus(dir.path(), 3, 64, 64, 2000);
    let mut displays = Vec::new();
    for backend in ["identity", "gaussian_blur"] {
        let mut cfg = RunConfig::new(dir.path());
        cfg.backend = backend.into();
        let report = run_ablation_matrix(&cfg).map_err(|e| e.to_string())?;
        for d in report.deltas.iter().filter(|d| d.label.starts_with("ensemble")) {
            let s = d.psnr_display.clone().unwrap_or_default();
            check!(s == "+0.0000", "{backend} {}: {s}", d.label);
            displays.push(s);
        }
    }
    Ok(format!(
        "max |ensemble - single| {worst:.1e}; {} ensemble delta rows read +0.0000",
        displays.len()
    ))
}

fn wrapper_degeneration() -> Outcome {
    let img = random_image(96, 64, 8);
    let backend = Backend::box_blur_h(2);
    let direct = Pipeline::new(&backend).run(&img).map_err(|e| e.to_string())?;
    for window in [96, 128, 768] {
        let tiled = Pipeline::new(&backend)
            .with_tile(Some(TileSpec::new(window, 32, Blend::Hann).unwrap()))
            .run(&img)
            .map_err(|e| e.to_string())?;
        check!(tiled.bit_eq(&direct), "window {window} differs from direct");
    }
    let (w, h) = (200, 136);
    let mut worst = 0f64;
    for window in [64, 96, 128] {
        for overlap in [0, 16, 32] {
            let spec = TileSpec::new(window, overlap, Blend::Hann).unwrap();
            let acc = weight_accumulator(w, h, &spec);
            let mut total = vec![0f64; w * h];
            for r in tile_layout(w, h, &spec) {
                let (wx, wy) = (blend_profile(r.w, spec.blend), blend_profile(r.h, spec.blend));
                for (j, wyj) in wy.iter().enumerate() {
                    for (i, wxi) in wx.iter().enumerate() {
                        let idx = (r.y0 + j) * w + r.x0 + i;
                        total[idx] += wxi * wyj / acc[idx];
                    }
                }
            }
            worst = total.iter().fold(worst, |m, t| m.max((t - 1.0).abs()));
        }
    }
    check!(worst <= 1e-6, "partition of unity off by {worst:e}");
    Ok(format!("bit-identical when window >= image; weight sums within {worst:.1e} on 9 grids"))
}

fn metric_oracles() -> Outcome {
    let p = SsimParams::default();
    let mut worst = 0f64;
    for seed in 0..20 {
        let a = random_image(32, 32, 100 + seed);
        let n = random_image(32, 32, 200 + seed);
        let b = Image::from_fn(32, 32, 3, |c, x, y| 0.6 * a.get(c, x, y) + 0.4 * n.get(c, x, y));
        let got = ssim(&a, &b, &p).map_err(|e| e.to_string())?;
        worst = worst.max((got - oracles::ssim(&a, &b)).abs());
    }
    check!(worst <= 1e-6, "SSIM vs naive off by {worst:e}");
    let x = random_image(32, 32, 9);
    let self_ssim = ssim(&x, &x, &p).map_err(|e| e.to_string())?;
    check!(self_ssim == 1.0, "SSIM(x,x) = {self_ssim}");
    let zero = Image::filled(16, 16, 3, 0.0);
    let one = Image::filled(16, 16, 3, 1.0);
    let s01 = ssim(&zero, &one, &p).map_err(|e| e.to_string())?;
    check!((s01 - 9.999e-5).abs() <= 1e-8, "SSIM(0,1) = {s01:e}");
    let a = Image::filled(16, 16, 3, 0.25);
    let b = Image::from_fn(16, 16, 3, |c, x, y| a.get(c, x, y) + 0.1);
    let db = psnr(&a, &b, 1.0).map_err(|e| e.to_string())?;
    check!(format!("{db:.4}") == "20.0000", "PSNR(a, a+0.1) = {db}");
    Ok(format!(
        "SSIM vs naive {worst:.1e}; SSIM(x,x) = 1; SSIM(0,1) = {s01:.4e}; PSNR(a,a+0.1) = {db:.4} dB"
    ))
}

fn backend_oracles() -> Outcome {
    let mut worst = 0f64;
    for seed in 0..4 {
        let x = random_image(8, 8, 300 + seed);
        let nlm = nlm_denoise(
            &x,
            &NlmParams {
                patch: 3,
                search: 5,
                h: 0.2,
                sigma: 0.1,
            },
        )
        .map_err(|e| e.to_string())?;
        worst = worst.max(nlm.max_abs_diff(&oracles::nlm(&x, 3, 5, 0.2, 0.1)));
        let dct = dct_threshold_denoise(
            &x,
            &DctParams {
                block: 8,
                threshold: 0.15,
            },
        )
        .map_err(|e| e.to_string())?;
        worst = worst.max(dct.max_abs_diff(&oracles::dct(&x, 8, 0.15)));
    }
    check!(worst <= 1e-5, "backend vs brute force off by {worst:e}");
    let clean = piecewise_smooth(64, 64, 11);
    let mut gains = Vec::new();
    for seed in [1u64, 2, 3] {
        let spec = NoiseSpec::new(50.0, seed);
        let noisy = degrade(&clean, &spec, "smooth");
        let out = nlm_denoise(&noisy, &NlmParams::for_sigma(spec.sigma_unit()))
            .map_err(|e| e.to_string())?;
        let gain = psnr(&out, &clean, 1.0).unwrap() - psnr(&noisy, &clean, 1.0).unwrap();
        check!(gain > 0.0, "seed {seed}: NLM gain {gain:.4} dB");
        gains.push(format!("{gain:+.2}"));
    }
    Ok(format!(
        "NLM/DCT vs brute force {worst:.1e}; NLM gain {} dB",
        gains.join("/")
    ))
}

fn published_fixture() -> Outcome {
    let row = |name, psnr, ssim, ms, mb| VariantSummary::from_aggregates(name, psnr, ssim, ms, mb, 100);
    let ablation = AblationReport::from_variants(vec![
        row("Model, 1-pass", 30.7349, 0.8603, 1063.01, 36089.0),
        row("Model, x8", 30.7622, 0.8607, 8759.55, 36856.0),
        row("Wrapped, 1-pass", 30.7349, 0.8603, 1053.60, 36190.0),
        row("Wrapped, x8", 30.7622, 0.8607, 8815.73, 36956.0),
    ]);
    let shown: Vec<String> = ablation
        .deltas
        .iter()
        .map(|d| d.psnr_display.clone().unwrap_or_default())
        .collect();
    check!(
        shown == ["+0.0273", "+0.0273", "+0.0000", "+0.0000"],
        "ablation deltas {shown:?}"
    );
    let md = String::from_utf8(render_report(&ablation, Format::Markdown).map_err(|e| e.to_string())?)
        .unwrap();
    check!(md.contains("+0.0273"), "markdown lacks +0.0273");

    let pretrained = AblationReport::from_variants(vec![
        row("Pretrained, 1-pass", 27.3829, 0.7866, 0.0, 0.0),
        row("Pretrained, x8", 27.3960, 0.7870, 0.0, 0.0),
    ]);
    let ours = AblationReport::from_variants(vec![
        row("Model, 1-pass", 30.7349, 0.8603, 1063.01, 36089.0),
        row("Model, x8", 30.7622, 0.8607, 8759.55, 36856.0),
    ]);
    let cmp = compare_runs(&pretrained, &ours).map_err(|e| e.to_string())?;
    let margins: Vec<String> = cmp.rows.iter().map(|r| r.psnr_display.clone().unwrap_or_default()).collect();
    let ssim_gain: Vec<String> = cmp.rows.iter().map(|r| r.ssim_display.clone().unwrap_or_default()).collect();
    check!(margins == ["+3.3520", "+3.3662"], "margins {margins:?}");
    check!(ssim_gain == ["+0.0737", "+0.0737"], "SSIM gains {ssim_gain:?}");
    let text = String::from_utf8(render_compare(&cmp, Format::Markdown).map_err(|e| e.to_string())?)
        .unwrap();
    check!(text.contains("+3.3520") && text.contains("+3.3662"), "compare markdown");
    Ok("ensemble effect +0.0273 dB; margins +3.3520 / +3.3662 dB".into())
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    write_corpus(dir.path(), 20, 64, 56, 3000);
    let start = Instant::now();
    let mut outputs = Vec::new();
    for workers in [1, 8, 1, 8] {
        let mut cfg = RunConfig::new(dir.path());
        cfg.noise = NoiseSpec::new(50.0, 77);
        cfg.backend = "nlm:patch=5,search=9".into();
        cfg.ensemble = EnsembleMode::Flips4;
        cfg.tile = Some(TileSpec::new(32, 8, Blend::Hann).unwrap());
        cfg.workers = workers;
        let report = run_eval(&cfg).map_err(|e| e.to_string())?;
        check!(report.failures.is_empty(), "failures: {:?}", report.failures);
        outputs.push(canonical_json(&report).map_err(|e| e.to_string())?);
    }
    let t = within(start.elapsed(), 30.0)?;
    check!(outputs.iter().all(|o| *o == outputs[0]), "canonical reports differ");
    Ok(format!("4 runs at workers 1/8 byte-identical ({} bytes), {t}", outputs[0].len()))
}

fn dataprep() -> Outcome {
    let (s1, s2) = default_stage_configs();
    let ph = |patch, batch| PatchPhase { patch, batch };
    check!(s1.stage == Stage::I && s2.stage == Stage::II, "stage tags");
    check!(
        s1.patch_schedule == [ph(256, 4), ph(448, 2), ph(768, 1)],
        "stage I schedule {:?}",
        s1.patch_schedule
    );
    check!(s2.patch_schedule == [ph(768, 4)], "stage II schedule {:?}", s2.patch_schedule);
    check!(s1.iterations == 300_000 && s2.iterations == 300_000, "iterations");
    check!(s1.initial_lr == 1e-4 && s2.initial_lr == 1e-5, "learning rates");
    check!(
        s1.sources == ["DIV2K", "Flickr2K", "OST", "LSDIR"]
            && s2.sources == ["DIV2K", "Flickr2K", "OST", "LSDIR", "LIU4K-v2", "NKUSR8K", "DIV8K"],
        "sources"
    );
    let grid = subimage_grid(4096, 4096, 2048);
    check!(
        grid.len() == 4 && grid.iter().all(|(_, _, r)| r.w == 2048 && r.h == 2048),
        "4096^2 grid {grid:?}"
    );
    for (w, h) in [(4096, 4096), (5000, 2048), (7680, 4320), (2047, 3)] {
        let mut cover = vec![0u8; w * h];
        for (_, _, r) in subimage_grid(w, h, 2048) {
            for y in r.y0..r.y0 + r.h {
                cover[y * w + r.x0..y * w + r.x0 + r.w].iter_mut().for_each(|c| *c += 1);
            }
        }
        check!(cover.iter().all(|&c| c == 1), "{w}x{h} not partitioned");
    }
    Ok("stage configs match the training table; 4096^2 -> 2x2; tiles partition sources".into())
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("noisy-input PSNR level", noisy_input_level),
        ("dihedral group laws", group_laws),
        ("self-ensemble oracle", ensemble_oracle),
        ("equivariance collapse", equivariance_collapse),
        ("wrapper degeneration", wrapper_degeneration),
        ("metric oracles", metric_oracles),
        ("backend oracles", backend_oracles),
        ("published-table arithmetic", published_fixture),
        ("determinism across workers", determinism),
        ("dataprep", dataprep),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS [{:>2}] {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL [{:>2}] {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
