mod common;

use common::random_image;
use dnbench::inference::filters::gaussian_blur;
use dnbench::inference::tiled::{
    blend_profile, tile_layout, tiled_denoise, weight_accumulator, Blend, TileSpec,
};
use dnbench::inference::{Backend, Pipeline};
use dnbench::{Error, Image};

#[test]
fn normalized_weights_partition_unity() {
    let (w, h) = (200, 136);
    for window in [64, 96, 128] {
        for overlap in [0, 16, 32] {
            for blend in [Blend::Hann, Blend::Uniform] {
                let spec = TileSpec::new(window, overlap, blend).unwrap();
                let acc = weight_accumulator(w, h, &spec);
                let mut total = vec![0f64; w * h];
                for r in tile_layout(w, h, &spec) {
                    let wx = blend_profile(r.w, blend);
                    let wy = blend_profile(r.h, blend);
                    for (j, wyj) in wy.iter().enumerate() {
                        for (i, wxi) in wx.iter().enumerate() {
                            let idx = (r.y0 + j) * w + r.x0 + i;
                            total[idx] += wxi * wyj / acc[idx];
                        }
                    }
                }
                let worst = total.iter().map(|t| (t - 1.0).abs()).fold(0.0, f64::max);
                assert!(worst <= 1e-6, "{spec}: {worst}");
            }
        }
    }
}

#[test]
fn constant_stays_constant_through_tiling() {
    let img = Image::filled(200, 136, 3, 0.37);
    let id = |x: &Image| Ok(x.clone());
    for window in [64, 96, 128] {
        for overlap in [0, 16, 32] {
            let spec = TileSpec::new(window, overlap, Blend::Hann).unwrap();
            let out = tiled_denoise(&id, &img, &spec).unwrap();
            assert!(out.max_abs_diff(&img) <= 1e-6);
        }
    }
}

#[test]
fn identity_through_tiles_reconstructs_input() {
    let img = random_image(200, 136, 3);
    let id = |x: &Image| Ok(x.clone());
    let spec = TileSpec::new(64, 16, Blend::Hann).unwrap();
    assert!(tiled_denoise(&id, &img, &spec).unwrap().max_abs_diff(&img) <= 1e-6);
}

#[test]
fn window_covering_image_is_bit_identical() {
    let img = random_image(96, 64, 4);
    let backend = Backend::gaussian_blur(1.5).unwrap();
    let direct = Pipeline::new(&backend).run(&img).unwrap();
    for window in [96, 128, 768] {
        let spec = TileSpec::new(window, 32, Blend::Hann).unwrap();
        let tiled = Pipeline::new(&backend).with_tile(Some(spec)).run(&img).unwrap();
        assert!(tiled.bit_eq(&direct), "window {window}");
    }
}

#[test]
fn small_tiles_differ_only_near_seams_for_local_filters() {
    let img = random_image(128, 128, 5);
    let f = |x: &Image| Ok(gaussian_blur(x, 1.0));
    let spec = TileSpec::new(64, 32, Blend::Hann).unwrap();
    let tiled = tiled_denoise(&f, &img, &spec).unwrap();
    let direct = gaussian_blur(&img, 1.0);
    assert!(tiled.max_abs_diff(&direct) < 0.1);
}

#[test]
fn tile_failure_names_the_tile() {
    let img = random_image(128, 64, 6);
    let f = |x: &Image| {
        if x.width() == 64 && x.get(0, 0, 0) > 2.0 {
            Ok(x.clone())
        } else {
            Err(Error::InvalidParams("boom".into()))
        }
    };
    let spec = TileSpec::new(64, 0, Blend::Uniform).unwrap();
    let msg = tiled_denoise(&f, &img, &spec).unwrap_err().to_string();
    assert!(msg.contains("tile (0,0)"), "{msg}");
}
