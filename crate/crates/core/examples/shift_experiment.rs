// Runs the shift experiment on one scene: splits the image into salient
// (class 1) and remaining (class 2) pixels, shifts each set sideways and
// fits steering against shift.

use std::error::Error;

use visback::harness::{
    default_dilation_radius, run_shift_experiment, segment, shift_range, DEFAULT_THRESHOLD,
};
use visback::model::{forward, NetworkConfig};
use visback::pnm::{write_pgm, GrayImage};
use visback::saliency::compute_mask;
use visback::training::{
    build_training_set, render_scene, train, RoadStyle, SceneParams, StyleChoice, TrainConfig,
};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let dir = std::env::temp_dir()
        .join("visback-examples")
        .join("shift_experiment");
    std::fs::create_dir_all(&dir)?;

    let cfg = NetworkConfig::toy();
    let tc = TrainConfig {
        epochs: 3,
        ..TrainConfig::default()
    };
    let data = build_training_set(
        100,
        StyleChoice::Mixed,
        8,
        &tc,
        cfg.input_width,
        cfg.input_height,
    )?;
    let weights = train(&cfg, &tc, &data)?.weights;

    let scene = SceneParams {
        lane_offset: 0.2,
        heading: 0.0,
        curvature: 0.003,
        style: RoadStyle::UnmarkedWithParkedCars,
        seed: 4,
    };
    let frame = render_scene(&scene, cfg.input_width, cfg.input_height);
    let (_, trace) = forward(&cfg, &weights, &frame.image_yuv)?;
    let (mask, _) = compute_mask(&trace, &cfg)?;
    let seg = segment(
        &mask,
        DEFAULT_THRESHOLD,
        default_dilation_radius(cfg.input_width),
    )?;
    let result = run_shift_experiment(
        &cfg,
        &weights,
        &frame.image_yuv,
        &seg,
        &shift_range(-40, 40, 8),
    )?;

    std::fs::write(dir.join("shifts.csv"), result.to_csv())?;
    write_pgm(
        &GrayImage::from_unit_tensor(&seg.class1),
        dir.join("class1.pgm"),
    )?;
    print!("{}", result.to_csv());
    println!(
        "class 1 covers {:.1}% of the frame",
        100.0 * seg.class1_fraction()
    );
    for (name, fit) in [
        ("class 1", &result.fits.class1),
        ("class 2", &result.fits.class2),
        ("all", &result.fits.all),
    ] {
        println!(
            "{name:<8} slope {:+.3e}  R² {:.3}",
            fit.slope, fit.r_squared
        );
    }
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
