// Trains a small model briefly, then computes the visualization mask for
// one scene and writes the mask, a green overlay and the per-level
// intermediate masks.

use std::error::Error;

use visback::model::{forward, NetworkConfig};
use visback::pnm::{write_pgm, write_ppm, GrayImage};
use visback::saliency::{compute_mask, overlay, write_mask_pgm};
use visback::training::{
    build_training_set, render_scene, train, RoadStyle, SceneParams, StyleChoice, TrainConfig,
};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let dir = std::env::temp_dir()
        .join("visback-examples")
        .join("explain");
    std::fs::create_dir_all(&dir)?;

    let cfg = NetworkConfig::toy();
    let tc = TrainConfig {
        epochs: 3,
        ..TrainConfig::default()
    };
    let data = build_training_set(
        100,
        StyleChoice::Mixed,
        5,
        &tc,
        cfg.input_width,
        cfg.input_height,
    )?;
    let weights = train(&cfg, &tc, &data)?.weights;

    let scene = SceneParams {
        lane_offset: -0.3,
        heading: 0.02,
        curvature: -0.005,
        style: RoadStyle::LaneMarked,
        seed: 99,
    };
    let frame = render_scene(&scene, cfg.input_width, cfg.input_height);
    let (out, trace) = forward(&cfg, &weights, &frame.image_yuv)?;
    let (mask, levels) = compute_mask(&trace, &cfg)?;
    println!(
        "steering label {:+.5}, prediction {:+.5}",
        frame.steering, out.inverse_turning_radius
    );

    write_mask_pgm(&mask, &dir.join("mask.pgm"))?;
    write_ppm(
        &overlay(&frame.image_rgb, &mask, 255.0)?,
        dir.join("overlay.ppm"),
    )?;
    for level in &levels.levels {
        let peak = level.mask.data().iter().cloned().fold(0.0f32, f32::max);
        let unit = if peak > 0.0 {
            level.mask.map(|v| v / peak)
        } else {
            level.mask.clone()
        };
        write_pgm(
            &GrayImage::from_unit_tensor(&unit),
            dir.join(format!("level{}_mask.pgm", level.layer)),
        )?;
        println!(
            "layer {:>2}: {}×{} mask, peak {peak:.3e}",
            level.layer,
            level.mask.height(),
            level.mask.width()
        );
    }
    let salient = mask.values().data().iter().filter(|&&v| v > 0.2).count();
    println!(
        "{salient} of {} pixels above 0.2, files in {}",
        mask.height() * mask.width(),
        dir.display()
    );
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
