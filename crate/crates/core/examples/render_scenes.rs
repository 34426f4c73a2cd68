// Renders one frame per road style, plus an augmented and a mirrored copy,
// and writes them as PPM files.

use std::error::Error;
use std::path::PathBuf;

use visback::pnm::write_ppm;
use visback::training::{augment, render_scene, RoadStyle, SceneParams, K_OFFSET};

fn out_dir(name: &str) -> std::io::Result<PathBuf> {
    let dir = std::env::temp_dir().join("visback-examples").join(name);
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let dir = out_dir("render_scenes")?;
    for (i, style) in RoadStyle::ALL.into_iter().enumerate() {
        let p = SceneParams {
            lane_offset: 0.4,
            heading: -0.01,
            curvature: 0.004,
            style,
            seed: 10 + i as u64,
        };
        let frame = render_scene(&p, 200, 66);
        let shifted = augment(&frame, -0.5, 0.6, K_OFFSET)?;
        let mirrored = frame.mirrored();
        for (suffix, f) in [
            ("", &frame),
            ("_shifted", &shifted),
            ("_mirrored", &mirrored),
        ] {
            write_ppm(
                &f.image_rgb,
                dir.join(format!("{}{suffix}.ppm", style.name())),
            )?;
        }
        println!(
            "{:<26} steering {:+.5}  shifted {:+.5}  mirrored {:+.5}",
            style.name(),
            frame.steering,
            shifted.steering,
            mirrored.steering
        );
    }
    println!("frames written to {}", dir.display());
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
