// Writes and reads back a weight file, a dataset directory and a raw mask,
// then shows how corrupted weight files are reported.

use std::error::Error;

use visback::model::weights_file::{decode_weights, encode_weights};
use visback::model::{load_weights, save_weights, InitScheme, NetworkConfig, WeightSet};
use visback::saliency::{decode_mask_raw, encode_mask_raw, VisualizationMask};
use visback::training::{load_dataset, render_all, sample_scenes, save_dataset, StyleChoice};
use visback::Tensor;

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let dir = std::env::temp_dir()
        .join("visback-examples")
        .join("file_formats");
    std::fs::create_dir_all(&dir)?;

    let cfg = NetworkConfig::toy();
    let weights = WeightSet::init(&cfg, InitScheme::HeUniform, 3)?;
    let path = dir.join("toy.pnw");
    save_weights(&cfg, &weights, &path)?;
    let (cfg_back, weights_back) = load_weights(&path)?;
    println!(
        "weights: {} bytes, config equal {}, values equal {}",
        std::fs::metadata(&path)?.len(),
        cfg_back == cfg,
        weights_back == weights
    );

    let bytes = encode_weights(&cfg, &weights)?;
    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    let mut bad_payload = bytes.clone();
    let mid = bad_payload.len() / 2;
    bad_payload[mid] ^= 0x40;
    for (name, b) in [("magic", &bad_magic), ("payload", &bad_payload)] {
        match decode_weights(b) {
            Err(e) => println!("corrupted {name}: {} ({e})", e.code()),
            Ok(_) => println!("corrupted {name}: accepted"),
        }
    }

    let frames = render_all(&sample_scenes(3, StyleChoice::Mixed, 21), 200, 66);
    let data_dir = dir.join("dataset");
    save_dataset(&frames, &data_dir)?;
    let back = load_dataset(&data_dir)?;
    let same = frames
        .iter()
        .zip(&back)
        .all(|(a, b)| a.image_rgb == b.image_rgb && a.steering.to_bits() == b.steering.to_bits());
    println!(
        "dataset: {} frames in {}, identical {same}",
        back.len(),
        data_dir.display()
    );

    let ramp = (0..66 * 200)
        .map(|i| i as f32 / (66.0 * 200.0 - 1.0))
        .collect();
    let mask = VisualizationMask::new(Tensor::new(1, 66, 200, ramp)?)?;
    let raw = encode_mask_raw(&mask);
    println!(
        "mask: {} bytes raw, round trip identical {}",
        raw.len(),
        decode_mask_raw(&raw)? == mask
    );
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
