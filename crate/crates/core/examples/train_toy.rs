// Generates a small synthetic road dataset, trains the toy network for a
// few epochs and saves the weights.

use std::error::Error;

use visback::model::{save_weights, NetworkConfig};
use visback::training::{
    build_training_set, evaluate_mse, label_variance, train, StyleChoice, TrainConfig,
};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let dir = std::env::temp_dir()
        .join("visback-examples")
        .join("train_toy");
    std::fs::create_dir_all(&dir)?;

    let cfg = NetworkConfig::toy();
    let tc = TrainConfig {
        epochs: 4,
        ..TrainConfig::default()
    };
    let data = build_training_set(
        120,
        StyleChoice::Mixed,
        1,
        &tc,
        cfg.input_width,
        cfg.input_height,
    )?;
    let outcome = train(&cfg, &tc, &data)?;
    for (epoch, loss) in outcome.losses.iter().enumerate() {
        println!("epoch {epoch:>2}  loss {loss:.4}");
    }
    let mse = evaluate_mse(&cfg, &outcome.weights, &data)?;
    println!(
        "{} frames, mse {mse:.3e}, label variance {:.3e}, target scale {}",
        data.len(),
        label_variance(&data),
        outcome.target_scale
    );
    let path = dir.join("toy.pnw");
    save_weights(&cfg, &outcome.weights, &path)?;
    println!("weights written to {}", path.display());
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
