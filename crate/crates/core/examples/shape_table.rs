// Prints the per-layer output shapes and parameter counts of the built-in
// network configs.

use std::error::Error;

use visback::model::{LayerSpec, NetworkConfig, WeightSet};

fn describe(name: &str, cfg: &NetworkConfig) -> Result<(), Box<dyn Error>> {
    let table = cfg.validate()?;
    let params = WeightSet::zeros(cfg)?.num_params();
    println!(
        "{name}: input 3×{}×{}, {params} parameters",
        cfg.input_height, cfg.input_width
    );
    for (spec, shape) in cfg.layers.iter().zip(&table.layers) {
        let kind = match spec {
            LayerSpec::Conv { .. } => "conv",
            _ => "dense",
        };
        println!(
            "  layer {:>2} {kind:<5} {:>4}×{:>3}×{:>3}",
            shape.layer, shape.channels, shape.height, shape.width
        );
    }
    Ok(())
}

pub fn run_example() -> Result<(), Box<dyn Error>> {
    describe("pilotnet", &NetworkConfig::pilotnet())?;
    describe("toy", &NetworkConfig::toy())?;
    let custom = NetworkConfig::with_widths(66, 200, [4, 6, 8, 8, 8], &[16]);
    describe("custom", &custom)
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
