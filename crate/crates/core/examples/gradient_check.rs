// Compares backpropagated gradients with central finite differences on a
// small random network. Parameters whose probe crosses a ReLU kink are
// skipped: there the two one-sided slopes of the squared loss disagree by
// more than the `2ε·(dp/dw)²` a locally linear network would give.

use std::error::Error;

use visback::model::{backward, forward, InitScheme, NetworkConfig, WeightSet};
use visback::training::{render_scene, RoadStyle, SceneParams};

pub fn run_example() -> Result<(), Box<dyn Error>> {
    let cfg = NetworkConfig::with_widths(66, 66, [2, 3, 3, 3, 3], &[4]);
    let weights = WeightSet::init(&cfg, InitScheme::Uniform, 11)?;
    let image = render_scene(&SceneParams::straight(RoadStyle::GrassEdge, 2), 66, 66).image_yuv;

    let prediction = forward(&cfg, &weights, &image)?.0.inverse_turning_radius;
    let target = prediction + 0.5;
    let analytic = backward(&cfg, &weights, &image, target)?.gradients;
    let loss = |w: &WeightSet| backward(&cfg, w, &image, target).map(|b| b.loss as f64);

    let eps = 1e-3f32;
    let count = weights.num_params();
    println!("{count} parameters, showing every 40th");
    let l0 = loss(&weights)?;
    let e = eps as f64;
    let (mut diff2, mut norm2, mut skipped) = (0.0f64, 0.0f64, 0);
    for (k, a) in analytic.iter_values().enumerate() {
        let mut plus = weights.clone();
        *plus.iter_values_mut().nth(k).expect("index in range") += eps;
        let mut minus = weights.clone();
        *minus.iter_values_mut().nth(k).expect("index in range") -= eps;
        let (lp, lm) = (loss(&plus)?, loss(&minus)?);
        let fd = (lp - lm) / (2.0 * e);
        let (s1, s2) = ((lp - l0) / e, (l0 - lm) / e);
        let dp = fd / (2.0 * (prediction - target) as f64);
        if (s1 - s2 - 2.0 * e * dp * dp).abs() > 1e-4 + 0.01 * s1.abs().max(s2.abs()) {
            skipped += 1;
            continue;
        }
        diff2 += (*a as f64 - fd).powi(2);
        norm2 += fd * fd;
        if k % 40 == 0 {
            println!("  param {k:>4}: analytic {a:+.5e}  finite difference {fd:+.5e}");
        }
    }
    println!("{skipped} parameters skipped at ReLU kinks");
    println!(
        "relative error ‖analytic − fd‖ / ‖fd‖ = {:.2e}",
        (diff2 / norm2).sqrt()
    );
    Ok(())
}

fn main() -> Result<(), Box<dyn Error>> {
    run_example()
}
