//! Command-line front end: `gen`, `train`, `predict`, `explain`, `shift`.
//!
//! Exit codes: 0 success, 2 usage error, 3 data or format error, 4 numerical
//! failure. Every command writes a [`RunManifest`] next to its outputs.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::fsutil;
use crate::harness::{self, HarnessError};
use crate::model::{
    forward, load_weights, predict, save_weights, ModelError, NetworkConfig, WeightFileError,
};
use crate::pnm::{self, GrayImage};
use crate::saliency::{self, SaliencyError};
use crate::tensor::{self, Tensor};
use crate::training::{self, DatasetError, StyleChoice, TrainConfig, TrainError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

pub const THREADS_ENV: &str = "VISBACK_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "visback",
    version,
    about = "Steering network, saliency masks and shift experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic dataset: frames/NNNNNN.ppm and labels.csv.
    Gen(GenArgs),
    /// Train a network on a dataset directory.
    Train(TrainArgs),
    /// Print the steering output for one or more images.
    Predict(PredictArgs),
    /// Compute the saliency mask and overlay for an image.
    Explain(ExplainArgs),
    /// Run the shift experiment on an image.
    Shift(ShiftArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub scenes: usize,
    /// lane_marked, unmarked_with_parked_cars, grass_edge or mixed.
    #[arg(long, default_value = "mixed")]
    pub style: StyleChoice,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub width: usize,
    #[arg(long, default_value_t = 66)]
    pub height: usize,
    /// Append one laterally shifted copy of every scene.
    #[arg(long)]
    pub augment: bool,
    /// Augmentation range in meters.
    #[arg(long, default_value_t = 0.6)]
    pub shift_range: f32,
    /// Label correction per meter of shift, 1/m².
    #[arg(long, default_value_t = training::K_OFFSET)]
    pub gain: f32,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Network config JSON. Defaults to the reduced-width preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training config JSON; individual flags below override its fields.
    #[arg(long)]
    pub train_config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub lr: Option<f32>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Loss log path. Defaults to `<out>.loss.csv`.
    #[arg(long)]
    pub loss_log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long = "image", required = true)]
    pub images: Vec<PathBuf>,
    /// Also write `image,steering` rows to this CSV file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write each level's averaged map and intermediate mask.
    #[arg(long)]
    pub mask_trace: bool,
    /// Overlay strength: mask × gain is added to the green channel.
    #[arg(long, default_value_t = 255.0)]
    pub gain: f32,
}

#[derive(Debug, Args)]
pub struct ShiftArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long, default_value_t = harness::DEFAULT_THRESHOLD)]
    pub threshold: f32,
    /// Dilation radius in pixels. Defaults to round(30 × width / 200).
    #[arg(long)]
    pub dilate: Option<usize>,
    /// Inclusive shift range `A..B` in pixels.
    #[arg(long, default_value = "-40..40", allow_hyphen_values = true, value_parser = parse_range)]
    pub range: (i64, i64),
    #[arg(long, default_value_t = 4)]
    pub step: i64,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_range(s: &str) -> Result<(i64, i64), String> {
    let (a, b) = s
        .split_once("..")
        .ok_or_else(|| format!("expected A..B, got {s:?}"))?;
    let a: i64 = a
        .trim()
        .parse()
        .map_err(|_| format!("bad range start {a:?}"))?;
    let b: i64 = b
        .trim()
        .parse()
        .map_err(|_| format!("bad range end {b:?}"))?;
    if a > b {
        return Err(format!("range start {a} exceeds end {b}"));
    }
    Ok((a, b))
}

/// Reproducibility record written next to every command's outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config_path: Option<PathBuf>,
    pub weights_path: Option<PathBuf>,
    pub seed: Option<u64>,
    pub output: PathBuf,
    pub tool_version: String,
    /// Every effective parameter of the run.
    pub parameters: serde_json::Value,
}

impl RunManifest {
    fn new(subcommand: &str, output: &Path, parameters: serde_json::Value) -> Self {
        Self {
            subcommand: subcommand.into(),
            config_path: None,
            weights_path: None,
            seed: None,
            output: output.to_path_buf(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            parameters,
        }
    }

    fn write(&self, path: &Path) -> Result<(), CliError> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes") + "\n";
        write_file(path, json.as_bytes())
    }
}

/// Manifest path for a single-file output: `<file>.manifest.json`.
pub fn manifest_path_for(file: &Path) -> PathBuf {
    let mut name = file.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn data(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_DATA,
            message: message.into(),
        }
    }

    fn numerical(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_NUMERICAL,
            message: message.into(),
        }
    }

    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::data(e.to_string())
    }
}

impl From<WeightFileError> for CliError {
    fn from(e: WeightFileError) -> Self {
        Self::data(format!("{}: {e}", e.code()))
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        Self::data(e.to_string())
    }
}

impl From<SaliencyError> for CliError {
    fn from(e: SaliencyError) -> Self {
        Self::data(e.to_string())
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Threshold(_)
            | HarnessError::MissingZeroShift
            | HarnessError::ShiftTooLarge { .. } => Self::usage(e.to_string()),
            _ => Self::data(e.to_string()),
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        Self::data(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Diverged { .. } => Self::numerical(e.to_string()),
            TrainError::Config(_) => Self::usage(e.to_string()),
            _ => Self::data(e.to_string()),
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    fsutil::write_atomic(path, bytes)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn read_image(path: &Path) -> Result<Tensor, CliError> {
    pnm::read_ppm(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<(NetworkConfig, crate::model::WeightSet), CliError> {
    load_weights(path).map_err(|e| CliError::data(format!("{}: {}: {e}", path.display(), e.code())))
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code. Diagnostics go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {}", e.message);
        return e.code;
    }
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| {
            CliError::usage(format!(
                "{THREADS_ENV} must be a positive integer, got {value:?}"
            ))
        })?;
    // a second call in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(())
}

pub fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Gen(a) => cmd_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Explain(a) => cmd_explain(a),
        Command::Shift(a) => cmd_shift(a),
    }
}

fn cmd_gen(a: GenArgs) -> Result<(), CliError> {
    if a.width == 0 || a.height == 0 {
        return Err(CliError::usage("width and height must be positive"));
    }
    let tc = TrainConfig {
        augmentation_shift_range: a.shift_range,
        steering_correction_gain: a.gain,
        ..TrainConfig::default()
    };
    let frames = if a.augment {
        training::build_training_set(a.scenes, a.style, a.seed, &tc, a.width, a.height)?
    } else {
        training::render_all(
            &training::sample_scenes(a.scenes, a.style, a.seed),
            a.width,
            a.height,
        )
    };
    training::save_dataset(&frames, &a.out)?;
    let mut m = RunManifest::new(
        "gen",
        &a.out,
        serde_json::json!({
            "scenes": a.scenes,
            "style": a.style,
            "width": a.width,
            "height": a.height,
            "augment": a.augment,
            "shift_range": a.shift_range,
            "gain": a.gain,
            "frames": frames.len(),
        }),
    );
    m.seed = Some(a.seed);
    m.write(&a.out.join("manifest.json"))?;
    println!("wrote {} frames to {}", frames.len(), a.out.display());
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn cmd_train(a: TrainArgs) -> Result<(), CliError> {
    let cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::data(format!("{}: {e}", p.display())))?;
            NetworkConfig::from_json(&text)
                .map_err(|e| CliError::data(format!("{}: {e}", p.display())))?
        }
        None => NetworkConfig::toy(),
    };
    let mut tc: TrainConfig = match &a.train_config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = a.lr {
        tc.learning_rate = v;
    }
    if let Some(v) = a.batch_size {
        tc.batch_size = v;
    }
    if let Some(v) = a.epochs {
        tc.epochs = v;
    }
    if let Some(v) = a.seed {
        tc.seed = v;
    }
    let data = training::load_dataset(&a.data)?;
    if let Some(f) = data.first() {
        let dims = f.image_yuv.dims();
        let want = (cfg.input_channels, cfg.input_height, cfg.input_width);
        if dims != want {
            return Err(CliError::data(format!(
                "dataset frames are {dims:?}, config expects {want:?}"
            )));
        }
    }
    let outcome = training::train(&cfg, &tc, &data)?;
    save_weights(&cfg, &outcome.weights, &a.out)?;

    let loss_path = a.loss_log.clone().unwrap_or_else(|| {
        let mut s = a.out.as_os_str().to_owned();
        s.push(".loss.csv");
        PathBuf::from(s)
    });
    let mut log = String::from("epoch,loss\n");
    for (i, l) in outcome.losses.iter().enumerate() {
        writeln!(log, "{i},{l}").expect("writing to a String");
    }
    write_file(&loss_path, log.as_bytes())?;

    let mut m = RunManifest::new(
        "train",
        &a.out,
        serde_json::json!({
            "data": a.data,
            "train_config": tc,
            "target_scale": outcome.target_scale,
            "samples": data.len(),
            "loss_log": loss_path,
            "final_loss": outcome.losses.last(),
        }),
    );
    m.config_path = a.config.clone();
    m.weights_path = Some(a.out.clone());
    m.seed = Some(tc.seed);
    m.write(&manifest_path_for(&a.out))?;
    if let Some(l) = outcome.losses.last() {
        println!("final epoch loss {l}");
    }
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> Result<(), CliError> {
    let (cfg, w) = load_model(&a.weights)?;
    let mut csv = String::from("image,steering\n");
    for path in &a.images {
        let img = read_image(path)?;
        let s = predict(&cfg, &w, &training::rgb_to_yuv(&img))?.inverse_turning_radius;
        if !s.is_finite() {
            return Err(CliError::numerical(format!(
                "{}: non-finite output",
                path.display()
            )));
        }
        println!("{}\t{s}", path.display());
        writeln!(csv, "{},{s}", path.display()).expect("writing to a String");
    }
    if let Some(out) = &a.out {
        write_file(out, csv.as_bytes())?;
        let mut m = RunManifest::new("predict", out, serde_json::json!({ "images": a.images }));
        m.weights_path = Some(a.weights.clone());
        m.write(&manifest_path_for(out))?;
    }
    Ok(())
}

/// Scales a map to `[0, 1]` for viewing as an 8-bit image.
fn viewable(t: &Tensor) -> GrayImage {
    GrayImage::from_unit_tensor(&tensor::normalize_01(t))
}

fn cmd_explain(a: ExplainArgs) -> Result<(), CliError> {
    let (cfg, w) = load_model(&a.weights)?;
    let rgb = read_image(&a.image)?;
    let (out, trace) = forward(&cfg, &w, &training::rgb_to_yuv(&rgb))?;
    if !out.inverse_turning_radius.is_finite() {
        return Err(CliError::numerical("non-finite network output"));
    }
    let (mask, levels) = saliency::compute_mask(&trace, &cfg)?;
    std::fs::create_dir_all(&a.out)?;
    write_file(&a.out.join("mask.pgm"), &pnm::encode_pgm(&mask.to_gray()))?;
    write_file(&a.out.join("mask.raw"), &saliency::encode_mask_raw(&mask))?;
    let over = saliency::overlay(&rgb, &mask, a.gain)?;
    write_file(&a.out.join("overlay.ppm"), &pnm::encode_ppm(&over))?;
    if a.mask_trace {
        for lvl in &levels.levels {
            let name = |kind: &str| a.out.join(format!("level{}_{kind}.pgm", lvl.layer));
            write_file(
                &name("averaged"),
                &pnm::encode_pgm(&viewable(&lvl.averaged)),
            )?;
            write_file(&name("mask"), &pnm::encode_pgm(&viewable(&lvl.mask)))?;
        }
    }
    let mut m = RunManifest::new(
        "explain",
        &a.out,
        serde_json::json!({
            "image": a.image,
            "gain": a.gain,
            "mask_trace": a.mask_trace,
            "steering": out.inverse_turning_radius,
        }),
    );
    m.weights_path = Some(a.weights.clone());
    m.write(&a.out.join("manifest.json"))?;
    println!("steering {}", out.inverse_turning_radius);
    Ok(())
}

fn cmd_shift(a: ShiftArgs) -> Result<(), CliError> {
    if a.step <= 0 {
        return Err(CliError::usage("--step must be positive"));
    }
    let (cfg, w) = load_model(&a.weights)?;
    let rgb = read_image(&a.image)?;
    let yuv = training::rgb_to_yuv(&rgb);
    let (_, trace) = forward(&cfg, &w, &yuv)?;
    let (mask, _) = saliency::compute_mask(&trace, &cfg)?;
    let radius = a
        .dilate
        .unwrap_or_else(|| harness::default_dilation_radius(rgb.width()));
    let seg = harness::segment(&mask, a.threshold, radius)?;
    let mut shifts = harness::shift_range(a.range.0, a.range.1, a.step);
    if !shifts.contains(&0) {
        shifts.push(0);
    }
    let result = harness::run_shift_experiment(&cfg, &w, &yuv, &seg, &shifts)?;
    let finite = result.rows.iter().all(|r| {
        r.steer_class1.is_finite() && r.steer_class2.is_finite() && r.steer_all.is_finite()
    });
    if !finite {
        return Err(CliError::numerical("non-finite steering output"));
    }
    std::fs::create_dir_all(&a.out)?;
    write_file(&a.out.join("shifts.csv"), result.to_csv().as_bytes())?;
    write_file(
        &a.out.join("summary.json"),
        (result.summary_json() + "\n").as_bytes(),
    )?;
    write_file(
        &a.out.join("class1.pgm"),
        &pnm::encode_pgm(&GrayImage::from_unit_tensor(&seg.class1)),
    )?;
    let mut m = RunManifest::new(
        "shift",
        &a.out,
        serde_json::json!({
            "image": a.image,
            "threshold": a.threshold,
            "dilate": radius,
            "range": [a.range.0, a.range.1],
            "step": a.step,
        }),
    );
    m.weights_path = Some(a.weights.clone());
    m.write(&a.out.join("manifest.json"))?;
    let f = &result.fits;
    println!(
        "slopes: class1 {:.6} class2 {:.6} all {:.6}",
        f.class1.slope, f.class2.slope, f.all.slope
    );
    Ok(())
}
