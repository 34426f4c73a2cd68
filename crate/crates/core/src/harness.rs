//! Causal check of a saliency mask: split the image into salient and
//! background pixels, translate one group at a time, and record how the
//! steering output responds.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{predict, ModelError, NetworkConfig, WeightSet};
use crate::saliency::VisualizationMask;
use crate::tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("shift {dx} must be smaller than the image width {width} in magnitude")]
    ShiftTooLarge { dx: i64, width: usize },
    #[error("segmentation {seg:?} does not match image {image:?}")]
    SizeMismatch {
        seg: (usize, usize),
        image: (usize, usize),
    },
    #[error("shift list must include 0")]
    MissingZeroShift,
    #[error("threshold {0} is outside [0, 1]")]
    Threshold(f32),
}

/// Dilation radius used at the reference width of 200 pixels.
pub const REFERENCE_DILATION: usize = 30;
pub const DEFAULT_THRESHOLD: f32 = 0.2;

/// Dilation radius scaled to the image width: `round(30 × width / 200)`.
pub fn default_dilation_radius(width: usize) -> usize {
    (REFERENCE_DILATION as f64 * width as f64 / 200.0).round() as usize
}

/// `1` where `mask > t`, else `0`.
pub fn threshold_mask(mask: &VisualizationMask, t: f32) -> Tensor {
    mask.values().map(|v| if v > t { 1.0 } else { 0.0 })
}

/// Square (Chebyshev) dilation of a binary single-channel tensor: an output
/// pixel is set when any input pixel within the `(2r+1)×(2r+1)` window is.
pub fn dilate(binary: &Tensor, radius: usize) -> Tensor {
    if radius == 0 {
        return binary.clone();
    }
    let (h, w) = (binary.height(), binary.width());
    let mut out = binary.clone();
    for c in 0..binary.channels() {
        let src = binary.plane(c);
        // horizontal pass then vertical pass; the square element is separable
        let mut rows = vec![0.0f32; h * w];
        for y in 0..h {
            let line = &src[y * w..(y + 1) * w];
            let mut last_on: Option<usize> = None;
            let mut next_on = vec![usize::MAX; w];
            let mut upcoming = usize::MAX;
            for x in (0..w).rev() {
                if line[x] != 0.0 {
                    upcoming = x;
                }
                next_on[x] = upcoming;
            }
            for x in 0..w {
                if line[x] != 0.0 {
                    last_on = Some(x);
                }
                let left = last_on.is_some_and(|p| x - p <= radius);
                let right = next_on[x] != usize::MAX && next_on[x] - x <= radius;
                rows[y * w + x] = if left || right { 1.0 } else { 0.0 };
            }
        }
        let dst = &mut out.data_mut()[c * h * w..(c + 1) * h * w];
        for x in 0..w {
            let mut last_on: Option<usize> = None;
            let mut next_on = vec![usize::MAX; h];
            let mut upcoming = usize::MAX;
            for y in (0..h).rev() {
                if rows[y * w + x] != 0.0 {
                    upcoming = y;
                }
                next_on[y] = upcoming;
            }
            for y in 0..h {
                if rows[y * w + x] != 0.0 {
                    last_on = Some(y);
                }
                let up = last_on.is_some_and(|p| y - p <= radius);
                let down = next_on[y] != usize::MAX && next_on[y] - y <= radius;
                dst[y * w + x] = if up || down { 1.0 } else { 0.0 };
            }
        }
    }
    out
}

/// Salient (class 1) versus background (class 2) pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassSegmentation {
    /// Binary map, `1` marks class 1 after dilation.
    pub class1: Tensor,
    pub threshold: f32,
    pub dilation_radius: usize,
}

impl ClassSegmentation {
    /// Complement of class 1.
    pub fn class2(&self) -> Tensor {
        self.class1.map(|v| if v != 0.0 { 0.0 } else { 1.0 })
    }

    pub fn class1_fraction(&self) -> f32 {
        self.class1.data().iter().filter(|&&v| v != 0.0).count() as f32 / self.class1.len() as f32
    }
}

/// Threshold the mask, then dilate.
pub fn segment(
    mask: &VisualizationMask,
    t: f32,
    radius: usize,
) -> Result<ClassSegmentation, HarnessError> {
    if !(0.0..=1.0).contains(&t) {
        return Err(HarnessError::Threshold(t));
    }
    Ok(ClassSegmentation {
        class1: dilate(&threshold_mask(mask, t), radius),
        threshold: t,
        dilation_radius: radius,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PixelClass {
    Class1,
    Class2,
    All,
}

/// Translates the chosen pixels horizontally by `dx` (positive = right).
///
/// For `All`, the whole image moves and the uncovered columns replicate the
/// nearest edge column. For a single class, moved pixels are drawn over the
/// original image; pixels pushed out of frame are dropped and vacated
/// positions keep their original values.
pub fn shift_class(
    image: &Tensor,
    seg: &ClassSegmentation,
    which: PixelClass,
    dx: i64,
) -> Result<Tensor, HarnessError> {
    let (c, h, w) = image.dims();
    if dx.unsigned_abs() as usize >= w {
        return Err(HarnessError::ShiftTooLarge { dx, width: w });
    }
    if (seg.class1.height(), seg.class1.width()) != (h, w) {
        return Err(HarnessError::SizeMismatch {
            seg: (seg.class1.height(), seg.class1.width()),
            image: (h, w),
        });
    }
    let mut out = image.clone();
    if dx == 0 {
        return Ok(out);
    }
    let sel = seg.class1.plane(0);
    let src = image.data();
    let dst = out.data_mut();
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..h {
            let row = base + y * w;
            match which {
                PixelClass::All => {
                    for x in 0..w {
                        let from = (x as i64 - dx).clamp(0, w as i64 - 1) as usize;
                        dst[row + x] = src[row + from];
                    }
                }
                PixelClass::Class1 | PixelClass::Class2 => {
                    let want = matches!(which, PixelClass::Class1);
                    for x in 0..w {
                        if (sel[y * w + x] != 0.0) != want {
                            continue;
                        }
                        let to = x as i64 + dx;
                        if (0..w as i64).contains(&to) {
                            dst[row + to as usize] = src[row + x];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Ordinary least-squares line `y = slope·x + intercept`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Coefficient of determination. `1.0` when the series is constant.
    pub r_squared: f64,
}

pub fn fit_line(xs: &[f64], ys: &[f64]) -> LineFit {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    if xs.is_empty() {
        return LineFit {
            slope: 0.0,
            intercept: 0.0,
            r_squared: 1.0,
        };
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - (slope * x + intercept)).powi(2))
        .sum();
    let r_squared = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        1.0
    };
    LineFit {
        slope,
        intercept,
        r_squared,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftRow {
    pub shift_px: i64,
    pub steer_class1: f32,
    pub steer_class2: f32,
    pub steer_all: f32,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftFits {
    pub class1: LineFit,
    pub class2: LineFit,
    pub all: LineFit,
}

/// Steering as a function of pixel shift for each pixel class, sorted by
/// shift, with a fitted line per series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftExperimentResult {
    pub rows: Vec<ShiftRow>,
    pub fits: ShiftFits,
    pub threshold: f32,
    pub dilation_radius: usize,
    pub class1_fraction: f32,
}

pub const CSV_HEADER: &str = "shift_px,steer_class1,steer_class2,steer_all";

/// Formats like C's `%g` with 6 significant digits.
pub fn format_sig6(v: f32) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let sci = format!("{:.5e}", v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{mantissa}e{sign}{:02}", exp.abs());
    }
    let decimals = (5 - exp).max(0) as usize;
    trim_zeros(&format!("{:.*}", decimals, v)).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

impl ShiftExperimentResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.shift_px,
                format_sig6(r.steer_class1),
                format_sig6(r.steer_class2),
                format_sig6(r.steer_all)
            ));
        }
        out
    }

    /// Slopes, intercepts and R² per series plus segmentation parameters.
    pub fn summary_json(&self) -> String {
        #[derive(Serialize)]
        struct Summary<'a> {
            fits: &'a ShiftFits,
            threshold: f32,
            dilation_radius: usize,
            class1_fraction: f32,
            shifts: usize,
        }
        serde_json::to_string_pretty(&Summary {
            fits: &self.fits,
            threshold: self.threshold,
            dilation_radius: self.dilation_radius,
            class1_fraction: self.class1_fraction,
            shifts: self.rows.len(),
        })
        .expect("summary serializes")
    }
}

/// Shift values `start, start+step, …` up to and including `end`.
pub fn shift_range(start: i64, end: i64, step: i64) -> Vec<i64> {
    assert!(step > 0, "step must be positive");
    (start..=end).step_by(step as usize).collect()
}

pub fn run_shift_experiment(
    cfg: &NetworkConfig,
    weights: &WeightSet,
    image_yuv: &Tensor,
    seg: &ClassSegmentation,
    shifts: &[i64],
) -> Result<ShiftExperimentResult, HarnessError> {
    let mut shifts = shifts.to_vec();
    shifts.sort_unstable();
    shifts.dedup();
    if shifts.binary_search(&0).is_err() {
        return Err(HarnessError::MissingZeroShift);
    }
    let modes = [PixelClass::Class1, PixelClass::Class2, PixelClass::All];
    let jobs: Vec<(i64, PixelClass)> = shifts
        .iter()
        .flat_map(|&dx| modes.iter().map(move |&m| (dx, m)))
        .collect();
    let steer: Vec<f32> = jobs
        .par_iter()
        .map(|&(dx, mode)| {
            let shifted = shift_class(image_yuv, seg, mode, dx)?;
            Ok(predict(cfg, weights, &shifted)?.inverse_turning_radius)
        })
        .collect::<Result<_, HarnessError>>()?;
    let rows: Vec<ShiftRow> = shifts
        .iter()
        .zip(steer.chunks_exact(3))
        .map(|(&dx, s)| ShiftRow {
            shift_px: dx,
            steer_class1: s[0],
            steer_class2: s[1],
            steer_all: s[2],
        })
        .collect();
    let xs: Vec<f64> = rows.iter().map(|r| r.shift_px as f64).collect();
    let series =
        |f: fn(&ShiftRow) -> f32| -> Vec<f64> { rows.iter().map(|r| f(r) as f64).collect() };
    let fits = ShiftFits {
        class1: fit_line(&xs, &series(|r| r.steer_class1)),
        class2: fit_line(&xs, &series(|r| r.steer_class2)),
        all: fit_line(&xs, &series(|r| r.steer_all)),
    };
    Ok(ShiftExperimentResult {
        rows,
        fits,
        threshold: seg.threshold,
        dilation_radius: seg.dilation_radius,
        class1_fraction: seg.class1_fraction(),
    })
}
