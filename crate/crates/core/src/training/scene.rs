//! Synthetic road scenes seen from a forward-facing camera, each paired with
//! the steering command a simple lane-keeping controller would issue.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

pub const LANE_WIDTH: f32 = 3.6;
/// Proportional gain on lateral offset, in 1/m².
pub const K_OFFSET: f32 = 0.02;
/// Proportional gain on heading error, in 1/m per radian.
pub const K_HEADING: f32 = 0.2;

pub const OFFSET_RANGE: f32 = 0.8;
pub const HEADING_RANGE: f32 = 0.06;
pub const CURVATURE_RANGE: f32 = 0.01;

const MAX_DEPTH: f32 = 150.0;
const SUPERSAMPLE: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoadStyle {
    /// Painted edge lines, one solid and one dashed.
    LaneMarked,
    /// No paint; a row of parked cars along one side of a wide street.
    UnmarkedWithParkedCars,
    /// Asphalt ending in grass.
    GrassEdge,
}

impl RoadStyle {
    pub const ALL: [RoadStyle; 3] = [
        RoadStyle::LaneMarked,
        RoadStyle::UnmarkedWithParkedCars,
        RoadStyle::GrassEdge,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RoadStyle::LaneMarked => "lane_marked",
            RoadStyle::UnmarkedWithParkedCars => "unmarked_with_parked_cars",
            RoadStyle::GrassEdge => "grass_edge",
        }
    }
}

impl std::str::FromStr for RoadStyle {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown road style {s:?}"))
    }
}

/// Vehicle pose relative to the lane, plus the look of the road.
///
/// Positive offset and heading mean right of center and pointing right;
/// positive curvature bends the road to the right.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub lane_offset: f32,
    pub heading: f32,
    pub curvature: f32,
    pub style: RoadStyle,
    /// Drives texture noise, car placement and which side is dashed.
    pub seed: u64,
}

impl SceneParams {
    pub fn straight(style: RoadStyle, seed: u64) -> Self {
        Self {
            lane_offset: 0.0,
            heading: 0.0,
            curvature: 0.0,
            style,
            seed,
        }
    }

    /// Pose drawn uniformly from the default ranges, which are symmetric
    /// about zero.
    pub fn sample(rng: &mut impl Rng, style: RoadStyle) -> Self {
        Self {
            lane_offset: rng.gen_range(-OFFSET_RANGE..=OFFSET_RANGE),
            heading: rng.gen_range(-HEADING_RANGE..=HEADING_RANGE),
            curvature: rng.gen_range(-CURVATURE_RANGE..=CURVATURE_RANGE),
            style,
            seed: rng.gen(),
        }
    }

    /// Same scene reflected left to right.
    pub fn mirrored(&self) -> Self {
        Self {
            lane_offset: -self.lane_offset,
            heading: -self.heading,
            curvature: -self.curvature,
            ..*self
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.lane_offset, self.heading, self.curvature]
            .iter()
            .all(|v| v.is_finite())
            && self.lane_offset.abs() <= LANE_WIDTH / 2.0
    }

    /// Controller output: follow the curvature and pull back toward the
    /// lane center.
    pub fn steering(&self) -> f32 {
        self.curvature - K_OFFSET * self.lane_offset - K_HEADING * self.heading
    }
}

/// Pinhole camera looking level down the road.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub focal_px: f32,
    pub horizon_row: f32,
    pub height_m: f32,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn for_size(width: usize, height: usize) -> Self {
        Self {
            focal_px: width as f32 / 2.0,
            horizon_row: 0.15 * height as f32,
            height_m: 1.5,
            width,
            height,
        }
    }

    /// Lateral pixel displacement of the ground at row `v` (pixel center)
    /// when the camera moves sideways by `meters`.
    pub fn ground_shift_px(&self, v: usize, meters: f32) -> f32 {
        let below = v as f32 + 0.5 - self.horizon_row;
        if below <= 0.0 {
            0.0
        } else {
            meters * below / self.height_m
        }
    }
}

/// An RGB frame, its YCbCr form as fed to the network, and the label.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledFrame {
    /// Integer values in `0..=255`.
    pub image_rgb: Tensor,
    pub image_yuv: Tensor,
    /// Inverse turning radius in 1/m, positive to the right.
    pub steering: f32,
}

impl LabeledFrame {
    pub fn from_rgb(image_rgb: Tensor, steering: f32) -> Self {
        let image_yuv = rgb_to_yuv(&image_rgb);
        Self {
            image_rgb,
            image_yuv,
            steering,
        }
    }

    /// Left-right reflection with the label negated.
    pub fn mirrored(&self) -> Self {
        Self::from_rgb(flip_horizontal(&self.image_rgb), -self.steering)
    }
}

/// Full-range BT.601 (JPEG) YCbCr, clamped to `[0, 255]`.
pub fn rgb_to_yuv(rgb: &Tensor) -> Tensor {
    assert_eq!(rgb.channels(), 3, "expected an RGB tensor");
    let (r, g, b) = (rgb.plane(0), rgb.plane(1), rgb.plane(2));
    let n = r.len();
    let mut out = vec![0.0f32; 3 * n];
    for i in 0..n {
        let (r, g, b) = (r[i], g[i], b[i]);
        out[i] = 0.299 * r + 0.587 * g + 0.114 * b;
        out[n + i] = 128.0 - 0.168_736 * r - 0.331_264 * g + 0.5 * b;
        out[2 * n + i] = 128.0 + 0.5 * r - 0.418_688 * g - 0.081_312 * b;
    }
    for v in &mut out {
        *v = v.clamp(0.0, 255.0);
    }
    Tensor::new(3, rgb.height(), rgb.width(), out).expect("same dims")
}

pub fn flip_horizontal(t: &Tensor) -> Tensor {
    let w = t.width();
    Tensor::from_fn(t.channels(), t.height(), w, |c, y, x| {
        t.get(c, y, w - 1 - x)
    })
}

type Rgb = [f32; 3];

const ASPHALT: Rgb = [105.0, 105.0, 110.0];
const PAINT: Rgb = [236.0, 234.0, 222.0];
const GRASS: Rgb = [52.0, 96.0, 38.0];
const SIDEWALK: Rgb = [152.0, 150.0, 144.0];
const SKY_TOP: Rgb = [120.0, 160.0, 220.0];
const SKY_HORIZON: Rgb = [200.0, 212.0, 228.0];
const WINDOW: Rgb = [30.0, 34.0, 40.0];
const CAR_COLORS: [Rgb; 5] = [
    [170.0, 30.0, 30.0],
    [30.0, 60.0, 150.0],
    [210.0, 210.0, 210.0],
    [40.0, 40.0, 40.0],
    [190.0, 160.0, 40.0],
];

/// Rear face of a parked car, in lane coordinates.
struct Car {
    depth: f32,
    center: f32,
    color: Rgb,
}

const CAR_WIDTH: f32 = 1.8;
const CAR_HEIGHT: f32 = 1.4;
const CAR_LENGTH: f32 = 4.5;

/// Color of the rear face of `car` if the ray hits it.
fn car_hit(
    car: &Car,
    cam: &Camera,
    rx: f32,
    ry: f32,
    lateral: &impl Fn(f32, f32) -> f32,
) -> Option<Rgb> {
    let depth = car.depth;
    let elevation = cam.height_m - ry * depth;
    if !(0.0..=CAR_HEIGHT).contains(&elevation) {
        return None;
    }
    let across = (lateral(depth, rx * depth) - car.center).abs();
    if across > CAR_WIDTH / 2.0 {
        return None;
    }
    let in_window = (0.85..1.25).contains(&elevation) && across < 0.7;
    Some(if in_window { WINDOW } else { car.color })
}

struct Layout {
    style: RoadStyle,
    /// `+1` puts the dashed line (or the cars) on the right.
    side: f32,
    cars: Vec<Car>,
}

impl Layout {
    fn new(p: &SceneParams, rng: &mut ChaCha8Rng) -> Self {
        let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let mut cars = Vec::new();
        if p.style == RoadStyle::UnmarkedWithParkedCars {
            let mut depth = rng.gen_range(0.0..6.0);
            while depth < 70.0 {
                cars.push(Car {
                    depth,
                    center: side * (LANE_WIDTH / 2.0 + 1.5 + rng.gen_range(-0.15..0.15)),
                    color: CAR_COLORS[rng.gen_range(0..CAR_COLORS.len())],
                });
                depth += CAR_LENGTH + rng.gen_range(1.0..4.0);
            }
        }
        Self {
            style: p.style,
            side,
            cars,
        }
    }

    /// Surface color at lateral distance `d` from the lane center and
    /// distance `z` along the road.
    fn ground(&self, d: f32, z: f32) -> Rgb {
        let half = LANE_WIDTH / 2.0;
        match self.style {
            RoadStyle::LaneMarked => {
                let on_line = (d.abs() - half).abs() < 0.075;
                let dashed = d * self.side > 0.0;
                if on_line && (!dashed || z.rem_euclid(6.0) < 3.0) {
                    PAINT
                } else if d.abs() < half + 0.6 {
                    ASPHALT
                } else {
                    GRASS
                }
            }
            RoadStyle::UnmarkedWithParkedCars => {
                if d.abs() < half + 2.5 {
                    ASPHALT
                } else {
                    SIDEWALK
                }
            }
            RoadStyle::GrassEdge => {
                if d.abs() < half + 0.3 {
                    ASPHALT
                } else {
                    GRASS
                }
            }
        }
    }
}

fn mix(a: Rgb, b: Rgb, t: f32) -> Rgb {
    [0, 1, 2].map(|i| a[i] + (b[i] - a[i]) * t)
}

/// Renders a scene at `width × height` with 4×4 supersampling and mild
/// per-pixel texture noise. Deterministic in `p`.
pub fn render_scene(p: &SceneParams, width: usize, height: usize) -> LabeledFrame {
    assert!(width > 0 && height > 0, "image dims must be positive");
    assert!(p.is_valid(), "invalid scene parameters {p:?}");
    let cam = Camera::for_size(width, height);
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let layout = Layout::new(p, &mut rng);
    let brightness = rng.gen_range(0.85f32..1.15);

    let lateral = |z: f32, x_cam: f32| -> f32 {
        // lane-frame lateral position minus the lane center at depth z
        x_cam + p.lane_offset + p.heading * z - 0.5 * p.curvature * z * z
    };

    let n = width * height;
    let mut data = vec![0.0f32; 3 * n];
    let inv = 1.0 / SUPERSAMPLE as f32;
    for v in 0..height {
        for u in 0..width {
            let mut acc = [0.0f32; 3];
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let px = u as f32 + (sx as f32 + 0.5) * inv;
                    let py = v as f32 + (sy as f32 + 0.5) * inv;
                    let rx = (px - width as f32 / 2.0) / cam.focal_px;
                    let ry = (py - cam.horizon_row) / cam.focal_px;
                    let c = shade(&layout, &cam, rx, ry, py, &lateral);
                    for k in 0..3 {
                        acc[k] += c[k];
                    }
                }
            }
            let grain = rng.gen_range(-6.0f32..6.0);
            for k in 0..3 {
                let s = acc[k] / (SUPERSAMPLE * SUPERSAMPLE) as f32;
                data[k * n + v * width + u] = (s * brightness + grain).round().clamp(0.0, 255.0);
            }
        }
    }
    let rgb = Tensor::new(3, height, width, data).expect("dims match");
    LabeledFrame::from_rgb(rgb, p.steering())
}

fn shade(
    layout: &Layout,
    cam: &Camera,
    rx: f32,
    ry: f32,
    py: f32,
    lateral: &impl Fn(f32, f32) -> f32,
) -> Rgb {
    let ground_depth = if ry > 0.0 {
        cam.height_m / ry
    } else {
        f32::INFINITY
    };
    for car in &layout.cars {
        if car.depth >= ground_depth {
            break;
        }
        if let Some(c) = car_hit(car, cam, rx, ry, lateral) {
            return c;
        }
        // inner side face, facing the lane
        let inner = car.center - car.center.signum() * CAR_WIDTH / 2.0;
        let gap = |z: f32| lateral(z, rx * z) - inner;
        let (mut near, mut far) = (car.depth, (car.depth + CAR_LENGTH).min(ground_depth));
        if near < far && gap(near).signum() != gap(far).signum() {
            for _ in 0..20 {
                let mid = 0.5 * (near + far);
                if gap(mid).signum() == gap(near).signum() {
                    near = mid;
                } else {
                    far = mid;
                }
            }
            let z = 0.5 * (near + far);
            if (0.0..=CAR_HEIGHT).contains(&(cam.height_m - ry * z)) {
                return car.color.map(|v| v * 0.7);
            }
        }
    }
    if ground_depth.is_finite() && ground_depth < MAX_DEPTH {
        let d = lateral(ground_depth, rx * ground_depth);
        let haze = (ground_depth / MAX_DEPTH).powi(2);
        return mix(layout.ground(d, ground_depth), SKY_HORIZON, haze);
    }
    if ry > 0.0 {
        return SKY_HORIZON;
    }
    let t = (py / cam.horizon_row.max(1.0)).clamp(0.0, 1.0);
    mix(SKY_TOP, SKY_HORIZON, t)
}

/// How the road style of each generated scene is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StyleChoice {
    Fixed(RoadStyle),
    /// Cycle through all styles in order.
    Mixed,
}

impl std::str::FromStr for StyleChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "mixed" {
            Ok(StyleChoice::Mixed)
        } else {
            s.parse().map(StyleChoice::Fixed)
        }
    }
}

/// Scene parameters for `count` scenes, drawn from one seeded stream.
pub fn sample_scenes(count: usize, style: StyleChoice, seed: u64) -> Vec<SceneParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let st = match style {
                StyleChoice::Fixed(s) => s,
                StyleChoice::Mixed => RoadStyle::ALL[i % RoadStyle::ALL.len()],
            };
            SceneParams::sample(&mut rng, st)
        })
        .collect()
}

/// Renders scenes in parallel; the output order follows `scenes`.
pub fn render_all(scenes: &[SceneParams], width: usize, height: usize) -> Vec<LabeledFrame> {
    scenes
        .par_iter()
        .map(|p| render_scene(p, width, height))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const W: usize = 200;
    const H: usize = 66;

    #[test]
    fn straight_centered_road_has_zero_steering() {
        for style in RoadStyle::ALL {
            assert_eq!(
                render_scene(&SceneParams::straight(style, 3), W, H).steering,
                0.0
            );
        }
    }

    #[test]
    fn mirrored_scene_negates_steering() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let p = SceneParams::sample(&mut rng, RoadStyle::GrassEdge);
            assert_eq!(p.mirrored().steering(), -p.steering());
        }
    }

    #[test]
    fn sign_convention() {
        let mut p = SceneParams::straight(RoadStyle::LaneMarked, 0);
        p.lane_offset = 0.5;
        assert!(p.steering() < 0.0, "right of center steers left");
        p = SceneParams::straight(RoadStyle::LaneMarked, 0);
        p.curvature = 0.005;
        assert!(p.steering() > 0.0, "right bend steers right");
    }

    #[test]
    fn rendering_is_deterministic() {
        let p = SceneParams::sample(
            &mut ChaCha8Rng::seed_from_u64(11),
            RoadStyle::UnmarkedWithParkedCars,
        );
        let a = render_scene(&p, W, H);
        let b = render_scene(&p, W, H);
        assert_eq!(a, b);
        assert!(a
            .image_rgb
            .data()
            .iter()
            .all(|v| v.fract() == 0.0 && (0.0..=255.0).contains(v)));
        assert_eq!(a.image_yuv.dims(), (3, H, W));
    }

    fn brightest_row_value(frame: &LabeledFrame, row: usize) -> f32 {
        let y = frame.image_yuv.plane(0);
        y[row * W..(row + 1) * W]
            .iter()
            .cloned()
            .fold(0.0, f32::max)
    }

    #[test]
    fn lane_lines_appear_where_projected() {
        // centered on a straight road the solid line at 1.8 m crosses the
        // bottom row at u = 100 ± 1.8 × (65.5 − 9.9) / 1.5 ≈ 100 ± 67
        let p = SceneParams::straight(RoadStyle::LaneMarked, 1);
        let f = render_scene(&p, W, H);
        let cam = Camera::for_size(W, H);
        let v = H - 1;
        let px = cam.ground_shift_px(v, LANE_WIDTH / 2.0);
        let luma = f.image_yuv.plane(0);
        for u in [
            (W as f32 / 2.0 - px) as usize,
            (W as f32 / 2.0 + px) as usize,
        ] {
            let around = (u - 1..=u + 1).map(|x| luma[v * W + x]).fold(0.0, f32::max);
            let road = luma[v * W + W / 2];
            assert!(
                around > road + 60.0,
                "line at u={u}: {around} vs road {road}"
            );
        }
        assert!(brightest_row_value(&f, v) > 180.0);
    }

    #[test]
    fn grass_edge_has_no_paint() {
        let f = render_scene(&SceneParams::straight(RoadStyle::GrassEdge, 1), W, H);
        assert!(brightest_row_value(&f, H - 1) < 140.0);
    }

    #[test]
    fn offset_moves_the_scene() {
        let base = SceneParams::straight(RoadStyle::GrassEdge, 9);
        let moved = SceneParams {
            lane_offset: 0.5,
            ..base
        };
        assert_ne!(
            render_scene(&base, W, H).image_rgb,
            render_scene(&moved, W, H).image_rgb
        );
    }

    #[test]
    fn parked_cars_are_drawn() {
        let f = render_scene(
            &SceneParams::straight(RoadStyle::UnmarkedWithParkedCars, 4),
            W,
            H,
        );
        let g = render_scene(&SceneParams::straight(RoadStyle::GrassEdge, 4), W, H);
        let rows_above_horizon_changed = (12..25).any(|v| {
            (0..W).any(|u| (f.image_rgb.get(0, v, u) - g.image_rgb.get(0, v, u)).abs() > 40.0)
        });
        assert!(rows_above_horizon_changed);
    }

    #[test]
    fn yuv_of_gray_and_extremes() {
        let t = Tensor::new(3, 1, 2, vec![128.0, 255.0, 128.0, 255.0, 128.0, 255.0]).unwrap();
        let y = rgb_to_yuv(&t);
        for (got, want) in y
            .data()
            .iter()
            .zip([128.0, 255.0, 128.0, 128.0, 128.0, 128.0])
        {
            assert!((got - want).abs() < 1e-3, "{got} vs {want}");
        }
        let blue = Tensor::new(3, 1, 1, vec![0.0, 0.0, 255.0]).unwrap();
        assert_eq!(rgb_to_yuv(&blue).get(1, 0, 0), 255.0);
    }

    #[test]
    fn mixed_styles_cycle() {
        let s = sample_scenes(6, StyleChoice::Mixed, 1);
        assert_eq!(s[0].style, RoadStyle::LaneMarked);
        assert_eq!(s[4].style, RoadStyle::UnmarkedWithParkedCars);
        assert_eq!(sample_scenes(6, StyleChoice::Mixed, 1), s);
        assert_eq!(
            "grass_edge".parse::<StyleChoice>().unwrap(),
            StyleChoice::Fixed(RoadStyle::GrassEdge)
        );
        assert!("snow".parse::<StyleChoice>().is_err());
    }
}
