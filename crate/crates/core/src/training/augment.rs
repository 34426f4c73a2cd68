//! Viewpoint augmentation: warp a frame as if the camera had moved sideways
//! and adjust the label to steer back toward the lane center.

use super::scene::{Camera, LabeledFrame};
use crate::tensor::Tensor;

#[derive(Debug, thiserror::Error)]
#[error("lateral shift {shift} m is outside ±{range} m")]
pub struct AugmentError {
    pub shift: f32,
    pub range: f32,
}

/// Label correction for a camera displaced `lateral_shift` meters to the
/// right: `-gain × shift`, so a rightward displacement steers left.
pub fn steering_correction(lateral_shift: f32, gain: f32) -> f32 {
    -gain * lateral_shift
}

/// Displaces the camera by `lateral_shift` meters (positive = right).
///
/// Ground rows are resampled with linear interpolation and edge
/// replication; rows at or above the horizon are left alone. Pixel values
/// are rounded so the result stays representable as an 8-bit image.
pub fn augment(
    frame: &LabeledFrame,
    lateral_shift: f32,
    shift_range: f32,
    gain: f32,
) -> Result<LabeledFrame, AugmentError> {
    if lateral_shift.is_nan() || shift_range.is_nan() || lateral_shift.abs() > shift_range {
        return Err(AugmentError {
            shift: lateral_shift,
            range: shift_range,
        });
    }
    if lateral_shift == 0.0 {
        return Ok(frame.clone());
    }
    let rgb = &frame.image_rgb;
    let cam = Camera::for_size(rgb.width(), rgb.height());
    let warped = warp_ground(rgb, &cam, lateral_shift);
    Ok(LabeledFrame::from_rgb(
        warped,
        frame.steering + steering_correction(lateral_shift, gain),
    ))
}

fn warp_ground(img: &Tensor, cam: &Camera, meters: f32) -> Tensor {
    let (c, h, w) = img.dims();
    let mut out = img.clone();
    let src = img.data();
    let dst = out.data_mut();
    for v in 0..h {
        let du = cam.ground_shift_px(v, meters);
        if du == 0.0 {
            continue;
        }
        for u in 0..w {
            // content moves opposite to the camera
            let x = (u as f32 + du).clamp(0.0, (w - 1) as f32);
            let x0 = x.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let t = x - x0 as f32;
            for ch in 0..c {
                let row = ch * h * w + v * w;
                let val = src[row + x0] * (1.0 - t) + src[row + x1] * t;
                dst[row + u] = val.round();
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::scene::{render_scene, RoadStyle, SceneParams, K_HEADING, K_OFFSET};

    const RANGE: f32 = 0.6;

    fn frame() -> LabeledFrame {
        let p = SceneParams {
            lane_offset: 0.2,
            heading: -0.01,
            curvature: 0.002,
            style: RoadStyle::LaneMarked,
            seed: 8,
        };
        render_scene(&p, 200, 66)
    }

    #[test]
    fn zero_shift_is_identity() {
        let f = frame();
        assert_eq!(augment(&f, 0.0, RANGE, K_OFFSET).unwrap(), f);
    }

    #[test]
    fn opposite_shifts_give_opposite_corrections() {
        let f = frame();
        let a = augment(&f, 0.4, RANGE, K_OFFSET).unwrap().steering - f.steering;
        let b = augment(&f, -0.4, RANGE, K_OFFSET).unwrap().steering - f.steering;
        assert!(a < 0.0, "shifting right corrects to the left");
        assert_eq!(a, -b);
    }

    #[test]
    fn out_of_range_is_rejected() {
        assert!(augment(&frame(), 0.7, RANGE, K_OFFSET).is_err());
        assert!(augment(&frame(), f32::NAN, RANGE, K_OFFSET).is_err());
    }

    /// Luma averaged over 9-pixel horizontal windows, which suppresses the
    /// per-pixel texture noise while keeping edges.
    fn smoothed_luma(f: &LabeledFrame, v: usize, u: usize) -> f32 {
        (u - 4..=u + 4)
            .map(|x| f.image_yuv.get(0, v, x))
            .sum::<f32>()
            / 9.0
    }

    #[test]
    fn warp_approximates_rerender_on_ground_rows() {
        for style in [RoadStyle::GrassEdge, RoadStyle::LaneMarked] {
            let base = SceneParams::straight(style, 2);
            let moved = SceneParams {
                lane_offset: 0.3,
                ..base
            };
            let base_img = render_scene(&base, 200, 66);
            let warped = augment(&base_img, 0.3, RANGE, K_OFFSET).unwrap();
            let truth = render_scene(&moved, 200, 66);
            let (mut err, mut unwarped_err) = (0.0, 0.0);
            for v in 30..66 {
                for u in 20..180 {
                    let t = smoothed_luma(&truth, v, u);
                    err += (smoothed_luma(&warped, v, u) - t).abs();
                    unwarped_err += (smoothed_luma(&base_img, v, u) - t).abs();
                }
            }
            assert!(
                err < 0.5 * unwarped_err,
                "{style:?}: warp error {err} vs unwarped {unwarped_err}"
            );
            assert_eq!(warped.steering, moved.steering());
        }
    }

    /// Kinematic bicycle model driven along a lane with curvature `kappa`,
    /// steering from `command(offset, heading)`. Returns the final offset.
    fn simulate(
        offset: f32,
        heading: f32,
        kappa: f32,
        distance: f32,
        command: impl Fn(f32, f32) -> f32,
    ) -> (f32, f32) {
        let ds = 0.1f32;
        let (mut o, mut psi) = (offset, heading);
        for _ in 0..(distance / ds) as usize {
            let steer = command(o, psi);
            o += psi * ds;
            psi += (steer - kappa) * ds;
        }
        (o, psi)
    }

    #[test]
    fn corrected_label_returns_vehicle_to_center() {
        // closed loop with the controller that produced the labels
        for shift in [-0.6f32, -0.3, 0.3, 0.6] {
            let label = steering_correction(shift, K_OFFSET);
            assert_eq!(label, -K_OFFSET * shift);
            let (o, psi) = simulate(shift, 0.0, 0.0, 80.0, |o, psi| {
                -K_OFFSET * o - K_HEADING * psi
            });
            assert!(o.abs() < 0.1 * shift.abs(), "shift {shift}: offset {o}");
            assert!(psi.abs() < 0.02);

            // holding the augmented label fixed for a short horizon already
            // turns the vehicle back toward the center
            let (o_short, _) = simulate(shift, 0.0, 0.0, 10.0, |_, _| label);
            assert!(o_short.abs() < shift.abs(), "shift {shift}: {o_short}");

            // without correction the vehicle does not recover
            let (o_none, _) = simulate(shift, 0.0, 0.0, 10.0, |_, _| 0.0);
            assert_eq!(o_none, shift);
        }
    }
}
