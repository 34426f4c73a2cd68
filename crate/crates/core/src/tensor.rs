//! Dense channel-major tensors and the numeric kernels used by the forward
//! pass and by mask construction.
//!
//! Every image, feature map and mask in the crate is a [`Tensor`]: a rank-3
//! array laid out as `channels × height × width`, row-major inside each
//! channel. All convolutions use valid (no) padding.

use serde::{Deserialize, Serialize};
use std::fmt;

/// Axis named in shape errors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Channels,
    Height,
    Width,
    Length,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Axis::Channels => "channels",
            Axis::Height => "height",
            Axis::Width => "width",
            Axis::Length => "length",
        };
        f.write_str(name)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ShapeError {
    #[error("{context}: {axis} mismatch (expected {expected}, got {actual})")]
    Mismatch {
        context: &'static str,
        axis: Axis,
        expected: usize,
        actual: usize,
    },
    #[error("{context}: {axis} must be at least 1")]
    ZeroDim { context: &'static str, axis: Axis },
    #[error("kernel {axis} {kernel} exceeds input {axis} {input}")]
    KernelExceedsInput {
        axis: Axis,
        kernel: usize,
        input: usize,
    },
    #[error(
        "deconvolution cannot reach target {axis} {target} from natural size {natural} with stride {stride}"
    )]
    UnreachableTarget {
        axis: Axis,
        natural: usize,
        target: usize,
        stride: usize,
    },
}

pub type Result<T> = std::result::Result<T, ShapeError>;

fn mismatch(context: &'static str, axis: Axis, expected: usize, actual: usize) -> ShapeError {
    ShapeError::Mismatch {
        context,
        axis,
        expected,
        actual,
    }
}

/// Rank-3 `f32` tensor in channel-major, row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        check_dims("tensor", channels, height, width)?;
        let expected = channels * height * width;
        if data.len() != expected {
            return Err(mismatch("tensor data", Axis::Length, expected, data.len()));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    /// # Panics
    /// If any dimension is zero.
    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        check_dims("tensor", channels, height, width).expect("tensor dimensions must be >= 1");
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, 0.0)
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut t = Self::zeros(channels, height, width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    t.data[(c * height + y) * width + x] = f(c, y, x);
                }
            }
        }
        t
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `(channels, height, width)`
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, value: f32) {
        self.data[(c * self.height + y) * self.width + x] = value;
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, factor: f32) -> Tensor {
        self.map(|v| v * factor)
    }

    pub fn min(&self) -> f32 {
        self.data.iter().copied().fold(f32::INFINITY, f32::min)
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Same data viewed with new dimensions of equal total size.
    pub fn reshape(self, channels: usize, height: usize, width: usize) -> Result<Tensor> {
        Tensor::new(channels, height, width, self.data)
    }
}

fn check_dims(context: &'static str, c: usize, h: usize, w: usize) -> Result<()> {
    for (axis, v) in [(Axis::Channels, c), (Axis::Height, h), (Axis::Width, w)] {
        if v == 0 {
            return Err(ShapeError::ZeroDim { context, axis });
        }
    }
    Ok(())
}

/// Kernel, stride and channel counts of one convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride_h: usize,
    pub stride_w: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvGeometry {
    pub fn square(kernel: usize, stride: usize, in_channels: usize, out_channels: usize) -> Self {
        Self {
            kernel_h: kernel,
            kernel_w: kernel,
            stride_h: stride,
            stride_w: stride,
            in_channels,
            out_channels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            (Axis::Height, self.kernel_h),
            (Axis::Width, self.kernel_w),
            (Axis::Height, self.stride_h),
            (Axis::Width, self.stride_w),
            (Axis::Channels, self.in_channels),
            (Axis::Channels, self.out_channels),
        ];
        for (axis, v) in fields {
            if v == 0 {
                return Err(ShapeError::ZeroDim {
                    context: "conv geometry",
                    axis,
                });
            }
        }
        Ok(())
    }

    /// Output spatial size of a valid convolution over `height × width`.
    pub fn output_size(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        self.validate()?;
        if self.kernel_h > height {
            return Err(ShapeError::KernelExceedsInput {
                axis: Axis::Height,
                kernel: self.kernel_h,
                input: height,
            });
        }
        if self.kernel_w > width {
            return Err(ShapeError::KernelExceedsInput {
                axis: Axis::Width,
                kernel: self.kernel_w,
                input: width,
            });
        }
        Ok((
            (height - self.kernel_h) / self.stride_h + 1,
            (width - self.kernel_w) / self.stride_w + 1,
        ))
    }

    /// Transposed-convolution output size before any output padding.
    pub fn natural_upscale_size(&self, height: usize, width: usize) -> (usize, usize) {
        (
            (height - 1) * self.stride_h + self.kernel_h,
            (width - 1) * self.stride_w + self.kernel_w,
        )
    }

    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    pub fn weight_len(&self) -> usize {
        self.out_channels * self.patch_len()
    }
}

/// Unfolds every receptive field of `input` into a column of a
/// `patch_len × (out_h·out_w)` row-major matrix.
fn im2col(input: &Tensor, g: &ConvGeometry, out_h: usize, out_w: usize) -> Vec<f32> {
    let n = out_h * out_w;
    let mut cols = vec![0.0f32; g.patch_len() * n];
    let (h, w) = (input.height, input.width);
    let mut row = 0;
    for c in 0..g.in_channels {
        let plane = &input.data[c * h * w..(c + 1) * h * w];
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let dst = &mut cols[row * n..(row + 1) * n];
                for oy in 0..out_h {
                    let src = &plane[(oy * g.stride_h + ky) * w + kx..];
                    let dst_row = &mut dst[oy * out_w..(oy + 1) * out_w];
                    if g.stride_w == 1 {
                        dst_row.copy_from_slice(&src[..out_w]);
                    } else {
                        for (ox, d) in dst_row.iter_mut().enumerate() {
                            *d = src[ox * g.stride_w];
                        }
                    }
                }
                row += 1;
            }
        }
    }
    cols
}

/// Scatter-adds a column matrix back onto an input-shaped gradient.
fn col2im(
    cols: &[f32],
    g: &ConvGeometry,
    h: usize,
    w: usize,
    out_h: usize,
    out_w: usize,
) -> Tensor {
    let n = out_h * out_w;
    let mut out = Tensor::zeros(g.in_channels, h, w);
    let mut row = 0;
    for c in 0..g.in_channels {
        let plane = &mut out.data[c * h * w..(c + 1) * h * w];
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let src = &cols[row * n..(row + 1) * n];
                for oy in 0..out_h {
                    let base = (oy * g.stride_h + ky) * w + kx;
                    for ox in 0..out_w {
                        plane[base + ox * g.stride_w] += src[oy * out_w + ox];
                    }
                }
                row += 1;
            }
        }
    }
    out
}

/// `c[m×n] (+)= a[m×k] · b[k×n]`, all row-major, with optional transposes
/// expressed through strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (isize, isize),
    b: &[f32],
    (rsb, csb): (isize, isize),
    c: &mut [f32],
    accumulate: bool,
) {
    debug_assert!(c.len() >= m * n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: slice lengths cover every index reachable through the given
    // dimensions and strides; callers pass contiguous row-major buffers.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn check_conv_operands(
    input: &Tensor,
    weights: &[f32],
    g: &ConvGeometry,
    bias: &[f32],
) -> Result<(usize, usize)> {
    g.validate()?;
    if input.channels != g.in_channels {
        return Err(mismatch(
            "conv2d input",
            Axis::Channels,
            g.in_channels,
            input.channels,
        ));
    }
    if weights.len() != g.weight_len() {
        return Err(mismatch(
            "conv2d weights",
            Axis::Length,
            g.weight_len(),
            weights.len(),
        ));
    }
    if bias.len() != g.out_channels {
        return Err(mismatch(
            "conv2d bias",
            Axis::Length,
            g.out_channels,
            bias.len(),
        ));
    }
    g.output_size(input.height, input.width)
}

/// Valid 2-D convolution (cross-correlation).
///
/// `weights` is laid out `[out_channel][in_channel][ky][kx]`.
pub fn conv2d(
    input: &Tensor,
    weights: &[f32],
    geometry: &ConvGeometry,
    bias: &[f32],
) -> Result<Tensor> {
    let (out_h, out_w) = check_conv_operands(input, weights, geometry, bias)?;
    let n = out_h * out_w;
    let cols = im2col(input, geometry, out_h, out_w);
    let k = geometry.patch_len();
    let mut out = Vec::with_capacity(geometry.out_channels * n);
    for &b in bias {
        out.extend(std::iter::repeat_n(b, n));
    }
    gemm(
        geometry.out_channels,
        k,
        n,
        weights,
        (k as isize, 1),
        &cols,
        (n as isize, 1),
        &mut out,
        true,
    );
    Tensor::new(geometry.out_channels, out_h, out_w, out)
}

/// Gradients of a valid convolution with respect to its parameters and,
/// optionally, its input.
pub struct ConvGradients {
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
    pub input: Option<Tensor>,
}

pub fn conv2d_backward(
    input: &Tensor,
    weights: &[f32],
    geometry: &ConvGeometry,
    grad_output: &Tensor,
    want_input_grad: bool,
) -> Result<ConvGradients> {
    let bias = vec![0.0; geometry.out_channels];
    let (out_h, out_w) = check_conv_operands(input, weights, geometry, &bias)?;
    if grad_output.dims() != (geometry.out_channels, out_h, out_w) {
        return Err(mismatch(
            "conv2d output gradient",
            Axis::Length,
            geometry.out_channels * out_h * out_w,
            grad_output.len(),
        ));
    }
    let n = out_h * out_w;
    let k = geometry.patch_len();
    let m = geometry.out_channels;
    let cols = im2col(input, geometry, out_h, out_w);

    // dW = dY · colsᵀ
    let mut grad_w = vec![0.0f32; m * k];
    gemm(
        m,
        n,
        k,
        &grad_output.data,
        (n as isize, 1),
        &cols,
        (1, n as isize),
        &mut grad_w,
        false,
    );
    let grad_b = grad_output
        .data
        .chunks_exact(n)
        .map(|plane| plane.iter().sum())
        .collect();

    let grad_in = if want_input_grad {
        // dcols = Wᵀ · dY
        let mut grad_cols = vec![0.0f32; k * n];
        gemm(
            k,
            m,
            n,
            weights,
            (1, k as isize),
            &grad_output.data,
            (n as isize, 1),
            &mut grad_cols,
            false,
        );
        Some(col2im(
            &grad_cols,
            geometry,
            input.height,
            input.width,
            out_h,
            out_w,
        ))
    } else {
        None
    };
    Ok(ConvGradients {
        weights: grad_w,
        bias: grad_b,
        input: grad_in,
    })
}

/// Affine map `y = W·x + b` with `W` stored row-major, one row per output.
pub fn fully_connected(input: &[f32], weights: &[f32], bias: &[f32]) -> Result<Vec<f32>> {
    let rows = bias.len();
    if rows == 0 {
        return Err(ShapeError::ZeroDim {
            context: "fully connected bias",
            axis: Axis::Length,
        });
    }
    if weights.len() != rows * input.len() {
        return Err(mismatch(
            "fully connected weights",
            Axis::Length,
            rows * input.len(),
            weights.len(),
        ));
    }
    let cols = input.len();
    if cols == 0 {
        return Ok(bias.to_vec());
    }
    Ok(weights
        .chunks_exact(cols)
        .take(rows)
        .zip(bias)
        .map(|(row, &b)| {
            let mut acc = 0.0f32;
            for (w, x) in row.iter().zip(input) {
                acc += w * x;
            }
            acc + b
        })
        .collect())
}

/// Per-pixel mean over channels; the result has one channel.
pub fn channel_mean(t: &Tensor) -> Tensor {
    let n = t.height * t.width;
    let mut sum = vec![0.0f32; n];
    for plane in t.data.chunks_exact(n) {
        for (s, v) in sum.iter_mut().zip(plane) {
            *s += v;
        }
    }
    let count = t.channels as f32;
    for s in &mut sum {
        *s /= count;
    }
    Tensor {
        channels: 1,
        height: t.height,
        width: t.width,
        data: sum,
    }
}

/// Transposed convolution of a one-channel map with an all-ones kernel and
/// zero bias.
///
/// Each input value is added over the footprint its forward convolution
/// window covered. When `target` is larger than the natural output size
/// `(h-1)·stride + kernel`, the extra bottom rows / right columns are zero.
pub fn deconv_upscale(
    map: &Tensor,
    geometry: &ConvGeometry,
    target_h: usize,
    target_w: usize,
) -> Result<Tensor> {
    if map.channels != 1 {
        return Err(mismatch(
            "deconv_upscale map",
            Axis::Channels,
            1,
            map.channels,
        ));
    }
    geometry.validate()?;
    let (nat_h, nat_w) = geometry.natural_upscale_size(map.height, map.width);
    for (axis, natural, target, stride) in [
        (Axis::Height, nat_h, target_h, geometry.stride_h),
        (Axis::Width, nat_w, target_w, geometry.stride_w),
    ] {
        if target < natural || target - natural >= stride {
            return Err(ShapeError::UnreachableTarget {
                axis,
                natural,
                target,
                stride,
            });
        }
    }
    let mut out = Tensor::zeros(1, target_h, target_w);
    for i in 0..map.height {
        for j in 0..map.width {
            let v = map.data[i * map.width + j];
            for ky in 0..geometry.kernel_h {
                let row = (i * geometry.stride_h + ky) * target_w + j * geometry.stride_w;
                for o in &mut out.data[row..row + geometry.kernel_w] {
                    *o += v;
                }
            }
        }
    }
    Ok(out)
}

pub fn elementwise_mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let checks = [
        (Axis::Channels, a.channels, b.channels),
        (Axis::Height, a.height, b.height),
        (Axis::Width, a.width, b.width),
    ];
    for (axis, x, y) in checks {
        if x != y {
            return Err(mismatch("elementwise_mul", axis, x, y));
        }
    }
    Ok(Tensor {
        channels: a.channels,
        height: a.height,
        width: a.width,
        data: a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect(),
    })
}

/// Min-max rescale to `[0, 1]`. A constant tensor maps to all zeros.
pub fn normalize_01(t: &Tensor) -> Tensor {
    let (lo, hi) = (t.min(), t.max());
    let range = hi - lo;
    if range.is_nan() || range <= 0.0 {
        return t.map(|_| 0.0);
    }
    t.map(|v| (v - lo) / range)
}

pub fn relu(t: &Tensor) -> Tensor {
    t.map(|v| v.max(0.0))
}
