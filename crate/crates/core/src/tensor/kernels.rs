//! Raw numeric kernels shared by the tape ops: GEMM, im2col/col2im and the
//! convolution forward/backward passes built on top of them.

use super::{Result, TensorError};

/// Row-major GEMM: `c = alpha * op(a) * op(b) + beta * c`, with `op` an
/// optional transpose. `a` is `m x k` after `op`, `b` is `k x n` after `op`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    transpose_a: bool,
    b: &[f64],
    transpose_b: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert_eq!(a.len(), m * k, "gemm lhs size");
    assert_eq!(b.len(), k * n, "gemm rhs size");
    assert_eq!(c.len(), m * n, "gemm out size");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if transpose_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if transpose_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above guarantee every strided access stays inside
    // the three slices, and `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(
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

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Padding {
    /// No padding; the output shrinks by the effective kernel extent minus one.
    Valid,
    /// Zero padding chosen so the output keeps the input's spatial size.
    SameZero,
}

/// Output length along one axis, or `None` if the dilated kernel does not fit.
pub fn conv_output_extent(input: usize, kernel: usize, rate: usize, padding: Padding) -> Option<usize> {
    let effective = (kernel - 1) * rate + 1;
    match padding {
        Padding::Valid => input.checked_sub(effective - 1).filter(|&v| v > 0),
        Padding::SameZero => {
            // same-zero pads (effective - 1) in total, which always fits
            Some(input)
        }
    }
}

/// Everything needed to index one convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub rate: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeometry {
    pub fn new(input_shape: &[usize], filter_shape: &[usize], rate: usize, padding: Padding) -> Result<Self> {
        let (batch, in_channels, height, width) = match *input_shape {
            [c, h, w] => (1, c, h, w),
            [b, c, h, w] => (b, c, h, w),
            _ => {
                return Err(TensorError::InvalidArgument {
                    op: "conv2d",
                    reason: format!("input must be [C,H,W] or [B,C,H,W], got {input_shape:?}"),
                })
            }
        };
        let [out_channels, filter_in, kernel_h, kernel_w] = *filter_shape else {
            return Err(TensorError::InvalidArgument {
                op: "conv2d",
                reason: format!("filters must be [F_out,F_in,k,k], got {filter_shape:?}"),
            });
        };
        if filter_in != in_channels {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: input_shape.to_vec(),
                rhs: filter_shape.to_vec(),
            });
        }
        if rate == 0 {
            return Err(TensorError::InvalidArgument { op: "conv2d", reason: "atrous rate must be at least 1".into() });
        }
        let eff_h = (kernel_h - 1) * rate + 1;
        let eff_w = (kernel_w - 1) * rate + 1;
        let (pad_h, pad_w) = match padding {
            Padding::Valid => (0, 0),
            Padding::SameZero => (eff_h - 1, eff_w - 1),
        };
        if eff_h > height + pad_h || eff_w > width + pad_w {
            return Err(TensorError::InvalidArgument {
                op: "conv2d",
                reason: format!(
                    "effective kernel {eff_h}x{eff_w} exceeds padded input {}x{}",
                    height + pad_h,
                    width + pad_w
                ),
            });
        }
        Ok(ConvGeometry {
            batch,
            in_channels,
            out_channels,
            height,
            width,
            kernel_h,
            kernel_w,
            rate,
            pad_top: pad_h / 2,
            pad_left: pad_w / 2,
            out_height: height + pad_h - (eff_h - 1),
            out_width: width + pad_w - (eff_w - 1),
        })
    }

    pub(crate) fn col_rows(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    pub(crate) fn out_plane(&self) -> usize {
        self.out_height * self.out_width
    }

    pub(crate) fn in_sample(&self) -> usize {
        self.in_channels * self.height * self.width
    }

    pub(crate) fn out_sample(&self) -> usize {
        self.out_channels * self.out_plane()
    }
}

/// Lowers one sample `[C, H, W]` into a `[C*kh*kw, H'*W']` column matrix, with
/// kernel taps spaced `rate` apart.
pub(crate) fn im2col_dilated(g: &ConvGeometry, input: &[f64], col: &mut [f64]) {
    let plane = g.out_plane();
    let mut row = 0;
    for c in 0..g.in_channels {
        let channel = &input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let dst = &mut col[row * plane..(row + 1) * plane];
                let dy = (ki * g.rate) as isize - g.pad_top as isize;
                let dx = (kj * g.rate) as isize - g.pad_left as isize;
                fill_shifted(g, channel, dst, dy, dx);
                row += 1;
            }
        }
    }
}

/// Rate-one im2col with its own index arithmetic (taps at consecutive offsets).
pub(crate) fn im2col_standard(g: &ConvGeometry, input: &[f64], col: &mut [f64]) {
    let plane = g.out_plane();
    let mut row = 0;
    for c in 0..g.in_channels {
        let channel = &input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let dst = &mut col[row * plane..(row + 1) * plane];
                let dy = ki as isize - g.pad_top as isize;
                let dx = kj as isize - g.pad_left as isize;
                fill_shifted(g, channel, dst, dy, dx);
                row += 1;
            }
        }
    }
}

/// `dst[oy, ox] = channel[oy + dy, ox + dx]`, zero outside the input.
fn fill_shifted(g: &ConvGeometry, channel: &[f64], dst: &mut [f64], dy: isize, dx: isize) {
    let (h, w) = (g.height as isize, g.width as isize);
    let ow = g.out_width;
    // columns ox with 0 <= ox + dx < w
    let x_lo = (-dx).clamp(0, ow as isize) as usize;
    let x_hi = (w - dx).clamp(0, ow as isize) as usize;
    for oy in 0..g.out_height {
        let out_row = &mut dst[oy * ow..(oy + 1) * ow];
        let iy = oy as isize + dy;
        if iy < 0 || iy >= h || x_lo >= x_hi {
            out_row.fill(0.0);
            continue;
        }
        out_row[..x_lo].fill(0.0);
        out_row[x_hi..].fill(0.0);
        let src_start = (iy * w + x_lo as isize + dx) as usize;
        out_row[x_lo..x_hi].copy_from_slice(&channel[src_start..src_start + (x_hi - x_lo)]);
    }
}

/// Adjoint of [`im2col_dilated`]: scatter-adds a column matrix back into `[C, H, W]`.
pub(crate) fn col2im_dilated(g: &ConvGeometry, col: &[f64], grad_input: &mut [f64]) {
    let plane = g.out_plane();
    let (h, w) = (g.height as isize, g.width as isize);
    let ow = g.out_width;
    let mut row = 0;
    for c in 0..g.in_channels {
        let channel = &mut grad_input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let src = &col[row * plane..(row + 1) * plane];
                let dy = (ki * g.rate) as isize - g.pad_top as isize;
                let dx = (kj * g.rate) as isize - g.pad_left as isize;
                let x_lo = (-dx).clamp(0, ow as isize) as usize;
                let x_hi = (w - dx).clamp(0, ow as isize) as usize;
                if x_lo < x_hi {
                    for oy in 0..g.out_height {
                        let iy = oy as isize + dy;
                        if iy < 0 || iy >= h {
                            continue;
                        }
                        let dst_start = (iy * w + x_lo as isize + dx) as usize;
                        let dst = &mut channel[dst_start..dst_start + (x_hi - x_lo)];
                        let s = &src[oy * ow + x_lo..oy * ow + x_hi];
                        dst.iter_mut().zip(s).for_each(|(d, v)| *d += v);
                    }
                }
                row += 1;
            }
        }
    }
}

pub(crate) type Im2Col = fn(&ConvGeometry, &[f64], &mut [f64]);

/// Batched convolution forward: `out[b] = filters * im2col(input[b]) + bias`.
pub(crate) fn conv_forward(g: &ConvGeometry, input: &[f64], filters: &[f64], bias: &[f64], lower: Im2Col) -> Vec<f64> {
    let plane = g.out_plane();
    let rows = g.col_rows();
    let mut col = vec![0.0; rows * plane];
    let mut out = vec![0.0; g.batch * g.out_sample()];
    for b in 0..g.batch {
        lower(g, &input[b * g.in_sample()..(b + 1) * g.in_sample()], &mut col);
        let dst = &mut out[b * g.out_sample()..(b + 1) * g.out_sample()];
        for (co, chunk) in dst.chunks_mut(plane).enumerate() {
            chunk.fill(bias[co]);
        }
        gemm(g.out_channels, rows, plane, filters, false, &col, false, dst, 1.0);
    }
    out
}

pub(crate) struct ConvGrads {
    pub input: Option<Vec<f64>>,
    pub filters: Option<Vec<f64>>,
    pub bias: Option<Vec<f64>>,
}

/// Gradients of [`conv_forward`] (dilated lowering) given the upstream gradient.
pub(crate) fn conv_backward(
    g: &ConvGeometry,
    input: &[f64],
    filters: &[f64],
    grad_out: &[f64],
    want: [bool; 3],
) -> ConvGrads {
    let plane = g.out_plane();
    let rows = g.col_rows();
    let [want_input, want_filters, want_bias] = want;
    let mut grad_input = want_input.then(|| vec![0.0; input.len()]);
    let mut grad_filters = want_filters.then(|| vec![0.0; filters.len()]);
    let mut grad_bias = want_bias.then(|| vec![0.0; g.out_channels]);
    let mut col = vec![0.0; rows * plane];
    let mut dcol = vec![0.0; rows * plane];
    for b in 0..g.batch {
        let dy = &grad_out[b * g.out_sample()..(b + 1) * g.out_sample()];
        if let Some(gb) = grad_bias.as_mut() {
            for (co, chunk) in dy.chunks(plane).enumerate() {
                gb[co] += chunk.iter().sum::<f64>();
            }
        }
        if let Some(gf) = grad_filters.as_mut() {
            im2col_dilated(g, &input[b * g.in_sample()..(b + 1) * g.in_sample()], &mut col);
            // dW += dY [Cout, P] * col^T [P, rows]
            gemm(g.out_channels, plane, rows, dy, false, &col, true, gf, 1.0);
        }
        if let Some(gi) = grad_input.as_mut() {
            // dcol = W^T [rows, Cout] * dY [Cout, P]
            gemm(rows, g.out_channels, plane, filters, true, dy, false, &mut dcol, 0.0);
            col2im_dilated(g, &dcol, &mut gi[b * g.in_sample()..(b + 1) * g.in_sample()]);
        }
    }
    ConvGrads { input: grad_input, filters: grad_filters, bias: grad_bias }
}
