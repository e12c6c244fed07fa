//! 2-D convolution via im2col + GEMM, with the matching backward pass.

use super::{Arr, BackOp, Tape, Var};
use ndarray::{Array2, IxDyn};

/// Output spatial size of a convolution along one axis.
pub fn conv_out_size(len: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (len + 2 * pad - kernel) / stride + 1
}

/// Gather `[Cin*kh*kw, Ho*Wo]` patches of one sample (zero padding).
fn im2col(
    x: &[f64],
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Array2<f64> {
    let mut col = Array2::<f64>::zeros((c_in * kh * kw, ho * wo));
    let cs = col.as_slice_mut().unwrap();
    for ci in 0..c_in {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((ci * kh + ky) * kw + kx) * ho * wo;
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let ibase = iy as usize * w;
                    let obase = row + oy * wo;
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        cs[obase + ox] = plane[ibase + ix as usize];
                    }
                }
            }
        }
    }
    col
}

/// Scatter-add the column gradient back onto one input sample.
#[allow(clippy::too_many_arguments)]
fn col2im_add(
    dcol: &Array2<f64>,
    dx: &mut [f64],
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) {
    let cs = dcol.as_slice().unwrap();
    for ci in 0..c_in {
        let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((ci * kh + ky) * kw + kx) * ho * wo;
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let ibase = iy as usize * w;
                    let obase = row + oy * wo;
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        plane[ibase + ix as usize] += cs[obase + ox];
                    }
                }
            }
        }
    }
}

impl Tape {
    /// Convolve `[N, Cin, H, W]` with `[Cout, Cin, kh, kw]` (zero padding).
    pub fn conv2d(&mut self, x: Var, weight: Var, stride: usize, pad: usize) -> Var {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(weight).shape().to_vec();
        assert_eq!(xs.len(), 4, "conv2d expects NCHW input");
        assert_eq!(ws.len(), 4, "conv2d expects OIKK weight");
        assert_eq!(xs[1], ws[1], "conv2d: channel mismatch");
        let (n, c_in, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (c_out, kh, kw) = (ws[0], ws[2], ws[3]);
        let ho = conv_out_size(h, kh, stride, pad);
        let wo = conv_out_size(w, kw, stride, pad);

        let w2 = self
            .value(weight)
            .to_owned()
            .into_shape_with_order((c_out, c_in * kh * kw))
            .unwrap();
        let xarr = self.value_std(x);
        let xsl = xarr.as_slice().expect("conv2d: non-contiguous input");
        let mut out = Arr::zeros(IxDyn(&[n, c_out, ho, wo]));
        {
            let os = out.as_slice_mut().unwrap();
            for ni in 0..n {
                let col = im2col(
                    &xsl[ni * c_in * h * w..(ni + 1) * c_in * h * w],
                    c_in,
                    h,
                    w,
                    kh,
                    kw,
                    stride,
                    pad,
                    ho,
                    wo,
                );
                let y = w2.dot(&col); // [Cout, Ho*Wo]
                os[ni * c_out * ho * wo..(ni + 1) * c_out * ho * wo]
                    .copy_from_slice(y.as_slice().unwrap());
            }
        }

        let need_x_grad = self.grad_enabled() && self.requires_grad(x);
        let warr = self.value_rc(weight);
        self.push_op(
            out,
            BackOp {
                parents: vec![x, weight],
                run: Box::new(move |g, sink| {
                    let gsl = g.as_standard_layout();
                    let gs = gsl.as_slice().unwrap();
                    let xsl = xarr.as_slice().unwrap();
                    let w2 = warr
                        .view()
                        .into_shape_with_order((c_out, c_in * kh * kw))
                        .unwrap();
                    let mut dw2 = Array2::<f64>::zeros((c_out, c_in * kh * kw));
                    let mut dx = Arr::zeros(IxDyn(&[n, c_in, h, w]));
                    let dxs = dx.as_slice_mut().unwrap();
                    for ni in 0..n {
                        // Recompute patches rather than caching them: desk-scale
                        // compute is cheap, activations dominate memory.
                        let col = im2col(
                            &xsl[ni * c_in * h * w..(ni + 1) * c_in * h * w],
                            c_in,
                            h,
                            w,
                            kh,
                            kw,
                            stride,
                            pad,
                            ho,
                            wo,
                        );
                        let g2 = ndarray::ArrayView2::from_shape(
                            (c_out, ho * wo),
                            &gs[ni * c_out * ho * wo..(ni + 1) * c_out * ho * wo],
                        )
                        .unwrap();
                        dw2 = dw2 + g2.dot(&col.t());
                        if need_x_grad {
                            let dcol = w2.t().dot(&g2);
                            col2im_add(
                                &dcol,
                                &mut dxs[ni * c_in * h * w..(ni + 1) * c_in * h * w],
                                c_in,
                                h,
                                w,
                                kh,
                                kw,
                                stride,
                                pad,
                                ho,
                                wo,
                            );
                        }
                    }
                    if need_x_grad {
                        sink(0, dx);
                    }
                    sink(
                        1,
                        dw2.into_shape_with_order(IxDyn(&[c_out, c_in, kh, kw])).unwrap(),
                    );
                }),
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_identity_kernel_is_copy() {
        let mut t = Tape::new();
        let x = t.leaf(
            Arr::from_shape_vec(IxDyn(&[1, 1, 2, 2]), vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            false,
        );
        let w = t.leaf(Arr::from_shape_vec(IxDyn(&[1, 1, 1, 1]), vec![1.0]).unwrap(), false);
        let y = t.conv2d(x, w, 1, 0);
        assert_eq!(t.value(y).as_slice().unwrap(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn conv_sums_box_kernel_with_padding() {
        let mut t = Tape::new();
        let x = t.leaf(Arr::ones(IxDyn(&[1, 1, 3, 3])), false);
        let w = t.leaf(Arr::ones(IxDyn(&[1, 1, 3, 3])), false);
        let y = t.conv2d(x, w, 1, 1);
        // Centre pixel sees the full 3x3 of ones; corners see 2x2.
        let yv = t.value(y);
        assert_eq!(yv[[0, 0, 1, 1]], 9.0);
        assert_eq!(yv[[0, 0, 0, 0]], 4.0);
    }

    #[test]
    fn conv_stride_two_halves_resolution() {
        let mut t = Tape::new();
        let x = t.leaf(Arr::zeros(IxDyn(&[2, 3, 8, 8])), false);
        let w = t.leaf(Arr::zeros(IxDyn(&[5, 3, 3, 3])), false);
        let y = t.conv2d(x, w, 2, 1);
        assert_eq!(t.value(y).shape(), &[2, 5, 4, 4]);
    }

    #[test]
    fn into_shape_matches_view_reshape() {
        // im2col depends on row-major reshape of the weight.
        let w = Arr::from_shape_vec(IxDyn(&[2, 1, 1, 2]), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w2 = w.view().into_shape_with_order((2, 2)).unwrap();
        assert_eq!(w2[[1, 0]], 3.0);
    }
}
