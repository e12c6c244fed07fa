//! Optical-flow fields, differentiable backward warping, and occlusion masks.
//!
//! All flows use the target-grid (backward sampling) convention: `flow(p)`
//! is the displacement, in pixels, from target pixel `p` to its source
//! location in the earlier frame, so
//! `warp(src, flow)(p) = bilinear_sample(src, p + flow(p))`.
//! Sampling coordinates outside the grid clamp to the nearest edge pixel.

use crate::autodiff::{Arr, BackOp, Tape, Var};
use crate::data::Frame;
use crate::error::{Error, Result};
use ndarray::{Array3, IxDyn};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::rc::Rc;

/// Middlebury `.flo` magic constant.
const FLO_MAGIC: f32 = 202021.25;

/// Per-pixel 2-vector displacement grid; channel 0 is horizontal (u),
/// channel 1 vertical (v).
#[derive(Clone, Debug)]
pub struct FlowField {
    data: Array3<f64>,
}

impl FlowField {
    pub fn new(data: Array3<f64>) -> Result<Self> {
        if data.shape()[0] != 2 {
            return Err(Error::InvalidArgument(format!(
                "flow field needs 2 channels, got {}",
                data.shape()[0]
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("flow field contains non-finite values".into()));
        }
        Ok(FlowField { data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        FlowField { data: Array3::zeros((2, height, width)) }
    }

    /// Constant displacement everywhere.
    pub fn uniform(height: usize, width: usize, dx: f64, dy: f64) -> Result<Self> {
        let mut data = Array3::zeros((2, height, width));
        data.index_axis_mut(ndarray::Axis(0), 0).fill(dx);
        data.index_axis_mut(ndarray::Axis(0), 1).fill(dy);
        FlowField::new(data)
    }

    pub fn height(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }
}

/// Per-pixel weight grid in `[0, 1]`; 1 marks clean (non-occluded) pixels.
#[derive(Clone, Debug)]
pub struct OcclusionMask {
    data: Array3<f64>,
}

impl OcclusionMask {
    pub fn new(data: Array3<f64>) -> Result<Self> {
        if data.shape()[0] != 1 {
            return Err(Error::InvalidArgument("mask must have a single channel".into()));
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::InvalidArgument("mask values must lie in [0, 1]".into()));
        }
        Ok(OcclusionMask { data })
    }

    pub fn ones(height: usize, width: usize) -> Self {
        OcclusionMask { data: Array3::ones((1, height, width)) }
    }

    pub fn height(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    /// Mean of the mask (fraction of clean area for binary masks).
    pub fn mean(&self) -> f64 {
        self.data.mean().unwrap_or(0.0)
    }
}

/// Warp behaviour knobs; the only border mode is clamp-to-edge.
#[derive(Clone, Copy, Debug)]
pub struct WarpConfig {
    pub alpha: f64,
}

impl Default for WarpConfig {
    fn default() -> Self {
        // Mask sharpness used by the temporal losses.
        WarpConfig { alpha: 50.0 }
    }
}

/// Precomputed bilinear taps for one flow field.
struct SamplePlan {
    x0: Vec<usize>,
    x1: Vec<usize>,
    y0: Vec<usize>,
    y1: Vec<usize>,
    wx: Vec<f64>,
    wy: Vec<f64>,
}

fn plan_samples(flow: &FlowField) -> SamplePlan {
    let (h, w) = (flow.height(), flow.width());
    let n = h * w;
    let mut plan = SamplePlan {
        x0: vec![0; n],
        x1: vec![0; n],
        y0: vec![0; n],
        y1: vec![0; n],
        wx: vec![0.0; n],
        wy: vec![0.0; n],
    };
    let u = flow.data().index_axis(ndarray::Axis(0), 0);
    let v = flow.data().index_axis(ndarray::Axis(0), 1);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let sx = (x as f64 + u[[y, x]]).clamp(0.0, (w - 1) as f64);
            let sy = (y as f64 + v[[y, x]]).clamp(0.0, (h - 1) as f64);
            let x0 = sx.floor() as usize;
            let y0 = sy.floor() as usize;
            plan.x0[i] = x0;
            plan.y0[i] = y0;
            plan.x1[i] = (x0 + 1).min(w - 1);
            plan.y1[i] = (y0 + 1).min(h - 1);
            plan.wx[i] = sx - x0 as f64;
            plan.wy[i] = sy - y0 as f64;
        }
    }
    plan
}

fn warp_with_plan(src: &[f64], c: usize, h: usize, w: usize, plan: &SamplePlan) -> Vec<f64> {
    let mut out = vec![0.0; c * h * w];
    for ci in 0..c {
        let plane = &src[ci * h * w..(ci + 1) * h * w];
        let ob = ci * h * w;
        for i in 0..h * w {
            let (x0, x1, y0, y1) = (plan.x0[i], plan.x1[i], plan.y0[i], plan.y1[i]);
            let (wx, wy) = (plan.wx[i], plan.wy[i]);
            out[ob + i] = (1.0 - wy) * ((1.0 - wx) * plane[y0 * w + x0] + wx * plane[y0 * w + x1])
                + wy * ((1.0 - wx) * plane[y1 * w + x0] + wx * plane[y1 * w + x1]);
        }
    }
    out
}

/// Backward-warp a frame under a flow field (bilinear, clamp-to-edge).
pub fn warp(frame: &Frame, flow: &FlowField) -> Result<Frame> {
    if frame.height() != flow.height() || frame.width() != flow.width() {
        return Err(Error::ShapeMismatch(format!(
            "frame {}x{} vs flow {}x{}",
            frame.height(),
            frame.width(),
            flow.height(),
            flow.width()
        )));
    }
    let (c, h, w) = (frame.channels(), frame.height(), frame.width());
    let plan = plan_samples(flow);
    let out = warp_with_plan(frame.data().as_slice().unwrap(), c, h, w, &plan);
    let data = Array3::from_shape_vec((c, h, w), out).unwrap();
    Ok(Frame::trusted(data, frame.color_space()))
}

impl Tape {
    /// Differentiable backward warp of `[N, C, H, W]` under one flow field.
    /// Gradient flows into the frame values; the flow is a fixed input.
    pub fn warp_bilinear(&mut self, x: Var, flow: &FlowField) -> Var {
        let s = self.value(x).shape().to_vec();
        assert_eq!(s.len(), 4, "warp_bilinear expects NCHW");
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        assert_eq!((h, w), (flow.height(), flow.width()), "warp_bilinear: flow shape mismatch");
        let plan = Rc::new(plan_samples(flow));
        let xv = self.value_std(x);
        let mut out = Arr::zeros(IxDyn(&[n, c, h, w]));
        {
            let xs = xv.as_slice().expect("warp: non-contiguous input");
            let os = out.as_slice_mut().unwrap();
            for ni in 0..n {
                let o = warp_with_plan(&xs[ni * c * h * w..(ni + 1) * c * h * w], c, h, w, &plan);
                os[ni * c * h * w..(ni + 1) * c * h * w].copy_from_slice(&o);
            }
        }
        self.push_op(
            out,
            BackOp {
                parents: vec![x],
                run: Box::new(move |g, sink| {
                    let gsl = g.as_standard_layout();
                    let gs = gsl.as_slice().unwrap();
                    let mut dx = Arr::zeros(IxDyn(&[n, c, h, w]));
                    {
                        let ds = dx.as_slice_mut().unwrap();
                        for ni in 0..n {
                            for ci in 0..c {
                                let base = (ni * c + ci) * h * w;
                                for i in 0..h * w {
                                    let gv = gs[base + i];
                                    if gv == 0.0 {
                                        continue;
                                    }
                                    let (x0, x1, y0, y1) =
                                        (plan.x0[i], plan.x1[i], plan.y0[i], plan.y1[i]);
                                    let (wx, wy) = (plan.wx[i], plan.wy[i]);
                                    ds[base + y0 * w + x0] += gv * (1.0 - wy) * (1.0 - wx);
                                    ds[base + y0 * w + x1] += gv * (1.0 - wy) * wx;
                                    ds[base + y1 * w + x0] += gv * wy * (1.0 - wx);
                                    ds[base + y1 * w + x1] += gv * wy * wx;
                                }
                            }
                        }
                    }
                    sink(0, dx);
                }),
            },
        )
    }
}

/// Soft non-occlusion mask `exp(-alpha * sum_c (cur - warped)^2)` per pixel.
///
/// 1 exactly where the photometric error is zero; monotone decreasing in
/// the error.
pub fn nonocclusion_mask(current: &Frame, warped_prev: &Frame, alpha: f64) -> Result<OcclusionMask> {
    if alpha <= 0.0 {
        return Err(Error::InvalidArgument("mask alpha must be positive".into()));
    }
    check_same_shape(current, warped_prev)?;
    let (c, h, w) = (current.channels(), current.height(), current.width());
    let mut mask = Array3::<f64>::zeros((1, h, w));
    for y in 0..h {
        for x in 0..w {
            let mut err = 0.0;
            for ci in 0..c {
                let d = current.data()[[ci, y, x]] - warped_prev.data()[[ci, y, x]];
                err += d * d;
            }
            mask[[0, y, x]] = (-alpha * err).exp();
        }
    }
    OcclusionMask::new(mask)
}

/// Binary metric-side mask: 1 where the channel-mean squared photometric
/// error is below `threshold`.
pub fn binary_mask(current: &Frame, warped_prev: &Frame, threshold: f64) -> Result<OcclusionMask> {
    if threshold <= 0.0 {
        return Err(Error::InvalidArgument("mask threshold must be positive".into()));
    }
    check_same_shape(current, warped_prev)?;
    let (c, h, w) = (current.channels(), current.height(), current.width());
    let mut mask = Array3::<f64>::zeros((1, h, w));
    for y in 0..h {
        for x in 0..w {
            let mut err = 0.0;
            for ci in 0..c {
                let d = current.data()[[ci, y, x]] - warped_prev.data()[[ci, y, x]];
                err += d * d;
            }
            mask[[0, y, x]] = if err / (c as f64) < threshold { 1.0 } else { 0.0 };
        }
    }
    OcclusionMask::new(mask)
}

fn check_same_shape(a: &Frame, b: &Frame) -> Result<()> {
    if a.channels() != b.channels() || a.height() != b.height() || a.width() != b.width() {
        return Err(Error::ShapeMismatch(format!(
            "frames {}x{}x{} vs {}x{}x{}",
            a.channels(),
            a.height(),
            a.width(),
            b.channels(),
            b.height(),
            b.width()
        )));
    }
    Ok(())
}

/// Compose two backward flows: given `a = m->k` and `b = k->t`, the result
/// maps `m->t` via `F(p) = b(p) + a(p + b(p))` with bilinear sampling of `a`.
/// Exact for piecewise-constant translation flows.
pub fn compose(a: &FlowField, b: &FlowField) -> Result<FlowField> {
    if (a.height(), a.width()) != (b.height(), b.width()) {
        return Err(Error::ShapeMismatch("flow fields differ in size".into()));
    }
    let (h, w) = (a.height(), a.width());
    let plan = plan_samples(b);
    let sampled = warp_with_plan(a.data().as_slice().unwrap(), 2, h, w, &plan);
    let mut data = Array3::from_shape_vec((2, h, w), sampled).unwrap();
    data += b.data();
    FlowField::new(data)
}

// ---------------------------------------------------------------------------
// Middlebury `.flo` format: f32 magic 202021.25, i32 width, i32 height,
// then row-major interleaved (u, v) f32 pairs; little-endian throughout.
// ---------------------------------------------------------------------------

pub fn write_flo(flow: &FlowField, path: &Path) -> Result<()> {
    let (h, w) = (flow.height(), flow.width());
    let mut buf = Vec::with_capacity(12 + 8 * h * w);
    buf.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    buf.extend_from_slice(&(w as i32).to_le_bytes());
    buf.extend_from_slice(&(h as i32).to_le_bytes());
    let d = flow.data();
    for y in 0..h {
        for x in 0..w {
            buf.extend_from_slice(&(d[[0, y, x]] as f32).to_le_bytes());
            buf.extend_from_slice(&(d[[1, y, x]] as f32).to_le_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_flo(path: &Path) -> Result<FlowField> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 {
        return Err(Error::Format(format!("{}: truncated .flo header", path.display())));
    }
    let magic = f32::from_le_bytes(bytes[0..4].try_into().unwrap());
    if magic.to_bits() != FLO_MAGIC.to_bits() {
        return Err(Error::Format(format!("{}: bad .flo magic {magic}", path.display())));
    }
    let w = i32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let h = i32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if w <= 0 || h <= 0 || w > 1 << 16 || h > 1 << 16 {
        return Err(Error::Format(format!("{}: implausible size {w}x{h}", path.display())));
    }
    let (w, h) = (w as usize, h as usize);
    let expect = 12 + 8 * w * h;
    if bytes.len() != expect {
        return Err(Error::Format(format!(
            "{}: payload is {} bytes, expected {expect}",
            path.display(),
            bytes.len()
        )));
    }
    let mut data = Array3::<f64>::zeros((2, h, w));
    let mut off = 12;
    for y in 0..h {
        for x in 0..w {
            let u = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
            let v = f32::from_le_bytes(bytes[off + 4..off + 8].try_into().unwrap());
            data[[0, y, x]] = f64::from(u);
            data[[1, y, x]] = f64::from(v);
            off += 8;
        }
    }
    FlowField::new(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ColorSpace;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn row_frame(vals: &[f64]) -> Frame {
        let data = Array3::from_shape_vec((1, 1, vals.len()), vals.to_vec()).unwrap();
        Frame::new(data, ColorSpace::Grayscale).unwrap()
    }

    #[test]
    fn zero_flow_is_identity() {
        let f = row_frame(&[0.1, -0.4, 0.9, -1.0]);
        let out = warp(&f, &FlowField::zeros(1, 4)).unwrap();
        assert_eq!(out.data(), f.data());
    }

    #[test]
    fn integer_shift_clamps_at_border() {
        let f = row_frame(&[0.1, 0.2, 0.3, 0.4]);
        let flow = FlowField::uniform(1, 4, 1.0, 0.0).unwrap();
        let out = warp(&f, &flow).unwrap();
        assert_eq!(out.data().as_slice().unwrap(), &[0.2, 0.3, 0.4, 0.4]);
    }

    #[test]
    fn half_pixel_interpolates() {
        let f = row_frame(&[0.0, 1.0]);
        let flow = FlowField::uniform(1, 2, 0.5, 0.0).unwrap();
        let out = warp(&f, &flow).unwrap();
        assert_abs_diff_eq!(out.data()[[0, 0, 0]], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn warp_rejects_shape_mismatch() {
        let f = row_frame(&[0.0, 1.0]);
        assert!(warp(&f, &FlowField::zeros(2, 2)).is_err());
    }

    #[test]
    fn flow_rejects_non_finite() {
        let mut data = Array3::<f64>::zeros((2, 1, 1));
        data[[0, 0, 0]] = f64::NAN;
        assert!(FlowField::new(data).is_err());
    }

    #[test]
    fn soft_mask_identity_and_known_value() {
        let a = row_frame(&[0.3, -0.2]);
        let m = nonocclusion_mask(&a, &a, 50.0).unwrap();
        assert!(m.data().iter().all(|&v| v == 1.0));
        // squared error 0.01 at alpha 50 => exp(-0.5)
        let b = row_frame(&[0.4, -0.1]);
        let m = nonocclusion_mask(&a, &b, 50.0).unwrap();
        for &v in m.data().iter() {
            assert_abs_diff_eq!(v, (-0.5f64).exp(), epsilon = 1e-12);
        }
    }

    #[test]
    fn soft_mask_monotone_in_error() {
        let a = row_frame(&[0.0; 4]);
        let b = row_frame(&[0.0, 0.1, 0.2, 0.3]);
        let m = nonocclusion_mask(&a, &b, 50.0).unwrap();
        let v = m.data().as_slice().unwrap();
        assert!(v.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn binary_mask_thresholds() {
        let a = row_frame(&[0.0, 0.0]);
        let b = row_frame(&[0.0, 1.0]);
        let m = binary_mask(&a, &b, 0.5).unwrap();
        assert_eq!(m.data().as_slice().unwrap(), &[1.0, 0.0]);
        let all = binary_mask(&a, &a, 1e-9).unwrap();
        assert!(all.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn compose_adds_constant_flows() {
        let a = FlowField::uniform(3, 3, 1.0, -1.0).unwrap();
        let b = FlowField::uniform(3, 3, 0.5, 2.0).unwrap();
        let c = compose(&a, &b).unwrap();
        for y in 0..3 {
            for x in 0..3 {
                assert_abs_diff_eq!(c.data()[[0, y, x]], 1.5, epsilon = 1e-12);
                assert_abs_diff_eq!(c.data()[[1, y, x]], 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn warp_gradient_matches_finite_differences() {
        use crate::autodiff::tests::check_grads;
        use ndarray::IxDyn;
        let mut flow_data = Array3::<f64>::zeros((2, 4, 4));
        // Stay away from integer lattice points and the border clamp.
        flow_data.index_axis_mut(ndarray::Axis(0), 0).fill(0.3);
        flow_data.index_axis_mut(ndarray::Axis(0), 1).fill(-0.7);
        let flow = FlowField::new(flow_data).unwrap();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(11);
        let x = Arr::from_shape_simple_fn(IxDyn(&[1, 2, 4, 4]), || {
            rand::Rng::gen_range(&mut rng, -0.9..0.9)
        });
        check_grads(&[x], |t, v| {
            let y = t.warp_bilinear(v[0], &flow);
            let z = t.square(y);
            t.mean_all(z)
        }, 1e-3);
    }

    #[test]
    fn flo_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.flo");
        let mut data = Array3::<f64>::zeros((2, 3, 5));
        for (i, v) in data.iter_mut().enumerate() {
            *v = f64::from(f32::from_bits(0x3f00_0000 + i as u32)); // exact f32 values
        }
        let flow = FlowField::new(data).unwrap();
        write_flo(&flow, &path).unwrap();
        let back = read_flo(&path).unwrap();
        for (a, b) in flow.data().iter().zip(back.data().iter()) {
            assert_eq!((*a as f32).to_bits(), (*b as f32).to_bits());
        }
        // Byte-identical when re-written.
        let path2 = dir.path().join("g.flo");
        write_flo(&back, &path2).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn flo_rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.flo");
        fs::write(&path, [0u8; 16]).unwrap();
        assert!(read_flo(&path).is_err());
    }

    proptest! {
        #[test]
        fn integer_uniform_flow_equals_shift_in_interior(dx in -2i32..=2, dy in -2i32..=2) {
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(7);
            let data = Array3::from_shape_simple_fn((1, 8, 8), || rand::Rng::gen_range(&mut rng, -1.0..1.0));
            let frame = Frame::new(data.clone(), ColorSpace::Grayscale).unwrap();
            let flow = FlowField::uniform(8, 8, f64::from(dx), f64::from(dy)).unwrap();
            let out = warp(&frame, &flow).unwrap();
            for y in 0..8i32 {
                for x in 0..8i32 {
                    let (sy, sx) = (y + dy, x + dx);
                    if sy < 0 || sy >= 8 || sx < 0 || sx >= 8 { continue; }
                    prop_assert!((out.data()[[0, y as usize, x as usize]] - data[[0, sy as usize, sx as usize]]).abs() < 1e-12);
                }
            }
        }
    }
}
