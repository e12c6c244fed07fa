//! Evaluation metrics: PSNR, SSIM, and the occlusion-masked warp error,
//! plus a directory-level harness producing a [`MetricReport`].
//!
//! All metrics are computed in [0, 1] pixel scale (frames store [-1, 1]).

use crate::data::{load_png, normalize, to_grayscale, ColorSpace, Frame, VideoClip};
use crate::error::{Error, Result};
use crate::flow::{binary_mask, read_flo, warp, FlowField, OcclusionMask};
use ndarray::{Array2, Array3};
use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

/// PSNR is capped here when the MSE vanishes.
pub const PSNR_CAP_DB: f64 = 100.0;

/// Default photometric threshold (in [0,1] scale) of the metric-side
/// binary occlusion mask.
pub const DEFAULT_MASK_THRESHOLD: f64 = 0.01;

fn to01(v: f64) -> f64 {
    (v + 1.0) / 2.0
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

/// Peak signal-to-noise ratio in dB, `10 log10(1 / MSE)` over [0,1] pixels.
pub fn psnr(a: &Frame, b: &Frame) -> Result<f64> {
    check_same_shape(a, b)?;
    let mse = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(x, y)| {
            let d = to01(*x) - to01(*y);
            d * d
        })
        .sum::<f64>()
        / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

/// 1-d Gaussian taps, radius 5, sigma 1.5, normalized.
fn gaussian_taps() -> [f64; 11] {
    let sigma = 1.5f64;
    let mut taps = [0.0; 11];
    let mut sum = 0.0;
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - 5.0;
        *t = (-d * d / (2.0 * sigma * sigma)).exp();
        sum += *t;
    }
    for t in &mut taps {
        *t /= sum;
    }
    taps
}

/// Valid-mode separable filtering with the 11-tap Gaussian.
fn gauss_filter_valid(img: &Array2<f64>) -> Array2<f64> {
    let taps = gaussian_taps();
    let (h, w) = img.dim();
    let mut rows = Array2::<f64>::zeros((h, w - 10));
    for y in 0..h {
        for x in 0..w - 10 {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                acc += t * img[[y, x + k]];
            }
            rows[[y, x]] = acc;
        }
    }
    let mut out = Array2::<f64>::zeros((h - 10, w - 10));
    for y in 0..h - 10 {
        for x in 0..w - 10 {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                acc += t * rows[[y + k, x]];
            }
            out[[y, x]] = acc;
        }
    }
    out
}

/// Channel-averaged [0,1] plane of a frame.
fn luma_plane(f: &Frame) -> Array2<f64> {
    let (c, h, w) = (f.channels(), f.height(), f.width());
    let mut plane = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for ci in 0..c {
                acc += to01(f.data()[[ci, y, x]]);
            }
            plane[[y, x]] = acc / c as f64;
        }
    }
    plane
}

/// Structural similarity with an 11x11 Gaussian window (sigma 1.5),
/// C1 = (0.01 L)^2, C2 = (0.03 L)^2, L = 1, on channel-averaged pixels.
/// The window runs in valid mode, so frames must be at least 11x11.
pub fn ssim(a: &Frame, b: &Frame) -> Result<f64> {
    check_same_shape(a, b)?;
    if a.height() < 11 || a.width() < 11 {
        return Err(Error::InvalidArgument(format!(
            "ssim needs frames of at least 11x11, got {}x{}",
            a.height(),
            a.width()
        )));
    }
    let pa = luma_plane(a);
    let pb = luma_plane(b);
    let mu_a = gauss_filter_valid(&pa);
    let mu_b = gauss_filter_valid(&pb);
    let aa = gauss_filter_valid(&(&pa * &pa));
    let bb = gauss_filter_valid(&(&pb * &pb));
    let ab = gauss_filter_valid(&(&pa * &pb));

    let c1 = 0.01f64 * 0.01;
    let c2 = 0.03f64 * 0.03;
    let mut acc = 0.0;
    for ((((ma, mb), saa), sbb), sab) in mu_a
        .iter()
        .zip(mu_b.iter())
        .zip(aa.iter())
        .zip(bb.iter())
        .zip(ab.iter())
    {
        let va = saa - ma * ma;
        let vb = sbb - mb * mb;
        let cov = sab - ma * mb;
        let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
        let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
        acc += num / den;
    }
    Ok(acc / mu_a.len() as f64)
}

/// Warp error of one video: per transition t, the masked mean (over
/// non-occluded pixels) of the per-pixel channel-sum squared difference
/// between frame t and the warped frame t-1, summed over transitions and
/// divided by T-1. Transitions whose mask is all zero are skipped and
/// reported.
pub struct WarpErrorReport {
    pub value: f64,
    /// 1-based transition indices t whose mask was all zero.
    pub skipped: Vec<usize>,
}

pub fn warp_error(
    video: &VideoClip,
    flows: &[FlowField],
    masks: &[OcclusionMask],
) -> Result<WarpErrorReport> {
    let t_len = video.len();
    if t_len < 2 {
        return Err(Error::InvalidArgument("warp error needs at least two frames".into()));
    }
    if flows.len() != t_len - 1 || masks.len() != t_len - 1 {
        return Err(Error::InvalidArgument(format!(
            "warp error: need {} flows and masks, got {} and {}",
            t_len - 1,
            flows.len(),
            masks.len()
        )));
    }
    let mut total = 0.0;
    let mut skipped = Vec::new();
    for t in 1..t_len {
        match pair_error(video.frame(t), video.frame(t - 1), &flows[t - 1], &masks[t - 1])? {
            Some(e) => total += e,
            None => skipped.push(t),
        }
    }
    Ok(WarpErrorReport { value: total / (t_len - 1) as f64, skipped })
}

/// Masked mean squared disparity for one (target, source) pair; `None`
/// when the mask is all zero.
fn pair_error(
    target: &Frame,
    source: &Frame,
    flow: &FlowField,
    mask: &OcclusionMask,
) -> Result<Option<f64>> {
    check_same_shape(target, source)?;
    if (mask.height(), mask.width()) != (target.height(), target.width()) {
        return Err(Error::ShapeMismatch("mask does not match frames".into()));
    }
    let warped = warp(source, flow)?;
    let (c, h, w) = (target.channels(), target.height(), target.width());
    let mut num = 0.0;
    let mut den = 0.0;
    for y in 0..h {
        for x in 0..w {
            let m = mask.data()[[0, y, x]];
            if m == 0.0 {
                continue;
            }
            let mut err = 0.0;
            for ci in 0..c {
                let d = to01(target.data()[[ci, y, x]]) - to01(warped.data()[[ci, y, x]]);
                err += d * d;
            }
            num += m * err;
            den += m;
        }
    }
    if den == 0.0 {
        return Ok(None);
    }
    Ok(Some(num / den))
}

/// Warp error over an arbitrary set of (source m, target t) pairs with
/// per-pair flows and masks; used for remote-pair consistency checks.
pub fn warp_error_pairs(
    video: &VideoClip,
    pairs: &[(usize, usize)],
    lookup: impl Fn(usize, usize) -> Option<(FlowField, OcclusionMask)>,
) -> Result<WarpErrorReport> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("warp_error_pairs: empty pair set".into()));
    }
    let mut total = 0.0;
    let mut skipped = Vec::new();
    for &(m, t) in pairs {
        if m >= t || t >= video.len() {
            return Err(Error::InvalidArgument(format!("bad pair ({m}, {t})")));
        }
        let (flow, mask) = lookup(m, t)
            .ok_or_else(|| Error::InvalidArgument(format!("missing flow/mask for ({m}, {t})")))?;
        match pair_error(video.frame(t), video.frame(m), &flow, &mask)? {
            Some(e) => total += e,
            None => skipped.push(t),
        }
    }
    Ok(WarpErrorReport { value: total / pairs.len() as f64, skipped })
}

/// Per-frame metrics of one evaluated video.
#[derive(Clone, Debug)]
pub struct FrameMetrics {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
}

/// Result of evaluating one frame directory against ground truth.
#[derive(Clone, Debug)]
pub struct MetricReport {
    pub frames: Vec<FrameMetrics>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub warp_error: f64,
    pub skipped_transitions: Vec<usize>,
}

impl MetricReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame,psnr,ssim\n");
        for f in &self.frames {
            out.push_str(&format!("{},{},{}\n", f.name, f.psnr, f.ssim));
        }
        out.push_str(&format!("mean,{},{}\n", self.mean_psnr, self.mean_ssim));
        out.push_str(&format!("warp_error,{},\n", self.warp_error));
        out
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<20} {:>10} {:>10}", "frame", "psnr", "ssim")?;
        for fr in &self.frames {
            writeln!(f, "{:<20} {:>10.4} {:>10.6}", fr.name, fr.psnr, fr.ssim)?;
        }
        writeln!(f, "{:<20} {:>10.4} {:>10.6}", "mean", self.mean_psnr, self.mean_ssim)?;
        writeln!(f, "warp error: {:.8}", self.warp_error)?;
        if !self.skipped_transitions.is_empty() {
            writeln!(f, "skipped transitions (all-zero mask): {:?}", self.skipped_transitions)?;
        }
        Ok(())
    }
}

/// Load a PNG and, if needed, resize it (bilinear) to the given resolution.
fn load_png_resized(path: &Path, height: usize, width: usize) -> Result<Frame> {
    let img = image::open(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let img = if (img.height() as usize, img.width() as usize) != (height, width) {
        img.resize_exact(width as u32, height as u32, image::imageops::FilterType::Triangle)
    } else {
        img
    };
    let rgb = img.to_rgb8();
    let mut a = Array3::<f64>::zeros((3, height, width));
    for (x, y, p) in rgb.enumerate_pixels() {
        for c in 0..3 {
            a[[c, y as usize, x as usize]] = f64::from(p.0[c]);
        }
    }
    normalize(&a)
}

/// Evaluate a result directory against a ground-truth directory.
///
/// Directories are aligned by filename; results are resized to the ground
/// truth resolution before any metric. Flows live in `flow_dir` as
/// `<stem_prev>_<stem_cur>.flo`; the warp error of the result video is
/// computed under those flows with binary masks derived from the ground
/// truth at `mask_threshold`.
pub fn evaluate_dirs(
    result_dir: &Path,
    gt_dir: &Path,
    flow_dir: &Path,
    mask_threshold: f64,
) -> Result<MetricReport> {
    let result_files = crate::data::list_frame_files(result_dir)?;
    let gt_files = crate::data::list_frame_files(gt_dir)?;
    let result_names: BTreeSet<String> = result_files
        .iter()
        .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect();
    let gt_names: BTreeSet<String> = gt_files
        .iter()
        .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect();
    if result_names != gt_names {
        let only_result: Vec<_> = result_names.difference(&gt_names).cloned().collect();
        let only_gt: Vec<_> = gt_names.difference(&result_names).cloned().collect();
        return Err(Error::Data(format!(
            "misaligned frame sets; only in results: {only_result:?}, only in ground truth: {only_gt:?}"
        )));
    }

    let mut gt_frames = Vec::new();
    let mut stems = Vec::new();
    for p in &gt_files {
        let f = load_png(p)?;
        let f = match f.color_space() {
            ColorSpace::Rgb => f,
            ColorSpace::Grayscale => crate::data::replicate_channels(&f)?,
        };
        gt_frames.push(f);
        stems.push(p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
    }
    let (h, w) = (gt_frames[0].height(), gt_frames[0].width());

    let mut result_frames = Vec::new();
    for p in &result_files {
        result_frames.push(load_png_resized(p, h, w)?);
    }

    let mut frames = Vec::new();
    for (i, stem) in stems.iter().enumerate() {
        frames.push(FrameMetrics {
            name: stem.clone(),
            psnr: psnr(&result_frames[i], &gt_frames[i])?,
            ssim: ssim(&result_frames[i], &gt_frames[i])?,
        });
    }
    let mean_psnr = frames.iter().map(|f| f.psnr).sum::<f64>() / frames.len() as f64;
    let mean_ssim = frames.iter().map(|f| f.ssim).sum::<f64>() / frames.len() as f64;

    let mut flows = Vec::new();
    let mut masks = Vec::new();
    for t in 1..gt_frames.len() {
        let name = format!("{}_{}.flo", stems[t - 1], stems[t]);
        let flow = read_flo(&flow_dir.join(&name))?;
        if (flow.height(), flow.width()) != (h, w) {
            return Err(Error::Data(format!("flow {name} does not match frame size")));
        }
        let warped = warp(&gt_frames[t - 1], &flow)?;
        masks.push(binary_mask(&gt_frames[t], &warped, mask_threshold)?);
        flows.push(flow);
    }
    let clip = VideoClip::new(result_frames)?;
    let we = if clip.len() >= 2 {
        warp_error(&clip, &flows, &masks)?
    } else {
        WarpErrorReport { value: 0.0, skipped: vec![] }
    };

    Ok(MetricReport {
        frames,
        mean_psnr,
        mean_ssim,
        warp_error: we.value,
        skipped_transitions: we.skipped,
    })
}

/// Convenience: grayscale copies for colorization inputs.
pub fn grayscale_inputs(clip: &VideoClip) -> Result<VideoClip> {
    match clip.color_space() {
        ColorSpace::Grayscale => Ok(clip.clone()),
        ColorSpace::Rgb => {
            let frames = clip.frames().iter().map(to_grayscale).collect::<Result<Vec<_>>>()?;
            VideoClip::new(frames)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn const_frame(c: usize, h: usize, w: usize, v: f64) -> Frame {
        let space = if c == 1 { ColorSpace::Grayscale } else { ColorSpace::Rgb };
        Frame::new(Array3::from_elem((c, h, w), v), space).unwrap()
    }

    /// Deterministic pseudo-random [0,1] stream shared with the reference
    /// script in tools/ssim_reference.py.
    struct Lcg(u64);
    impl Lcg {
        fn next01(&mut self) -> f64 {
            self.0 = self
                .0
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (self.0 >> 33) as f64 / (1u64 << 31) as f64
        }
    }

    fn lcg_frame(h: usize, w: usize, seed: u64) -> (Array2<f64>, Frame) {
        let mut rng = Lcg(seed);
        let mut plane01 = Array2::<f64>::zeros((h, w));
        for v in plane01.iter_mut() {
            *v = rng.next01();
        }
        let data = plane01.mapv(|v| 2.0 * v - 1.0).insert_axis(ndarray::Axis(0));
        (plane01, Frame::new(data, ColorSpace::Grayscale).unwrap())
    }

    #[test]
    fn psnr_cap_and_known_mse() {
        let a = const_frame(3, 4, 4, 0.2);
        assert_eq!(psnr(&a, &a).unwrap(), 100.0);
        // Offset 0.2 in [-1,1] is 0.1 in [0,1]: MSE = 0.01 -> exactly 20 dB.
        let b = const_frame(3, 4, 4, 0.4);
        assert_abs_diff_eq!(psnr(&a, &b).unwrap(), 20.0, epsilon = 1e-12);
        // MSE = 1 -> 0 dB.
        let lo = const_frame(3, 4, 4, -1.0);
        let hi = const_frame(3, 4, 4, 1.0);
        assert_abs_diff_eq!(psnr(&lo, &hi).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn psnr_is_symmetric_and_checks_shape() {
        let a = const_frame(3, 4, 4, 0.1);
        let b = const_frame(3, 4, 4, -0.3);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        let c = const_frame(3, 8, 8, 0.0);
        assert!(psnr(&a, &c).is_err());
    }

    #[test]
    fn ssim_identity_and_luminance_penalty() {
        let (_, a) = lcg_frame(16, 16, 42);
        assert_abs_diff_eq!(ssim(&a, &a).unwrap(), 1.0, epsilon = 1e-12);
        let c1 = const_frame(1, 16, 16, 0.2);
        let c2 = const_frame(1, 16, 16, 0.6);
        let v = ssim(&c1, &c2).unwrap();
        assert!(v < 1.0 && v > 0.0);
    }

    #[test]
    fn ssim_is_symmetric_and_needs_window() {
        let (_, a) = lcg_frame(16, 16, 1);
        let (_, b) = lcg_frame(16, 16, 2);
        let x = ssim(&a, &b).unwrap();
        let y = ssim(&b, &a).unwrap();
        assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        let small = const_frame(1, 8, 8, 0.0);
        assert!(ssim(&small, &small).is_err());
    }

    #[test]
    fn warp_error_static_zero_and_offset() {
        let f = const_frame(3, 4, 4, 0.0);
        let clip = VideoClip::new(vec![f.clone(), f.clone()]).unwrap();
        let flows = vec![FlowField::zeros(4, 4)];
        let masks = vec![OcclusionMask::ones(4, 4)];
        let we = warp_error(&clip, &flows, &masks).unwrap();
        assert_eq!(we.value, 0.0);

        // Offset 0.2 in [-1,1] = 0.1 in [0,1]: channel-sum error 0.01 * C.
        let g = const_frame(3, 4, 4, 0.2);
        let clip = VideoClip::new(vec![f, g]).unwrap();
        let we = warp_error(&clip, &flows, &masks).unwrap();
        assert_abs_diff_eq!(we.value, 0.01 * 3.0, epsilon = 1e-12);
    }

    #[test]
    fn warp_error_mask_annihilates_and_skips() {
        let f = const_frame(3, 4, 4, 0.0);
        let g = const_frame(3, 4, 4, 0.5);
        let clip = VideoClip::new(vec![f, g]).unwrap();
        let flows = vec![FlowField::zeros(4, 4)];
        // Mask out everything -> skipped transition.
        let zero = OcclusionMask::new(Array3::zeros((1, 4, 4))).unwrap();
        let we = warp_error(&clip, &flows, &[zero]).unwrap();
        assert_eq!(we.skipped, vec![1]);
        assert_eq!(we.value, 0.0);
    }

    #[test]
    fn warp_error_masks_out_corruption() {
        // Corrupt the left half; mask it away; the error must vanish.
        let mut data = Array3::from_elem((1, 4, 4), 0.0);
        for y in 0..4 {
            for x in 0..2 {
                data[[0, y, x]] = 0.9;
            }
        }
        let corrupted = Frame::new(data, ColorSpace::Grayscale).unwrap();
        let clean = const_frame(1, 4, 4, 0.0);
        let clip = VideoClip::new(vec![clean, corrupted]).unwrap();
        let mut mask = Array3::ones((1, 4, 4));
        for y in 0..4 {
            for x in 0..2 {
                mask[[0, y, x]] = 0.0;
            }
        }
        let we = warp_error(
            &clip,
            &[FlowField::zeros(4, 4)],
            &[OcclusionMask::new(mask).unwrap()],
        )
        .unwrap();
        assert_eq!(we.value, 0.0);
    }

    #[test]
    fn ssim_matches_reference_implementation() {
        // Expected values computed once with scikit-image
        // structural_similarity(gaussian_weights=True, sigma=1.5,
        // use_sample_covariance=False, data_range=1.0) on the same LCG
        // streams; see tools/ssim_reference.py.
        let (a01, fa) = lcg_frame(24, 24, 7);
        let (mut b01, _) = lcg_frame(24, 24, 7);
        let mut noise = Lcg(99);
        for v in b01.iter_mut() {
            *v = (*v + 0.1 * (noise.next01() - 0.5)).clamp(0.0, 1.0);
        }
        let fb = Frame::new(
            b01.mapv(|v| 2.0 * v - 1.0).insert_axis(ndarray::Axis(0)),
            ColorSpace::Grayscale,
        )
        .unwrap();
        let _ = a01;
        let got = ssim(&fa, &fb).unwrap();
        let expected = 0.9941577547553417; // frozen from tools/ssim_reference.py
        assert!(
            (got - expected).abs() < 1e-4,
            "ssim {got} vs reference {expected}"
        );
    }
}
