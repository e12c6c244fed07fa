//! Canonical in-memory frame and clip representations.
//!
//! A [`Frame`] is a `[C, H, W]` grid of f64 in `[-1, 1]`; grayscale frames
//! have one channel, color frames three (RGB). All conversions are pure.

use crate::error::{Error, Result};
use ndarray::{Array3, Axis};
use std::fs;
use std::path::{Path, PathBuf};

/// ITU-R BT.601 luma weights, applied in [0, 1] scale.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ColorSpace {
    Grayscale,
    Rgb,
}

/// One image as a dense numeric grid, channels x height x width.
#[derive(Clone, Debug)]
pub struct Frame {
    data: Array3<f64>,
    color_space: ColorSpace,
}

impl Frame {
    /// Build a frame, enforcing the channel/color-space pairing and the
    /// `[-1, 1]` value range.
    pub fn new(data: Array3<f64>, color_space: ColorSpace) -> Result<Self> {
        let c = data.shape()[0];
        let expected = match color_space {
            ColorSpace::Grayscale => 1,
            ColorSpace::Rgb => 3,
        };
        if c != expected {
            return Err(Error::InvalidArgument(format!(
                "frame with {c} channels cannot be {color_space:?}"
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite() || v.abs() > 1.0 + 1e-12) {
            return Err(Error::InvalidArgument(format!(
                "frame value {bad} outside [-1, 1]"
            )));
        }
        Ok(Frame { data, color_space })
    }

    pub fn color_space(&self) -> ColorSpace {
        self.color_space
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[0]
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

    pub fn into_data(self) -> Array3<f64> {
        self.data
    }

    /// Construct without the range scan for values that are in range by
    /// construction (e.g. tanh outputs, bilinear blends of valid frames).
    pub(crate) fn trusted(data: Array3<f64>, color_space: ColorSpace) -> Self {
        debug_assert!(data.iter().all(|v| v.is_finite() && v.abs() <= 1.0 + 1e-9));
        Frame { data, color_space }
    }
}

/// Convert an RGB frame to grayscale with BT.601 luma weights.
///
/// The weights are applied in [0, 1] scale and the result rescaled to
/// `[-1, 1]`; because the weights sum to one this reduces to the same
/// weighted sum applied directly in `[-1, 1]`.
pub fn to_grayscale(frame: &Frame) -> Result<Frame> {
    if frame.color_space() != ColorSpace::Rgb {
        return Err(Error::InvalidArgument(
            "to_grayscale requires an RGB frame; input is already grayscale".into(),
        ));
    }
    let (h, w) = (frame.height(), frame.width());
    let mut gray = Array3::<f64>::zeros((1, h, w));
    let d = frame.data();
    for y in 0..h {
        for x in 0..w {
            gray[[0, y, x]] = LUMA_WEIGHTS[0] * d[[0, y, x]]
                + LUMA_WEIGHTS[1] * d[[1, y, x]]
                + LUMA_WEIGHTS[2] * d[[2, y, x]];
        }
    }
    Ok(Frame::trusted(gray, ColorSpace::Grayscale))
}

/// Repeat the single channel of a grayscale frame three times.
pub fn replicate_channels(frame: &Frame) -> Result<Frame> {
    if frame.channels() != 1 {
        return Err(Error::InvalidArgument(format!(
            "replicate_channels requires 1 channel, got {}",
            frame.channels()
        )));
    }
    let plane = frame.data().index_axis(Axis(0), 0);
    let mut out = Array3::<f64>::zeros((3, frame.height(), frame.width()));
    for c in 0..3 {
        out.index_axis_mut(Axis(0), c).assign(&plane);
    }
    Ok(Frame::trusted(out, ColorSpace::Rgb))
}

/// Map 8-bit pixel values `v in [0, 255]` to `v / 127.5 - 1`.
pub fn normalize(raw: &Array3<f64>) -> Result<Frame> {
    let c = raw.shape()[0];
    let space = match c {
        1 => ColorSpace::Grayscale,
        3 => ColorSpace::Rgb,
        other => {
            return Err(Error::InvalidArgument(format!(
                "normalize expects 1 or 3 channels, got {other}"
            )))
        }
    };
    if let Some(bad) = raw.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 255.0) {
        return Err(Error::InvalidArgument(format!(
            "normalize input value {bad} outside [0, 255]"
        )));
    }
    let data = raw.mapv(|v| v / 127.5 - 1.0);
    Ok(Frame::trusted(data, space))
}

/// Map `[-1, 1]` values back to rounded 8-bit pixels.
pub fn denormalize(frame: &Frame) -> Array3<u8> {
    frame
        .data()
        .mapv(|v| ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8)
}

/// A window of frames sharing shape and color space.
#[derive(Clone, Debug)]
pub struct VideoClip {
    frames: Vec<Frame>,
}

impl VideoClip {
    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::InvalidArgument("clip must hold at least one frame".into()));
        }
        let first = &frames[0];
        for (i, f) in frames.iter().enumerate() {
            if f.color_space() != first.color_space()
                || f.height() != first.height()
                || f.width() != first.width()
            {
                return Err(Error::InvalidArgument(format!(
                    "frame {i} does not match clip shape/color space"
                )));
            }
        }
        Ok(VideoClip { frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> &Frame {
        &self.frames[t]
    }

    pub fn color_space(&self) -> ColorSpace {
        self.frames[0].color_space()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height()
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }

    pub fn into_frames(self) -> Vec<Frame> {
        self.frames
    }

    /// Grayscale copy of every frame.
    pub fn to_grayscale(&self) -> Result<VideoClip> {
        let frames = self.frames.iter().map(to_grayscale).collect::<Result<Vec<_>>>()?;
        VideoClip::new(frames)
    }
}

// ---------------------------------------------------------------------------
// PNG ingestion: frame directories, lexicographic name order.
// ---------------------------------------------------------------------------

/// Decode one 8-bit PNG into a frame (RGB stays RGB, luma stays grayscale;
/// alpha is dropped).
pub fn load_png(path: &Path) -> Result<Frame> {
    let img = image::open(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let raw = match img {
        image::DynamicImage::ImageLuma8(g) => {
            let (w, h) = g.dimensions();
            let mut a = Array3::<f64>::zeros((1, h as usize, w as usize));
            for (x, y, p) in g.enumerate_pixels() {
                a[[0, y as usize, x as usize]] = f64::from(p.0[0]);
            }
            a
        }
        other => {
            let rgb = other.to_rgb8();
            let (w, h) = rgb.dimensions();
            let mut a = Array3::<f64>::zeros((3, h as usize, w as usize));
            for (x, y, p) in rgb.enumerate_pixels() {
                for c in 0..3 {
                    a[[c, y as usize, x as usize]] = f64::from(p.0[c]);
                }
            }
            a
        }
    };
    normalize(&raw)
}

/// Encode a frame as an 8-bit PNG.
pub fn save_png(frame: &Frame, path: &Path) -> Result<()> {
    let bytes = denormalize(frame);
    let (h, w) = (frame.height() as u32, frame.width() as u32);
    let err = |e: image::ImageError| Error::Format(format!("{}: {e}", path.display()));
    match frame.color_space() {
        ColorSpace::Rgb => {
            let mut img = image::RgbImage::new(w, h);
            for (x, y, p) in img.enumerate_pixels_mut() {
                for c in 0..3 {
                    p.0[c] = bytes[[c, y as usize, x as usize]];
                }
            }
            img.save(path).map_err(err)
        }
        ColorSpace::Grayscale => {
            let mut img = image::GrayImage::new(w, h);
            for (x, y, p) in img.enumerate_pixels_mut() {
                p.0[0] = bytes[[0, y as usize, x as usize]];
            }
            img.save(path).map_err(err)
        }
    }
}

/// Sorted `.png` paths of a frame directory; filename order defines time.
pub fn list_frame_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension().map(|e| e.eq_ignore_ascii_case("png")).unwrap_or(false)
        })
        .collect();
    files.sort_by_key(|p| p.file_name().map(|n| n.to_os_string()));
    if files.is_empty() {
        return Err(Error::Data(format!("no PNG frames in {}", dir.display())));
    }
    Ok(files)
}

/// Load a whole frame directory as a clip plus the file stems, in order.
pub fn load_frame_dir(dir: &Path) -> Result<(VideoClip, Vec<String>)> {
    let files = list_frame_files(dir)?;
    let mut frames = Vec::with_capacity(files.len());
    let mut stems = Vec::with_capacity(files.len());
    for f in &files {
        frames.push(load_png(f)?);
        stems.push(
            f.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
        );
    }
    Ok((VideoClip::new(frames)?, stems))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn const_rgb(r: f64, g: f64, b: f64) -> Frame {
        let mut a = Array3::<f64>::zeros((3, 2, 2));
        a.index_axis_mut(Axis(0), 0).fill(r);
        a.index_axis_mut(Axis(0), 1).fill(g);
        a.index_axis_mut(Axis(0), 2).fill(b);
        Frame::new(a, ColorSpace::Rgb).unwrap()
    }

    #[test]
    fn grayscale_of_white_and_black() {
        let white = to_grayscale(&const_rgb(1.0, 1.0, 1.0)).unwrap();
        assert!(white.data().iter().all(|&v| (v - 1.0).abs() < 1e-12));
        let black = to_grayscale(&const_rgb(-1.0, -1.0, -1.0)).unwrap();
        assert!(black.data().iter().all(|&v| (v + 1.0).abs() < 1e-12));
    }

    #[test]
    fn grayscale_of_pure_red() {
        // (1, 0, 0) in [0,1] scale is (1, -1, -1) here; 0.299 maps to -0.402.
        let red = to_grayscale(&const_rgb(1.0, -1.0, -1.0)).unwrap();
        assert_abs_diff_eq!(red.data()[[0, 0, 0]], 2.0 * 0.299 - 1.0, epsilon = 1e-12);
    }

    #[test]
    fn grayscale_rejects_grayscale_input() {
        let g = Frame::new(Array3::zeros((1, 2, 2)), ColorSpace::Grayscale).unwrap();
        assert!(to_grayscale(&g).is_err());
    }

    #[test]
    fn normalize_endpoints_and_midpoint() {
        let raw = Array3::from_shape_vec((1, 1, 3), vec![0.0, 255.0, 127.0]).unwrap();
        let f = normalize(&raw).unwrap();
        assert_eq!(f.data()[[0, 0, 0]], -1.0);
        assert_eq!(f.data()[[0, 0, 1]], 1.0);
        assert_abs_diff_eq!(f.data()[[0, 0, 2]], 127.0 / 127.5 - 1.0, epsilon = 1e-15);
    }

    #[test]
    fn normalize_rejects_out_of_range() {
        let raw = Array3::from_elem((1, 1, 1), 256.0);
        assert!(normalize(&raw).is_err());
        let raw = Array3::from_elem((1, 1, 1), -1.0);
        assert!(normalize(&raw).is_err());
    }

    #[test]
    fn replicate_then_grayscale_is_identity() {
        let mut a = Array3::<f64>::zeros((1, 2, 2));
        a[[0, 0, 0]] = 0.5;
        a[[0, 1, 1]] = -0.25;
        let g = Frame::new(a.clone(), ColorSpace::Grayscale).unwrap();
        let rgb = replicate_channels(&g).unwrap();
        assert_eq!(rgb.channels(), 3);
        let back = to_grayscale(&rgb).unwrap();
        for (x, y) in back.data().iter().zip(a.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn replicate_rejects_multichannel() {
        assert!(replicate_channels(&const_rgb(0.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn frame_rejects_channel_space_mismatch() {
        assert!(Frame::new(Array3::zeros((3, 2, 2)), ColorSpace::Grayscale).is_err());
        assert!(Frame::new(Array3::zeros((1, 2, 2)), ColorSpace::Rgb).is_err());
        assert!(Frame::new(Array3::from_elem((1, 2, 2), 1.5), ColorSpace::Grayscale).is_err());
    }

    #[test]
    fn clip_requires_uniform_frames() {
        let a = Frame::new(Array3::zeros((1, 2, 2)), ColorSpace::Grayscale).unwrap();
        let b = Frame::new(Array3::zeros((1, 3, 2)), ColorSpace::Grayscale).unwrap();
        assert!(VideoClip::new(vec![a.clone(), b]).is_err());
        assert!(VideoClip::new(vec![]).is_err());
        assert_eq!(VideoClip::new(vec![a]).unwrap().len(), 1);
    }

    proptest! {
        #[test]
        fn normalize_denormalize_round_trip(vals in proptest::collection::vec(0u8..=255, 12)) {
            let raw = Array3::from_shape_vec((3, 2, 2), vals.iter().map(|&v| f64::from(v)).collect()).unwrap();
            let frame = normalize(&raw).unwrap();
            let back = denormalize(&frame);
            prop_assert_eq!(raw.mapv(|v| v as u8), back);
        }

        #[test]
        fn grayscale_is_affine_linear(
            a in -1.0f64..1.0, b in -1.0f64..1.0, c in -1.0f64..1.0,
            d in -1.0f64..1.0, e in -1.0f64..1.0, f in -1.0f64..1.0,
            t in 0.0f64..1.0,
        ) {
            let f1 = const_rgb(a, b, c);
            let f2 = const_rgb(d, e, f);
            let blend = Frame::new(f1.data() * t + f2.data() * (1.0 - t), ColorSpace::Rgb).unwrap();
            let lhs = to_grayscale(&blend).unwrap();
            let g1 = to_grayscale(&f1).unwrap();
            let g2 = to_grayscale(&f2).unwrap();
            let rhs = g1.data() * t + g2.data() * (1.0 - t);
            for (x, y) in lhs.data().iter().zip(rhs.iter()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
