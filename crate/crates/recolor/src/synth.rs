//! Synthetic video clips with analytically exact optical flow and
//! occlusion, the oracle dataset for all temporal machinery.
//!
//! A clip is a band-limited random texture transported by integer
//! per-frame translations, with solid-color sprites moving on top.
//! Integer motion keeps bilinear warping exact: warping frame m by the
//! analytic flow reproduces frame t bit-for-bit on non-occluded pixels.
//! Occlusion ground truth (sprite-revealed and out-of-frame regions) is
//! exact by construction.

use crate::data::{list_frame_files, load_png, save_png, ColorSpace, Frame, VideoClip};
use crate::error::{Error, Result};
use crate::flow::{read_flo, write_flo, FlowField, OcclusionMask};
use crate::losses::PairMap;
use ndarray::Array3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fs;
use std::path::Path;

/// Integer per-frame translation of the background.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Motion {
    Uniform { dx: i32, dy: i32 },
    /// Constant translation per segment, applied in order.
    Piecewise(Vec<Segment>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    pub frames: usize,
    pub dx: i32,
    pub dy: i32,
}

/// A solid-color rectangle moving with its own integer velocity.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpriteSpec {
    pub x0: i32,
    pub y0: i32,
    pub vx: i32,
    pub vy: i32,
    pub width: usize,
    pub height: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub height: usize,
    pub width: usize,
    pub length: usize,
    /// Coarse-noise cell size; larger cells mean smoother texture.
    pub texture_cell: usize,
    pub texture_seed: u64,
    pub palette_seed: u64,
    pub motion: Motion,
    pub sprites: Vec<SpriteSpec>,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.length == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::InvalidArgument("synth spec needs positive dimensions".into()));
        }
        if self.texture_cell == 0 {
            return Err(Error::InvalidArgument("texture_cell must be positive".into()));
        }
        let cap = (self.height.min(self.width) / 4).max(1) as i32;
        let check = |dx: i32, dy: i32| {
            if dx.abs() > cap || dy.abs() > cap {
                return Err(Error::InvalidArgument(format!(
                    "per-frame displacement ({dx}, {dy}) exceeds resolution/4 = {cap}"
                )));
            }
            Ok(())
        };
        match &self.motion {
            Motion::Uniform { dx, dy } => check(*dx, *dy)?,
            Motion::Piecewise(segs) => {
                for s in segs {
                    check(s.dx, s.dy)?;
                }
            }
        }
        Ok(())
    }

    /// Per-frame displacement before frame t+1 (t in 0..length-1).
    fn step(&self, t: usize) -> (i32, i32) {
        match &self.motion {
            Motion::Uniform { dx, dy } => (*dx, *dy),
            Motion::Piecewise(segs) => {
                let mut left = t;
                for s in segs {
                    if left < s.frames {
                        return (s.dx, s.dy);
                    }
                    left -= s.frames;
                }
                segs.last().map(|s| (s.dx, s.dy)).unwrap_or((0, 0))
            }
        }
    }
}

/// One generated clip and the exact flow/mask for every ordered pair.
pub struct SynthClip {
    pub clip: VideoClip,
    pairs: PairMap,
}

impl SynthClip {
    pub fn len(&self) -> usize {
        self.clip.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clip.is_empty()
    }

    /// Flow aligning frame m onto frame t's grid (0-based, m < t).
    pub fn flow(&self, m: usize, t: usize) -> &FlowField {
        &self.pairs[&(m, t)].0
    }

    /// Exact binary non-occlusion mask for the pair (m, t).
    pub fn mask(&self, m: usize, t: usize) -> &OcclusionMask {
        &self.pairs[&(m, t)].1
    }

    pub fn adjacent_flows(&self) -> Vec<FlowField> {
        (1..self.len()).map(|t| self.flow(t - 1, t).clone()).collect()
    }

    pub fn adjacent_masks(&self) -> Vec<OcclusionMask> {
        (1..self.len()).map(|t| self.mask(t - 1, t).clone()).collect()
    }

    /// All pairs (m, t), m < t, with flow and mask; the dense losses index
    /// into this directly.
    pub fn pair_map(&self) -> &PairMap {
        &self.pairs
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Smooth random canvas: coarse noise grid, bilinearly upsampled.
fn band_limited_canvas(h: usize, w: usize, cell: usize, rng: &mut ChaCha8Rng) -> Array3<f64> {
    let gh = h / cell + 2;
    let gw = w / cell + 2;
    let coarse = Array3::from_shape_simple_fn((3, gh, gw), || rng.gen_range(-0.85..0.85));
    let mut out = Array3::<f64>::zeros((3, h, w));
    for y in 0..h {
        let fy = y as f64 / cell as f64;
        let y0 = fy.floor() as usize;
        let wy = fy - y0 as f64;
        for x in 0..w {
            let fx = x as f64 / cell as f64;
            let x0 = fx.floor() as usize;
            let wx = fx - x0 as f64;
            for c in 0..3 {
                let v = (1.0 - wy)
                    * ((1.0 - wx) * coarse[[c, y0, x0]] + wx * coarse[[c, y0, x0 + 1]])
                    + wy * ((1.0 - wx) * coarse[[c, y0 + 1, x0]] + wx * coarse[[c, y0 + 1, x0 + 1]]);
                out[[c, y, x]] = v;
            }
        }
    }
    out
}

/// Topmost sprite covering pixel (x, y) at time t, if any.
fn sprite_at(spec: &SynthSpec, t: usize, x: i32, y: i32) -> Option<usize> {
    let mut hit = None;
    for (i, s) in spec.sprites.iter().enumerate() {
        let sx = s.x0 + s.vx * t as i32;
        let sy = s.y0 + s.vy * t as i32;
        if x >= sx && x < sx + s.width as i32 && y >= sy && y < sy + s.height as i32 {
            hit = Some(i);
        }
    }
    hit
}

/// Generate one clip with exact flows and masks; deterministic per
/// `(spec, seed)`.
pub fn make_clip(spec: &SynthSpec, seed: u64) -> Result<SynthClip> {
    spec.validate()?;
    let (h, w, t_len) = (spec.height, spec.width, spec.length);

    // Cumulative background offsets.
    let mut offsets = vec![(0i64, 0i64)];
    for t in 0..t_len.saturating_sub(1) {
        let (dx, dy) = spec.step(t);
        let (ox, oy) = offsets[t];
        offsets.push((ox + i64::from(dx), oy + i64::from(dy)));
    }
    let max_x = offsets.iter().map(|o| o.0).max().unwrap();
    let min_x = offsets.iter().map(|o| o.0).min().unwrap();
    let max_y = offsets.iter().map(|o| o.1).max().unwrap();
    let min_y = offsets.iter().map(|o| o.1).min().unwrap();
    let canvas_w = w + (max_x - min_x) as usize;
    let canvas_h = h + (max_y - min_y) as usize;

    let mut tex_rng = ChaCha8Rng::seed_from_u64(splitmix(spec.texture_seed ^ splitmix(seed)));
    let canvas = band_limited_canvas(canvas_h, canvas_w, spec.texture_cell, &mut tex_rng);

    let mut pal_rng = ChaCha8Rng::seed_from_u64(splitmix(spec.palette_seed ^ splitmix(seed ^ 0xabcd)));
    let colors: Vec<[f64; 3]> = spec
        .sprites
        .iter()
        .map(|_| {
            [
                pal_rng.gen_range(-0.9..0.9),
                pal_rng.gen_range(-0.9..0.9),
                pal_rng.gen_range(-0.9..0.9),
            ]
        })
        .collect();

    let mut frames = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let (ox, oy) = offsets[t];
        let mut data = Array3::<f64>::zeros((3, h, w));
        for y in 0..h {
            let cy = (y as i64 - oy + max_y) as usize;
            for x in 0..w {
                let cx = (x as i64 - ox + max_x) as usize;
                for c in 0..3 {
                    data[[c, y, x]] = canvas[[c, cy, cx]];
                }
            }
        }
        for (i, s) in spec.sprites.iter().enumerate() {
            let sx = s.x0 + s.vx * t as i32;
            let sy = s.y0 + s.vy * t as i32;
            for py in sy.max(0)..(sy + s.height as i32).min(h as i32) {
                for px in sx.max(0)..(sx + s.width as i32).min(w as i32) {
                    for c in 0..3 {
                        data[[c, py as usize, px as usize]] = colors[i][c];
                    }
                }
            }
        }
        frames.push(Frame::new(data, ColorSpace::Rgb)?);
    }

    // Exact flow and mask for every ordered pair.
    let mut pairs = PairMap::new();
    for t in 1..t_len {
        for m in 0..t {
            let u = (offsets[m].0 - offsets[t].0) as f64;
            let v = (offsets[m].1 - offsets[t].1) as f64;
            let flow = FlowField::uniform(h, w, u, v)?;
            let mut mask = Array3::<f64>::zeros((1, h, w));
            for y in 0..h {
                let sy = y as i64 + v as i64;
                for x in 0..w {
                    let sx = x as i64 + u as i64;
                    let in_bounds = sx >= 0 && sx < w as i64 && sy >= 0 && sy < h as i64;
                    if !in_bounds {
                        continue;
                    }
                    let same_layer = sprite_at(spec, t, x as i32, y as i32)
                        == sprite_at(spec, m, sx as i32, sy as i32);
                    if same_layer {
                        mask[[0, y, x]] = 1.0;
                    }
                }
            }
            pairs.insert((m, t), (flow, OcclusionMask::new(mask)?));
        }
    }

    Ok(SynthClip { clip: VideoClip::new(frames)?, pairs })
}

/// A concrete random spec: random motion direction, two sprites with
/// random geometry, fresh texture/palette seeds.
pub fn random_spec(height: usize, width: usize, length: usize, rng: &mut ChaCha8Rng) -> SynthSpec {
    let cap = ((height.min(width) / 8).max(1) as i32).min(3);
    let pick_step = |rng: &mut ChaCha8Rng| loop {
        let dx = rng.gen_range(-cap..=cap);
        let dy = rng.gen_range(-cap..=cap);
        if dx != 0 || dy != 0 {
            return (dx, dy);
        }
    };
    let (dx, dy) = pick_step(rng);
    let sprites = (0..2)
        .map(|_| {
            let sw = rng.gen_range(width / 6..width / 3).max(2);
            let sh = rng.gen_range(height / 6..height / 3).max(2);
            SpriteSpec {
                x0: rng.gen_range(0..width.max(2) as i32 - 1),
                y0: rng.gen_range(0..height.max(2) as i32 - 1),
                vx: rng.gen_range(-2..=2),
                vy: rng.gen_range(-2..=2),
                width: sw,
                height: sh,
            }
        })
        .collect();
    SynthSpec {
        height,
        width,
        length,
        texture_cell: 4,
        texture_seed: rng.gen(),
        palette_seed: rng.gen(),
        motion: Motion::Uniform { dx, dy },
        sprites,
    }
}

/// Write a clip as `%05d.png` frames plus adjacent flows under `flow/`.
pub fn export_clip(clip: &VideoClip, flows: &[FlowField], out_dir: &Path) -> Result<()> {
    if flows.len() + 1 != clip.len() {
        return Err(Error::InvalidArgument(format!(
            "export_clip: {} frames need {} flows, got {}",
            clip.len(),
            clip.len() - 1,
            flows.len()
        )));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let flow_dir = out_dir.join("flow");
    fs::create_dir_all(&flow_dir).map_err(|e| Error::io(&flow_dir, e))?;
    for (t, frame) in clip.frames().iter().enumerate() {
        save_png(frame, &out_dir.join(format!("{t:05}.png")))?;
    }
    for (t, flow) in flows.iter().enumerate() {
        write_flo(flow, &flow_dir.join(format!("{t:05}_{:05}.flo", t + 1)))?;
    }
    Ok(())
}

/// Read a clip directory written by [`export_clip`]: frames plus, when a
/// `flow/` subdirectory exists, the adjacent flows.
pub fn import_clip(dir: &Path) -> Result<(VideoClip, Vec<FlowField>)> {
    let files = list_frame_files(dir)?;
    let mut frames = Vec::with_capacity(files.len());
    for f in &files {
        frames.push(load_png(f)?);
    }
    let clip = VideoClip::new(frames)?;
    let flow_dir = dir.join("flow");
    let mut flows = Vec::new();
    if flow_dir.is_dir() {
        for t in 1..clip.len() {
            let name = format!("{:05}_{t:05}.flo", t - 1);
            let path = flow_dir.join(&name);
            if !path.is_file() {
                return Err(Error::Data(format!("missing flow file {}", path.display())));
            }
            flows.push(read_flo(&path)?);
        }
    }
    Ok((clip, flows))
}

/// Generate `n_clips` random clips under `out_dir/clip_%04d`.
pub fn generate_dataset(
    out_dir: &Path,
    n_clips: usize,
    height: usize,
    width: usize,
    length: usize,
    seed: u64,
) -> Result<()> {
    if n_clips == 0 {
        return Err(Error::InvalidArgument("dataset needs at least one clip".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..n_clips {
        let spec = random_spec(height, width, length, &mut rng);
        let sc = make_clip(&spec, splitmix(seed).wrapping_add(i as u64))?;
        export_clip(&sc.clip, &sc.adjacent_flows(), &out_dir.join(format!("clip_{i:04}")))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{compose, warp};
    use crate::metrics::warp_error;

    fn base_spec() -> SynthSpec {
        SynthSpec {
            height: 24,
            width: 24,
            length: 5,
            texture_cell: 4,
            texture_seed: 11,
            palette_seed: 12,
            motion: Motion::Uniform { dx: 2, dy: -1 },
            sprites: vec![SpriteSpec { x0: 4, y0: 5, vx: 1, vy: 1, width: 6, height: 5 }],
        }
    }

    #[test]
    fn warp_reproduces_frames_on_clean_pixels() {
        let sc = make_clip(&base_spec(), 3).unwrap();
        for t in 1..sc.len() {
            for m in 0..t {
                let warped = warp(sc.clip.frame(m), sc.flow(m, t)).unwrap();
                let mask = sc.mask(m, t);
                let mut max_err: f64 = 0.0;
                for y in 0..24 {
                    for x in 0..24 {
                        if mask.data()[[0, y, x]] == 0.0 {
                            continue;
                        }
                        for c in 0..3 {
                            let d = (warped.data()[[c, y, x]]
                                - sc.clip.frame(t).data()[[c, y, x]])
                            .abs();
                            max_err = max_err.max(d);
                        }
                    }
                }
                assert!(max_err < 1e-5, "pair ({m},{t}): max err {max_err}");
            }
        }
    }

    #[test]
    fn zero_motion_static_sprites_give_identity() {
        let mut spec = base_spec();
        spec.motion = Motion::Uniform { dx: 0, dy: 0 };
        spec.sprites = vec![SpriteSpec { x0: 4, y0: 5, vx: 0, vy: 0, width: 6, height: 5 }];
        let sc = make_clip(&spec, 1).unwrap();
        for t in 1..sc.len() {
            for m in 0..t {
                assert!(sc.flow(m, t).data().iter().all(|&v| v == 0.0));
                assert!(sc.mask(m, t).data().iter().all(|&v| v == 1.0));
            }
        }
    }

    #[test]
    fn self_consistent_warp_error_is_tiny() {
        let sc = make_clip(&base_spec(), 5).unwrap();
        let we = warp_error(&sc.clip, &sc.adjacent_flows(), &sc.adjacent_masks()).unwrap();
        assert!(we.value < 1e-6, "warp error {}", we.value);
        assert!(we.skipped.is_empty());
    }

    #[test]
    fn dense_flow_matches_adjacent_composition() {
        let spec = SynthSpec {
            motion: Motion::Piecewise(vec![
                Segment { frames: 2, dx: 1, dy: 1 },
                Segment { frames: 2, dx: -2, dy: 0 },
            ]),
            ..base_spec()
        };
        let sc = make_clip(&spec, 9).unwrap();
        for t in 2..sc.len() {
            for m in 0..t - 1 {
                let mut acc = sc.flow(m, m + 1).clone();
                for k in m + 1..t {
                    acc = compose(&acc, sc.flow(k, k + 1)).unwrap();
                }
                for (a, b) in acc.data().iter().zip(sc.flow(m, t).data().iter()) {
                    assert!((a - b).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn occlusion_masks_flag_sprite_and_border_regions() {
        let sc = make_clip(&base_spec(), 3).unwrap();
        let mask = sc.mask(0, 1);
        // Flow is (off0 - off1) = (-2, 1): sources x+(-2) < 0 for x < 2 are
        // out of frame... off1 = (2,-1), so u = -2, v = 1: x-2 < 0 => x < 2.
        for y in 0..24 {
            assert_eq!(mask.data()[[0, y, 0]], 0.0);
            assert_eq!(mask.data()[[0, y, 1]], 0.0);
        }
        // Sprite moved from (4,5) to (5,6): revealed/covered pixels differ
        // between layers, so some interior zeros must exist.
        let zeros = mask.data().iter().filter(|&&v| v == 0.0).count();
        assert!(zeros > 2 * 24);
    }

    #[test]
    fn clips_are_deterministic_per_spec_and_seed() {
        let a = make_clip(&base_spec(), 17).unwrap();
        let b = make_clip(&base_spec(), 17).unwrap();
        for t in 0..a.len() {
            assert_eq!(a.clip.frame(t).data(), b.clip.frame(t).data());
        }
        let c = make_clip(&base_spec(), 18).unwrap();
        assert_ne!(a.clip.frame(0).data(), c.clip.frame(0).data());
    }

    #[test]
    fn spec_rejects_excessive_motion() {
        let mut spec = base_spec();
        spec.motion = Motion::Uniform { dx: 20, dy: 0 };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn export_import_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let sc = make_clip(&base_spec(), 23).unwrap();
        let flows = sc.adjacent_flows();
        export_clip(&sc.clip, &flows, dir.path()).unwrap();

        // length + (length - 1) files.
        let pngs = list_frame_files(dir.path()).unwrap();
        assert_eq!(pngs.len(), 5);
        let flo_count = fs::read_dir(dir.path().join("flow")).unwrap().count();
        assert_eq!(flo_count, 4);

        let (clip, flows_back) = import_clip(dir.path()).unwrap();
        assert_eq!(clip.len(), 5);
        for (a, b) in flows.iter().zip(flows_back.iter()) {
            for (x, y) in a.data().iter().zip(b.data().iter()) {
                assert_eq!((*x as f32).to_bits(), (*y as f32).to_bits());
            }
        }
        for t in 0..clip.len() {
            for (x, y) in clip.frame(t).data().iter().zip(sc.clip.frame(t).data().iter()) {
                assert!((x - y).abs() <= 1.0 / 255.0 + 1e-9);
            }
        }
    }
}
