//! The recurrent hybrid generator: a U-Net mainstream fused at the
//! bottleneck with a global feature extractor (current grayscale frame)
//! and a placeholder feature extractor (warped grayscale of the previous
//! output), plus non-local blocks in the decoder.

use super::layers::{Conv2d, InstanceNorm, NonLocalBlock, LEAKY_SLOPE};
use super::params::{Bound, ParamStore};
use crate::autodiff::{Tape, Var};
use crate::data::{ColorSpace, Frame, VideoClip, LUMA_WEIGHTS};
use crate::error::{Error, Result};
use crate::flow::FlowField;
use ndarray::{Array3, Ix3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    /// Mainstream stem width; encoder level i carries `base_channels * 2^i`.
    pub base_channels: usize,
    /// Number of stride-2 downsamplings in the mainstream encoder (and in
    /// each feature extractor, so their outputs meet at the bottleneck).
    pub depth: usize,
    /// Extractor stem width; stage i carries `extractor_base * 2^i`.
    pub extractor_base: usize,
    /// Channel count of each extractor after the final reduction conv.
    pub extractor_channels: usize,
    /// Residual blocks at the deepest extractor scale.
    pub extractor_res_blocks: usize,
    /// Decoder levels (spatial downscale exponents) that carry a non-local
    /// block; `depth` means right after the bottleneck fusion.
    pub nonlocal_positions: Vec<usize>,
    /// (H, W); both must be divisible by `2^depth`.
    pub input_resolution: (usize, usize),
    pub use_gfe: bool,
    pub use_pfe: bool,
}

impl GeneratorConfig {
    /// Laptop-scale defaults used throughout the test suite.
    pub fn desk(height: usize, width: usize) -> Self {
        GeneratorConfig {
            base_channels: 16,
            depth: 3,
            extractor_base: 8,
            extractor_channels: 32,
            extractor_res_blocks: 1,
            nonlocal_positions: vec![2],
            input_resolution: (height, width),
            use_gfe: true,
            use_pfe: true,
        }
    }

    /// A minimal configuration for gradient checks on 4x4 frames.
    pub fn tiny(height: usize, width: usize) -> Self {
        GeneratorConfig {
            base_channels: 4,
            depth: 1,
            extractor_base: 4,
            extractor_channels: 4,
            extractor_res_blocks: 1,
            nonlocal_positions: vec![0],
            input_resolution: (height, width),
            use_gfe: true,
            use_pfe: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::Config("generator depth must be >= 1".into()));
        }
        if self.base_channels == 0 || self.extractor_base == 0 || self.extractor_channels == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        let div = 1 << self.depth;
        let (h, w) = self.input_resolution;
        if h % div != 0 || w % div != 0 {
            return Err(Error::Config(format!(
                "resolution {h}x{w} not divisible by 2^depth = {div}"
            )));
        }
        if h / div == 0 || w / div == 0 {
            return Err(Error::Config("bottleneck would be empty".into()));
        }
        for &p in &self.nonlocal_positions {
            if p > self.depth {
                return Err(Error::Config(format!(
                    "non-local position {p} exceeds depth {}",
                    self.depth
                )));
            }
        }
        Ok(())
    }

    fn bottleneck_channels(&self) -> usize {
        self.base_channels << self.depth
    }
}

struct ResBlock {
    conv1: Conv2d,
    norm1: InstanceNorm,
    conv2: Conv2d,
    norm2: InstanceNorm,
}

impl ResBlock {
    fn new(store: &mut ParamStore, name: &str, channels: usize, rng: &mut ChaCha8Rng) -> Self {
        ResBlock {
            conv1: Conv2d::new(store, &format!("{name}.conv1"), channels, channels, 3, 1, 1, true, rng),
            norm1: InstanceNorm::new(store, &format!("{name}.norm1"), channels),
            conv2: Conv2d::new(store, &format!("{name}.conv2"), channels, channels, 3, 1, 1, true, rng),
            norm2: InstanceNorm::new(store, &format!("{name}.norm2"), channels),
        }
    }

    fn forward(&self, tape: &mut Tape, b: &Bound, x: Var) -> Var {
        let y = self.conv1.forward(tape, b, x);
        let y = self.norm1.forward(tape, b, y);
        let y = tape.leaky_relu(y, LEAKY_SLOPE);
        let y = self.conv2.forward(tape, b, y);
        let y = self.norm2.forward(tape, b, y);
        let y = tape.add(x, y);
        tape.leaky_relu(y, LEAKY_SLOPE)
    }
}

/// Fully-downsampling residual CNN used for both feature extractors.
/// Stride-2 convs replace pooling; a final conv reduces the channel count.
struct Extractor {
    stem: Conv2d,
    stages: Vec<(Conv2d, InstanceNorm)>,
    res_blocks: Vec<ResBlock>,
    reduce: Conv2d,
}

impl Extractor {
    fn new(store: &mut ParamStore, name: &str, cfg: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Self {
        let eb = cfg.extractor_base;
        let stem = Conv2d::new(store, &format!("{name}.stem"), 3, eb, 3, 1, 1, true, rng);
        let mut stages = Vec::new();
        for i in 1..=cfg.depth {
            let c_in = eb << (i - 1);
            let c_out = eb << i;
            stages.push((
                Conv2d::new(store, &format!("{name}.down{i}"), c_in, c_out, 3, 2, 1, true, rng),
                InstanceNorm::new(store, &format!("{name}.down{i}.norm"), c_out),
            ));
        }
        let deep = eb << cfg.depth;
        let res_blocks = (0..cfg.extractor_res_blocks)
            .map(|i| ResBlock::new(store, &format!("{name}.res{i}"), deep, rng))
            .collect();
        let reduce = Conv2d::new(
            store,
            &format!("{name}.reduce"),
            deep,
            cfg.extractor_channels,
            1,
            1,
            0,
            true,
            rng,
        );
        Extractor { stem, stages, res_blocks, reduce }
    }

    fn forward(&self, tape: &mut Tape, b: &Bound, x: Var) -> Var {
        let mut y = self.stem.forward(tape, b, x);
        y = tape.leaky_relu(y, LEAKY_SLOPE);
        for (conv, norm) in &self.stages {
            y = conv.forward(tape, b, y);
            y = norm.forward(tape, b, y);
            y = tape.leaky_relu(y, LEAKY_SLOPE);
        }
        for block in &self.res_blocks {
            y = block.forward(tape, b, y);
        }
        let y = self.reduce.forward(tape, b, y);
        tape.leaky_relu(y, LEAKY_SLOPE)
    }
}

struct DecStage {
    conv: Conv2d,
    norm: InstanceNorm,
    attn: Option<NonLocalBlock>,
}

/// Recurrent hybrid colorization generator.
pub struct Generator {
    cfg: GeneratorConfig,
    store: ParamStore,
    stem: Conv2d,
    enc: Vec<(Conv2d, InstanceNorm)>,
    bott: (Conv2d, InstanceNorm),
    gfe: Option<Extractor>,
    pfe: Option<Extractor>,
    fuse: (Conv2d, InstanceNorm),
    fusion_attn: Option<NonLocalBlock>,
    dec: Vec<DecStage>, // deepest level first
    out: Conv2d,
}

impl Generator {
    pub fn new(cfg: GeneratorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = cfg.base_channels;

        let stem = Conv2d::new(&mut store, "main.stem", 3, base, 3, 1, 1, true, &mut rng);
        let mut enc = Vec::new();
        for i in 1..=cfg.depth {
            let c_in = base << (i - 1);
            let c_out = base << i;
            enc.push((
                Conv2d::new(&mut store, &format!("main.enc{i}"), c_in, c_out, 3, 2, 1, true, &mut rng),
                InstanceNorm::new(&mut store, &format!("main.enc{i}.norm"), c_out),
            ));
        }
        let cb = cfg.bottleneck_channels();
        let bott = (
            Conv2d::new(&mut store, "main.bott", cb, cb, 3, 1, 1, true, &mut rng),
            InstanceNorm::new(&mut store, "main.bott.norm", cb),
        );

        let gfe = cfg.use_gfe.then(|| Extractor::new(&mut store, "gfe", &cfg, &mut rng));
        let pfe = cfg.use_pfe.then(|| Extractor::new(&mut store, "pfe", &cfg, &mut rng));

        let extra = cfg.extractor_channels
            * (usize::from(cfg.use_gfe) + usize::from(cfg.use_pfe));
        let fuse = (
            Conv2d::new(&mut store, "main.fuse", cb + extra, cb, 1, 1, 0, true, &mut rng),
            InstanceNorm::new(&mut store, "main.fuse.norm", cb),
        );
        let fusion_attn = cfg
            .nonlocal_positions
            .contains(&cfg.depth)
            .then(|| NonLocalBlock::new(&mut store, "main.attn_fuse", cb, &mut rng));

        let mut dec = Vec::new();
        for level in (0..cfg.depth).rev() {
            let c_in = (base << (level + 1)) + (base << level);
            let c_out = base << level;
            let name = format!("main.dec{level}");
            let attn = cfg
                .nonlocal_positions
                .contains(&level)
                .then(|| NonLocalBlock::new(&mut store, &format!("{name}.attn"), c_out, &mut rng));
            dec.push(DecStage {
                conv: Conv2d::new(&mut store, &name, c_in, c_out, 3, 1, 1, true, &mut rng),
                norm: InstanceNorm::new(&mut store, &format!("{name}.norm"), c_out),
                attn,
            });
        }
        let out = Conv2d::new(&mut store, "main.out", base, 3, 3, 1, 1, true, &mut rng);

        Ok(Generator {
            cfg,
            store,
            stem,
            enc,
            bott,
            gfe,
            pfe,
            fuse,
            fusion_attn,
            dec,
            out,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        self.store.bind(tape, trainable)
    }

    /// One generator application on a batch of grayscale inputs.
    ///
    /// `x_main` feeds the mainstream and the global feature extractor;
    /// `x_pfe` feeds the placeholder feature extractor. Both are
    /// `[N, 1, H, W]` and get replicated to three channels internally.
    /// The output is `[N, 3, H, W]` in `[-1, 1]`.
    pub fn forward_batch(&self, tape: &mut Tape, b: &Bound, x_main: Var, x_pfe: Var) -> Var {
        let main3 = replicate_var(tape, x_main);
        let e0 = self.stem.forward(tape, b, main3);
        let e0 = tape.leaky_relu(e0, LEAKY_SLOPE);
        let mut skips = vec![e0];
        for (conv, norm) in &self.enc {
            let prev = *skips.last().unwrap();
            let y = conv.forward(tape, b, prev);
            let y = norm.forward(tape, b, y);
            skips.push(tape.leaky_relu(y, LEAKY_SLOPE));
        }
        let deepest = *skips.last().unwrap();
        let y = self.bott.0.forward(tape, b, deepest);
        let y = self.bott.1.forward(tape, b, y);
        let mut y = tape.leaky_relu(y, LEAKY_SLOPE);

        let mut fused = vec![y];
        if let Some(gfe) = &self.gfe {
            fused.push(gfe.forward(tape, b, main3));
        }
        if let Some(pfe) = &self.pfe {
            let pfe3 = replicate_var(tape, x_pfe);
            fused.push(pfe.forward(tape, b, pfe3));
        }
        if fused.len() > 1 {
            y = tape.concat_axis(1, &fused);
        }
        let y = self.fuse.0.forward(tape, b, y);
        let y = self.fuse.1.forward(tape, b, y);
        let mut y = tape.leaky_relu(y, LEAKY_SLOPE);
        if let Some(attn) = &self.fusion_attn {
            y = attn.forward(tape, b, y);
        }

        for (stage, level) in self.dec.iter().zip((0..self.cfg.depth).rev()) {
            let up = tape.upsample_nearest2(y);
            let cat = tape.concat_axis(1, &[up, skips[level]]);
            let z = stage.conv.forward(tape, b, cat);
            let z = stage.norm.forward(tape, b, z);
            y = tape.leaky_relu(z, LEAKY_SLOPE);
            if let Some(attn) = &stage.attn {
                y = attn.forward(tape, b, y);
            }
        }
        let y = self.out.forward(tape, b, y);
        tape.tanh(y)
    }

    fn check_input(&self, frame: &Frame) -> Result<()> {
        if frame.color_space() != ColorSpace::Grayscale {
            return Err(Error::InvalidArgument("generator input must be grayscale".into()));
        }
        let (h, w) = self.cfg.input_resolution;
        if (frame.height(), frame.width()) != (h, w) {
            return Err(Error::ShapeMismatch(format!(
                "input {}x{} does not match configured resolution {h}x{w}",
                frame.height(),
                frame.width()
            )));
        }
        Ok(())
    }

    /// Colorize a single frame: the image-colorization mode. The
    /// placeholder extractor receives the grayscale input itself.
    pub fn forward_first(&self, x: &Frame) -> Result<Frame> {
        self.forward_step(x, x)
    }

    /// Colorize one frame given the warped grayscale of the previous output.
    pub fn forward_step(&self, x: &Frame, i_t: &Frame) -> Result<Frame> {
        self.check_input(x)?;
        self.check_input(i_t)?;
        let mut tape = Tape::no_grad();
        let b = self.bind(&mut tape, false);
        let xv = frame_to_var(&mut tape, x);
        let iv = frame_to_var(&mut tape, i_t);
        let y = self.forward_batch(&mut tape, &b, xv, iv);
        var_to_frame(&tape, y)
    }

    /// Run the recurrence over a grayscale clip with `clip.len() - 1` flows.
    /// Output frame t depends only on inputs up to t (Markov inference).
    pub fn colorize_clip(&self, clip: &VideoClip, flows: &[FlowField]) -> Result<VideoClip> {
        if clip.color_space() != ColorSpace::Grayscale {
            return Err(Error::InvalidArgument("colorize_clip expects a grayscale clip".into()));
        }
        for f in clip.frames() {
            self.check_input(f)?;
        }
        let mut tape = Tape::no_grad();
        let b = self.bind(&mut tape, false);
        let xs: Vec<Var> = clip.frames().iter().map(|f| frame_to_var(&mut tape, f)).collect();
        let fwd = self.colorize_clip_vars(&mut tape, &b, &xs, flows)?;
        let frames = fwd
            .outputs
            .iter()
            .map(|&v| var_to_frame(&tape, v))
            .collect::<Result<Vec<_>>>()?;
        VideoClip::new(frames)
    }

    /// Graph-level recurrence used by both inference and training.
    ///
    /// `xs` are `[1, 1, H, W]` grayscale nodes. For t > 1 the placeholder
    /// input is the flow-warped grayscale of the previous output, so
    /// gradients reach earlier frames through the recurrence.
    pub fn colorize_clip_vars(
        &self,
        tape: &mut Tape,
        b: &Bound,
        xs: &[Var],
        flows: &[FlowField],
    ) -> Result<ClipForward> {
        if xs.is_empty() {
            return Err(Error::InvalidArgument("empty clip".into()));
        }
        if flows.len() != xs.len() - 1 {
            return Err(Error::InvalidArgument(format!(
                "clip of length {} needs {} flows, got {}",
                xs.len(),
                xs.len() - 1,
                flows.len()
            )));
        }
        let mut outputs = Vec::with_capacity(xs.len());
        let mut warp_count = 0;
        let first = self.forward_batch(tape, b, xs[0], xs[0]);
        outputs.push(first);
        for (t, &x) in xs.iter().enumerate().skip(1) {
            let prev_gray = rgb_to_gray_var(tape, outputs[t - 1]);
            let i_t = tape.warp_bilinear(prev_gray, &flows[t - 1]);
            warp_count += 1;
            outputs.push(self.forward_batch(tape, b, x, i_t));
        }
        Ok(ClipForward { outputs, warp_count })
    }
}

/// Outputs of one recurrent clip pass plus instrumentation.
pub struct ClipForward {
    pub outputs: Vec<Var>,
    pub warp_count: usize,
}

/// Register a frame as a `[1, C, H, W]` constant node.
pub fn frame_to_var(tape: &mut Tape, frame: &Frame) -> Var {
    let (c, h, w) = (frame.channels(), frame.height(), frame.width());
    let data = frame
        .data()
        .to_owned()
        .into_shape_with_order((1, c, h, w))
        .unwrap()
        .into_dyn();
    tape.constant(data)
}

/// Read a `[1, 3, H, W]` node back into an RGB frame.
pub fn var_to_frame(tape: &Tape, v: Var) -> Result<Frame> {
    let val = tape.value(v);
    let s = val.shape();
    if s.len() != 4 || s[0] != 1 || s[1] != 3 {
        return Err(Error::ShapeMismatch(format!("expected [1,3,H,W], got {s:?}")));
    }
    let data: Array3<f64> = val
        .to_owned()
        .into_shape_with_order((3, s[2], s[3]))
        .unwrap()
        .into_dimensionality::<Ix3>()
        .unwrap();
    debug_assert!(data.iter().all(|v| v.abs() <= 1.0));
    Ok(Frame::trusted(data, ColorSpace::Rgb))
}

/// Repeat the single channel of `[N, 1, H, W]` three times (differentiable).
pub fn replicate_var(tape: &mut Tape, x: Var) -> Var {
    debug_assert_eq!(tape.value(x).shape()[1], 1);
    tape.concat_axis(1, &[x, x, x])
}

/// BT.601 grayscale of `[N, 3, H, W]` as a graph op (differentiable).
pub fn rgb_to_gray_var(tape: &mut Tape, x: Var) -> Var {
    debug_assert_eq!(tape.value(x).shape()[1], 3);
    let r = tape.narrow(x, 1, 0, 1);
    let g = tape.narrow(x, 1, 1, 1);
    let bch = tape.narrow(x, 1, 2, 1);
    let r = tape.scale(r, LUMA_WEIGHTS[0]);
    let g = tape.scale(g, LUMA_WEIGHTS[1]);
    let bch = tape.scale(bch, LUMA_WEIGHTS[2]);
    let rg = tape.add(r, g);
    tape.add(rg, bch)
}
