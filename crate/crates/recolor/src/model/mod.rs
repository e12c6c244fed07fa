//! Networks: generator, patch critic, and the frozen perceptual net.

pub mod discriminator;
pub mod generator;
pub mod layers;
pub mod params;
pub mod perceptual;

pub use discriminator::{
    sigma_estimate, spectral_normalize, DiscriminatorConfig, PatchDiscriminator, PowerIterState,
};
pub use generator::{
    frame_to_var, replicate_var, rgb_to_gray_var, var_to_frame, ClipForward, Generator,
    GeneratorConfig,
};
pub use params::{Bound, ParamId, ParamStore};
pub use perceptual::{PerceptualNet, DEFAULT_PERCEPTUAL_SEED};
