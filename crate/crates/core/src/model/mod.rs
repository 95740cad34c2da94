//! Generator, discriminator and perceptual feature extractor.

mod discriminator;
mod extractor;
mod generator;
mod layers;

pub use discriminator::{build_discriminator, Discriminator, DiscriminatorSpec};
pub use extractor::{
    build_extractor, save_extractor_weights, ExtractorLayer, FeatureExtractor, FeatureExtractorSpec,
};
pub use generator::{
    build_generator, Generator, GeneratorOutput, GeneratorSpec, GeneratorVars, MIN_LR_SIDE,
    SEG_PREFIX,
};
pub use layers::{apply_bn_updates, Ctx, Mode, BN_EPS, BN_MOMENTUM};
