//! Generator and discriminator networks for adversarial text generation.

mod cnn;
mod generator;

pub use cnn::{CnnConfig, CnnInput, CnnNet, CnnVars, Head};
pub use generator::{
    Conditioning, ForcedLogits, GenConfig, GenState, GenVars, GeneratorNet, GumbelBatch, Sample, SampleMode,
    StepInput,
};
