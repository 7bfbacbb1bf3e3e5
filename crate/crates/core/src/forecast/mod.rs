pub mod decomp;
pub mod freq;
pub mod model;

pub use decomp::{decompose, moving_average_matrix, DecompositionOutput};
pub use freq::{freq_block, max_modes, DftBasis, FreqBlockParams};
pub use model::{
    forward, vanilla_forward, Architecture, Forecast, ForecastModel, ForecasterConfig, WindowNorm, DECODER_BLOCKS,
    ENCODER_BLOCKS, NORMALIZATION_TAG,
};
