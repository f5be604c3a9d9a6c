//! Encoder-decoder network, its configuration and parameter store.

mod config;
mod network;
mod params;
mod quantile;

pub use config::ModelConfig;
pub use network::{
    architecture, architecture_table, attention_gate, attention_hidden, extract_quantile, forward, forward_on_tape,
    init_parameters, interleave_quantiles, quantile_channels, LayerSpec, ATTENTION_REDUCTION, LEAKY_SLOPE,
    SPATIAL_KERNEL,
};
pub use params::{ParamVars, Parameters};
pub use quantile::QuantileSpec;
