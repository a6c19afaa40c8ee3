//! Composite units shared by the encoder, decoder and converter.

mod attention;
mod conv_block;
mod positional;

pub use attention::{AttentionBlock, AttentionRecord, Window, WINDOW_WIDTH};
pub use conv_block::{ConvBlock, CONV_GAIN};
pub use positional::{
    inverse_softplus, position_rates, positional_encoding, RateHeads, SpeakerRates,
};
