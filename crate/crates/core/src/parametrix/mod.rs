//! Parametrix kernel, singular time-space convolution, the truncated series
//! for the transition density and the Beta/Gamma envelopes that control it.

mod bounds;
mod kernel;
mod scheme;
mod series;

pub use bounds::{
    alpha_q, beta_function, lemma1_bound, lemma1_bound_product, lemma1_log_bound, lemma1_tail, lemma4_difference_bound,
};
pub use kernel::kernel_h;
pub use scheme::{ConvolutionScheme, EnvelopeConstants, SpaceRule};
pub use series::{
    parametrix_series, parametrix_series_batch, time_space_convolve, ConvolutionResult, SeriesResult, SpaceTimeFn,
};
