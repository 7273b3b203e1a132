//! Preprocessing: resampling, imputation, normalization, snippets, segments,
//! FFT features, and discriminator pair sampling.

mod fft;
mod pairs;
mod series;
mod snippet;

pub use fft::{fft_in_place, fft_magnitude, magnitude_spectrum};
pub use pairs::{sample_discriminator_pairs, shuffle_pairs, DiscriminatorPair, SegmentRef};
pub use series::{
    denorm, impute_local_average, resample, resample_onto, znorm, ChannelSeries, ImputeStats, NormStats,
    SubjectRecord, HR_CHANNEL, PPG_CHANNEL,
};
pub use snippet::{
    align, discretize, prepare, segment, AlignedRecord, PipelineConfig, PreparedDataset, PreparedSubject, Segment,
    TimeSnippet,
};
