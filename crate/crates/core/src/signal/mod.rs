//! Signal ingestion, preprocessing and the on-disk segment format.

mod batch;
mod compand;
pub mod filter;
mod format;
mod manifest;
mod preprocess;
mod resample;
pub mod synth;

pub use batch::SegmentBatch;
pub use compand::{compand_in_place, mu_law_compand, mu_law_expand, MU};
pub use filter::{BiquadCascade, FilterConfig};
pub use format::{decode_segment, encode_segment, read_segment, write_segment, SegmentFile, SegmentHeader};
pub use manifest::{DatasetManifest, Split, SplitEntry};
pub use preprocess::{preprocess, PreprocessConfig};
pub use resample::{resample, resample_linear};
pub use synth::{synth_dataset, ClassRecipe, SynthSpec};
