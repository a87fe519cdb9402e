//! Feature alignment: paired text–gesture sequence construction with shared
//! positions, masking, an MLP projector into the LM embedding space, and the
//! joint masked-prediction objective that trains it.

mod model;
mod pair;
mod train;
pub mod transcript;

pub use model::{fa_loss, AlignConfig, AlignMeta, AlignModel, FaLoss, GestureHead, Projector};
pub use pair::{build_pair, mask_tokens, PairedExample};
pub use train::{masking_sweep, train_alignment, validation_loss, AlignLog};
pub use transcript::{
    assign_positions, load_transcripts, save_transcripts, sub_token_intervals, whole_word,
    SubTokenSplitter, TimedTranscript, TimedWord,
};
