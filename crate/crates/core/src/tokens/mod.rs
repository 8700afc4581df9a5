//! Interaction tokens: vocabulary, quantizers, codecs and sequence grammar.

mod codec;
mod grammar;
mod quant;
mod vocab;

use thiserror::Error;

pub use codec::{
    decode_action_bins, decode_action_seq, decode_bbox, decode_bbox_bins, decode_step,
    encode_action, encode_action_seq, encode_bbox, ActionCode, BoxCode, DecodedBox, StepBins,
};
pub use grammar::{
    parse, parse_str, render, render_string, Modality, ParseError, ParseErrorKind, RenderError,
    SeqNode,
};
pub use quant::{bin_width, dequantize, quantize, Quantized};
pub use vocab::{
    all_specials, contains_vocab_token, join, join_specials, lex, specials_in, vocab_entries,
    vocab_json, Family, Special, Token, VocabEntry, BINS, STRUCTURAL_COUNT, VOCAB_SIZE,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TokenError {
    #[error("value {0} is not finite")]
    NonFinite(f64),
    #[error("invalid quantization range [{lo}, {hi}]")]
    InvalidRange { lo: f64, hi: f64 },
    #[error("bin {0} out of range 0..=255")]
    BinOutOfRange(u32),
    #[error("gripper value {0} ∉ {{0,1}}")]
    InvalidGripper(u8),
    #[error("box is not valid (min ≤ max, finite)")]
    InvalidBox,
    #[error("action sequence is empty")]
    EmptyActionSequence,
}
