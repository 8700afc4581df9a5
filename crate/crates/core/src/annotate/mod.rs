//! Sample builders: turn an annotated episode into prompt/answer records.

mod assets;
mod builders;
mod client;
mod diversify;
mod keyframe;
mod nouns;
mod qa;
mod templates;
mod whatif;

pub use assets::*;
pub use builders::*;
pub use client::*;
pub use diversify::*;
pub use keyframe::*;
pub use nouns::*;
pub use qa::*;
pub use templates::*;
pub use whatif::*;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::tokens::{ParseError, RenderError, TokenError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnnotateError {
    #[error("instruction is empty")]
    EmptyInstruction,
    #[error("detection {0} does not exist")]
    MissingDetection(usize),
    #[error("no box for detection {0}")]
    MissingBox(usize),
    #[error("frame {t} out of range for {n} frames")]
    FrameOutOfRange { t: usize, n: usize },
    #[error("episode needs at least {0} frames")]
    TooFewFrames(usize),
    #[error("episode has no actions")]
    NoActions,
    #[error("missing asset: {0}")]
    MissingAsset(String),
    #[error("text contains a reserved token: {0:?}")]
    ReservedText(String),
    #[error("slot {0} has no value")]
    UnfilledSlot(&'static str),
    #[error("invalid demonstration count {0}; need 2 or 3")]
    DemonstrationCount(usize),
    #[error("token encoding failed: {0}")]
    Token(#[from] TokenError),
    #[error("render failed: {0}")]
    Render(#[from] RenderError),
    #[error("built text does not parse: {0}")]
    Parse(#[from] ParseError),
}

/// Seed for one builder of one episode, independent of processing order.
pub fn derive_seed(base: u64, parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("sha256 output has 32 bytes"))
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
