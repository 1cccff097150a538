//! Anchor discovery for relative representations.
//!
//! Given two embedding spaces and a handful of known parallel anchors, learn
//! the target-side counterparts of a larger source anchor set, then measure
//! how well the resulting relative spaces align.

pub mod cli;
pub mod error;
pub mod eval;
pub mod io;
pub mod optimizer;
pub mod space;
pub mod stitch;
pub mod synth;
pub mod transport;

pub use error::{Error, Result};
pub use space::{
    cosine_topk, normalize_rows, relative_projection, AnchorSet, EmbeddingSpace, ParallelSeed,
    RelativeRepresentation,
};
