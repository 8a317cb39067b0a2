//! Shared vision-language representation (SVLR) for joint visual
//! recognition and visual question answering.
//!
//! Words and image regions are embedded into a common space by a word
//! network `g` and two region networks `f_o` (objects) and `f_a`
//! (attributes). Recognition scores, VQA attention and zero-shot answer
//! scores are all inner products in that space, so training one task moves
//! the representation used by the others.

pub mod autodiff;
pub mod config;
pub mod error;
pub mod evalkit;
pub mod gradsuite;
pub mod recognition;
pub mod svlr;
pub mod synthworld;
pub mod trainer;
pub mod vqa;

pub use error::{Error, Result};
