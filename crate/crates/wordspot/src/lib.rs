//! Segmentation-free word spotting for handwritten document pages.
//!
//! The pipeline has three stages: candidate word regions are proposed by
//! grouping connected components along estimated text lines ([`imaging`],
//! [`proposals`]), every candidate is embedded into PHOC attribute space by a
//! convolutional network that runs its trunk once per tile and pools each
//! region from the shared feature map ([`phoc`], [`net`]), and queries are
//! answered by nearest-neighbour ranking over the stored embeddings
//! ([`retrieval`]). The [`harness`] module supplies dataset I/O, a synthetic
//! corpus renderer and cross-validation folds; [`cli`] wires everything into
//! subcommands.

pub mod cli;
pub mod error;
pub mod harness;
pub mod imaging;
pub mod net;
pub mod par;
pub mod phoc;
pub mod proposals;
pub mod retrieval;

pub use error::{Error, Result};
