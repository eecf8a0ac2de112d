//! Few-shot semantic segmentation with superpixel pseudo-class
//! self-supervision.
//!
//! The pipeline: a prototype-based segmenter (patch-linear feature extractor,
//! masked average pooling, cosine comparison against foreground and
//! background prototypes) trained episodically with a combined objective —
//! the supervised query loss plus an alpha-weighted self-supervised loss on
//! pseudo-classes sampled from superpixels in the query background.
//!
//! Modules follow the data flow: [`grid`] and [`io`] hold the 2-D containers
//! and PNG formats, [`superpixel`] produces image partitions, [`pseudoclass`]
//! turns them into the self-supervision signal, [`model`] and [`train`]
//! implement the segmenter and its manual-gradient optimization, [`data`]
//! supplies datasets and episodic sampling, [`eval`] the meanIoU protocol,
//! and [`ablation`] the scripted comparison grids.
//!
//! Data-parallel loops run on rayon when the default `parallel` feature is
//! enabled and fall back to sequential execution otherwise; results are
//! bit-identical either way.

pub mod ablation;
pub mod data;
pub mod error;
pub mod eval;
pub mod exec;
pub mod grid;
pub mod io;
pub mod model;
pub mod pseudoclass;
pub mod superpixel;
pub mod train;

pub use error::{Error, Result};
