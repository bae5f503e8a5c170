//! Per-view multiplane image fields for few-shot novel view synthesis.
//!
//! Each input view anchors its own stack of fronto-parallel planes whose
//! color and opacity come from a small MLP. Target rays are warped onto the
//! planes by plane-induced homographies and alpha-composited front to back.
//! Training fits every MPI to every input view and, after a warm-up, asks
//! all MPIs to agree on color and depth along rays from unseen poses.
//!
//! ```no_run
//! use permpi::scene::{gen_synthetic, preset};
//! use permpi::trainer::{train, TrainConfig, TrainOutput};
//!
//! let scene = gen_synthetic(&preset("two-plane")?, 0, None)?.scene;
//! let cfg = TrainConfig { epochs: 2, planes: 16, width: 64, ..TrainConfig::default() };
//! let (state, log) = train(&scene, &cfg, &TrainOutput::default())?;
//! # Ok::<(), permpi::Error>(())
//! ```

pub mod analysis;
pub mod cli;
pub mod error;
pub mod field;
pub mod geometry;
pub mod losses;
pub mod renderer;
pub mod scene;
pub mod trainer;

pub use error::{Error, Result};
