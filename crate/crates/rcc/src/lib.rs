//! Ranked caption chains for video-text alignment experiments.
//!
//! The crate covers the full loop of a listwise preference-tuning study on
//! video captions, end to end but at desk scale:
//!
//! ```text
//!  seed captions ──chaingen──▶ corruption chains ──transform──▶ MCQ / YNQ
//!        │                          │                              │
//!        │                      (audit)                            │
//!        ▼                          ▼                              ▼
//!   llmgateway ◀─────────── train (toy policy + ranking losses) ◀──┘
//!        │                          │
//!        ▼                          ▼
//!     evalkit ◀────────────── checkpoints, traces
//! ```
//!
//! * [`chaingen`] grows a caption into a chain of progressively more
//!   corrupted versions, each step applying one typed error on top of all
//!   previous ones, and audits the result.
//! * [`rankloss`] implements the ranking objectives (listwise, pairwise,
//!   winner-vs-rest, hinge, smooth pairwise) with hand-derived gradients.
//! * [`policy`] / [`train`] provide a small log-linear sequence model and
//!   an optimizer loop good enough to study the objectives' behavior.
//! * [`transform`] turns chains into multiple-choice and yes/no question
//!   records; [`evalkit`] scores captions, rankings, and judge agreement.
//! * [`gateway`] is the single place that talks to a completion backend,
//!   with a scripted deterministic mock for offline runs.
//!
//! Everything is deterministic given a seed: datasets, checkpoints, and
//! traces are byte-identical across runs and thread counts. Start with the
//! `examples/` directory for runnable tours of each piece.

pub mod chaingen;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod encode;
pub mod error;
pub mod evalkit;
pub mod gateway;
pub mod optim;
pub mod policy;
pub mod rankloss;
pub mod synth;
pub mod taxonomy;
pub mod train;
pub mod transform;

pub use error::{Error, Result};
pub use rankloss::{LossConfig, Objective, ScoredChain};
