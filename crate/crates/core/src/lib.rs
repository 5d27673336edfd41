//! Federated learning over an analog multiple-access channel with sparse,
//! freshness-aware gradient uploads.
//!
//! Clients run local SGD and upload `k` of `d` accumulated-gradient entries.
//! [`selection`] decides which entries ([`selection::fair_k`] and the
//! baselines). [`channel`] superimposes the uploads over a fading, noisy
//! uplink. [`training`] runs the round loop. [`aou_markov`] predicts the
//! staleness law of FAIR-k, [`analysis`] estimates smoothness constants and
//! evaluates convergence bounds, and [`harness`] drives it all from a TOML
//! config (the `fairk` binary).
//!
//! The guide in `book/` walks through each part with runnable examples.

pub mod analysis;
pub mod aou_markov;
pub mod channel;
pub mod error;
pub mod harness;
pub mod rng;
pub mod selection;
pub mod training;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/selection.md")]
    struct Selection;
    #[doc = include_str!("../../../book/src/staleness.md")]
    struct Staleness;
    #[doc = include_str!("../../../book/src/channel.md")]
    struct Channel;
    #[doc = include_str!("../../../book/src/training.md")]
    struct Training;
    #[doc = include_str!("../../../book/src/analysis.md")]
    struct Analysis;
    #[doc = include_str!("../../../book/src/experiments.md")]
    struct Experiments;
}
