//! Runs the code samples of the guide in `book/` as doc-tests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/signals.md")]
pub mod signals {}
#[doc = include_str!("../../../book/src/encoders.md")]
pub mod encoders {}
#[doc = include_str!("../../../book/src/fusion.md")]
pub mod fusion {}
#[doc = include_str!("../../../book/src/metrics.md")]
pub mod metrics {}
#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}
#[doc = include_str!("../../../book/src/experiment.md")]
pub mod experiment {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
