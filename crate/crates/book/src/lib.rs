//! mdbook cannot run listings that depend on workspace crates, so each
//! chapter is pulled in as a doc comment and `cargo test --doc` runs it.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/autodiff.md")]
pub mod autodiff {}
#[doc = include_str!("../../../book/src/adaptation.md")]
pub mod adaptation {}
#[doc = include_str!("../../../book/src/network.md")]
pub mod network {}
#[doc = include_str!("../../../book/src/data.md")]
pub mod data {}
#[doc = include_str!("../../../book/src/metrics.md")]
pub mod metrics {}
#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
