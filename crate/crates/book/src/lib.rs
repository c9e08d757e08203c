//! The guide under `book/`, compiled so `cargo test` runs its listings as
//! doctests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/scenario.md")]
pub mod scenario {}

#[doc = include_str!("../../../book/src/observer.md")]
pub mod observer {}

#[doc = include_str!("../../../book/src/single_interval.md")]
pub mod single_interval {}

#[doc = include_str!("../../../book/src/aggregation.md")]
pub mod aggregation {}

#[doc = include_str!("../../../book/src/clustering.md")]
pub mod clustering {}

#[doc = include_str!("../../../book/src/pipeline.md")]
pub mod pipeline {}
