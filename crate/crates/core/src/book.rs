//! Doc-test shims for the mdbook guide: every chapter is included as a doc
//! comment so its code fences run under `cargo test --doc`, keeping the
//! book and the crate in sync.

#[doc = include_str!("../../../book/src/introduction.md")]
mod introduction {}

#[doc = include_str!("../../../book/src/data.md")]
mod data_pipeline {}

#[doc = include_str!("../../../book/src/decomposition.md")]
mod decomposition {}

#[doc = include_str!("../../../book/src/model.md")]
mod model {}

#[doc = include_str!("../../../book/src/training.md")]
mod training {}

#[doc = include_str!("../../../book/src/evaluation.md")]
mod evaluation {}

#[doc = include_str!("../../../book/src/cli.md")]
mod cli {}
