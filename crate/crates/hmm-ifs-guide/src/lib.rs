//! Doc-test shim for the mdbook guide in `book/`.
//!
//! mdbook cannot run example snippets against a dependency, so each
//! chapter is included here as module documentation and `cargo test
//! --doc` executes every Rust listing in the book. If a listing drifts
//! away from the library's API, the workspace test run fails.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/model.md")]
pub mod model {}

#[doc = include_str!("../../../book/src/operators.md")]
pub mod operators {}

#[doc = include_str!("../../../book/src/filtering.md")]
pub mod filtering {}

#[doc = include_str!("../../../book/src/derivatives.md")]
pub mod derivatives {}

#[doc = include_str!("../../../book/src/estimation.md")]
pub mod estimation {}

#[doc = include_str!("../../../book/src/diagnostics.md")]
pub mod diagnostics {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
