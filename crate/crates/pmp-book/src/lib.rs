//! The guide's chapters, compiled as rustdoc modules so that every Rust
//! code fence in `book/` runs as a doctest under `cargo test`.
//!
//! The crate exports nothing. Its entire job is to fail the build when
//! the book and the library drift apart. Edit chapters in `book/src/`;
//! this file only mirrors the chapter list in `book/src/SUMMARY.md`.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/autodiff.md")]
pub mod autodiff {}

#[doc = include_str!("../../../book/src/geometry.md")]
pub mod geometry {}

#[doc = include_str!("../../../book/src/encoder.md")]
pub mod encoder {}

#[doc = include_str!("../../../book/src/displacement.md")]
pub mod displacement {}

#[doc = include_str!("../../../book/src/gates.md")]
pub mod gates {}

#[doc = include_str!("../../../book/src/losses.md")]
pub mod losses {}

#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}

#[doc = include_str!("../../../book/src/release-gate.md")]
pub mod release_gate {}
