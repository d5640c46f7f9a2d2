//! Guide chapters, compiled so that their snippets run as doctests.

#[doc = include_str!("../../../book/src/intro.md")]
pub mod intro {}

#[doc = include_str!("../../../book/src/operators.md")]
pub mod operators {}

#[doc = include_str!("../../../book/src/solver.md")]
pub mod solver {}

#[doc = include_str!("../../../book/src/stefan.md")]
pub mod stefan {}

#[doc = include_str!("../../../book/src/geometry.md")]
pub mod geometry {}

#[doc = include_str!("../../../book/src/barriers.md")]
pub mod barriers {}

#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}
