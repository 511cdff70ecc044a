// NaN-rejecting checks are written as `!(x >= 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod ctc;
pub mod data;
pub mod error;
pub mod harness;
pub mod lifelong;
pub mod lm;
pub mod model;
pub mod seed;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/autodiff.md")]
    struct Autodiff;
    #[doc = include_str!("../../../book/src/ctc.md")]
    struct Ctc;
    #[doc = include_str!("../../../book/src/lm.md")]
    struct Lm;
    #[doc = include_str!("../../../book/src/model.md")]
    struct Model;
    #[doc = include_str!("../../../book/src/regularizers.md")]
    struct Regularizers;
    #[doc = include_str!("../../../book/src/memory.md")]
    struct Memory;
    #[doc = include_str!("../../../book/src/experiments.md")]
    struct Experiments;
}
