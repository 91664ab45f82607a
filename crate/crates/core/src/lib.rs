//! Adaptive Cartesian k-space sampling for direct pathology classification.

pub mod baselines;
pub mod classifier;
pub mod data;
pub mod env;
pub mod harness;
pub mod masking;
pub mod numerics;
pub mod ppo;

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/introduction.md")]
mod book_introduction {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/data.md")]
mod book_data {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/masks.md")]
mod book_masks {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/classifier.md")]
mod book_classifier {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/environment.md")]
mod book_environment {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/ppo.md")]
mod book_ppo {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/baselines.md")]
mod book_baselines {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/experiments.md")]
mod book_experiments {}
