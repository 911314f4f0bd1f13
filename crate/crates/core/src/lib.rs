//! Calderón–Zygmund machinery for flow measures on `G = N ⋊ ℝ₊`, with
//! `N = ℝᵐ` or the Heisenberg group ℍ¹.
//!
//! The crate is organised bottom-up: [`group`] holds the arithmetic and the
//! distances, [`measure`] the flow measures, [`cubes`] the dyadic cube
//! systems on `N`, [`cylinder`] the cylinder calculus, [`family`] the dyadic
//! partitions of `G`, [`cz`] the maximal operators and CZ decomposition, and
//! [`counterexample`] the comparison results on ℍ¹ ⋊ ℝ₊.

pub mod error;
pub mod group;
pub mod measure;
pub mod cubes;
pub mod cylinder;
pub mod family;
pub mod cz;

pub use error::{Error, Result};
pub use group::{BasePoint, GroupPoint, GroupSpec, VerticalField};
pub mod counterexample;
