//! Exact arithmetic, piecewise projective maps and random walks for the
//! group H(ℤ) of piecewise PSL₂(ℤ) homeomorphisms of the line.

#![allow(clippy::result_large_err)]

pub mod exactnum;
pub mod piecewise;
pub mod psl2;
pub mod schreier;
pub mod walk;
