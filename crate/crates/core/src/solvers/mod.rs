//! Numerical engines behind the beamforming problems.

pub mod ao;
pub mod bisection;
pub mod sdp;

pub use bisection::{bisection, Bisection};
pub use sdp::{purify_rank, rank1_extract, rank1_gap, solve_sdp, LowRank, SdpInstance, SdpSolution};
