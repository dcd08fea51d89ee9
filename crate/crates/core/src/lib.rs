//! Bistatic backscatter communication over distributed MIMO: channel
//! synthesis, channel estimation, ADC quantization, detection, transmit
//! beamforming and access-point role assignment.

pub mod beamforming;
pub mod detection;
pub mod error;
pub mod estimation;
pub mod harness;
pub mod linalg;
pub mod partitioning;
pub mod quantization;
pub mod scene;
pub mod solvers;

pub use error::{Error, Result};
pub use partitioning::Partition;
pub use scene::{ApId, ChannelSet, Point3, Scene, SceneChannels};
