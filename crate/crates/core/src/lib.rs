//! Skeleton-aware motion retargeting between kinematic trees with different
//! joint counts, proportions and rotation axes.
//!
//! A dual autoencoder maps clips from two skeletons into a shared latent
//! space over common limb prototypes; retargeting is the source encoder
//! followed by the target decoder. A dynamics filter produces feasible target
//! trajectories for a decoder-only fine-tuning stage.

pub mod autodiff;
pub mod bench;
pub mod dynamics;
pub mod error;
pub mod io;
pub mod kinematics;
pub mod metrics;
pub mod motion;
pub mod net;
pub mod quat;
pub mod skeleton;
pub mod training;
pub mod windowing;

pub use error::{Error, Result};
