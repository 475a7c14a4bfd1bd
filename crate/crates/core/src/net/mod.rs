//! Skeleton-aware dual autoencoder.

mod model;
pub mod pooling;

pub use model::{
    Bound, LatentCode, Module, NetConfig, RetargetModel, Side, DYNAMIC_CHANNELS, ROOT_CHANNELS,
};
pub use pooling::{auto_pooling, Hierarchy};
