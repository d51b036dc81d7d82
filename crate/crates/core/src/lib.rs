//! Ride-pooling dispatch with flexible pickup and drop-off areas.

// Negated comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod areas;
pub mod combos;
pub mod model;
pub mod network;
pub mod rvrp;
pub mod valuefn;
pub mod assignment;
pub mod simulator;
