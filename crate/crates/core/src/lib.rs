//! Online compression of network-constrained trajectory streams.
//!
//! A trajectory is a sequence of road segments, each optionally carrying the
//! timestamp at which the object left it. Spatial compression drops segments
//! that an order-k Markov predictor over the road network gets right;
//! temporal compression drops timestamps that a learned Gaussian travel-time
//! model predicts within a user-chosen error bound. Queries run on the
//! compressed form without decompressing whole trajectories.

pub mod roadnet;
pub mod spatial;
pub mod trajmodel;
pub mod ttqp;
pub mod ttlearn;
pub mod ttcomp;
pub mod query;
pub mod synth;
pub mod store;
