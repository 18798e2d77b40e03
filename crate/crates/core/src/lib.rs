//! Decomposition algorithms for block-structured nonconvex optimization.

pub mod dd;
pub mod examples;
pub mod kkt;
pub mod local;
pub mod model;
pub mod pd;
pub mod poly;
pub mod rng;
pub mod sca;
pub mod sdd;
pub mod spd;
pub mod trajectory;
pub mod transforms;
