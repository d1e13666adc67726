//! Eight-point essential-matrix estimation, its compact `ΦᵀAΦ` form, the
//! essential-matrix attention block, and synthetic pose-regression experiments.

pub mod analysis;
pub mod attention;
pub mod compact;
pub mod eight_point;
pub mod geometry;
pub mod linalg;
pub mod mlp;
pub mod seed;
pub mod synth;
