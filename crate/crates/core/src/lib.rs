pub mod augment;
pub mod data;
pub mod eval;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod synth;
pub mod train;
