pub mod bench;
pub mod classify;
pub mod copula;
pub mod datagen;
pub mod error;
pub mod estimate;
pub mod linalg;
pub mod solver;
pub mod types;
