pub mod beam1d;
pub mod correctors;
pub mod energy;
pub mod error;
pub mod fem2d;
pub mod geometry;
pub mod grid;
pub mod harness;
pub mod initial_data;
pub mod norms;
pub mod rod3d;
