pub mod cli;
pub mod eigensolver;
pub mod error;
pub mod extrapolation;
pub mod laplacian;
pub mod lattice;
pub mod render;
pub mod symmetry;
