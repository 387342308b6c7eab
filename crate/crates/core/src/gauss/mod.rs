//! Grids, precision operators, Gaussian measures and low-rank jump corrections.

pub mod grid;
pub mod lowrank;
pub mod measure;
pub mod moments;
pub mod recipe;

pub use grid::{csv_row, fmt_f64, l2_norm_sq, Boundary, Field, GridSpec};
pub use lowrank::{deviation_matrix, i_c, DeviationMatrix, LowRankJump};
pub use measure::GaussianMeasure;
pub use moments::{quadratic_moment_mc, McEstimate};
pub use recipe::{assemble_operator, assemble_precision, laplacian, PrecisionRecipe};
