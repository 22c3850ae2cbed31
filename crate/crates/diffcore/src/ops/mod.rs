mod conv;
mod elementwise;
mod index;
mod linalg;
pub mod nn;
mod reduce;
