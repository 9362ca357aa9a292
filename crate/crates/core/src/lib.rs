pub mod autodiff;
pub mod collision;
pub mod data;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod kv;
pub mod model;
pub mod nn;
pub mod scene;
pub mod train;

pub use error::{Error, Result};
pub use geometry::Point;
