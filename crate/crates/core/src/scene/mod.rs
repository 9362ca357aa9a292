//! Egocentric scene representation: static maps, per-agent grids and their
//! attention-weighted context vectors.

pub mod context;
pub mod grid;
pub mod map;

pub use context::{
    batched_occupancy, batched_static_classes, context_from_inputs, context_vectors, dynamic_input, static_input,
    Context, GridInputs, SceneHeads,
};
pub use grid::{
    build_dynamic_grid, build_static_grid, occupancy, static_classes, DynamicGrid, EgoGridSpec, Occupancy, StaticGrid,
};
pub use map::{ClassSet, StaticMap, DEFAULT_CLASSES};
