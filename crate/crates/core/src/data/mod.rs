//! Scenes, dataset files, splits and the synthetic crowd generator.

pub mod dataset;
pub mod scene;
pub mod sim;
pub mod split;
pub mod trajnet;

pub use dataset::{load_scene_file, load_scenes, save_scenes};
pub use scene::{
    from_displacements, to_displacements, AgentTrack, Scene, Split, Trajectory, Unit, STEP_SECONDS, T_OBS, T_PRED,
    T_TOTAL,
};
pub use sim::{simulate, simulate_agents, AgentSpec, ForceParams, Layout, SimConfig, PRESETS};
pub use split::{every_kth, leave_one_out, videos};
pub use trajnet::{load_trajnet, parse_trajnet, save_trajnet, write_trajnet};
