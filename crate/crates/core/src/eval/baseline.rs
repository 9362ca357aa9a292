use crate::data::scene::{Scene, T_PRED};
use crate::model::{PredictionSet, ScenePrediction};

/// Extrapolates each agent's last observed displacement. One sample per
/// scene, no critic or attention output.
pub fn constant_velocity(scenes: &[Scene]) -> PredictionSet {
    let scenes = scenes
        .iter()
        .map(|s| {
            let paths = (0..s.num_agents())
                .map(|i| {
                    let obs = s.observed(i);
                    let last = obs[obs.len() - 1];
                    let v = last - obs[obs.len() - 2];
                    (1..=T_PRED).map(|t| last + v * t as f64).collect()
                })
                .collect();
            ScenePrediction {
                scene_id: s.id.clone(),
                samples: vec![paths],
                critic: Vec::new(),
                discriminator: Vec::new(),
                dynamic_attention: Vec::new(),
                static_attention: Vec::new(),
            }
        })
        .collect();
    PredictionSet { k: 1, scenes }
}
