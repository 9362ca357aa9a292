use crate::collision::reward_signal;
use crate::data::scene::Scene;
use crate::error::Result;
use crate::eval::metrics::auc;
use crate::model::{PredictionSet, SafeCritic};

/// Critic scores of generated trajectories against their actual collisions.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticReport {
    /// Per (sample, agent) trajectory: summed critic score.
    pub scores: Vec<f64>,
    /// Whether the trajectory collides at any predicted step.
    pub labels: Vec<bool>,
    pub auc: Option<f64>,
}

impl CriticReport {
    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }
}

/// Labels every generated trajectory in `predictions` with whether it
/// collides (another agent within `epsilon`, or a blocked cell) and scores
/// it with the critic's summed per-step output.
pub fn critic_report(
    scenes: &[Scene],
    predictions: &PredictionSet,
    epsilon: f64,
    model: &SafeCritic,
) -> Result<CriticReport> {
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (scene, pred) in scenes.iter().zip(&predictions.scenes) {
        let eps = scene.unit.from_meters(epsilon)?;
        for (joint, crit) in pred.samples.iter().zip(&pred.critic) {
            let rewards = reward_signal(joint, scene.map.as_deref(), model.config.blocked, eps)?;
            for (r, v) in rewards.iter().zip(crit) {
                labels.push(r.iter().any(|&x| x > 0));
                scores.push(v.iter().sum());
            }
        }
    }
    let auc = auc(&scores, &labels);
    Ok(CriticReport { scores, labels, auc })
}

/// Samples `k` futures per scene and reports the critic's separation of
/// colliding from safe ones.
pub fn evaluate_critic(
    model: &SafeCritic,
    scenes: &[Scene],
    k: usize,
    epsilon: f64,
    seed: u64,
) -> Result<CriticReport> {
    let preds = model.predict(scenes, k, seed, 16)?;
    critic_report(scenes, &preds, epsilon, model)
}
