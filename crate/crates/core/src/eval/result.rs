use std::io::Write;
use std::path::Path;

use crate::collision::{count_collisions, scene_report};
use crate::data::scene::{Scene, T_PRED};
use crate::error::{Error, Result};
use crate::eval::metrics::{diversity, made, mfde};
use crate::model::{PredictionSet, ScenePrediction};
use crate::scene::map::ClassSet;

/// Metrics of one scene. Errors are in the scene's unit.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneMetrics {
    pub scene_id: String,
    pub video: String,
    pub agents: usize,
    /// Mean over agents of the per-agent minimum over samples.
    pub made: f64,
    pub mfde: f64,
    /// Pair events per joint sample.
    pub nc_total: f64,
    pub nc_per_agent: f64,
    pub nc_per_frame: f64,
    /// Steps inside blocked cells per joint sample.
    pub static_violations: f64,
    /// Mean over agents; zero with a single sample.
    pub diversity: f64,
    /// Pair events of the ground-truth future.
    pub nc_ground_truth: usize,
}

/// Unweighted means of [`SceneMetrics`] over scenes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Aggregate {
    pub scenes: usize,
    pub made: f64,
    pub mfde: f64,
    pub nc_total: f64,
    pub nc_per_agent: f64,
    pub nc_per_frame: f64,
    pub static_violations: f64,
    pub diversity: f64,
    pub nc_ground_truth: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub k: usize,
    pub epsilon: f64,
    pub scenes: Vec<SceneMetrics>,
    pub aggregate: Aggregate,
}

pub fn scene_metrics(scene: &Scene, pred: &ScenePrediction, epsilon: f64, blocked: ClassSet) -> Result<SceneMetrics> {
    let n = scene.num_agents();
    let k = pred.k();
    if k == 0 || pred.samples.iter().any(|s| s.len() != n) {
        return Err(Error::Invalid(format!("prediction for scene `{}` does not match its agents", scene.id)));
    }
    let eps = scene.unit.from_meters(epsilon)?;
    let (mut ade_sum, mut fde_sum, mut div_sum) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let truth = scene.future(i);
        let samples: Vec<Vec<_>> = pred.samples.iter().map(|s| s[i].clone()).collect();
        ade_sum += made(truth, &samples)?;
        fde_sum += mfde(truth, &samples)?.0;
        if k >= 2 {
            div_sum += diversity(&samples)?;
        }
    }
    let mut events = 0usize;
    let mut statics = 0usize;
    for joint in &pred.samples {
        let report = scene_report(joint, scene.map.as_deref(), blocked, eps)?;
        events += report.nc();
        statics += report.static_events.len();
    }
    let nc_total = events as f64 / k as f64;
    Ok(SceneMetrics {
        scene_id: scene.id.clone(),
        video: scene.video.clone(),
        agents: n,
        made: ade_sum / n as f64,
        mfde: fde_sum / n as f64,
        nc_total,
        nc_per_agent: nc_total / n as f64,
        nc_per_frame: nc_total / T_PRED as f64,
        static_violations: statics as f64 / k as f64,
        diversity: div_sum / n as f64,
        nc_ground_truth: count_collisions(&scene.futures(), eps)?.nc(),
    })
}

pub fn aggregate(scenes: &[SceneMetrics]) -> Aggregate {
    if scenes.is_empty() {
        return Aggregate::default();
    }
    let n = scenes.len() as f64;
    let mean = |f: fn(&SceneMetrics) -> f64| scenes.iter().map(f).sum::<f64>() / n;
    Aggregate {
        scenes: scenes.len(),
        made: mean(|s| s.made),
        mfde: mean(|s| s.mfde),
        nc_total: mean(|s| s.nc_total),
        nc_per_agent: mean(|s| s.nc_per_agent),
        nc_per_frame: mean(|s| s.nc_per_frame),
        static_violations: mean(|s| s.static_violations),
        diversity: mean(|s| s.diversity),
        nc_ground_truth: mean(|s| s.nc_ground_truth as f64),
    }
}

/// Scores predictions against the scenes they were made for, matched by id.
pub fn evaluate_predictions(
    scenes: &[Scene],
    predictions: &PredictionSet,
    epsilon: f64,
    blocked: ClassSet,
) -> Result<EvalResult> {
    if scenes.len() != predictions.scenes.len() {
        return Err(Error::Invalid(format!("{} scenes but {} predictions", scenes.len(), predictions.scenes.len())));
    }
    let mut out = Vec::with_capacity(scenes.len());
    for (scene, pred) in scenes.iter().zip(&predictions.scenes) {
        if scene.id != pred.scene_id {
            return Err(Error::Invalid(format!("prediction `{}` for scene `{}`", pred.scene_id, scene.id)));
        }
        out.push(scene_metrics(scene, pred, epsilon, blocked)?);
    }
    let aggregate = aggregate(&out);
    Ok(EvalResult { k: predictions.k, epsilon, scenes: out, aggregate })
}

/// Per-video means, in order of first appearance.
pub fn per_video(result: &EvalResult) -> Vec<(String, Aggregate)> {
    let mut videos: Vec<String> = Vec::new();
    for s in &result.scenes {
        if !videos.contains(&s.video) {
            videos.push(s.video.clone());
        }
    }
    videos
        .into_iter()
        .map(|v| {
            let group: Vec<SceneMetrics> = result.scenes.iter().filter(|s| s.video == v).cloned().collect();
            (v, aggregate(&group))
        })
        .collect()
}

pub const RESULT_HEADER: &str =
    "scope,id,agents,made,mfde,nc_total,nc_per_agent,nc_per_frame,static_violations,diversity,nc_ground_truth";

/// Writes one row per scene, one per video and a final `all` row.
pub fn write_result_csv(w: &mut impl Write, result: &EvalResult) -> Result<()> {
    writeln!(w, "# k={} epsilon={}", result.k, result.epsilon)?;
    writeln!(w, "{RESULT_HEADER}")?;
    for s in &result.scenes {
        writeln!(
            w,
            "scene,{},{},{},{},{},{},{},{},{},{}",
            s.scene_id,
            s.agents,
            s.made,
            s.mfde,
            s.nc_total,
            s.nc_per_agent,
            s.nc_per_frame,
            s.static_violations,
            s.diversity,
            s.nc_ground_truth
        )?;
    }
    let row = |w: &mut dyn Write, scope: &str, id: &str, a: &Aggregate| -> std::io::Result<()> {
        writeln!(
            w,
            "{scope},{id},{},{},{},{},{},{},{},{},{}",
            a.scenes,
            a.made,
            a.mfde,
            a.nc_total,
            a.nc_per_agent,
            a.nc_per_frame,
            a.static_violations,
            a.diversity,
            a.nc_ground_truth
        )
    };
    for (v, a) in per_video(result) {
        row(w, "video", &v, &a)?;
    }
    row(w, "all", "all", &result.aggregate)?;
    Ok(())
}

pub fn save_result_csv(path: impl AsRef<Path>, result: &EvalResult) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_result_csv(&mut f, result)?;
    f.flush()?;
    Ok(())
}

impl std::fmt::Display for Aggregate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "scenes {}  mADE {:.4}  mFDE {:.4}  NC {:.4} (per agent {:.4}, per frame {:.4}, ground truth {:.4})  static {:.4}  diversity {:.4}",
            self.scenes,
            self.made,
            self.mfde,
            self.nc_total,
            self.nc_per_agent,
            self.nc_per_frame,
            self.nc_ground_truth,
            self.static_violations,
            self.diversity
        )
    }
}
