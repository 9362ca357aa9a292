use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::scene::map::StaticMap;

/// Observed steps per window (3.2 s at 2.5 Hz).
pub const T_OBS: usize = 8;
/// Predicted steps per window (4.8 s at 2.5 Hz).
pub const T_PRED: usize = 12;
pub const T_TOTAL: usize = T_OBS + T_PRED;
/// Seconds between consecutive steps.
pub const STEP_SECONDS: f64 = 0.4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Split {
    #[default]
    Unassigned,
    Train,
    Test,
}

/// Coordinate unit of a dataset.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum Unit {
    #[default]
    Meters,
    /// Image pixels, with an optional pixels-per-meter factor used to scale
    /// metric thresholds.
    Pixels { per_meter: Option<f64> },
}

impl Unit {
    /// Converts a length in meters into dataset units.
    pub fn from_meters(&self, meters: f64) -> Result<f64> {
        match self {
            Unit::Meters => Ok(meters),
            Unit::Pixels { per_meter: Some(ppm) } => Ok(meters * ppm),
            Unit::Pixels { per_meter: None } => {
                Err(Error::Data("pixel data needs a pixels-per-meter factor for metric thresholds".into()))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentTrack {
    pub id: u64,
    /// Absolute positions, one per step of the scene window.
    pub positions: Vec<Point>,
}

/// A time window in which every listed agent is present at every step.
#[derive(Clone, Debug)]
pub struct Scene {
    pub id: String,
    /// Recording the scene came from, used for leave-one-out splits.
    pub video: String,
    pub start_frame: i64,
    pub frame_step: i64,
    pub agents: Vec<AgentTrack>,
    pub map: Option<Arc<StaticMap>>,
    pub split: Split,
    pub unit: Unit,
}

impl Scene {
    pub fn new(id: impl Into<String>, agents: Vec<AgentTrack>) -> Self {
        Scene {
            id: id.into(),
            video: String::new(),
            start_frame: 0,
            frame_step: 1,
            agents,
            map: None,
            split: Split::Unassigned,
            unit: Unit::Meters,
        }
    }

    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn steps(&self) -> usize {
        self.agents.first().map_or(0, |a| a.positions.len())
    }

    /// Checks that all agents cover `steps` finite positions.
    pub fn validate(&self, steps: usize) -> Result<()> {
        if self.agents.is_empty() {
            return Err(Error::Data(format!("scene {} has no agents", self.id)));
        }
        for a in &self.agents {
            if a.positions.len() != steps {
                return Err(Error::Data(format!(
                    "scene {}: agent {} has {} steps, expected {steps}",
                    self.id,
                    a.id,
                    a.positions.len()
                )));
            }
            if !a.positions.iter().all(|p| p.is_finite()) {
                return Err(Error::Data(format!("scene {}: agent {} has non-finite positions", self.id, a.id)));
            }
        }
        Ok(())
    }

    pub fn observed(&self, agent: usize) -> &[Point] {
        &self.agents[agent].positions[..T_OBS]
    }

    pub fn future(&self, agent: usize) -> &[Point] {
        &self.agents[agent].positions[T_OBS..T_TOTAL]
    }

    /// Every agent's ground-truth future.
    pub fn futures(&self) -> Vec<Vec<Point>> {
        (0..self.num_agents()).map(|i| self.future(i).to_vec()).collect()
    }
}

/// A path stored as per-step displacements from an anchor position.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub agent_id: u64,
    pub anchor: Point,
    pub displacements: Vec<Point>,
}

impl Trajectory {
    pub fn from_positions(agent_id: u64, positions: &[Point]) -> Result<Self> {
        let displacements = to_displacements(positions)?;
        Ok(Trajectory { agent_id, anchor: positions[0], displacements })
    }

    /// The anchor followed by the prefix sums of the displacements.
    pub fn positions(&self) -> Vec<Point> {
        from_displacements(self.anchor, &self.displacements)
    }
}

/// `δ_t = x_{t+1} − x_t`; the result is one shorter than the input.
pub fn to_displacements(positions: &[Point]) -> Result<Vec<Point>> {
    if positions.len() < 2 {
        return Err(Error::Data(format!("need at least 2 positions, got {}", positions.len())));
    }
    Ok(positions.windows(2).map(|w| w[1] - w[0]).collect())
}

/// Inverse of [`to_displacements`].
pub fn from_displacements(anchor: Point, displacements: &[Point]) -> Vec<Point> {
    let mut out = Vec::with_capacity(displacements.len() + 1);
    let mut p = anchor;
    out.push(p);
    for &d in displacements {
        p = p + d;
        out.push(p);
    }
    out
}
