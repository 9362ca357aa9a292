use indexmap::IndexMap;

use crate::collision::DEFAULT_EPSILON;
use crate::error::{Error, Result};
use crate::scene::map::{ClassSet, DEFAULT_CLASSES};
use crate::scene::EgoGridSpec;

/// When the decoder's grids are built.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GridMode {
    /// Rebuilt from the current predicted positions and decoder states at
    /// every step.
    PerStep,
    /// Built once from the last observed positions and encoder states.
    LastObserved,
}

/// Architecture of the three networks.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub hidden: usize,
    pub embedding: usize,
    pub noise_dim: usize,
    pub attention_hidden: usize,
    pub grid: EgoGridSpec,
    pub num_classes: usize,
    /// Attentive scene representation in the generator; off feeds zero
    /// context vectors instead.
    pub asr: bool,
    pub grid_mode: GridMode,
    pub critic_hidden: usize,
    pub critic_mlp: usize,
    pub disc_mlp: usize,
    /// Initial critic score. The output bias starts at its softplus inverse
    /// so the head begins near the collision base rate instead of saturating
    /// while the many collision-free steps pull it down.
    pub critic_prior: f64,
    pub blocked: ClassSet,
    /// Collision threshold in dataset units.
    pub epsilon: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden: 32,
            embedding: 32,
            noise_dim: 8,
            attention_hidden: 16,
            grid: EgoGridSpec::default(),
            num_classes: DEFAULT_CLASSES.len(),
            asr: true,
            grid_mode: GridMode::PerStep,
            critic_hidden: 32,
            critic_mlp: 16,
            disc_mlp: 32,
            critic_prior: 0.05,
            blocked: ClassSet::default(),
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let sizes = [
            ("hidden", self.hidden),
            ("embedding", self.embedding),
            ("noise_dim", self.noise_dim),
            ("attention_hidden", self.attention_hidden),
            ("num_classes", self.num_classes),
            ("critic_hidden", self.critic_hidden),
            ("critic_mlp", self.critic_mlp),
            ("disc_mlp", self.disc_mlp),
        ];
        for (k, v) in sizes {
            if v == 0 {
                return Err(Error::Config(format!("`{k}` must be positive")));
            }
        }
        if self.embedding != self.hidden {
            // The decoder's first input slot holds the encoder state and later
            // the embedded previous displacement.
            return Err(Error::Config(format!("embedding ({}) must equal hidden ({})", self.embedding, self.hidden)));
        }
        if !(self.critic_prior > 0.0 && self.critic_prior.is_finite()) {
            return Err(Error::Config(format!("`critic_prior` must be positive, got {}", self.critic_prior)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("`epsilon` must be positive, got {}", self.epsilon)));
        }
        Ok(())
    }

    /// Key/value form stored in checkpoints.
    pub fn to_meta(&self) -> IndexMap<String, String> {
        let mut m = IndexMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("hidden", self.hidden.to_string());
        put("embedding", self.embedding.to_string());
        put("noise_dim", self.noise_dim.to_string());
        put("attention_hidden", self.attention_hidden.to_string());
        put("grid_rows", self.grid.rows.to_string());
        put("grid_cols", self.grid.cols.to_string());
        put("grid_cell", format!("{:?}", self.grid.cell_size));
        put("num_classes", self.num_classes.to_string());
        put("asr", self.asr.to_string());
        put(
            "grid_mode",
            match self.grid_mode {
                GridMode::PerStep => "per-step",
                GridMode::LastObserved => "last-observed",
            }
            .to_string(),
        );
        put("critic_hidden", self.critic_hidden.to_string());
        put("critic_mlp", self.critic_mlp.to_string());
        put("disc_mlp", self.disc_mlp.to_string());
        put("critic_prior", self.critic_prior.to_string());
        put("blocked", self.blocked.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(","));
        put("epsilon", format!("{:?}", self.epsilon));
        m
    }

    pub fn from_meta(meta: &IndexMap<String, String>) -> Result<Self> {
        fn get<T: std::str::FromStr>(meta: &IndexMap<String, String>, k: &str) -> Result<T> {
            let v = meta.get(k).ok_or_else(|| Error::Checkpoint(format!("missing meta `{k}`")))?;
            v.parse().map_err(|_| Error::Checkpoint(format!("bad meta `{k}` = `{v}`")))
        }
        let blocked: String = get(meta, "blocked")?;
        let blocked: Vec<u8> = blocked
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|_| Error::Checkpoint(format!("bad blocked class `{s}`"))))
            .collect::<Result<_>>()?;
        let grid_mode: String = get(meta, "grid_mode")?;
        let c = ModelConfig {
            hidden: get(meta, "hidden")?,
            embedding: get(meta, "embedding")?,
            noise_dim: get(meta, "noise_dim")?,
            attention_hidden: get(meta, "attention_hidden")?,
            grid: EgoGridSpec {
                rows: get(meta, "grid_rows")?,
                cols: get(meta, "grid_cols")?,
                cell_size: get(meta, "grid_cell")?,
            },
            num_classes: get(meta, "num_classes")?,
            asr: get(meta, "asr")?,
            grid_mode: match grid_mode.as_str() {
                "per-step" => GridMode::PerStep,
                "last-observed" => GridMode::LastObserved,
                other => return Err(Error::Checkpoint(format!("bad grid mode `{other}`"))),
            },
            critic_hidden: get(meta, "critic_hidden")?,
            critic_mlp: get(meta, "critic_mlp")?,
            disc_mlp: get(meta, "disc_mlp")?,
            critic_prior: get(meta, "critic_prior")?,
            blocked: ClassSet::of(&blocked),
            epsilon: get(meta, "epsilon")?,
        };
        c.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn meta_round_trip() {
        let c =
            ModelConfig { asr: false, grid_mode: GridMode::LastObserved, epsilon: 0.1 + 0.2, ..ModelConfig::default() };
        assert_eq!(ModelConfig::from_meta(&c.to_meta()).unwrap(), c);
    }

    #[test]
    fn embedding_must_match_hidden() {
        let c = ModelConfig { embedding: 16, ..ModelConfig::default() };
        assert!(c.validate().is_err());
    }
}
