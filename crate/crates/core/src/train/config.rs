use crate::error::{Error, Result};
use crate::kv::{Flag, KvFile};
use crate::model::{GridMode, ModelConfig};
use crate::scene::map::{ClassSet, DEFAULT_CLASSES};
use crate::scene::EgoGridSpec;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    pub lr_critic: f64,
    /// Samples per agent in each training step.
    pub k_train: usize,
    pub lambda_ae: f64,
    pub lambda_critic: f64,
    /// Scenes per step.
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Global gradient norm limit per network.
    pub clip_norm: f64,
    /// Updates per batch for the discriminator and the critic. The generator
    /// takes one update per batch.
    pub d_steps: usize,
    pub critic_steps: usize,
    /// Earlier generated batches kept for critic regression; 0 trains on the
    /// current batch only.
    pub replay: usize,
    /// Trains the critic at all. Off also disables the regularizer.
    pub critic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_generator: 1e-3,
            lr_discriminator: 1e-4,
            lr_critic: 1e-4,
            k_train: 5,
            lambda_ae: 1.0,
            lambda_critic: 1.0,
            batch_size: 16,
            epochs: 10,
            seed: 0,
            clip_norm: 10.0,
            d_steps: 1,
            critic_steps: 1,
            replay: 0,
            critic: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (k, v) in [
            ("lr_generator", self.lr_generator),
            ("lr_discriminator", self.lr_discriminator),
            ("lr_critic", self.lr_critic),
            ("clip_norm", self.clip_norm),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("`{k}` must be positive, got {v}")));
            }
        }
        for (k, v) in [("lambda_ae", self.lambda_ae), ("lambda_critic", self.lambda_critic)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("`{k}` must be nonnegative, got {v}")));
            }
        }
        if self.k_train == 0 || self.batch_size == 0 {
            return Err(Error::Config("`k_train` and `batch_size` must be at least 1".into()));
        }
        Ok(())
    }

    /// Effective regularizer weight.
    pub fn critic_weight(&self) -> f64 {
        if self.critic {
            self.lambda_critic
        } else {
            0.0
        }
    }

    pub fn read_kv(&mut self, kv: &mut KvFile) -> Result<()> {
        self.lr_generator = kv.take_or("lr_generator", self.lr_generator)?;
        self.lr_discriminator = kv.take_or("lr_discriminator", self.lr_discriminator)?;
        self.lr_critic = kv.take_or("lr_critic", self.lr_critic)?;
        self.k_train = kv.take_or("k_train", self.k_train)?;
        self.lambda_ae = kv.take_or("lambda_ae", self.lambda_ae)?;
        self.lambda_critic = kv.take_or("lambda_critic", self.lambda_critic)?;
        self.batch_size = kv.take_or("batch_size", self.batch_size)?;
        self.epochs = kv.take_or("epochs", self.epochs)?;
        self.seed = kv.take_or("seed", self.seed)?;
        self.clip_norm = kv.take_or("clip_norm", self.clip_norm)?;
        self.d_steps = kv.take_or("d_steps", self.d_steps)?;
        self.critic_steps = kv.take_or("critic_steps", self.critic_steps)?;
        self.replay = kv.take_or("replay", self.replay)?;
        self.critic = kv.take_or("critic", Flag(self.critic))?.0;
        self.validate()
    }
}

fn parse_blocked(s: &str) -> Result<ClassSet> {
    let mut classes = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let idx = match DEFAULT_CLASSES.iter().position(|c| *c == part) {
            Some(i) => i as u8,
            None => part.parse().map_err(|_| Error::Config(format!("unknown class `{part}` in `blocked`")))?,
        };
        classes.push(idx);
    }
    Ok(ClassSet::of(&classes))
}

/// Reads model keys from a config file into `c`.
pub fn read_model_kv(c: &mut ModelConfig, kv: &mut KvFile) -> Result<()> {
    c.hidden = kv.take_or("hidden", c.hidden)?;
    c.embedding = kv.take_or("embedding", c.embedding)?;
    c.noise_dim = kv.take_or("noise_dim", c.noise_dim)?;
    c.attention_hidden = kv.take_or("attention_hidden", c.attention_hidden)?;
    c.grid = EgoGridSpec {
        rows: kv.take_or("grid_rows", c.grid.rows)?,
        cols: kv.take_or("grid_cols", c.grid.cols)?,
        cell_size: kv.take_or("grid_cell", c.grid.cell_size)?,
    };
    c.asr = kv.take_or("asr", Flag(c.asr))?.0;
    if let Some(m) = kv.take::<String>("grid_mode")? {
        c.grid_mode = match m.as_str() {
            "per-step" => GridMode::PerStep,
            "last-observed" => GridMode::LastObserved,
            _ => return Err(Error::Config(format!("`grid_mode` must be per-step or last-observed, got `{m}`"))),
        };
    }
    c.critic_hidden = kv.take_or("critic_hidden", c.critic_hidden)?;
    c.critic_mlp = kv.take_or("critic_mlp", c.critic_mlp)?;
    c.disc_mlp = kv.take_or("disc_mlp", c.disc_mlp)?;
    c.critic_prior = kv.take_or("critic_prior", c.critic_prior)?;
    c.epsilon = kv.take_or("epsilon", c.epsilon)?;
    if let Some(b) = kv.take::<String>("blocked")? {
        c.blocked = parse_blocked(&b)?;
    }
    c.validate()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_documented_values() {
        let c = TrainConfig::default();
        assert_eq!((c.lr_generator, c.lr_discriminator, c.lr_critic), (1e-3, 1e-4, 1e-4));
        assert_eq!((c.lambda_ae, c.lambda_critic, c.clip_norm), (1.0, 1.0, 10.0));
        c.validate().unwrap();
    }

    #[test]
    fn invalid_values() {
        let mut kv = KvFile::parse("lr_critic = -1\n", "t").unwrap();
        assert!(TrainConfig::default().read_kv(&mut kv).is_err());
        let mut kv = KvFile::parse("lambda_critic = -0.5\n", "t").unwrap();
        assert!(TrainConfig::default().read_kv(&mut kv).is_err());
    }

    #[test]
    fn model_keys() {
        let mut kv = KvFile::parse("asr = off\nblocked = building, 4\ngrid_mode = last-observed\n", "t").unwrap();
        let mut m = ModelConfig::default();
        read_model_kv(&mut m, &mut kv).unwrap();
        assert!(!m.asr);
        assert_eq!(m.grid_mode, GridMode::LastObserved);
        assert_eq!(m.blocked, ClassSet::of(&[1, 4]));
        kv.finish().unwrap();
    }
}
