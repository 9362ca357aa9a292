//! Alternating updates of the discriminator, critic and generator.

pub mod config;
pub mod losses;
pub mod step;

pub use config::{read_model_kv, TrainConfig};
pub use losses::{
    autoencode_stacked, loss_adversarial, loss_adversarial_logits, loss_autoencode, loss_critic_regression,
    loss_critic_regularizer,
};
pub use step::{checkpoint_path, generator_loss, mean_losses, CheckpointPolicy, GeneratorLoss, LossBreakdown, Trainer};
