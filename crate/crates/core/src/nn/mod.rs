//! Learned building blocks shared by the generator, discriminator and critic.

mod attention;
mod lstm;
mod mlp;

pub use attention::{Attended, AttentionHead, CellFeatures, GridInput, OFFSET_DIM, OFFSET_INPUT};
pub use lstm::{LstmCell, LstmState};
pub use mlp::{apply_bn_updates, Activation, BnUpdate, Mlp, MlpSpec, Mode, BN_EPS, BN_MOMENTUM};
