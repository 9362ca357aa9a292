//! Per-agent real/fake classifier over full displacement sequences.

use rand::Rng;

use crate::autodiff::{Binding, ParamStore, Tape, Var};
use crate::data::scene::T_TOTAL;
use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::nn::{Activation, BnUpdate, LstmCell, Mlp, MlpSpec, Mode};

#[derive(Clone, Debug)]
pub struct Discriminator {
    pub embed: Mlp,
    pub lstm: LstmCell,
    pub classifier: Mlp,
}

impl Discriminator {
    pub fn new(store: &mut ParamStore, config: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        let h = config.hidden;
        let embed = Mlp::new(store, "disc.embed", MlpSpec::linear(2, config.embedding), rng)?;
        let lstm = LstmCell::new(store, "disc.lstm", config.embedding, h, rng);
        let spec = MlpSpec { batch_norm: true, ..MlpSpec::new(vec![h, config.disc_mlp, 1], vec![Activation::Relu]) };
        let classifier = Mlp::new(store, "disc.classifier", spec, rng)?;
        Ok(Discriminator { embed, lstm, classifier })
    }

    /// Logits `[R, 1]` for `T_OBS + T_PRED` displacement tensors `[R, 2]`.
    pub fn logits(&self, tape: &mut Tape, b: &Binding, sequence: &[Var], mode: Mode) -> Result<(Var, Vec<BnUpdate>)> {
        if sequence.len() != T_TOTAL {
            return Err(Error::shape(
                "discriminate",
                format!("sequence of {} steps, expected {T_TOTAL}", sequence.len()),
            ));
        }
        let rows = tape.shape(sequence[0])[0];
        let mut state = self.lstm.zero_state(tape, rows);
        for &x in sequence {
            let e = self.embed.forward(tape, b, x)?;
            state = self.lstm.step(tape, b, e, state)?;
        }
        self.classifier.forward_mode(tape, b, state.h, mode)
    }

    /// Probability that each row is real, using running normalization
    /// statistics.
    pub fn discriminate(&self, tape: &mut Tape, b: &Binding, sequence: &[Var]) -> Result<Var> {
        let (z, _) = self.logits(tape, b, sequence, Mode::Eval)?;
        Ok(tape.sigmoid(z))
    }
}
