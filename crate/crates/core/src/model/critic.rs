//! Collision critic.
//!
//! At each predicted step the critic reads the displacement the generator
//! chose together with context from the grids around the position before the
//! move, and regresses how many collisions the agent will be in after it. The
//! softplus head keeps the score a nonnegative count.

use rand::Rng;

use crate::autodiff::{Binding, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::generator::StepRecord;
use crate::nn::{Activation, LstmCell, Mlp, MlpSpec};
use crate::scene::context::{context_from_inputs, dynamic_input_from, static_input, GridInputs};
use crate::scene::{Occupancy, SceneHeads};

#[derive(Clone, Debug)]
pub struct Critic {
    pub heads: SceneHeads,
    pub lstm: LstmCell,
    pub head: Mlp,
    pub config: ModelConfig,
}

/// What the critic sees at one step. All vars live on the tape the critic
/// runs on.
#[derive(Clone, Debug)]
pub struct CriticStep<'a> {
    pub delta: Var,
    pub positions: Var,
    pub hidden: Var,
    pub occupancy: &'a [Occupancy],
    pub classes: &'a [u8],
}

impl<'a> CriticStep<'a> {
    /// Uses the generator's vars directly, so gradients reach the generator.
    pub fn attached(record: &'a StepRecord) -> Self {
        CriticStep {
            delta: record.delta,
            positions: record.positions,
            hidden: record.hidden,
            occupancy: &record.occupancy,
            classes: &record.classes,
        }
    }

    /// Copies the values of `record` (recorded on `source`) onto `tape` as
    /// constants.
    pub fn detached(record: &'a StepRecord, source: &Tape, tape: &mut Tape) -> Self {
        CriticStep {
            delta: tape.constant(source.value(record.delta).clone()),
            positions: tape.constant(source.value(record.positions).clone()),
            hidden: tape.constant(source.value(record.hidden).clone()),
            occupancy: &record.occupancy,
            classes: &record.classes,
        }
    }
}

impl Critic {
    pub fn new(store: &mut ParamStore, config: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        let ch = config.critic_hidden;
        let heads = SceneHeads::new(
            store,
            "critic",
            &config.grid,
            config.hidden,
            ch,
            config.num_classes,
            config.attention_hidden,
            rng,
        )?;
        let input = 2 + heads.dynamic_dim() + heads.static_dim();
        let lstm = LstmCell::new(store, "critic.lstm", input, ch, rng);
        let head =
            Mlp::new(store, "critic.head", MlpSpec::new(vec![ch, config.critic_mlp, 1], vec![Activation::Relu]), rng)?;
        let (_, bias) = head.layer(1);
        let prior = config.critic_prior;
        *store.get_mut(bias) = Tensor::full(&[1], prior.exp_m1().ln());
        Ok(Critic { heads, lstm, head, config: config.clone() })
    }

    /// Scores `[R, 1]` per step.
    pub fn scores(&self, tape: &mut Tape, b: &Binding, steps: &[CriticStep]) -> Result<Vec<Var>> {
        let first = steps.first().ok_or_else(|| Error::Invalid("critic needs at least one step".into()))?;
        let rows = tape.shape(first.delta)[0];
        let mut state = self.lstm.zero_state(tape, rows);
        let mut out = Vec::with_capacity(steps.len());
        for s in steps {
            let inputs = GridInputs {
                dynamic: {
                    // Neighbors as seen from where the move lands.
                    let after = tape.add(s.positions, s.delta)?;
                    dynamic_input_from(tape, &self.config.grid, s.occupancy, s.hidden, s.positions, after)?
                },
                static_: static_input(tape, s.classes, self.config.num_classes),
            };
            let ctx = context_from_inputs(tape, b, &self.heads, &inputs, state.h)?;
            let x = tape.concat(&[s.delta, ctx.dynamic, ctx.static_])?;
            state = self.lstm.step(tape, b, x, state)?;
            let raw = self.head.forward(tape, b, state.h)?;
            out.push(tape.softplus(raw));
        }
        Ok(out)
    }

    /// Score values as `[R][T]`.
    pub fn score_values(tape: &Tape, scores: &[Var]) -> Vec<Vec<f64>> {
        let rows = scores.first().map_or(0, |s| tape.value(*s).len());
        (0..rows).map(|r| scores.iter().map(|s| tape.value(*s).data()[r]).collect()).collect()
    }
}

/// Rewards `[R][T]` as per-step `[R, 1]` tensors.
pub fn reward_tensors(rewards: &[Vec<u32>]) -> Vec<Tensor> {
    let steps = rewards.first().map_or(0, Vec::len);
    (0..steps)
        .map(|t| {
            Tensor::new(vec![rewards.len(), 1], rewards.iter().map(|r| r[t] as f64).collect()).expect("reward shape")
        })
        .collect()
}
