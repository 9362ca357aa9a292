//! Encoder–decoder trajectory generator.
//!
//! The encoder embeds each observed displacement and runs an LSTM per agent;
//! its final hidden state `u` summarizes the agent's past. The decoder starts
//! from a zero state. Its first input is `u ⊕ ctx_d ⊕ ctx_s ⊕ z`; every later
//! input replaces `u` with the embedded previous displacement and `z` with
//! zeros. Each step emits a displacement that is added to the previous
//! position.

use rand::Rng;

use crate::autodiff::{Binding, ParamStore, Tape, Tensor, Var};
use crate::data::scene::{T_OBS, T_PRED};
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::model::batch::SceneBatch;
use crate::model::config::{GridMode, ModelConfig};
use crate::nn::{LstmCell, Mlp, MlpSpec};
use crate::scene::context::{
    batched_occupancy, batched_static_classes, context_from_inputs, dynamic_input, static_input, GridInputs,
};
use crate::scene::{Occupancy, SceneHeads};

#[derive(Clone, Debug)]
pub struct Generator {
    pub embed: Mlp,
    pub encoder: LstmCell,
    pub decoder: LstmCell,
    pub output: Mlp,
    pub heads: SceneHeads,
    pub config: ModelConfig,
}

/// Grids and states around one decoder step, as seen before the step's move.
#[derive(Clone, Debug)]
pub struct StepRecord {
    /// `[R, 2]` positions the grids are centered on.
    pub positions: Var,
    /// `[R, H]` states placed in neighbors' dynamic grids.
    pub hidden: Var,
    pub occupancy: Vec<Occupancy>,
    /// Static class of every grid cell, row after row.
    pub classes: Vec<u8>,
    /// `[R, 2]` displacement emitted at this step.
    pub delta: Var,
    /// `[R, 2]` position after the move.
    pub next: Var,
    /// `[R, cells]` attention weights of the generator heads, if used.
    pub dynamic_weights: Option<Var>,
    pub static_weights: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct GenOutput {
    pub k: usize,
    pub agents: usize,
    /// `[N, H]` encoder summaries.
    pub encoded: Var,
    pub steps: Vec<StepRecord>,
}

impl GenOutput {
    pub fn rows(&self) -> usize {
        self.k * self.agents
    }

    /// Predicted positions flattened to `[R, 2·T_PRED]`.
    pub fn flat_positions(&self, tape: &mut Tape) -> Result<Var> {
        let parts: Vec<Var> = self.steps.iter().map(|s| s.next).collect();
        tape.concat(&parts)
    }

    /// Predicted displacements, one `[R, 2]` var per step.
    pub fn deltas(&self) -> Vec<Var> {
        self.steps.iter().map(|s| s.delta).collect()
    }

    /// Predicted positions as points, `[R][T_PRED]`.
    pub fn paths(&self, tape: &Tape) -> Vec<Vec<Point>> {
        let rows = self.rows();
        let mut out = vec![Vec::with_capacity(self.steps.len()); rows];
        for s in &self.steps {
            let v = tape.value(s.next).data();
            for (r, o) in out.iter_mut().enumerate() {
                o.push(Point::new(v[2 * r], v[2 * r + 1]));
            }
        }
        out
    }
}

fn points(t: &Tensor) -> Vec<Point> {
    t.data().chunks(2).map(|c| Point::new(c[0], c[1])).collect()
}

impl Generator {
    pub fn new(store: &mut ParamStore, config: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let h = config.hidden;
        let embed = Mlp::new(store, "gen.embed", MlpSpec::linear(2, config.embedding), rng)?;
        let encoder = LstmCell::new(store, "gen.encoder", config.embedding, h, rng);
        let heads =
            SceneHeads::new(store, "gen", &config.grid, h, h, config.num_classes, config.attention_hidden, rng)?;
        let input = h + heads.dynamic_dim() + heads.static_dim() + config.noise_dim;
        let decoder = LstmCell::new(store, "gen.decoder", input, h, rng);
        let output = Mlp::new(store, "gen.output", MlpSpec::linear(h, 2), rng)?;
        Ok(Generator { embed, encoder, decoder, output, heads, config: config.clone() })
    }

    /// Final encoder hidden state per agent, `[N, H]`, from `T_OBS`
    /// displacement tensors of shape `[N, 2]`.
    pub fn encode(&self, tape: &mut Tape, b: &Binding, observed: &[Var]) -> Result<Var> {
        if observed.len() != T_OBS {
            return Err(Error::shape("encode", format!("{} observed steps, expected {T_OBS}", observed.len())));
        }
        let rows = tape.shape(observed[0])[0];
        let mut state = self.encoder.zero_state(tape, rows);
        for &x in observed {
            let e = self.embed.forward(tape, b, x)?;
            state = self.encoder.step(tape, b, e, state)?;
        }
        Ok(state.h)
    }

    /// Samples `k` joint futures for every scene of `batch`. `noise` is
    /// `[k·N, noise_dim]`, one row per sampled agent.
    pub fn sample(
        &self,
        tape: &mut Tape,
        b: &Binding,
        batch: &SceneBatch,
        k: usize,
        noise: &Tensor,
    ) -> Result<GenOutput> {
        let n = batch.agents();
        let rows = k * n;
        let cfg = &self.config;
        if k == 0 {
            return Err(Error::Invalid("need at least one sample".into()));
        }
        if noise.shape() != [rows, cfg.noise_dim] {
            return Err(Error::shape(
                "sample",
                format!("noise {:?}, expected [{rows}, {}]", noise.shape(), cfg.noise_dim),
            ));
        }
        let observed: Vec<Var> = batch.observed.iter().map(|t| tape.constant(t.clone())).collect();
        let encoded = self.encode(tape, b, &observed)?;
        let repeated = tape.gather_rows(encoded, &batch.repeat_index(k))?;

        let groups = batch.groups(k);
        let maps = batch.row_maps(k);
        let start: Vec<f64> = (0..k).flat_map(|_| batch.last_observed.iter().flat_map(|p| [p.x, p.y])).collect();
        let mut position = tape.constant(Tensor::new(vec![rows, 2], start)?);
        let mut hidden = repeated;
        let mut slot = repeated;
        let mut state = self.decoder.zero_state(tape, rows);
        let z = tape.constant(noise.clone());
        let no_z = tape.constant(Tensor::zeros(&[rows, cfg.noise_dim]));
        let zero_d = tape.constant(Tensor::zeros(&[rows, self.heads.dynamic_dim()]));
        let zero_s = tape.constant(Tensor::zeros(&[rows, self.heads.static_dim()]));

        let mut steps: Vec<StepRecord> = Vec::with_capacity(T_PRED);
        for t in 0..T_PRED {
            let rebuild = t == 0 || cfg.grid_mode == GridMode::PerStep;
            let (grid_pos, grid_hidden, occupancy, classes) = if rebuild {
                let pts = points(tape.value(position));
                (
                    position,
                    hidden,
                    batched_occupancy(&cfg.grid, &pts, &groups),
                    batched_static_classes(&cfg.grid, &pts, &maps),
                )
            } else {
                let s0 = &steps[0];
                (s0.positions, s0.hidden, s0.occupancy.clone(), s0.classes.clone())
            };

            let (ctx_d, ctx_s, dw, sw) = if cfg.asr {
                let inputs = GridInputs {
                    dynamic: dynamic_input(tape, &cfg.grid, &occupancy, grid_hidden, grid_pos)?,
                    static_: static_input(tape, &classes, cfg.num_classes),
                };
                let query = if rebuild { grid_hidden } else { hidden };
                let ctx = context_from_inputs(tape, b, &self.heads, &inputs, query)?;
                (ctx.dynamic, ctx.static_, Some(ctx.dynamic_weights), Some(ctx.static_weights))
            } else {
                (zero_d, zero_s, None, None)
            };

            let noise_slot = if t == 0 { z } else { no_z };
            let x = tape.concat(&[slot, ctx_d, ctx_s, noise_slot])?;
            state = self.decoder.step(tape, b, x, state)?;
            let delta = self.output.forward(tape, b, state.h)?;
            let next = tape.add(position, delta)?;
            steps.push(StepRecord {
                positions: grid_pos,
                hidden: grid_hidden,
                occupancy,
                classes,
                delta,
                next,
                dynamic_weights: dw,
                static_weights: sw,
            });
            slot = self.embed.forward(tape, b, delta)?;
            hidden = state.h;
            position = next;
        }
        Ok(GenOutput { k, agents: n, encoded, steps })
    }
}
