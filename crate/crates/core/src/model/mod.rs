//! Generator, discriminator and critic, and sampling predictions from them.

pub mod batch;
pub mod config;
pub mod critic;
pub mod discriminator;
pub mod generator;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Checkpoint, ParamStore, Tape, Tensor, Var};
use crate::data::scene::{Scene, Trajectory};
use crate::error::{Error, Result};
use crate::geometry::Point;

pub use batch::SceneBatch;
pub use config::{GridMode, ModelConfig};
pub use critic::{reward_tensors, Critic, CriticStep};
pub use discriminator::Discriminator;
pub use generator::{GenOutput, Generator, StepRecord};

/// The three networks and their parameters. Each network keeps its own
/// store so updates to one can never touch another.
#[derive(Clone, Debug)]
pub struct SafeCritic {
    pub config: ModelConfig,
    pub gen_params: ParamStore,
    pub disc_params: ParamStore,
    pub critic_params: ParamStore,
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub critic: Critic,
}

/// Standard-normal noise `[rows, dim]`.
pub fn sample_noise(rng: &mut impl Rng, rows: usize, dim: usize) -> Tensor {
    let data = (0..rows * dim).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::new(vec![rows, dim], data).expect("noise shape")
}

/// Observed displacements (repeated per sample) followed by the generated
/// ones: the discriminator's view of a fake trajectory.
pub fn fake_sequence(tape: &mut Tape, batch: &SceneBatch, out: &GenOutput) -> Result<Vec<Var>> {
    let index = batch.repeat_index(out.k);
    let mut seq = Vec::with_capacity(batch.observed.len() + out.steps.len());
    for t in &batch.observed {
        let v = tape.constant(t.clone());
        seq.push(tape.gather_rows(v, &index)?);
    }
    seq.extend(out.deltas());
    Ok(seq)
}

/// `K` joint samples for one scene.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenePrediction {
    pub scene_id: String,
    /// Positions `[k][agent][t]` over the predicted steps.
    pub samples: Vec<Vec<Vec<Point>>>,
    /// Critic scores `[k][agent][t]`.
    pub critic: Vec<Vec<Vec<f64>>>,
    /// Discriminator probability `[k][agent]`.
    pub discriminator: Vec<Vec<f64>>,
    /// Generator attention at the first predicted step of sample 0,
    /// `[agent][cell]`, dynamic then static. Empty without scene context.
    pub dynamic_attention: Vec<Vec<f64>>,
    pub static_attention: Vec<Vec<f64>>,
}

impl ScenePrediction {
    pub fn k(&self) -> usize {
        self.samples.len()
    }

    /// Sample `k` of `agent` as a displacement trajectory anchored at the
    /// last observed position.
    pub fn trajectory(&self, scene: &Scene, k: usize, agent: usize) -> Trajectory {
        let anchor = *scene.observed(agent).last().expect("observed steps");
        let mut prev = anchor;
        let displacements = self.samples[k][agent]
            .iter()
            .map(|&p| {
                let d = p - prev;
                prev = p;
                d
            })
            .collect();
        Trajectory { agent_id: scene.agents[agent].id, anchor, displacements }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictionSet {
    pub k: usize,
    pub scenes: Vec<ScenePrediction>,
}

fn rows_of(values: &Tensor) -> Vec<Vec<f64>> {
    let w = values.last_dim();
    values.data().chunks(w.max(1)).map(<[f64]>::to_vec).collect()
}

impl SafeCritic {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gen_params = ParamStore::new();
        let mut disc_params = ParamStore::new();
        let mut critic_params = ParamStore::new();
        let generator = Generator::new(&mut gen_params, &config, &mut rng)?;
        let discriminator = Discriminator::new(&mut disc_params, &config, &mut rng)?;
        let critic = Critic::new(&mut critic_params, &config, &mut rng)?;
        Ok(SafeCritic { config, gen_params, disc_params, critic_params, generator, discriminator, critic })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut params = ParamStore::new();
        for store in [&self.gen_params, &self.disc_params, &self.critic_params] {
            for (name, t) in store.iter() {
                params.add(name, t.clone());
            }
        }
        Checkpoint { meta: self.config.to_meta(), params }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config = ModelConfig::from_meta(&ck.meta)?;
        let mut model = SafeCritic::new(config, 0)?;
        let total = model.gen_params.len() + model.disc_params.len() + model.critic_params.len();
        if ck.params.len() != total {
            return Err(Error::Checkpoint(format!("{} parameters, model has {total}", ck.params.len())));
        }
        model.gen_params.load_from(&ck.params)?;
        model.disc_params.load_from(&ck.params)?;
        model.critic_params.load_from(&ck.params)?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    /// Samples `k` joint futures for every scene, `batch_size` scenes at a
    /// time, with noise drawn from `seed`.
    pub fn predict(&self, scenes: &[Scene], k: usize, seed: u64, batch_size: usize) -> Result<PredictionSet> {
        if k == 0 {
            return Err(Error::Invalid("need at least one sample".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(scenes.len());
        let refs: Vec<&Scene> = scenes.iter().collect();
        for chunk in refs.chunks(batch_size.max(1)) {
            let batch = SceneBatch::new(chunk)?;
            let n = batch.agents();
            let noise = sample_noise(&mut rng, k * n, self.config.noise_dim);
            let mut tape = Tape::new();
            let gb = self.gen_params.bind(&mut tape, false);
            let db = self.disc_params.bind(&mut tape, false);
            let cb = self.critic_params.bind(&mut tape, false);
            let gen = self.generator.sample(&mut tape, &gb, &batch, k, &noise)?;
            let seq = fake_sequence(&mut tape, &batch, &gen)?;
            let d = self.discriminator.discriminate(&mut tape, &db, &seq)?;
            let steps: Vec<CriticStep> = gen.steps.iter().map(CriticStep::attached).collect();
            let v = self.critic.scores(&mut tape, &cb, &steps)?;
            let paths = gen.paths(&tape);
            let scores = Critic::score_values(&tape, &v);
            let dvals = tape.value(d).data().to_vec();
            if !dvals.iter().all(|x| x.is_finite()) || !paths.iter().flatten().all(|p| p.is_finite()) {
                return Err(Error::Numerical("non-finite prediction".into()));
            }
            let first = &gen.steps[0];
            let dyn_att = first.dynamic_weights.map(|w| rows_of(tape.value(w)));
            let st_att = first.static_weights.map(|w| rows_of(tape.value(w)));
            for (s, scene) in chunk.iter().enumerate() {
                let range = batch.offsets[s]..batch.offsets[s + 1];
                let pick = |kk: usize| range.clone().map(move |i| kk * n + i);
                out.push(ScenePrediction {
                    scene_id: scene.id.clone(),
                    samples: (0..k).map(|kk| pick(kk).map(|r| paths[r].clone()).collect()).collect(),
                    critic: (0..k).map(|kk| pick(kk).map(|r| scores[r].clone()).collect()).collect(),
                    discriminator: (0..k).map(|kk| pick(kk).map(|r| dvals[r]).collect()).collect(),
                    dynamic_attention: dyn_att.as_ref().map_or_else(Vec::new, |a| a[range.clone()].to_vec()),
                    static_attention: st_att.as_ref().map_or_else(Vec::new, |a| a[range.clone()].to_vec()),
                });
            }
        }
        Ok(PredictionSet { k, scenes: out })
    }
}
