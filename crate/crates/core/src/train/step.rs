use std::collections::VecDeque;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{clip_global_norm, AdamState, Binding, ParamStore, Tape, Tensor, Var};
use crate::collision::{count_collisions, reward_signal};
use crate::data::scene::Scene;
use crate::error::{Error, Result};
use crate::model::{fake_sequence, reward_tensors, sample_noise, CriticStep, GenOutput, SafeCritic, SceneBatch};
use crate::nn::{apply_bn_updates, Mode, BN_MOMENTUM};
use crate::scene::Occupancy;
use crate::train::config::TrainConfig;
use crate::train::losses::{
    autoencode_stacked, loss_adversarial_logits, loss_critic_regression, loss_critic_regularizer,
};

/// Loss values of one training step.
#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown {
    pub adversarial_g: f64,
    pub adversarial_d: f64,
    pub auto_encoding: f64,
    pub critic_regression: f64,
    /// Zero when the regularizer weight is zero.
    pub critic_regularizer: f64,
    /// Collision events per generated sample of the batch.
    pub nc_train: f64,
}

impl LossBreakdown {
    pub const CSV_HEADER: &'static str =
        "epoch,step,adversarial_g,adversarial_d,auto_encoding,critic_regression,critic_regularizer,nc_train";

    fn fields(&self) -> [(&'static str, f64); 6] {
        [
            ("adversarial_g", self.adversarial_g),
            ("adversarial_d", self.adversarial_d),
            ("auto_encoding", self.auto_encoding),
            ("critic_regression", self.critic_regression),
            ("critic_regularizer", self.critic_regularizer),
            ("nc_train", self.nc_train),
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.fields().iter().all(|(_, v)| v.is_finite())
    }

    pub fn csv_row(&self, epoch: usize, step: usize) -> String {
        let mut s = format!("{epoch},{step}");
        for (_, v) in self.fields() {
            s.push_str(&format!(",{v}"));
        }
        s
    }
}

/// Critic inputs of one generated batch, detached from the generator.
#[derive(Clone, Debug)]
struct CriticBatch {
    steps: Vec<CriticInputs>,
    rewards: Vec<Tensor>,
}

#[derive(Clone, Debug)]
struct CriticInputs {
    delta: Tensor,
    positions: Tensor,
    hidden: Tensor,
    occupancy: Vec<Occupancy>,
    classes: Vec<u8>,
}

impl CriticBatch {
    fn on<'a>(&'a self, tape: &mut Tape) -> Vec<CriticStep<'a>> {
        self.steps
            .iter()
            .map(|s| CriticStep {
                delta: tape.constant(s.delta.clone()),
                positions: tape.constant(s.positions.clone()),
                hidden: tape.constant(s.hidden.clone()),
                occupancy: &s.occupancy,
                classes: &s.classes,
            })
            .collect()
    }
}

/// Terms of the generator objective, all on one tape.
#[derive(Clone, Copy, Debug)]
pub struct GeneratorLoss {
    pub adversarial: Var,
    pub auto_encoding: Var,
    /// Mean critic score; `None` when its weight is zero.
    pub regularizer: Option<Var>,
    /// `adversarial + λ_ae · auto_encoding + λ_c · regularizer`.
    pub total: Var,
}

/// Generator objective for samples `out` drawn on `tape`. The discriminator
/// and critic are bound frozen, so gradients reach only the generator. The
/// discriminator scores real and generated rows as one training-mode batch,
/// the layout it is fit on; its running statistics are left alone.
pub fn generator_loss(
    tape: &mut Tape,
    model: &SafeCritic,
    batch: &SceneBatch,
    out: &GenOutput,
    lambda_ae: f64,
    lambda_c: f64,
) -> Result<GeneratorLoss> {
    let (n, k) = (out.agents, out.k);
    let db = model.disc_params.bind(tape, false);
    let fake = fake_sequence(tape, batch, out)?;
    let mut seq = Vec::with_capacity(fake.len());
    for (r, &f) in batch.real_sequence().into_iter().zip(&fake) {
        let rv = tape.constant(r);
        seq.push(tape.stack_rows(&[rv, f])?);
    }
    let (logits, _) = model.discriminator.logits(tape, &db, &seq, Mode::Train)?;
    let real_rows: Vec<Option<usize>> = (0..n).map(Some).collect();
    let fake_rows: Vec<Option<usize>> = (n..n + k * n).map(Some).collect();
    let rl = tape.gather_rows(logits, &real_rows)?;
    let fl = tape.gather_rows(logits, &fake_rows)?;
    let (adversarial, _) = loss_adversarial_logits(tape, rl, fl)?;
    let flat = out.flat_positions(tape)?;
    let (auto_encoding, _) = autoencode_stacked(tape, &batch.future_flat(), flat, k)?;
    let weighted = tape.scale(auto_encoding, lambda_ae);
    let mut total = tape.add(adversarial, weighted)?;
    let mut regularizer = None;
    if lambda_c > 0.0 {
        let cb = model.critic_params.bind(tape, false);
        let steps: Vec<CriticStep> = out.steps.iter().map(CriticStep::attached).collect();
        let v = model.critic.scores(tape, &cb, &steps)?;
        let reg = loss_critic_regularizer(tape, &v)?;
        let w = tape.scale(reg, lambda_c);
        total = tape.add(total, w)?;
        regularizer = Some(reg);
    }
    Ok(GeneratorLoss { adversarial, auto_encoding, regularizer, total })
}

/// Where and how often [`Trainer::fit`] writes checkpoints.
#[derive(Clone, Debug)]
pub struct CheckpointPolicy {
    pub dir: PathBuf,
    /// Epochs between checkpoints; the last epoch is always saved.
    pub every: usize,
}

/// Owns the model, one optimizer per network and the sampling state.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: SafeCritic,
    pub config: TrainConfig,
    gen_opt: AdamState,
    disc_opt: AdamState,
    critic_opt: AdamState,
    rng: ChaCha8Rng,
    replay: VecDeque<CriticBatch>,
    steps: usize,
}

fn scalar(tape: &Tape, v: Var) -> Result<f64> {
    tape.value(v).item()
}

fn checksums(model: &SafeCritic) -> [u64; 3] {
    [model.gen_params.checksum(), model.disc_params.checksum(), model.critic_params.checksum()]
}

/// Fails if any network other than `updated` changed.
fn ensure_isolated(before: [u64; 3], after: [u64; 3], updated: usize, stage: &str) -> Result<()> {
    const NAMES: [&str; 3] = ["generator", "discriminator", "critic"];
    for i in (0..3).filter(|&i| i != updated) {
        if before[i] != after[i] {
            return Err(Error::Invalid(format!("{stage} update changed the {} parameters", NAMES[i])));
        }
    }
    Ok(())
}

fn update(
    tape: &Tape,
    loss: Var,
    binding: &Binding,
    store: &mut ParamStore,
    opt: &mut AdamState,
    clip: f64,
) -> Result<()> {
    let grads = tape.backward(loss)?;
    let mut g = binding.gradients(tape, &grads);
    let norm = clip_global_norm(&mut g, clip);
    if !norm.is_finite() {
        return Err(Error::Numerical(format!("gradient norm is {norm}")));
    }
    opt.step(store, &g)
}

impl Trainer {
    pub fn new(model: SafeCritic, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let gen_opt = AdamState::new(&model.gen_params, config.lr_generator)?;
        let disc_opt = AdamState::new(&model.disc_params, config.lr_discriminator)?;
        let critic_opt = AdamState::new(&model.critic_params, config.lr_critic)?;
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Trainer { model, config, gen_opt, disc_opt, critic_opt, rng, replay: VecDeque::new(), steps: 0 })
    }

    /// Steps taken so far.
    pub fn steps(&self) -> usize {
        self.steps
    }

    fn diagnose(&self, what: &str, losses: &[(&str, f64)]) -> Error {
        let mut msg = format!("non-finite {what} at step {}:", self.steps);
        for (k, v) in losses {
            msg.push_str(&format!(" {k}={v}"));
        }
        let m = &self.model;
        msg.push_str(&format!(
            "; finite parameters: generator {}, discriminator {}, critic {}",
            m.gen_params.all_finite(),
            m.disc_params.all_finite(),
            m.critic_params.all_finite()
        ));
        Error::Numerical(msg)
    }

    /// One update of every network on `scenes`: sample futures, update the
    /// discriminator, regress the critic on the samples' collisions, then
    /// update the generator.
    pub fn train_step(&mut self, scenes: &[&Scene]) -> Result<LossBreakdown> {
        if scenes.is_empty() {
            return Err(Error::Invalid("empty training batch".into()));
        }
        let cfg = self.config.clone();
        let mc = self.model.config.clone();
        let batch = SceneBatch::new(scenes)?;
        let k = cfg.k_train;
        let n = batch.agents();

        // (1) sample
        let noise = sample_noise(&mut self.rng, k * n, mc.noise_dim);
        let mut tape = Tape::new();
        let gb = self.model.gen_params.bind(&mut tape, true);
        let out = self.model.generator.sample(&mut tape, &gb, &batch, k, &noise)?;
        let paths = out.paths(&tape);
        if !paths.iter().flatten().all(|p| p.is_finite()) {
            return Err(self.diagnose("generated positions", &[]));
        }
        let maps = batch.row_maps(k);
        let mut rewards = vec![Vec::new(); k * n];
        let mut events = 0usize;
        for g in batch.groups(k) {
            let map = maps[g.start];
            events += count_collisions(&paths[g.clone()], mc.epsilon)?.nc();
            let signal = reward_signal(&paths[g.clone()], map, mc.blocked, mc.epsilon)?;
            for (r, sig) in g.zip(signal) {
                rewards[r] = sig;
            }
        }
        let nc_train = events as f64 / k as f64;

        // (2) discriminator
        let real = batch.real_sequence();
        let fake: Vec<Tensor> =
            fake_sequence(&mut tape, &batch, &out)?.iter().map(|&v| tape.value(v).clone()).collect();
        let real_rows: Vec<Option<usize>> = (0..n).map(Some).collect();
        let fake_rows: Vec<Option<usize>> = (n..n + k * n).map(Some).collect();
        let mut adversarial_d = 0.0;
        for _ in 0..cfg.d_steps {
            let before = checksums(&self.model);
            let mut dt = Tape::new();
            let db = self.model.disc_params.bind(&mut dt, true);
            let mut seq = Vec::with_capacity(real.len());
            for (r, f) in real.iter().zip(&fake) {
                let rv = dt.constant(r.clone());
                let fv = dt.constant(f.clone());
                seq.push(dt.stack_rows(&[rv, fv])?);
            }
            let (logits, bn) = self.model.discriminator.logits(&mut dt, &db, &seq, Mode::Train)?;
            let rl = dt.gather_rows(logits, &real_rows)?;
            let fl = dt.gather_rows(logits, &fake_rows)?;
            let (_, d_loss) = loss_adversarial_logits(&mut dt, rl, fl)?;
            adversarial_d = scalar(&dt, d_loss)?;
            if !adversarial_d.is_finite() {
                return Err(self.diagnose("discriminator loss", &[("adversarial_d", adversarial_d)]));
            }
            update(&dt, d_loss, &db, &mut self.model.disc_params, &mut self.disc_opt, cfg.clip_norm)?;
            apply_bn_updates(&mut self.model.disc_params, &bn, BN_MOMENTUM);
            ensure_isolated(before, checksums(&self.model), 1, "discriminator")?;
        }

        // (3) critic
        let mut critic_regression = 0.0;
        if cfg.critic {
            let current = CriticBatch {
                steps: out
                    .steps
                    .iter()
                    .map(|s| CriticInputs {
                        delta: tape.value(s.delta).clone(),
                        positions: tape.value(s.positions).clone(),
                        hidden: tape.value(s.hidden).clone(),
                        occupancy: s.occupancy.clone(),
                        classes: s.classes.clone(),
                    })
                    .collect(),
                rewards: reward_tensors(&rewards),
            };
            for _ in 0..cfg.critic_steps {
                let before = checksums(&self.model);
                let mut ct = Tape::new();
                let cb = self.model.critic_params.bind(&mut ct, true);
                let mut total = None;
                let batches = std::iter::once(&current).chain(self.replay.iter());
                let count = 1 + self.replay.len();
                for (i, cbatch) in batches.enumerate() {
                    let steps = cbatch.on(&mut ct);
                    let v = self.model.critic.scores(&mut ct, &cb, &steps)?;
                    let l = loss_critic_regression(&mut ct, &v, &cbatch.rewards)?;
                    if i == 0 {
                        critic_regression = scalar(&ct, l)?;
                    }
                    total = Some(match total {
                        None => l,
                        Some(t) => ct.add(t, l)?,
                    });
                }
                let loss = ct.scale(total.expect("current batch"), 1.0 / count as f64);
                if !critic_regression.is_finite() || !scalar(&ct, loss)?.is_finite() {
                    return Err(self.diagnose("critic loss", &[("critic_regression", critic_regression)]));
                }
                update(&ct, loss, &cb, &mut self.model.critic_params, &mut self.critic_opt, cfg.clip_norm)?;
                ensure_isolated(before, checksums(&self.model), 2, "critic")?;
            }
            if cfg.replay > 0 {
                self.replay.push_front(current);
                self.replay.truncate(cfg.replay);
            }
        }

        // (4) generator
        let before = checksums(&self.model);
        let g = generator_loss(&mut tape, &self.model, &batch, &out, cfg.lambda_ae, cfg.critic_weight())?;
        let critic_regularizer = match g.regularizer {
            Some(r) => scalar(&tape, r)?,
            None => 0.0,
        };
        let (g_adv, ae, total) = (g.adversarial, g.auto_encoding, g.total);
        let losses = LossBreakdown {
            adversarial_g: scalar(&tape, g_adv)?,
            adversarial_d,
            auto_encoding: scalar(&tape, ae)?,
            critic_regression,
            critic_regularizer,
            nc_train,
        };
        if !losses.is_finite() || !scalar(&tape, total)?.is_finite() {
            return Err(self.diagnose("generator loss", &losses.fields()));
        }
        update(&tape, total, &gb, &mut self.model.gen_params, &mut self.gen_opt, cfg.clip_norm)?;
        ensure_isolated(before, checksums(&self.model), 0, "generator")?;
        if !self.model.gen_params.all_finite() {
            return Err(self.diagnose("generator parameters", &losses.fields()));
        }
        self.steps += 1;
        Ok(losses)
    }

    /// Shuffled batches of scene indices for one epoch.
    fn epoch_batches(&mut self, count: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..count).collect();
        order.shuffle(&mut self.rng);
        order.chunks(self.config.batch_size).map(<[usize]>::to_vec).collect()
    }

    /// Runs one epoch and returns its per-step losses.
    pub fn train_epoch(&mut self, scenes: &[Scene]) -> Result<Vec<LossBreakdown>> {
        let mut out = Vec::new();
        for idx in self.epoch_batches(scenes.len()) {
            let batch: Vec<&Scene> = idx.iter().map(|&i| &scenes[i]).collect();
            out.push(self.train_step(&batch)?);
        }
        Ok(out)
    }

    /// Trains for `config.epochs` epochs. Writes one CSV row per step to
    /// `log` when given, and checkpoints per `checkpoints`.
    pub fn fit(
        &mut self,
        scenes: &[Scene],
        mut log: Option<&mut dyn Write>,
        checkpoints: Option<&CheckpointPolicy>,
    ) -> Result<Vec<LossBreakdown>> {
        if scenes.is_empty() {
            return Err(Error::Invalid("no training scenes".into()));
        }
        if let Some(w) = log.as_deref_mut() {
            writeln!(w, "{}", LossBreakdown::CSV_HEADER)?;
        }
        let mut trace = Vec::new();
        for epoch in 1..=self.config.epochs {
            let first_step = self.steps;
            let losses = self.train_epoch(scenes)?;
            if let Some(w) = log.as_deref_mut() {
                for (i, l) in losses.iter().enumerate() {
                    writeln!(w, "{}", l.csv_row(epoch, first_step + i + 1))?;
                }
            }
            trace.extend(losses);
            if let Some(p) = checkpoints {
                if epoch % p.every.max(1) == 0 || epoch == self.config.epochs {
                    self.model.save(checkpoint_path(&p.dir, epoch))?;
                }
            }
        }
        Ok(trace)
    }
}

pub fn checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("checkpoint-epoch{epoch:04}.txt"))
}

/// Mean of each loss field over `trace`.
pub fn mean_losses(trace: &[LossBreakdown]) -> Option<LossBreakdown> {
    if trace.is_empty() {
        return None;
    }
    let n = trace.len() as f64;
    let sum = |f: fn(&LossBreakdown) -> f64| trace.iter().map(f).sum::<f64>() / n;
    Some(LossBreakdown {
        adversarial_g: sum(|l| l.adversarial_g),
        adversarial_d: sum(|l| l.adversarial_d),
        auto_encoding: sum(|l| l.auto_encoding),
        critic_regression: sum(|l| l.critic_regression),
        critic_regularizer: sum(|l| l.critic_regularizer),
        nc_train: sum(|l| l.nc_train),
    })
}
