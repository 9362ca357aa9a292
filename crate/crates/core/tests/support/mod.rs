//! Finite-difference checks shared by the gradient tests and the acceptance
//! suite.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use safecritic::autodiff::gradcheck::{check_gradients, check_selected, GradCheckReport};
use safecritic::autodiff::{BatchNormStats, Binding, ParamStore, Tape, Tensor, Var};
use safecritic::data::sim::{simulate, SimConfig};
use safecritic::data::Scene;
use safecritic::error::Result;
use safecritic::model::*;
use safecritic::nn::{Activation, AttentionHead, CellFeatures, GridInput, LstmCell, Mlp, MlpSpec, Mode};
use safecritic::train::{generator_loss, loss_adversarial_logits, loss_critic_regression, loss_critic_regularizer};

pub const TOL: f64 = 1e-4;
const H: f64 = 1e-5;
/// Step for full-model losses, whose forward passes accumulate ~1e-13 of
/// round-off; a smaller step lets that noise dominate the difference.
const H_MODEL: f64 = 1e-4;

pub struct Check {
    pub name: String,
    pub report: GradCheckReport,
}

impl Check {
    fn new(name: &str, report: GradCheckReport) -> Self {
        Check { name: name.to_string(), report }
    }

    pub fn passed(&self) -> bool {
        self.report.max_rel_error < TOL
    }

    pub fn line(&self) -> String {
        let r = &self.report;
        format!(
            "{:<28} max rel error {:.2e} over {:>4} coords (worst input {} elem {}: {:.6e} vs {:.6e})",
            self.name, r.max_rel_error, r.checked, r.worst.0, r.worst.1, r.analytic, r.numeric
        )
    }
}

pub fn small_config() -> ModelConfig {
    ModelConfig {
        hidden: 6,
        embedding: 6,
        noise_dim: 3,
        attention_hidden: 4,
        critic_hidden: 5,
        critic_mlp: 4,
        disc_mlp: 5,
        ..ModelConfig::default()
    }
}

/// Slow walkers keep the auto-encoding sum near 1 at initialization, so
/// central differences of the full loss stay well above round-off.
pub fn small_scenes() -> Vec<Scene> {
    let mut sc = SimConfig::preset("crossing-corridor").unwrap();
    sc.desired_speed = 0.15;
    sc.speed_spread = 0.02;
    sc.scenes = 2;
    sc.min_agents = 3;
    sc.max_agents = 4;
    sc.seed = 5;
    simulate(&sc).unwrap()
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Values bounded away from zero, for kinked activations.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let mut t = random(rng, shape);
    for x in t.data_mut() {
        *x += 0.2 * x.signum();
    }
    t
}

/// `Σ v ⊙ w` for a fixed pseudo-random `w`, so every output element carries
/// a distinct weight.
fn project(tape: &mut Tape, v: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random(&mut rng, tape.shape(v));
    let w = tape.constant(w);
    let p = tape.mul(v, w)?;
    Ok(tape.sum(p))
}

/// Every parameter's first element plus `count` random coordinates.
pub fn coords(store: &ParamStore, count: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sizes: Vec<usize> = store.iter().map(|(_, t)| t.len()).collect();
    let mut out: Vec<(usize, usize)> = (0..sizes.len()).map(|i| (i, 0)).collect();
    for _ in 0..count {
        let i = rng.random_range(0..sizes.len());
        out.push((i, rng.random_range(0..sizes[i])));
    }
    out
}

fn params(store: &ParamStore) -> Vec<Tensor> {
    store.iter().map(|(_, t)| t.clone()).collect()
}

fn op(name: &str, inputs: Vec<Tensor>, f: impl Fn(&mut Tape, &[Var]) -> Result<Var>) -> Check {
    Check::new(name, check_gradients(&inputs, f, H).unwrap())
}

pub fn op_checks() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let r = &mut rng;
    let mut out = Vec::new();
    out.push(op("matmul", vec![random(r, &[3, 4]), random(r, &[4, 2])], |t, v| {
        let y = t.matmul(v[0], v[1])?;
        project(t, y, 1)
    }));
    out.push(op("bmm", vec![random(r, &[2, 3, 4]), random(r, &[2, 4, 2])], |t, v| {
        let y = t.bmm(v[0], v[1])?;
        project(t, y, 2)
    }));
    out.push(op("add (broadcast)", vec![random(r, &[3, 4]), random(r, &[4])], |t, v| {
        let y = t.add(v[0], v[1])?;
        let y = t.mul(y, y)?;
        project(t, y, 3)
    }));
    out.push(op("sub", vec![random(r, &[3, 4]), random(r, &[3, 4])], |t, v| {
        let y = t.sub(v[0], v[1])?;
        let y = t.mul(y, y)?;
        project(t, y, 4)
    }));
    out.push(op("mul", vec![random(r, &[3, 4]), random(r, &[3, 4])], |t, v| {
        let y = t.mul(v[0], v[1])?;
        project(t, y, 5)
    }));
    out.push(op("scale", vec![random(r, &[3, 2])], |t, v| {
        let y = t.scale(v[0], -2.5);
        let y = t.mul(y, y)?;
        project(t, y, 6)
    }));
    out.push(op("concat", vec![random(r, &[3, 2]), random(r, &[3, 3])], |t, v| {
        let y = t.concat(&[v[0], v[1]])?;
        let y = t.mul(y, y)?;
        project(t, y, 7)
    }));
    out.push(op("stack_rows", vec![random(r, &[2, 3]), random(r, &[4, 3])], |t, v| {
        let y = t.stack_rows(&[v[0], v[1]])?;
        let y = t.mul(y, y)?;
        project(t, y, 8)
    }));
    out.push(op("slice", vec![random(r, &[3, 5])], |t, v| {
        let y = t.slice(v[0], 1, 4)?;
        let y = t.mul(y, y)?;
        project(t, y, 9)
    }));
    out.push(op("reshape", vec![random(r, &[3, 4])], |t, v| {
        let y = t.reshape(v[0], &[2, 6])?;
        let y = t.mul(y, y)?;
        project(t, y, 10)
    }));
    out.push(op("tanh", vec![random(r, &[3, 4])], |t, v| {
        let y = t.tanh(v[0]);
        project(t, y, 11)
    }));
    out.push(op("sigmoid", vec![random(r, &[3, 4])], |t, v| {
        let y = t.sigmoid(v[0]);
        project(t, y, 12)
    }));
    out.push(op("relu", vec![away_from_zero(r, &[3, 4])], |t, v| {
        let y = t.relu(v[0]);
        let y = t.mul(y, y)?;
        project(t, y, 13)
    }));
    out.push(op("softplus", vec![random(r, &[3, 4])], |t, v| {
        let y = t.softplus(v[0]);
        project(t, y, 14)
    }));
    out.push(op("softmax (rows)", vec![random(r, &[3, 4])], |t, v| {
        let y = t.softmax(v[0], 1)?;
        project(t, y, 15)
    }));
    out.push(op("softmax (columns)", vec![random(r, &[3, 4])], |t, v| {
        let y = t.softmax(v[0], 0)?;
        project(t, y, 16)
    }));
    out.push(op("sum", vec![random(r, &[3, 4])], |t, v| {
        let y = t.mul(v[0], v[0])?;
        Ok(t.sum(y))
    }));
    out.push(op("mean", vec![random(r, &[3, 4])], |t, v| {
        let y = t.mul(v[0], v[0])?;
        t.mean(y)
    }));
    out.push(op("squared_error", vec![random(r, &[3, 4]), random(r, &[3, 4])], |t, v| t.squared_error(v[0], v[1])));
    out.push(op("bce", vec![random(r, &[5, 1])], |t, v| {
        let p = t.sigmoid(v[0]);
        t.bce(p, &[1.0, 0.0, 1.0, 0.25, 0.0])
    }));
    out.push(op("bce_with_logits", vec![random(r, &[5, 1])], |t, v| {
        let z = t.scale(v[0], 4.0);
        t.bce_with_logits(z, &[1.0, 0.0, 0.0, 1.0, 0.5])
    }));
    out.push(op("batch_norm (batch)", vec![random(r, &[6, 3]), random(r, &[3]), random(r, &[3])], |t, v| {
        let (y, _) = t.batch_norm(v[0], v[1], v[2], BatchNormStats::Batch, 1e-5)?;
        let y = t.tanh(y);
        project(t, y, 17)
    }));
    out.push(op("batch_norm (running)", vec![random(r, &[6, 3]), random(r, &[3]), random(r, &[3])], |t, v| {
        let stats = BatchNormStats::Running { mean: &[0.1, -0.2, 0.3], var: &[0.5, 1.5, 2.0] };
        let (y, _) = t.batch_norm(v[0], v[1], v[2], stats, 1e-5)?;
        let y = t.tanh(y);
        project(t, y, 18)
    }));
    out.push(op("gather_rows", vec![random(r, &[3, 2])], |t, v| {
        let y = t.gather_rows(v[0], &[Some(2), None, Some(0), Some(2)])?;
        let y = t.mul(y, y)?;
        project(t, y, 19)
    }));
    out.push(op("gather_weighted_sum", vec![random(r, &[2, 3]), random(r, &[4, 3])], |t, v| {
        let index = [Some(1), None, Some(3), Some(3), Some(0), None];
        let y = t.gather_weighted_sum(v[0], v[1], &index)?;
        let y = t.mul(y, y)?;
        project(t, y, 20)
    }));
    out
}

pub fn check_mlp() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut store = ParamStore::new();
    let spec = MlpSpec { batch_norm: true, ..MlpSpec::new(vec![4, 6, 5, 2], vec![Activation::Relu, Activation::Tanh]) };
    let mlp = Mlp::new(&mut store, "mlp", spec, &mut rng).unwrap();
    let mut inputs = params(&store);
    let np = inputs.len();
    inputs.push(random(&mut rng, &[7, 4]));
    let f = |t: &mut Tape, v: &[Var]| {
        let b = Binding::from_vars(v[..np].to_vec());
        let (y, _) = mlp.forward_mode(t, &b, v[np], Mode::Train)?;
        project(t, y, 22)
    };
    Check::new("mlp (batch norm)", check_gradients(&inputs, f, H).unwrap())
}

/// The cell unrolled over a full observed plus predicted horizon.
pub fn check_lstm() -> Check {
    let steps = safecritic::data::scene::T_OBS + safecritic::data::scene::T_PRED;
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut store = ParamStore::new();
    let cell = LstmCell::new(&mut store, "lstm", 3, 4, &mut rng);
    let mut inputs = params(&store);
    let np = inputs.len();
    for _ in 0..steps {
        inputs.push(random(&mut rng, &[2, 3]));
    }
    let f = |t: &mut Tape, v: &[Var]| {
        let b = Binding::from_vars(v[..np].to_vec());
        let state = cell.zero_state(t, 2);
        let (hs, last) = cell.unroll(t, &b, &v[np..], state)?;
        let mut total = project(t, last.c, 24)?;
        for (i, &h) in hs.iter().enumerate() {
            let p = project(t, h, 100 + i as u64)?;
            total = t.add(total, p)?;
        }
        Ok(total)
    };
    Check::new(&format!("lstm ({steps}-step BPTT)"), check_gradients(&inputs, f, H).unwrap())
}

pub fn check_attention() -> Vec<Check> {
    let (cells, feat, agent, hidden, batch) = (4, 3, 2, 5, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let mut store = ParamStore::new();
    let head = AttentionHead::new(&mut store, "att", cells, feat, agent, hidden, true, &mut rng)
        .unwrap()
        .with_spatial_query(&mut store, "att", &mut rng);
    // Nonzero biases so their gradients are exercised.
    for (_, t) in store.iter_mut() {
        for x in t.data_mut().iter_mut().filter(|x| **x == 0.0) {
            *x = 0.3;
        }
    }
    let empty = Tensor::new(vec![batch * cells, 1], vec![0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
    let mut inputs = params(&store);
    let np = inputs.len();
    inputs.push(random(&mut rng, &[batch * cells, feat]));
    inputs.push(random(&mut rng, &[batch * cells, 2]));
    inputs.push(random(&mut rng, &[batch, agent]));
    let dense = |t: &mut Tape, v: &[Var]| {
        let b = Binding::from_vars(v[..np].to_vec());
        let grid =
            GridInput { features: CellFeatures::Dense(v[np]), offsets: Some(v[np + 1]), empty: Some(empty.clone()) };
        let a = head.attend(t, &b, &grid, v[np + 2])?;
        let c = project(t, a.context, 26)?;
        let w = project(t, a.weights, 27)?;
        t.add(c, w)
    };
    let dense_check = Check::new("attention (dense)", check_gradients(&inputs, dense, H).unwrap());

    let index = vec![Some(0), None, Some(2), Some(1), None, Some(1), Some(2), None];
    let gathered_empty =
        Tensor::new(vec![batch * cells, 1], index.iter().map(|s| if s.is_none() { 1.0 } else { 0.0 }).collect())
            .unwrap();
    let mut inputs = params(&store);
    inputs.push(random(&mut rng, &[3, feat]));
    inputs.push(random(&mut rng, &[batch * cells, 2]));
    inputs.push(random(&mut rng, &[batch, agent]));
    let gathered = |t: &mut Tape, v: &[Var]| {
        let b = Binding::from_vars(v[..np].to_vec());
        let grid = GridInput {
            features: CellFeatures::Gathered { source: v[np], index: index.clone() },
            offsets: Some(v[np + 1]),
            empty: Some(gathered_empty.clone()),
        };
        let a = head.attend(t, &b, &grid, v[np + 2])?;
        let c = project(t, a.context, 28)?;
        let w = project(t, a.weights, 29)?;
        t.add(c, w)
    };
    let gathered_check = Check::new("attention (gathered)", check_gradients(&inputs, gathered, H).unwrap());
    vec![dense_check, gathered_check]
}

/// A small model with samples drawn at fixed noise.
struct Fixture {
    model: SafeCritic,
    scenes: Vec<Scene>,
    noise: Tensor,
    k: usize,
}

impl Fixture {
    fn new(seed: u64) -> Self {
        let config = small_config();
        let model = SafeCritic::new(config.clone(), seed).unwrap();
        let scenes = small_scenes();
        let agents: usize = scenes.iter().map(Scene::num_agents).sum();
        let k = 2;
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let noise = sample_noise(&mut rng, k * agents, config.noise_dim);
        Fixture { model, scenes, noise, k }
    }

    fn batch(&self) -> SceneBatch<'_> {
        let refs: Vec<&Scene> = self.scenes.iter().collect();
        SceneBatch::new(&refs).unwrap()
    }
}

pub fn check_discriminator() -> Check {
    let fx = Fixture::new(31);
    let batch = fx.batch();
    let mut gen_tape = Tape::new();
    let gb = fx.model.gen_params.bind(&mut gen_tape, false);
    let out = fx.model.generator.sample(&mut gen_tape, &gb, &batch, fx.k, &fx.noise).unwrap();
    let fake: Vec<Tensor> =
        fake_sequence(&mut gen_tape, &batch, &out).unwrap().iter().map(|&v| gen_tape.value(v).clone()).collect();
    let real = batch.real_sequence();
    let n = batch.agents();
    let f = |t: &mut Tape, v: &[Var]| {
        let b = Binding::from_vars(v.to_vec());
        let mut seq = Vec::new();
        for (r, fk) in real.iter().zip(&fake) {
            let rv = t.constant(r.clone());
            let fv = t.constant(fk.clone());
            seq.push(t.stack_rows(&[rv, fv])?);
        }
        let (logits, _) = fx.model.discriminator.logits(t, &b, &seq, Mode::Train)?;
        let rl = t.gather_rows(logits, &(0..n).map(Some).collect::<Vec<_>>())?;
        let fl = t.gather_rows(logits, &(n..n + fx.k * n).map(Some).collect::<Vec<_>>())?;
        let (_, d) = loss_adversarial_logits(t, rl, fl)?;
        Ok(d)
    };
    let store = &fx.model.disc_params;
    Check::new("discriminator loss", check_selected(&params(store), f, H_MODEL, &coords(store, 150, 32)).unwrap())
}

pub fn check_critic() -> Check {
    let fx = Fixture::new(3);
    let batch = fx.batch();
    let mut gen_tape = Tape::new();
    let gb = fx.model.gen_params.bind(&mut gen_tape, false);
    let out = fx.model.generator.sample(&mut gen_tape, &gb, &batch, fx.k, &fx.noise).unwrap();
    let rows = out.rows();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let rewards: Vec<Tensor> = (0..out.steps.len())
        .map(|_| Tensor::new(vec![rows, 1], (0..rows).map(|_| rng.random_range(0..3) as f64).collect()).unwrap())
        .collect();
    let f = |t: &mut Tape, v: &[Var]| {
        let b = Binding::from_vars(v.to_vec());
        let steps: Vec<CriticStep> = out.steps.iter().map(|s| CriticStep::detached(s, &gen_tape, t)).collect();
        let v = fx.model.critic.scores(t, &b, &steps)?;
        loss_critic_regression(t, &v, &rewards)
    };
    let store = &fx.model.critic_params;
    Check::new("critic regression", check_selected(&params(store), f, H_MODEL, &coords(store, 150, 2)).unwrap())
}

/// Generator parameters under the full objective, and under the critic
/// regularizer alone (gradient through the frozen critic's inputs).
pub fn check_generator() -> Vec<Check> {
    let fx = Fixture::new(41);
    let batch = fx.batch();
    let store = &fx.model.gen_params;
    let full = |t: &mut Tape, v: &[Var]| {
        let b = Binding::from_vars(v.to_vec());
        let out = fx.model.generator.sample(t, &b, &batch, fx.k, &fx.noise)?;
        Ok(generator_loss(t, &fx.model, &batch, &out, 1.0, 10.0)?.total)
    };
    let regularizer = |t: &mut Tape, v: &[Var]| {
        let b = Binding::from_vars(v.to_vec());
        let out = fx.model.generator.sample(t, &b, &batch, fx.k, &fx.noise)?;
        let cb = fx.model.critic_params.bind(t, false);
        let steps: Vec<CriticStep> = out.steps.iter().map(CriticStep::attached).collect();
        let s = fx.model.critic.scores(t, &cb, &steps)?;
        loss_critic_regularizer(t, &s)
    };
    vec![
        Check::new(
            "generator (full loss)",
            check_selected(&params(store), full, H_MODEL, &coords(store, 150, 42)).unwrap(),
        ),
        Check::new(
            "generator via critic",
            check_selected(&params(store), regularizer, H_MODEL, &coords(store, 150, 43)).unwrap(),
        ),
    ]
}

pub fn all_checks() -> Vec<Check> {
    let mut out = op_checks();
    out.push(check_mlp());
    out.push(check_lstm());
    out.extend(check_attention());
    out.push(check_discriminator());
    out.push(check_critic());
    out.extend(check_generator());
    out
}
