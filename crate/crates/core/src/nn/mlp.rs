use rand::Rng;

use crate::autodiff::{BatchNormStats, Binding, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    None,
}

/// Layer layout of an [`Mlp`].
///
/// `layer_widths` lists every width from input to output, so a single linear
/// map is `[in, out]`. `activations` has one entry per hidden layer; the
/// output layer is always linear.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpSpec {
    pub layer_widths: Vec<usize>,
    pub activations: Vec<Activation>,
    /// Batch-normalize every hidden layer before its activation.
    pub batch_norm: bool,
}

impl MlpSpec {
    pub fn linear(input: usize, output: usize) -> Self {
        MlpSpec { layer_widths: vec![input, output], activations: vec![], batch_norm: false }
    }

    pub fn new(layer_widths: Vec<usize>, activations: Vec<Activation>) -> Self {
        MlpSpec { layer_widths, activations, batch_norm: false }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 {
            return Err(Error::Invalid("an MLP needs at least one layer".into()));
        }
        if self.layer_widths.contains(&0) {
            return Err(Error::Invalid(format!("zero width in {:?}", self.layer_widths)));
        }
        if self.activations.len() != self.layer_widths.len() - 2 {
            return Err(Error::Invalid(format!(
                "{} activations for {} hidden layers",
                self.activations.len(),
                self.layer_widths.len() - 2
            )));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug)]
struct Norm {
    gamma: ParamId,
    beta: ParamId,
    running_mean: ParamId,
    running_var: ParamId,
}

/// Batch statistics observed in a training-mode forward pass.
#[derive(Clone, Debug)]
pub struct BnUpdate {
    running_mean: ParamId,
    running_var: ParamId,
    mean: Vec<f64>,
    var: Vec<f64>,
}

/// Folds batch statistics into running statistics:
/// `running = momentum · running + (1 − momentum) · batch`.
pub fn apply_bn_updates(store: &mut ParamStore, updates: &[BnUpdate], momentum: f64) {
    for u in updates {
        for (id, batch) in [(u.running_mean, &u.mean), (u.running_var, &u.var)] {
            for (r, b) in store.get_mut(id).data_mut().iter_mut().zip(batch) {
                *r = momentum * *r + (1.0 - momentum) * b;
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<(ParamId, ParamId)>,
    norms: Vec<Norm>,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, name: &str, spec: MlpSpec, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let mut layers = Vec::new();
        let mut norms = Vec::new();
        let n_layers = spec.layer_widths.len() - 1;
        for (i, w) in spec.layer_widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let wid = store.add_uniform(format!("{name}.l{i}.w"), &[fan_in, fan_out], fan_in, rng);
            let bid = store.add_uniform(format!("{name}.l{i}.b"), &[fan_out], fan_in, rng);
            layers.push((wid, bid));
            if spec.batch_norm && i + 1 < n_layers {
                norms.push(Norm {
                    gamma: store.add(format!("{name}.bn{i}.gamma"), Tensor::ones(&[fan_out])),
                    beta: store.add(format!("{name}.bn{i}.beta"), Tensor::zeros(&[fan_out])),
                    running_mean: store.add(format!("{name}.bn{i}.running_mean"), Tensor::zeros(&[fan_out])),
                    running_var: store.add(format!("{name}.bn{i}.running_var"), Tensor::ones(&[fan_out])),
                });
            }
        }
        Ok(Mlp { spec, layers, norms })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    /// Parameter ids of layer `i` as `(weight, bias)`.
    pub fn layer(&self, i: usize) -> (ParamId, ParamId) {
        self.layers[i]
    }

    /// Inference-mode forward pass.
    pub fn forward(&self, tape: &mut Tape, b: &Binding, x: Var) -> Result<Var> {
        self.forward_mode(tape, b, x, Mode::Eval).map(|(y, _)| y)
    }

    pub fn forward_mode(&self, tape: &mut Tape, b: &Binding, x: Var, mode: Mode) -> Result<(Var, Vec<BnUpdate>)> {
        let width = tape.value(x).last_dim();
        if width != self.spec.input_width() {
            return Err(Error::shape(
                "mlp_forward",
                format!("input width {width}, first layer expects {}", self.spec.input_width()),
            ));
        }
        let mut updates = Vec::new();
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, &(w, bias)) in self.layers.iter().enumerate() {
            h = tape.matmul(h, b.var(w))?;
            h = tape.add(h, b.var(bias))?;
            if i == last {
                break;
            }
            if let Some(norm) = self.norms.get(i) {
                let (g, bt) = (b.var(norm.gamma), b.var(norm.beta));
                let (y, stats) = match mode {
                    Mode::Train => tape.batch_norm(h, g, bt, BatchNormStats::Batch, BN_EPS)?,
                    Mode::Eval => {
                        let mean = tape.value(b.var(norm.running_mean)).data().to_vec();
                        let var = tape.value(b.var(norm.running_var)).data().to_vec();
                        tape.batch_norm(h, g, bt, BatchNormStats::Running { mean: &mean, var: &var }, BN_EPS)?
                    }
                };
                h = y;
                if let Some((mean, var)) = stats {
                    updates.push(BnUpdate {
                        running_mean: norm.running_mean,
                        running_var: norm.running_var,
                        mean,
                        var,
                    });
                }
            }
            h = match self.spec.activations[i] {
                Activation::Relu => tape.relu(h),
                Activation::Tanh => tape.tanh(h),
                Activation::None => h,
            };
        }
        Ok((h, updates))
    }
}
