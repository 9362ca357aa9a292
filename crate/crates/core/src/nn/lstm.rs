use rand::Rng;

use crate::autodiff::{Binding, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// LSTM cell with fused gate weights `[(input + hidden), 4·hidden]`, gate
/// order input, forget, candidate, output.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub input_size: usize,
    pub hidden_size: usize,
    weight: ParamId,
    bias: ParamId,
}

/// Hidden and cell state for a batch of rows, each `[rows, hidden]`.
#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmCell {
    pub fn new(store: &mut ParamStore, name: &str, input_size: usize, hidden_size: usize, rng: &mut impl Rng) -> Self {
        let fan_in = input_size + hidden_size;
        let weight = store.add_uniform(format!("{name}.w"), &[fan_in, 4 * hidden_size], fan_in, rng);
        let bias = store.add_uniform(format!("{name}.b"), &[4 * hidden_size], fan_in, rng);
        LstmCell { input_size, hidden_size, weight, bias }
    }

    pub fn weight(&self) -> ParamId {
        self.weight
    }

    pub fn bias(&self) -> ParamId {
        self.bias
    }

    pub fn zero_state(&self, tape: &mut Tape, rows: usize) -> LstmState {
        LstmState {
            h: tape.constant(Tensor::zeros(&[rows, self.hidden_size])),
            c: tape.constant(Tensor::zeros(&[rows, self.hidden_size])),
        }
    }

    /// One step: `x: [rows, input]` with state `[rows, hidden]`.
    pub fn step(&self, tape: &mut Tape, b: &Binding, x: Var, state: LstmState) -> Result<LstmState> {
        let hs = self.hidden_size;
        let rows = tape.shape(x).first().copied().unwrap_or(0);
        let ok = tape.shape(x) == [rows, self.input_size]
            && tape.shape(state.h) == [rows, hs]
            && tape.shape(state.c) == [rows, hs];
        if !ok {
            return Err(Error::shape(
                "lstm_step",
                format!(
                    "x {:?}, h {:?}, c {:?} for input {} hidden {hs}",
                    tape.shape(x),
                    tape.shape(state.h),
                    tape.shape(state.c),
                    self.input_size
                ),
            ));
        }
        let xh = tape.concat(&[x, state.h])?;
        let z = tape.matmul(xh, b.var(self.weight))?;
        let z = tape.add(z, b.var(self.bias))?;
        let zi = tape.slice(z, 0, hs)?;
        let zf = tape.slice(z, hs, 2 * hs)?;
        let zg = tape.slice(z, 2 * hs, 3 * hs)?;
        let zo = tape.slice(z, 3 * hs, 4 * hs)?;
        let i = tape.sigmoid(zi);
        let f = tape.sigmoid(zf);
        let g = tape.tanh(zg);
        let o = tape.sigmoid(zo);
        let fc = tape.mul(f, state.c)?;
        let ig = tape.mul(i, g)?;
        let c = tape.add(fc, ig)?;
        let tc = tape.tanh(c);
        let h = tape.mul(o, tc)?;
        Ok(LstmState { h, c })
    }

    /// Runs the cell over `inputs` from `state`, returning every hidden state.
    pub fn unroll(
        &self,
        tape: &mut Tape,
        b: &Binding,
        inputs: &[Var],
        mut state: LstmState,
    ) -> Result<(Vec<Var>, LstmState)> {
        let mut hs = Vec::with_capacity(inputs.len());
        for &x in inputs {
            state = self.step(tape, b, x, state)?;
            hs.push(state.h);
        }
        Ok((hs, state))
    }
}
