//! Spatial soft attention over an egocentric grid.
//!
//! Every cell gets a score from a one-hidden-layer network applied to
//! `cell feature ⊕ occupant offset ⊕ agent hidden state`, plus a learned
//! per-cell bias and a learned bias for empty cells. A softmax over all cells
//! gives the weights `α`, and the context is the `α`-weighted sum of the cell
//! values.
//!
//! The first layer is linear in each concatenated part, so it is evaluated
//! part by part: agent projections are computed once per agent, and gathered
//! features are projected before they are scattered over the grid.

use rand::Rng;

use crate::autodiff::{Binding, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Width of the relative offsets attached to dynamic grids.
pub const OFFSET_INPUT: usize = 2;
/// Width of the offset features a head sees: the offset and its squared
/// length.
pub const OFFSET_DIM: usize = 3;

/// Cell contents for a batch of `B` grids with `cells` cells each.
#[derive(Clone, Debug)]
pub enum CellFeatures {
    /// `[B·cells, F]`, one row per cell.
    Dense(Var),
    /// Cell `k` holds row `index[k]` of `source: [M, F]`, or zeros.
    Gathered { source: Var, index: Vec<Option<usize>> },
}

#[derive(Clone, Debug)]
pub struct GridInput {
    pub features: CellFeatures,
    /// `[B·cells, 2]` normalized occupant offsets, for heads built with offsets.
    /// With gathered features, offsets of cells without an occupant are
    /// treated as zero.
    pub offsets: Option<Var>,
    /// `[B·cells, 1]` with 1.0 for empty cells, for heads that model emptiness.
    pub empty: Option<Tensor>,
}

#[derive(Clone, Copy, Debug)]
pub struct Attended {
    /// `[B, F]`, or `[B, F + OFFSET_DIM]` when offset features are part of
    /// the value.
    pub context: Var,
    /// `[B, cells]`, each row a probability distribution.
    pub weights: Var,
}

enum Values<'a> {
    Dense(Var),
    Gathered(Var, &'a [Option<usize>]),
}

#[derive(Clone, Debug)]
pub struct AttentionHead {
    pub cells: usize,
    pub feature_dim: usize,
    pub agent_dim: usize,
    pub hidden: usize,
    pub with_offsets: bool,
    w_cell: ParamId,
    w_offset: Option<ParamId>,
    w_agent: ParamId,
    b_hidden: ParamId,
    w_score: ParamId,
    cell_bias: ParamId,
    empty_bias: ParamId,
    query: Option<(ParamId, ParamId)>,
}

impl AttentionHead {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cells: usize,
        feature_dim: usize,
        agent_dim: usize,
        hidden: usize,
        with_offsets: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if cells == 0 {
            return Err(Error::Invalid("attention over an empty grid".into()));
        }
        let fan_in = feature_dim + agent_dim + if with_offsets { OFFSET_DIM } else { 0 };
        let w_cell = store.add_uniform(format!("{name}.w_cell"), &[feature_dim, hidden], fan_in, rng);
        let w_offset =
            with_offsets.then(|| store.add_uniform(format!("{name}.w_offset"), &[OFFSET_DIM, hidden], fan_in, rng));
        let w_agent = store.add_uniform(format!("{name}.w_agent"), &[agent_dim, hidden], fan_in, rng);
        let b_hidden = store.add_uniform(format!("{name}.b_hidden"), &[hidden], fan_in, rng);
        let w_score = store.add_uniform(format!("{name}.w_score"), &[hidden, 1], hidden, rng);
        let cell_bias = store.add(format!("{name}.cell_bias"), Tensor::zeros(&[cells]));
        let empty_bias = store.add(format!("{name}.empty_bias"), Tensor::zeros(&[1, 1]));
        Ok(AttentionHead {
            cells,
            feature_dim,
            agent_dim,
            hidden,
            with_offsets,
            w_cell,
            w_offset,
            w_agent,
            b_hidden,
            w_score,
            cell_bias,
            empty_bias,
            query: None,
        })
    }

    /// Adds a bilinear position term `(h·W_q)·k_c` to every cell's score,
    /// with a learned key `k_c` per cell, so the agent state decides which
    /// grid locations matter.
    pub fn with_spatial_query(mut self, store: &mut ParamStore, name: &str, rng: &mut impl Rng) -> Self {
        let w = store.add_uniform(format!("{name}.w_query"), &[self.agent_dim, self.hidden], self.agent_dim, rng);
        let k = store.add_uniform(format!("{name}.cell_keys"), &[self.hidden, self.cells], self.hidden, rng);
        self.query = Some((w, k));
        self
    }

    pub fn context_dim(&self) -> usize {
        self.feature_dim + if self.with_offsets { OFFSET_DIM } else { 0 }
    }

    /// Parameter ids in the order the scoring network consumes them:
    /// cell weights, offset weights (if any), agent weights, hidden bias,
    /// score weights, per-cell bias, empty bias, then the spatial query
    /// weights and cell keys if present.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.w_cell];
        ids.extend(self.w_offset);
        ids.extend([self.w_agent, self.b_hidden, self.w_score, self.cell_bias, self.empty_bias]);
        if let Some((w, k)) = self.query {
            ids.extend([w, k]);
        }
        ids
    }

    pub fn attend(&self, tape: &mut Tape, b: &Binding, grid: &GridInput, agent_hidden: Var) -> Result<Attended> {
        let ah = tape.shape(agent_hidden).to_vec();
        if ah.len() != 2 || ah[1] != self.agent_dim {
            return Err(Error::shape("attend", format!("agent hidden {ah:?}, expected [B, {}]", self.agent_dim)));
        }
        let batch = ah[0];
        let n = batch * self.cells;
        if n == 0 {
            return Err(Error::shape("attend", "empty grid"));
        }
        match (self.w_offset, grid.offsets) {
            (Some(_), Some(off)) if tape.shape(off) != [n, OFFSET_INPUT] => {
                return Err(Error::shape("attend", format!("offsets {:?}", tape.shape(off))));
            }
            (Some(_), None) => return Err(Error::shape("attend", "head expects offsets")),
            (None, Some(_)) => return Err(Error::shape("attend", "head takes no offsets")),
            _ => {}
        }
        if let Some(empty) = &grid.empty {
            if empty.shape() != [n, 1] {
                return Err(Error::shape("attend", format!("empty mask {:?}", empty.shape())));
            }
        }
        let offsets = match grid.offsets {
            Some(off) => {
                let sq = tape.mul(off, off)?;
                let ones = tape.constant(Tensor::ones(&[OFFSET_INPUT, 1]));
                let r2 = tape.matmul(sq, ones)?;
                Some(tape.concat(&[off, r2])?)
            }
            None => None,
        };
        let grid = &GridInput { offsets, ..grid.clone() };
        let agent_proj = tape.matmul(agent_hidden, b.var(self.w_agent))?;

        let (score, values) = match &grid.features {
            CellFeatures::Dense(f) => {
                if tape.shape(*f) != [n, self.feature_dim] {
                    return Err(Error::shape(
                        "attend",
                        format!("cell features {:?}, expected [{n}, {}]", tape.shape(*f), self.feature_dim),
                    ));
                }
                let cell_proj = tape.matmul(*f, b.var(self.w_cell))?;
                let per_cell: Vec<Option<usize>> = (0..n).map(|k| Some(k / self.cells)).collect();
                let ap = tape.gather_rows(agent_proj, &per_cell)?;
                let mut pre = tape.add(cell_proj, ap)?;
                let mut values = *f;
                if let (Some(w), Some(off)) = (self.w_offset, grid.offsets) {
                    let op = tape.matmul(off, b.var(w))?;
                    pre = tape.add(pre, op)?;
                    values = tape.concat(&[values, off])?;
                }
                let score = self.score(tape, b, pre, grid.empty.clone())?;
                (score, Values::Dense(values))
            }
            CellFeatures::Gathered { source, index } => {
                if index.len() != n {
                    return Err(Error::shape("attend", format!("{} cell indices for {n} cells", index.len())));
                }
                let score = self.gathered_scores(tape, b, grid, *source, index, agent_proj)?;
                (score, Values::Gathered(*source, index))
            }
        };
        let score = tape.reshape(score, &[batch, self.cells])?;
        let mut score = tape.add(score, b.var(self.cell_bias))?;
        if let Some((w, k)) = self.query {
            let q = tape.matmul(agent_hidden, b.var(w))?;
            let pos = tape.matmul(q, b.var(k))?;
            score = tape.add(score, pos)?;
        }
        let weights = tape.softmax(score, 1)?;

        let context = match values {
            Values::Dense(values) => {
                let width = tape.value(values).last_dim();
                let w3 = tape.reshape(weights, &[batch, 1, self.cells])?;
                let v3 = tape.reshape(values, &[batch, self.cells, width])?;
                let ctx = tape.bmm(w3, v3)?;
                tape.reshape(ctx, &[batch, width])?
            }
            Values::Gathered(source, index) => {
                let ctx = tape.gather_weighted_sum(weights, source, index)?;
                match grid.offsets {
                    Some(off) => {
                        let occupied: Vec<Option<usize>> =
                            index.iter().enumerate().map(|(k, s)| s.map(|_| k)).collect();
                        let oc = tape.gather_weighted_sum(weights, off, &occupied)?;
                        tape.concat(&[ctx, oc])?
                    }
                    None => ctx,
                }
            }
        };
        Ok(Attended { context, weights })
    }

    /// Scores `[rows, 1]` from first-layer pre-activations.
    fn score(&self, tape: &mut Tape, b: &Binding, pre: Var, empty: Option<Tensor>) -> Result<Var> {
        let pre = tape.add(pre, b.var(self.b_hidden))?;
        let hidden = tape.tanh(pre);
        let mut score = tape.matmul(hidden, b.var(self.w_score))?;
        if let Some(e) = empty {
            let e = tape.constant(e);
            let eb = tape.matmul(e, b.var(self.empty_bias))?;
            score = tape.add(score, eb)?;
        }
        Ok(score)
    }

    /// Scores gathered cells once per distinct cell content in each grid.
    /// Cells without an occupant share one score per grid; so do occupied
    /// cells with the same source row when there are no offsets.
    fn gathered_scores(
        &self,
        tape: &mut Tape,
        b: &Binding,
        grid: &GridInput,
        source: Var,
        index: &[Option<usize>],
        agent_proj: Var,
    ) -> Result<Var> {
        let with_offsets = grid.offsets.is_some();
        let empty = grid.empty.as_ref().map(Tensor::data);
        let mut key_src = Vec::new();
        let mut key_row = Vec::new();
        let mut key_cell = Vec::new();
        let mut key_empty = Vec::new();
        let mut cell_key = Vec::with_capacity(index.len());
        let mut seen: Vec<(Option<usize>, u64, usize)> = Vec::new();
        for (r, cells) in index.chunks(self.cells).enumerate() {
            seen.clear();
            for (c, &src) in cells.iter().enumerate() {
                let k = r * self.cells + c;
                let e = empty.map_or(0.0, |e| e[k]);
                let unique = with_offsets && src.is_some();
                let found = (!unique)
                    .then(|| seen.iter().find(|(s, eb, _)| *s == src && *eb == e.to_bits()).map(|x| x.2))
                    .flatten();
                let id = match found {
                    Some(id) => id,
                    None => {
                        let id = key_src.len();
                        key_src.push(src);
                        key_row.push(Some(r));
                        key_cell.push(src.map(|_| k));
                        key_empty.push(e);
                        if !unique {
                            seen.push((src, e.to_bits(), id));
                        }
                        id
                    }
                };
                cell_key.push(Some(id));
            }
        }
        let keys = key_src.len();
        let projected = tape.matmul(source, b.var(self.w_cell))?;
        let cp = tape.gather_rows(projected, &key_src)?;
        let ap = tape.gather_rows(agent_proj, &key_row)?;
        let mut pre = tape.add(cp, ap)?;
        if let (Some(w), Some(off)) = (self.w_offset, grid.offsets) {
            let ko = tape.gather_rows(off, &key_cell)?;
            let op = tape.matmul(ko, b.var(w))?;
            pre = tape.add(pre, op)?;
        }
        let key_empty = grid.empty.as_ref().map(|_| Tensor::new(vec![keys, 1], key_empty)).transpose()?;
        let score = self.score(tape, b, pre, key_empty)?;
        tape.gather_rows(score, &cell_key)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn zero_score(store: &mut ParamStore, head: &AttentionHead) {
        let shape = store.get(head.w_score).shape().to_vec();
        *store.get_mut(head.w_score) = Tensor::zeros(&shape);
    }

    #[test]
    fn constant_scores_give_mean_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let head = AttentionHead::new(&mut store, "att", 64, 3, 4, 5, false, &mut rng).unwrap();
        zero_score(&mut store, &head);
        let mut tape = Tape::new();
        let b = store.bind(&mut tape, false);
        let mut feats = Tensor::zeros(&[64, 3]);
        feats.data_mut()[10 * 3..11 * 3].copy_from_slice(&[6.4, -3.2, 1.0]);
        let f = tape.constant(feats);
        let h = tape.constant(Tensor::full(&[1, 4], 0.2));
        let grid = GridInput { features: CellFeatures::Dense(f), offsets: None, empty: None };
        let out = head.attend(&mut tape, &b, &grid, h).unwrap();
        let ctx = tape.value(out.context).data();
        let want = [0.1, -0.05, 1.0 / 64.0];
        for (c, w) in ctx.iter().zip(want) {
            assert!((c - w).abs() < 1e-15, "{c} vs {w}");
        }
        assert!(tape.value(out.weights).data().iter().all(|&a| (a - 1.0 / 64.0).abs() < 1e-15));
    }

    #[test]
    fn gathered_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let head = AttentionHead::new(&mut store, "att", 4, 3, 2, 5, true, &mut rng).unwrap();
        *store.get_mut(head.empty_bias) = Tensor::full(&[1, 1], 0.7);
        let mut tape = Tape::new();
        let b = store.bind(&mut tape, false);
        let src = tape.constant(Tensor::new(vec![3, 3], (0..9).map(|x| x as f64 * 0.25 - 1.0).collect()).unwrap());
        let index = vec![None, Some(0), None, Some(2), Some(1), Some(1), None, None];
        let off_data: Vec<f64> = index
            .iter()
            .enumerate()
            .flat_map(|(k, s)| if s.is_some() { [0.1 * k as f64, -0.2] } else { [0.0, 0.0] })
            .collect();
        let off = tape.constant(Tensor::new(vec![8, 2], off_data).unwrap());
        let empty =
            Tensor::new(vec![8, 1], index.iter().map(|s| if s.is_none() { 1.0 } else { 0.0 }).collect()).unwrap();
        let h = tape.constant(Tensor::new(vec![2, 2], vec![0.3, -0.1, 0.5, 0.9]).unwrap());
        let g = GridInput {
            features: CellFeatures::Gathered { source: src, index: index.clone() },
            offsets: Some(off),
            empty: Some(empty.clone()),
        };
        let dense = tape.gather_rows(src, &index).unwrap();
        let d = GridInput { features: CellFeatures::Dense(dense), offsets: Some(off), empty: Some(empty) };
        let a = head.attend(&mut tape, &b, &g, h).unwrap();
        let e = head.attend(&mut tape, &b, &d, h).unwrap();
        for (x, y) in tape.value(a.context).data().iter().zip(tape.value(e.context).data()) {
            assert!((x - y).abs() < 1e-14);
        }
        for (x, y) in tape.value(a.weights).data().iter().zip(tape.value(e.weights).data()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn wrong_agent_width_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let head = AttentionHead::new(&mut store, "att", 4, 2, 3, 4, false, &mut rng).unwrap();
        let mut tape = Tape::new();
        let b = store.bind(&mut tape, false);
        let f = tape.constant(Tensor::zeros(&[4, 2]));
        let h = tape.constant(Tensor::zeros(&[1, 2]));
        let grid = GridInput { features: CellFeatures::Dense(f), offsets: None, empty: None };
        assert!(head.attend(&mut tape, &b, &grid, h).is_err());
    }

    #[test]
    fn empty_grid_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        assert!(AttentionHead::new(&mut store, "att", 0, 2, 3, 4, false, &mut rng).is_err());
    }
}
