//! Reducing grids to fixed-size context vectors.

use std::ops::Range;

use rand::Rng;

use crate::autodiff::{Binding, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::nn::{AttentionHead, CellFeatures, GridInput};
use crate::scene::grid::{occupancy, static_classes, DynamicGrid, EgoGridSpec, Occupancy, StaticGrid};
use crate::scene::map::StaticMap;

/// One attention head per grid type.
#[derive(Clone, Debug)]
pub struct SceneHeads {
    pub dynamic: AttentionHead,
    pub static_: AttentionHead,
}

impl SceneHeads {
    /// `hidden` is the width of the neighbor states in the dynamic grid,
    /// `agent_dim` the width of the querying agent's state.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        spec: &EgoGridSpec,
        hidden: usize,
        agent_dim: usize,
        num_classes: usize,
        attention_hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let cells = spec.cells();
        Ok(SceneHeads {
            dynamic: AttentionHead::new(
                store,
                &format!("{name}.att_d"),
                cells,
                hidden,
                agent_dim,
                attention_hidden,
                true,
                rng,
            )?,
            static_: AttentionHead::new(
                store,
                &format!("{name}.att_s"),
                cells,
                num_classes,
                agent_dim,
                attention_hidden,
                false,
                rng,
            )?
            .with_spatial_query(store, &format!("{name}.att_s"), rng),
        })
    }

    pub fn dynamic_dim(&self) -> usize {
        self.dynamic.context_dim()
    }

    pub fn static_dim(&self) -> usize {
        self.static_.context_dim()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Context {
    /// `[B, H + 3]`: attended neighbor states, then attended offset features.
    pub dynamic: Var,
    /// `[B, classes]`.
    pub static_: Var,
    pub dynamic_weights: Var,
    pub static_weights: Var,
}

/// Grid inputs for a batch of rows, ready for [`SceneHeads`].
#[derive(Clone, Debug)]
pub struct GridInputs {
    pub dynamic: GridInput,
    pub static_: GridInput,
}

pub fn context_from_inputs(
    tape: &mut Tape,
    b: &Binding,
    heads: &SceneHeads,
    inputs: &GridInputs,
    agent_hidden: Var,
) -> Result<Context> {
    let d = heads.dynamic.attend(tape, b, &inputs.dynamic, agent_hidden)?;
    let s = heads.static_.attend(tape, b, &inputs.static_, agent_hidden)?;
    Ok(Context { dynamic: d.context, static_: s.context, dynamic_weights: d.weights, static_weights: s.weights })
}

/// Context vectors for explicitly built grids, one grid pair per row of
/// `agent_hidden`.
pub fn context_vectors(
    tape: &mut Tape,
    b: &Binding,
    heads: &SceneHeads,
    dynamic: &[DynamicGrid],
    static_: &[StaticGrid],
    agent_hidden: Var,
) -> Result<Context> {
    if dynamic.len() != static_.len() || dynamic.is_empty() {
        return Err(Error::shape(
            "context_vectors",
            format!("{} dynamic and {} static grids", dynamic.len(), static_.len()),
        ));
    }
    let hidden = heads.dynamic.feature_dim;
    let cells = heads.dynamic.cells;
    let mut feats = Vec::with_capacity(dynamic.len() * cells * hidden);
    let mut offs = Vec::with_capacity(dynamic.len() * cells * 2);
    let mut empty = Vec::with_capacity(dynamic.len() * cells);
    for g in dynamic {
        let h = if g.mask.iter().any(|&m| m) { g.hidden_size } else { hidden };
        if h != hidden || g.mask.len() != cells {
            return Err(Error::shape(
                "context_vectors",
                format!("grid of {} cells with states of size {h}", g.mask.len()),
            ));
        }
        if g.features.len() == cells * hidden {
            feats.extend_from_slice(g.features.data());
        } else {
            feats.extend(std::iter::repeat_n(0.0, cells * hidden));
        }
        offs.extend_from_slice(g.offsets.data());
        empty.extend(g.mask.iter().map(|&m| if m { 0.0 } else { 1.0 }));
    }
    let rows = dynamic.len() * cells;
    let f = tape.constant(Tensor::new(vec![rows, hidden], feats)?);
    let o = tape.constant(Tensor::new(vec![rows, 2], offs)?);
    let mut classes = Vec::with_capacity(rows);
    for g in static_ {
        if g.classes.len() != cells || g.num_classes != heads.static_.feature_dim {
            return Err(Error::shape("context_vectors", "static grid does not match the static head"));
        }
        classes.extend_from_slice(&g.classes);
    }
    let inputs = GridInputs {
        dynamic: GridInput {
            features: CellFeatures::Dense(f),
            offsets: Some(o),
            empty: Some(Tensor::new(vec![rows, 1], empty)?),
        },
        static_: static_input(tape, &classes, heads.static_.feature_dim),
    };
    context_from_inputs(tape, b, heads, &inputs, agent_hidden)
}

/// Per-row occupancy for rows split into independent groups (one group per
/// scene sample). Occupant indices are global row indices.
pub fn batched_occupancy(spec: &EgoGridSpec, positions: &[Point], groups: &[Range<usize>]) -> Vec<Occupancy> {
    let mut out = vec![Occupancy { occupants: vec![] }; positions.len()];
    for g in groups {
        let members = &positions[g.clone()];
        for i in g.clone() {
            let mut occ = occupancy(spec, positions[i], members, Some(i - g.start));
            for o in occ.occupants.iter_mut().flatten() {
                *o += g.start;
            }
            out[i] = occ;
        }
    }
    out
}

/// Dynamic grid input over rows whose hidden states are `hidden: [N, H]` and
/// positions `positions: [N, 2]`. Offsets are computed on the tape so they
/// carry gradients back to the positions.
pub fn dynamic_input(
    tape: &mut Tape,
    spec: &EgoGridSpec,
    occ: &[Occupancy],
    hidden: Var,
    positions: Var,
) -> Result<GridInput> {
    dynamic_input_from(tape, spec, occ, hidden, positions, positions)
}

/// Like [`dynamic_input`], with offsets measured from `anchors` (one row per
/// agent row) instead of the agents' own positions. Cell assignment still
/// follows `occ`.
pub fn dynamic_input_from(
    tape: &mut Tape,
    spec: &EgoGridSpec,
    occ: &[Occupancy],
    hidden: Var,
    positions: Var,
    anchors: Var,
) -> Result<GridInput> {
    let cells = spec.cells();
    let mut index = Vec::with_capacity(occ.len() * cells);
    let mut ego = Vec::with_capacity(occ.len() * cells);
    let mut empty = Vec::with_capacity(occ.len() * cells);
    for (i, o) in occ.iter().enumerate() {
        for &j in &o.occupants {
            index.push(j);
            ego.push(j.map(|_| i));
            empty.push(if j.is_some() { 0.0 } else { 1.0 });
        }
    }
    let them = tape.gather_rows(positions, &index)?;
    let me = tape.gather_rows(anchors, &ego)?;
    let rel = tape.sub(them, me)?;
    let half = spec.half_extent();
    let inv = tape.constant(Tensor::vector(vec![1.0 / half.x, 1.0 / half.y]));
    let offsets = tape.mul(rel, inv)?;
    let n = index.len();
    Ok(GridInput {
        features: CellFeatures::Gathered { source: hidden, index },
        offsets: Some(offsets),
        empty: Some(Tensor::new(vec![n, 1], empty)?),
    })
}

/// One-hot static grid input from per-cell class indices of all rows.
pub fn static_input(tape: &mut Tape, classes: &[u8], num_classes: usize) -> GridInput {
    let mut eye = Tensor::zeros(&[num_classes, num_classes]);
    for c in 0..num_classes {
        eye.data_mut()[c * num_classes + c] = 1.0;
    }
    let source = tape.constant(eye);
    let index = classes.iter().map(|&c| Some(c as usize)).collect();
    GridInput { features: CellFeatures::Gathered { source, index }, offsets: None, empty: None }
}

/// Static classes under every row's grid, concatenated row by row. Rows
/// without a map see free cells only.
pub fn batched_static_classes(spec: &EgoGridSpec, positions: &[Point], maps: &[Option<&StaticMap>]) -> Vec<u8> {
    let mut out = Vec::with_capacity(positions.len() * spec.cells());
    for (p, m) in positions.iter().zip(maps) {
        match m {
            Some(map) => out.extend(static_classes(*p, map, spec)),
            None => out.extend(std::iter::repeat_n(0u8, spec.cells())),
        }
    }
    out
}
