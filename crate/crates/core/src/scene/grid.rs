//! Egocentric occupancy grids around each agent.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::scene::map::StaticMap;

/// Layout of the grid centered on an agent. Row `r` covers
/// `Δy ∈ [r·cell − R·cell/2, (r+1)·cell − R·cell/2)`, column `c` likewise in `Δx`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EgoGridSpec {
    pub rows: usize,
    pub cols: usize,
    pub cell_size: f64,
}

impl Default for EgoGridSpec {
    fn default() -> Self {
        EgoGridSpec { rows: 8, cols: 8, cell_size: 0.5 }
    }
}

impl EgoGridSpec {
    pub fn new(rows: usize, cols: usize, cell_size: f64) -> Result<Self> {
        let spec = EgoGridSpec { rows, cols, cell_size };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 || !self.rows.is_multiple_of(2) || !self.cols.is_multiple_of(2) {
            return Err(Error::Invalid(format!(
                "grid must have an even, positive number of rows and columns, got {}x{}",
                self.rows, self.cols
            )));
        }
        if !(self.cell_size > 0.0 && self.cell_size.is_finite()) {
            return Err(Error::Invalid(format!("grid cell size must be positive, got {}", self.cell_size)));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    /// Half the grid's width and height.
    pub fn half_extent(&self) -> Point {
        Point::new(self.cols as f64 * self.cell_size / 2.0, self.rows as f64 * self.cell_size / 2.0)
    }

    /// Flat cell index `r·cols + c` of a relative offset, if inside the grid.
    pub fn cell_index(&self, offset: Point) -> Option<usize> {
        let half = self.half_extent();
        let r = ((offset.y + half.y) / self.cell_size).floor();
        let c = ((offset.x + half.x) / self.cell_size).floor();
        let inside = r >= 0.0 && c >= 0.0 && r < self.rows as f64 && c < self.cols as f64;
        inside.then(|| r as usize * self.cols + c as usize)
    }

    /// Offset of the center of flat cell `k` from the agent.
    pub fn cell_center(&self, k: usize) -> Point {
        let (r, c) = (k / self.cols, k % self.cols);
        let half = self.half_extent();
        Point::new((c as f64 + 0.5) * self.cell_size - half.x, (r as f64 + 0.5) * self.cell_size - half.y)
    }

    /// Scales an offset so the grid boundary sits at ±1.
    pub fn normalize(&self, offset: Point) -> Point {
        let half = self.half_extent();
        Point::new(offset.x / half.x, offset.y / half.y)
    }
}

/// Which neighbor sits in each cell of one agent's grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Occupancy {
    /// Per cell, the index (into the neighbor list) of its occupant.
    pub occupants: Vec<Option<usize>>,
}

impl Occupancy {
    pub fn occupied(&self) -> usize {
        self.occupants.iter().filter(|o| o.is_some()).count()
    }
}

/// Bins `others` around `agent`, skipping index `skip` (the agent itself).
/// When two neighbors land in one cell the nearer one is kept; ties go to the
/// lower index.
pub fn occupancy(spec: &EgoGridSpec, agent: Point, others: &[Point], skip: Option<usize>) -> Occupancy {
    let mut occupants: Vec<Option<usize>> = vec![None; spec.cells()];
    let mut best = vec![f64::INFINITY; spec.cells()];
    for (j, &p) in others.iter().enumerate() {
        if Some(j) == skip {
            continue;
        }
        let off = p - agent;
        if let Some(k) = spec.cell_index(off) {
            let d = off.x * off.x + off.y * off.y;
            if d < best[k] {
                best[k] = d;
                occupants[k] = Some(j);
            }
        }
    }
    Occupancy { occupants }
}

/// Neighbor hidden states laid out on an agent's grid.
#[derive(Clone, Debug)]
pub struct DynamicGrid {
    pub spec: EgoGridSpec,
    pub hidden_size: usize,
    /// `[R·C, H]`, zero rows for empty cells.
    pub features: Tensor,
    /// `[R·C, 2]` normalized occupant offsets, zero for empty cells.
    pub offsets: Tensor,
    pub mask: Vec<bool>,
    pub occupants: Vec<Option<usize>>,
}

/// Builds the dynamic grid of an agent from its neighbors' positions and
/// hidden states. Neighbors outside the grid are ignored.
pub fn build_dynamic_grid(agent: Point, neighbors: &[(Point, &[f64])], spec: &EgoGridSpec) -> Result<DynamicGrid> {
    let hidden_size = neighbors.first().map_or(0, |(_, h)| h.len());
    if let Some((_, h)) = neighbors.iter().find(|(_, h)| h.len() != hidden_size) {
        return Err(Error::shape("build_dynamic_grid", format!("hidden states of size {} and {hidden_size}", h.len())));
    }
    let positions: Vec<Point> = neighbors.iter().map(|(p, _)| *p).collect();
    let occ = occupancy(spec, agent, &positions, None);
    let cells = spec.cells();
    let mut features = vec![0.0; cells * hidden_size];
    let mut offsets = vec![0.0; cells * 2];
    for (k, o) in occ.occupants.iter().enumerate() {
        if let Some(j) = *o {
            let (p, h) = neighbors[j];
            features[k * hidden_size..(k + 1) * hidden_size].copy_from_slice(h);
            let n = spec.normalize(p - agent);
            offsets[2 * k] = n.x;
            offsets[2 * k + 1] = n.y;
        }
    }
    Ok(DynamicGrid {
        spec: *spec,
        hidden_size,
        features: Tensor::new(vec![cells, hidden_size], features)?,
        offsets: Tensor::new(vec![cells, 2], offsets)?,
        mask: occ.occupants.iter().map(Option::is_some).collect(),
        occupants: occ.occupants,
    })
}

/// Map classes under an agent's grid cells.
#[derive(Clone, Debug, PartialEq)]
pub struct StaticGrid {
    pub spec: EgoGridSpec,
    pub num_classes: usize,
    /// Class index per cell.
    pub classes: Vec<u8>,
}

impl StaticGrid {
    /// `[R·C, classes]` one-hot rows.
    pub fn one_hot(&self) -> Tensor {
        let k = self.num_classes;
        let mut data = vec![0.0; self.classes.len() * k];
        for (i, &c) in self.classes.iter().enumerate() {
            data[i * k + c as usize] = 1.0;
        }
        Tensor::new(vec![self.classes.len(), k], data).expect("one-hot shape")
    }
}

/// Class of the map at each grid cell center around `agent`.
pub fn static_classes(agent: Point, map: &StaticMap, spec: &EgoGridSpec) -> Vec<u8> {
    (0..spec.cells()).map(|k| map.class_at(agent + spec.cell_center(k))).collect()
}

pub fn build_static_grid(agent: Point, map: &StaticMap, spec: &EgoGridSpec) -> StaticGrid {
    StaticGrid { spec: *spec, num_classes: map.num_classes(), classes: static_classes(agent, map, spec) }
}
