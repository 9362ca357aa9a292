//! Flattening scenes into rows.
//!
//! A batch of scenes with `N` agents in total becomes `N` rows. Sampling `K`
//! futures stacks `K` copies, so row `k·N + i` is agent `i` in sample `k`.
//! Each (sample, scene) pair is a group: grids only see rows of their group.

use std::ops::Range;

use crate::autodiff::Tensor;
use crate::data::scene::{Scene, T_OBS, T_PRED, T_TOTAL};
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::scene::map::StaticMap;

#[derive(Clone, Debug)]
pub struct SceneBatch<'a> {
    pub scenes: Vec<&'a Scene>,
    /// Row range of each scene, `offsets[s]..offsets[s + 1]`.
    pub offsets: Vec<usize>,
    /// Observed displacements, `T_OBS` tensors of `[N, 2]`. The first step
    /// has no predecessor and is zero.
    pub observed: Vec<Tensor>,
    /// Ground-truth future displacements, `T_PRED` tensors of `[N, 2]`.
    pub future: Vec<Tensor>,
    pub last_observed: Vec<Point>,
    /// Ground-truth future positions, `[N][T_PRED]`.
    pub future_positions: Vec<Vec<Point>>,
}

fn disp_tensor(rows: &[Point]) -> Tensor {
    let data = rows.iter().flat_map(|p| [p.x, p.y]).collect();
    Tensor::new(vec![rows.len(), 2], data).expect("displacement shape")
}

impl<'a> SceneBatch<'a> {
    pub fn new(scenes: &[&'a Scene]) -> Result<Self> {
        if scenes.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        let mut offsets = vec![0];
        let mut disp: Vec<Vec<Point>> = vec![Vec::new(); T_TOTAL];
        let mut last_observed = Vec::new();
        let mut future_positions = Vec::new();
        for s in scenes {
            s.validate(T_TOTAL)?;
            for a in &s.agents {
                let p = &a.positions;
                disp[0].push(Point::ZERO);
                for t in 1..T_TOTAL {
                    disp[t].push(p[t] - p[t - 1]);
                }
                last_observed.push(p[T_OBS - 1]);
                future_positions.push(p[T_OBS..].to_vec());
            }
            offsets.push(offsets.last().unwrap() + s.num_agents());
        }
        let tensors: Vec<Tensor> = disp.iter().map(|d| disp_tensor(d)).collect();
        Ok(SceneBatch {
            scenes: scenes.to_vec(),
            offsets,
            observed: tensors[..T_OBS].to_vec(),
            future: tensors[T_OBS..].to_vec(),
            last_observed,
            future_positions,
        })
    }

    /// Number of agents across all scenes.
    pub fn agents(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    /// Row groups for `k` stacked samples.
    pub fn groups(&self, k: usize) -> Vec<Range<usize>> {
        let n = self.agents();
        (0..k).flat_map(|s| self.offsets.windows(2).map(move |w| s * n + w[0]..s * n + w[1])).collect()
    }

    /// Map of every row for `k` stacked samples.
    pub fn row_maps(&self, k: usize) -> Vec<Option<&'a StaticMap>> {
        let per_sample: Vec<Option<&StaticMap>> =
            self.scenes.iter().flat_map(|s| std::iter::repeat_n(s.map.as_deref(), s.num_agents())).collect();
        (0..k).flat_map(|_| per_sample.iter().copied()).collect()
    }

    /// Row `r` of the stacked layout maps to agent `r mod N`.
    pub fn repeat_index(&self, k: usize) -> Vec<Option<usize>> {
        let n = self.agents();
        (0..k * n).map(|r| Some(r % n)).collect()
    }

    /// Ground-truth future positions flattened to `[N, 2·T_PRED]`.
    pub fn future_flat(&self) -> Tensor {
        let data = self.future_positions.iter().flat_map(|f| f.iter().flat_map(|p| [p.x, p.y])).collect();
        Tensor::new(vec![self.agents(), 2 * T_PRED], data).expect("future shape")
    }

    /// The full displacement sequence of every agent, observed then future.
    pub fn real_sequence(&self) -> Vec<Tensor> {
        self.observed.iter().chain(&self.future).cloned().collect()
    }
}
