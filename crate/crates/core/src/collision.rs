//! Ground-truth collision counting.
//!
//! Two different agents collide at step `t` when their positions are closer
//! than `ε` (Euclidean). Every (unordered pair, step) counts once, so a long
//! encounter contributes one event per step. Static violations are steps
//! spent inside a blocked map cell.

use std::io::Write;

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::scene::map::{ClassSet, StaticMap};

pub const DEFAULT_EPSILON: f64 = 0.10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DynamicEvent {
    /// Always `i < j`.
    pub i: usize,
    pub j: usize,
    pub t: usize,
    pub distance: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StaticEvent {
    pub agent: usize,
    pub t: usize,
    pub class: u8,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CollisionReport {
    /// Sorted by `(t, i, j)`.
    pub dynamic: Vec<DynamicEvent>,
    /// Sorted by `(agent, t)`.
    pub static_events: Vec<StaticEvent>,
    pub epsilon: f64,
}

impl CollisionReport {
    /// Number of dynamic (pair, step) events.
    pub fn nc(&self) -> usize {
        self.dynamic.len()
    }
}

fn check_epsilon(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::Invalid(format!("collision threshold must be positive, got {eps}")))
    }
}

/// Pairs closer than `eps` among `points`, as `(i, j, distance)` with `i < j`
/// in ascending order. Sweeps over points sorted by `x`, only comparing
/// neighbors within `eps` along that axis.
pub fn close_pairs(points: &[Point], eps: f64) -> Vec<(usize, usize, f64)> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a].x.total_cmp(&points[b].x).then(a.cmp(&b)));
    let mut pairs = Vec::new();
    for (k, &a) in order.iter().enumerate() {
        for &b in &order[k + 1..] {
            if points[b].x - points[a].x >= eps {
                break;
            }
            let d = points[a].dist(points[b]);
            if d < eps {
                pairs.push((a.min(b), a.max(b), d));
            }
        }
    }
    pairs.sort_by_key(|&(i, j, _)| (i, j));
    pairs
}

/// Dynamic collisions among agents following `paths` (absolute positions).
pub fn count_collisions(paths: &[Vec<Point>], eps: f64) -> Result<CollisionReport> {
    check_epsilon(eps)?;
    let steps = paths.first().map_or(0, Vec::len);
    if let Some(p) = paths.iter().find(|p| p.len() != steps) {
        return Err(Error::Invalid(format!("paths of length {} and {steps}", p.len())));
    }
    let mut dynamic = Vec::new();
    let mut frame = Vec::with_capacity(paths.len());
    for t in 0..steps {
        frame.clear();
        frame.extend(paths.iter().map(|p| p[t]));
        dynamic.extend(close_pairs(&frame, eps).into_iter().map(|(i, j, distance)| DynamicEvent { i, j, t, distance }));
    }
    Ok(CollisionReport { dynamic, static_events: Vec::new(), epsilon: eps })
}

/// Steps at which `path` lies in a blocked cell of `map`.
pub fn check_static(agent: usize, path: &[Point], map: &StaticMap, blocked: ClassSet) -> Vec<StaticEvent> {
    path.iter()
        .enumerate()
        .filter_map(|(t, &p)| {
            let class = map.class_at(p);
            blocked.contains(class).then_some(StaticEvent { agent, t, class })
        })
        .collect()
}

/// Dynamic and static events for a whole scene.
pub fn scene_report(
    paths: &[Vec<Point>],
    map: Option<&StaticMap>,
    blocked: ClassSet,
    eps: f64,
) -> Result<CollisionReport> {
    let mut report = count_collisions(paths, eps)?;
    if let Some(map) = map {
        for (i, p) in paths.iter().enumerate() {
            report.static_events.extend(check_static(i, p, map, blocked));
        }
    }
    Ok(report)
}

/// Per-agent collision count at one step: dynamic partners within `eps` plus
/// one if the agent stands in a blocked cell. Not normalized by agent count.
pub fn reward_for(positions: &[Point], map: Option<&StaticMap>, blocked: ClassSet, eps: f64) -> Result<Vec<u32>> {
    check_epsilon(eps)?;
    let mut r = vec![0u32; positions.len()];
    for (i, j, _) in close_pairs(positions, eps) {
        r[i] += 1;
        r[j] += 1;
    }
    if let Some(map) = map {
        for (ri, &p) in r.iter_mut().zip(positions) {
            if blocked.contains(map.class_at(p)) {
                *ri += 1;
            }
        }
    }
    Ok(r)
}

/// Reward sequence `R[i][t]` for predicted paths: entry `t` counts the
/// collisions of agent `i` at predicted step `t`, i.e. the step after the
/// critic has seen position `t − 1`.
pub fn reward_signal(
    paths: &[Vec<Point>],
    map: Option<&StaticMap>,
    blocked: ClassSet,
    eps: f64,
) -> Result<Vec<Vec<u32>>> {
    let steps = paths.first().map_or(0, Vec::len);
    if let Some(p) = paths.iter().find(|p| p.len() != steps) {
        return Err(Error::Invalid(format!("paths of length {} and {steps}", p.len())));
    }
    let mut out = vec![Vec::with_capacity(steps); paths.len()];
    let mut frame = Vec::with_capacity(paths.len());
    for t in 0..steps {
        frame.clear();
        frame.extend(paths.iter().map(|p| p[t]));
        for (o, r) in out.iter_mut().zip(reward_for(&frame, map, blocked, eps)?) {
            o.push(r);
        }
    }
    Ok(out)
}

/// Writes reports as CSV rows `scene_id,kind,i,j,t,value`, where `value` is the
/// distance of a dynamic event or the class name of a static one.
pub fn write_csv(w: &mut impl Write, reports: &[(String, &CollisionReport)], class_names: &[String]) -> Result<()> {
    writeln!(w, "scene_id,kind,i,j,t,value")?;
    for (scene, r) in reports {
        for e in &r.dynamic {
            writeln!(w, "{scene},dynamic,{},{},{},{}", e.i, e.j, e.t, e.distance)?;
        }
        for e in &r.static_events {
            let name = class_names.get(e.class as usize).map_or("?", String::as_str);
            writeln!(w, "{scene},static,{},,{},{name}", e.agent, e.t)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::map::BUILDING;

    fn line(x0: f64, y: f64, n: usize) -> Vec<Point> {
        (0..n).map(|t| Point::new(x0 + t as f64, y)).collect()
    }

    #[test]
    fn far_apart_agents() {
        let r = count_collisions(&[line(0.0, 0.0, 5), line(0.0, 1.5, 5)], 0.1).unwrap();
        assert_eq!(r.nc(), 0);
    }

    #[test]
    fn single_close_step() {
        let a = vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(2.0, 0.0)];
        let b = vec![Point::new(0.0, 1.0), Point::new(1.0, 0.05), Point::new(2.0, 1.0)];
        let r = count_collisions(&[a, b], 0.1).unwrap();
        assert_eq!(r.nc(), 1);
        assert_eq!((r.dynamic[0].i, r.dynamic[0].j, r.dynamic[0].t), (0, 1, 1));
    }

    #[test]
    fn length_mismatch() {
        assert!(count_collisions(&[line(0.0, 0.0, 3), line(0.0, 0.0, 4)], 0.1).is_err());
        assert!(count_collisions(&[line(0.0, 0.0, 3)], 0.0).is_err());
    }

    #[test]
    fn three_mutual_agents_each_count_two() {
        let p = [Point::new(0.0, 0.0), Point::new(0.03, 0.0), Point::new(0.0, 0.03)];
        assert_eq!(reward_for(&p, None, ClassSet::default(), 0.1).unwrap(), vec![2, 2, 2]);
    }

    #[test]
    fn static_path_through_building() {
        let mut map = StaticMap::free(Point::ZERO, 1.0, 10, 1).unwrap();
        map.set(0, 4, BUILDING);
        let path: Vec<Point> = (0..10).map(|t| Point::new(3.5 + 0.25 * t as f64, 0.5)).collect();
        let ev = check_static(0, &path, &map, ClassSet::default());
        assert_eq!(ev.iter().map(|e| e.t).collect::<Vec<_>>(), vec![2, 3, 4, 5]);
        let free = StaticMap::free(Point::ZERO, 1.0, 10, 1).unwrap();
        assert!(check_static(0, &path, &free, ClassSet::default()).is_empty());
    }

    #[test]
    fn csv_rows() {
        let a = vec![Point::new(0.0, 0.0)];
        let b = vec![Point::new(0.0, 0.05)];
        let r = count_collisions(&[a, b], 0.1).unwrap();
        let mut out = Vec::new();
        write_csv(&mut out, &[("s1".to_string(), &r)], &[]).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "scene_id,kind,i,j,t,value\ns1,dynamic,0,1,0,0.05\n");
    }
}
