//! Self-contained prediction files: each scene with its map, ground truth,
//! samples, critic scores and attention, enough to plot without the model.
//!
//! Line oriented. Maps come first as `@map <n>` ... `@end` blocks, then one
//! `@scene <id>` ... `@end` block per scene. Numbers are written in shortest
//! round-trip form, so reading back gives the exact values.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use crate::data::scene::{AgentTrack, Scene, Unit, T_PRED, T_TOTAL};
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::model::{PredictionSet, ScenePrediction};
use crate::scene::map::{ClassSet, StaticMap};
use crate::scene::EgoGridSpec;

const MAGIC: &str = "safecritic-predictions 1";

#[derive(Clone, Debug)]
pub struct PredictionFile {
    pub k: usize,
    pub epsilon: f64,
    pub grid: EgoGridSpec,
    pub blocked: ClassSet,
    pub entries: Vec<(Scene, ScenePrediction)>,
}

impl PredictionFile {
    /// Pairs scenes with their predictions, matched by position and id.
    pub fn new(
        scenes: &[Scene],
        predictions: &PredictionSet,
        epsilon: f64,
        grid: EgoGridSpec,
        blocked: ClassSet,
    ) -> Result<Self> {
        if scenes.len() != predictions.scenes.len() {
            return Err(Error::Invalid(format!(
                "{} scenes but {} predictions",
                scenes.len(),
                predictions.scenes.len()
            )));
        }
        let mut entries = Vec::with_capacity(scenes.len());
        for (s, p) in scenes.iter().zip(&predictions.scenes) {
            if s.id != p.scene_id {
                return Err(Error::Invalid(format!("prediction `{}` for scene `{}`", p.scene_id, s.id)));
            }
            entries.push((s.clone(), p.clone()));
        }
        Ok(PredictionFile { k: predictions.k, epsilon, grid, blocked, entries })
    }

    pub fn predictions(&self) -> PredictionSet {
        PredictionSet { k: self.k, scenes: self.entries.iter().map(|(_, p)| p.clone()).collect() }
    }

    pub fn scenes(&self) -> Vec<Scene> {
        self.entries.iter().map(|(s, _)| s.clone()).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC}");
        let _ = writeln!(out, "k {}", self.k);
        let _ = writeln!(out, "epsilon {}", self.epsilon);
        let _ = writeln!(out, "grid {} {} {}", self.grid.rows, self.grid.cols, self.grid.cell_size);
        let _ = writeln!(out, "blocked{}", join(self.blocked.iter()));

        let mut maps: Vec<&Arc<StaticMap>> = Vec::new();
        let mut map_index = Vec::with_capacity(self.entries.len());
        for (s, _) in &self.entries {
            map_index.push(s.map.as_ref().map(|m| {
                maps.iter().position(|&x| Arc::ptr_eq(x, m) || **x == **m).unwrap_or_else(|| {
                    maps.push(m);
                    maps.len() - 1
                })
            }));
        }
        for (i, m) in maps.iter().enumerate() {
            let _ = writeln!(out, "@map {i}");
            out.push_str(&m.to_text());
            let _ = writeln!(out, "@end");
        }

        for ((s, p), m) in self.entries.iter().zip(map_index) {
            let _ = writeln!(out, "@scene {}", s.id);
            let _ = writeln!(out, "video {}", s.video);
            let _ = writeln!(out, "frames {} {}", s.start_frame, s.frame_step);
            match s.unit {
                Unit::Meters => {
                    let _ = writeln!(out, "unit meters");
                }
                Unit::Pixels { per_meter: None } => {
                    let _ = writeln!(out, "unit pixels");
                }
                Unit::Pixels { per_meter: Some(f) } => {
                    let _ = writeln!(out, "unit pixels {f}");
                }
            }
            if let Some(m) = m {
                let _ = writeln!(out, "map {m}");
            }
            for a in &s.agents {
                let _ = writeln!(out, "agent {}{}", a.id, points(&a.positions));
            }
            for (k, joint) in p.samples.iter().enumerate() {
                for (i, path) in joint.iter().enumerate() {
                    let _ = writeln!(out, "sample {k} {i}{}", points(path));
                }
            }
            for (k, joint) in p.critic.iter().enumerate() {
                for (i, v) in joint.iter().enumerate() {
                    let _ = writeln!(out, "critic {k} {i}{}", join(v.iter()));
                }
            }
            for (k, d) in p.discriminator.iter().enumerate() {
                let _ = writeln!(out, "disc {k}{}", join(d.iter()));
            }
            for (i, w) in p.dynamic_attention.iter().enumerate() {
                let _ = writeln!(out, "dynamic {i}{}", join(w.iter()));
            }
            for (i, w) in p.static_attention.iter().enumerate() {
                let _ = writeln!(out, "static {i}{}", join(w.iter()));
            }
            let _ = writeln!(out, "@end");
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        Parser { path, lines: text.lines().enumerate().peekable() }.file()
    }
}

fn join<T: std::fmt::Display>(values: impl Iterator<Item = T>) -> String {
    values.fold(String::new(), |mut s, v| {
        let _ = write!(s, " {v}");
        s
    })
}

fn points(ps: &[Point]) -> String {
    join(ps.iter().flat_map(|p| [p.x, p.y]))
}

struct Parser<'a, I: Iterator<Item = (usize, &'a str)>> {
    path: &'a Path,
    lines: std::iter::Peekable<I>,
}

impl<'a, I: Iterator<Item = (usize, &'a str)>> Parser<'a, I> {
    fn err(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::Parse { path: self.path.to_path_buf(), line: line + 1, msg: msg.into() }
    }

    fn next(&mut self) -> Option<(usize, &'a str)> {
        self.lines.by_ref().find(|(_, l)| !l.trim().is_empty())
    }

    /// Next line split as `key rest`, requiring `key`.
    fn keyed(&mut self, key: &str) -> Result<(usize, &'a str)> {
        let (no, line) = self.next().ok_or_else(|| self.err(0, format!("missing `{key}`")))?;
        match line.split_once(' ') {
            Some((k, rest)) if k == key => Ok((no, rest.trim())),
            None if line.trim() == key => Ok((no, "")),
            _ => Err(self.err(no, format!("expected `{key}`"))),
        }
    }

    fn numbers<T: std::str::FromStr>(&self, no: usize, s: &str) -> Result<Vec<T>> {
        s.split_whitespace().map(|w| w.parse().map_err(|_| self.err(no, format!("bad number `{w}`")))).collect()
    }

    fn file(mut self) -> Result<PredictionFile> {
        match self.next() {
            Some((_, l)) if l.trim() == MAGIC => {}
            Some((no, _)) => return Err(self.err(no, "not a predictions file")),
            None => return Err(self.err(0, "empty file")),
        }
        let (no, v) = self.keyed("k")?;
        let k = self.numbers::<usize>(no, v)?.first().copied().ok_or_else(|| self.err(no, "missing k"))?;
        let (no, v) = self.keyed("epsilon")?;
        let epsilon = *self.numbers::<f64>(no, v)?.first().ok_or_else(|| self.err(no, "missing epsilon"))?;
        let (no, v) = self.keyed("grid")?;
        let g = self.numbers::<f64>(no, v)?;
        if g.len() != 3 {
            return Err(self.err(no, "grid needs rows, cols and cell size"));
        }
        let grid = EgoGridSpec::new(g[0] as usize, g[1] as usize, g[2]).map_err(|e| self.err(no, e.to_string()))?;
        let (no, v) = self.keyed("blocked")?;
        let blocked = ClassSet::of(&self.numbers::<u8>(no, v)?);

        let mut maps = Vec::new();
        let mut entries = Vec::new();
        while let Some((no, line)) = self.next() {
            if let Some(rest) = line.strip_prefix("@map ") {
                if rest.trim().parse::<usize>().ok() != Some(maps.len()) {
                    return Err(self.err(no, "maps must be numbered in order"));
                }
                let mut body = String::new();
                loop {
                    let (_, l) = self.next().ok_or_else(|| self.err(no, "unterminated map"))?;
                    if l.trim() == "@end" {
                        break;
                    }
                    body.push_str(l);
                    body.push('\n');
                }
                maps.push(Arc::new(StaticMap::parse(&body, self.path)?));
            } else if let Some(id) = line.strip_prefix("@scene ") {
                entries.push(self.scene(id.to_string(), &maps, k)?);
            } else {
                return Err(self.err(no, "expected `@map` or `@scene`"));
            }
        }
        Ok(PredictionFile { k, epsilon, grid, blocked, entries })
    }

    fn scene(&mut self, id: String, maps: &[Arc<StaticMap>], k: usize) -> Result<(Scene, ScenePrediction)> {
        let (_, video) = self.keyed("video")?;
        let (no, v) = self.keyed("frames")?;
        let f = self.numbers::<i64>(no, v)?;
        if f.len() != 2 {
            return Err(self.err(no, "frames needs start and step"));
        }
        let (no, v) = self.keyed("unit")?;
        let mut words = v.split_whitespace();
        let unit = match (words.next(), words.next()) {
            (Some("meters"), None) => Unit::Meters,
            (Some("pixels"), None) => Unit::Pixels { per_meter: None },
            (Some("pixels"), Some(f)) => {
                Unit::Pixels { per_meter: Some(f.parse().map_err(|_| self.err(no, "bad pixels per meter"))?) }
            }
            _ => return Err(self.err(no, format!("bad unit `{v}`"))),
        };
        let mut scene = Scene::new(id.clone(), Vec::new());
        scene.video = video.to_string();
        scene.start_frame = f[0];
        scene.frame_step = f[1];
        scene.unit = unit;
        let mut pred = ScenePrediction {
            scene_id: id,
            samples: vec![Vec::new(); k],
            critic: vec![Vec::new(); k],
            discriminator: vec![Vec::new(); k],
            dynamic_attention: Vec::new(),
            static_attention: Vec::new(),
        };

        loop {
            let (no, line) = self.next().ok_or_else(|| self.err(0, format!("unterminated scene `{}`", scene.id)))?;
            if line.trim() == "@end" {
                break;
            }
            let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
            let vals: Vec<&str> = rest.split_whitespace().collect();
            // Leading integer indexes, then the payload.
            let index = |n: usize| -> Result<(Vec<usize>, &[&str])> {
                if vals.len() < n {
                    return Err(self.err(no, format!("`{key}` needs {n} indexes")));
                }
                let idx = vals[..n]
                    .iter()
                    .map(|w| w.parse::<usize>().map_err(|_| self.err(no, format!("bad index `{w}`"))))
                    .collect::<Result<Vec<_>>>()?;
                Ok((idx, &vals[n..]))
            };
            let floats = |ws: &[&str]| -> Result<Vec<f64>> {
                ws.iter().map(|w| w.parse::<f64>().map_err(|_| self.err(no, format!("bad number `{w}`")))).collect()
            };
            let pts = |ws: &[&str], n: usize| -> Result<Vec<Point>> {
                let v = floats(ws)?;
                if v.len() != 2 * n {
                    return Err(self.err(no, format!("expected {n} points, got {} values", v.len())));
                }
                Ok(v.chunks(2).map(|c| Point::new(c[0], c[1])).collect())
            };
            let in_order = |slot: usize, len: usize| -> Result<()> {
                if slot == len {
                    Ok(())
                } else {
                    Err(self.err(no, format!("`{key}` rows out of order")))
                }
            };
            match key {
                "map" => {
                    let (idx, _) = index(1)?;
                    let m = maps.get(idx[0]).ok_or_else(|| self.err(no, format!("unknown map {}", idx[0])))?;
                    scene.map = Some(m.clone());
                }
                "agent" => {
                    let (idx, rest) = index(1)?;
                    scene.agents.push(AgentTrack { id: idx[0] as u64, positions: pts(rest, T_TOTAL)? });
                }
                "sample" | "critic" => {
                    let (idx, rest) = index(2)?;
                    if idx[0] >= k {
                        return Err(self.err(no, format!("sample {} with k = {k}", idx[0])));
                    }
                    if key == "sample" {
                        in_order(idx[1], pred.samples[idx[0]].len())?;
                        pred.samples[idx[0]].push(pts(rest, T_PRED)?);
                    } else {
                        in_order(idx[1], pred.critic[idx[0]].len())?;
                        pred.critic[idx[0]].push(floats(rest)?);
                    }
                }
                "disc" => {
                    let (idx, rest) = index(1)?;
                    if idx[0] >= k {
                        return Err(self.err(no, format!("sample {} with k = {k}", idx[0])));
                    }
                    pred.discriminator[idx[0]] = floats(rest)?;
                }
                "dynamic" | "static" => {
                    let (idx, rest) = index(1)?;
                    let target =
                        if key == "dynamic" { &mut pred.dynamic_attention } else { &mut pred.static_attention };
                    in_order(idx[0], target.len())?;
                    target.push(floats(rest)?);
                }
                _ => return Err(self.err(no, format!("unknown key `{key}`"))),
            }
        }
        scene.validate(T_TOTAL)?;
        let n = scene.num_agents();
        if pred.samples.iter().any(|s| s.len() != n) {
            return Err(Error::Data(format!("scene `{}`: samples do not cover its {n} agents", scene.id)));
        }
        Ok((scene, pred))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::sim::{simulate, SimConfig};
    use crate::model::{ModelConfig, SafeCritic};

    #[test]
    fn round_trip_is_exact() {
        let mut cfg = SimConfig::preset("crossing-corridor").unwrap();
        cfg.scenes = 2;
        cfg.max_agents = 4;
        let scenes = simulate(&cfg).unwrap();
        let model = SafeCritic::new(ModelConfig::default(), 1).unwrap();
        let preds = model.predict(&scenes, 3, 2, 8).unwrap();
        let file = PredictionFile::new(&scenes, &preds, 0.1, model.config.grid, model.config.blocked).unwrap();
        let back = PredictionFile::parse(&file.to_text(), Path::new("p")).unwrap();
        assert_eq!(back.predictions(), preds);
        assert_eq!(back.grid, file.grid);
        assert_eq!(back.blocked, file.blocked);
        for ((a, _), (b, _)) in file.entries.iter().zip(&back.entries) {
            assert_eq!((&a.id, &a.video, &a.agents), (&b.id, &b.video, &b.agents));
            assert_eq!(a.map.as_deref(), b.map.as_deref());
        }
        assert_eq!(back.to_text(), file.to_text());
    }

    #[test]
    fn rejects_garbage() {
        assert!(PredictionFile::parse("hello\n", Path::new("p")).is_err());
        let text = format!("{MAGIC}\nk 1\nepsilon 0.1\ngrid 8 8 0.5\nblocked 1\n@scene a\nvideo v\n");
        assert!(PredictionFile::parse(&text, Path::new("p")).is_err());
    }
}
