//! TrajNet-style text files: one `frame agent x y` row per observation.
//!
//! A comment line `# unit pixels` (or `# unit meters`) tags the coordinate
//! unit; meters is the default. Frames are assumed uniformly spaced; the
//! spacing is the smallest gap between distinct frames.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use crate::data::scene::{AgentTrack, Scene, Unit, T_TOTAL};
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::scene::map::StaticMap;

struct Row {
    frame: i64,
    agent: u64,
    pos: Point,
}

fn parse_rows(text: &str, path: &Path) -> Result<(Vec<Row>, Unit)> {
    let err = |line: usize, msg: String| Error::Parse { path: path.to_path_buf(), line, msg };
    let mut rows = Vec::new();
    let mut unit = Unit::Meters;
    let mut last_frame: HashMap<u64, i64> = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            let mut words = comment.split_whitespace();
            if words.next() == Some("unit") {
                unit = match words.next() {
                    Some("meters" | "m") => Unit::Meters,
                    Some("pixels" | "px") => Unit::Pixels { per_meter: None },
                    other => return Err(err(i + 1, format!("unknown unit {other:?}"))),
                };
            }
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 4 {
            return Err(err(i + 1, format!("expected 4 fields (frame agent x y), got {}", f.len())));
        }
        let frame = f[0]
            .parse::<f64>()
            .ok()
            .filter(|v| v.fract() == 0.0 && v.is_finite())
            .ok_or_else(|| err(i + 1, format!("bad frame `{}`", f[0])))? as i64;
        let agent = f[1]
            .parse::<f64>()
            .ok()
            .filter(|v| v.fract() == 0.0 && *v >= 0.0)
            .ok_or_else(|| err(i + 1, format!("bad agent id `{}`", f[1])))? as u64;
        let x: f64 = f[2].parse().map_err(|_| err(i + 1, format!("bad x `{}`", f[2])))?;
        let y: f64 = f[3].parse().map_err(|_| err(i + 1, format!("bad y `{}`", f[3])))?;
        if !x.is_finite() || !y.is_finite() {
            return Err(err(i + 1, "non-finite coordinate".into()));
        }
        if let Some(&prev) = last_frame.get(&agent) {
            if frame <= prev {
                return Err(err(i + 1, format!("agent {agent}: frame {frame} does not follow frame {prev}")));
            }
        }
        last_frame.insert(agent, frame);
        rows.push(Row { frame, agent, pos: Point::new(x, y) });
    }
    Ok((rows, unit))
}

/// Cuts rows into windows of `T_TOTAL` consecutive frames, sliding by one
/// frame step. Agents missing any frame of a window are left out of it, and
/// windows without agents are skipped.
pub fn parse_trajnet(text: &str, path: &Path, video: &str, map: Option<Arc<StaticMap>>) -> Result<Vec<Scene>> {
    let (rows, unit) = parse_rows(text, path)?;
    let frames: BTreeSet<i64> = rows.iter().map(|r| r.frame).collect();
    let step = frames.iter().zip(frames.iter().skip(1)).map(|(a, b)| b - a).min();
    let (Some(step), Some(&first), Some(&last)) = (step, frames.first(), frames.last()) else {
        return Ok(Vec::new());
    };

    let mut tracks: BTreeMap<u64, HashMap<i64, Point>> = BTreeMap::new();
    for r in &rows {
        tracks.entry(r.agent).or_default().insert(r.frame, r.pos);
    }

    let span = (T_TOTAL as i64 - 1) * step;
    let mut scenes = Vec::new();
    let mut start = first;
    while start + span <= last {
        let window: Vec<i64> = (0..T_TOTAL as i64).map(|k| start + k * step).collect();
        let agents: Vec<AgentTrack> = tracks
            .iter()
            .filter_map(|(&id, t)| {
                let positions: Option<Vec<Point>> = window.iter().map(|f| t.get(f).copied()).collect();
                positions.map(|positions| AgentTrack { id, positions })
            })
            .collect();
        if !agents.is_empty() {
            scenes.push(Scene {
                id: format!("{video}:{start}"),
                video: video.to_string(),
                start_frame: start,
                frame_step: step,
                agents,
                map: map.clone(),
                split: Default::default(),
                unit,
            });
        }
        start += step;
    }
    Ok(scenes)
}

/// Loads a TrajNet file; the video id is the file stem.
pub fn load_trajnet(path: impl AsRef<Path>, map: Option<&Path>) -> Result<Vec<Scene>> {
    let path = path.as_ref();
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    let map = map.map(StaticMap::load).transpose()?.map(Arc::new);
    let video = path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    parse_trajnet(&text, path, &video, map)
}

/// Writes scenes as rows, each scene in its own block of frames followed by
/// an empty gap as long as a window, so re-importing recovers exactly these
/// windows.
pub fn write_trajnet(w: &mut impl Write, scenes: &[Scene]) -> Result<()> {
    if let Some(s) = scenes.first() {
        if matches!(s.unit, Unit::Pixels { .. }) {
            writeln!(w, "# unit pixels")?;
        }
    }
    let block = 2 * T_TOTAL as i64;
    for (b, s) in scenes.iter().enumerate() {
        s.validate(T_TOTAL)?;
        for t in 0..T_TOTAL {
            for a in &s.agents {
                let p = a.positions[t];
                writeln!(w, "{} {} {} {}", b as i64 * block + t as i64, a.id, p.x, p.y)?;
            }
        }
    }
    Ok(())
}

pub fn save_trajnet(path: impl AsRef<Path>, scenes: &[Scene]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_trajnet(&mut w, scenes)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Vec<Scene>> {
        parse_trajnet(text, Path::new("v.txt"), "v", None)
    }

    #[test]
    fn empty_file() {
        assert!(parse("").unwrap().is_empty());
    }

    #[test]
    fn one_agent_twenty_frames() {
        let text: String = (0..20).map(|f| format!("{} 1 {} 0.5\n", f * 10, f)).collect();
        let scenes = parse(&text).unwrap();
        assert_eq!(scenes.len(), 1);
        assert_eq!(scenes[0].frame_step, 10);
        assert_eq!(scenes[0].agents[0].positions[19], Point::new(19.0, 0.5));
    }

    #[test]
    fn malformed_and_non_monotonic_rows() {
        match parse("0 1 0 0\n1 1 x 0\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        match parse("0 1 0 0\n1 2 0 0\n0 1 0 0\n") {
            Err(Error::Parse { line, msg, .. }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("agent 1"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unit_tag() {
        let text: String =
            std::iter::once("# unit pixels\n".to_string()).chain((0..20).map(|f| format!("{f} 1 {f} 0\n"))).collect();
        assert_eq!(parse(&text).unwrap()[0].unit, Unit::Pixels { per_meter: None });
    }
}
