//! SVG figures: trajectory overlays and attention heat maps.
//!
//! Output depends only on the input values, so the same predictions always
//! give byte-identical files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::data::scene::Scene;
use crate::error::Result;
use crate::eval::predictions::PredictionFile;
use crate::geometry::Point;
use crate::model::ScenePrediction;
use crate::scene::map::{ClassSet, FREE};
use crate::scene::EgoGridSpec;

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2"];
const MAX_PIXELS: f64 = 900.0;
const MARGIN_M: f64 = 1.0;

fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

/// World box to pixel transform with y pointing up.
struct View {
    lo: Point,
    hi: Point,
    scale: f64,
}

impl View {
    fn fit(points: impl Iterator<Item = Point>) -> Self {
        let (mut lo, mut hi) =
            (Point::new(f64::INFINITY, f64::INFINITY), Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY));
        for p in points {
            lo = Point::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Point::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        if !lo.is_finite() || !hi.is_finite() {
            lo = Point::new(0.0, 0.0);
            hi = Point::new(1.0, 1.0);
        }
        let lo = Point::new(lo.x - MARGIN_M, lo.y - MARGIN_M);
        let hi = Point::new(hi.x + MARGIN_M, hi.y + MARGIN_M);
        let span = (hi.x - lo.x).max(hi.y - lo.y);
        View { lo, hi, scale: (MAX_PIXELS / span).min(60.0) }
    }

    fn width(&self) -> f64 {
        (self.hi.x - self.lo.x) * self.scale
    }

    fn height(&self) -> f64 {
        (self.hi.y - self.lo.y) * self.scale
    }

    fn px(&self, p: Point) -> (f64, f64) {
        ((p.x - self.lo.x) * self.scale, (self.hi.y - p.y) * self.scale)
    }
}

fn polyline(out: &mut String, view: &View, pts: &[Point], style: &str) {
    let coords: Vec<String> = pts
        .iter()
        .map(|&p| {
            let (x, y) = view.px(p);
            format!("{x:.2},{y:.2}")
        })
        .collect();
    let _ = writeln!(out, r#"<polyline points="{}" fill="none" {style}/>"#, coords.join(" "));
}

fn star(out: &mut String, view: &View, p: Point, fill: &str) {
    let (cx, cy) = view.px(p);
    let pts: Vec<String> = (0..10)
        .map(|i| {
            let r = if i % 2 == 0 { 8.0 } else { 3.5 };
            let a = std::f64::consts::PI * (i as f64 / 5.0 - 0.5);
            format!("{:.2},{:.2}", cx + r * a.cos(), cy + r * a.sin())
        })
        .collect();
    let _ = writeln!(out, r#"<polygon points="{}" fill="{fill}" stroke="black" stroke-width="0.5"/>"#, pts.join(" "));
}

fn header(out: &mut String, w: f64, h: f64) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.2} {h:.2}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Map cells, observed paths (solid), ground-truth futures (dashed), all
/// samples (thin) and a star at each true final position.
pub fn trajectory_svg(scene: &Scene, pred: &ScenePrediction, blocked: ClassSet) -> String {
    let all = scene
        .agents
        .iter()
        .flat_map(|a| a.positions.iter().copied())
        .chain(pred.samples.iter().flatten().flatten().copied());
    let view = View::fit(all);
    let mut out = String::new();
    header(&mut out, view.width(), view.height());

    if let Some(map) = &scene.map {
        let side = map.cell_size * view.scale;
        for r in 0..map.height {
            for c in 0..map.width {
                let class = map.get(r, c);
                if class == FREE {
                    continue;
                }
                let center = map.cell_center(r, c);
                let h = map.cell_size / 2.0;
                if center.x + h < view.lo.x
                    || center.x - h > view.hi.x
                    || center.y + h < view.lo.y
                    || center.y - h > view.hi.y
                {
                    continue;
                }
                let (x, y) = view.px(Point::new(center.x - h, center.y + h));
                let fill = if blocked.contains(class) { "#9a9a9a" } else { "#e4e4e4" };
                let _ = writeln!(
                    out,
                    r#"<rect x="{x:.2}" y="{y:.2}" width="{side:.2}" height="{side:.2}" fill="{fill}"/>"#
                );
            }
        }
    }

    for (i, a) in scene.agents.iter().enumerate() {
        let c = color(i);
        for joint in &pred.samples {
            if let Some(path) = joint.get(i) {
                let mut pts = vec![*scene.observed(i).last().expect("observed steps")];
                pts.extend_from_slice(path);
                polyline(&mut out, &view, &pts, &format!(r#"stroke="{c}" stroke-width="1" stroke-opacity="0.45""#));
            }
        }
        let obs = scene.observed(i);
        polyline(&mut out, &view, obs, &format!(r#"stroke="{c}" stroke-width="2.5""#));
        let mut fut = vec![*obs.last().expect("observed steps")];
        fut.extend_from_slice(scene.future(i));
        polyline(&mut out, &view, &fut, &format!(r#"stroke="{c}" stroke-width="2" stroke-dasharray="6 4""#));
        star(&mut out, &view, *a.positions.last().expect("positions"), c);
    }
    let _ = writeln!(out, r#"<text x="6" y="16" font-family="monospace" font-size="12">{}</text>"#, escape(&scene.id));
    out.push_str("</svg>\n");
    out
}

/// Dynamic and static attention of one agent side by side, cell opacity
/// proportional to weight over the grid's maximum. Grid row 0 is drawn at
/// the bottom so the picture matches world orientation.
pub fn attention_svg(pred: &ScenePrediction, agent: usize, grid: &EgoGridSpec) -> String {
    let cell = 24.0;
    let gap = 30.0;
    let top = 24.0;
    let gw = grid.cols as f64 * cell;
    let gh = grid.rows as f64 * cell;
    let mut out = String::new();
    header(&mut out, 2.0 * gw + 3.0 * gap, gh + top + gap);
    let panels = [("dynamic", &pred.dynamic_attention), ("static", &pred.static_attention)];
    for (p, (name, weights)) in panels.iter().enumerate() {
        let x0 = gap + p as f64 * (gw + gap);
        let _ = writeln!(out, r#"<text x="{x0:.2}" y="16" font-family="monospace" font-size="12">{name}</text>"#);
        let w = weights.get(agent).map(Vec::as_slice).unwrap_or(&[]);
        let max = w.iter().copied().fold(0.0f64, f64::max);
        for r in 0..grid.rows {
            for c in 0..grid.cols {
                let v = w.get(r * grid.cols + c).copied().unwrap_or(0.0);
                let alpha = if max > 0.0 { v / max } else { 0.0 };
                let x = x0 + c as f64 * cell;
                let y = top + (grid.rows - 1 - r) as f64 * cell;
                let _ = writeln!(
                    out,
                    r##"<rect x="{x:.2}" y="{y:.2}" width="{cell}" height="{cell}" fill="#c0392b" fill-opacity="{alpha:.4}" stroke="#cccccc" stroke-width="0.5"/>"##
                );
            }
        }
        let (cx, cy) = (x0 + gw / 2.0, top + gh / 2.0);
        let _ = writeln!(out, r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="3" fill="black"/>"#);
    }
    out.push_str("</svg>\n");
    out
}

fn file_stem(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

/// Writes a trajectory overlay for the first `max_scenes` scenes and an
/// attention map for the first agent of each. Returns the written paths.
pub fn write_plots(file: &PredictionFile, dir: impl AsRef<Path>, max_scenes: usize) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (i, (scene, pred)) in file.entries.iter().take(max_scenes).enumerate() {
        let stem = format!("{i:04}-{}", file_stem(&scene.id));
        let path = dir.join(format!("{stem}-trajectories.svg"));
        std::fs::write(&path, trajectory_svg(scene, pred, file.blocked))?;
        written.push(path);
        if !pred.dynamic_attention.is_empty() || !pred.static_attention.is_empty() {
            let path = dir.join(format!("{stem}-attention.svg"));
            std::fs::write(&path, attention_svg(pred, 0, &file.grid))?;
            written.push(path);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::sim::{simulate, SimConfig};
    use crate::model::{ModelConfig, SafeCritic};

    #[test]
    fn plots_are_deterministic() {
        let mut cfg = SimConfig::preset("crossing-corridor").unwrap();
        cfg.scenes = 2;
        cfg.max_agents = 4;
        let scenes = simulate(&cfg).unwrap();
        let model = SafeCritic::new(ModelConfig::default(), 3).unwrap();
        let preds = model.predict(&scenes, 2, 0, 4).unwrap();
        let file = PredictionFile::new(&scenes, &preds, 0.1, model.config.grid, model.config.blocked).unwrap();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let pa = write_plots(&file, a.path(), 5).unwrap();
        let pb = write_plots(&file, b.path(), 5).unwrap();
        assert_eq!(pa.len(), 4);
        for (x, y) in pa.iter().zip(&pb) {
            let tx = std::fs::read_to_string(x).unwrap();
            assert!(tx.starts_with("<svg") && tx.ends_with("</svg>\n"));
            assert_eq!(tx, std::fs::read_to_string(y).unwrap());
        }
    }
}
