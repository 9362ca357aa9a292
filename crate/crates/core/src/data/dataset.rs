//! Scene files on disk: a TrajNet text file plus an optional map sidecar.
//!
//! `<stem>.map` holds one map shared by every window of `<stem>.txt`;
//! `<stem>.maps` holds one `@map <index>` section per window that has its own
//! map, indexed in window order.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::data::scene::Scene;
use crate::data::trajnet::{parse_trajnet, save_trajnet};
use crate::error::{Error, Result};
use crate::scene::map::StaticMap;

const SECTION: &str = "@map";

fn video_of(path: &Path) -> String {
    path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned())
}

fn parse_sections(text: &str, path: &Path) -> Result<Vec<(usize, StaticMap)>> {
    let mut out = Vec::new();
    let mut current: Option<(usize, String)> = None;
    let flush = |cur: Option<(usize, String)>, out: &mut Vec<(usize, StaticMap)>| -> Result<()> {
        if let Some((idx, body)) = cur {
            out.push((idx, StaticMap::parse(&body, path)?));
        }
        Ok(())
    };
    for (no, line) in text.lines().enumerate() {
        if let Some(rest) = line.trim().strip_prefix(SECTION) {
            flush(current.take(), &mut out)?;
            let idx = rest.trim().parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: no + 1,
                msg: format!("bad section index `{}`", rest.trim()),
            })?;
            current = Some((idx, String::new()));
        } else if let Some((_, body)) = current.as_mut() {
            body.push_str(line);
            body.push('\n');
        } else if !line.trim().is_empty() && !line.trim().starts_with('#') {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: no + 1,
                msg: "text before first section".into(),
            });
        }
    }
    flush(current, &mut out)?;
    Ok(out)
}

/// Loads one TrajNet file and its sidecar map(s), if present.
pub fn load_scene_file(path: impl AsRef<Path>) -> Result<Vec<Scene>> {
    let path = path.as_ref();
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    let shared = path.with_extension("map");
    let per_scene = path.with_extension("maps");
    let map = if shared.is_file() { Some(Arc::new(StaticMap::load(&shared)?)) } else { None };
    let mut scenes = parse_trajnet(&text, path, &video_of(path), map)?;
    if per_scene.is_file() {
        let text = std::fs::read_to_string(&per_scene)?;
        let count = scenes.len();
        for (idx, m) in parse_sections(&text, &per_scene)? {
            let scene = scenes.get_mut(idx).ok_or_else(|| {
                Error::Data(format!("{}: map for window {idx}, file has {count}", per_scene.display()))
            })?;
            scene.map = Some(Arc::new(m));
        }
    }
    Ok(scenes)
}

/// Loads a scene file, or every `.txt` file of a directory in name order.
pub fn load_scenes(path: impl AsRef<Path>) -> Result<Vec<Scene>> {
    let path = path.as_ref();
    if !path.is_dir() {
        return load_scene_file(path);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "txt"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Data(format!("no .txt scene files in {}", path.display())));
    }
    let mut scenes = Vec::new();
    for f in files {
        scenes.extend(load_scene_file(&f)?);
    }
    Ok(scenes)
}

/// Writes `dir/<stem>.txt` and, if any scene has a map, the matching
/// sidecar. Returns the path of the text file.
pub fn save_scenes(dir: impl AsRef<Path>, stem: &str, scenes: &[Scene]) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let txt = dir.join(format!("{stem}.txt"));
    save_trajnet(&txt, scenes)?;
    let shared = txt.with_extension("map");
    let per_scene = txt.with_extension("maps");
    for stale in [&shared, &per_scene] {
        if stale.exists() {
            std::fs::remove_file(stale)?;
        }
    }
    let maps: Vec<Option<&Arc<StaticMap>>> = scenes.iter().map(|s| s.map.as_ref()).collect();
    match maps.first() {
        Some(Some(first)) if maps.iter().all(|m| m.is_some_and(|m| m == *first)) => first.save(&shared)?,
        _ if maps.iter().any(Option::is_some) => {
            let mut out = String::new();
            for (i, m) in maps.iter().enumerate() {
                if let Some(m) = m {
                    let _ = writeln!(out, "{SECTION} {i}");
                    out.push_str(&m.to_text());
                }
            }
            std::fs::write(&per_scene, out)?;
        }
        _ => {}
    }
    Ok(txt)
}
