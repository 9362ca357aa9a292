//! Rasterized static scene maps.
//!
//! File format:
//!
//! ```text
//! width 4
//! height 2
//! cell_size_m 0.5
//! origin -1.0 0.0
//! classes free building vegetation road sidewalk
//! 0 0 1 1
//! 3 3 3 3
//! ```
//!
//! Each data line is one map row, starting at `origin.y` and going up in `y`.
//! Class index 0 is always `free`, which is also what lies outside the map.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Point;

pub const FREE: u8 = 0;
pub const BUILDING: u8 = 1;
pub const VEGETATION: u8 = 2;
pub const ROAD: u8 = 3;
pub const SIDEWALK: u8 = 4;

/// Default label vocabulary. Extra labels may be appended in map files as
/// long as the model's static head is sized to match.
pub const DEFAULT_CLASSES: [&str; 5] = ["free", "building", "vegetation", "road", "sidewalk"];

/// A set of class indices, e.g. the classes agents must not enter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClassSet(u64);

impl ClassSet {
    pub const EMPTY: ClassSet = ClassSet(0);

    pub fn of(classes: &[u8]) -> Self {
        ClassSet(classes.iter().fold(0, |m, &c| m | (1u64 << c)))
    }

    pub fn contains(self, class: u8) -> bool {
        class < 64 && self.0 & (1 << class) != 0
    }

    pub fn iter(self) -> impl Iterator<Item = u8> {
        (0..64u8).filter(move |&c| self.contains(c))
    }
}

impl Default for ClassSet {
    /// Buildings and vegetation.
    fn default() -> Self {
        ClassSet::of(&[BUILDING, VEGETATION])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StaticMap {
    pub origin: Point,
    pub cell_size: f64,
    pub width: usize,
    pub height: usize,
    pub classes: Vec<String>,
    /// Row-major, `height` rows of `width` cells.
    cells: Vec<u8>,
}

impl StaticMap {
    pub fn new(
        origin: Point,
        cell_size: f64,
        width: usize,
        height: usize,
        classes: Vec<String>,
        cells: Vec<u8>,
    ) -> Result<Self> {
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(Error::Invalid(format!("map cell size must be positive, got {cell_size}")));
        }
        if !origin.is_finite() {
            return Err(Error::Invalid("map origin is not finite".into()));
        }
        if classes.first().map(String::as_str) != Some("free") {
            return Err(Error::Invalid("map class 0 must be `free`".into()));
        }
        if classes.len() > 64 {
            return Err(Error::Invalid(format!("{} classes, at most 64 supported", classes.len())));
        }
        if cells.len() != width * height {
            return Err(Error::Invalid(format!("{} cells for a {width}x{height} map", cells.len())));
        }
        if let Some(&bad) = cells.iter().find(|&&c| c as usize >= classes.len()) {
            return Err(Error::Invalid(format!("class index {bad} with {} classes", classes.len())));
        }
        Ok(StaticMap { origin, cell_size, width, height, classes, cells })
    }

    /// An all-free map with the default vocabulary.
    pub fn free(origin: Point, cell_size: f64, width: usize, height: usize) -> Result<Self> {
        Self::new(origin, cell_size, width, height, default_classes(), vec![FREE; width * height])
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.cells[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, class: u8) {
        assert!((class as usize) < self.classes.len(), "class {class} out of range");
        self.cells[row * self.width + col] = class;
    }

    /// `(row, col)` of the cell containing `p`, if inside the map.
    pub fn cell_of(&self, p: Point) -> Option<(usize, usize)> {
        let c = ((p.x - self.origin.x) / self.cell_size).floor();
        let r = ((p.y - self.origin.y) / self.cell_size).floor();
        let inside = c >= 0.0 && r >= 0.0 && c < self.width as f64 && r < self.height as f64;
        inside.then_some((r as usize, c as usize))
    }

    /// Class at a world position; outside the map is free.
    pub fn class_at(&self, p: Point) -> u8 {
        self.cell_of(p).map_or(FREE, |(r, c)| self.get(r, c))
    }

    /// World position of the center of cell `(row, col)`.
    pub fn cell_center(&self, row: usize, col: usize) -> Point {
        Point::new(
            self.origin.x + (col as f64 + 0.5) * self.cell_size,
            self.origin.y + (row as f64 + 0.5) * self.cell_size,
        )
    }

    /// Fills every cell whose center lies in the axis-aligned box `[lo, hi)`.
    pub fn fill_rect(&mut self, lo: Point, hi: Point, class: u8) {
        for r in 0..self.height {
            for c in 0..self.width {
                let p = self.cell_center(r, c);
                if p.x >= lo.x && p.x < hi.x && p.y >= lo.y && p.y < hi.y {
                    self.set(r, c, class);
                }
            }
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "width {}", self.width);
        let _ = writeln!(s, "height {}", self.height);
        let _ = writeln!(s, "cell_size_m {}", self.cell_size);
        let _ = writeln!(s, "origin {} {}", self.origin.x, self.origin.y);
        let _ = writeln!(s, "classes {}", self.classes.join(" "));
        for row in self.cells.chunks(self.width.max(1)) {
            let line: Vec<String> = row.iter().map(u8::to_string).collect();
            let _ = writeln!(s, "{}", line.join(" "));
        }
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse { path: path.to_path_buf(), line, msg };
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

        let mut header = |key: &str| -> Result<(usize, Vec<String>)> {
            let (no, line) = lines.next().ok_or_else(|| err(0, format!("missing `{key}` line")))?;
            let mut parts = line.split_whitespace();
            if parts.next() != Some(key) {
                return Err(err(no, format!("expected `{key}`")));
            }
            Ok((no, parts.map(str::to_string).collect()))
        };
        let num = |no: usize, v: &[String], n: usize| -> Result<Vec<f64>> {
            if v.len() != n {
                return Err(err(no, format!("expected {n} values")));
            }
            v.iter().map(|s| s.parse::<f64>().map_err(|_| err(no, format!("bad number `{s}`")))).collect()
        };

        let (no, v) = header("width")?;
        let width = num(no, &v, 1)?[0] as usize;
        let (no, v) = header("height")?;
        let height = num(no, &v, 1)?[0] as usize;
        let (no, v) = header("cell_size_m")?;
        let cell_size = num(no, &v, 1)?[0];
        let (no, v) = header("origin")?;
        let o = num(no, &v, 2)?;
        let (no, classes) = header("classes")?;
        if classes.is_empty() {
            return Err(err(no, "empty class list".into()));
        }

        let mut cells = Vec::with_capacity(width * height);
        let mut rows = 0;
        for (no, line) in lines {
            let row: Vec<u8> = line
                .split_whitespace()
                .map(|s| s.parse::<u8>().map_err(|_| err(no, format!("bad class index `{s}`"))))
                .collect::<Result<_>>()?;
            if row.len() != width {
                return Err(err(no, format!("row has {} cells, expected {width}", row.len())));
            }
            if let Some(&bad) = row.iter().find(|&&c| c as usize >= classes.len()) {
                return Err(err(no, format!("class index {bad} out of range")));
            }
            cells.extend(row);
            rows += 1;
        }
        if rows != height {
            return Err(err(0, format!("{rows} rows, expected {height}")));
        }
        StaticMap::new(Point::new(o[0], o[1]), cell_size, width, height, classes, cells)
            .map_err(|e| err(0, e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

pub fn default_classes() -> Vec<String> {
    DEFAULT_CLASSES.iter().map(|s| s.to_string()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_and_outside() {
        let mut m = StaticMap::free(Point::new(-1.0, 0.0), 0.5, 4, 2).unwrap();
        m.set(1, 2, BUILDING);
        assert_eq!(m.class_at(Point::new(0.1, 0.6)), BUILDING);
        assert_eq!(m.class_at(Point::new(-0.9, 0.1)), FREE);
        assert_eq!(m.class_at(Point::new(5.0, 0.1)), FREE);
        assert_eq!(m.class_at(Point::new(-1.01, 0.1)), FREE);
    }

    #[test]
    fn text_round_trip() {
        let mut m = StaticMap::free(Point::new(-1.0, 0.25), 0.5, 4, 2).unwrap();
        m.set(0, 3, ROAD);
        m.set(1, 0, VEGETATION);
        let back = StaticMap::parse(&m.to_text(), Path::new("m.map")).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "width 2\nheight 1\ncell_size_m 1\norigin 0 0\nclasses free building\n0 7\n";
        match StaticMap::parse(text, Path::new("x.map")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 6),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn class_set() {
        let s = ClassSet::default();
        assert!(s.contains(BUILDING) && s.contains(VEGETATION));
        assert!(!s.contains(FREE) && !s.contains(ROAD));
        assert_eq!(s.iter().collect::<Vec<_>>(), vec![BUILDING, VEGETATION]);
    }
}
