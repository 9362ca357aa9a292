//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Values run to the end
//! of the line (trimmed). Typed readers consume keys, and [`KvFile::finish`]
//! rejects anything left over so typos fail loudly.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use indexmap::IndexMap;

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct KvFile {
    path: PathBuf,
    entries: IndexMap<String, (usize, String)>,
}

impl KvFile {
    pub fn parse(text: &str, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut entries = IndexMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path.clone(),
                line: i + 1,
                msg: format!("expected `key = value`, got `{line}`"),
            })?;
            let key = k.trim().to_string();
            if key.is_empty() {
                return Err(Error::Parse { path, line: i + 1, msg: "empty key".into() });
            }
            if let Some((prev, _)) = entries.insert(key.clone(), (i + 1, v.trim().to_string())) {
                return Err(Error::Parse { path, line: i + 1, msg: format!("`{key}` already set on line {prev}") });
            }
        }
        Ok(KvFile { path, entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, path)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Removes and parses `key`, if present.
    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.entries.shift_remove(key) {
            None => Ok(None),
            Some((line, v)) => v.parse::<T>().map(Some).map_err(|_| Error::Parse {
                path: self.path.clone(),
                line,
                msg: format!("invalid value `{v}` for `{key}`"),
            }),
        }
    }

    /// Like [`take`](Self::take) but keeps `default` when the key is absent.
    pub fn take_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        Ok(self.take(key)?.unwrap_or(default))
    }

    /// Fails on the first key no reader consumed.
    pub fn finish(self) -> Result<()> {
        match self.entries.into_iter().next() {
            None => Ok(()),
            Some((key, (line, _))) => Err(Error::Parse { path: self.path, line, msg: format!("unknown key `{key}`") }),
        }
    }
}

/// Accepts `on/off`, `true/false`, `yes/no` and `1/0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Flag(pub bool);

impl FromStr for Flag {
    type Err = ();
    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s.to_ascii_lowercase().as_str() {
            "on" | "true" | "yes" | "1" => Ok(Flag(true)),
            "off" | "false" | "no" | "0" => Ok(Flag(false)),
            _ => Err(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn typed_reads_and_unknown_keys() {
        let mut kv = KvFile::parse("# c\nlr = 0.5\n\nname = a b\nasr = off\ntypo = 1\n", "t.cfg").unwrap();
        assert_eq!(kv.take::<f64>("lr").unwrap(), Some(0.5));
        assert_eq!(kv.take::<String>("name").unwrap().as_deref(), Some("a b"));
        assert_eq!(kv.take::<Flag>("asr").unwrap(), Some(Flag(false)));
        assert_eq!(kv.take_or("missing", 3usize).unwrap(), 3);
        match kv.finish() {
            Err(Error::Parse { line, msg, .. }) => {
                assert_eq!(line, 6);
                assert!(msg.contains("typo"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_value_reports_key_and_line() {
        let mut kv = KvFile::parse("epochs = many\n", "t.cfg").unwrap();
        let err = kv.take::<usize>("epochs").unwrap_err().to_string();
        assert!(err.contains("t.cfg:1") && err.contains("epochs"), "{err}");
    }

    #[test]
    fn duplicates_and_garbage() {
        assert!(KvFile::parse("a = 1\na = 2\n", "t").is_err());
        assert!(KvFile::parse("just words\n", "t").is_err());
    }
}
