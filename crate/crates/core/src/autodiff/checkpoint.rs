//! Checkpoint files.
//!
//! ```text
//! safecritic-checkpoint v1
//! meta <key> <value>          (zero or more)
//! params <count>
//! <name> <d0>x<d1>...         (one per parameter, `scalar` for rank 0)
//! data
//! <raw little-endian f64 values, manifest order>
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use indexmap::IndexMap;

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const FORMAT_HEADER: &str = "safecritic-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default)]
pub struct Checkpoint {
    pub meta: IndexMap<String, String>,
    pub params: ParamStore,
}

fn format_shape(shape: &[usize]) -> String {
    if shape.is_empty() {
        "scalar".to_string()
    } else {
        shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
    }
}

fn parse_shape(s: &str) -> Result<Vec<usize>> {
    if s == "scalar" {
        return Ok(vec![]);
    }
    s.split('x').map(|d| d.parse().map_err(|_| Error::Checkpoint(format!("bad shape `{s}`")))).collect()
}

impl Checkpoint {
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "{FORMAT_HEADER} v{FORMAT_VERSION}")?;
        for (k, v) in &self.meta {
            if k.contains(char::is_whitespace) || v.contains('\n') {
                return Err(Error::Checkpoint(format!("unwritable meta entry `{k}`")));
            }
            writeln!(w, "meta {k} {v}")?;
        }
        writeln!(w, "params {}", self.params.len())?;
        for (name, t) in self.params.iter() {
            writeln!(w, "{name} {}", format_shape(t.shape()))?;
        }
        writeln!(w, "data")?;
        for (_, t) in self.params.iter() {
            for x in t.data() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl BufRead) -> Result<Self> {
        let mut line = String::new();
        let mut next_line = |r: &mut dyn BufRead| -> Result<String> {
            line.clear();
            if r.read_line(&mut line)? == 0 {
                return Err(Error::Checkpoint("unexpected end of file".into()));
            }
            Ok(line.trim_end_matches('\n').to_string())
        };

        let header = next_line(r)?;
        let version = header
            .strip_prefix(FORMAT_HEADER)
            .and_then(|rest| rest.trim().strip_prefix('v'))
            .and_then(|v| v.parse::<u32>().ok())
            .ok_or_else(|| Error::Checkpoint(format!("not a checkpoint file (header `{header}`)")))?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "checkpoint version {version} is not supported (expected {FORMAT_VERSION})"
            )));
        }

        let mut meta = IndexMap::new();
        let count = loop {
            let l = next_line(r)?;
            if let Some(rest) = l.strip_prefix("meta ") {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                meta.insert(k.to_string(), v.to_string());
            } else if let Some(n) = l.strip_prefix("params ") {
                break n
                    .trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Checkpoint(format!("bad parameter count `{n}`")))?;
            } else {
                return Err(Error::Checkpoint(format!("unexpected line `{l}`")));
            }
        };

        let mut manifest = Vec::with_capacity(count);
        for _ in 0..count {
            let l = next_line(r)?;
            let (name, shape) =
                l.rsplit_once(' ').ok_or_else(|| Error::Checkpoint(format!("bad manifest line `{l}`")))?;
            manifest.push((name.to_string(), parse_shape(shape)?));
        }
        if next_line(r)? != "data" {
            return Err(Error::Checkpoint("missing `data` marker".into()));
        }

        let mut params = ParamStore::new();
        let mut buf = [0u8; 8];
        for (name, shape) in manifest {
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                r.read_exact(&mut buf).map_err(|_| Error::Checkpoint(format!("truncated data in `{name}`")))?;
                data.push(f64::from_le_bytes(buf));
            }
            params.add(name, Tensor::new(shape, data)?);
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", rest.len())));
        }
        Ok(Checkpoint { meta, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut params = ParamStore::new();
        params.add("gen.w", Tensor::new(vec![2, 3], vec![1.5, -2.0, 0.1, 1e-300, f64::MAX, -0.0]).unwrap());
        params.add("gen.bias", Tensor::scalar(std::f64::consts::PI));
        let mut meta = IndexMap::new();
        meta.insert("hidden".to_string(), "32".to_string());
        Checkpoint { meta, params }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let mut bytes = Vec::new();
        ck.write_to(&mut bytes).unwrap();
        let back = Checkpoint::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(back.meta, ck.meta);
        for ((n1, t1), (n2, t2)) in ck.params.iter().zip(back.params.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            let b1: Vec<u64> = t1.data().iter().map(|x| x.to_bits()).collect();
            let b2: Vec<u64> = t2.data().iter().map(|x| x.to_bits()).collect();
            assert_eq!(b1, b2);
        }
    }

    #[test]
    fn header_is_text() {
        let mut bytes = Vec::new();
        sample().write_to(&mut bytes).unwrap();
        let text = String::from_utf8_lossy(&bytes);
        assert!(
            text.starts_with("safecritic-checkpoint v1\nmeta hidden 32\nparams 2\ngen.w 2x3\ngen.bias scalar\ndata\n")
        );
    }

    #[test]
    fn version_mismatch_is_reported() {
        let mut bytes = Vec::new();
        sample().write_to(&mut bytes).unwrap();
        let patched = String::from_utf8_lossy(&bytes[..24]).replace("v1", "v9");
        let mut data = patched.into_bytes();
        data.extend_from_slice(&bytes[24..]);
        let err = Checkpoint::read_from(&mut data.as_slice()).unwrap_err();
        assert!(err.to_string().contains("version 9"), "{err}");
    }

    #[test]
    fn truncated_data_is_an_error() {
        let mut bytes = Vec::new();
        sample().write_to(&mut bytes).unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(Checkpoint::read_from(&mut bytes.as_slice()).is_err());
    }
}
