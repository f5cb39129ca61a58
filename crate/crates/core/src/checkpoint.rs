//! Versioned text checkpoints.
//!
//! A checkpoint is a small bag of named networks, integer arrays, float arrays
//! and string metadata. Floats are written with Rust's shortest round-trip
//! formatting, so loading reproduces every parameter bit-exactly. The last line
//! carries the SHA-256 of everything above it; any edit or truncation is
//! reported as an integrity error.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{Activation, Dense, Mlp};

const MAGIC: &str = "macproto-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub kind: String,
    pub meta: BTreeMap<String, String>,
    pub nets: BTreeMap<String, Mlp<f64>>,
    pub ints: BTreeMap<String, Vec<u64>>,
    pub floats: BTreeMap<String, Vec<f64>>,
}

fn check_name(name: &str) -> Result<()> {
    if name.is_empty() || name.chars().any(|c| c.is_whitespace()) {
        return Err(Error::contract(format!("invalid checkpoint entry name {name:?}")));
    }
    Ok(())
}

fn join<I: IntoIterator<Item = String>>(it: I) -> String {
    it.into_iter().collect::<Vec<_>>().join(" ")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of a file's bytes, for manifests.
pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Writes through a temporary file in the same directory, then renames it
/// into place, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

impl Checkpoint {
    pub fn new(kind: &str) -> Self {
        Checkpoint {
            kind: kind.to_string(),
            ..Default::default()
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.insert(key.to_string(), value.to_string());
        self
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.get(key).map(String::as_str)
    }

    pub fn require_kind(&self, kind: &str, path: &Path) -> Result<()> {
        if self.kind != kind {
            return Err(Error::integrity(
                path,
                format!("expected a {kind} checkpoint, found {}", self.kind),
            ));
        }
        Ok(())
    }

    pub fn meta_parsed<T: std::str::FromStr>(&self, key: &str, path: &Path) -> Result<T> {
        let raw = self
            .meta(key)
            .ok_or_else(|| Error::integrity(path, format!("missing metadata `{key}`")))?;
        raw.parse()
            .map_err(|_| Error::integrity(path, format!("bad metadata `{key}` = {raw:?}")))
    }

    pub fn net(&self, name: &str, path: &Path) -> Result<&Mlp<f64>> {
        self.nets
            .get(name)
            .ok_or_else(|| Error::integrity(path, format!("missing network `{name}`")))
    }

    pub fn int_array(&self, name: &str, path: &Path) -> Result<&[u64]> {
        self.ints
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::integrity(path, format!("missing array `{name}`")))
    }

    pub fn float_array(&self, name: &str, path: &Path) -> Result<&[f64]> {
        self.floats
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::integrity(path, format!("missing array `{name}`")))
    }

    pub fn to_text(&self) -> Result<String> {
        check_name(&self.kind)?;
        let mut s = String::new();
        writeln!(s, "{MAGIC} v{FORMAT_VERSION}").unwrap();
        writeln!(s, "kind {}", self.kind).unwrap();
        for (k, v) in &self.meta {
            check_name(k)?;
            if v.contains('\n') {
                return Err(Error::contract(format!("metadata `{k}` spans lines")));
            }
            writeln!(s, "meta {k} {v}").unwrap();
        }
        for (name, net) in &self.nets {
            check_name(name)?;
            writeln!(s, "net {name} {}", net.layers().len()).unwrap();
            for l in net.layers() {
                let (rows, cols) = l.weight.dim();
                writeln!(s, "layer {rows} {cols} {}", l.activation.name()).unwrap();
                for row in l.weight.outer_iter() {
                    writeln!(s, "w {}", join(row.iter().map(|x| format!("{x:?}")))).unwrap();
                }
                writeln!(s, "b {}", join(l.bias.iter().map(|x| format!("{x:?}")))).unwrap();
            }
        }
        for (name, v) in &self.ints {
            check_name(name)?;
            writeln!(s, "ints {name} {}", v.len()).unwrap();
            writeln!(s, "i {}", join(v.iter().map(u64::to_string))).unwrap();
        }
        for (name, v) in &self.floats {
            check_name(name)?;
            writeln!(s, "floats {name} {}", v.len()).unwrap();
            writeln!(s, "f {}", join(v.iter().map(|x| format!("{x:?}")))).unwrap();
        }
        writeln!(s, "end").unwrap();
        let digest = sha256_hex(s.as_bytes());
        writeln!(s, "sha256 {digest}").unwrap();
        Ok(s)
    }

    /// Parses checkpoint text; `path` only labels errors.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::integrity(path, reason);
        let body_end = text
            .rfind("end\nsha256 ")
            .ok_or_else(|| bad("missing trailer (file truncated?)".into()))?
            + "end\n".len();
        let trailer = text[body_end..].trim_end_matches('\n');
        let stored = trailer
            .strip_prefix("sha256 ")
            .ok_or_else(|| bad("malformed checksum line".into()))?;
        if stored != sha256_hex(text[..body_end].as_bytes()) {
            return Err(bad("checksum mismatch".into()));
        }

        let mut lines = text[..body_end].lines().enumerate().peekable();
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| Error::integrity(path, format!("unexpected end of file, expected {what}")))
        };
        let (_, header) = next("header")?;
        let version = header
            .strip_prefix(MAGIC)
            .and_then(|r| r.trim().strip_prefix('v'))
            .and_then(|v| v.parse::<u32>().ok())
            .ok_or_else(|| bad("not a checkpoint file".into()))?;
        if version != FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {version}")));
        }
        let (_, kind_line) = next("kind")?;
        let kind = kind_line
            .strip_prefix("kind ")
            .ok_or_else(|| bad("missing kind line".into()))?
            .to_string();
        let mut ckpt = Checkpoint::new(&kind);

        fn fields<'a>(line: &'a str, tag: &str, n: usize) -> Option<Vec<&'a str>> {
            let rest = line.strip_prefix(tag)?.strip_prefix(' ')?;
            let parts: Vec<&str> = rest.splitn(n, ' ').collect();
            (parts.len() == n).then_some(parts)
        }
        fn numbers<T: std::str::FromStr>(line: &str, tag: &str, len: usize) -> Option<Vec<T>> {
            let rest = line.strip_prefix(tag)?;
            let rest = rest.strip_prefix(' ').unwrap_or(rest);
            let v: Vec<T> = rest
                .split_ascii_whitespace()
                .map(|x| x.parse().ok())
                .collect::<Option<_>>()?;
            (v.len() == len).then_some(v)
        }

        loop {
            let (no, line) = next("a section")?;
            let lineno = no + 1;
            let malformed = |what: &str| bad(format!("line {lineno}: malformed {what}"));
            let tag = line.split(' ').next().unwrap_or("");
            match tag {
                "end" => break,
                "meta" => {
                    let p = fields(line, "meta", 2).ok_or_else(|| malformed("meta line"))?;
                    ckpt.meta.insert(p[0].to_string(), p[1].to_string());
                }
                "net" => {
                    let p = fields(line, "net", 2).ok_or_else(|| malformed("net line"))?;
                    let n_layers: usize = p[1].parse().map_err(|_| malformed("layer count"))?;
                    let mut layers = Vec::with_capacity(n_layers);
                    for _ in 0..n_layers {
                        let (_, l) = next("layer")?;
                        let lp = fields(l, "layer", 3).ok_or_else(|| malformed("layer header"))?;
                        let rows: usize = lp[0].parse().map_err(|_| malformed("layer rows"))?;
                        let cols: usize = lp[1].parse().map_err(|_| malformed("layer cols"))?;
                        let activation =
                            Activation::parse(lp[2]).ok_or_else(|| malformed("activation"))?;
                        let mut w = Vec::with_capacity(rows * cols);
                        for _ in 0..rows {
                            let (_, wl) = next("weight row")?;
                            w.extend(numbers::<f64>(wl, "w", cols).ok_or_else(|| malformed("weight row"))?);
                        }
                        let (_, bl) = next("bias")?;
                        let b = numbers::<f64>(bl, "b", cols).ok_or_else(|| malformed("bias row"))?;
                        layers.push(Dense {
                            weight: Array2::from_shape_vec((rows, cols), w).unwrap(),
                            bias: Array1::from(b),
                            activation,
                        });
                    }
                    let net = Mlp::from_layers(layers).map_err(|e| bad(format!("network `{}`: {e}", p[0])))?;
                    ckpt.nets.insert(p[0].to_string(), net);
                }
                "ints" | "floats" => {
                    let p = fields(line, tag, 2).ok_or_else(|| malformed("array header"))?;
                    let len: usize = p[1].parse().map_err(|_| malformed("array length"))?;
                    let (_, data) = next("array data")?;
                    if tag == "ints" {
                        let v = numbers::<u64>(data, "i", len).ok_or_else(|| malformed("int array"))?;
                        ckpt.ints.insert(p[0].to_string(), v);
                    } else {
                        let v = numbers::<f64>(data, "f", len).ok_or_else(|| malformed("float array"))?;
                        ckpt.floats.insert(p[0].to_string(), v);
                    }
                }
                other => return Err(bad(format!("line {lineno}: unknown section `{other}`"))),
            }
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let text = String::from_utf8(bytes).map_err(|_| Error::integrity(path, "not valid UTF-8"))?;
        Checkpoint::parse(&text, path)
    }
}
