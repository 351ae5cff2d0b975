//! The binary envelope shared by every checkpoint.
//!
//! ```text
//! magic    8 bytes  "UDISTCKP"
//! version  u32
//! kind     str      (u32 length + UTF-8)
//! stage    str
//! hash     str      config hash
//! seed     u64
//! users    u64
//! items    u64
//! dim      u64
//! count    u32      sections
//!   name str, dtype u8 (0 = f32 matrix, 1 = UTF-8 text), rows u64, cols u64, bytes u64
//! payload           sections in table order; matrices row-major f32
//! digest   32 bytes sha256 of everything above
//! ```
//!
//! All integers are little-endian.

use std::fmt::Write as _;

use ndarray::Array2;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"UDISTCKP";
pub const VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub enum Section {
    Matrix(Array2<f64>),
    Text(String),
}

impl Section {
    fn dtype(&self) -> u8 {
        match self {
            Section::Matrix(_) => 0,
            Section::Text(_) => 1,
        }
    }

    fn shape(&self) -> (usize, usize) {
        match self {
            Section::Matrix(m) => m.dim(),
            Section::Text(t) => (1, t.len()),
        }
    }

    fn payload_len(&self) -> usize {
        match self {
            Section::Matrix(m) => m.len() * 4,
            Section::Text(t) => t.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub stage: String,
    pub config_hash: String,
    pub seed: u64,
    pub n_users: usize,
    pub n_items: usize,
    pub dim: usize,
    pub sections: Vec<(String, Section)>,
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Integrity(format!("truncated checkpoint: {what} runs past the end of the file"))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self, what: &str) -> Result<usize> {
        usize::try_from(self.u64(what)?).map_err(|_| Error::Integrity(format!("{what} does not fit in memory")))
    }

    fn str(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let b = self.take(n, what)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::Integrity(format!("{what} is not UTF-8")))
    }
}

impl Checkpoint {
    pub fn new(kind: &str, stage: &str, config_hash: &str, seed: u64) -> Self {
        Checkpoint {
            kind: kind.into(),
            stage: stage.into(),
            config_hash: config_hash.into(),
            seed,
            n_users: 0,
            n_items: 0,
            dim: 0,
            sections: Vec::new(),
        }
    }

    pub fn dims(mut self, n_users: usize, n_items: usize, dim: usize) -> Self {
        self.n_users = n_users;
        self.n_items = n_items;
        self.dim = dim;
        self
    }

    pub fn push_matrix(&mut self, name: impl Into<String>, m: Array2<f64>) {
        self.sections.push((name.into(), Section::Matrix(m)));
    }

    pub fn push_text(&mut self, name: impl Into<String>, t: impl Into<String>) {
        self.sections.push((name.into(), Section::Text(t.into())));
    }

    fn section(&self, name: &str) -> Result<&Section> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s)
            .ok_or_else(|| Error::Integrity(format!("{} checkpoint has no section `{name}`", self.kind)))
    }

    pub fn matrix(&self, name: &str) -> Result<&Array2<f64>> {
        match self.section(name)? {
            Section::Matrix(m) => Ok(m),
            Section::Text(_) => Err(Error::Integrity(format!("section `{name}` is text, expected a matrix"))),
        }
    }

    pub fn text(&self, name: &str) -> Result<&str> {
        match self.section(name)? {
            Section::Text(t) => Ok(t),
            Section::Matrix(_) => Err(Error::Integrity(format!("section `{name}` is a matrix, expected text"))),
        }
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Integrity(format!("expected a {kind} checkpoint, found {}", self.kind)));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &self.kind);
        put_str(&mut out, &self.stage);
        put_str(&mut out, &self.config_hash);
        for v in [self.seed, self.n_users as u64, self.n_items as u64, self.dim as u64] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for (name, s) in &self.sections {
            put_str(&mut out, name);
            out.push(s.dtype());
            let (r, c) = s.shape();
            out.extend_from_slice(&(r as u64).to_le_bytes());
            out.extend_from_slice(&(c as u64).to_le_bytes());
            out.extend_from_slice(&(s.payload_len() as u64).to_le_bytes());
        }
        for (_, s) in &self.sections {
            match s {
                Section::Matrix(m) => {
                    for x in m.iter() {
                        out.extend_from_slice(&(*x as f32).to_le_bytes());
                    }
                }
                Section::Text(t) => out.extend_from_slice(t.as_bytes()),
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Integrity("unrecognized magic; not a checkpoint".into()));
        }
        if bytes.len() < MAGIC.len() + DIGEST_LEN {
            return Err(Error::Integrity("truncated checkpoint".into()));
        }
        let mut r = Reader { bytes, pos: MAGIC.len() };
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::Integrity(format!("unsupported checkpoint version {version}")));
        }
        let kind = r.str("kind")?;
        let stage = r.str("stage")?;
        let config_hash = r.str("config hash")?;
        let seed = r.u64("seed")?;
        let n_users = r.usize("users")?;
        let n_items = r.usize("items")?;
        let dim = r.usize("dim")?;
        let count = r.u32("section count")? as usize;
        let mut table = Vec::with_capacity(count.min(1024));
        for k in 0..count {
            let what = format!("section {k}");
            let name = r.str(&what)?;
            let dtype = r.u8(&what)?;
            let rows = r.usize(&what)?;
            let cols = r.usize(&what)?;
            let len = r.usize(&what)?;
            table.push((name, dtype, rows, cols, len));
        }
        let mut sections = Vec::with_capacity(table.len());
        for (name, dtype, rows, cols, len) in table {
            let data = r.take(len, &format!("section `{name}`"))?;
            let section = match dtype {
                0 => {
                    if rows.checked_mul(cols).and_then(|n| n.checked_mul(4)) != Some(len) {
                        return Err(Error::Integrity(format!(
                            "section `{name}` is {rows}×{cols} but holds {len} bytes"
                        )));
                    }
                    let values = data
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                        .collect();
                    Section::Matrix(Array2::from_shape_vec((rows, cols), values).expect("shape checked"))
                }
                1 => Section::Text(
                    String::from_utf8(data.to_vec())
                        .map_err(|_| Error::Integrity(format!("section `{name}` is not UTF-8")))?,
                ),
                other => return Err(Error::Integrity(format!("section `{name}` has unknown dtype {other}"))),
            };
            sections.push((name, section));
        }
        let body_end = r.pos;
        let stored = r.take(DIGEST_LEN, "digest")?;
        if r.pos != bytes.len() {
            return Err(Error::Integrity(format!("{} trailing bytes after digest", bytes.len() - r.pos)));
        }
        if Sha256::digest(&bytes[..body_end]).as_slice() != stored {
            return Err(Error::Integrity("checksum mismatch".into()));
        }
        Ok(Checkpoint {
            kind,
            stage,
            config_hash,
            seed,
            n_users,
            n_items,
            dim,
            sections,
        })
    }

    pub fn describe(&self) -> String {
        let mut s = match self.kind.as_str() {
            "behavior" => format!(
                "behavior embeddings {}×{} users, {}×{} warm items\n",
                self.n_users, self.dim, self.n_items, self.dim
            ),
            "vocab" => format!("user vocabulary {}×{}\n", self.n_users, self.dim),
            "encoder" => format!("encoder d={} ({} sections)\n", self.dim, self.sections.len()),
            "refined" => format!(
                "refined embeddings {}×{} users, {}×{} items\n",
                self.n_users, self.dim, self.n_items, self.dim
            ),
            other => format!("{other} checkpoint\n"),
        };
        writeln!(s, "kind={}", self.kind).unwrap();
        writeln!(s, "stage={}", self.stage).unwrap();
        writeln!(s, "seed={}", self.seed).unwrap();
        writeln!(s, "config_hash={}", self.config_hash).unwrap();
        writeln!(s, "users={} items={} dim={}", self.n_users, self.n_items, self.dim).unwrap();
        for (name, sec) in &self.sections {
            match sec {
                Section::Matrix(m) => writeln!(s, "  {name}: f32 {}×{}", m.nrows(), m.ncols()).unwrap(),
                Section::Text(t) => writeln!(s, "  {name}: text {} bytes", t.len()).unwrap(),
            }
        }
        s
    }
}
