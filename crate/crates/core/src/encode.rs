//! Text to fixed-dimension vectors.
//!
//! Two encoders sit behind [`TextEncoder`]: a hashed bag of words computed in
//! process, and an [`EmbeddingTable`] of vectors produced elsewhere and
//! loaded from an `FCEMB1` file (or its line-delimited JSON equivalent).

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use xxhash_rust::xxh64::xxh64;

use crate::corpus::{Dataset, Question};
use crate::error::{Error, Result};

/// Seed for the bucket hash (xxHash64).
pub const HASH_SEED: u64 = 0x6372_6f77_6463_616c;

pub const DEFAULT_HASH_DIM: usize = 4096;

const MAGIC: &[u8; 6] = b"FCEMB1";

/// A lowercased run of letters and digits.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Token(String);

impl Token {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub fn tokenize(text: &str) -> Vec<Token> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|piece| !piece.is_empty())
        .map(|piece| Token(piece.to_lowercase()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Hashing,
    External,
}

impl FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hashing" => Ok(EncoderKind::Hashing),
            "external" => Ok(EncoderKind::External),
            other => Err(Error::InvalidConfig(format!(
                "unknown encoder `{other}` (expected hashing or external)"
            ))),
        }
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncoderKind::Hashing => "hashing",
            EncoderKind::External => "external",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub dim: usize,
    pub normalize: bool,
    pub hash_seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            kind: EncoderKind::Hashing,
            dim: DEFAULT_HASH_DIM,
            normalize: true,
            hash_seed: HASH_SEED,
        }
    }
}

impl EncoderConfig {
    pub fn hashing(dim: usize) -> Self {
        EncoderConfig {
            dim,
            ..Self::default()
        }
    }

    pub fn bucket(&self, token: &Token) -> usize {
        (xxh64(token.as_str().as_bytes(), self.hash_seed) % self.dim as u64) as usize
    }
}

/// Bag-of-words counts bucketed by hash, optionally scaled to unit norm.
pub fn hash_encode(tokens: &[Token], config: &EncoderConfig) -> Vec<f32> {
    let mut out = vec![0.0f32; config.dim];
    for token in tokens {
        out[config.bucket(token)] += 1.0;
    }
    if config.normalize {
        let norm = out.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in &mut out {
                *x = (f64::from(*x) / norm) as f32;
            }
        }
    }
    out
}

/// Non-zero components of a vector, in ascending index order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVector {
    pub dim: usize,
    pub entries: Vec<(u32, f32)>,
}

impl SparseVector {
    pub fn from_dense(dense: &[f32]) -> Self {
        SparseVector {
            dim: dense.len(),
            entries: dense
                .iter()
                .enumerate()
                .filter(|(_, &v)| v != 0.0)
                .map(|(i, &v)| (i as u32, v))
                .collect(),
        }
    }

    pub fn to_dense(&self) -> Vec<f32> {
        let mut out = vec![0.0; self.dim];
        for &(i, v) in &self.entries {
            out[i as usize] = v;
        }
        out
    }
}

/// Vectors keyed by question id or forecast key (see
/// [`Dataset::forecast_keys`]).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingTable {
    dim: usize,
    keys: Vec<String>,
    entries: HashMap<String, Vec<f32>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            dim,
            ..Default::default()
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn insert(&mut self, key: impl Into<String>, vector: Vec<f32>) -> Result<()> {
        let key = key.into();
        if vector.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: vector.len(),
            });
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format {
                kind: "embedding",
                message: format!("non-finite value for key `{key}`"),
            });
        }
        if self.entries.insert(key.clone(), vector).is_some() {
            return Err(Error::Format {
                kind: "embedding",
                message: format!("duplicate key `{key}`"),
            });
        }
        self.keys.push(key);
        Ok(())
    }

    pub fn lookup(&self, key: &str) -> Result<&[f32]> {
        self.entries
            .get(key)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingKey(key.to_string()))
    }

    /// Fails unless vectors in this table have `expected` components.
    pub fn check_dim(&self, expected: usize) -> Result<()> {
        if self.dim != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: self.dim,
            });
        }
        Ok(())
    }

    /// Binary layout, little-endian: magic `FCEMB1`, `u32` dim, `u64` count,
    /// then per record a `u16` key length, the UTF-8 key, and `dim` `f32`s.
    pub fn write_binary(&self, writer: impl Write) -> Result<()> {
        let mut w = BufWriter::new(writer);
        let io = |e| Error::io("writing embeddings", e);
        w.write_all(MAGIC).map_err(io)?;
        w.write_all(&(self.dim as u32).to_le_bytes()).map_err(io)?;
        w.write_all(&(self.keys.len() as u64).to_le_bytes()).map_err(io)?;
        for key in &self.keys {
            let len = u16::try_from(key.len()).map_err(|_| Error::Format {
                kind: "embedding",
                message: format!("key longer than 65535 bytes: `{key}`"),
            })?;
            w.write_all(&len.to_le_bytes()).map_err(io)?;
            w.write_all(key.as_bytes()).map_err(io)?;
            for v in &self.entries[key] {
                w.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }

    pub fn read_binary(mut reader: impl Read) -> Result<Self> {
        let mut magic = [0u8; 6];
        read_exact(&mut reader, &mut magic)?;
        if &magic != MAGIC {
            return Err(format_err("bad magic"));
        }
        Self::read_binary_body(reader)
    }

    fn read_binary_body(mut reader: impl Read) -> Result<Self> {
        let mut u32b = [0u8; 4];
        let mut u64b = [0u8; 8];
        let mut u16b = [0u8; 2];
        read_exact(&mut reader, &mut u32b)?;
        let dim = u32::from_le_bytes(u32b) as usize;
        read_exact(&mut reader, &mut u64b)?;
        let count = u64::from_le_bytes(u64b);
        let mut table = EmbeddingTable::new(dim);
        let mut floats = vec![0u8; dim * 4];
        for _ in 0..count {
            read_exact(&mut reader, &mut u16b)?;
            let mut key = vec![0u8; usize::from(u16::from_le_bytes(u16b))];
            read_exact(&mut reader, &mut key)?;
            let key = String::from_utf8(key).map_err(|_| format_err("key is not UTF-8"))?;
            read_exact(&mut reader, &mut floats)?;
            let vector = floats
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            table.insert(key, vector)?;
        }
        let mut rest = [0u8; 1];
        if reader.read(&mut rest).map_err(|e| Error::io("reading embeddings", e))? != 0 {
            return Err(format_err("trailing bytes after last record"));
        }
        Ok(table)
    }

    /// One `{"key": ..., "vec": [...]}` object per line.
    pub fn read_jsonl(reader: impl BufRead) -> Result<Self> {
        #[derive(Deserialize)]
        struct Line {
            key: String,
            vec: Vec<f32>,
        }
        let mut table: Option<EmbeddingTable> = None;
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io("reading embeddings", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Line = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
                line: i + 1,
                message: e.to_string(),
            })?;
            table
                .get_or_insert_with(|| EmbeddingTable::new(rec.vec.len()))
                .insert(rec.key, rec.vec)?;
        }
        table.ok_or_else(|| format_err("no records"))
    }

    pub fn write_jsonl(&self, writer: impl Write) -> Result<()> {
        let mut w = BufWriter::new(writer);
        for key in &self.keys {
            serde_json::to_writer(&mut w, &serde_json::json!({"key": key, "vec": self.entries[key]}))?;
            w.write_all(b"\n").map_err(|e| Error::io("writing embeddings", e))?;
        }
        w.flush().map_err(|e| Error::io("writing embeddings", e))
    }

    /// Reads either format, detected by the leading magic bytes.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut reader = BufReader::new(file);
        let head = reader.fill_buf().map_err(|e| Error::io(path.display().to_string(), e))?;
        if head.starts_with(MAGIC) {
            Self::read_binary(reader)
        } else {
            Self::read_jsonl(reader)
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        self.write_binary(file)
    }
}

fn format_err(message: &str) -> Error {
    Error::Format {
        kind: "embedding",
        message: message.to_string(),
    }
}

fn read_exact(reader: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    reader.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            format_err("truncated file")
        } else {
            Error::io("reading embeddings", e)
        }
    })
}

/// Produces the vectors fed to the neural aggregator.
pub enum TextEncoder {
    Hashing(EncoderConfig),
    External(EmbeddingTable),
}

impl TextEncoder {
    pub fn dim(&self) -> usize {
        match self {
            TextEncoder::Hashing(c) => c.dim,
            TextEncoder::External(t) => t.dim(),
        }
    }

    pub fn config(&self) -> EncoderConfig {
        match self {
            TextEncoder::Hashing(c) => *c,
            TextEncoder::External(t) => EncoderConfig {
                kind: EncoderKind::External,
                dim: t.dim(),
                normalize: false,
                hash_seed: HASH_SEED,
            },
        }
    }

    pub fn question(&self, question: &Question) -> Result<SparseVector> {
        match self {
            TextEncoder::Hashing(c) => Ok(SparseVector::from_dense(&hash_encode(
                &tokenize(&question.text),
                c,
            ))),
            TextEncoder::External(t) => Ok(SparseVector::from_dense(t.lookup(&question.id)?)),
        }
    }

    /// `key` is the forecast's entry in [`Dataset::forecast_keys`].
    pub fn forecast(&self, dataset: &Dataset, record: usize, key: &str) -> Result<SparseVector> {
        match self {
            TextEncoder::Hashing(c) => Ok(SparseVector::from_dense(&hash_encode(
                &tokenize(&dataset.forecast(record).justification),
                c,
            ))),
            TextEncoder::External(t) => Ok(SparseVector::from_dense(t.lookup(key)?)),
        }
    }
}
