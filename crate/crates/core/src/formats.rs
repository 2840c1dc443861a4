//! Embedding matrix files.
//!
//! Text: a `V D` line, then one line per token holding the token and `D`
//! floats separated by single spaces. Binary: `EMB1`, `u32 V`, `u32 D`, each
//! token as `u32` byte length plus UTF-8, then the row-major `f32` matrix.
//! Integers and floats are little-endian. Both round-trip bit-exactly.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::factorization::io::read_f32s;
use crate::numerics::Matrix;
use crate::vocab::Vocabulary;

pub const EMBEDDING_MAGIC: &[u8; 4] = b"EMB1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingFormat {
    Text,
    Binary,
}

/// A token table with one embedding row per token.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    pub tokens: Vec<String>,
    pub matrix: Matrix,
}

impl Embeddings {
    pub fn new(tokens: Vec<String>, matrix: Matrix) -> Result<Self> {
        if tokens.len() != matrix.rows() {
            return Err(Error::shape(format!(
                "{} tokens for {} rows",
                tokens.len(),
                matrix.rows()
            )));
        }
        Ok(Embeddings { tokens, matrix })
    }

    pub fn for_vocab(vocab: &Vocabulary, matrix: Matrix) -> Result<Self> {
        Embeddings::new(vocab.tokens().to_vec(), matrix)
    }

    pub fn write<W: Write>(&self, w: W, format: EmbeddingFormat) -> Result<()> {
        match format {
            EmbeddingFormat::Text => self.write_text(w),
            EmbeddingFormat::Binary => self.write_binary(w),
        }
    }

    pub fn to_bytes(&self, format: EmbeddingFormat) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write(&mut buf, format)?;
        Ok(buf)
    }

    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{} {}", self.matrix.rows(), self.matrix.cols())?;
        for (v, token) in self.tokens.iter().enumerate() {
            if token.is_empty() || token.chars().any(char::is_whitespace) {
                return Err(Error::format(
                    "embedding text",
                    format!("token {token:?} cannot be written in the text format"),
                ));
            }
            let mut line = token.clone();
            for x in self.matrix.row(v) {
                // shortest representation that parses back to the same f32
                line.push(' ');
                line.push_str(&x.to_string());
            }
            line.push('\n');
            w.write_all(line.as_bytes())?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        const WHAT: &str = "embedding text";
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| Error::format(WHAT, "file is empty"))??;
        let dims: Vec<usize> = header
            .split(' ')
            .map(|s| s.parse().map_err(|_| Error::format(WHAT, format!("bad header {header:?}"))))
            .collect::<Result<_>>()?;
        let [rows, cols] = dims[..] else {
            return Err(Error::format(WHAT, format!("bad header {header:?}")));
        };
        let mut tokens = Vec::with_capacity(rows);
        let mut data = Vec::with_capacity(rows.saturating_mul(cols).min(1 << 28));
        for (k, line) in lines.enumerate() {
            let line = line?;
            if k >= rows {
                if line.is_empty() {
                    continue;
                }
                return Err(Error::format(WHAT, format!("more than {rows} rows")));
            }
            let mut fields = line.split(' ');
            let token = fields.next().unwrap_or_default();
            let before = data.len();
            for f in fields {
                data.push(
                    f.parse::<f32>()
                        .map_err(|_| Error::format(WHAT, format!("line {}: bad value {f:?}", k + 2)))?,
                );
            }
            if token.is_empty() || data.len() - before != cols {
                return Err(Error::format(WHAT, format!("line {}: expected a token and {cols} values", k + 2)));
            }
            tokens.push(token.to_owned());
        }
        if tokens.len() != rows {
            return Err(Error::format(WHAT, format!("expected {rows} rows, found {}", tokens.len())));
        }
        Embeddings::new(tokens, Matrix::from_vec(rows, cols, data)?)
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let (rows, cols) = self.matrix.shape();
        let rows32 = u32::try_from(rows).map_err(|_| Error::format("embedding binary", "too many rows"))?;
        let cols32 = u32::try_from(cols).map_err(|_| Error::format("embedding binary", "too many columns"))?;
        let mut buf = Vec::with_capacity(12 + rows * (cols * 4 + 8));
        buf.extend_from_slice(EMBEDDING_MAGIC);
        buf.extend_from_slice(&rows32.to_le_bytes());
        buf.extend_from_slice(&cols32.to_le_bytes());
        for t in &self.tokens {
            buf.extend_from_slice(&(t.len() as u32).to_le_bytes());
            buf.extend_from_slice(t.as_bytes());
        }
        for x in self.matrix.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        const WHAT: &str = "embedding binary";
        let mut head = [0u8; 12];
        r.read_exact(&mut head).map_err(|_| Error::format(WHAT, "truncated header"))?;
        if &head[..4] != EMBEDDING_MAGIC {
            return Err(Error::format(WHAT, "bad magic bytes"));
        }
        let rows = u32::from_le_bytes(head[4..8].try_into().expect("4 bytes")) as usize;
        let cols = u32::from_le_bytes(head[8..12].try_into().expect("4 bytes")) as usize;
        let mut tokens = Vec::with_capacity(rows.min(1 << 24));
        for _ in 0..rows {
            let mut len = [0u8; 4];
            r.read_exact(&mut len).map_err(|_| Error::format(WHAT, "truncated token table"))?;
            let mut bytes = Vec::new();
            (&mut r)
                .take(u64::from(u32::from_le_bytes(len)))
                .read_to_end(&mut bytes)?;
            if bytes.len() != u32::from_le_bytes(len) as usize {
                return Err(Error::format(WHAT, "truncated token table"));
            }
            tokens.push(String::from_utf8(bytes).map_err(|_| Error::format(WHAT, "token is not UTF-8"))?);
        }
        let count = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::format(WHAT, "sizes overflow"))?;
        let data = read_f32s(&mut r, count).map_err(|_| Error::format(WHAT, "truncated matrix"))?;
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::format(WHAT, "trailing bytes"));
        }
        Embeddings::new(tokens, Matrix::from_vec(rows, cols, data)?)
    }

    /// Reads either format, detected from the first bytes.
    pub fn read_any<R: Read>(r: R) -> Result<(Self, EmbeddingFormat)> {
        let mut reader = BufReader::new(r);
        let is_binary = reader.fill_buf()?.starts_with(EMBEDDING_MAGIC);
        if is_binary {
            Ok((Embeddings::read_binary(reader)?, EmbeddingFormat::Binary))
        } else {
            Ok((Embeddings::read_text(reader)?, EmbeddingFormat::Text))
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Embeddings::read_any(fs::File::open(path)?)?.0)
    }

    pub fn save(&self, path: impl AsRef<Path>, format: EmbeddingFormat) -> Result<()> {
        fs::write(path, self.to_bytes(format)?)?;
        Ok(())
    }
}
