//! Loading and validating feature metadata and explanation embeddings.
//!
//! Metadata is line-delimited JSON, one feature per line. Embeddings use the
//! `CXEM` binary layout: the four magic bytes, little-endian `u32` row and
//! column counts, then `rows * dims` little-endian `f32` values in row-major
//! order. The same layout stores 2-D positions in saved artifacts.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CXEM_MAGIC: &[u8; 4] = b"CXEM";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("malformed line {line}: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("duplicate feature id {0}")]
    DuplicateFeatureId(u64),
    #[error("empty explanation on line {0}")]
    EmptyExplanation(usize),
    #[error("shape mismatch: found {found} rows, expected {expected}")]
    ShapeMismatch { found: usize, expected: usize },
    #[error("non-finite value at row {row}, column {col}")]
    NonFiniteValue { row: usize, col: usize },
    #[error("embedding row {0} is all zeros")]
    ZeroRow(usize),
    #[error("truncated matrix file")]
    TruncatedFile,
    #[error("bad magic bytes, expected CXEM")]
    BadMagic,
    #[error("matrix must have at least one row and one column")]
    EmptyMatrix,
}

/// One top-activating context. `target_index` points at the token that fired.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationContext {
    pub tokens: Vec<String>,
    pub target_index: usize,
    /// Display only.
    pub activation: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub feature_id: u64,
    pub explanation: String,
    #[serde(default)]
    pub contexts: Vec<ActivationContext>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

/// Feature records in file order plus an id → row lookup.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureCatalog {
    records: Vec<FeatureRecord>,
    index: HashMap<u64, usize>,
}

impl FeatureCatalog {
    pub fn from_records(records: Vec<FeatureRecord>) -> Result<Self, IngestError> {
        let mut index = HashMap::with_capacity(records.len());
        for (row, record) in records.iter().enumerate() {
            if record.explanation.trim().is_empty() {
                return Err(IngestError::EmptyExplanation(row + 1));
            }
            if index.insert(record.feature_id, row).is_some() {
                return Err(IngestError::DuplicateFeatureId(record.feature_id));
            }
        }
        Ok(Self { records, index })
    }

    pub fn records(&self) -> &[FeatureRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn row_of(&self, feature_id: u64) -> Option<usize> {
        self.index.get(&feature_id).copied()
    }

    pub fn get(&self, feature_id: u64) -> Option<&FeatureRecord> {
        self.row_of(feature_id).map(|row| &self.records[row])
    }

    pub fn feature_id(&self, row: usize) -> u64 {
        self.records[row].feature_id
    }
}

/// Dense row-major `rows x dims` matrix of finite `f32` values.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dims: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    /// Builds a matrix without the non-zero-row check. Positions and other
    /// auxiliary matrices go through here.
    pub fn new(rows: usize, dims: usize, data: Vec<f32>) -> Result<Self, IngestError> {
        if rows == 0 || dims == 0 {
            return Err(IngestError::EmptyMatrix);
        }
        if data.len() != rows * dims {
            return Err(IngestError::ShapeMismatch {
                found: data.len() / dims,
                expected: rows,
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(IngestError::NonFiniteValue {
                row: pos / dims,
                col: pos % dims,
            });
        }
        Ok(Self { rows, dims, data })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self, IngestError> {
        let dims = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dims) {
            return Err(IngestError::MalformedLine {
                line: 0,
                message: "ragged rows".into(),
            });
        }
        Self::new(rows.len(), dims, rows.concat())
    }

    /// Rejects all-zero rows, for which cosine distance is undefined.
    pub fn validate_embedding(&self) -> Result<(), IngestError> {
        match (0..self.rows).find(|&i| self.row(i).iter().all(|&v| v == 0.0)) {
            Some(row) => Err(IngestError::ZeroRow(row)),
            None => Ok(()),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dims..(i + 1) * self.dims]
    }

    /// Copy of the selected rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self, IngestError> {
        let mut data = Vec::with_capacity(rows.len() * self.dims);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Self::new(rows.len(), self.dims, data)
    }
}

/// Parses metadata lines. Blank lines are skipped; line numbers are 1-based.
pub fn parse_feature_metadata<R: BufRead>(reader: R) -> Result<FeatureCatalog, IngestError> {
    let mut records = Vec::new();
    let mut index = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: FeatureRecord =
            serde_json::from_str(&line).map_err(|e| IngestError::MalformedLine {
                line: line_no,
                message: e.to_string(),
            })?;
        if record.explanation.trim().is_empty() {
            return Err(IngestError::EmptyExplanation(line_no));
        }
        for ctx in &record.contexts {
            if ctx.tokens.is_empty() || ctx.target_index >= ctx.tokens.len() {
                return Err(IngestError::MalformedLine {
                    line: line_no,
                    message: format!(
                        "context target_index {} outside {} tokens",
                        ctx.target_index,
                        ctx.tokens.len()
                    ),
                });
            }
            if !(ctx.activation.is_finite() && ctx.activation >= 0.0) {
                return Err(IngestError::MalformedLine {
                    line: line_no,
                    message: "activation must be finite and non-negative".into(),
                });
            }
        }
        if index.insert(record.feature_id, records.len()).is_some() {
            return Err(IngestError::DuplicateFeatureId(record.feature_id));
        }
        records.push(record);
    }
    if records.is_empty() {
        return Err(IngestError::MalformedLine {
            line: 0,
            message: "no records".into(),
        });
    }
    Ok(FeatureCatalog { records, index })
}

pub fn load_feature_metadata(path: impl AsRef<Path>) -> Result<FeatureCatalog, IngestError> {
    let file = File::open(path)?;
    parse_feature_metadata(BufReader::new(file))
}

pub fn write_feature_metadata<W: Write>(
    catalog: &FeatureCatalog,
    writer: W,
) -> Result<(), IngestError> {
    let mut writer = BufWriter::new(writer);
    for record in catalog.records() {
        serde_json::to_writer(&mut writer, record).map_err(io::Error::other)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

/// Reads any CXEM payload, checking only shape and finiteness.
pub fn read_cxem<R: Read>(mut reader: R) -> Result<EmbeddingMatrix, IngestError> {
    let mut header = [0u8; 12];
    read_exact_or_truncated(&mut reader, &mut header)?;
    if &header[..4] != CXEM_MAGIC {
        return Err(IngestError::BadMagic);
    }
    let rows = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let dims = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    if rows == 0 || dims == 0 {
        return Err(IngestError::EmptyMatrix);
    }
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    if bytes.len() < rows * dims * 4 {
        return Err(IngestError::TruncatedFile);
    }
    if bytes.len() > rows * dims * 4 {
        return Err(IngestError::ShapeMismatch {
            found: bytes.len() / (dims * 4),
            expected: rows,
        });
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    EmbeddingMatrix::new(rows, dims, data)
}

fn read_exact_or_truncated<R: Read>(reader: &mut R, buf: &mut [u8]) -> Result<(), IngestError> {
    reader.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => IngestError::TruncatedFile,
        _ => IngestError::Io(e),
    })
}

pub fn write_cxem<W: Write>(matrix: &EmbeddingMatrix, writer: W) -> Result<(), IngestError> {
    let mut writer = BufWriter::new(writer);
    writer.write_all(CXEM_MAGIC)?;
    writer.write_all(&(matrix.rows as u32).to_le_bytes())?;
    writer.write_all(&(matrix.dims as u32).to_le_bytes())?;
    for v in &matrix.data {
        writer.write_all(&v.to_le_bytes())?;
    }
    writer.flush()?;
    Ok(())
}

pub fn cxem_bytes(matrix: &EmbeddingMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + matrix.data.len() * 4);
    write_cxem(matrix, &mut out).expect("writing to a Vec cannot fail");
    out
}

/// Loads an embedding matrix and checks it against the catalog row count.
pub fn load_embedding_matrix(
    path: impl AsRef<Path>,
    expected_rows: usize,
) -> Result<EmbeddingMatrix, IngestError> {
    let matrix = read_cxem(BufReader::new(File::open(path)?))?;
    if matrix.rows != expected_rows {
        return Err(IngestError::ShapeMismatch {
            found: matrix.rows,
            expected: expected_rows,
        });
    }
    matrix.validate_embedding()?;
    Ok(matrix)
}
