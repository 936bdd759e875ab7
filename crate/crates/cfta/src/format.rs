//! ADPT embedding files and ADPL label files.
//!
//! Both are little-endian with a fixed header followed by a dense payload.
//! ADPT: `"ADPT" | version u32 | n_rows u32 | dim u32 | flags u32 | f32 * n_rows * dim`.
//! ADPL: `"ADPL" | version u32 | n_rows u32 | i32 * n_rows`, `-1` meaning unlabeled.

use std::fs;
use std::io;
use std::path::Path;

use cfta_core::types::UNIT_NORM_TOL;
use cfta_core::FeatureVector;
use thiserror::Error;

pub const EMBEDDING_MAGIC: [u8; 4] = *b"ADPT";
pub const LABEL_MAGIC: [u8; 4] = *b"ADPL";
pub const FORMAT_VERSION: u32 = 1;
/// Rows were unit-normalized by the writer.
pub const FLAG_PRE_NORMALIZED: u32 = 1;

pub const EMBEDDING_HEADER_LEN: usize = 20;
pub const LABEL_HEADER_LEN: usize = 12;

pub const UNLABELED: i32 = -1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported version {found}, expected {expected}")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("file truncated at byte offset {offset}: expected {expected} bytes")]
    TruncatedFile { offset: u64, expected: u64 },
    #[error("{found} bytes where the header declares {expected}")]
    TrailingBytes { expected: u64, found: u64 },
    #[error("non-finite value at row {row}, column {col}")]
    NonFiniteValue { row: usize, col: usize },
    #[error("row {row} has zero norm and cannot be normalized")]
    ZeroNormRow { row: usize },
    #[error("label {value} at row {row} is neither -1 nor a class index")]
    InvalidLabel { row: usize, value: i32 },
    #[error("row {row} has length {found}, expected {expected}")]
    RaggedRows { row: usize, expected: usize, found: usize },
    #[error("{0} does not fit the u32 header field")]
    TooLarge(&'static str),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Raw contents of an ADPT file. Values are kept in their stored precision.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingFile {
    pub n_rows: usize,
    pub dim: usize,
    pub flags: u32,
    pub data: Vec<f32>,
}

impl EmbeddingFile {
    /// Converts `f64` rows to storage precision.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R], pre_normalized: bool) -> Result<Self, FormatError> {
        let dim = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(FormatError::RaggedRows { row: i, expected: dim, found: r.len() });
            }
            for (j, &v) in r.iter().enumerate() {
                if !v.is_finite() {
                    return Err(FormatError::NonFiniteValue { row: i, col: j });
                }
                data.push(v as f32);
            }
        }
        let flags = if pre_normalized { FLAG_PRE_NORMALIZED } else { 0 };
        Ok(Self { n_rows: rows.len(), dim, flags, data })
    }

    pub fn pre_normalized(&self) -> bool {
        self.flags & FLAG_PRE_NORMALIZED != 0
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FormatError> {
        let header = take(bytes, 0, EMBEDDING_HEADER_LEN)?;
        check_magic(&header[0..4], EMBEDDING_MAGIC)?;
        let version = u32_at(header, 4);
        if version != FORMAT_VERSION {
            return Err(FormatError::VersionMismatch { expected: FORMAT_VERSION, found: version });
        }
        let n_rows = u32_at(header, 8) as usize;
        let dim = u32_at(header, 12) as usize;
        let flags = u32_at(header, 16);

        let payload_len = n_rows as u64 * dim as u64 * 4;
        let total = EMBEDDING_HEADER_LEN as u64 + payload_len;
        check_len(bytes, total)?;

        let payload = &bytes[EMBEDDING_HEADER_LEN..];
        let mut data = Vec::with_capacity(n_rows * dim);
        for (idx, chunk) in payload.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
            if !v.is_finite() {
                return Err(FormatError::NonFiniteValue { row: idx / dim, col: idx % dim });
            }
            data.push(v);
        }
        Ok(Self { n_rows, dim, flags, data })
    }

    pub fn encode(&self) -> Result<Vec<u8>, FormatError> {
        let n_rows = u32::try_from(self.n_rows).map_err(|_| FormatError::TooLarge("n_rows"))?;
        let dim = u32::try_from(self.dim).map_err(|_| FormatError::TooLarge("dim"))?;
        if self.data.len() != self.n_rows * self.dim {
            return Err(FormatError::TrailingBytes {
                expected: (self.n_rows * self.dim * 4) as u64,
                found: (self.data.len() * 4) as u64,
            });
        }
        let mut out = Vec::with_capacity(EMBEDDING_HEADER_LEN + self.data.len() * 4);
        out.extend_from_slice(&EMBEDDING_MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&n_rows.to_le_bytes());
        out.extend_from_slice(&dim.to_le_bytes());
        out.extend_from_slice(&self.flags.to_le_bytes());
        out.extend_from_slice(&self.payload_bytes());
        Ok(out)
    }

    /// Payload exactly as stored on disk.
    pub fn payload_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    /// Rows as unit-norm `f64` features. Rows flagged pre-normalized whose
    /// norm is already within tolerance pass through unchanged; everything
    /// else is normalized.
    pub fn to_features(&self) -> Result<Vec<FeatureVector>, FormatError> {
        (0..self.n_rows)
            .map(|i| {
                let row: Vec<f64> = self.row(i).iter().map(|&v| v as f64).collect();
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm == 0.0 {
                    return Err(FormatError::ZeroNormRow { row: i });
                }
                let feature = if self.pre_normalized() && (norm - 1.0).abs() <= UNIT_NORM_TOL {
                    FeatureVector::unit(row)
                } else {
                    FeatureVector::normalized(row)
                };
                feature.map_err(|_| FormatError::ZeroNormRow { row: i })
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelFile {
    pub labels: Vec<i32>,
}

impl LabelFile {
    pub fn decode(bytes: &[u8]) -> Result<Self, FormatError> {
        let header = take(bytes, 0, LABEL_HEADER_LEN)?;
        check_magic(&header[0..4], LABEL_MAGIC)?;
        let version = u32_at(header, 4);
        if version != FORMAT_VERSION {
            return Err(FormatError::VersionMismatch { expected: FORMAT_VERSION, found: version });
        }
        let n_rows = u32_at(header, 8) as u64;
        check_len(bytes, LABEL_HEADER_LEN as u64 + n_rows * 4)?;
        let labels = bytes[LABEL_HEADER_LEN..]
            .chunks_exact(4)
            .enumerate()
            .map(|(row, c)| {
                let value = i32::from_le_bytes(c.try_into().expect("4-byte chunk"));
                if value < UNLABELED {
                    Err(FormatError::InvalidLabel { row, value })
                } else {
                    Ok(value)
                }
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { labels })
    }

    pub fn encode(&self) -> Result<Vec<u8>, FormatError> {
        let n = u32::try_from(self.labels.len()).map_err(|_| FormatError::TooLarge("n_rows"))?;
        let mut out = Vec::with_capacity(LABEL_HEADER_LEN + self.labels.len() * 4);
        out.extend_from_slice(&LABEL_MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&n.to_le_bytes());
        for (row, &l) in self.labels.iter().enumerate() {
            if l < UNLABELED {
                return Err(FormatError::InvalidLabel { row, value: l });
            }
            out.extend_from_slice(&l.to_le_bytes());
        }
        Ok(out)
    }

    /// Checks every label against a class count.
    pub fn check_classes(&self, classes: usize) -> Result<(), FormatError> {
        match self.labels.iter().enumerate().find(|(_, &l)| l != UNLABELED && l as usize >= classes) {
            Some((row, &value)) => Err(FormatError::InvalidLabel { row, value }),
            None => Ok(()),
        }
    }
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingFile, FormatError> {
    EmbeddingFile::decode(&fs::read(path)?)
}

pub fn write_embeddings(path: impl AsRef<Path>, file: &EmbeddingFile) -> Result<(), FormatError> {
    Ok(fs::write(path, file.encode()?)?)
}

/// Reads an ADPT file and returns its rows as unit-norm features.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<Vec<FeatureVector>, FormatError> {
    read_embeddings(path)?.to_features()
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelFile, FormatError> {
    LabelFile::decode(&fs::read(path)?)
}

pub fn write_labels(path: impl AsRef<Path>, file: &LabelFile) -> Result<(), FormatError> {
    Ok(fs::write(path, file.encode()?)?)
}

fn take(bytes: &[u8], start: usize, len: usize) -> Result<&[u8], FormatError> {
    bytes.get(start..start + len).ok_or(FormatError::TruncatedFile {
        offset: bytes.len() as u64,
        expected: (start + len) as u64,
    })
}

fn check_magic(found: &[u8], expected: [u8; 4]) -> Result<(), FormatError> {
    let found: [u8; 4] = found.try_into().expect("4-byte magic");
    if found != expected {
        return Err(FormatError::BadMagic { expected, found });
    }
    Ok(())
}

fn check_len(bytes: &[u8], expected: u64) -> Result<(), FormatError> {
    let found = bytes.len() as u64;
    if found < expected {
        Err(FormatError::TruncatedFile { offset: found, expected })
    } else if found > expected {
        Err(FormatError::TrailingBytes { expected, found })
    } else {
        Ok(())
    }
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4-byte field"))
}
