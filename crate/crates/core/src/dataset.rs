//! Binary dataset of (pattern, response) records.
//!
//! Layout: magic "MSDS", version byte 0x01, u32 LE record count, then per
//! record 1024 one-byte ternary codes (0x00 = metal, 0x01 = half, 0x02 = air,
//! row-major) followed by 100 f32 LE response values. Round trips are
//! byte-identical.

use crate::oracle::{SpectralResponse, SPECTRUM_POINTS};
use crate::pattern::{TernaryPattern, FULL_SIZE};
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

const MAGIC: &[u8; 4] = b"MSDS";
const VERSION: u8 = 0x01;
const PATTERN_BYTES: usize = FULL_SIZE * FULL_SIZE;
const RECORD_BYTES: usize = PATTERN_BYTES + SPECTRUM_POINTS * 4;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic; not a dataset file")]
    BadMagic,
    #[error("unsupported dataset version {0}")]
    BadVersion(u8),
    #[error("file length {found} does not match {count} records (expected {expected})")]
    Truncated { count: u32, expected: usize, found: usize },
    #[error("record {0}: {1}")]
    Record(usize, crate::pattern::PatternError),
}

/// One labeled sample.
#[derive(Clone, Debug)]
pub struct DesignRecord {
    pub pattern: TernaryPattern,
    pub response: SpectralResponse,
}

/// In-memory dataset with bit-exact persistence.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub records: Vec<DesignRecord>,
}

impl Dataset {
    pub fn new(records: Vec<DesignRecord>) -> Self {
        Dataset { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(9 + self.records.len() * RECORD_BYTES);
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for rec in &self.records {
            out.extend_from_slice(rec.pattern.levels());
            for &v in rec.response.values() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DatasetError> {
        if bytes.len() < 9 || &bytes[..4] != MAGIC {
            return Err(DatasetError::BadMagic);
        }
        if bytes[4] != VERSION {
            return Err(DatasetError::BadVersion(bytes[4]));
        }
        let count = u32::from_le_bytes(bytes[5..9].try_into().unwrap());
        let expected = 9 + count as usize * RECORD_BYTES;
        if bytes.len() != expected {
            return Err(DatasetError::Truncated { count, expected, found: bytes.len() });
        }
        let mut records = Vec::with_capacity(count as usize);
        for r in 0..count as usize {
            let base = 9 + r * RECORD_BYTES;
            let levels = bytes[base..base + PATTERN_BYTES].to_vec();
            let pattern = TernaryPattern::from_levels(FULL_SIZE, levels)
                .map_err(|e| DatasetError::Record(r, e))?;
            let mut values = [0.0f64; SPECTRUM_POINTS];
            for (i, v) in values.iter_mut().enumerate() {
                let off = base + PATTERN_BYTES + i * 4;
                *v = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as f64;
            }
            records.push(DesignRecord { pattern, response: SpectralResponse::new(values) });
        }
        Ok(Dataset { records })
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        let wrap = |source| DatasetError::Io { path: path.display().to_string(), source };
        let mut f = std::fs::File::create(path).map_err(wrap)?;
        f.write_all(&self.to_bytes()).map_err(wrap)
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let wrap = |source| DatasetError::Io { path: path.display().to_string(), source };
        let mut bytes = Vec::new();
        std::fs::File::open(path).map_err(wrap)?.read_to_end(&mut bytes).map_err(wrap)?;
        Dataset::from_bytes(&bytes)
    }

    /// Leading `floor(split * len)` records for training, the rest held out.
    pub fn split(&self, fraction: f64) -> (&[DesignRecord], &[DesignRecord]) {
        let cut = (fraction * self.len() as f64).floor() as usize;
        self.records.split_at(cut.min(self.len()))
    }
}

/// Generate `samples` labeled records deterministically from `seed`; record
/// i uses pattern seed `seed + i`.
pub fn generate(samples: usize, seed: u64) -> Dataset {
    let records = (0..samples)
        .map(|i| {
            let pattern = crate::pattern::random_pattern(seed.wrapping_add(i as u64));
            let response = crate::oracle::simulate(&pattern);
            DesignRecord { pattern, response }
        })
        .collect();
    Dataset { records }
}
