//! `ULP2` embedding tables: magic `ULP2`, u32 version = 1, u32 D, u32 M,
//! then M·D little-endian f32 values row-major.

use std::fs;
use std::path::Path;

use super::EmbedError;
use crate::format::{put_f32s, put_u32, write_atomic, ByteReader, FormatError};

const MAGIC: [u8; 4] = *b"ULP2";
const VERSION: u32 = 1;

/// Allowed deviation of a stored row's L2 norm from 1.
pub const NORM_TOLERANCE: f64 = 1e-3;

/// M×D matrix of embeddings that should be unit rows. Construction only
/// checks the shape; [`EmbeddingTable::validate`] checks the norms and is
/// enforced on every read and write.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    rows: Vec<f32>,
    pub provenance: String,
}

impl EmbeddingTable {
    pub fn new(dim: usize, rows: Vec<f32>, provenance: impl Into<String>) -> Result<Self, EmbedError> {
        if dim == 0 || rows.is_empty() || !rows.len().is_multiple_of(dim) {
            return Err(EmbedError::InvalidTable(format!("{} values do not form rows of dim {dim}", rows.len())));
        }
        Ok(Self { dim, rows, provenance: provenance.into() })
    }

    /// L2-normalizes each row of `raw` (computed in f64).
    pub fn normalized(dim: usize, mut raw: Vec<f32>, provenance: impl Into<String>) -> Result<Self, EmbedError> {
        if dim == 0 || raw.is_empty() || !raw.len().is_multiple_of(dim) {
            return Err(EmbedError::InvalidTable(format!("{} values do not form rows of dim {dim}", raw.len())));
        }
        for (i, row) in raw.chunks_exact_mut(dim).enumerate() {
            let n = row.iter().map(|v| f64::from(*v).powi(2)).sum::<f64>().sqrt();
            if !(n > 0.0) || !n.is_finite() {
                return Err(EmbedError::RowNorm { row: i, norm: n });
            }
            row.iter_mut().for_each(|v| *v = (f64::from(*v) / n) as f32);
        }
        Self::new(dim, raw, provenance)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.rows.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, i: usize) -> Option<&[f32]> {
        (i < self.count()).then(|| self.row(i))
    }

    pub fn as_flat(&self) -> &[f32] {
        &self.rows
    }

    pub fn validate(&self) -> Result<(), EmbedError> {
        for i in 0..self.count() {
            let norm = self.row(i).iter().map(|v| f64::from(*v).powi(2)).sum::<f64>().sqrt();
            if !((norm - 1.0).abs() <= NORM_TOLERANCE) {
                return Err(EmbedError::RowNorm { row: i, norm });
            }
        }
        Ok(())
    }
}

pub fn encode_table(table: &EmbeddingTable) -> Result<Vec<u8>, EmbedError> {
    table.validate()?;
    let mut out = Vec::with_capacity(16 + table.rows.len() * 4);
    out.extend_from_slice(&MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, table.dim as u32);
    put_u32(&mut out, table.count() as u32);
    put_f32s(&mut out, &table.rows);
    Ok(out)
}

/// Decodes and validates a table. Format problems and norm violations are
/// reported as distinct errors.
pub fn decode_table(bytes: &[u8], provenance: &str) -> Result<EmbeddingTable, EmbedError> {
    let parse = || -> Result<(usize, Vec<f32>), FormatError> {
        let mut r = ByteReader::new(bytes);
        r.magic(MAGIC)?;
        let version = r.u32()?;
        if version != VERSION {
            return Err(FormatError::UnsupportedVersion(version));
        }
        let dim = r.u32()? as usize;
        let count = r.u32()? as usize;
        if dim == 0 || count == 0 {
            return Err(FormatError::Invalid(format!("empty table header (D={dim}, M={count})")));
        }
        let rows = r.f32s(dim * count)?;
        r.finish()?;
        Ok((dim, rows))
    };
    let (dim, rows) = parse().map_err(|source| EmbedError::Format { path: provenance.into(), source })?;
    let table = EmbeddingTable::new(dim, rows, provenance)?;
    table.validate()?;
    Ok(table)
}

pub fn write_table(table: &EmbeddingTable, path: impl AsRef<Path>) -> Result<(), EmbedError> {
    let path = path.as_ref();
    let bytes = encode_table(table)?;
    write_atomic(path, &bytes).map_err(|source| EmbedError::Io { path: path.to_path_buf(), source })
}

pub fn read_table(path: impl AsRef<Path>) -> Result<EmbeddingTable, EmbedError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| EmbedError::Io { path: path.to_path_buf(), source })?;
    decode_table(&bytes, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_table(seed: u64, m: usize, d: usize) -> EmbeddingTable {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = (0..m * d).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        EmbeddingTable::normalized(d, raw, "test").unwrap()
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(100))]
        #[test]
        fn round_trip_is_bitwise(seed in 0u64..u64::MAX, m in 1usize..20, d in 1usize..40) {
            let dir = tempfile::tempdir().unwrap();
            let t = random_table(seed, m, d);
            let path = dir.path().join("t.ulp2");
            write_table(&t, &path).unwrap();
            let back = read_table(&path).unwrap();
            proptest::prop_assert_eq!((back.dim(), back.count()), (d, m));
            let bits = |t: &EmbeddingTable| t.as_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            proptest::prop_assert_eq!(bits(&back), bits(&t));
        }
    }

    #[test]
    fn header_layout() {
        let bytes = encode_table(&random_table(2, 3, 5)).unwrap();
        assert_eq!(&bytes[..4], b"ULP2");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 5);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 3);
        assert_eq!(bytes.len(), 16 + 15 * 4);
    }

    #[test]
    fn corrupted_magic_is_a_format_error() {
        let mut bytes = encode_table(&random_table(3, 2, 4)).unwrap();
        bytes[1] = b'!';
        assert!(matches!(
            decode_table(&bytes, "x"),
            Err(EmbedError::Format { source: FormatError::BadMagic { .. }, .. })
        ));
    }

    #[test]
    fn truncation_is_a_format_error() {
        let bytes = encode_table(&random_table(3, 2, 4)).unwrap();
        assert!(matches!(
            decode_table(&bytes[..bytes.len() - 1], "x"),
            Err(EmbedError::Format { source: FormatError::Truncated { .. }, .. })
        ));
    }

    #[test]
    fn short_row_rejected_on_write_with_index() {
        let mut rows = random_table(4, 3, 2).as_flat().to_vec();
        rows[2] = 0.3;
        rows[3] = 0.4;
        let t = EmbeddingTable::new(2, rows, "bad").unwrap();
        match encode_table(&t) {
            Err(EmbedError::RowNorm { row, norm }) => {
                assert_eq!(row, 1);
                assert!((norm - 0.5).abs() < 1e-6);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn norm_violation_rejected_on_read() {
        let mut bytes = encode_table(&random_table(5, 2, 2)).unwrap();
        bytes[16..20].copy_from_slice(&2.0f32.to_le_bytes());
        assert!(matches!(decode_table(&bytes, "x"), Err(EmbedError::RowNorm { row: 0, .. })));
    }
}
