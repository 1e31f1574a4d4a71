//! `UPC1` point-cloud files.
//!
//! Layout (little-endian): magic `UPC1`, u32 version = 1, u32 N,
//! u8 has_color, N×3 f32 xyz, then N×3 f32 rgb when has_color is 1.

use std::fs;
use std::path::Path;

use super::{GeometryError, PointCloud};
use crate::format::{put_f32s, put_u32, write_atomic, ByteReader, FormatError};

const MAGIC: [u8; 4] = *b"UPC1";
const VERSION: u32 = 1;

pub fn encode_point_cloud(pc: &PointCloud) -> Vec<u8> {
    let n = pc.len();
    let mut out = Vec::with_capacity(13 + n * 24);
    out.extend_from_slice(&MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, n as u32);
    out.push(u8::from(pc.has_color()));
    put_f32s(&mut out, pc.points().as_flattened());
    if let Some(c) = pc.colors() {
        put_f32s(&mut out, c.as_flattened());
    }
    out
}

fn triples(flat: Vec<f32>) -> Vec<[f32; 3]> {
    flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

pub fn decode_point_cloud(bytes: &[u8]) -> Result<PointCloud, FormatError> {
    let mut r = ByteReader::new(bytes);
    r.magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let n = r.u32()? as usize;
    let has_color = match r.u8()? {
        0 => false,
        1 => true,
        other => return Err(FormatError::Invalid(format!("has_color flag {other}"))),
    };
    let points = triples(r.f32s(n * 3)?);
    let colors = if has_color { Some(triples(r.f32s(n * 3)?)) } else { None };
    r.finish()?;
    PointCloud::new(points, colors).map_err(|e| FormatError::Invalid(e.to_string()))
}

pub fn write_point_cloud(pc: &PointCloud, path: impl AsRef<Path>) -> Result<(), GeometryError> {
    let path = path.as_ref();
    write_atomic(path, &encode_point_cloud(pc)).map_err(|source| GeometryError::Io { path: path.to_path_buf(), source })
}

pub fn read_point_cloud(path: impl AsRef<Path>) -> Result<PointCloud, GeometryError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| GeometryError::Io { path: path.to_path_buf(), source })?;
    decode_point_cloud(&bytes).map_err(|source| GeometryError::Format { path: path.to_path_buf(), source })
}
