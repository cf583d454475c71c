//! "VPH1" volume files: a JSON header next to a raw little-endian payload,
//! x-fastest (`index = i + nx * (j + ny * k)`).
//!
//! ```json
//! {"dims":[64,48,60],"spacing_mm":[4.0,4.0,4.0],"origin_mm":[0.0,0.0,0.0],
//!  "dtype":"i16","data_file":"ct.raw"}
//! ```
//!
//! Masks use `u8` with values restricted to {0, 1}.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Geometry, Mask, VoxelError, VoxelGrid};

#[derive(Debug, Error)]
pub enum Vph1Error {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: malformed header: {source}")]
    Header { path: PathBuf, source: serde_json::Error },
    #[error("{path}: expected dtype {expected}, found {found}")]
    Dtype { path: PathBuf, expected: Dtype, found: Dtype },
    #[error("{path}: payload holds {got} bytes, header implies {expected}")]
    PayloadLength { path: PathBuf, expected: usize, got: usize },
    #[error("{path}: mask value {value} at voxel {index} is not 0 or 1")]
    MaskValue { path: PathBuf, index: usize, value: u8 },
    #[error("{path}: {source}")]
    Geometry { path: PathBuf, source: VoxelError },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dtype {
    #[serde(rename = "i16")]
    I16,
    #[serde(rename = "u8")]
    U8,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::I16 => 2,
            Dtype::U8 => 1,
        }
    }
}

impl std::fmt::Display for Dtype {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Dtype::I16 => "i16",
            Dtype::U8 => "u8",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub origin_mm: [f64; 3],
    pub dtype: Dtype,
    /// Payload path, relative to the header's directory.
    pub data_file: String,
}

impl Header {
    pub fn geometry(&self) -> Result<Geometry, VoxelError> {
        Geometry::new(self.dims, self.spacing_mm, self.origin_mm)
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> Vph1Error + '_ {
    move |source| Vph1Error::Io { path: path.to_path_buf(), source }
}

/// Payload file name derived from the header name: `ct.json` -> `ct.raw`.
fn payload_name(header_path: &Path) -> String {
    let stem = header_path.file_stem().and_then(|s| s.to_str()).unwrap_or("volume");
    format!("{stem}.raw")
}

fn write_volume(header_path: &Path, geom: &Geometry, dtype: Dtype, payload: &[u8]) -> Result<(), Vph1Error> {
    let data_file = payload_name(header_path);
    let header = Header {
        dims: geom.dims,
        spacing_mm: geom.spacing,
        origin_mm: geom.origin,
        dtype,
        data_file: data_file.clone(),
    };
    let dir = header_path.parent().unwrap_or(Path::new("."));
    fs::write(dir.join(&data_file), payload).map_err(io_err(&dir.join(&data_file)))?;
    let json = serde_json::to_string_pretty(&header).expect("header serializes");
    fs::write(header_path, json + "\n").map_err(io_err(header_path))
}

pub fn read_header(header_path: &Path) -> Result<Header, Vph1Error> {
    let text = fs::read_to_string(header_path).map_err(io_err(header_path))?;
    serde_json::from_str(&text).map_err(|source| Vph1Error::Header { path: header_path.to_path_buf(), source })
}

fn read_payload(header_path: &Path, expected: Dtype) -> Result<(Geometry, Vec<u8>), Vph1Error> {
    let header = read_header(header_path)?;
    if header.dtype != expected {
        return Err(Vph1Error::Dtype { path: header_path.to_path_buf(), expected, found: header.dtype });
    }
    let geom = header
        .geometry()
        .map_err(|source| Vph1Error::Geometry { path: header_path.to_path_buf(), source })?;
    let dir = header_path.parent().unwrap_or(Path::new("."));
    let data_path = dir.join(&header.data_file);
    let bytes = fs::read(&data_path).map_err(io_err(&data_path))?;
    let expected_len = geom.len() * expected.width();
    if bytes.len() != expected_len {
        return Err(Vph1Error::PayloadLength { path: data_path, expected: expected_len, got: bytes.len() });
    }
    Ok((geom, bytes))
}

pub fn write_grid(header_path: &Path, grid: &VoxelGrid) -> Result<(), Vph1Error> {
    let mut payload = Vec::with_capacity(grid.values().len() * 2);
    for v in grid.values() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    write_volume(header_path, grid.geometry(), Dtype::I16, &payload)
}

pub fn read_grid(header_path: &Path) -> Result<VoxelGrid, Vph1Error> {
    let (geom, bytes) = read_payload(header_path, Dtype::I16)?;
    let values = bytes.chunks_exact(2).map(|b| i16::from_le_bytes([b[0], b[1]])).collect();
    VoxelGrid::new(geom, values).map_err(|source| Vph1Error::Geometry { path: header_path.to_path_buf(), source })
}

pub fn write_mask(header_path: &Path, mask: &Mask) -> Result<(), Vph1Error> {
    let payload: Vec<u8> = mask.occupancy().iter().map(|&o| o as u8).collect();
    write_volume(header_path, mask.geometry(), Dtype::U8, &payload)
}

pub fn read_mask(header_path: &Path) -> Result<Mask, Vph1Error> {
    let (geom, bytes) = read_payload(header_path, Dtype::U8)?;
    let mut occ = Vec::with_capacity(bytes.len());
    for (index, &value) in bytes.iter().enumerate() {
        match value {
            0 => occ.push(false),
            1 => occ.push(true),
            _ => return Err(Vph1Error::MaskValue { path: header_path.to_path_buf(), index, value }),
        }
    }
    Mask::new(geom, occ).map_err(|source| Vph1Error::Geometry { path: header_path.to_path_buf(), source })
}

/// Checks a header/payload pair without keeping the data; returns the dtype.
pub fn validate(header_path: &Path) -> Result<Dtype, Vph1Error> {
    let header = read_header(header_path)?;
    match header.dtype {
        Dtype::I16 => read_grid(header_path).map(|_| Dtype::I16),
        Dtype::U8 => read_mask(header_path).map(|_| Dtype::U8),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_and_mask_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = Geometry::new([3, 2, 2], [1.0, 2.0, 2.5], [-1.0, 0.5, 3.0]).unwrap();
        let grid = VoxelGrid::new(g.clone(), (0..12).map(|v| v * 300 - 1000).collect()).unwrap();
        let p = dir.path().join("ct.json");
        write_grid(&p, &grid).unwrap();
        assert_eq!(read_grid(&p).unwrap(), grid);
        assert_eq!(fs::metadata(dir.path().join("ct.raw")).unwrap().len(), 24);
        let raw = fs::read(dir.path().join("ct.raw")).unwrap();
        // x-fastest, little endian: voxel (1,0,0) holds -700
        assert_eq!(i16::from_le_bytes([raw[2], raw[3]]), -700);

        let m = Mask::from_fn(g, |c| c[0] == 1);
        let mp = dir.path().join("liver.json");
        write_mask(&mp, &m).unwrap();
        assert_eq!(read_mask(&mp).unwrap(), m);
        assert_eq!(validate(&mp).unwrap(), Dtype::U8);
        assert!(matches!(read_grid(&mp), Err(Vph1Error::Dtype { .. })));
    }

    #[test]
    fn rejects_bad_payloads() {
        let dir = tempfile::tempdir().unwrap();
        let g = Geometry::new([2, 2, 1], [1.0; 3], [0.0; 3]).unwrap();
        let mp = dir.path().join("m.json");
        write_mask(&mp, &Mask::empty(g)).unwrap();
        fs::write(dir.path().join("m.raw"), [0u8, 1, 2, 0]).unwrap();
        assert!(matches!(read_mask(&mp), Err(Vph1Error::MaskValue { index: 2, value: 2, .. })));
        fs::write(dir.path().join("m.raw"), [0u8, 1]).unwrap();
        assert!(matches!(read_mask(&mp), Err(Vph1Error::PayloadLength { .. })));
        fs::write(&mp, "{\"dims\":[1,1,1]}").unwrap();
        assert!(matches!(read_mask(&mp), Err(Vph1Error::Header { .. })));
    }
}
