use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::render::VoxelGrid;

/// Writes `voxgrid N N N f32\n` followed by little-endian floats in
/// depth-major order.
pub fn write_voxels(path: &Path, grid: &VoxelGrid) -> Result<()> {
    let n = grid.size();
    let mut bytes = format!("voxgrid {n} {n} {n} f32\n").into_bytes();
    for v in grid.values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_voxels(path: &Path) -> Result<VoxelGrid> {
    let bytes = fs::read(path)?;
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("missing voxgrid header".into()))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| Error::Format("non-text voxgrid header".into()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 5 || fields[0] != "voxgrid" || fields[4] != "f32" {
        return Err(Error::Format(format!("bad voxgrid header `{header}`")));
    }
    let dims = fields[1..4]
        .iter()
        .map(|s| s.parse::<usize>().map_err(|_| Error::Format(format!("bad dimension `{s}`"))))
        .collect::<Result<Vec<_>>>()?;
    if dims[0] != dims[1] || dims[1] != dims[2] {
        return Err(Error::Format(format!("non-cubic grid {dims:?}")));
    }
    let n = dims[0];
    let payload = &bytes[nl + 1..];
    if payload.len() != 4 * n * n * n {
        return Err(Error::Truncated {
            what: "voxgrid payload",
            expected: 4 * n * n * n,
            actual: payload.len(),
        });
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    VoxelGrid::new(n, values)
}

/// Writes one `d h w` line per voxel above `threshold`; returns the count.
pub fn write_points(path: &Path, grid: &VoxelGrid, threshold: f32) -> Result<usize> {
    let n = grid.size();
    let mut out = String::new();
    let mut count = 0;
    for d in 0..n {
        for h in 0..n {
            for w in 0..n {
                if grid.get(d, h, w) > threshold {
                    writeln!(out, "{d} {h} {w}").expect("string write");
                    count += 1;
                }
            }
        }
    }
    fs::write(path, out)?;
    Ok(count)
}
