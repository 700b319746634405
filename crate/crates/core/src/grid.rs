//! Regular node grids with trilinear interpolation and the binary grid file
//! layout shared by SDF grids (`SDFG`) and uncertainty grids (`UNCG`).

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::{Aabb, Vec3};

#[derive(Debug, Error)]
pub enum GridError {
    #[error("grid dims must be >= 2 per axis, got {0:?}")]
    BadDims([usize; 3]),
    #[error("bounding box min must be < max componentwise")]
    BadBbox,
    #[error("value count {got} does not match dims product {expected}")]
    ValueCount { expected: usize, got: usize },
    #[error("{path}: {reason}")]
    File { path: String, reason: String },
}

/// Node layout of a regular grid spanning `bbox`; node `(i,j,k)` sits at
/// `bbox.min + (i,j,k) * spacing`, x fastest in linear order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub dims: [usize; 3],
    pub bbox: Aabb,
}

/// The eight corners of the cell containing a query and their weights.
#[derive(Debug, Clone, Copy)]
pub struct Stencil {
    pub index: [usize; 8],
    pub weight: [f64; 8],
    /// Derivatives of each weight with respect to the query position.
    pub dweight: [Vec3; 8],
}

impl GridSpec {
    pub fn new(dims: [usize; 3], bbox: Aabb) -> Result<Self, GridError> {
        if dims.iter().any(|&d| d < 2) {
            return Err(GridError::BadDims(dims));
        }
        if !bbox.is_valid() {
            return Err(GridError::BadBbox);
        }
        Ok(Self { dims, bbox })
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self) -> Vec3 {
        let e = self.bbox.extent();
        Vec3::new(
            e.x / (self.dims[0] - 1) as f64,
            e.y / (self.dims[1] - 1) as f64,
            e.z / (self.dims[2] - 1) as f64,
        )
    }

    /// Smallest node spacing over the three axes.
    pub fn min_spacing(&self) -> f64 {
        let s = self.spacing();
        s.x.min(s.y).min(s.z)
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let j = (idx / self.dims[0]) % self.dims[1];
        let k = idx / (self.dims[0] * self.dims[1]);
        [i, j, k]
    }

    pub fn node_position(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let s = self.spacing();
        self.bbox.min + Vec3::new(i as f64 * s.x, j as f64 * s.y, k as f64 * s.z)
    }

    /// Trilinear stencil at `p`, clamped into the box.
    pub fn stencil(&self, p: &Vec3) -> Stencil {
        let q = self.bbox.clamp(p);
        let s = self.spacing();
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let g = (q[a] - self.bbox.min[a]) / s[a];
            let i0 = (g.floor().max(0.0) as usize).min(self.dims[a] - 2);
            base[a] = i0;
            frac[a] = (g - i0 as f64).clamp(0.0, 1.0);
        }
        let mut st = Stencil { index: [0; 8], weight: [0.0; 8], dweight: [Vec3::zeros(); 8] };
        for c in 0..8 {
            let o = [c & 1, (c >> 1) & 1, (c >> 2) & 1];
            let w1 = |a: usize| if o[a] == 1 { frac[a] } else { 1.0 - frac[a] };
            let dw1 = |a: usize| if o[a] == 1 { 1.0 / s[a] } else { -1.0 / s[a] };
            let (wx, wy, wz) = (w1(0), w1(1), w1(2));
            st.index[c] = self.index(base[0] + o[0], base[1] + o[1], base[2] + o[2]);
            st.weight[c] = wx * wy * wz;
            st.dweight[c] = Vec3::new(dw1(0) * wy * wz, wx * dw1(1) * wz, wx * wy * dw1(2));
        }
        st
    }

    /// Linear index of the cell (lower corner node) containing `p`.
    pub fn cell_of(&self, p: &Vec3) -> usize {
        let q = self.bbox.clamp(p);
        let s = self.spacing();
        let mut c = [0usize; 3];
        for a in 0..3 {
            let g = (q[a] - self.bbox.min[a]) / s[a];
            c[a] = (g.floor().max(0.0) as usize).min(self.dims[a] - 2);
        }
        self.index(c[0], c[1], c[2])
    }
}

/// Trilinear interpolation of node `values` at `p` (clamped to the box).
pub fn trilinear<T: Copy + Into<f64>>(spec: &GridSpec, values: &[T], p: &Vec3) -> f64 {
    let st = spec.stencil(p);
    (0..8).map(|c| st.weight[c] * values[st.index[c]].into()).sum()
}

/// Value and spatial gradient of the trilinear interpolant at `p`.
pub fn trilinear_with_gradient<T: Copy + Into<f64>>(spec: &GridSpec, values: &[T], p: &Vec3) -> (f64, Vec3) {
    let st = spec.stencil(p);
    let mut v = 0.0;
    let mut g = Vec3::zeros();
    for c in 0..8 {
        let x: f64 = values[st.index[c]].into();
        v += st.weight[c] * x;
        g += st.dweight[c] * x;
    }
    (v, g)
}

/// Writes a grid file: 4-byte magic, `u32` version 1, dims `3×u32`,
/// bbox `6×f32`, then the values as little-endian `f32`, x fastest.
pub fn write_grid_file(path: &Path, magic: &[u8; 4], spec: &GridSpec, values: &[f32]) -> Result<(), GridError> {
    let err = |e: std::io::Error| GridError::File { path: path.display().to_string(), reason: e.to_string() };
    let mut buf = Vec::with_capacity(44 + 4 * values.len());
    encode_grid(&mut buf, magic, spec, values);
    let mut f = std::fs::File::create(path).map_err(err)?;
    f.write_all(&buf).map_err(err)?;
    Ok(())
}

pub fn encode_grid(buf: &mut Vec<u8>, magic: &[u8; 4], spec: &GridSpec, values: &[f32]) {
    buf.extend_from_slice(magic);
    buf.extend_from_slice(&1u32.to_le_bytes());
    for d in spec.dims {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in spec.bbox.min.iter().chain(spec.bbox.max.iter()) {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

/// Reads a grid file written by [`write_grid_file`], checking the magic.
pub fn read_grid_file(path: &Path, magic: &[u8; 4]) -> Result<(GridSpec, Vec<f32>), GridError> {
    let ferr = |reason: String| GridError::File { path: path.display().to_string(), reason };
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| ferr(e.to_string()))?;
    decode_grid(&bytes, magic).map_err(ferr)
}

pub fn decode_grid(bytes: &[u8], magic: &[u8; 4]) -> Result<(GridSpec, Vec<f32>), String> {
    if bytes.len() < 44 {
        return Err("truncated header".into());
    }
    if &bytes[0..4] != magic {
        return Err(format!("bad magic, expected {}", String::from_utf8_lossy(magic)));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let f32_at = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != 1 {
        return Err(format!("unsupported version {version}"));
    }
    let dims = [u32_at(8) as usize, u32_at(12) as usize, u32_at(16) as usize];
    let min = Vec3::new(f32_at(20) as f64, f32_at(24) as f64, f32_at(28) as f64);
    let max = Vec3::new(f32_at(32) as f64, f32_at(36) as f64, f32_at(40) as f64);
    let spec = GridSpec::new(dims, Aabb::new(min, max)).map_err(|e| e.to_string())?;
    let n = spec.len();
    if bytes.len() != 44 + 4 * n {
        return Err(format!("expected {} value bytes, found {}", 4 * n, bytes.len() - 44));
    }
    let values = (0..n).map(|i| f32_at(44 + 4 * i)).collect();
    Ok((spec, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> GridSpec {
        GridSpec::new([3, 4, 5], Aabb::new(Vec3::new(-1.0, 0.0, 2.0), Vec3::new(1.0, 3.0, 6.0))).unwrap()
    }

    #[test]
    fn node_values_are_reproduced() {
        let s = spec();
        let values: Vec<f64> = (0..s.len()).map(|i| (i as f64).sin()).collect();
        for idx in 0..s.len() {
            let [i, j, k] = s.coords(idx);
            let p = s.node_position(i, j, k);
            assert!((trilinear(&s, &values, &p) - values[idx]).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_function_is_exact() {
        let s = spec();
        let f = |p: &Vec3| 0.3 * p.x - 1.2 * p.y + 0.7 * p.z + 0.1;
        let values: Vec<f64> = (0..s.len())
            .map(|idx| {
                let [i, j, k] = s.coords(idx);
                f(&s.node_position(i, j, k))
            })
            .collect();
        let p = Vec3::new(0.13, 1.71, 4.4);
        let (v, g) = trilinear_with_gradient(&s, &values, &p);
        assert!((v - f(&p)).abs() < 1e-12);
        assert!((g - Vec3::new(0.3, -1.2, 0.7)).norm() < 1e-12);
    }

    #[test]
    fn rejects_bad_layouts() {
        assert!(GridSpec::new([1, 2, 2], Aabb::cube(Vec3::zeros(), 1.0)).is_err());
        assert!(GridSpec::new([2, 2, 2], Aabb::new(Vec3::zeros(), Vec3::new(1.0, 0.0, 1.0))).is_err());
    }

    #[test]
    fn file_header_layout() {
        let s = GridSpec::new([2, 2, 2], Aabb::cube(Vec3::zeros(), 1.0)).unwrap();
        let mut buf = Vec::new();
        encode_grid(&mut buf, b"SDFG", &s, &[0.5; 8]);
        assert_eq!(&buf[0..4], b"SDFG");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 2);
        assert_eq!(f32::from_le_bytes(buf[20..24].try_into().unwrap()), -1.0);
        assert_eq!(f32::from_le_bytes(buf[32..36].try_into().unwrap()), 1.0);
        assert_eq!(buf.len(), 44 + 32);
        assert!(decode_grid(&buf, b"UNCG").is_err());
        assert!(decode_grid(&buf[..50], b"SDFG").is_err());
        let (s2, v) = decode_grid(&buf, b"SDFG").unwrap();
        assert_eq!(s2, s);
        assert_eq!(v, vec![0.5; 8]);
    }
}
