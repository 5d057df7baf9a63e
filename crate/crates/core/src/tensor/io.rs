//! `SFA1` binary feature-map files: magic, five LE `u32` extents
//! `(S, N, H, W, C)`, then the data as LE `f64`, row-major.

use std::fs;
use std::path::Path;

use super::{FeatureMap, Shape};
use crate::error::{Error, Result};

pub const FEATURE_MAP_MAGIC: &[u8; 4] = b"SFA1";

const HEADER_LEN: usize = 4 + 5 * 4;

impl FeatureMap {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.data().len() * 8);
        out.extend_from_slice(FEATURE_MAP_MAGIC);
        for e in self.shape().extents() {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for v in self.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<FeatureMap> {
        if bytes.len() < HEADER_LEN || &bytes[..4] != FEATURE_MAP_MAGIC {
            return Err(Error::Format("missing SFA1 header".into()));
        }
        let mut ext = [0usize; 5];
        for (i, e) in ext.iter_mut().enumerate() {
            let at = 4 + i * 4;
            *e = u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
        }
        let shape = Shape::new(ext[0], ext[1], ext[2], ext[3], ext[4])?;
        let body = &bytes[HEADER_LEN..];
        if body.len() != shape.len() * 8 {
            return Err(Error::Format(format!(
                "{shape} needs {} data bytes, found {}",
                shape.len() * 8,
                body.len()
            )));
        }
        let data = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        FeatureMap::new(shape, data)
    }
}

pub fn write_feature_map(path: &Path, map: &FeatureMap) -> Result<()> {
    fs::write(path, map.to_bytes())?;
    Ok(())
}

pub fn read_feature_map(path: &Path) -> Result<FeatureMap> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    FeatureMap::from_bytes(&fs::read(path)?)
}
