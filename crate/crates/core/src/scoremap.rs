// SPDX-License-Identifier: Apache-2.0

//! Per-pixel anomaly score grids and their binary file format:
//! the 8-byte magic `EIADSM01`, width and height as little-endian `u32`,
//! then `width * height` little-endian `f32` values in row-major order.

use std::fs;
use std::path::Path;

use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"EIADSM01";
pub const HEADER_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum ScoreMapError {
    #[error("bad magic, expected EIADSM01")]
    BadMagic,
    #[error("truncated score map: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{0} values for a {1}x{2} grid")]
    SizeMismatch(usize, u32, u32),
    #[error("non-finite score at pixel ({x},{y})")]
    NonFinite { x: u32, y: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    width: u32,
    height: u32,
    scores: Vec<f32>,
}

impl ScoreMap {
    pub fn new(width: u32, height: u32, scores: Vec<f32>) -> Result<Self, ScoreMapError> {
        if scores.len() != width as usize * height as usize {
            return Err(ScoreMapError::SizeMismatch(scores.len(), width, height));
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(ScoreMapError::NonFinite { x: (i % width as usize) as u32, y: (i / width as usize) as u32 });
        }
        Ok(Self { width, height, scores })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn scores(&self) -> &[f32] {
        &self.scores
    }

    /// (min, max) over all pixels; `None` for an empty grid.
    pub fn range(&self) -> Option<(f32, f32)> {
        self.scores.iter().fold(None, |acc, &s| match acc {
            None => Some((s, s)),
            Some((lo, hi)) => Some((lo.min(s), hi.max(s))),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.scores.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        for s in &self.scores {
            out.extend_from_slice(&s.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ScoreMapError> {
        if bytes.len() < HEADER_LEN {
            return Err(ScoreMapError::Truncated { expected: HEADER_LEN, found: bytes.len() });
        }
        if &bytes[..8] != MAGIC {
            return Err(ScoreMapError::BadMagic);
        }
        let width = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        let height = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
        let expected = HEADER_LEN + 4 * width as usize * height as usize;
        if bytes.len() != expected {
            return Err(ScoreMapError::Truncated { expected, found: bytes.len() });
        }
        let scores = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(width, height, scores)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, ScoreMapError> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), ScoreMapError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }
}
