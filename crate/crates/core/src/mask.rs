// SPDX-License-Identifier: Apache-2.0

//! Binary defect masks and the geometry derived from them.
//!
//! Coordinates use the image convention: origin at the top-left corner,
//! `x` indexes columns (rightward), `y` indexes rows (downward).

use std::collections::VecDeque;
use std::fmt;
use std::io::Cursor;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MaskError {
    #[error("png decode error: {0}")]
    Decode(String),
    #[error("png encode error: {0}")]
    Encode(String),
    #[error("mask must be single-channel grayscale, found {0}")]
    MultiChannel(String),
    #[error("mask must be 8-bit, found {0} bits per sample")]
    BitDepth(u8),
    #[error("mask is empty")]
    Empty,
    #[error("pixel ({x},{y}) outside {width}x{height} canvas")]
    OutOfBounds { x: u32, y: u32, width: u32, height: u32 },
}

/// A width×height canvas of anomalous/normal pixels.
#[derive(Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BinaryMask")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("anomalous", &self.count())
            .finish()
    }
}

impl BinaryMask {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height, bits: vec![false; width as usize * height as usize] }
    }

    pub fn from_pixels<I>(width: u32, height: u32, pixels: I) -> Result<Self, MaskError>
    where
        I: IntoIterator<Item = (u32, u32)>,
    {
        let mut mask = Self::new(width, height);
        for (x, y) in pixels {
            if x >= width || y >= height {
                return Err(MaskError::OutOfBounds { x, y, width, height });
            }
            mask.set(x, y, true);
        }
        Ok(mask)
    }

    /// Builds a mask from row-major labels. Panics if `bits.len() != width * height`.
    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), width as usize * height as usize, "bit buffer size");
        Self { width, height, bits }
    }

    /// Marks every pixel inside the inclusive rectangle as anomalous.
    pub fn fill_rect(&mut self, x0: u32, y0: u32, x1: u32, y1: u32) {
        for y in y0..=y1.min(self.height.saturating_sub(1)) {
            for x in x0..=x1.min(self.width.saturating_sub(1)) {
                self.set(x, y, true);
            }
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Number of anomalous pixels.
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        x < self.width && y < self.height && self.bits[self.index(x, y)]
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let i = self.index(x, y);
        self.bits[i] = value;
    }

    /// Row-major pixel labels.
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// Anomalous pixels in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width as usize;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| ((i % w) as u32, (i / w) as u32))
    }

    /// Nearest-neighbour upscale: every pixel becomes a `k`×`k` block.
    pub fn upscale(&self, k: u32) -> Self {
        let mut out = Self::new(self.width * k, self.height * k);
        for (x, y) in self.pixels() {
            out.fill_rect(x * k, y * k, x * k + k - 1, y * k + k - 1);
        }
        out
    }

    fn index(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }
}

/// Decodes an 8-bit single-channel PNG; any stored value > 0 is anomalous.
pub fn decode_mask(bytes: &[u8]) -> Result<BinaryMask, MaskError> {
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(|e| MaskError::Decode(e.to_string()))?;
    let (color, depth) = {
        let info = reader.info();
        (info.color_type, info.bit_depth)
    };
    if color != png::ColorType::Grayscale {
        return Err(MaskError::MultiChannel(format!("{color:?}")));
    }
    if depth != png::BitDepth::Eight {
        return Err(MaskError::BitDepth(depth as u8));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| MaskError::Decode("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let frame = reader.next_frame(&mut buf).map_err(|e| MaskError::Decode(e.to_string()))?;
    let (width, height) = (frame.width, frame.height);
    let mut bits = Vec::with_capacity(width as usize * height as usize);
    for row in buf[..frame.buffer_size()].chunks(frame.line_size) {
        bits.extend(row[..width as usize].iter().map(|&v| v > 0));
    }
    Ok(BinaryMask::from_bits(width, height, bits))
}

/// Encodes a mask as an 8-bit grayscale PNG (0 normal, 255 anomalous).
pub fn encode_mask(mask: &BinaryMask) -> Result<Vec<u8>, MaskError> {
    let data: Vec<u8> = mask.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
    encode_gray8(mask.width, mask.height, &data)
}

pub fn encode_gray8(width: u32, height: u32, data: &[u8]) -> Result<Vec<u8>, MaskError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width, height);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| MaskError::Encode(e.to_string()))?;
        writer.write_image_data(data).map_err(|e| MaskError::Encode(e.to_string()))?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

/// Splits a mask into 8-connected components.
pub fn connected_components(mask: &BinaryMask) -> Vec<BinaryMask> {
    connected_components_with(mask, Connectivity::Eight)
}

/// Components are returned ordered by their first pixel in row-major
/// (smallest `(y, x)`) order; each shares the input canvas size.
pub fn connected_components_with(mask: &BinaryMask, conn: Connectivity) -> Vec<BinaryMask> {
    let (w, h) = (mask.width as i64, mask.height as i64);
    let mut seen = vec![false; mask.bits.len()];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    let neighbours: &[(i64, i64)] = match conn {
        Connectivity::Four => &[(1, 0), (-1, 0), (0, 1), (0, -1)],
        Connectivity::Eight => &[
            (-1, -1), (0, -1), (1, -1),
            (-1, 0), (1, 0),
            (-1, 1), (0, 1), (1, 1),
        ],
    };

    for start in 0..mask.bits.len() {
        if !mask.bits[start] || seen[start] {
            continue;
        }
        let mut comp = BinaryMask::new(mask.width, mask.height);
        seen[start] = true;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            comp.bits[i] = true;
            let (x, y) = ((i as i64) % w, (i as i64) / w);
            for &(dx, dy) in neighbours {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w || ny >= h {
                    continue;
                }
                let j = (ny * w + nx) as usize;
                if mask.bits[j] && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        out.push(comp);
    }
    out
}

/// Axis-aligned box with inclusive pixel edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "[u32; 4]", try_from = "[u32; 4]")]
pub struct BoundingBox {
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
}

impl BoundingBox {
    pub fn new(x_min: u32, y_min: u32, x_max: u32, y_max: u32) -> Option<Self> {
        (x_min <= x_max && y_min <= y_max).then_some(Self { x_min, y_min, x_max, y_max })
    }

    pub fn width(&self) -> u64 {
        (self.x_max - self.x_min) as u64 + 1
    }

    pub fn height(&self) -> u64 {
        (self.y_max - self.y_min) as u64 + 1
    }

    pub fn area(&self) -> u64 {
        self.width() * self.height()
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        (self.x_min..=self.x_max).contains(&x) && (self.y_min..=self.y_max).contains(&y)
    }

    pub fn intersection(&self, other: &Self) -> Option<Self> {
        Self::new(
            self.x_min.max(other.x_min),
            self.y_min.max(other.y_min),
            self.x_max.min(other.x_max),
            self.y_max.min(other.y_max),
        )
    }

    /// Intersection over union measured in inclusive pixel areas.
    pub fn iou(&self, other: &Self) -> f64 {
        let inter = self.intersection(other).map_or(0, |b| b.area());
        let union = self.area() + other.area() - inter;
        inter as f64 / union as f64
    }

    pub fn translate(&self, dx: u32, dy: u32) -> Self {
        Self {
            x_min: self.x_min + dx,
            y_min: self.y_min + dy,
            x_max: self.x_max + dx,
            y_max: self.y_max + dy,
        }
    }

    pub fn union(&self, other: &Self) -> Self {
        Self {
            x_min: self.x_min.min(other.x_min),
            y_min: self.y_min.min(other.y_min),
            x_max: self.x_max.max(other.x_max),
            y_max: self.y_max.max(other.y_max),
        }
    }
}

impl From<BoundingBox> for [u32; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x_min, b.y_min, b.x_max, b.y_max]
    }
}

impl TryFrom<[u32; 4]> for BoundingBox {
    type Error = String;

    fn try_from(v: [u32; 4]) -> Result<Self, Self::Error> {
        Self::new(v[0], v[1], v[2], v[3]).ok_or_else(|| format!("inverted box {v:?}"))
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{},{},{}]", self.x_min, self.y_min, self.x_max, self.y_max)
    }
}

impl FromStr for BoundingBox {
    type Err = String;

    /// Parses `[x1,y1,x2,y2]`; whitespace around numbers is tolerated.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let inner = s
            .trim()
            .strip_prefix('[')
            .and_then(|r| r.strip_suffix(']'))
            .ok_or_else(|| format!("not a bracketed box: {s:?}"))?;
        let nums = inner
            .split(',')
            .map(|t| t.trim().parse::<u32>().map_err(|e| format!("{t:?}: {e}")))
            .collect::<Result<Vec<_>, _>>()?;
        let arr: [u32; 4] = nums.try_into().map_err(|v: Vec<u32>| format!("expected 4 values, got {}", v.len()))?;
        Self::try_from(arr)
    }
}

/// Smallest inclusive box covering every anomalous pixel.
pub fn tight_bbox(mask: &BinaryMask) -> Result<BoundingBox, MaskError> {
    let mut it = mask.pixels();
    let (x0, y0) = it.next().ok_or(MaskError::Empty)?;
    let mut b = BoundingBox { x_min: x0, y_min: y0, x_max: x0, y_max: y0 };
    for (x, y) in it {
        b.x_min = b.x_min.min(x);
        b.x_max = b.x_max.max(x);
        // row-major scan: y is non-decreasing
        b.y_max = y;
    }
    Ok(b)
}

const REGION_NAMES: [&str; 9] = [
    "top left corner",
    "top",
    "top right corner",
    "left",
    "center",
    "right",
    "bottom left corner",
    "bottom",
    "bottom right corner",
];

/// One cell of the 3×3 grid laid over an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GridRegion {
    row: u8,
    col: u8,
}

impl GridRegion {
    pub fn new(row: u8, col: u8) -> Option<Self> {
        (row < 3 && col < 3).then_some(Self { row, col })
    }

    pub fn all() -> impl Iterator<Item = GridRegion> {
        (0..9u8).map(|i| Self { row: i / 3, col: i % 3 })
    }

    pub fn from_name(name: &str) -> Option<Self> {
        REGION_NAMES.iter().position(|&n| n == name).map(|i| Self { row: i as u8 / 3, col: i as u8 % 3 })
    }

    pub fn row(&self) -> u8 {
        self.row
    }

    pub fn col(&self) -> u8 {
        self.col
    }

    /// Row-major index in `0..9`.
    pub fn index(&self) -> usize {
        self.row as usize * 3 + self.col as usize
    }

    pub fn name(&self) -> &'static str {
        REGION_NAMES[self.index()]
    }
}

impl fmt::Display for GridRegion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Grid cell (0, 1 or 2) holding coordinate `v` along an axis of length `len`.
/// Cell `c` spans `[floor(c*len/3), floor((c+1)*len/3) - 1]`.
fn cell_of(v: u32, len: u32) -> usize {
    let v = v as u64;
    let len = len as u64;
    (1..3).take_while(|&c| v >= c * len / 3).count()
}

/// The grid cell containing the most anomalous pixels; ties go to the
/// smallest row-major index.
pub fn grid_region(mask: &BinaryMask) -> Result<GridRegion, MaskError> {
    let mut counts = [0usize; 9];
    let col_of: Vec<usize> = (0..mask.width).map(|x| cell_of(x, mask.width)).collect();
    for (x, y) in mask.pixels() {
        counts[cell_of(y, mask.height) * 3 + col_of[x as usize]] += 1;
    }
    let mut best = 0;
    for i in 1..9 {
        if counts[i] > counts[best] {
            best = i;
        }
    }
    if counts[best] == 0 {
        return Err(MaskError::Empty);
    }
    Ok(GridRegion { row: best as u8 / 3, col: best as u8 % 3 })
}
