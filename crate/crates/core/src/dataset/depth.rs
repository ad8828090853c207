//! Depth images and the `.cdpt` file format.
//!
//! Layout (little-endian): magic `CDPT`, `u32` version (= 1), `u32` width,
//! `u32` height, then `width * height` `f32` depths in meters, row-major from
//! the top-left pixel. Values `<= 0` or NaN mark invalid pixels.

use std::io::{Read, Write};

use super::DatasetError;

pub const MAGIC: &[u8; 4] = b"CDPT";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

/// A row-major depth image in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    width: u32,
    height: u32,
    data: Vec<f32>,
}

impl DepthImage {
    pub fn new(width: u32, height: u32, data: Vec<f32>) -> Result<Self, DatasetError> {
        if data.len() != width as usize * height as usize {
            return Err(DatasetError::Invalid(format!(
                "depth buffer has {} values, expected {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: u32, height: u32, value: f32) -> Self {
        Self { width, height, data: vec![value; width as usize * height as usize] }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn get(&self, col: u32, row: u32) -> f32 {
        self.data[row as usize * self.width as usize + col as usize]
    }

    pub fn set(&mut self, col: u32, row: u32, value: f32) {
        let w = self.width as usize;
        self.data[row as usize * w + col as usize] = value;
    }

    /// Depth at `(col, row)` if it is a valid measurement.
    pub fn valid(&self, col: u32, row: u32) -> Option<f32> {
        let d = self.get(col, row);
        is_valid_depth(d).then_some(d)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        for d in &self.data {
            out.extend_from_slice(&d.to_le_bytes());
        }
        out
    }

    /// Decodes a `.cdpt` buffer. The error string names the defect.
    pub fn decode(bytes: &[u8]) -> Result<Self, String> {
        if bytes.len() < HEADER_LEN {
            return Err(format!("truncated header ({} bytes)", bytes.len()));
        }
        if &bytes[0..4] != MAGIC {
            return Err("bad magic, expected CDPT".into());
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let version = word(4);
        if version != VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let (width, height) = (word(8), word(12));
        let n = width as usize * height as usize;
        let body = &bytes[HEADER_LEN..];
        if body.len() != 4 * n {
            return Err(format!("expected {} bytes of depth for {width}x{height}, found {}", 4 * n, body.len()));
        }
        let data = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Self { width, height, data })
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(&self.encode())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, String> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf).map_err(|e| e.to_string())?;
        Self::decode(&buf)
    }
}

pub fn is_valid_depth(d: f32) -> bool {
    d > 0.0 && d.is_finite()
}
