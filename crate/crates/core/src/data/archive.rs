use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const ARCHIVE_MAGIC: &[u8; 4] = b"NWQ1";
pub const ARCHIVE_HEADER_LEN: usize = 24;

/// A contiguous sequence of precipitation frames in mm per step.
#[derive(Clone, Debug, PartialEq)]
pub struct Archive {
    n_frames: usize,
    height: usize,
    width: usize,
    steps_per_hour: u32,
    values: Vec<f32>,
}

impl Archive {
    pub fn new(n_frames: usize, height: usize, width: usize, steps_per_hour: u32, values: Vec<f32>) -> Result<Self> {
        let expected = n_frames
            .checked_mul(height)
            .and_then(|v| v.checked_mul(width))
            .ok_or_else(|| Error::dim("archive size overflows"))?;
        if values.len() != expected {
            return Err(Error::dim(format!(
                "{} values for {n_frames} frames of {height}x{width}",
                values.len()
            )));
        }
        if steps_per_hour == 0 {
            return Err(Error::config("steps_per_hour must be at least 1"));
        }
        if let Some(i) = values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Data(format!("value {} at index {i} is negative or not finite", values[i])));
        }
        Ok(Self { n_frames, height, width, steps_per_hour, values })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn steps_per_hour(&self) -> u32 {
        self.steps_per_hour
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        self.frames(t, 1)
    }

    /// `count` consecutive frames starting at `start`, flattened.
    pub fn frames(&self, start: usize, count: usize) -> &[f32] {
        let p = self.frame_len();
        &self.values[start * p..(start + count) * p]
    }

    /// Serialises to the NWQ1 layout: magic, u32 frame count, height, width,
    /// steps per hour, a reserved zero word, then little-endian f32 values.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(ARCHIVE_HEADER_LEN + 4 * self.values.len());
        out.extend_from_slice(ARCHIVE_MAGIC);
        for v in [self.n_frames, self.height, self.width] {
            let v = u32::try_from(v).map_err(|_| Error::dim(format!("dimension {v} does not fit in u32")))?;
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.steps_per_hour.to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != ARCHIVE_MAGIC {
            return Err(Error::format(0, "bad magic, expected NWQ1"));
        }
        if bytes.len() < ARCHIVE_HEADER_LEN {
            return Err(Error::format(bytes.len() as u64, "truncated header"));
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"));
        let (n, h, w, sph, reserved) = (word(4), word(8), word(12), word(16), word(20));
        if sph == 0 {
            return Err(Error::format(16, "steps_per_hour must be at least 1"));
        }
        if reserved != 0 {
            return Err(Error::format(20, format!("reserved word is {reserved}, expected 0")));
        }
        let payload = (n as u64)
            .checked_mul(h as u64)
            .and_then(|v| v.checked_mul(w as u64))
            .and_then(|v| v.checked_mul(4))
            .filter(|&v| v <= usize::MAX as u64 - ARCHIVE_HEADER_LEN as u64)
            .ok_or_else(|| Error::format(4, format!("dimensions {n}x{h}x{w} overflow")))?;
        let expected = ARCHIVE_HEADER_LEN as u64 + payload;
        let actual = bytes.len() as u64;
        if actual < expected {
            return Err(Error::format(actual, format!("payload truncated: header declares {expected} bytes, file has {actual}")));
        }
        if actual > expected {
            return Err(Error::format(expected, format!("{} trailing bytes after payload", actual - expected)));
        }
        let mut values = Vec::with_capacity((payload / 4) as usize);
        for (i, chunk) in bytes[ARCHIVE_HEADER_LEN..].chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
            if !(v.is_finite() && v >= 0.0) {
                let offset = (ARCHIVE_HEADER_LEN + 4 * i) as u64;
                return Err(Error::format(offset, format!("value {v} is negative or not finite")));
            }
            values.push(v);
        }
        Self::new(n as usize, h as usize, w as usize, sph, values)
    }
}

pub fn write_archive(archive: &Archive, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, archive.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn read_archive(path: impl AsRef<Path>) -> Result<Archive> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Archive::from_bytes(&bytes)
}
