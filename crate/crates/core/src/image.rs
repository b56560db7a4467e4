//! In-memory RGB rasters and binary PPM ("P6") I/O.
//!
//! Channel values live in [0,1]. PPM is the only image format the tools read
//! or write: 8-bit "P6", bytes mapped to [0,1] by division by 255 on read and
//! by `round(v * 255)` on write.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// H×W×3 raster, row-major, channels interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    /// Builds an image from interleaved RGB data, validating range and finiteness.
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidImage("zero-sized image".into()));
        }
        if data.len() != height * width * 3 {
            return Err(Error::InvalidImage(format!(
                "expected {} values for {}x{}x3, got {}",
                height * width * 3,
                height,
                width,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::InvalidImage(format!("value {v} outside [0,1]")));
        }
        Ok(Self { height, width, data })
    }

    /// Constant-filled image.
    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            data.extend_from_slice(&rgb);
        }
        Self::new(height, width, data)
    }

    /// Builds an image by evaluating `f(y, x) -> rgb` at every pixel.
    pub fn from_fn<F: Fn(usize, usize) -> [f32; 3]>(height: usize, width: usize, f: F) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(y, x));
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let base = (y * self.width + x) * 3;
        [self.data[base], self.data[base + 1], self.data[base + 2]]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Raw mutable access for in-place filters. Callers must keep values in [0,1].
    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    /// Mean squared pixel difference against another image of the same shape.
    pub fn mse(&self, other: &ImageTensor) -> Result<f64> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::DimensionMismatch(format!(
                "mse over {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| {
                let d = (*a - *b) as f64;
                d * d
            })
            .sum();
        Ok(sum / self.data.len() as f64)
    }

    /// Reads an 8-bit binary PPM ("P6").
    pub fn read_ppm(path: &Path) -> Result<Self> {
        let mut reader = BufReader::new(File::open(path)?);
        let magic = read_ppm_token(&mut reader)?;
        if magic != "P6" {
            return Err(Error::Format(format!("not a P6 ppm: magic {magic:?}")));
        }
        let width: usize = parse_ppm_number(&read_ppm_token(&mut reader)?)?;
        let height: usize = parse_ppm_number(&read_ppm_token(&mut reader)?)?;
        let maxval: usize = parse_ppm_number(&read_ppm_token(&mut reader)?)?;
        if maxval != 255 {
            return Err(Error::Format(format!("unsupported ppm maxval {maxval}, expected 255")));
        }
        let mut raw = vec![0u8; width * height * 3];
        reader.read_exact(&mut raw)?;
        let data = raw.iter().map(|b| *b as f32 / 255.0).collect();
        Self::new(height, width, data)
    }

    /// Writes an 8-bit binary PPM ("P6").
    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        let mut writer = BufWriter::new(File::create(path)?);
        write!(writer, "P6\n{} {}\n255\n", self.width, self.height)?;
        let raw: Vec<u8> = self
            .data
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        writer.write_all(&raw)?;
        writer.flush()?;
        Ok(())
    }
}

/// Reads one whitespace-delimited header token, skipping `#` comments.
fn read_ppm_token<R: BufRead>(reader: &mut R) -> Result<String> {
    let mut token = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        if reader.read(&mut byte)? == 0 {
            if token.is_empty() {
                return Err(Error::Format("truncated ppm header".into()));
            }
            break;
        }
        let b = byte[0];
        if b == b'#' && token.is_empty() {
            let mut comment = String::new();
            reader.read_line(&mut comment)?;
            continue;
        }
        if b.is_ascii_whitespace() {
            if token.is_empty() {
                continue;
            }
            break;
        }
        token.push(b);
    }
    Ok(String::from_utf8_lossy(&token).into_owned())
}

fn parse_ppm_number(token: &str) -> Result<usize> {
    token
        .parse()
        .map_err(|_| Error::Format(format!("bad ppm header field {token:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_values() {
        let err = ImageTensor::new(1, 1, vec![0.0, 0.5, 1.5]);
        assert!(matches!(err, Err(Error::InvalidImage(_))));
        let err = ImageTensor::new(1, 1, vec![0.0, f32::NAN, 0.5]);
        assert!(matches!(err, Err(Error::InvalidImage(_))));
    }

    #[test]
    fn rejects_wrong_length() {
        assert!(ImageTensor::new(2, 2, vec![0.0; 11]).is_err());
    }

    #[test]
    fn ppm_round_trip_is_exact_on_byte_grid() {
        let img = ImageTensor::from_fn(3, 5, |y, x| {
            [
                (y * 5 + x) as f32 / 255.0,
                ((y * 5 + x) * 7 % 256) as f32 / 255.0,
                1.0 - (x as f32 / 255.0),
            ]
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ppm");
        img.write_ppm(&path).unwrap();
        let back = ImageTensor::read_ppm(&path).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn ppm_header_comments_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ppm");
        std::fs::write(&path, b"P6\n# a comment\n2 1\n255\n\x00\x7f\xff\x01\x02\x03").unwrap();
        let img = ImageTensor::read_ppm(&path).unwrap();
        assert_eq!(img.width(), 2);
        assert_eq!(img.height(), 1);
        assert!((img.pixel(0, 0)[2] - 1.0).abs() < 1e-6);
    }
}
