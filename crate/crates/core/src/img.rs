//! Float RGB images with binary PPM (P6) and optional PNG output.
//!
//! Metrics always consume the in-memory float images; the 8-bit files
//! are for viewing only.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// RGB image, interleaved f32 in [0, 1], row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Image {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn pixel(&self, i: usize, j: usize) -> [f32; 3] {
        let o = (j * self.width + i) * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    pub fn set_pixel(&mut self, i: usize, j: usize, rgb: [f32; 3]) {
        let o = (j * self.width + i) * 3;
        self.data[o..o + 3].copy_from_slice(&rgb);
    }

    fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    /// Binary PPM (P6, 8-bit).
    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        write!(f, "P6\n{} {}\n255\n", self.width, self.height)?;
        f.write_all(&self.to_rgb8())?;
        Ok(())
    }

    pub fn read_ppm(path: &Path) -> Result<Image> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        // header: P6 <w> <h> <max> single-whitespace separated
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 4 && pos < bytes.len() {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| {
                Error::Corrupt("ppm header not ascii".into())
            })?);
        }
        if fields.len() != 4 || fields[0] != "P6" || fields[3] != "255" {
            return Err(Error::Corrupt("not an 8-bit P6 ppm".into()));
        }
        let width: usize = fields[1].parse().map_err(|_| Error::Corrupt("ppm width".into()))?;
        let height: usize = fields[2].parse().map_err(|_| Error::Corrupt("ppm height".into()))?;
        pos += 1; // single whitespace after maxval
        let need = width * height * 3;
        if bytes.len() < pos + need {
            return Err(Error::Corrupt("ppm truncated".into()));
        }
        let data = bytes[pos..pos + need]
            .iter()
            .map(|&b| b as f32 / 255.0)
            .collect();
        Ok(Image {
            width,
            height,
            data,
        })
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        image::save_buffer(
            path,
            &self.to_rgb8(),
            self.width as u32,
            self.height as u32,
            image::ColorType::Rgb8,
        )
        .map_err(|e| Error::Corrupt(format!("png write: {e}")))
    }
}
