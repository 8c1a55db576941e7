//! 16-bit grayscale rasters and the ROI patches cut from them.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::RoiName;

/// Largest intensity representable by a 14-bit detector.
pub const MAX_INTENSITY: u16 = 16383;

/// Row-major 16-bit grayscale image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image16 {
    width: usize,
    height: usize,
    data: Vec<u16>,
}

impl Image16 {
    pub fn new(width: usize, height: usize, data: Vec<u16>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter("image must be non-empty".into()));
        }
        if data.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                got: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: u16) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: u16) {
        self.data[y * self.width + x] = value;
    }

    /// Bilinear interpolation at a real-valued position. The caller guarantees
    /// the position lies within `[0, width-1] x [0, height-1]`.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = (x.floor() as usize).min(self.width.saturating_sub(2));
        let y0 = (y.floor() as usize).min(self.height.saturating_sub(2));
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let p00 = f64::from(self.get(x0, y0));
        let p10 = f64::from(self.get(x1, y0));
        let p01 = f64::from(self.get(x0, y1));
        let p11 = f64::from(self.get(x1, y1));
        let top = p00 + (p10 - p00) * fx;
        let bottom = p01 + (p11 - p01) * fx;
        top + (bottom - top) * fy
    }

    /// Reflect about the vertical midline: x' = (W - 1) - x.
    pub fn mirrored(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks_exact(self.width) {
            data.extend(row.iter().rev());
        }
        Self {
            width: self.width,
            height: self.height,
            data,
        }
    }

    /// Load a 16-bit binary PGM (P5) or 16-bit grayscale PNG, chosen by the
    /// file's magic bytes.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.starts_with(b"P5") {
            decode_pgm(&bytes).map_err(|message| Error::ImageFormat {
                path: path.to_owned(),
                message,
            })
        } else if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
            decode_png(&bytes).map_err(|message| Error::ImageFormat {
                path: path.to_owned(),
                message,
            })
        } else {
            Err(Error::ImageFormat {
                path: path.to_owned(),
                message: "unrecognized format (expected P5 PGM or PNG)".into(),
            })
        }
    }

    /// Write as binary PGM with maxval 16383.
    pub fn save_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = Vec::with_capacity(self.data.len() * 2 + 32);
        write!(out, "P5\n{} {}\n{}\n", self.width, self.height, MAX_INTENSITY)
            .expect("writing to a Vec cannot fail");
        for &v in &self.data {
            out.extend_from_slice(&v.to_be_bytes());
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

fn decode_pgm(bytes: &[u8]) -> std::result::Result<Image16, String> {
    // Header: magic, width, height, maxval, separated by whitespace with
    // optional `#` comments, then exactly one whitespace byte.
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err("truncated header".into()),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        if start == pos {
            return Err("malformed header".into());
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or("malformed header number")?;
    }
    let [width, height, maxval] = fields;
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err("missing whitespace after header".into());
    }
    pos += 1;
    if maxval == 0 || maxval > usize::from(MAX_INTENSITY) {
        return Err(format!("maxval {maxval} outside 1..={MAX_INTENSITY}"));
    }
    let n = width * height;
    let pixels = &bytes[pos..];
    let data: Vec<u16> = if maxval < 256 {
        if pixels.len() < n {
            return Err("truncated pixel data".into());
        }
        pixels[..n].iter().map(|&b| u16::from(b)).collect()
    } else {
        if pixels.len() < 2 * n {
            return Err("truncated pixel data".into());
        }
        pixels[..2 * n]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    };
    if let Some(v) = data.iter().find(|&&v| usize::from(v) > maxval) {
        return Err(format!("pixel value {v} exceeds maxval {maxval}"));
    }
    Image16::new(width, height, data).map_err(|e| e.to_string())
}

fn decode_png(bytes: &[u8]) -> std::result::Result<Image16, String> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| e.to_string())?;
    let gray = match img {
        image::DynamicImage::ImageLuma16(g) => g,
        image::DynamicImage::ImageLuma8(g) => image::DynamicImage::ImageLuma8(g).to_luma16(),
        other => {
            return Err(format!(
                "expected grayscale PNG, found {:?}",
                other.color()
            ))
        }
    };
    let (w, h) = gray.dimensions();
    let data = gray.into_raw();
    if let Some(v) = data.iter().find(|&&v| v > MAX_INTENSITY) {
        return Err(format!("pixel value {v} exceeds 14-bit range"));
    }
    Image16::new(w as usize, h as usize, data).map_err(|e| e.to_string())
}

/// Resampled intensities of one ROI, row-major, values in `0..=16383`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Patch {
    width: usize,
    height: usize,
    pixels: Vec<u16>,
    roi: Option<RoiName>,
}

impl Patch {
    pub fn new(width: usize, height: usize, pixels: Vec<u16>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter("patch must be non-empty".into()));
        }
        if pixels.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                got: pixels.len(),
            });
        }
        if let Some(v) = pixels.iter().find(|&&v| v > MAX_INTENSITY) {
            return Err(Error::InvalidParameter(format!(
                "intensity {v} outside 14-bit range"
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
            roi: None,
        })
    }

    pub fn with_roi(mut self, roi: RoiName) -> Self {
        self.roi = Some(roi);
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u16] {
        &self.pixels
    }

    pub fn roi(&self) -> Option<RoiName> {
        self.roi
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.pixels[y * self.width + x]
    }

    /// Copy of the central `w x h` window.
    pub fn center_crop(&self, w: usize, h: usize) -> Result<Self> {
        if w == 0 || h == 0 || w > self.width || h > self.height {
            return Err(Error::InvalidParameter(format!(
                "crop {w}x{h} does not fit in {}x{}",
                self.width, self.height
            )));
        }
        let x0 = (self.width - w) / 2;
        let y0 = (self.height - h) / 2;
        let mut pixels = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            pixels.extend_from_slice(&self.pixels[y * self.width + x0..y * self.width + x0 + w]);
        }
        Ok(Self {
            width: w,
            height: h,
            pixels,
            roi: self.roi,
        })
    }
}
