//! 8-bit RGB raster buffers and their PNG / JPEG / PPM I/O.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use image::imageops::{self, FilterType};
use image::{ImageFormat, ImageReader, RgbImage};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("raster dimensions must be at least 1x1, got {width}x{height}")]
    EmptyDimensions { width: u32, height: u32 },
    #[error("pixel buffer has {actual} bytes, expected {expected}")]
    BufferSize { expected: usize, actual: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Codec { path: String, message: String },
}

/// RGBA color; `a` is the blend weight out of 255.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Color {
    pub r: u8,
    pub g: u8,
    pub b: u8,
    pub a: u8,
}

impl Color {
    pub const fn new(r: u8, g: u8, b: u8, a: u8) -> Self {
        Color { r, g, b, a }
    }

    pub const fn rgb(&self) -> [u8; 3] {
        [self.r, self.g, self.b]
    }
}

/// Row-major RGB image, 3 bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Raster {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl Raster {
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::EmptyDimensions { width, height });
        }
        let data = rgb
            .iter()
            .copied()
            .cycle()
            .take(3 * width as usize * height as usize)
            .collect();
        Ok(Raster { width, height, data })
    }

    pub fn from_rgb(width: u32, height: u32, data: Vec<u8>) -> Result<Self, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::EmptyDimensions { width, height });
        }
        let expected = 3 * width as usize * height as usize;
        if data.len() != expected {
            return Err(RasterError::BufferSize { expected, actual: data.len() });
        }
        Ok(Raster { width, height, data })
    }

    /// Build a raster by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(
        width: u32,
        height: u32,
        mut f: impl FnMut(u32, u32) -> [u8; 3],
    ) -> Result<Self, RasterError> {
        let mut r = Raster::filled(width, height, [0; 3])?;
        for y in 0..height {
            for x in 0..width {
                r.set_pixel(x, y, f(x, y));
            }
        }
        Ok(r)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub(crate) fn offset(&self, x: u32, y: u32) -> usize {
        3 * (y as usize * self.width as usize + x as usize)
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = self.offset(x, y);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = self.offset(x, y);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub(crate) fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn from_image(img: RgbImage) -> Result<Self, RasterError> {
        let (w, h) = img.dimensions();
        Raster::from_rgb(w, h, img.into_raw())
    }

    pub fn to_image(&self) -> RgbImage {
        RgbImage::from_raw(self.width, self.height, self.data.clone())
            .expect("raster buffer length matches its dimensions")
    }

    /// Decode a PNG, JPEG or binary PPM file; format is sniffed from content.
    pub fn load(path: &Path) -> Result<Self, RasterError> {
        let codec = |e: image::ImageError| RasterError::Codec {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        let reader = ImageReader::open(path)
            .map_err(|source| RasterError::Io { path: path.display().to_string(), source })?
            .with_guessed_format()
            .map_err(|source| RasterError::Io { path: path.display().to_string(), source })?;
        let img = reader.decode().map_err(codec)?;
        Raster::from_image(img.to_rgb8())
    }

    pub fn save_png(&self, path: &Path) -> Result<(), RasterError> {
        self.to_image()
            .save_with_format(path, ImageFormat::Png)
            .map_err(|e| RasterError::Codec {
                path: path.display().to_string(),
                message: e.to_string(),
            })
    }

    /// Binary P6 with maxval 255.
    pub fn save_ppm(&self, path: &Path) -> Result<(), RasterError> {
        let io = |source| RasterError::Io { path: path.display().to_string(), source };
        let mut w = BufWriter::new(fs::File::create(path).map_err(io)?);
        write!(w, "P6\n{} {}\n255\n", self.width, self.height).map_err(io)?;
        w.write_all(&self.data).map_err(io)?;
        w.flush().map_err(io)
    }

    /// Save as PPM when the extension is `.ppm`, PNG otherwise.
    pub fn save(&self, path: &Path) -> Result<(), RasterError> {
        let is_ppm = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("ppm"));
        if is_ppm {
            self.save_ppm(path)
        } else {
            self.save_png(path)
        }
    }

    /// Bilinear resize of the shorter edge to `edge`, then center crop to
    /// an `edge` x `edge` square.
    pub fn resize_square(&self, edge: u32) -> Result<Self, RasterError> {
        if edge == 0 {
            return Err(RasterError::EmptyDimensions { width: 0, height: 0 });
        }
        let (w, h) = (u64::from(self.width), u64::from(self.height));
        let e = u64::from(edge);
        // Scaled long edge, rounded half up, never below the crop size.
        let (nw, nh) = if w <= h {
            (e, ((h * e * 2 + w) / (2 * w)).max(e))
        } else {
            (((w * e * 2 + h) / (2 * h)).max(e), e)
        };
        let scaled = imageops::resize(&self.to_image(), nw as u32, nh as u32, FilterType::Triangle);
        let x0 = ((nw - e) / 2) as u32;
        let y0 = ((nh - e) / 2) as u32;
        let cropped = imageops::crop_imm(&scaled, x0, y0, edge, edge).to_image();
        Raster::from_image(cropped)
    }

    /// Nearest-neighbour resample to arbitrary dimensions.
    pub fn resize_nearest(&self, width: u32, height: u32) -> Result<Self, RasterError> {
        Raster::from_fn(width, height, |x, y| {
            let sx = ((2 * u64::from(x) + 1) * u64::from(self.width) / (2 * u64::from(width))) as u32;
            let sy = ((2 * u64::from(y) + 1) * u64::from(self.height) / (2 * u64::from(height))) as u32;
            self.pixel(sx.min(self.width - 1), sy.min(self.height - 1))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_empty_and_mismatched() {
        assert!(Raster::filled(0, 3, [0; 3]).is_err());
        assert!(Raster::from_rgb(2, 2, vec![0; 11]).is_err());
    }

    #[test]
    fn png_and_ppm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let r = Raster::from_fn(5, 3, |x, y| [x as u8 * 40, y as u8 * 70, 9]).unwrap();
        for name in ["a.png", "a.ppm"] {
            let p = dir.path().join(name);
            r.save(&p).unwrap();
            assert_eq!(Raster::load(&p).unwrap(), r);
        }
        let bytes = std::fs::read(dir.path().join("a.ppm")).unwrap();
        assert!(bytes.starts_with(b"P6\n5 3\n255\n"));
    }

    #[test]
    fn corrupt_file_is_codec_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.png");
        std::fs::write(&p, b"\x89PNG\r\n\x1a\nnot really").unwrap();
        assert!(matches!(Raster::load(&p), Err(RasterError::Codec { .. })));
    }

    #[test]
    fn resize_square_crops_center() {
        let r = Raster::from_fn(200, 100, |x, _| if !(50..150).contains(&x) { [255; 3] } else { [0; 3] })
            .unwrap();
        let s = r.resize_square(64).unwrap();
        assert_eq!(s.dimensions(), (64, 64));
        // The white side bands fall outside the central crop.
        assert_eq!(s.pixel(32, 32), [0, 0, 0]);
        assert!(s.pixel(0, 10)[0] < 64);
    }

    #[test]
    fn nearest_resize_identity() {
        let r = Raster::from_fn(7, 4, |x, y| [x as u8, y as u8, 0]).unwrap();
        assert_eq!(r.resize_nearest(7, 4).unwrap(), r);
    }
}
