use std::path::Path;

use image::{ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::fsutil;

/// An 8-bit RGB raster stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    pixels: Vec<[u8; 3]>,
}

impl RasterImage {
    pub fn new(width: usize, height: usize, pixels: Vec<[u8; 3]>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::Shape(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        Self::new(width, height, vec![rgb; width * height])
    }

    /// Builds an image by evaluating `f(x, y)` for every pixel.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [u8; 3],
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [[u8; 3]] {
        &mut self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        self.pixels[y * self.width + x]
    }

    /// Pixel lookup with coordinates clamped to the image border.
    #[inline]
    pub fn get_clamped(&self, x: i64, y: i64) -> [u8; 3] {
        let cx = x.clamp(0, self.width as i64 - 1) as usize;
        let cy = y.clamp(0, self.height as i64 - 1) as usize;
        self.get(cx, cy)
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        self.pixels[y * self.width + x] = rgb;
    }

    /// Square crop with top-left corner `(x0, y0)`; out-of-bounds pixels
    /// replicate the nearest edge pixel.
    pub fn crop_clamped(&self, x0: i64, y0: i64, size: usize) -> RasterImage {
        let mut pixels = Vec::with_capacity(size * size);
        for dy in 0..size as i64 {
            for dx in 0..size as i64 {
                pixels.push(self.get_clamped(x0 + dx, y0 + dy));
            }
        }
        RasterImage {
            width: size,
            height: size,
            pixels,
        }
    }

    /// Bilinear resize using pixel-center alignment.
    pub fn resize_bilinear(&self, new_width: usize, new_height: usize) -> Result<RasterImage> {
        if new_width == 0 || new_height == 0 {
            return Err(Error::InvalidInput("resize target must be non-empty".into()));
        }
        if new_width == self.width && new_height == self.height {
            return Ok(self.clone());
        }
        let sx = self.width as f64 / new_width as f64;
        let sy = self.height as f64 / new_height as f64;
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        let mut pixels = Vec::with_capacity(new_width * new_height);
        for y in 0..new_height {
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, max_y);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let wy = fy - y0 as f64;
            for x in 0..new_width {
                let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, max_x);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(self.width - 1);
                let wx = fx - x0 as f64;
                let p00 = self.get(x0, y0);
                let p10 = self.get(x1, y0);
                let p01 = self.get(x0, y1);
                let p11 = self.get(x1, y1);
                let mut out = [0u8; 3];
                for c in 0..3 {
                    let top = p00[c] as f64 * (1.0 - wx) + p10[c] as f64 * wx;
                    let bottom = p01[c] as f64 * (1.0 - wx) + p11[c] as f64 * wx;
                    out[c] = (top * (1.0 - wy) + bottom * wy).round().clamp(0.0, 255.0) as u8;
                }
                pixels.push(out);
            }
        }
        RasterImage::new(new_width, new_height, pixels)
    }

    /// Reads a PNG or PPM file (any bit depth is reduced to 8-bit RGB).
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::ImageReader::open(path)
            .map_err(|e| Error::io(path, e))?
            .with_guessed_format()
            .map_err(|e| Error::io(path, e))?
            .decode()?
            .to_rgb8();
        Self::from_rgb_image(&img)
    }

    pub fn from_rgb_image(img: &RgbImage) -> Result<Self> {
        let pixels = img.pixels().map(|p| p.0).collect();
        Self::new(img.width() as usize, img.height() as usize, pixels)
    }

    pub fn to_rgb_image(&self) -> RgbImage {
        let raw: Vec<u8> = self.pixels.iter().flat_map(|p| p.iter().copied()).collect();
        RgbImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("pixel buffer matches dimensions")
    }

    /// Writes the image; the format follows the extension (`.ppm` or PNG).
    pub fn save(&self, path: &Path) -> Result<()> {
        let format = match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("ppm") => ImageFormat::Pnm,
            _ => ImageFormat::Png,
        };
        let img = self.to_rgb_image();
        fsutil::write_atomic_with(path, |tmp| {
            img.save_with_format(tmp, format).map_err(Error::from)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_dimensions() {
        assert!(RasterImage::new(0, 3, vec![]).is_err());
        assert!(RasterImage::new(2, 2, vec![[0; 3]; 3]).is_err());
    }

    #[test]
    fn clamped_crop_replicates_edges() {
        let img = RasterImage::from_fn(2, 2, |x, y| [x as u8, y as u8, 0]).unwrap();
        let crop = img.crop_clamped(-1, -1, 4);
        assert_eq!(crop.get(0, 0), [0, 0, 0]);
        assert_eq!(crop.get(3, 3), [1, 1, 0]);
        assert_eq!(crop.get(2, 1), [1, 0, 0]);
    }

    #[test]
    fn resize_of_constant_is_constant() {
        let img = RasterImage::filled(5, 7, [10, 20, 30]).unwrap();
        let big = img.resize_bilinear(224, 224).unwrap();
        assert!(big.pixels().iter().all(|p| *p == [10, 20, 30]));
    }

    #[test]
    fn png_and_ppm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = RasterImage::from_fn(9, 4, |x, y| [(x * 20) as u8, (y * 50) as u8, 7]).unwrap();
        for name in ["a.png", "a.ppm"] {
            let p = dir.path().join(name);
            img.save(&p).unwrap();
            assert_eq!(RasterImage::load(&p).unwrap(), img);
        }
    }
}
