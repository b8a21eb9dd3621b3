use std::path::Path;

use image::{GrayImage, Luma};

use super::gleason::{Pattern, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::imaging::SuperpixelMap;

/// Per-pixel class raster, row-major class indices `B=0 .. G5=3`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMask {
    width: usize,
    height: usize,
    classes: Vec<u8>,
}

impl ClassMask {
    pub fn new(width: usize, height: usize, classes: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || classes.len() != width * height {
            return Err(Error::Shape(format!(
                "mask of {}x{} with {} entries",
                width,
                height,
                classes.len()
            )));
        }
        if let Some(c) = classes.iter().find(|&&c| c as usize >= NUM_CLASSES) {
            return Err(Error::InvalidInput(format!("mask class index {c} out of range")));
        }
        Ok(Self {
            width,
            height,
            classes,
        })
    }

    pub fn filled(width: usize, height: usize, class: Pattern) -> Result<Self> {
        Self::new(width, height, vec![class as u8; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn classes(&self) -> &[u8] {
        &self.classes
    }

    pub fn get(&self, x: usize, y: usize) -> Pattern {
        Pattern::ALL[self.classes[y * self.width + x] as usize]
    }

    /// Pixel count per class.
    pub fn histogram(&self) -> [usize; NUM_CLASSES] {
        let mut h = [0; NUM_CLASSES];
        for &c in &self.classes {
            h[c as usize] += 1;
        }
        h
    }

    /// Majority class of every segment; ties go to the lower class index.
    pub fn segment_majority(&self, sp: &SuperpixelMap) -> Result<Vec<Pattern>> {
        if sp.width() != self.width || sp.height() != self.height {
            return Err(Error::Shape("mask and superpixel map sizes differ".into()));
        }
        let mut counts = vec![[0usize; NUM_CLASSES]; sp.num_segments()];
        for (l, &c) in sp.labels().iter().zip(&self.classes) {
            counts[*l as usize][c as usize] += 1;
        }
        Ok(counts
            .iter()
            .map(|h| {
                let mut best = 0;
                for c in 1..NUM_CLASSES {
                    if h[c] > h[best] {
                        best = c;
                    }
                }
                Pattern::ALL[best]
            })
            .collect())
    }

    /// Writes an 8-bit single-channel PNG of class indices.
    pub fn save(&self, path: &Path) -> Result<()> {
        let img = GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            Luma([self.classes[y as usize * self.width + x as usize]])
        });
        fsutil::write_atomic_with(path, |tmp| {
            img.save_with_format(tmp, image::ImageFormat::Png)?;
            Ok(())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Image(other),
        })?;
        if img.color() != image::ColorType::L8 {
            return Err(Error::format(
                "mask",
                format!("{} is not an 8-bit single-channel image", path.display()),
            ));
        }
        let g = img.into_luma8();
        let (w, h) = (g.width() as usize, g.height() as usize);
        Self::new(w, h, g.into_raw()).map_err(|e| {
            Error::format("mask", format!("{}: {e}", path.display()))
        })
    }
}

/// Paints every pixel with the class of its segment.
pub fn mask_from_node_labels(sp: &SuperpixelMap, classes: &[Pattern]) -> Result<ClassMask> {
    if classes.len() != sp.num_segments() {
        return Err(Error::InvalidInput(format!(
            "{} node classes for {} segments",
            classes.len(),
            sp.num_segments()
        )));
    }
    let raster = sp.labels().iter().map(|&l| classes[l as usize] as u8).collect();
    ClassMask::new(sp.width(), sp.height(), raster)
}
