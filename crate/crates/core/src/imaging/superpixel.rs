use std::collections::VecDeque;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma};

use crate::error::{Error, Result};
use crate::fsutil;

/// A partition of an image into labelled, 4-connected segments.
///
/// Labels are always exactly `0..num_segments` and each label's pixel set is
/// 4-connected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuperpixelMap {
    width: usize,
    height: usize,
    labels: Vec<u32>,
    num_segments: usize,
}

impl SuperpixelMap {
    /// Validates a raw label raster.
    pub fn new(width: usize, height: usize, labels: Vec<u32>) -> Result<Self> {
        if width == 0 || height == 0 || labels.len() != width * height {
            return Err(Error::Shape(format!(
                "{} labels for a {width}x{height} map",
                labels.len()
            )));
        }
        let num_segments = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
        let mut seen = vec![false; num_segments];
        for &l in &labels {
            seen[l as usize] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidInput(format!(
                "superpixel labels are not contiguous: label {missing} is absent"
            )));
        }
        let map = Self {
            width,
            height,
            labels,
            num_segments,
        };
        let components = connected_components(width, height, &map.labels);
        if components.count != num_segments {
            return Err(Error::InvalidInput(
                "every superpixel must be a single 4-connected region".into(),
            ));
        }
        Ok(map)
    }

    /// Relabels arbitrary region ids to `0..n` in order of first appearance
    /// (row-major), splitting any disconnected label into separate segments.
    pub fn from_regions(width: usize, height: usize, regions: &[u32]) -> Result<Self> {
        if width == 0 || height == 0 || regions.len() != width * height {
            return Err(Error::Shape(format!(
                "{} labels for a {width}x{height} map",
                regions.len()
            )));
        }
        let comps = connected_components(width, height, regions);
        Ok(Self {
            width,
            height,
            labels: comps.labels,
            num_segments: comps.count,
        })
    }

    /// A map with a single segment covering the image.
    pub fn single(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            labels: vec![0; width * height],
            num_segments: 1,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_segments(&self) -> usize {
        self.num_segments
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    #[inline]
    pub fn label(&self, x: usize, y: usize) -> usize {
        self.labels[y * self.width + x] as usize
    }

    /// Pixel indices (row-major) of every segment, in ascending order.
    pub fn segment_pixels(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_segments];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l as usize].push(i);
        }
        out
    }

    pub fn areas(&self) -> Vec<usize> {
        let mut out = vec![0; self.num_segments];
        for &l in &self.labels {
            out[l as usize] += 1;
        }
        out
    }

    /// Writes the labels as a 16-bit grayscale PNG plus a text sidecar
    /// (`<path>.txt`) recording `num_segments`.
    pub fn save(&self, path: &Path) -> Result<()> {
        if self.num_segments > u16::MAX as usize + 1 {
            return Err(Error::InvalidInput(format!(
                "{} segments do not fit a 16-bit label image",
                self.num_segments
            )));
        }
        let raw: Vec<u16> = self.labels.iter().map(|&l| l as u16).collect();
        let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
            ImageBuffer::from_raw(self.width as u32, self.height as u32, raw)
                .expect("label buffer matches dimensions");
        fsutil::write_atomic_with(path, |tmp| {
            buf.save_with_format(tmp, image::ImageFormat::Png)
                .map_err(Error::from)
        })?;
        let header = format!("num_segments {}\n", self.num_segments);
        fsutil::write_atomic(&sidecar_path(path), header.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let header = fsutil::read_to_string(&sidecar_path(path))?;
        let declared: usize = header
            .split_whitespace()
            .collect::<Vec<_>>()
            .as_slice()
            .windows(2)
            .find(|w| w[0] == "num_segments")
            .and_then(|w| w[1].parse().ok())
            .ok_or_else(|| Error::format("superpixel header", "missing num_segments"))?;
        let img = image::ImageReader::open(path)
            .map_err(|e| Error::io(path, e))?
            .decode()?
            .to_luma16();
        let labels = img.pixels().map(|p| p.0[0] as u32).collect();
        let map = Self::new(img.width() as usize, img.height() as usize, labels)?;
        if map.num_segments != declared {
            return Err(Error::format(
                "superpixel header",
                format!(
                    "header declares {declared} segments, raster has {}",
                    map.num_segments
                ),
            ));
        }
        Ok(map)
    }
}

pub(crate) fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".txt");
    path.with_file_name(name)
}

pub(crate) struct Components {
    pub labels: Vec<u32>,
    pub count: usize,
}

/// 4-connected components of equal-valued pixels, numbered in order of
/// first appearance.
pub(crate) fn connected_components(width: usize, height: usize, values: &[u32]) -> Components {
    const UNSET: u32 = u32::MAX;
    let mut labels = vec![UNSET; values.len()];
    let mut count = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..values.len() {
        if labels[start] != UNSET {
            continue;
        }
        let v = values[start];
        labels[start] = count;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let x = i % width;
            let y = i / width;
            let mut visit = |j: usize| {
                if labels[j] == UNSET && values[j] == v {
                    labels[j] = count;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < width {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - width);
            }
            if y + 1 < height {
                visit(i + width);
            }
        }
        count += 1;
    }
    Components {
        labels,
        count: count as usize,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_gaps_and_disconnected_labels() {
        assert!(SuperpixelMap::new(2, 1, vec![0, 2]).is_err());
        assert!(SuperpixelMap::new(3, 1, vec![0, 1, 0]).is_err());
        assert!(SuperpixelMap::new(3, 1, vec![0, 1, 1]).is_ok());
    }

    #[test]
    fn from_regions_splits_and_compacts() {
        let m = SuperpixelMap::from_regions(3, 1, &[7, 3, 7]).unwrap();
        assert_eq!(m.labels(), &[0, 1, 2]);
        assert_eq!(m.num_segments(), 3);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sp.png");
        let m = SuperpixelMap::new(3, 2, vec![0, 0, 1, 2, 2, 1]).unwrap();
        m.save(&p).unwrap();
        assert_eq!(SuperpixelMap::load(&p).unwrap(), m);
        std::fs::write(sidecar_path(&p), "num_segments 5\n").unwrap();
        assert!(SuperpixelMap::load(&p).is_err());
    }
}
