//! Region color descriptors used to merge superpixels.
//!
//! Each RGB channel contributes 13 values: eight histogram-bin fractions over
//! `[0, 255]` in width-32 intervals, then mean, population standard deviation,
//! lower median, energy (sum of squared bin fractions), and skewness.

use super::RasterImage;
use crate::error::{Error, Result};

pub const COLOR_FEATURE_DIM: usize = 39;
const BLOCK: usize = 13;
const BINS: usize = 8;

/// Full 256-level histogram of one channel.
pub type ChannelHistogram = [u64; 256];

/// Sufficient statistics of a pixel set; merging two regions adds them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionColorStats {
    hist: [ChannelHistogram; 3],
    count: u64,
}

impl Default for RegionColorStats {
    fn default() -> Self {
        Self {
            hist: [[0; 256]; 3],
            count: 0,
        }
    }
}

impl RegionColorStats {
    pub fn from_pixels<'a>(pixels: impl IntoIterator<Item = &'a [u8; 3]>) -> Self {
        let mut s = Self::default();
        for p in pixels {
            s.push(*p);
        }
        s
    }

    pub fn push(&mut self, p: [u8; 3]) {
        for c in 0..3 {
            self.hist[c][p[c] as usize] += 1;
        }
        self.count += 1;
    }

    pub fn absorb(&mut self, other: &RegionColorStats) {
        for c in 0..3 {
            for v in 0..256 {
                self.hist[c][v] += other.hist[c][v];
            }
        }
        self.count += other.count;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn features(&self) -> Result<ColorFeatureVector> {
        if self.count == 0 {
            return Err(Error::InvalidInput("color features of an empty region".into()));
        }
        let n = self.count as f64;
        let mut out = [0.0; COLOR_FEATURE_DIM];
        for c in 0..3 {
            let h = &self.hist[c];
            let block = &mut out[c * BLOCK..(c + 1) * BLOCK];
            for (v, &k) in h.iter().enumerate() {
                block[v / 32] += k as f64;
            }
            for b in block.iter_mut().take(BINS) {
                *b /= n;
            }
            let mean = h
                .iter()
                .enumerate()
                .map(|(v, &k)| v as f64 * k as f64)
                .sum::<f64>()
                / n;
            let (mut m2, mut m3) = (0.0, 0.0);
            for (v, &k) in h.iter().enumerate() {
                if k > 0 {
                    let d = v as f64 - mean;
                    m2 += k as f64 * d * d;
                    m3 += k as f64 * d * d * d;
                }
            }
            m2 /= n;
            m3 /= n;
            let std = m2.sqrt();
            // lower of the two middle values for even counts
            let rank = (self.count - 1) / 2;
            let mut seen = 0u64;
            let mut median = 0.0;
            for (v, &k) in h.iter().enumerate() {
                seen += k;
                if seen > rank {
                    median = v as f64;
                    break;
                }
            }
            let energy = block[..BINS].iter().map(|f| f * f).sum::<f64>();
            let skewness = if std > 0.0 { m3 / (std * std * std) } else { 0.0 };
            block[8] = mean;
            block[9] = std;
            block[10] = median;
            block[11] = energy;
            block[12] = skewness;
        }
        Ok(ColorFeatureVector(out))
    }
}

/// The 39-value color descriptor of a region, ordered R block, G block, B block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorFeatureVector(pub [f64; COLOR_FEATURE_DIM]);

impl ColorFeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn histogram(&self, channel: usize) -> &[f64] {
        &self.0[channel * BLOCK..channel * BLOCK + BINS]
    }

    pub fn mean(&self, channel: usize) -> f64 {
        self.0[channel * BLOCK + 8]
    }

    pub fn std(&self, channel: usize) -> f64 {
        self.0[channel * BLOCK + 9]
    }

    pub fn median(&self, channel: usize) -> f64 {
        self.0[channel * BLOCK + 10]
    }

    pub fn energy(&self, channel: usize) -> f64 {
        self.0[channel * BLOCK + 11]
    }

    pub fn skewness(&self, channel: usize) -> f64 {
        self.0[channel * BLOCK + 12]
    }

    /// Rescaled copy used for merge distances: histogram fractions and
    /// energy as-is, mean/std/median divided by 255, skewness clamped to
    /// `[-3, 3]` and divided by 3.
    pub fn scaled(&self) -> [f64; COLOR_FEATURE_DIM] {
        let mut out = self.0;
        for c in 0..3 {
            let b = c * BLOCK;
            for k in 8..=10 {
                out[b + k] /= 255.0;
            }
            out[b + 12] = out[b + 12].clamp(-3.0, 3.0) / 3.0;
        }
        out
    }
}

/// Color descriptor of the pixels at `region` (row-major indices into `img`).
pub fn region_color_features(img: &RasterImage, region: &[usize]) -> Result<ColorFeatureVector> {
    if region.is_empty() {
        return Err(Error::InvalidInput("color features of an empty region".into()));
    }
    let px = img.pixels();
    if let Some(&bad) = region.iter().find(|&&i| i >= px.len()) {
        return Err(Error::InvalidInput(format!(
            "pixel index {bad} outside a {}-pixel image",
            px.len()
        )));
    }
    RegionColorStats::from_pixels(region.iter().map(|&i| &px[i])).features()
}
