//! Stain normalization by per-channel statistics matching.
//!
//! Any normalizer implementing [`StainNormalizer`] can be dropped into the
//! pipeline; [`StatisticsMatcher`] maps every RGB channel to a reference mean
//! and standard deviation.

use serde::{Deserialize, Serialize};

use super::RasterImage;
use crate::error::{Error, Result};

/// Per-channel mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl ChannelStats {
    pub fn of(img: &RasterImage) -> Self {
        let n = img.len() as f64;
        let mut sum = [0.0; 3];
        for p in img.pixels() {
            for c in 0..3 {
                sum[c] += p[c] as f64;
            }
        }
        let mean = sum.map(|s| s / n);
        let mut sq = [0.0; 3];
        for p in img.pixels() {
            for c in 0..3 {
                let d = p[c] as f64 - mean[c];
                sq[c] += d * d;
            }
        }
        let std = sq.map(|s| (s / n).sqrt());
        Self { mean, std }
    }
}

pub trait StainNormalizer: Send + Sync {
    fn normalize(&self, img: &RasterImage) -> Result<RasterImage>;
}

/// Matches each channel's mean and standard deviation to a reference.
#[derive(Debug, Clone, Copy)]
pub struct StatisticsMatcher {
    reference: ChannelStats,
}

impl StatisticsMatcher {
    pub fn new(reference: ChannelStats) -> Result<Self> {
        if reference.std.iter().any(|s| !(*s > 0.0) || !s.is_finite())
            || reference.mean.iter().any(|m| !m.is_finite())
        {
            return Err(Error::InvalidInput(
                "reference standard deviations must be positive and finite".into(),
            ));
        }
        Ok(Self { reference })
    }

    pub fn reference(&self) -> ChannelStats {
        self.reference
    }
}

impl StainNormalizer for StatisticsMatcher {
    fn normalize(&self, img: &RasterImage) -> Result<RasterImage> {
        normalize_stain(img, &self.reference)
    }
}

/// Affinely maps every channel so its statistics equal `reference`, rounding
/// and clamping to `[0, 255]`. A zero-variance channel is shifted onto the
/// reference mean.
pub fn normalize_stain(img: &RasterImage, reference: &ChannelStats) -> Result<RasterImage> {
    if reference.std.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::InvalidInput(
            "reference standard deviations must be positive".into(),
        ));
    }
    let stats = ChannelStats::of(img);
    let mut scale = [1.0; 3];
    for c in 0..3 {
        if stats.std[c] > 0.0 {
            scale[c] = reference.std[c] / stats.std[c];
        }
    }
    let mut out = img.clone();
    for p in out.pixels_mut() {
        for c in 0..3 {
            let v = (p[c] as f64 - stats.mean[c]) * scale[c] + reference.mean[c];
            p[c] = v.round().clamp(0.0, 255.0) as u8;
        }
    }
    Ok(out)
}
