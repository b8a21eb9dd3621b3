use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::encoder::{PatchEncoder, ENCODER_INPUT_SIZE};
use crate::error::{Error, Result};
use crate::imaging::{RasterImage, SuperpixelMap};
use crate::nn::Matrix;
use crate::training::augment::PatchTransform;

/// Patch tiling used to describe each superpixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureParams {
    pub patch_size: usize,
    pub patch_stride: usize,
    /// When set, every patch receives one random geometric transform drawn
    /// from this seed before encoding.
    pub augment_seed: Option<u64>,
}

impl Default for FeatureParams {
    fn default() -> Self {
        Self {
            patch_size: 144,
            patch_stride: 144,
            augment_seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeFeatures {
    /// `|V| × d` mean patch encodings.
    pub features: Matrix,
    /// Segment centroids normalized by the image size, in `[0, 1]²`.
    pub centroids: Vec<[f64; 2]>,
}

/// Describes every segment by the mean encoding of the patches tiled over
/// its bounding box whose center pixel lies inside the segment. A segment
/// with no such patch gets one patch centered on its centroid. Patches are
/// edge-clamped and resized to the encoder input size.
pub fn extract_node_features(
    img: &RasterImage,
    sp: &SuperpixelMap,
    encoder: &dyn PatchEncoder,
    params: &FeatureParams,
) -> Result<NodeFeatures> {
    if img.width() != sp.width() || img.height() != sp.height() {
        return Err(Error::Shape("image and superpixel map sizes differ".into()));
    }
    if params.patch_size == 0 || params.patch_stride == 0 {
        return Err(Error::InvalidInput("patch size and stride must be positive".into()));
    }
    let (w, h) = (sp.width(), sp.height());
    let n = sp.num_segments();
    let d = encoder.dim();
    let size = params.patch_size;
    let half = size / 2;

    let mut bbox = vec![[usize::MAX, usize::MAX, 0usize, 0usize]; n];
    let mut sums = vec![[0.0f64; 3]; n];
    for y in 0..h {
        for x in 0..w {
            let l = sp.label(x, y);
            let b = &mut bbox[l];
            b[0] = b[0].min(x);
            b[1] = b[1].min(y);
            b[2] = b[2].max(x);
            b[3] = b[3].max(y);
            let s = &mut sums[l];
            s[0] += x as f64 + 0.5;
            s[1] += y as f64 + 0.5;
            s[2] += 1.0;
        }
    }
    let centroids: Vec<[f64; 2]> = sums
        .iter()
        .map(|s| [s[0] / s[2] / w as f64, s[1] / s[2] / h as f64])
        .collect();

    let mut rng = params.augment_seed.map(ChaCha8Rng::seed_from_u64);
    let mut features = Matrix::zeros(n, d);
    for seg in 0..n {
        let [x0, y0, x1, y1] = bbox[seg];
        let mut corners = Vec::new();
        let mut ty = y0;
        while ty <= y1 {
            let mut tx = x0;
            while tx <= x1 {
                let (cx, cy) = (tx + half, ty + half);
                if cx < w && cy < h && sp.label(cx, cy) == seg {
                    corners.push((tx as i64, ty as i64));
                }
                tx += params.patch_stride;
            }
            ty += params.patch_stride;
        }
        if corners.is_empty() {
            let cx = (centroids[seg][0] * w as f64).floor() as i64;
            let cy = (centroids[seg][1] * h as f64).floor() as i64;
            corners.push((cx - half as i64, cy - half as i64));
        }
        let row = features.row_mut(seg);
        for &(tx, ty) in &corners {
            let mut patch = img.crop_clamped(tx, ty, size);
            if let Some(rng) = rng.as_mut() {
                patch = PatchTransform::sample(rng).apply(&patch)?;
            }
            let patch = patch.resize_bilinear(ENCODER_INPUT_SIZE, ENCODER_INPUT_SIZE)?;
            let code = encoder.encode(&patch)?;
            if code.len() != d {
                return Err(Error::Shape(format!(
                    "encoder declared dimension {d} but produced {}",
                    code.len()
                )));
            }
            for (r, v) in row.iter_mut().zip(&code) {
                *r += v;
            }
        }
        let k = corners.len() as f64;
        for r in row.iter_mut() {
            *r /= k;
        }
    }
    if !features.is_finite() {
        return Err(Error::Numeric("encoder produced non-finite features".into()));
    }
    Ok(NodeFeatures {
        features,
        centroids,
    })
}

/// Normalized mean pixel-center position of every segment.
pub fn segment_centroids(sp: &SuperpixelMap) -> Vec<[f64; 2]> {
    let (w, h) = (sp.width(), sp.height());
    let mut sums = vec![[0.0f64; 3]; sp.num_segments()];
    for y in 0..h {
        for x in 0..w {
            let s = &mut sums[sp.label(x, y)];
            s[0] += x as f64 + 0.5;
            s[1] += y as f64 + 0.5;
            s[2] += 1.0;
        }
    }
    sums.iter()
        .map(|s| [s[0] / s[2] / w as f64, s[1] / s[2] / h as f64])
        .collect()
}
