use crate::error::{Error, Result};
use crate::imaging::RasterImage;

/// Side length of the square patches handed to an encoder.
pub const ENCODER_INPUT_SIZE: usize = 224;
pub const DEFAULT_ENCODER_DIM: usize = 64;

/// Maps a `224 × 224` RGB patch to a fixed-length descriptor.
///
/// Implementations must be deterministic and safe for concurrent read-only
/// use.
pub trait PatchEncoder: Send + Sync {
    fn dim(&self) -> usize;
    fn encode(&self, patch: &RasterImage) -> Result<Vec<f64>>;
}

/// Handcrafted 64-dimensional descriptor: per-channel 16-bin histogram
/// fractions (48), per-channel mean and standard deviation scaled to
/// `[0, 1]` (6), and a 10-bin unsigned gradient-orientation histogram
/// weighted by gradient magnitude (10).
#[derive(Debug, Clone, Copy, Default)]
pub struct DefaultEncoder;

const HIST_BINS: usize = 16;
const ORIENT_BINS: usize = 10;

impl PatchEncoder for DefaultEncoder {
    fn dim(&self) -> usize {
        DEFAULT_ENCODER_DIM
    }

    fn encode(&self, patch: &RasterImage) -> Result<Vec<f64>> {
        if patch.width() != ENCODER_INPUT_SIZE || patch.height() != ENCODER_INPUT_SIZE {
            return Err(Error::Shape(format!(
                "encoder expects {s}x{s} patches, got {}x{}",
                patch.width(),
                patch.height(),
                s = ENCODER_INPUT_SIZE
            )));
        }
        let n = patch.len() as f64;
        let mut out = vec![0.0; DEFAULT_ENCODER_DIM];
        let mut sum = [0.0f64; 3];
        let mut sq = [0.0f64; 3];
        for p in patch.pixels() {
            for c in 0..3 {
                let v = p[c] as usize;
                out[c * HIST_BINS + v / 16] += 1.0;
                sum[c] += v as f64;
                sq[c] += (v * v) as f64;
            }
        }
        for v in out.iter_mut().take(3 * HIST_BINS) {
            *v /= n;
        }
        for c in 0..3 {
            let mean = sum[c] / n;
            let var = (sq[c] / n - mean * mean).max(0.0);
            out[48 + c] = mean / 255.0;
            out[51 + c] = var.sqrt() / 127.5;
        }

        let (w, h) = (patch.width(), patch.height());
        let gray: Vec<f64> = patch
            .pixels()
            .iter()
            .map(|p| (p[0] as f64 + p[1] as f64 + p[2] as f64) / 3.0)
            .collect();
        let at = |x: usize, y: usize| gray[y * w + x];
        let orient = &mut out[54..54 + ORIENT_BINS];
        for y in 0..h {
            for x in 0..w {
                let gx = (at((x + 1).min(w - 1), y) - at(x.saturating_sub(1), y)) / 2.0;
                let gy = (at(x, (y + 1).min(h - 1)) - at(x, y.saturating_sub(1))) / 2.0;
                let mag = (gx * gx + gy * gy).sqrt();
                if mag == 0.0 {
                    continue;
                }
                let mut theta = gy.atan2(gx);
                if theta < 0.0 {
                    theta += std::f64::consts::PI;
                }
                let bin = ((theta / std::f64::consts::PI * ORIENT_BINS as f64) as usize)
                    .min(ORIENT_BINS - 1);
                orient[bin] += mag;
            }
        }
        for v in orient.iter_mut() {
            *v /= n * 255.0;
        }
        Ok(out)
    }
}
