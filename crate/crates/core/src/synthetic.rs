//! Voronoi-cell synthetic tissue images with known masks and labels.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heads::{ClassMask, GleasonLabel, Pattern, NUM_CLASSES};
use crate::imaging::RasterImage;
use crate::manifest::{DatasetManifest, ManifestRow, Split};

/// Color and texture of one class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassAppearance {
    pub mean: [f64; 3],
    /// Standard deviation of per-pixel Gaussian noise.
    pub noise: f64,
    /// Amplitude and period (pixels) of a sinusoidal stripe texture.
    pub texture_amplitude: f64,
    pub texture_period: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub width: usize,
    pub height: usize,
    pub min_regions: usize,
    pub max_regions: usize,
    pub classes: [ClassAppearance; NUM_CLASSES],
    /// Cell class probabilities, indexed `B, G3, G4, G5`.
    pub mixture: [f64; NUM_CLASSES],
    /// Probability that an image contains 0, 1, 2 or 3 distinct cancer
    /// patterns.
    pub pattern_count: [f64; 4],
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self::separable(7)
    }
}

impl SyntheticSpec {
    /// Well-separated class colors.
    pub fn separable(seed: u64) -> Self {
        let class = |mean: [f64; 3], period: f64| ClassAppearance {
            mean,
            noise: 10.0,
            texture_amplitude: 12.0,
            texture_period: period,
        };
        Self {
            width: 128,
            height: 128,
            min_regions: 8,
            max_regions: 14,
            classes: [
                class([232.0, 196.0, 212.0], 9.0),
                class([186.0, 96.0, 168.0], 6.0),
                class([112.0, 62.0, 176.0], 4.0),
                class([58.0, 28.0, 92.0], 3.0),
            ],
            mixture: [0.4, 0.2, 0.2, 0.2],
            pattern_count: [0.25, 0.35, 0.3, 0.1],
            seed,
        }
    }

    /// Class colors pulled most of the way towards a common mean with
    /// stronger noise.
    pub fn overlapping(seed: u64) -> Self {
        let mut spec = Self::separable(seed);
        let mut center = [0.0; 3];
        for c in &spec.classes {
            for k in 0..3 {
                center[k] += c.mean[k] / NUM_CLASSES as f64;
            }
        }
        for c in spec.classes.iter_mut() {
            for k in 0..3 {
                c.mean[k] = center[k] + 0.25 * (c.mean[k] - center[k]);
            }
            c.noise = 28.0;
        }
        spec
    }

    /// Fails on malformed probabilities or sizes; returns warnings for
    /// classes that cannot be told apart.
    pub fn validate(&self) -> Result<Vec<String>> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidInput("synthetic image size must be positive".into()));
        }
        if self.min_regions == 0 || self.min_regions > self.max_regions {
            return Err(Error::InvalidInput("region count range is empty".into()));
        }
        if self.max_regions > self.width * self.height {
            return Err(Error::InvalidInput("more regions than pixels".into()));
        }
        for (name, probs) in [("mixture", &self.mixture[..]), ("pattern_count", &self.pattern_count[..])] {
            let sum: f64 = probs.iter().sum();
            if probs.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidInput(format!("{name} probabilities must be non-negative and sum to 1")));
            }
        }
        let mut warnings = Vec::new();
        for a in 0..NUM_CLASSES {
            for b in a + 1..NUM_CLASSES {
                if self.classes[a] == self.classes[b] {
                    warnings.push(format!(
                        "classes {} and {} share identical appearance",
                        Pattern::ALL[a],
                        Pattern::ALL[b]
                    ));
                }
            }
        }
        Ok(warnings)
    }
}

/// One generated image with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticImage {
    pub image: RasterImage,
    pub mask: ClassMask,
    pub label: GleasonLabel,
}

/// Image label implied by a mask: the highest cancer pattern present is
/// primary, the second highest secondary (the primary again when only one
/// is present), benign when none is.
pub fn label_from_mask(mask: &ClassMask) -> GleasonLabel {
    let hist = mask.histogram();
    let present: Vec<Pattern> = Pattern::ALL[1..]
        .iter()
        .rev()
        .copied()
        .filter(|p| hist[p.index()] > 0)
        .collect();
    match present.as_slice() {
        [] => GleasonLabel::BENIGN,
        [p] => GleasonLabel::new(*p, *p).expect("cancer pair"),
        [p, s, ..] => GleasonLabel::new(*p, *s).expect("cancer pair"),
    }
}

fn weighted_pick(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if *w > 0.0 {
            if u < *w {
                return i;
            }
            u -= w;
        }
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

/// Generates image `index` of the dataset described by `spec`.
pub fn generate_image(spec: &SyntheticSpec, index: u64) -> Result<SyntheticImage> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index);
    let (w, h) = (spec.width, spec.height);
    let n_regions = rng.random_range(spec.min_regions..=spec.max_regions);

    let min_dist = 0.5 * ((w * h) as f64 / n_regions as f64).sqrt();
    let mut sites: Vec<[f64; 2]> = Vec::with_capacity(n_regions);
    while sites.len() < n_regions {
        let mut candidate = [0.0; 2];
        for _ in 0..64 {
            candidate = [rng.random::<f64>() * w as f64, rng.random::<f64>() * h as f64];
            let ok = sites
                .iter()
                .all(|s| (s[0] - candidate[0]).hypot(s[1] - candidate[1]) >= min_dist);
            if ok {
                break;
            }
        }
        sites.push(candidate);
    }

    // which cancer patterns this image contains
    let available: Vec<usize> = (1..NUM_CLASSES).filter(|&c| spec.mixture[c] > 0.0).collect();
    let mut k = weighted_pick(&mut rng, &spec.pattern_count).min(available.len()).min(n_regions);
    if spec.mixture[0] <= 0.0 && k == 0 {
        k = 1.min(available.len());
    }
    let mut chosen = available.clone();
    for i in 0..chosen.len() {
        let j = rng.random_range(i..chosen.len());
        chosen.swap(i, j);
    }
    chosen.truncate(k);
    chosen.sort_unstable();

    let mut allowed = [0.0; NUM_CLASSES];
    allowed[0] = spec.mixture[0];
    for &c in &chosen {
        allowed[c] = spec.mixture[c];
    }
    let mut cell_class: Vec<usize> = (0..n_regions).map(|_| weighted_pick(&mut rng, &allowed)).collect();
    // every chosen pattern occupies at least one cell
    let mut slots: Vec<usize> = (0..n_regions).collect();
    for i in 0..slots.len() {
        let j = rng.random_range(i..slots.len());
        slots.swap(i, j);
    }
    for (slot, &c) in slots.iter().zip(&chosen) {
        if !cell_class.contains(&c) {
            cell_class[*slot] = c;
        }
    }
    if k == 0 {
        cell_class.iter_mut().for_each(|c| *c = 0);
    }

    let orientation: Vec<f64> = (0..NUM_CLASSES)
        .map(|_| rng.random::<f64>() * std::f64::consts::PI)
        .collect();
    let noise = Normal::new(0.0, 1.0).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut pixels = Vec::with_capacity(w * h);
    let mut classes = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (i, s) in sites.iter().enumerate() {
                let d = (s[0] - px).powi(2) + (s[1] - py).powi(2);
                if d < best_d {
                    best_d = d;
                    best = i;
                }
            }
            let c = cell_class[best];
            let a = &spec.classes[c];
            let (sin, cos) = orientation[c].sin_cos();
            let phase = 2.0 * std::f64::consts::PI * (px * cos + py * sin) / a.texture_period.max(1e-9);
            let stripe = a.texture_amplitude * phase.sin();
            let mut rgb = [0u8; 3];
            for k in 0..3 {
                let v = a.mean[k] + stripe + a.noise * noise.sample(&mut rng);
                rgb[k] = v.round().clamp(0.0, 255.0) as u8;
            }
            pixels.push(rgb);
            classes.push(c as u8);
        }
    }
    let mask = ClassMask::new(w, h, classes)?;
    Ok(SyntheticImage {
        image: RasterImage::new(w, h, pixels)?,
        label: label_from_mask(&mask),
        mask,
    })
}

/// Number of images per split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }

    pub fn split_of(&self, index: usize) -> Split {
        if index < self.train {
            Split::Train
        } else if index < self.train + self.val {
            Split::Val
        } else {
            Split::Test
        }
    }
}

/// Writes `images/`, `masks/` and `manifest.csv` under `dir`. Returns the
/// manifest and any appearance warnings.
pub fn generate_synthetic_dataset(
    spec: &SyntheticSpec,
    counts: SplitCounts,
    dir: &Path,
) -> Result<(DatasetManifest, Vec<String>)> {
    let warnings = spec.validate()?;
    let mut rows = Vec::with_capacity(counts.total());
    for i in 0..counts.total() {
        let sample = generate_image(spec, i as u64)?;
        let image_rel = format!("images/img_{i:04}.png");
        let mask_rel = format!("masks/img_{i:04}.png");
        sample.image.save(&dir.join(&image_rel))?;
        sample.mask.save(&dir.join(&mask_rel))?;
        rows.push(ManifestRow {
            image_path: image_rel.into(),
            mask_path: Some(mask_rel.into()),
            label: sample.label,
            split: counts.split_of(i),
        });
    }
    let manifest = DatasetManifest::new(dir.to_path_buf(), rows);
    manifest.save(&dir.join("manifest.csv"))?;
    Ok((manifest, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn benign_only_spec() {
        let mut spec = SyntheticSpec::separable(3);
        spec.mixture = [1.0, 0.0, 0.0, 0.0];
        spec.width = 32;
        spec.height = 32;
        for i in 0..10 {
            let s = generate_image(&spec, i).unwrap();
            assert_eq!(s.label, GleasonLabel::BENIGN);
            assert!(s.mask.classes().iter().all(|&c| c == 0));
        }
    }

    #[test]
    fn label_rule() {
        let m = ClassMask::new(3, 1, vec![0, 2, 2]).unwrap();
        assert_eq!(label_from_mask(&m), GleasonLabel::parse("G4", "G4").unwrap());
        let m = ClassMask::new(3, 1, vec![1, 0, 3]).unwrap();
        assert_eq!(label_from_mask(&m), GleasonLabel::parse("G5", "G3").unwrap());
        let m = ClassMask::new(4, 1, vec![1, 2, 3, 0]).unwrap();
        assert_eq!(label_from_mask(&m), GleasonLabel::parse("G5", "G4").unwrap());
    }

    #[test]
    fn labels_consistent_with_masks_and_deterministic() {
        let mut spec = SyntheticSpec::separable(11);
        spec.width = 48;
        spec.height = 40;
        for i in 0..12 {
            let a = generate_image(&spec, i).unwrap();
            assert_eq!(label_from_mask(&a.mask), a.label);
            assert_eq!(generate_image(&spec, i).unwrap(), a);
        }
    }

    #[test]
    fn identical_classes_warn() {
        let mut spec = SyntheticSpec::separable(1);
        spec.classes[2] = spec.classes[1];
        assert_eq!(spec.validate().unwrap().len(), 1);
        spec.mixture = [0.5, 0.5, 0.5, 0.0];
        assert!(spec.validate().is_err());
    }
}
