use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imaging::RasterImage;

/// Geometric patch transform applied before encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PatchTransform {
    Identity,
    Rot90,
    Rot180,
    Rot270,
    FlipH,
    FlipV,
}

impl PatchTransform {
    pub const ALL: [PatchTransform; 6] = [
        PatchTransform::Identity,
        PatchTransform::Rot90,
        PatchTransform::Rot180,
        PatchTransform::Rot270,
        PatchTransform::FlipH,
        PatchTransform::FlipV,
    ];

    /// Uniform draw over the six transforms.
    pub fn sample(rng: &mut ChaCha8Rng) -> Self {
        Self::ALL[rng.random_range(0..Self::ALL.len())]
    }

    /// Source pixel coordinates of target `(x, y)` in an `n × n` patch.
    fn source(self, x: usize, y: usize, n: usize) -> (usize, usize) {
        let m = n - 1;
        match self {
            PatchTransform::Identity => (x, y),
            // rot90 sends (x, y) to (m - y, x)
            PatchTransform::Rot90 => (y, m - x),
            PatchTransform::Rot180 => (m - x, m - y),
            PatchTransform::Rot270 => (m - y, x),
            PatchTransform::FlipH => (m - x, y),
            PatchTransform::FlipV => (x, m - y),
        }
    }

    pub fn apply(self, patch: &RasterImage) -> Result<RasterImage> {
        let n = patch.width();
        if n != patch.height() {
            return Err(Error::Shape(format!(
                "augmentation needs a square patch, got {}x{}",
                patch.width(),
                patch.height()
            )));
        }
        RasterImage::from_fn(n, n, |x, y| {
            let (sx, sy) = self.source(x, y, n);
            patch.get(sx, sy)
        })
    }
}

/// Applies one independently drawn transform to every patch.
pub fn augment_node_patches(patches: &[RasterImage], rng: &mut ChaCha8Rng) -> Result<Vec<RasterImage>> {
    patches
        .iter()
        .map(|p| PatchTransform::sample(rng).apply(p))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn numbered(n: usize) -> RasterImage {
        RasterImage::from_fn(n, n, |x, y| [x as u8, y as u8, 0]).unwrap()
    }

    #[test]
    fn rot90_moves_pixel() {
        let n = 5;
        let img = numbered(n);
        let r = PatchTransform::Rot90.apply(&img).unwrap();
        for y in 0..n {
            for x in 0..n {
                assert_eq!(r.get(n - 1 - y, x), img.get(x, y));
            }
        }
    }

    #[test]
    fn rot180_twice_is_identity() {
        let img = numbered(7);
        let r = PatchTransform::Rot180.apply(&img).unwrap();
        assert_eq!(PatchTransform::Rot180.apply(&r).unwrap(), img);
    }

    #[test]
    fn rotations_compose() {
        let img = numbered(4);
        let r90 = PatchTransform::Rot90.apply(&img).unwrap();
        let r270 = PatchTransform::Rot270.apply(&img).unwrap();
        assert_eq!(PatchTransform::Rot270.apply(&r90).unwrap(), img);
        assert_eq!(
            PatchTransform::Rot90.apply(&r90).unwrap(),
            PatchTransform::Rot180.apply(&img).unwrap()
        );
        assert_eq!(PatchTransform::Rot90.apply(&r270).unwrap(), img);
        for t in [PatchTransform::FlipH, PatchTransform::FlipV] {
            assert_eq!(t.apply(&t.apply(&img).unwrap()).unwrap(), img);
        }
    }

    #[test]
    fn non_square_rejected() {
        let img = RasterImage::filled(3, 2, [0; 3]).unwrap();
        assert!(PatchTransform::Rot90.apply(&img).is_err());
    }

    #[test]
    fn all_transforms_drawn() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut seen = std::collections::HashSet::new();
        for _ in 0..200 {
            seen.insert(PatchTransform::sample(&mut rng));
        }
        assert_eq!(seen.len(), 6);
    }
}
