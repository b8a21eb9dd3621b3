//! Greedy hierarchical merging of adjacent superpixels by color similarity.

use std::collections::{BTreeMap, BTreeSet};

use super::color::{ColorFeatureVector, RegionColorStats};
use super::{RasterImage, SuperpixelMap};
use crate::error::{Error, Result};

/// Euclidean distance between the rescaled descriptors of two regions.
pub fn merge_distance(a: &ColorFeatureVector, b: &ColorFeatureVector) -> f64 {
    let (sa, sb) = (a.scaled(), b.scaled());
    sa.iter()
        .zip(&sb)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Repeatedly merges the adjacent pair with the smallest color distance
/// while that distance is below `sim_threshold` and more than
/// `target_max_nodes` segments remain. Ties go to the pair with the smaller
/// label ids. The merged region's descriptor is recomputed from its pixels.
pub fn hierarchical_merge(
    img: &RasterImage,
    sp: &SuperpixelMap,
    sim_threshold: f64,
    target_max_nodes: usize,
) -> Result<SuperpixelMap> {
    if img.width() != sp.width() || img.height() != sp.height() {
        return Err(Error::Shape(format!(
            "image is {}x{} but superpixel map is {}x{}",
            img.width(),
            img.height(),
            sp.width(),
            sp.height()
        )));
    }
    let n = sp.num_segments();
    let mut stats = vec![RegionColorStats::default(); n];
    for (p, &l) in img.pixels().iter().zip(sp.labels()) {
        stats[l as usize].push(*p);
    }
    let mut features = stats
        .iter()
        .map(|s| s.features())
        .collect::<Result<Vec<_>>>()?;

    let mut neighbors = vec![BTreeSet::new(); n];
    for (a, b) in super::super::graph::build_rag(sp) {
        neighbors[a].insert(b);
        neighbors[b].insert(a);
    }
    let mut pair_dist: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for a in 0..n {
        for &b in neighbors[a].range(a + 1..) {
            pair_dist.insert((a, b), merge_distance(&features[a], &features[b]));
        }
    }

    let mut owner: Vec<usize> = (0..n).collect();
    let mut alive = n;
    while alive > target_max_nodes.max(1) {
        let best = pair_dist
            .iter()
            .fold(None::<(&(usize, usize), f64)>, |acc, (k, &d)| match acc {
                Some((_, bd)) if bd <= d => acc,
                _ => Some((k, d)),
            });
        let Some((&(a, b), d)) = best else { break };
        if !(d < sim_threshold) {
            break;
        }
        // absorb b into a
        let absorbed = std::mem::take(&mut stats[b]);
        stats[a].absorb(&absorbed);
        features[a] = stats[a].features()?;
        for o in owner.iter_mut() {
            if *o == b {
                *o = a;
            }
        }
        let b_neighbors = std::mem::take(&mut neighbors[b]);
        for &c in &b_neighbors {
            pair_dist.remove(&(c.min(b), c.max(b)));
            neighbors[c].remove(&b);
            if c != a {
                neighbors[c].insert(a);
                neighbors[a].insert(c);
            }
        }
        neighbors[a].remove(&b);
        for &c in &neighbors[a] {
            pair_dist.insert((a.min(c), a.max(c)), merge_distance(&features[a], &features[c]));
        }
        alive -= 1;
    }

    let regions: Vec<u32> = sp.labels().iter().map(|&l| owner[l as usize] as u32).collect();
    SuperpixelMap::from_regions(sp.width(), sp.height(), &regions)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn columns(width: usize, parts: usize) -> SuperpixelMap {
        let labels = (0..width * 4).map(|i| ((i % width) * parts / width) as u32).collect();
        SuperpixelMap::new(width, 4, labels).unwrap()
    }

    #[test]
    fn identical_neighbours_merge() {
        let img = RasterImage::filled(8, 4, [90, 60, 200]).unwrap();
        let out = hierarchical_merge(&img, &columns(8, 2), 0.5, 1).unwrap();
        assert_eq!(out.num_segments(), 1);
    }

    #[test]
    fn distinct_colors_stay_apart() {
        let img = RasterImage::from_fn(8, 4, |x, _| if x < 4 { [255, 0, 0] } else { [0, 0, 255] })
            .unwrap();
        let sp = columns(8, 2);
        let stats: Vec<_> = sp.segment_pixels();
        let fa = crate::imaging::region_color_features(&img, &stats[0]).unwrap();
        let fb = crate::imaging::region_color_features(&img, &stats[1]).unwrap();
        assert!(merge_distance(&fa, &fb) >= 0.01);
        let out = hierarchical_merge(&img, &sp, 0.01, 1).unwrap();
        assert_eq!(out, sp);
    }

    #[test]
    fn row_of_four_collapses_to_budget() {
        let img = RasterImage::filled(16, 4, [30, 30, 30]).unwrap();
        let out = hierarchical_merge(&img, &columns(16, 4), 1e-9, 1).unwrap();
        assert_eq!(out.num_segments(), 1);
    }

    #[test]
    fn budget_stops_merging_early() {
        let img = RasterImage::filled(16, 4, [30, 30, 30]).unwrap();
        let out = hierarchical_merge(&img, &columns(16, 4), 1.0, 3).unwrap();
        assert_eq!(out.num_segments(), 3);
    }

    #[test]
    fn merging_only_coarsens() {
        let img = RasterImage::from_fn(24, 4, |x, _| [(x * 10) as u8, 50, (255 - x * 10) as u8])
            .unwrap();
        let sp = columns(24, 12);
        let out = hierarchical_merge(&img, &sp, 0.2, 1).unwrap();
        assert!(out.num_segments() <= sp.num_segments());
        let mut image_of = vec![None; sp.num_segments()];
        for (&a, &b) in sp.labels().iter().zip(out.labels()) {
            let slot = &mut image_of[a as usize];
            assert!(slot.is_none() || *slot == Some(b));
            *slot = Some(b);
        }
    }
}
