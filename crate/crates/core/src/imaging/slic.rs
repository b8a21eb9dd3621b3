//! SLIC over-segmentation: k-means in joint CIELab and image-plane space,
//! followed by a connectivity pass that absorbs fragments into their largest
//! 4-neighbour.

use super::superpixel::connected_components;
use super::{RasterImage, SuperpixelMap};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlicParams {
    pub n_segments: usize,
    /// Weight of spatial proximity relative to color distance.
    pub compactness: f64,
    pub iters: usize,
    /// Fragments smaller than this fraction of the expected segment area are
    /// absorbed into a neighbour.
    pub min_fragment_ratio: f64,
}

impl Default for SlicParams {
    fn default() -> Self {
        Self {
            n_segments: 100,
            compactness: 10.0,
            iters: 10,
            min_fragment_ratio: 0.25,
        }
    }
}

impl SlicParams {
    pub fn new(n_segments: usize, compactness: f64, iters: usize) -> Self {
        Self {
            n_segments,
            compactness,
            iters,
            ..Self::default()
        }
    }
}

fn srgb_to_linear(v: f64) -> f64 {
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    const D: f64 = 6.0 / 29.0;
    if t > D * D * D {
        t.cbrt()
    } else {
        t / (3.0 * D * D) + 4.0 / 29.0
    }
}

/// sRGB to CIELab under D65.
pub(crate) fn rgb_to_lab(p: [u8; 3]) -> [f64; 3] {
    let r = srgb_to_linear(p[0] as f64 / 255.0);
    let g = srgb_to_linear(p[1] as f64 / 255.0);
    let b = srgb_to_linear(p[2] as f64 / 255.0);
    let x = (0.4124564 * r + 0.3575761 * g + 0.1804375 * b) / 0.95047;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = (0.0193339 * r + 0.1191920 * g + 0.9503041 * b) / 1.08883;
    let (fx, fy, fz) = (lab_f(x), lab_f(y), lab_f(z));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Chooses an `nx × ny` seed grid with at most `k` cells and near-square
/// cells.
fn seed_grid(width: usize, height: usize, k: usize) -> (usize, usize) {
    let step = ((width * height) as f64 / k as f64).sqrt();
    let mut nx = ((width as f64 / step).round() as usize).clamp(1, width);
    let mut ny = ((height as f64 / step).round() as usize).clamp(1, height);
    let skew = |nx: usize, ny: usize| (width as f64 / nx as f64 - height as f64 / ny as f64).abs();
    while nx * ny > k {
        if nx > 1 && (ny == 1 || skew(nx - 1, ny) < skew(nx, ny - 1)) {
            nx -= 1;
        } else {
            ny -= 1;
        }
    }
    loop {
        let grow_x = nx < width && (nx + 1) * ny <= k;
        let grow_y = ny < height && nx * (ny + 1) <= k;
        match (grow_x, grow_y) {
            (true, true) => {
                if skew(nx + 1, ny) <= skew(nx, ny + 1) {
                    nx += 1
                } else {
                    ny += 1
                }
            }
            (true, false) => nx += 1,
            (false, true) => ny += 1,
            (false, false) => break,
        }
    }
    (nx, ny)
}

#[derive(Debug, Clone, Copy)]
struct Center {
    lab: [f64; 3],
    x: f64,
    y: f64,
}

/// Over-segments `img` into at most `n_segments` 4-connected superpixels.
pub fn slic(img: &RasterImage, params: &SlicParams) -> Result<SuperpixelMap> {
    let (w, h) = (img.width(), img.height());
    let n = w * h;
    if params.n_segments == 0 {
        return Err(Error::InvalidInput("n_segments must be at least 1".into()));
    }
    if params.n_segments > n {
        return Err(Error::TooManySegments {
            requested: params.n_segments,
            pixels: n,
        });
    }
    if !(params.compactness > 0.0) {
        return Err(Error::InvalidInput("compactness must be positive".into()));
    }
    if params.n_segments == 1 {
        return Ok(SuperpixelMap::single(w, h));
    }

    let lab: Vec<[f64; 3]> = img.pixels().iter().map(|&p| rgb_to_lab(p)).collect();
    let (nx, ny) = seed_grid(w, h, params.n_segments);
    let cell_w = w as f64 / nx as f64;
    let cell_h = h as f64 / ny as f64;
    let step = (n as f64 / (nx * ny) as f64).sqrt();

    let grad = |x: usize, y: usize| -> f64 {
        if x == 0 || y == 0 || x + 1 >= w || y + 1 >= h {
            return f64::INFINITY;
        }
        let d = |a: [f64; 3], b: [f64; 3]| (0..3).map(|c| (a[c] - b[c]).powi(2)).sum::<f64>();
        d(lab[y * w + x + 1], lab[y * w + x - 1]) + d(lab[(y + 1) * w + x], lab[(y - 1) * w + x])
    };

    let mut centers = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let sx = (((i as f64 + 0.5) * cell_w) as usize).min(w - 1);
            let sy = (((j as f64 + 0.5) * cell_h) as usize).min(h - 1);
            // move the seed to the lowest-gradient position of its 3x3 neighbourhood
            let (mut bx, mut by, mut best) = (sx, sy, grad(sx, sy));
            for yy in sy.saturating_sub(1)..=(sy + 1).min(h - 1) {
                for xx in sx.saturating_sub(1)..=(sx + 1).min(w - 1) {
                    let g = grad(xx, yy);
                    if g < best {
                        best = g;
                        bx = xx;
                        by = yy;
                    }
                }
            }
            centers.push(Center {
                lab: lab[by * w + bx],
                x: bx as f64,
                y: by as f64,
            });
        }
    }

    let spatial_weight = (params.compactness / step).powi(2);
    let reach_x = step.max(cell_w);
    let reach_y = step.max(cell_h);
    let mut labels = vec![u32::MAX; n];
    let mut dist = vec![f64::INFINITY; n];
    let distance = |c: &Center, i: usize| -> f64 {
        let p = lab[i];
        let dc = (p[0] - c.lab[0]).powi(2) + (p[1] - c.lab[1]).powi(2) + (p[2] - c.lab[2]).powi(2);
        let dx = (i % w) as f64 - c.x;
        let dy = (i / w) as f64 - c.y;
        dc + (dx * dx + dy * dy) * spatial_weight
    };

    for _ in 0..params.iters.max(1) {
        labels.fill(u32::MAX);
        dist.fill(f64::INFINITY);
        for (k, c) in centers.iter().enumerate() {
            let x0 = (c.x - reach_x).floor().max(0.0) as usize;
            let x1 = ((c.x + reach_x).ceil() as usize).min(w - 1);
            let y0 = (c.y - reach_y).floor().max(0.0) as usize;
            let y1 = ((c.y + reach_y).ceil() as usize).min(h - 1);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let i = y * w + x;
                    let d = distance(c, i);
                    if d < dist[i] {
                        dist[i] = d;
                        labels[i] = k as u32;
                    }
                }
            }
        }
        for i in 0..n {
            if labels[i] == u32::MAX {
                let (k, _) = centers
                    .iter()
                    .enumerate()
                    .map(|(k, c)| (k, distance(c, i)))
                    .fold((0, f64::INFINITY), |acc, cur| if cur.1 < acc.1 { cur } else { acc });
                labels[i] = k as u32;
            }
        }
        let mut sums = vec![[0.0f64; 6]; centers.len()];
        for i in 0..n {
            let s = &mut sums[labels[i] as usize];
            s[0] += lab[i][0];
            s[1] += lab[i][1];
            s[2] += lab[i][2];
            s[3] += (i % w) as f64;
            s[4] += (i / w) as f64;
            s[5] += 1.0;
        }
        for (c, s) in centers.iter_mut().zip(&sums) {
            if s[5] > 0.0 {
                c.lab = [s[0] / s[5], s[1] / s[5], s[2] / s[5]];
                c.x = s[3] / s[5];
                c.y = s[4] / s[5];
            }
        }
    }

    let min_area = params.min_fragment_ratio * n as f64 / params.n_segments as f64;
    let merged = enforce_connectivity(w, h, &labels, centers.len(), min_area);
    SuperpixelMap::from_regions(w, h, &merged)
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Keeps, per cluster, its largest connected component when that component
/// is at least `min_area`; every other fragment is absorbed into the largest
/// adjacent region, smallest fragments first.
fn enforce_connectivity(
    w: usize,
    h: usize,
    labels: &[u32],
    n_clusters: usize,
    min_area: f64,
) -> Vec<u32> {
    let comps = connected_components(w, h, labels);
    let nc = comps.count;
    let mut size = vec![0usize; nc];
    let mut cluster = vec![0u32; nc];
    for (i, &c) in comps.labels.iter().enumerate() {
        size[c as usize] += 1;
        cluster[c as usize] = labels[i];
    }
    let mut largest: Vec<Option<usize>> = vec![None; n_clusters];
    for c in 0..nc {
        let k = cluster[c] as usize;
        match largest[k] {
            Some(b) if size[b] >= size[c] => {}
            _ => largest[k] = Some(c),
        }
    }
    let mut adjacency = vec![Vec::new(); nc];
    for y in 0..h {
        for x in 0..w {
            let a = comps.labels[y * w + x] as usize;
            if x + 1 < w {
                let b = comps.labels[y * w + x + 1] as usize;
                if a != b {
                    adjacency[a].push(b);
                    adjacency[b].push(a);
                }
            }
            if y + 1 < h {
                let b = comps.labels[(y + 1) * w + x] as usize;
                if a != b {
                    adjacency[a].push(b);
                    adjacency[b].push(a);
                }
            }
        }
    }
    for adj in &mut adjacency {
        adj.sort_unstable();
        adj.dedup();
    }

    let mut pending: Vec<usize> = (0..nc)
        .filter(|&c| largest[cluster[c] as usize] != Some(c) || (size[c] as f64) < min_area)
        .collect();
    pending.sort_by_key(|&c| (size[c], c));

    let mut parent: Vec<usize> = (0..nc).collect();
    let mut members: Vec<Vec<usize>> = (0..nc).map(|c| vec![c]).collect();
    let mut root_size = size.clone();
    for c in pending {
        let root = find(&mut parent, c);
        if root != c {
            continue;
        }
        let mut best: Option<usize> = None;
        let member_list = members[root].clone();
        for m in member_list {
            for &nb in &adjacency[m] {
                let r = find(&mut parent, nb);
                if r == root {
                    continue;
                }
                best = match best {
                    Some(b) if (root_size[b], std::cmp::Reverse(b)) >= (root_size[r], std::cmp::Reverse(r)) => Some(b),
                    _ => Some(r),
                };
            }
        }
        if let Some(target) = best {
            parent[root] = target;
            root_size[target] += root_size[root];
            let moved = std::mem::take(&mut members[root]);
            members[target].extend(moved);
        }
    }
    comps
        .labels
        .iter()
        .map(|&c| find(&mut parent, c as usize) as u32)
        .collect()
}
