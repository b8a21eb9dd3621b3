use std::collections::BTreeSet;

use crate::imaging::SuperpixelMap;

/// Region adjacency edges `(a, b)` with `a < b`, sorted: an edge exists iff
/// some pixel of `a` is 4-adjacent to some pixel of `b`.
pub fn build_rag(sp: &SuperpixelMap) -> Vec<(usize, usize)> {
    let (w, h) = (sp.width(), sp.height());
    let labels = sp.labels();
    let mut edges = BTreeSet::new();
    let mut add = |a: u32, b: u32| {
        if a != b {
            edges.insert((a.min(b) as usize, a.max(b) as usize));
        }
    };
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if x + 1 < w {
                add(labels[i], labels[i + 1]);
            }
            if y + 1 < h {
                add(labels[i], labels[i + w]);
            }
        }
    }
    edges.into_iter().collect()
}
