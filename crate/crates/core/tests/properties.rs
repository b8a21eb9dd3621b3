//! Property tests for structural and metric invariants.

use std::collections::BTreeSet;

use proptest::prelude::*;

use tissuegraph::attribution::{minmax_normalize, selection_budget, synthesize_pseudo_labels};
use tissuegraph::graph::{build_rag, build_tissue_graph_from_embeddings, load_graph, save_graph};
use tissuegraph::heads::{class_weights, mask_from_node_labels, ClassMask};
use tissuegraph::imaging::{hierarchical_merge, slic, SlicParams};
use tissuegraph::metrics::{brier_nll, dice_scores, ece, quadratic_kappa, reliability_bins, weighted_f1, DiceAggregation};
use tissuegraph::nn::Tape;
use tissuegraph::{GleasonLabel, Matrix, Pattern, RasterImage, SuperpixelMap};

fn region_map() -> impl Strategy<Value = SuperpixelMap> {
    (1usize..9, 1usize..9).prop_flat_map(|(w, h)| {
        proptest::collection::vec(0u32..5, w * h).prop_map(move |r| SuperpixelMap::from_regions(w, h, &r).unwrap())
    })
}

fn image(w: usize, h: usize) -> impl Strategy<Value = RasterImage> {
    proptest::collection::vec(any::<[u8; 3]>(), w * h).prop_map(move |p| RasterImage::new(w, h, p).unwrap())
}

fn probs(k: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.001f64..1.0, k).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.iter().map(|x| x / s).collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rag_edges_are_exactly_the_four_adjacencies(sp in region_map()) {
        let edges = build_rag(&sp);
        let mut expected = BTreeSet::new();
        for y in 0..sp.height() {
            for x in 0..sp.width() {
                let a = sp.label(x, y);
                for (nx, ny) in [(x + 1, y), (x, y + 1)] {
                    if nx < sp.width() && ny < sp.height() {
                        let b = sp.label(nx, ny);
                        if a != b {
                            expected.insert((a.min(b), a.max(b)));
                        }
                    }
                }
            }
        }
        prop_assert_eq!(edges, expected.into_iter().collect::<Vec<_>>());
    }

    #[test]
    fn graph_has_one_node_per_segment_and_round_trips(sp in region_map(), seed in any::<u64>()) {
        let n = sp.num_segments();
        let data = (0..n * 3).map(|i| ((i as u64).wrapping_mul(seed | 1) % 1000) as f64 / 7.0).collect();
        let g = build_tissue_graph_from_embeddings(&sp, Matrix::from_vec(n, 3, data).unwrap(), None).unwrap();
        prop_assert_eq!(g.num_nodes(), n);
        prop_assert!(g.centroids.iter().all(|c| c[0] > 0.0 && c[0] < 1.0 && c[1] > 0.0 && c[1] < 1.0));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.json");
        save_graph(&g, &path).unwrap();
        prop_assert_eq!(load_graph(&path).unwrap(), g);
    }

    #[test]
    fn slic_segments_are_connected_and_bounded(img in image(12, 10), k in 1usize..20) {
        let sp = slic(&img, &SlicParams::new(k, 10.0, 5)).unwrap();
        prop_assert!(sp.num_segments() >= 1);
        prop_assert!(sp.areas().iter().all(|&a| a > 0));
        let relabelled = SuperpixelMap::from_regions(sp.width(), sp.height(), sp.labels()).unwrap();
        prop_assert_eq!(relabelled.num_segments(), sp.num_segments());
    }

    #[test]
    fn merging_only_coarsens(img in image(12, 10), k in 2usize..20, budget in 1usize..10, thr in 0.0f64..0.5) {
        let sp = slic(&img, &SlicParams::new(k, 10.0, 5)).unwrap();
        let merged = hierarchical_merge(&img, &sp, thr, budget).unwrap();
        prop_assert!(merged.num_segments() <= sp.num_segments());
        // every fine segment lies inside one coarse segment
        for pixels in sp.segment_pixels() {
            let owners: BTreeSet<u32> = pixels.iter().map(|&p| merged.labels()[p]).collect();
            prop_assert_eq!(owners.len(), 1);
        }
    }

    #[test]
    fn mask_histogram_is_area_weighted(sp in region_map(), seed in any::<u64>()) {
        let classes: Vec<Pattern> = (0..sp.num_segments()).map(|i| Pattern::ALL[((seed >> (i % 32)) as usize + i) % 4]).collect();
        let mask = mask_from_node_labels(&sp, &classes).unwrap();
        let mut expected = [0usize; 4];
        for (area, c) in sp.areas().iter().zip(&classes) {
            expected[c.index()] += area;
        }
        prop_assert_eq!(mask.histogram(), expected);
    }

    #[test]
    fn metric_ranges(
        pairs in proptest::collection::vec((0u8..4, 0u8..4), 1..50),
        prob in proptest::collection::vec((probs(4), 0usize..4), 1..50),
        bins in 1usize..20,
    ) {
        let (p, g): (Vec<u8>, Vec<u8>) = pairs.iter().cloned().unzip();
        let dice = dice_scores(
            &[ClassMask::new(p.len(), 1, p.clone()).unwrap()],
            &[ClassMask::new(g.len(), 1, g.clone()).unwrap()],
            DiceAggregation::Micro,
        ).unwrap();
        prop_assert!((0.0..=1.0).contains(&dice.average));
        let f = weighted_f1(&p, &g).unwrap();
        prop_assert!((0.0..=1.0).contains(&f));
        let k = quadratic_kappa(&p, &g, 6).unwrap();
        prop_assert!((-1.0..=1.0).contains(&k));
        prop_assert!((weighted_f1(&g, &g).unwrap() - 1.0).abs() < 1e-12);
        prop_assert!((quadratic_kappa(&g, &g, 6).unwrap() - 1.0).abs() < 1e-12);

        let (vs, ts): (Vec<Vec<f64>>, Vec<usize>) = prob.iter().cloned().unzip();
        let (brier, nll) = brier_nll(&vs, &ts).unwrap();
        prop_assert!((0.0..=2.0).contains(&brier));
        prop_assert!(nll >= 0.0);
        let conf: Vec<f64> = vs.iter().map(|v| v.iter().cloned().fold(0.0, f64::max)).collect();
        let correct: Vec<bool> = vs.iter().zip(&ts).map(|(v, &t)| tissuegraph::nn::softmax_argmax(v) == t).collect();
        let e = ece(&conf, &correct, bins).unwrap();
        prop_assert!((0.0..=1.0).contains(&e));
        let rb = reliability_bins(&conf, &correct, bins).unwrap();
        prop_assert_eq!(rb.iter().map(|b| b.count).sum::<usize>(), conf.len());
    }

    #[test]
    fn class_weights_are_positive_and_ordered(counts in proptest::collection::vec(0usize..100, 2..6)) {
        prop_assume!(counts.iter().filter(|&&c| c > 0).count() >= 1);
        let w = class_weights(&counts).unwrap();
        prop_assert!(w.iter().all(|v| v.is_finite() && *v >= 0.0));
        for i in 0..counts.len() {
            for j in 0..counts.len() {
                if counts[i] > 0 && counts[j] > 0 && counts[i] < counts[j] {
                    prop_assert!(w[i] >= w[j]);
                }
            }
        }
    }

    #[test]
    fn pseudo_label_invariants(
        raw in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..60),
        label in proptest::sample::select(GleasonLabel::all()),
        n in proptest::sample::select(vec![5.0, 10.0, 15.0, 20.0]),
        t in proptest::sample::select(vec![0.5, 0.6, 0.7]),
    ) {
        let (p, s): (Vec<f64>, Vec<f64>) = raw.into_iter().unzip();
        let (ip, is) = (minmax_normalize(&p), minmax_normalize(&s));
        let set = synthesize_pseudo_labels(&ip, &is, &label, n, t).unwrap();
        prop_assert_eq!(set.assignments.len(), ip.len());
        if label.is_benign() {
            prop_assert!(set.assignments.iter().all(|a| *a == Some(Pattern::B)));
        } else {
            let cap = selection_budget(n, ip.len());
            for c in [label.primary(), label.secondary()] {
                prop_assert!(set.count(c) <= cap);
            }
            for (v, a) in set.assignments.iter().enumerate() {
                match a {
                    Some(c) if *c == label.primary() => prop_assert!(ip[v] >= t),
                    Some(c) if *c == label.secondary() => prop_assert!(is[v] >= t),
                    Some(_) => prop_assert!(false, "class outside the label"),
                    None => {}
                }
            }
        }
    }

    #[test]
    fn readout_is_permutation_invariant(rows in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 3), 1..20), rot in 0usize..20) {
        let n = rows.len();
        let mut rotated = rows.clone();
        rotated.rotate_left(rot % n);
        let mean = |r: &[Vec<f64>]| {
            let mut tape = Tape::new();
            let h = tape.constant(Matrix::from_rows(r).unwrap());
            let m = tissuegraph::nn::readout_mean(&mut tape, h).unwrap();
            tape.value(m).clone()
        };
        let (a, b) = (mean(&rows), mean(&rotated));
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn label_text_round_trips(label in proptest::sample::select(GleasonLabel::all())) {
        let again = GleasonLabel::parse(label.primary().as_str(), label.secondary().as_str()).unwrap();
        prop_assert_eq!(again, label);
        prop_assert!(label.isup() <= 5);
        prop_assert_eq!(label.is_benign(), label.isup() == 0);
    }
}
