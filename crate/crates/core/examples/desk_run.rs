//! Weak and fully supervised runs on an in-memory synthetic set.
//!
//! `cargo run --release --example desk_run -- [seed] [overlap|separable] [key=value ...]`

use std::time::Instant;

use rayon::prelude::*;

use tissuegraph::metrics::EvalOptions;
use tissuegraph::pipeline::{build_graph, evaluate_attribution_baseline, run_supervised, run_weak_pipeline, GraphBuildParams, GraphSample};
use tissuegraph::synthetic::{generate_image, SplitCounts, SyntheticSpec};
use tissuegraph::{DefaultEncoder, TrainConfig};
use tissuegraph::manifest::Split;

fn main() -> tissuegraph::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(7);
    let overlap = args.get(2).is_some_and(|s| s == "overlap");
    let mut spec = if overlap { SyntheticSpec::overlapping(seed) } else { SyntheticSpec::separable(seed) };
    spec.width = 128;
    spec.height = 128;
    let counts = SplitCounts { train: 60, val: 20, test: 20 };
    let params = GraphBuildParams::desk_scale();
    let t0 = Instant::now();
    let samples = (0..counts.total())
        .into_par_iter()
        .map(|i| {
            let s = generate_image(&spec, i as u64)?;
            let (graph, superpixels) = build_graph(&s.image, Some(&s.mask), Some(s.label), &params, &DefaultEncoder)?;
            Ok(GraphSample { id: format!("img_{i:04}"), split: counts.split_of(i), graph, superpixels, truth_mask: Some(s.mask) })
        })
        .collect::<tissuegraph::Result<Vec<_>>>()?;
    let nodes: usize = samples.iter().map(|s| s.graph.num_nodes()).sum();
    println!("graphs built in {:.1}s, mean nodes {:.1}", t0.elapsed().as_secs_f64(), nodes as f64 / samples.len() as f64);

    let mut cfg = TrainConfig::default();
    for kv in args.iter().skip(3) {
        let (k, v) = kv.split_once('=').unwrap();
        cfg.set(k, v)?;
    }
    cfg.seed = seed;
    let opts = EvalOptions::default();
    let t1 = Instant::now();
    let weak = run_weak_pipeline(&samples, &cfg, &opts)?;
    println!("weak run {:.1}s", t1.elapsed().as_secs_f64());
    for (name, h) in [("graph", &weak.graph_phase.history), ("node", &weak.node_phase.history), ("finetune", &weak.finetune.history)] {
        println!("{name}: best {} of {} stopped_early {}", h.best_epoch, h.epochs.len(), h.stopped_early);
    }
    let assigned: usize = weak.pseudo_labels.iter().map(|(_, p)| p.num_assigned()).sum();
    {
        let m = weak.graph_phase.checkpoint.model()?;
        let tr: Vec<_> = samples.iter().filter(|s| s.split == Split::Train).map(|s| s.graph.clone()).collect();
        let va: Vec<_> = samples.iter().filter(|s| s.split == Split::Val).map(|s| s.graph.clone()).collect();
        let te: Vec<_> = samples.iter().filter(|s| s.split == Split::Test).map(|s| s.graph.clone()).collect();
        println!("graph phase wF1 train {:.3} val {:.3} test {:.3}", tissuegraph::training::evaluate_wf1(&m, &tr)?, tissuegraph::training::evaluate_wf1(&m, &va)?, tissuegraph::training::evaluate_wf1(&m, &te)?);
        for e in &weak.graph_phase.history.epochs { print!("{:.2}/{:.2} ", e.train_loss, e.validation_wf1.unwrap_or(f64::NAN)); }
        println!();
    }
    println!("pseudo labels assigned {assigned}");
    let r = &weak.test_report;
    println!("weak: wF1 {:.3} kappa {:.3} dice {:?}", r.weighted_f1, r.quadratic_kappa, r.dice.as_ref().map(|d| (d.average, d.per_class)));
    println!("grade labels {:?}", r.confusion_grade.labels);
    for row in &r.confusion_grade.counts { println!("  {row:?}"); }
    println!("coerced {}", r.coerced_predictions);
    let test: Vec<&GraphSample> = samples.iter().filter(|s| s.split == Split::Test).collect();
    let base = evaluate_attribution_baseline(&weak.graph_phase.checkpoint.model()?, &test, &opts)?;
    println!("baseline dice {:?}", base.dice.as_ref().map(|d| d.average));
    let t2 = Instant::now();
    let (_, sup) = run_supervised(&samples, &cfg, &opts)?;
    println!("supervised {:.1}s dice {:?}", t2.elapsed().as_secs_f64(), sup.dice.as_ref().map(|d| d.average));
    Ok(())
}
