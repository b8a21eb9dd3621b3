use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use tissuegraph::attribution::{assignments_from_rows, load_pseudo_labels, save_pseudo_labels};
use tissuegraph::imaging::ChannelStats;
use tissuegraph::manifest::{DatasetManifest, Split};
use tissuegraph::metrics::{DiceAggregation, EvalOptions};
use tissuegraph::pipeline::{
    build_dataset, build_graph, evaluate, evaluate_attribution_baseline, load_dataset, pseudo_label_graphs,
    render_overlay, save_dataset, save_phase, segment, segment_by_attribution, GraphBuildParams, GraphSample,
};
use tissuegraph::synthetic::{generate_synthetic_dataset, SplitCounts, SyntheticSpec};
use tissuegraph::training::{
    finetune_joint, load_config, train_fully_supervised_nodes, train_graph_phase, train_node_phase, Checkpoint,
    NodeTargets, Phase, PhaseOutcome,
};
use tissuegraph::{DefaultEncoder, RasterImage, TissueGraph, TrainConfig};

const BUILD_PARAMS_FILE: &str = "build.json";

#[derive(Debug, Parser)]
#[command(name = "tissuegraph", version, about = "Tissue graph grading and segmentation from image-level labels")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic Voronoi dataset with masks and a manifest.
    SynthData(SynthArgs),
    /// Build tissue graphs for every manifest image.
    BuildGraph(BuildArgs),
    /// Train the backbone and graph heads from image labels.
    Train(TrainArgs),
    /// Derive pseudo node labels from a graph-phase checkpoint.
    PseudoLabel(PseudoArgs),
    /// Train the node head on pseudo labels (or ground truth with --supervised).
    TrainNodes(TrainNodesArgs),
    /// Jointly fine-tune backbone and node head.
    Finetune(FinetuneArgs),
    /// Compute a metric report on one split.
    Evaluate(EvaluateArgs),
    /// Predict a mask and overlay for a single image.
    Segment(SegmentArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 128)]
    size: usize,
    #[arg(long, default_value_t = 60)]
    train: usize,
    #[arg(long, default_value_t = 20)]
    val: usize,
    #[arg(long, default_value_t = 20)]
    test: usize,
    /// Use heavily overlapping class colors.
    #[arg(long)]
    overlap: bool,
    /// Replace the output directory if it exists.
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args)]
struct BuildArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    segments: usize,
    #[arg(long, default_value_t = 10.0)]
    compactness: f64,
    #[arg(long, default_value_t = 0.15)]
    merge_threshold: f64,
    #[arg(long, default_value_t = 60)]
    max_nodes: usize,
    #[arg(long, default_value_t = 12)]
    patch_size: usize,
    /// Defaults to the patch size.
    #[arg(long)]
    patch_stride: Option<usize>,
    /// Seed for random patch rotations and flips; none when absent.
    #[arg(long)]
    augment_seed: Option<u64>,
    /// Reference image for stain normalization; none when absent.
    #[arg(long)]
    stain_reference: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args)]
struct ConfigArg {
    /// key=value training configuration; defaults when absent.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<TrainConfig> {
        Ok(match &self.config {
            Some(p) => load_config(p)?,
            None => TrainConfig::default(),
        })
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    graphs: PathBuf,
    #[command(flatten)]
    config: ConfigArg,
    /// Run directory; the checkpoint goes to `<out>/phase1`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PseudoArgs {
    #[arg(long)]
    graphs: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainNodesArgs {
    #[arg(long)]
    graphs: PathBuf,
    #[arg(long, required_unless_present = "supervised")]
    pseudo_labels: Option<PathBuf>,
    #[arg(long, required_unless_present = "supervised")]
    checkpoint: Option<PathBuf>,
    /// Train everything on ground-truth node labels instead.
    #[arg(long, conflicts_with_all = ["pseudo_labels", "checkpoint"])]
    supervised: bool,
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct FinetuneArgs {
    #[arg(long)]
    graphs: PathBuf,
    #[arg(long)]
    pseudo_labels: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    graphs: PathBuf,
    /// Supplies ground-truth masks for Dice.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Segment with the raw attribution argmax instead of the node head.
    #[arg(long)]
    attribution_baseline: bool,
    /// Pool Dice per image instead of over all pixels.
    #[arg(long)]
    per_image_dice: bool,
    #[command(flatten)]
    config: ConfigArg,
    /// Report JSON; a reliability CSV is written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SegmentArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    image: PathBuf,
    /// Graph directory whose build settings are reused; desk-scale defaults when absent.
    #[arg(long)]
    graphs: Option<PathBuf>,
    #[arg(long)]
    attribution_baseline: bool,
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    overlay: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SynthData(a) => synth_data(a),
        Command::BuildGraph(a) => build_graphs(a),
        Command::Train(a) => train(a),
        Command::PseudoLabel(a) => pseudo_label(a),
        Command::TrainNodes(a) => train_nodes(a),
        Command::Finetune(a) => finetune(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Segment(a) => segment_cmd(a),
    }
}

/// Fills a sibling scratch directory, then renames it into place so a
/// failure leaves nothing at `out`.
fn staged_dir<F>(out: &Path, force: bool, fill: F) -> Result<()>
where
    F: FnOnce(&Path) -> Result<()>,
{
    if out.exists() && !force {
        bail!("{} already exists (use --force to replace it)", out.display());
    }
    let name = out
        .file_name()
        .ok_or_else(|| anyhow!("{} is not a directory name", out.display()))?
        .to_string_lossy()
        .into_owned();
    let parent = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent).with_context(|| format!("creating {}", parent.display()))?;
    let tmp = parent.join(format!(".{name}.partial-{}", std::process::id()));
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    fs::create_dir_all(&tmp)?;
    if let Err(e) = fill(&tmp) {
        let _ = fs::remove_dir_all(&tmp);
        return Err(e);
    }
    if out.exists() {
        fs::remove_dir_all(out).with_context(|| format!("removing {}", out.display()))?;
    }
    fs::rename(&tmp, out).with_context(|| format!("moving output into {}", out.display()))?;
    Ok(())
}

fn synth_data(a: SynthArgs) -> Result<()> {
    let mut spec = if a.overlap {
        SyntheticSpec::overlapping(a.seed)
    } else {
        SyntheticSpec::separable(a.seed)
    };
    spec.width = a.size;
    spec.height = a.size;
    let counts = SplitCounts {
        train: a.train,
        val: a.val,
        test: a.test,
    };
    staged_dir(&a.out, a.force, |dir| {
        let (manifest, warnings) = generate_synthetic_dataset(&spec, counts, dir)?;
        for w in warnings {
            eprintln!("warning: {w}");
        }
        println!("wrote {} images to {}", manifest.rows.len(), a.out.display());
        Ok(())
    })
}

fn build_graphs(a: BuildArgs) -> Result<()> {
    let manifest = DatasetManifest::load(&a.manifest)?;
    let stain_reference = match &a.stain_reference {
        Some(p) => Some(ChannelStats::of(&RasterImage::load(p)?)),
        None => None,
    };
    let params = GraphBuildParams {
        n_segments: a.segments,
        compactness: a.compactness,
        merge_threshold: a.merge_threshold,
        max_nodes: a.max_nodes,
        patch_size: a.patch_size,
        patch_stride: a.patch_stride.unwrap_or(a.patch_size),
        augment_seed: a.augment_seed,
        stain_reference,
        ..GraphBuildParams::default()
    };
    let samples = build_dataset(&manifest, &params, &DefaultEncoder)?;
    staged_dir(&a.out, a.force, |dir| {
        save_dataset(&samples, dir)?;
        let json = serde_json::to_string_pretty(&params)?;
        fs::write(dir.join(BUILD_PARAMS_FILE), json)?;
        Ok(())
    })?;
    let nodes: usize = samples.iter().map(|s| s.graph.num_nodes()).sum();
    println!(
        "built {} graphs ({:.1} nodes on average) in {}",
        samples.len(),
        nodes as f64 / samples.len().max(1) as f64,
        a.out.display()
    );
    Ok(())
}

fn graphs_of(samples: &[GraphSample], split: Split) -> Vec<&GraphSample> {
    samples.iter().filter(|s| s.split == split).collect()
}

fn owned(samples: &[&GraphSample]) -> Vec<TissueGraph> {
    samples.iter().map(|s| s.graph.clone()).collect()
}

fn write_phase(outcome: &PhaseOutcome, run_dir: &Path) -> Result<()> {
    let dir = run_dir.join(outcome.checkpoint.phase.dir_name());
    fs::create_dir_all(&dir)?;
    save_phase(outcome, &dir)?;
    let h = &outcome.history;
    println!(
        "{}: kept epoch {} of {}{} -> {}",
        outcome.checkpoint.phase.dir_name(),
        h.best_epoch,
        h.epochs.len(),
        if h.stopped_early { " (stopped early)" } else { "" },
        dir.join("best.ckpt").display()
    );
    Ok(())
}

fn expect_phase(ckpt: &Checkpoint, phase: Phase, path: &Path) -> Result<()> {
    if ckpt.phase != phase {
        bail!(
            "{} is a {} checkpoint, expected {}",
            path.display(),
            ckpt.phase.dir_name(),
            phase.dir_name()
        );
    }
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let cfg = a.config.load()?;
    let samples = load_dataset(&a.graphs, None)?;
    let train = owned(&graphs_of(&samples, Split::Train));
    let val = owned(&graphs_of(&samples, Split::Val));
    let outcome = train_graph_phase(&train, &val, &cfg)?;
    write_phase(&outcome, &a.out)
}

fn pseudo_label(a: PseudoArgs) -> Result<()> {
    let cfg = a.config.load()?;
    let samples = load_dataset(&a.graphs, None)?;
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    expect_phase(&ckpt, Phase::Graph, &a.checkpoint)?;
    let model = ckpt.model()?;
    let train = graphs_of(&samples, Split::Train);
    let sets = pseudo_label_graphs(&model, &train, &cfg)?;
    save_pseudo_labels(&a.out, &sets)?;
    let assigned: usize = sets.iter().map(|(_, s)| s.num_assigned()).sum();
    println!("{assigned} node labels for {} graphs -> {}", sets.len(), a.out.display());
    Ok(())
}

fn pseudo_targets(path: &Path, train: &[&GraphSample]) -> Result<Vec<NodeTargets>> {
    let mut rows = load_pseudo_labels(path)?;
    let targets = train
        .iter()
        .map(|s| assignments_from_rows(&rows.remove(&s.id).unwrap_or_default(), s.graph.num_nodes()))
        .collect::<tissuegraph::Result<Vec<_>>>()?;
    if let Some(id) = rows.keys().next() {
        bail!("{}: graph {id} is not in the training split", path.display());
    }
    Ok(targets)
}

fn train_nodes(a: TrainNodesArgs) -> Result<()> {
    let cfg = a.config.load()?;
    let samples = load_dataset(&a.graphs, None)?;
    let train = graphs_of(&samples, Split::Train);
    let val = owned(&graphs_of(&samples, Split::Val));
    let outcome = if a.supervised {
        train_fully_supervised_nodes(&owned(&train), &val, &cfg)?
    } else {
        let (labels, ckpt_path) = (a.pseudo_labels.unwrap(), a.checkpoint.unwrap());
        let ckpt = Checkpoint::load(&ckpt_path)?;
        expect_phase(&ckpt, Phase::Graph, &ckpt_path)?;
        let targets = pseudo_targets(&labels, &train)?;
        train_node_phase(&owned(&train), &targets, &val, &cfg, &ckpt)?
    };
    write_phase(&outcome, &a.out)
}

fn finetune(a: FinetuneArgs) -> Result<()> {
    let cfg = a.config.load()?;
    let samples = load_dataset(&a.graphs, None)?;
    let train = graphs_of(&samples, Split::Train);
    let val = owned(&graphs_of(&samples, Split::Val));
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    expect_phase(&ckpt, Phase::Node, &a.checkpoint)?;
    let targets = pseudo_targets(&a.pseudo_labels, &train)?;
    let outcome = finetune_joint(&owned(&train), &targets, &val, &cfg, &ckpt)?;
    write_phase(&outcome, &a.out)
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let cfg = a.config.load()?;
    let manifest = match &a.manifest {
        Some(p) => Some(DatasetManifest::load(p)?),
        None => None,
    };
    let samples = load_dataset(&a.graphs, manifest.as_ref())?;
    let chosen = graphs_of(&samples, a.split);
    if chosen.is_empty() {
        bail!("no graphs in the {} split", a.split.as_str());
    }
    let model = Checkpoint::load(&a.checkpoint)?.model()?;
    let options = EvalOptions {
        ece_bins: cfg.ece_bins,
        dice: if a.per_image_dice {
            DiceAggregation::PerImage
        } else {
            DiceAggregation::Micro
        },
    };
    let report = if a.attribution_baseline {
        evaluate_attribution_baseline(&model, &chosen, &options)?
    } else {
        evaluate(&model, &chosen, &options)?
    };
    report.save_json(&a.out)?;
    report.save_reliability_csv(&a.out.with_extension("reliability.csv"))?;
    let dice = report.dice.as_ref().map(|d| format!("{:.4}", d.average)).unwrap_or_else(|| "n/a".into());
    println!(
        "{} images: wF1 {:.4} kappa {:.4} dice {dice} ece {:.4} -> {}",
        report.num_images,
        report.weighted_f1,
        report.quadratic_kappa,
        report.ece,
        a.out.display()
    );
    Ok(())
}

fn segment_cmd(a: SegmentArgs) -> Result<()> {
    let params = match &a.graphs {
        Some(dir) => {
            let path = dir.join(BUILD_PARAMS_FILE);
            let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => GraphBuildParams::desk_scale(),
    };
    let model = Checkpoint::load(&a.checkpoint)?.model()?;
    let img = RasterImage::load(&a.image)?;
    let (graph, sp) = build_graph(&img, None, None, &params, &DefaultEncoder)?;
    let mask = if a.attribution_baseline {
        segment_by_attribution(&model, &graph, &sp)?
    } else {
        segment(&model, &graph, &sp)?
    };
    mask.save(&a.mask)?;
    if let Some(path) = &a.overlay {
        render_overlay(&img, &mask)?.save(path)?;
    }
    let hist: BTreeMap<String, usize> = tissuegraph::Pattern::ALL
        .iter()
        .zip(mask.histogram())
        .map(|(p, n)| (p.to_string(), n))
        .collect();
    println!("{} nodes, pixels per class {hist:?} -> {}", graph.num_nodes(), a.mask.display());
    Ok(())
}
