use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, Phase, CHECKPOINT_FORMAT_VERSION};
use super::config::TrainConfig;
use super::predict::{embed_all, evaluate_wf1, node_accuracy};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::graph::TissueGraph;
use crate::heads::{class_weights, graph_loss_on_tape, GleasonLabel, Pattern, NUM_CLASSES};
use crate::nn::{Matrix, Model, ModelParameters, Optimizer, ParamGrads, ParamGroup, Pass, Tape, Var};

/// Per-node training targets of one graph; `None` nodes are left out of the
/// node loss.
pub type NodeTargets = Vec<Option<Pattern>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss over the epoch's batches, dropout active.
    pub train_loss: f64,
    /// Mean inference-mode objective on the training items after the
    /// epoch's updates; recorded by the fine-tuning phase.
    #[serde(default)]
    pub objective: Option<f64>,
    pub validation_wf1: Option<f64>,
    pub validation_node_accuracy: Option<f64>,
}

/// Per-epoch record of one phase, written as `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseHistory {
    pub phase: Phase,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl PhaseHistory {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fsutil::write_atomic(path, text.as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseOutcome {
    pub checkpoint: Checkpoint,
    pub history: PhaseHistory,
}

/// How the returned epoch is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Selection {
    /// Highest validation grade wF1, earlier epoch on ties.
    Wf1,
    /// Highest validation node accuracy, earlier epoch on ties.
    NodeAccuracy,
    /// The last epoch.
    Final,
}

struct LoopSpec<'a> {
    phase: Phase,
    epochs: usize,
    lr: f64,
    selection: Selection,
    validation: &'a [TissueGraph],
    rng_stream: u64,
    track_objective: bool,
}

fn labels_of(graphs: &[TissueGraph]) -> Result<Vec<GleasonLabel>> {
    graphs
        .iter()
        .enumerate()
        .map(|(i, g)| {
            g.image_label
                .ok_or_else(|| Error::InvalidInput(format!("graph {i} has no image label")))
        })
        .collect()
}

/// Class counts pooled over the primary and secondary labels.
pub fn graph_class_counts(labels: &[GleasonLabel]) -> [usize; NUM_CLASSES] {
    let mut counts = [0; NUM_CLASSES];
    for l in labels {
        counts[l.primary().index()] += 1;
        counts[l.secondary().index()] += 1;
    }
    counts
}

pub fn node_class_counts(targets: &[NodeTargets]) -> [usize; NUM_CLASSES] {
    let mut counts = [0; NUM_CLASSES];
    for t in targets.iter().flatten().flatten() {
        counts[t.index()] += 1;
    }
    counts
}

fn indices(targets: &[Option<Pattern>]) -> Vec<Option<usize>> {
    targets.iter().map(|t| t.map(Pattern::index)).collect()
}

fn check_targets(graphs: &[TissueGraph], targets: &[NodeTargets]) -> Result<()> {
    if graphs.len() != targets.len() {
        return Err(Error::InvalidInput(format!(
            "{} node target sets for {} graphs",
            targets.len(),
            graphs.len()
        )));
    }
    for (i, (g, t)) in graphs.iter().zip(targets).enumerate() {
        if g.num_nodes() != t.len() {
            return Err(Error::InvalidInput(format!(
                "graph {i} has {} nodes but {} node targets",
                g.num_nodes(),
                t.len()
            )));
        }
    }
    Ok(())
}

fn check_validation(val: &[TissueGraph]) -> Result<()> {
    if val.is_empty() {
        return Err(Error::InvalidInput("empty validation set".into()));
    }
    labels_of(val).map(|_| ())
}

fn new_optimizer(cfg: &TrainConfig, lr: f64) -> Result<Optimizer> {
    let mut opt = Optimizer::new(cfg.optimizer, lr)?;
    opt.weight_decay = cfg.weight_decay;
    Ok(opt)
}

/// Mini-batch loop shared by all phases: shuffles the items every epoch,
/// averages item gradients per batch, steps the optimizer, and keeps the
/// selected epoch.
fn train_loop<F>(
    model: &mut Model,
    cfg: &TrainConfig,
    spec: LoopSpec<'_>,
    num_items: usize,
    mut item_loss: F,
) -> Result<PhaseOutcome>
where
    F: FnMut(&Model, &mut Tape, usize, &mut Pass<'_>) -> Result<Option<Var>>,
{
    if num_items == 0 {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    let mut opt = new_optimizer(cfg, spec.lr)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(spec.rng_stream);
    let mut order: Vec<usize> = (0..num_items).collect();
    let mut records: Vec<EpochRecord> = Vec::new();
    // (score, epoch, params, optimizer state)
    let mut best: Option<(f64, usize, ModelParameters, Optimizer)> = None;
    let mut stopped_early = false;

    for epoch in 1..=spec.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let mut item_grads = Vec::with_capacity(batch.len());
            for &item in batch {
                let mut tape = Tape::new();
                let loss = {
                    let mut pass = Pass::Training(&mut rng);
                    item_loss(model, &mut tape, item, &mut pass)?
                };
                let Some(loss) = loss else { continue };
                let value = tape.value(loss).get(0, 0);
                if !value.is_finite() {
                    return Err(Error::Numeric(format!("non-finite loss in epoch {epoch}")));
                }
                loss_sum += value;
                loss_count += 1;
                item_grads.push(tape.backward(loss)?.into_param_grads(&model.params));
            }
            if item_grads.is_empty() {
                continue;
            }
            let mut grads = ParamGrads::new(model.params.len());
            let scale = 1.0 / item_grads.len() as f64;
            for g in &item_grads {
                grads.accumulate(g, scale)?;
            }
            opt.step(&mut model.params, &grads)?;
        }
        model.params.check_finite()?;

        let objective = if spec.track_objective {
            let (mut sum, mut count) = (0.0, 0usize);
            for item in 0..num_items {
                let mut tape = Tape::new();
                if let Some(loss) = item_loss(model, &mut tape, item, &mut Pass::Inference)? {
                    sum += tape.value(loss).get(0, 0);
                    count += 1;
                }
            }
            (count > 0).then(|| sum / count as f64)
        } else {
            None
        };
        let wf1 = if spec.validation.is_empty() {
            None
        } else {
            Some(evaluate_wf1(model, spec.validation)?)
        };
        let node_acc = match spec.selection {
            Selection::NodeAccuracy => Some(node_accuracy(model, spec.validation)?),
            _ => None,
        };
        records.push(EpochRecord {
            epoch,
            train_loss: if loss_count > 0 { loss_sum / loss_count as f64 } else { 0.0 },
            objective,
            validation_wf1: wf1,
            validation_node_accuracy: node_acc,
        });
        let score = match spec.selection {
            Selection::Wf1 => wf1,
            Selection::NodeAccuracy => node_acc,
            Selection::Final => None,
        };
        let improved = match (&best, score) {
            (Some((b, ..)), Some(s)) => s > *b,
            _ => true,
        };
        if improved {
            best = Some((score.unwrap_or(0.0), epoch, model.params.clone(), opt.clone()));
        }
        if let (Some((_, best_epoch, ..)), Some(_)) = (&best, score) {
            if epoch - best_epoch >= cfg.patience && epoch < spec.epochs {
                stopped_early = true;
                break;
            }
        }
    }

    let (best_epoch, params, optimizer) = match best {
        Some((_, e, p, o)) => (e, p, o),
        None => (0, model.params.clone(), opt),
    };
    model.params = params.clone();
    let validation_wf1 = match best_epoch {
        0 if !spec.validation.is_empty() => Some(evaluate_wf1(model, spec.validation)?),
        0 => None,
        e => records[e - 1].validation_wf1,
    };
    Ok(PhaseOutcome {
        checkpoint: Checkpoint {
            version: CHECKPOINT_FORMAT_VERSION,
            phase: spec.phase,
            model_config: model.config.clone(),
            params,
            optimizer,
            train_config: cfg.clone(),
            seed: cfg.seed,
            epoch: best_epoch,
            validation_wf1,
        },
        history: PhaseHistory {
            phase: spec.phase,
            epochs: records,
            best_epoch,
            stopped_early,
        },
    })
}

fn node_term(
    tape: &mut Tape,
    model: &Model,
    embeddings: Var,
    targets: &[Option<usize>],
    weights: &[f64],
    pass: &mut Pass<'_>,
) -> Result<Option<Var>> {
    if targets.iter().all(Option::is_none) {
        return Ok(None);
    }
    let logits = model.node_logits(tape, embeddings, pass)?;
    Ok(Some(tape.weighted_ce(logits, targets, weights)?))
}

/// Trains the backbone and both graph heads on the image labels, keeping
/// the node head frozen. Returns the epoch with the best validation
/// weighted F1.
pub fn train_graph_phase(
    train: &[TissueGraph],
    val: &[TissueGraph],
    cfg: &TrainConfig,
) -> Result<PhaseOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    check_validation(val)?;
    let labels = labels_of(train)?;
    let weights = class_weights(&graph_class_counts(&labels))?;
    let mut model = Model::new(cfg.model_config(train[0].feature_dim()), cfg.seed)?;
    model.params.freeze_only(&[ParamGroup::NodeHead]);
    let spec = LoopSpec {
        phase: Phase::Graph,
        epochs: cfg.epochs_graph,
        lr: cfg.lr,
        selection: Selection::Wf1,
        validation: val,
        rng_stream: 1,
        track_objective: false,
    };
    let lambda = cfg.lambda;
    train_loop(&mut model, cfg, spec, train.len(), |model, tape, i, pass| {
        let out = model.forward(tape, &train[i], pass, false)?;
        graph_loss_on_tape(tape, out.logits_primary, out.logits_secondary, &labels[i], lambda, &weights)
            .map(Some)
    })
}

/// Trains only the node head on pseudo labels over the frozen backbone.
/// Embeddings are computed once in inference mode. Validation wF1 cannot
/// change in this phase, so the last epoch is returned.
pub fn train_node_phase(
    train: &[TissueGraph],
    targets: &[NodeTargets],
    val: &[TissueGraph],
    cfg: &TrainConfig,
    checkpoint: &Checkpoint,
) -> Result<PhaseOutcome> {
    cfg.validate()?;
    check_targets(train, targets)?;
    let counts = node_class_counts(targets);
    if counts.iter().sum::<usize>() == 0 {
        return Err(Error::InvalidInput("no pseudo-labelled nodes to train on".into()));
    }
    let weights = class_weights(&counts)?;
    let mut model = checkpoint.model()?;
    model.params.freeze_only(&[ParamGroup::Backbone, ParamGroup::GraphHeadPrimary, ParamGroup::GraphHeadSecondary]);
    let items: Vec<usize> = (0..train.len()).filter(|&i| targets[i].iter().any(Option::is_some)).collect();
    let embeddings: Vec<Matrix> = embed_all(&model, &items.iter().map(|&i| train[i].clone()).collect::<Vec<_>>())?;
    let item_targets: Vec<Vec<Option<usize>>> = items.iter().map(|&i| indices(&targets[i])).collect();
    let spec = LoopSpec {
        phase: Phase::Node,
        epochs: cfg.epochs_node,
        lr: cfg.lr,
        selection: Selection::Final,
        validation: val,
        rng_stream: 2,
        track_objective: false,
    };
    train_loop(&mut model, cfg, spec, items.len(), |model, tape, i, pass| {
        let h = tape.constant(embeddings[i].clone());
        node_term(tape, model, h, &item_targets[i], &weights, pass)
    })
}

/// Jointly fine-tunes the backbone and node head with the graph heads
/// frozen, on `graph loss + node_loss_weight · node loss` at the
/// fine-tuning learning rate.
pub fn finetune_joint(
    train: &[TissueGraph],
    targets: &[NodeTargets],
    val: &[TissueGraph],
    cfg: &TrainConfig,
    checkpoint: &Checkpoint,
) -> Result<PhaseOutcome> {
    cfg.validate()?;
    check_targets(train, targets)?;
    check_validation(val)?;
    let labels = labels_of(train)?;
    let graph_weights = class_weights(&graph_class_counts(&labels))?;
    let counts = node_class_counts(targets);
    let node_weights = if counts.iter().sum::<usize>() > 0 {
        class_weights(&counts)?
    } else {
        vec![1.0; NUM_CLASSES]
    };
    let item_targets: Vec<Vec<Option<usize>>> = targets.iter().map(|t| indices(t)).collect();
    let mut model = checkpoint.model()?;
    model.params.freeze_only(&[ParamGroup::GraphHeadPrimary, ParamGroup::GraphHeadSecondary]);
    let spec = LoopSpec {
        phase: Phase::Finetune,
        epochs: cfg.epochs_finetune,
        lr: cfg.finetune_lr(),
        selection: Selection::Wf1,
        validation: val,
        rng_stream: 3,
        track_objective: true,
    };
    let (lambda, w) = (cfg.lambda, cfg.node_loss_weight);
    train_loop(&mut model, cfg, spec, train.len(), |model, tape, i, pass| {
        let out = model.forward(tape, &train[i], pass, false)?;
        let g = graph_loss_on_tape(tape, out.logits_primary, out.logits_secondary, &labels[i], lambda, &graph_weights)?;
        if w == 0.0 {
            return Ok(Some(g));
        }
        match node_term(tape, model, out.embeddings, &item_targets[i], &node_weights, pass)? {
            Some(n) => {
                let n = tape.scale(n, w)?;
                Ok(Some(tape.add(g, n)?))
            }
            None => Ok(Some(g)),
        }
    })
}

/// Trains backbone, graph heads and node head together from ground-truth
/// node labels (the fully supervised upper bound). The returned epoch
/// maximizes validation node accuracy.
pub fn train_fully_supervised_nodes(
    train: &[TissueGraph],
    val: &[TissueGraph],
    cfg: &TrainConfig,
) -> Result<PhaseOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    check_validation(val)?;
    if let Some(i) = train.iter().position(|g| !g.has_node_labels()) {
        return Err(Error::InvalidInput(format!("training graph {i} has no node labels")));
    }
    if !val.iter().any(TissueGraph::has_node_labels) {
        return Err(Error::InvalidInput("validation graphs have no node labels".into()));
    }
    let labels = labels_of(train)?;
    let graph_weights = class_weights(&graph_class_counts(&labels))?;
    let targets: Vec<NodeTargets> = train.iter().map(|g| g.node_labels.clone()).collect();
    let node_weights = class_weights(&node_class_counts(&targets))?;
    let item_targets: Vec<Vec<Option<usize>>> = targets.iter().map(|t| indices(t)).collect();
    let mut model = Model::new(cfg.model_config(train[0].feature_dim()), cfg.seed)?;
    model.params.freeze_only(&[]);
    let spec = LoopSpec {
        phase: Phase::Supervised,
        epochs: cfg.epochs_graph,
        lr: cfg.lr,
        selection: Selection::NodeAccuracy,
        validation: val,
        rng_stream: 4,
        track_objective: false,
    };
    let lambda = cfg.lambda;
    train_loop(&mut model, cfg, spec, train.len(), |model, tape, i, pass| {
        let out = model.forward(tape, &train[i], pass, false)?;
        let g = graph_loss_on_tape(tape, out.logits_primary, out.logits_secondary, &labels[i], lambda, &graph_weights)?;
        match node_term(tape, model, out.embeddings, &item_targets[i], &node_weights, pass)? {
            Some(n) => Ok(Some(tape.add(g, n)?)),
            None => Ok(Some(g)),
        }
    })
}

/// Mean inference-mode graph loss.
pub fn mean_graph_loss(model: &Model, graphs: &[TissueGraph], lambda: f64) -> Result<f64> {
    let labels = labels_of(graphs)?;
    let weights = class_weights(&graph_class_counts(&labels))?;
    let mut total = 0.0;
    for (g, l) in graphs.iter().zip(&labels) {
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, g, &mut Pass::Inference, false)?;
        let loss = graph_loss_on_tape(&mut tape, out.logits_primary, out.logits_secondary, l, lambda, &weights)?;
        total += tape.value(loss).get(0, 0);
    }
    Ok(total / graphs.len() as f64)
}

/// Mean inference-mode node loss over graphs with at least one target,
/// weighted by the target class counts.
pub fn mean_node_loss(model: &Model, graphs: &[TissueGraph], targets: &[NodeTargets]) -> Result<f64> {
    check_targets(graphs, targets)?;
    let weights = class_weights(&node_class_counts(targets))?;
    let (mut total, mut n) = (0.0, 0usize);
    for (g, t) in graphs.iter().zip(targets) {
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, g, &mut Pass::Inference, true)?;
        let idx = indices(t);
        if idx.iter().all(Option::is_none) {
            continue;
        }
        let logits = out.node_logits.expect("node head requested");
        let loss = tape.weighted_ce(logits, &idx, &weights)?;
        total += tape.value(loss).get(0, 0);
        n += 1;
    }
    if n == 0 {
        return Err(Error::InvalidInput("no labelled nodes".into()));
    }
    Ok(total / n as f64)
}
