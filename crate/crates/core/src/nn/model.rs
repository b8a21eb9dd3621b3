use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{gin_layer, readout_mean, Mlp, Pass};
use super::params::{ModelParameters, ParamGroup, ParamId};
use super::tape::{Adjacency, Tape, Var};
use super::Matrix;
use crate::error::{Error, Result};
use crate::graph::TissueGraph;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Node feature dimension including the two centroid coordinates.
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// Number of GIN layers `T`.
    pub layers: usize,
    pub head_hidden: usize,
    pub num_classes: usize,
    pub backbone_dropout: f64,
    pub graph_head_dropout: f64,
    pub node_head_dropout: f64,
}

impl ModelConfig {
    /// Width of the jumping-knowledge node embedding.
    pub fn embedding_dim(&self) -> usize {
        self.layers * self.hidden_dim
    }
}

/// GIN backbone with jumping-knowledge concatenation, two graph heads
/// (primary and secondary pattern) on the mean readout, and a node head.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParameters,
    backbone: Vec<Mlp>,
    head_primary: Mlp,
    head_secondary: Mlp,
    node_head: Mlp,
}

/// Values recorded by a full forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Per-layer node embeddings `h^(1) .. h^(T)`.
    pub layers: Vec<Var>,
    /// Concatenated node embeddings `H^(T)`, `|V| × T·hidden`.
    pub embeddings: Var,
    pub graph_embedding: Var,
    pub logits_primary: Var,
    pub logits_secondary: Var,
    pub node_logits: Option<Var>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphPrediction {
    pub probs_primary: Vec<f64>,
    pub probs_secondary: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodePrediction {
    /// `|V| × K` node posteriors.
    pub probs: Matrix,
}

impl NodePrediction {
    pub fn classes(&self) -> Vec<usize> {
        (0..self.probs.rows()).map(|r| softmax_argmax(self.probs.row(r))).collect()
    }
}

/// Index of the largest entry; ties go to the lower index.
pub fn softmax_argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

struct Layout {
    backbone: Vec<Mlp>,
    head_primary: Mlp,
    head_secondary: Mlp,
    node_head: Mlp,
}

impl Model {
    /// Fresh model with Glorot-uniform weights and zero biases drawn from
    /// `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        validate_config(&config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ModelParameters::new();
        let h = config.hidden_dim;
        let mut backbone = Vec::with_capacity(config.layers);
        for t in 0..config.layers {
            let input = if t == 0 { config.input_dim } else { h };
            backbone.push(Mlp::init(
                &mut params,
                &format!("backbone.{t}"),
                ParamGroup::Backbone,
                &[input, h, h],
                config.backbone_dropout,
                &mut rng,
            ));
        }
        let head_dims = [config.embedding_dim(), config.head_hidden, config.num_classes];
        let head_primary = Mlp::init(
            &mut params,
            "graph_head_primary",
            ParamGroup::GraphHeadPrimary,
            &head_dims,
            config.graph_head_dropout,
            &mut rng,
        );
        let head_secondary = Mlp::init(
            &mut params,
            "graph_head_secondary",
            ParamGroup::GraphHeadSecondary,
            &head_dims,
            config.graph_head_dropout,
            &mut rng,
        );
        let node_head = Mlp::init(
            &mut params,
            "node_head",
            ParamGroup::NodeHead,
            &head_dims,
            config.node_head_dropout,
            &mut rng,
        );
        Ok(Self {
            config,
            params,
            backbone,
            head_primary,
            head_secondary,
            node_head,
        })
    }

    /// Reassembles a model from stored parameters, checking every expected
    /// name and shape.
    pub fn from_parameters(config: ModelConfig, params: ModelParameters) -> Result<Self> {
        validate_config(&config)?;
        let layout = Self::layout(&config, &params)?;
        Ok(Self {
            config,
            params,
            backbone: layout.backbone,
            head_primary: layout.head_primary,
            head_secondary: layout.head_secondary,
            node_head: layout.node_head,
        })
    }

    fn layout(config: &ModelConfig, params: &ModelParameters) -> Result<Layout> {
        let lookup = |name: String, rows: usize, cols: usize| -> Result<ParamId> {
            let id = params
                .find(&name)
                .ok_or_else(|| Error::format("checkpoint", format!("missing parameter `{name}`")))?;
            if params.value(id).shape() != (rows, cols) {
                return Err(Error::format(
                    "checkpoint",
                    format!(
                        "parameter `{name}` has shape {:?}, expected ({rows}, {cols})",
                        params.value(id).shape()
                    ),
                ));
            }
            Ok(id)
        };
        let mlp = |name: &str, dims: &[usize], dropout: f64| -> Result<Mlp> {
            let layers = dims
                .windows(2)
                .enumerate()
                .map(|(i, d)| {
                    Ok((
                        lookup(format!("{name}.{i}.w"), d[0], d[1])?,
                        lookup(format!("{name}.{i}.b"), 1, d[1])?,
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Mlp { layers, dropout })
        };
        let h = config.hidden_dim;
        let backbone = (0..config.layers)
            .map(|t| {
                let input = if t == 0 { config.input_dim } else { h };
                mlp(&format!("backbone.{t}"), &[input, h, h], config.backbone_dropout)
            })
            .collect::<Result<Vec<_>>>()?;
        let head_dims = [config.embedding_dim(), config.head_hidden, config.num_classes];
        Ok(Layout {
            backbone,
            head_primary: mlp("graph_head_primary", &head_dims, config.graph_head_dropout)?,
            head_secondary: mlp("graph_head_secondary", &head_dims, config.graph_head_dropout)?,
            node_head: mlp("node_head", &head_dims, config.node_head_dropout)?,
        })
    }

    pub fn backbone_mlps(&self) -> &[Mlp] {
        &self.backbone
    }

    pub fn node_head_mlp(&self) -> &Mlp {
        &self.node_head
    }

    pub fn graph_head_mlps(&self) -> (&Mlp, &Mlp) {
        (&self.head_primary, &self.head_secondary)
    }

    /// Backbone forward: `T` GIN layers whose outputs are concatenated
    /// (jumping knowledge). `input` holds node features and centroids.
    pub fn embed(
        &self,
        tape: &mut Tape,
        input: &Matrix,
        adj: &Rc<Adjacency>,
        pass: &mut Pass<'_>,
    ) -> Result<(Vec<Var>, Var)> {
        if input.cols() != self.config.input_dim {
            return Err(Error::Shape(format!(
                "model expects {} input features, graph provides {}",
                self.config.input_dim,
                input.cols()
            )));
        }
        let mut h = tape.constant(input.clone());
        let mut layers = Vec::with_capacity(self.backbone.len());
        for mlp in &self.backbone {
            h = gin_layer(tape, &self.params, h, adj, mlp, pass)?;
            layers.push(h);
        }
        let concat = if layers.len() == 1 {
            layers[0]
        } else {
            tape.concat(&layers)?
        };
        Ok((layers, concat))
    }

    /// Mean readout followed by the primary and secondary heads; returns
    /// `(h_G, logits_primary, logits_secondary)`.
    pub fn graph_heads(
        &self,
        tape: &mut Tape,
        embeddings: Var,
        pass: &mut Pass<'_>,
    ) -> Result<(Var, Var, Var)> {
        let hg = readout_mean(tape, embeddings)?;
        let lp = self.head_primary.forward(tape, &self.params, hg, pass)?;
        let ls = self.head_secondary.forward(tape, &self.params, hg, pass)?;
        Ok((hg, lp, ls))
    }

    /// Row-wise node classification logits, `|V| × K`.
    pub fn node_logits(&self, tape: &mut Tape, embeddings: Var, pass: &mut Pass<'_>) -> Result<Var> {
        self.node_head.forward(tape, &self.params, embeddings, pass)
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        graph: &TissueGraph,
        pass: &mut Pass<'_>,
        with_node_head: bool,
    ) -> Result<ForwardOutput> {
        let adj = Rc::new(graph.adjacency()?);
        let (layers, embeddings) = self.embed(tape, &graph.model_input()?, &adj, pass)?;
        let (graph_embedding, logits_primary, logits_secondary) =
            self.graph_heads(tape, embeddings, pass)?;
        let node_logits = if with_node_head {
            Some(self.node_logits(tape, embeddings, pass)?)
        } else {
            None
        };
        Ok(ForwardOutput {
            layers,
            embeddings,
            graph_embedding,
            logits_primary,
            logits_secondary,
            node_logits,
        })
    }

    /// Inference-mode embeddings `H^(T)`.
    pub fn embeddings(&self, graph: &TissueGraph) -> Result<Matrix> {
        let mut tape = Tape::new();
        let adj = Rc::new(graph.adjacency()?);
        let (_, emb) = self.embed(&mut tape, &graph.model_input()?, &adj, &mut Pass::Inference)?;
        Ok(tape.value(emb).clone())
    }

    pub fn predict_graph(&self, graph: &TissueGraph) -> Result<GraphPrediction> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, graph, &mut Pass::Inference, false)?;
        Ok(GraphPrediction {
            probs_primary: softmax(tape.value(out.logits_primary).data()),
            probs_secondary: softmax(tape.value(out.logits_secondary).data()),
        })
    }

    pub fn predict_nodes(&self, graph: &TissueGraph) -> Result<NodePrediction> {
        let mut tape = Tape::new();
        let adj = Rc::new(graph.adjacency()?);
        let (_, emb) = self.embed(&mut tape, &graph.model_input()?, &adj, &mut Pass::Inference)?;
        let logits = self.node_logits(&mut tape, emb, &mut Pass::Inference)?;
        let z = tape.value(logits);
        let mut probs = Matrix::zeros(z.rows(), z.cols());
        for r in 0..z.rows() {
            probs.row_mut(r).copy_from_slice(&softmax(z.row(r)));
        }
        Ok(NodePrediction { probs })
    }
}

fn validate_config(c: &ModelConfig) -> Result<()> {
    if c.layers == 0 {
        return Err(Error::InvalidInput("the backbone needs at least one GIN layer".into()));
    }
    if c.input_dim == 0 || c.hidden_dim == 0 || c.head_hidden == 0 || c.num_classes < 2 {
        return Err(Error::InvalidInput("model dimensions must be positive".into()));
    }
    for p in [c.backbone_dropout, c.graph_head_dropout, c.node_head_dropout] {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidInput(format!("dropout rate {p} outside [0, 1)")));
        }
    }
    Ok(())
}
