use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::{ModelParameters, ParamGroup, ParamId};
use super::tape::{Adjacency, Tape, Var};
use super::Matrix;
use crate::error::{Error, Result};

/// Forward-pass mode: inference ignores dropout, training draws inverted
/// dropout masks from the given generator.
pub enum Pass<'a> {
    Inference,
    Training(&'a mut ChaCha8Rng),
}

impl Pass<'_> {
    pub fn is_training(&self) -> bool {
        matches!(self, Pass::Training(_))
    }
}

/// Affine layers with ReLU and dropout between them; the final layer has
/// no activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<(ParamId, ParamId)>,
    pub dropout: f64,
}

impl Mlp {
    /// Adds weights `name.{i}.w` (Glorot-uniform) and biases `name.{i}.b`
    /// (zero) for consecutive `dims`.
    pub fn init(
        params: &mut ModelParameters,
        name: &str,
        group: ParamGroup,
        dims: &[usize],
        dropout: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| {
                let w = params.add_glorot(format!("{name}.{i}.w"), group, d[0], d[1], rng);
                let b = params.add(format!("{name}.{i}.b"), group, Matrix::zeros(1, d[1]));
                (w, b)
            })
            .collect();
        Self { layers, dropout }
    }

    pub fn in_dim(&self, params: &ModelParameters) -> usize {
        params.value(self.layers[0].0).rows()
    }

    pub fn out_dim(&self, params: &ModelParameters) -> usize {
        params.value(self.layers[self.layers.len() - 1].0).cols()
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &ModelParameters,
        x: Var,
        pass: &mut Pass<'_>,
    ) -> Result<Var> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let wv = tape.param(params, w);
            let bv = tape.param(params, b);
            h = tape.matmul(h, wv)?;
            h = tape.add_row(h, bv)?;
            if i < last {
                h = tape.relu(h)?;
                if let Pass::Training(rng) = pass {
                    if self.dropout > 0.0 {
                        let keep = 1.0 - self.dropout;
                        let n = tape.value(h).data().len();
                        let mask = (0..n)
                            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                            .collect();
                        h = tape.dropout(h, mask)?;
                    }
                }
            }
        }
        Ok(h)
    }
}

/// Evaluates an MLP on a plain matrix.
pub fn mlp_forward(
    x: &Matrix,
    mlp: &Mlp,
    params: &ModelParameters,
    pass: &mut Pass<'_>,
) -> Result<Matrix> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let out = mlp.forward(&mut tape, params, xv, pass)?;
    Ok(tape.value(out).clone())
}

/// One mean-aggregation GIN layer:
/// `h'(v) = MLP(h(v) + (1/|N(v)|) Σ_{u∈N(v)} h(u))`.
pub fn gin_layer(
    tape: &mut Tape,
    params: &ModelParameters,
    h: Var,
    adj: &Rc<Adjacency>,
    mlp: &Mlp,
    pass: &mut Pass<'_>,
) -> Result<Var> {
    let aggregated = tape.aggregate(h, adj)?;
    mlp.forward(tape, params, aggregated, pass)
}

/// Column-wise mean over nodes.
pub fn readout_mean(tape: &mut Tape, h: Var) -> Result<Var> {
    if tape.value(h).rows() == 0 {
        return Err(Error::InvalidInput("readout of an empty graph".into()));
    }
    tape.mean_rows(h)
}
