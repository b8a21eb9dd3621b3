use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};

/// Which sub-network owns a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Backbone,
    GraphHeadPrimary,
    GraphHeadSecondary,
    NodeHead,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 4] = [
        ParamGroup::Backbone,
        ParamGroup::GraphHeadPrimary,
        ParamGroup::GraphHeadSecondary,
        ParamGroup::NodeHead,
    ];

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub group: ParamGroup,
    pub value: Matrix,
}

/// Named weight matrices grouped by owner, with a frozen flag per group.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelParameters {
    params: Vec<Param>,
    frozen: [bool; 4],
}

impl ModelParameters {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, group: ParamGroup, value: Matrix) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            group,
            value,
        });
        ParamId(self.params.len() - 1)
    }

    /// Glorot-uniform weight in `±sqrt(6 / (fan_in + fan_out))`.
    pub fn add_glorot<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        group: ParamGroup,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> ParamId {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        let m = Matrix::from_vec(fan_in, fan_out, data).expect("sized above");
        self.add(name, group, m)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn set_frozen(&mut self, group: ParamGroup, frozen: bool) {
        self.frozen[group.index()] = frozen;
    }

    pub fn freeze_only(&mut self, groups: &[ParamGroup]) {
        for g in ParamGroup::ALL {
            self.set_frozen(g, groups.contains(&g));
        }
    }

    pub fn is_frozen(&self, group: ParamGroup) -> bool {
        self.frozen[group.index()]
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        !self.is_frozen(self.params[id.0].group)
    }

    /// All values of one group, concatenated in parameter order.
    pub fn group_values(&self, group: ParamGroup) -> Vec<f64> {
        self.params
            .iter()
            .filter(|p| p.group == group)
            .flat_map(|p| p.value.data().iter().copied())
            .collect()
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.params.iter().find(|p| !p.value.is_finite()) {
            Some(p) => Err(Error::Numeric(format!("parameter `{}` is not finite", p.name))),
            None => Ok(()),
        }
    }
}
