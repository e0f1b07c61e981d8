use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of a variable in the global numbering shared by every solver
/// component and the proof tree.
///
/// Network neurons come first (inputs, then per layer the pre-activation and
/// post-activation neurons, the last layer providing the outputs). Auxiliary
/// tableau variables follow in introduction order, see
/// [`Encoding`](crate::simplex_core::Encoding).
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct NeuronId(pub usize);

impl NeuronId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for NeuronId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// Row-major, `weights[i][j]` connects input `j` to neuron `i`.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weights: Vec<Vec<f64>>, bias: Vec<f64>, activation: Activation) -> Self {
        Self {
            weights,
            bias,
            activation,
        }
    }

    pub fn width(&self) -> usize {
        self.bias.len()
    }

    pub fn fan_in(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    fn affine(&self, input: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + b)
            .collect()
    }
}

/// Feed-forward network of affine layers, each optionally followed by ReLU.
/// Only the final layer may omit the activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    dims: Vec<usize>,
    layers: Vec<Layer>,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        let Some(first) = layers.first() else {
            return Err(Error::InvalidNetwork("at least one affine layer is required".into()));
        };
        let mut dims = vec![first.fan_in()];
        for (i, layer) in layers.iter().enumerate() {
            let fan_in = *dims.last().unwrap();
            if layer.width() == 0 || layer.weights.len() != layer.width() {
                return Err(Error::Dimension(format!(
                    "layer {}: {} weight rows for {} biases",
                    i + 1,
                    layer.weights.len(),
                    layer.width()
                )));
            }
            if let Some(row) = layer.weights.iter().position(|r| r.len() != fan_in) {
                return Err(Error::Dimension(format!(
                    "layer {}: row {} has {} weights, expected {}",
                    i + 1,
                    row + 1,
                    layer.weights[row].len(),
                    fan_in
                )));
            }
            let finite = layer.weights.iter().flatten().chain(&layer.bias).all(|v| v.is_finite());
            if !finite {
                return Err(Error::InvalidNetwork(format!("layer {} has non-finite parameters", i + 1)));
            }
            if layer.activation == Activation::None && i + 1 != layers.len() {
                return Err(Error::InvalidNetwork(format!(
                    "layer {} has no activation; only the final layer may omit ReLU",
                    i + 1
                )));
            }
            dims.push(layer.width());
        }
        if dims[0] == 0 {
            return Err(Error::Dimension("network has no inputs".into()));
        }
        Ok(Self { dims, layers })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn relu_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| l.activation == Activation::Relu)
            .map(Layer::width)
            .sum()
    }

    /// Two networks share a shape when dimensions and activation flags agree,
    /// which makes their neuron numbering identical.
    pub fn same_shape(&self, other: &Network) -> bool {
        self.dims == other.dims
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.activation == b.activation)
    }

    pub fn layout(&self) -> NeuronLayout {
        NeuronLayout::new(self)
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut values = x.to_vec();
        for layer in &self.layers {
            values = layer.affine(&values);
            if layer.activation == Activation::Relu {
                values.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        Ok(values)
    }

    /// Value of every network neuron, indexed by [`NeuronId`].
    pub fn evaluate_neurons(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let layout = self.layout();
        let mut all = vec![0.0; layout.count];
        for (id, v) in layout.inputs.iter().zip(x) {
            all[id.0] = *v;
        }
        let mut values = x.to_vec();
        for (layer, ids) in self.layers.iter().zip(&layout.layers) {
            values = layer.affine(&values);
            for (id, v) in ids.pre.iter().zip(&values) {
                all[id.0] = *v;
            }
            if let Some(post) = &ids.post {
                values.iter_mut().for_each(|v| *v = v.max(0.0));
                for (id, v) in post.iter().zip(&values) {
                    all[id.0] = *v;
                }
            }
        }
        Ok(all)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "input has {} entries, network expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerNeurons {
    pub pre: Vec<NeuronId>,
    /// Present for ReLU layers.
    pub post: Option<Vec<NeuronId>>,
}

impl LayerNeurons {
    /// Neurons feeding the next layer.
    pub fn values(&self) -> &[NeuronId] {
        self.post.as_deref().unwrap_or(&self.pre)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReluPair {
    pub pre: NeuronId,
    pub post: NeuronId,
}

/// Deterministic neuron numbering; a pure function of the network shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeuronLayout {
    pub inputs: Vec<NeuronId>,
    pub layers: Vec<LayerNeurons>,
    pub outputs: Vec<NeuronId>,
    pub relu_pairs: Vec<ReluPair>,
    pub count: usize,
}

impl NeuronLayout {
    fn new(net: &Network) -> Self {
        let mut next = 0usize;
        let mut take = |n: usize| -> Vec<NeuronId> {
            let ids = (next..next + n).map(NeuronId).collect();
            next += n;
            ids
        };
        let inputs = take(net.input_dim());
        let mut layers = Vec::with_capacity(net.layers.len());
        let mut relu_pairs = Vec::new();
        for layer in &net.layers {
            let pre = take(layer.width());
            let post = match layer.activation {
                Activation::Relu => {
                    let post = take(layer.width());
                    relu_pairs.extend(
                        pre.iter().zip(&post).map(|(&pre, &post)| ReluPair { pre, post }),
                    );
                    Some(post)
                }
                Activation::None => None,
            };
            layers.push(LayerNeurons { pre, post });
        }
        let outputs = layers.last().unwrap().values().to_vec();
        Self {
            inputs,
            layers,
            outputs,
            relu_pairs,
            count: next,
        }
    }

    pub fn relu_of_pre(&self, pre: NeuronId) -> Option<&ReluPair> {
        self.relu_pairs.iter().find(|p| p.pre == pre)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::samples::base;

    #[test]
    fn base_forward_pass() {
        let f = base();
        let y = f.evaluate(&[0.675, 0.05]).unwrap();
        assert!((y[0] - 0.3).abs() < 1e-12);
        assert_eq!(f.evaluate(&[0.0, 0.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn neuron_values_follow_numbering() {
        let f = base();
        let v = f.evaluate_neurons(&[0.0, 0.0]).unwrap();
        // x1 x2 | x3 x4 | x5 x6 | y
        assert_eq!(v.len(), 7);
        assert!((v[2] + 0.1).abs() < 1e-15);
        assert_eq!(v[3], 0.0);
        assert_eq!(v[4], 0.0);
        assert_eq!(v[6], 0.0);
    }

    #[test]
    fn layout_is_shape_determined() {
        let f = base();
        let mut g = f.clone();
        g.layers_mut()[0].weights[0][0] = 3.0;
        assert_eq!(f.layout(), g.layout());
        let l = f.layout();
        assert_eq!(l.outputs, vec![NeuronId(6)]);
        assert_eq!(
            l.relu_pairs,
            vec![
                ReluPair { pre: NeuronId(2), post: NeuronId(4) },
                ReluPair { pre: NeuronId(3), post: NeuronId(5) }
            ]
        );
    }

    #[test]
    fn rejects_bad_networks() {
        assert!(Network::new(vec![]).is_err());
        let hidden_none = vec![
            Layer::new(vec![vec![1.0]], vec![0.0], Activation::None),
            Layer::new(vec![vec![1.0]], vec![0.0], Activation::None),
        ];
        assert!(Network::new(hidden_none).is_err());
        let ragged = vec![Layer::new(vec![vec![1.0, 2.0], vec![1.0]], vec![0.0, 0.0], Activation::None)];
        assert!(matches!(Network::new(ragged), Err(Error::Dimension(_))));
        let nan = vec![Layer::new(vec![vec![f64::NAN]], vec![0.0], Activation::None)];
        assert!(Network::new(nan).is_err());
        assert!(base().evaluate(&[1.0]).is_err());
    }
}
