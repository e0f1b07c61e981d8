//! Small hand-sized networks used throughout the tests and examples.
//!
//! [`base`] maps two inputs through two hidden ReLU neurons to one output.
//! [`variant_small`] and [`variant_large`] are weight modifications of it.

use super::network::{Activation, Layer, Network};
use super::property::{Interval, OutputConstraint, SafetyProperty};

/// Canonical `relunet` text of [`base`].
pub const BASE_TEXT: &str = "relunet 1
dims 2 2 1
layer 1 relu
0.2 -0.7
0.8 -0.8
-0.1 0
layer 2 none
0.4 0.6
0
";

fn two_layer(w: [[f64; 2]; 2], b: [f64; 2]) -> Network {
    Network::new(vec![
        Layer::new(w.iter().map(|r| r.to_vec()).collect(), b.to_vec(), Activation::Relu),
        Layer::new(vec![vec![0.4, 0.6]], vec![0.0], Activation::None),
    ])
    .expect("sample network is well formed")
}

/// `x3 = 0.2·x1 − 0.7·x2 − 0.1`, `x4 = 0.8·x1 − 0.8·x2`, `y = 0.4·relu(x3) + 0.6·relu(x4)`.
pub fn base() -> Network {
    two_layer([[0.2, -0.7], [0.8, -0.8]], [-0.1, 0.0])
}

/// Second hidden row changed to `(0.9, −0.7)`; biases kept.
pub fn variant_small() -> Network {
    two_layer([[0.2, -0.7], [0.9, -0.7]], [-0.1, 0.0])
}

/// All hidden weights and biases changed.
pub fn variant_large() -> Network {
    two_layer([[0.34, -1.34], [0.16, -0.69]], [-0.05, -0.33])
}

/// Inputs in `[−1, 1]²`, negated property `y ≥ 0.3`.
pub fn threshold_property() -> SafetyProperty {
    threshold_property_at(0.3)
}

pub fn threshold_property_at(threshold: f64) -> SafetyProperty {
    SafetyProperty::new(
        vec![Interval::new(-1.0, 1.0); 2],
        vec![OutputConstraint::new(vec![1.0], threshold)],
    )
    .expect("sample property is well formed")
}
