//! Networks and safety properties with their text formats.

mod network;
mod property;
pub mod samples;
pub mod text;

pub use network::{Activation, Layer, LayerNeurons, Network, NeuronId, NeuronLayout, ReluPair};
pub use property::{
    make_robustness_queries, validate_witness, Interval, OutputConstraint, SafetyProperty,
    Verdict, EPS_SAT,
};
pub use text::{load_network, load_property, save_network, save_property};
