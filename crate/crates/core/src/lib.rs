//! Safety verification of small feed-forward ReLU networks with reusable proofs.
//!
//! [`reluplex::solve`] decides a query from scratch and records its case
//! splits as a [`proof_tree::ProofTree`]. After the weights of the network
//! change, [`incremental::verify_incremental`] replays that tree: old UNSAT
//! leaves are re-checked against tightened bounds, and only the leaves whose
//! certificate no longer holds are searched again.
//!
//! ```
//! use incremark::model::samples;
//! use incremark::reluplex::{solve, SearchParams};
//! use incremark::incremental::{verify_incremental, Mode};
//!
//! let prop = samples::threshold_property();
//! let (verdict, tree) = solve(&samples::base(), &prop, &SearchParams::default()).unwrap();
//! assert!(verdict.is_sat());
//!
//! let outcome = verify_incremental(&samples::variant_small(), &prop, &tree, Mode::Lazy, &SearchParams::default()).unwrap();
//! assert!(outcome.verdict.is_sat());
//! ```

pub mod abstraction;
pub mod bench;
pub mod cli;
pub mod error;
pub mod incremental;
pub mod lp;
pub mod model;
pub mod proof_tree;
pub mod reluplex;
pub mod simplex_core;

pub use error::{Error, Result};
pub use model::{Network, NeuronId, SafetyProperty, Verdict};
