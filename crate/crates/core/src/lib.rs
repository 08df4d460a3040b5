//! Counterfactual explanations for molecular property predictors.
//!
//! The crate trains a small message-passing predictor on molecules and then
//! searches, with a double deep-Q-network editing agent, for chemically valid
//! molecules close to an input whose prediction changes substantially.
//!
//! * [`molgraph`]: molecule model, SMILES subset, validity, edits, canonical keys
//! * [`actions`]: enumeration of the legal edit space
//! * [`fingerprint`]: Morgan fingerprints and Tanimoto similarity
//! * [`tensor`], [`optim`]: dense matrices, reverse-mode differentiation, Adam
//! * [`gnn`]: the graph predictor
//! * [`similarity`]: cosine and combined similarity
//! * [`rl`]: rewards, Q-network, agent and counterfactual generation
//! * [`data`]: CSV loading, splitting and synthetic tasks

pub mod actions;
pub mod data;
pub mod fingerprint;
pub mod gnn;
pub mod molgraph;
pub mod optim;
pub mod rl;
pub mod similarity;
pub mod tensor;

pub use actions::{action_signature, enumerate_actions, EditAction};
pub use molgraph::{
    apply_edit, canonical_key, check_validity, free_valence, parse_smiles, write_smiles, Element,
    Molecule,
};
