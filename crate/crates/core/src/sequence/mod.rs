//! Synthetic sequence-classification task: corpus generation, lattices,
//! lattice criteria, and decoding.

pub mod criteria;
pub mod decode;
pub mod lattice;
pub mod world;

pub use criteria::{
    forward_backward, frame_ce_criterion_and_grad, frame_ce_from_outputs, mean_posterior_entropy, mmi_activation_grad,
    mpe_criterion_and_grad, mpe_from_outputs, FrameCe, LocalLoss, MpeOutput, PosteriorField, SequenceExample,
};
pub use decode::{nbest, sequence_error_rate, viterbi_decode, Hypothesis};
pub use lattice::{arc_accuracies, build_lattice, Lattice, LatticeArc};
pub use world::{validation_indices, Segment, Utterance, World, WorldConfig, WorldModel};
