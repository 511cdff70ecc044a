//! CTC loss by log-space forward-backward, plus greedy and prefix-beam decoding.

mod decode;
mod loss;

pub use decode::{beam_decode, beam_search, greedy_decode, Hypothesis};
pub use loss::{ctc_lattice, ctc_loss, min_frames, CtcLoss, LogProbLattice, BLANK};
