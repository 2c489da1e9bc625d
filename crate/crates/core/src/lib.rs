//! Synthetic dynamic-PET cohorts, model-corrected input function fitting,
//! and LSTM regression of the corrected input function from image-derived
//! blood-pool and myocardial curves.

pub mod interp;
pub mod kinetics;
pub mod rng;
pub mod tac;
pub mod fit;
pub mod seqnet;
pub mod evalkit;
pub mod pipeline;
