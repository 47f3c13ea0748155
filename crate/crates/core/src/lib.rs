//! Color image steganalysis: fixed residual preprocessing with per-channel
//! concatenation, a residual CNN with grouped convolutions, and the data
//! plumbing (JPEG coefficients, embedding simulators, training) around it.

pub mod channelrep;
pub mod filterbank;
pub mod jpeg;
pub mod plane;
pub mod stegosim;
pub mod nn;
pub mod model;
pub mod covers;
pub mod ppm;
pub mod train;
pub mod cli;
