//! Cloud-client cooperative session recommendation.
//!
//! A global GRU next-click model is trained in the cloud on data collected
//! before a consent cutoff, then fine-tuned per user on-device with data
//! collected after it. Recommendations are produced either by pulling an
//! item-CF candidate set to the device (pull mode) or by pushing a sparse user
//! embedding to the cloud (push mode). Payload sizes are accounted exactly.

pub mod cf;
pub mod data;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod sim;
pub mod sparsity;
pub mod synth;
pub mod wire;
