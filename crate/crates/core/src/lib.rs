//! Sequence-classification engine for chat-log triage.
//!
//! An LSTM language model turns each message into a sentence vector (the top
//! layer's last hidden state), an LSTM classifier over those vectors flags
//! suspicious conversations, and a shallow bag-of-features model scores each
//! author as predator / victim / normal. [`pipeline`] wires the stages
//! together over files.

pub mod author;
pub mod corpus;
pub mod error;
pub mod lm;
pub mod lstm;
pub mod math;
pub mod metrics;
pub mod pipeline;
pub mod preprocess;
pub mod scd;
pub mod store;
pub mod synth;

pub use error::{Error, Result};
