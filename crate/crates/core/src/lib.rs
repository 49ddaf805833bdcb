//! Supervision assignment, selection protocol and evaluation for set-style
//! keyphrase generation, operating on externally produced probabilities.

pub mod bipartite;
pub mod error;
pub mod eval;
pub mod io;
pub mod kpcore;
pub mod losses;
pub mod matching;
pub mod pipeline;
pub mod selector;
pub mod transport;

pub use error::{Error, Result};
