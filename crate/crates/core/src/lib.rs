//! A message-passing laboratory for sparse gradient allreduce.
//!
//! The crate implements the O(k) sparse allreduce (split-and-reduce followed
//! by balance-and-allgatherv, with periodic threshold reuse) and the SGD loop
//! built on top of it, next to five baseline collectives: dense
//! (Rabenseifner), TopkA, TopkDSA, gTopk and Gaussiank. Every message goes
//! through a [`transport::WorkerCtx`], which credits a shared
//! [`transport::TrafficLedger`] with the exact number of payload words, so
//! measured volumes can be checked against the alpha-beta cost model in
//! [`harness::cost`].
//!
//! Workers are ordinary threads. The in-process backend
//! ([`transport::run_inproc`]) is deterministic for a fixed seed; the TCP
//! backend ([`transport::tcp`]) runs the same protocols over sockets.

pub mod baselines;
pub mod error;
pub mod harness;
pub mod oktopk;
pub mod sparse;
pub mod trainer;
pub mod transport;

pub use error::{Error, Result};
pub use sparse::{DenseGrad, SparseGrad};
pub use transport::{Phase, TrafficLedger, WorkerCtx};
