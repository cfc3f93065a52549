//! Learns emulated service endpoints from recorded request/response byte
//! traces, without any knowledge of the protocol.
//!
//! The pipeline: [`trace`] records or loads a transaction library,
//! [`clusterer`] groups transactions by response similarity, [`msa`] aligns
//! each group's requests and [`protomodel`] condenses them into weighted
//! wildcard prototypes. [`emulator`] answers live requests from the model and
//! [`harness`] measures how well that works.

pub mod clusterer;
pub mod emulator;
pub mod framing;
pub mod harness;
pub mod msa;
pub mod par;
pub mod protomodel;
pub mod seqalign;
pub mod trace;

pub use par::Exec;
