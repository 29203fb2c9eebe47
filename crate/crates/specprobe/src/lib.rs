//! Deterministic micro-architectural simulator and measurement harness for
//! transient-execution fault handling.
//!
//! The simulator models an out-of-order core with a two-phase fault model:
//! a fault is first observed by the execution unit running the faulting
//! micro-op (phase one, which decides whether real data or a zero dummy is
//! forwarded to dependents), and later handled architecturally when the
//! faulting op reaches the head of the reorder buffer (phase two, which
//! squashes all younger ops and stops issue). Branch mispredictions are
//! handled entirely in phase one.
//!
//! On top of the simulator sits a measurement harness that composes gadget
//! templates (windowing gadgets, speculation primitives, disclosure gadgets,
//! suppressing primitives) into test cases, drives a flush-reload style
//! covert-channel receiver, and runs the exploitability / speculation-window
//! / differential-timing experiments exposed by the `specprobe` CLI.

pub mod harness;
pub mod isa;
pub mod mem;
pub mod pipeline;
pub mod profile;
pub mod rng;
pub mod variants;

pub use harness::{SignalOutcome, TestCase};
pub use isa::{InstrSeq, MicroOp, OpKind, Register};
pub use mem::MemEnvironment;
pub use pipeline::{simulate, ExecTrace};
pub use profile::ProcessorProfile;
pub use variants::VariantRegistry;
