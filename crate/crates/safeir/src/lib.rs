//! A self-contained mini-IR with memory-safety sanitizer instrumentation.
//!
//! The pipeline: parse a `.sir` module, classify every pointer value with a
//! function-local dataflow, then either insert a check at every dereference
//! (baseline) or elide checks for statically safe pointers and guard the
//! raw-to-safe boundary instead (cast, load, param, return, and optional
//! heap checks backed by a persisted nofree call-graph analysis). A
//! deterministic tagged-memory interpreter executes instrumented modules and
//! reports violations, which lets the two instrumentation strategies be
//! compared verdict-for-verdict on a generated corpus.

pub mod corpus;
pub mod instrument;
pub mod ir;
pub mod nofree;
pub mod report;
pub mod runtime;
pub mod text;
pub mod typeflow;
