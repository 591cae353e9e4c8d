//! Deterministic discrete-event simulation of queue disciplines at a shared
//! bottleneck carrying multipath TCP plus constant-bit-rate UDP.
//!
//! The model is a dumbbell: a two-path TCP sender (coupled congestion
//! control, one shared receive window) and a UDP source feed one slow link
//! guarded by a configurable queue discipline — tail-drop, CoDel, a
//! LIFO-stack CoDel with a drop-forgiveness gate, or flow-queue versions of
//! the CoDel variants. Runs are bit-reproducible from a seed; a grid runner
//! sweeps discipline x congestion-control x path-delay factors and reports
//! per-run and aggregated metrics as CSV.

pub mod metrics;
pub mod mptcp;
pub mod net;
pub mod qdisc;
pub mod sim;

pub mod experiment;
pub mod world;
