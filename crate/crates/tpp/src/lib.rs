// SPDX-License-Identifier: Apache-2.0

//! Tiny packet programs on a simulated network.
//!
//! A deterministic discrete-event simulator driving the switch model from
//! `tpp-core`, the end-host stack (control plane, shim, executors), the
//! dataplane applications as runnable experiments, and the file formats the
//! command-line tools read and write.

#![forbid(unsafe_code)]

pub mod corpus;
pub mod endhost;
pub mod experiments;
pub mod netsim;
pub mod packet;
pub mod topology;
