// SPDX-License-Identifier: Apache-2.0

//! End-host logic of the dataplane tasks.

pub mod conga;
pub mod history;
pub mod microburst;
pub mod rcp;
pub mod sketch;
