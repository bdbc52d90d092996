// SPDX-License-Identifier: Apache-2.0

//! The end-host side: TPP-CP, the dataplane shim and the executors.

pub mod cp;
pub mod executor;
pub mod shim;
