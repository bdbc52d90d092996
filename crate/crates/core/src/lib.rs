// SPDX-License-Identifier: Apache-2.0

//! Tiny packet programs.
//!
//! The ISA and wire codec, the standardized switch memory map, a switch model
//! that executes TPPs with packet-consistent semantics, and the end-host side
//! primitives of the dataplane tasks built on top of it.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(any(feature = "std", test))]
extern crate std;

pub mod analysis;
pub mod apps;
pub mod asm;
pub mod compose;
pub mod frame;
pub mod isa;
pub mod memmap;
pub mod program;
pub mod record;
pub mod switch;

pub use frame::{Encapsulation, Frame, FrameConfig, FrameError};
pub use isa::{Instruction, InstructionError, Opcode};
pub use memmap::{resolve, Address, Namespace, ResolveError};
pub use program::{CodecError, Flags, TppHeader, TppProgram};
