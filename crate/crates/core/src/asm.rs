// SPDX-License-Identifier: Apache-2.0

//! Assembly text format.
//!
//! ```text
//! # comment               (* also a comment *)
//! .hop_size 3             # words per hop; inferred when absent
//! .hops 5                 # hops to allocate (default 1); or .mem_len <bytes>
//! PUSH [Switch:SwitchID]
//! CSTORE [Link:AppSpecific_0], \
//!        [Packet:Hop[0]], [Packet:Hop[1]]
//! PacketMemory:
//!   Hop1: 3, 4, 0x8000     # hops are numbered from 1
//!   Bytes: 00 01 02        # raw bytes from offset 0, for memory without hop structure
//! ```
//!
//! Other directives: `.session`, `.sp`, `.hop_index`, `.flags`. Opcodes and
//! mnemonics are case-insensitive; `[0x7fff]` names a raw address.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;

use crate::isa::{Instruction, Opcode, MAX_HOP_OFFSET};
use crate::memmap::{resolve, Address};
use crate::program::{TppProgram, MAX_INSTRUCTIONS, TPP_VERSION, WORD_BYTES};

/// Largest encoded TPP the assembler accepts by default (a 1500-byte MTU).
pub const DEFAULT_MAX_TPP_BYTES: usize = 1500;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AsmError {
    #[error("no instructions")]
    NoInstructions,
    #[error("{0} instructions exceed the limit of {MAX_INSTRUCTIONS}")]
    TooManyInstructions(usize),
    #[error("line {line}: unknown mnemonic `{text}`")]
    UnknownMnemonic { line: usize, text: String },
    #[error("line {line}: {opcode} takes {expected} operand(s), got {got}")]
    BadOperandArity { line: usize, opcode: Opcode, expected: usize, got: usize },
    #[error("encoded TPP of {size} bytes exceeds the budget of {budget}")]
    MemoryTooLarge { size: usize, budget: usize },
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AsmOptions {
    pub max_tpp_bytes: usize,
}

impl Default for AsmOptions {
    fn default() -> Self {
        AsmOptions { max_tpp_bytes: DEFAULT_MAX_TPP_BYTES }
    }
}

pub fn assemble(source: &str) -> Result<TppProgram, AsmError> {
    assemble_with(source, &AsmOptions::default())
}

fn strip_comments(src: &str) -> String {
    let mut out = String::with_capacity(src.len());
    let mut rest = src;
    while let Some(start) = rest.find("(*") {
        out.push_str(&rest[..start]);
        match rest[start..].find("*)") {
            Some(end) => {
                // Keep line numbering intact across multi-line block comments.
                let skipped = &rest[start..start + end + 2];
                out.extend(skipped.chars().filter(|c| *c == '\n'));
                rest = &rest[start + end + 2..];
            }
            None => {
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

/// Logical lines after comment removal and `\` joining, with 1-based source line numbers.
fn logical_lines(src: &str) -> Vec<(usize, String)> {
    let cleaned = strip_comments(src);
    let mut out = Vec::new();
    let mut pending: Option<(usize, String)> = None;
    for (i, raw) in cleaned.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim_end();
        let (text, continued) = match line.strip_suffix('\\') {
            Some(t) => (t, true),
            None => (line, false),
        };
        let entry = pending.get_or_insert_with(|| (i + 1, String::new()));
        entry.1.push(' ');
        entry.1.push_str(text);
        if !continued {
            let (n, s) = pending.take().unwrap();
            let s = s.trim().to_string();
            if !s.is_empty() {
                out.push((n, s));
            }
        }
    }
    if let Some((n, s)) = pending {
        let s = s.trim().to_string();
        if !s.is_empty() {
            out.push((n, s));
        }
    }
    out
}

/// Splits on commas that are not nested inside brackets.
fn split_operands(s: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in s.char_indices() {
        match c {
            '[' => depth += 1,
            ']' => depth -= 1,
            ',' if depth == 0 => {
                out.push(s[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
    }
    let last = s[start..].trim();
    if !last.is_empty() || !out.is_empty() {
        out.push(last);
    }
    out
}

fn parse_number(s: &str) -> Option<u64> {
    let s = s.trim();
    if let Some(hex) = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        u64::from_str_radix(&hex.replace('_', ""), 16).ok()
    } else {
        s.replace('_', "").parse().ok()
    }
}

/// `[Packet:Hop[n]]` -> n.
fn parse_packet_operand(s: &str) -> Option<u64> {
    let inner = s.trim().strip_prefix('[')?.strip_suffix(']')?;
    let (ns, rest) = inner.split_once(':')?;
    if !ns.trim().eq_ignore_ascii_case("packet") {
        return None;
    }
    let rest = rest.trim();
    let head = rest.get(..3)?;
    if !head.eq_ignore_ascii_case("hop") {
        return None;
    }
    let idx = rest[3..].trim().strip_prefix('[')?.strip_suffix(']')?;
    parse_number(idx)
}

fn parse_switch_operand(s: &str, line: usize) -> Result<Address, AsmError> {
    let t = s.trim();
    if let Some(raw) = t.strip_prefix('[').and_then(|x| x.strip_suffix(']')) {
        if !raw.contains(':') {
            if let Some(v) = parse_number(raw) {
                if v <= u64::from(u16::MAX) {
                    return Ok(Address(v as u16));
                }
            }
        }
    }
    resolve(t).map_err(|_| AsmError::UnknownMnemonic { line, text: t.to_string() })
}

fn arity(op: Opcode) -> usize {
    match op {
        Opcode::Push | Opcode::Pop => 1,
        Opcode::Load | Opcode::Store | Opcode::Cexec => 2,
        Opcode::Cstore => 3,
    }
}

fn hop_operand(s: &str, line: usize, max: u8) -> Result<u8, AsmError> {
    let v = parse_packet_operand(s).ok_or_else(|| AsmError::Syntax {
        line,
        msg: format!("expected a packet operand like [Packet:Hop[0]], got `{s}`"),
    })?;
    if v > u64::from(max) {
        return Err(AsmError::Syntax { line, msg: format!("hop offset {v} exceeds {max}") });
    }
    Ok(v as u8)
}

fn parse_instruction(line: usize, text: &str) -> Result<Instruction, AsmError> {
    let (mnemonic, rest) = match text.find(char::is_whitespace) {
        Some(i) => (&text[..i], text[i..].trim()),
        None => (text, ""),
    };
    let op = Opcode::parse(mnemonic).ok_or_else(|| AsmError::UnknownMnemonic { line, text: mnemonic.to_string() })?;
    let ops = split_operands(rest);
    if ops.len() != arity(op) {
        return Err(AsmError::BadOperandArity { line, opcode: op, expected: arity(op), got: ops.len() });
    }
    let addr = parse_switch_operand(ops[0], line)?;
    Ok(match op {
        Opcode::Push => Instruction::Push { addr },
        Opcode::Pop => Instruction::Pop { addr },
        Opcode::Load => Instruction::Load { addr, slot: hop_operand(ops[1], line, MAX_HOP_OFFSET)? },
        Opcode::Store => Instruction::Store { addr, slot: hop_operand(ops[1], line, MAX_HOP_OFFSET)? },
        Opcode::Cexec => Instruction::Cexec { addr, block: hop_operand(ops[1], line, MAX_HOP_OFFSET - 3)? },
        Opcode::Cstore => Instruction::Cstore {
            addr,
            pre: hop_operand(ops[1], line, crate::isa::MAX_CSTORE_OFFSET)?,
            post: hop_operand(ops[2], line, crate::isa::MAX_CSTORE_OFFSET)?,
        },
    })
}

/// Words per hop implied by the instructions alone.
pub fn infer_hop_size(insns: &[Instruction]) -> usize {
    let pushes = insns.iter().filter(|i| matches!(i, Instruction::Push { .. })).count();
    let slots = insns
        .iter()
        .map(|i| match *i {
            Instruction::Load { slot, .. } | Instruction::Store { slot, .. } => usize::from(slot) + 1,
            Instruction::Cstore { pre, post, .. } => usize::from(pre.max(post)) + 1,
            Instruction::Cexec { block, .. } => usize::from(block) + 4,
            _ => 0,
        })
        .max()
        .unwrap_or(0);
    pushes.max(slots)
}

#[derive(Default)]
struct Directives {
    hop_size: Option<usize>,
    hops: Option<usize>,
    mem_len: Option<usize>,
    session: u16,
    sp: u16,
    hop_index: u8,
    flags: u8,
}

fn directive_value(line: usize, name: &str, arg: &str, max: u64) -> Result<u64, AsmError> {
    let v = parse_number(arg).ok_or_else(|| AsmError::Syntax { line, msg: format!("bad value for .{name}: `{arg}`") })?;
    if v > max {
        return Err(AsmError::Syntax { line, msg: format!(".{name} value {v} exceeds {max}") });
    }
    Ok(v)
}

pub fn assemble_with(source: &str, opts: &AsmOptions) -> Result<TppProgram, AsmError> {
    let mut d = Directives::default();
    let mut insns = Vec::new();
    let mut hop_inits: Vec<(usize, usize, Vec<u16>)> = Vec::new();
    let mut raw_bytes: Option<(usize, Vec<u8>)> = None;
    let mut in_memory = false;

    for (line, text) in logical_lines(source) {
        if text.eq_ignore_ascii_case("packetmemory:") {
            in_memory = true;
            continue;
        }
        if let Some(dir) = text.strip_prefix('.') {
            let (name, arg) = dir.split_once(char::is_whitespace).unwrap_or((dir, ""));
            let name = name.to_ascii_lowercase();
            match name.as_str() {
                "hop_size" => d.hop_size = Some(directive_value(line, &name, arg, 0xFF)? as usize),
                "hops" => d.hops = Some(directive_value(line, &name, arg, 0xFF)? as usize),
                "mem_len" => d.mem_len = Some(directive_value(line, &name, arg, 0xFFFF)? as usize),
                "session" => d.session = directive_value(line, &name, arg, 0xFFFF)? as u16,
                "sp" => d.sp = directive_value(line, &name, arg, 0xFFFF)? as u16,
                "hop_index" => d.hop_index = directive_value(line, &name, arg, 0xFF)? as u8,
                "flags" => d.flags = directive_value(line, &name, arg, 0x0F)? as u8,
                _ => return Err(AsmError::Syntax { line, msg: format!("unknown directive .{name}") }),
            }
            continue;
        }
        if in_memory {
            let (label, values) = text
                .split_once(':')
                .ok_or_else(|| AsmError::Syntax { line, msg: format!("expected `HopN: ...`, got `{text}`") })?;
            let label = label.trim();
            if label.eq_ignore_ascii_case("bytes") {
                let mut bytes = Vec::new();
                for tok in values.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty()) {
                    let b = u8::from_str_radix(tok.trim_start_matches("0x"), 16)
                        .map_err(|_| AsmError::Syntax { line, msg: format!("bad byte `{tok}`") })?;
                    bytes.push(b);
                }
                raw_bytes = Some((line, bytes));
                continue;
            }
            let n = label
                .get(..3)
                .filter(|h| h.eq_ignore_ascii_case("hop"))
                .and_then(|_| parse_number(&label[3..]))
                .filter(|n| *n >= 1)
                .ok_or_else(|| AsmError::Syntax { line, msg: format!("bad hop label `{label}`") })?;
            let mut words = Vec::new();
            for v in values.split(',').map(str::trim).filter(|v| !v.is_empty() && *v != "...") {
                let w = parse_number(v)
                    .filter(|w| *w <= u64::from(u16::MAX))
                    .ok_or_else(|| AsmError::Syntax { line, msg: format!("bad 16-bit value `{v}`") })?;
                words.push(w as u16);
            }
            hop_inits.push((line, n as usize - 1, words));
            continue;
        }
        insns.push(parse_instruction(line, &text)?);
    }

    if insns.is_empty() {
        return Err(AsmError::NoInstructions);
    }
    if insns.len() > MAX_INSTRUCTIONS {
        return Err(AsmError::TooManyInstructions(insns.len()));
    }
    let hop_size = d.hop_size.unwrap_or_else(|| infer_hop_size(&insns));
    let hop_bytes = hop_size * WORD_BYTES;
    let mem_len = match d.mem_len {
        Some(m) => m,
        None => {
            let hops = d.hops.unwrap_or(1);
            let by_inits = hop_inits.iter().map(|(_, h, w)| h * hop_bytes + w.len() * WORD_BYTES).max().unwrap_or(0);
            let by_bytes = raw_bytes.as_ref().map_or(0, |(_, b)| b.len());
            (hops * hop_bytes).max(by_inits).max(by_bytes)
        }
    };
    let size = crate::program::encoded_len(insns.len(), mem_len);
    if size > opts.max_tpp_bytes || mem_len > usize::from(u16::MAX) {
        return Err(AsmError::MemoryTooLarge { size, budget: opts.max_tpp_bytes });
    }
    let mut p = TppProgram::new(insns, hop_size as u8, mem_len);
    p.header.version = TPP_VERSION;
    p.header.session_id = d.session;
    p.header.hop_index = d.hop_index;
    p.header.flags.0 = d.flags;
    if usize::from(d.sp) > mem_len {
        return Err(AsmError::Syntax { line: 0, msg: format!(".sp {} beyond packet memory of {mem_len} bytes", d.sp) });
    }
    p.header.sp = d.sp;
    if let Some((line, bytes)) = raw_bytes {
        if bytes.len() > mem_len {
            return Err(AsmError::Syntax { line, msg: format!("{} bytes do not fit packet memory", bytes.len()) });
        }
        p.memory[..bytes.len()].copy_from_slice(&bytes);
    }
    for (line, hop, words) in hop_inits {
        if words.len() > hop_size && hop_size > 0 {
            return Err(AsmError::Syntax { line, msg: format!("hop has {} words, hop size is {hop_size}", words.len()) });
        }
        for (k, w) in words.iter().enumerate() {
            if !p.write_word(hop * hop_bytes + k * WORD_BYTES, *w) {
                return Err(AsmError::Syntax { line, msg: String::from("hop initializer beyond packet memory") });
            }
        }
    }
    Ok(p)
}

/// Canonical text for a program; `assemble(disassemble(p))` encodes identically to `p`.
pub fn disassemble(p: &TppProgram) -> String {
    let mut s = String::new();
    let h = &p.header;
    let _ = writeln!(s, ".hop_size {}", h.hop_size_words);
    let _ = writeln!(s, ".mem_len {}", p.mem_len());
    if h.hop_index != 0 {
        let _ = writeln!(s, ".hop_index {}", h.hop_index);
    }
    if h.sp != 0 {
        let _ = writeln!(s, ".sp {}", h.sp);
    }
    if h.session_id != 0 {
        let _ = writeln!(s, ".session {:#06x}", h.session_id);
    }
    if h.flags.0 != 0 {
        let _ = writeln!(s, ".flags {:#x}", h.flags.0);
    }
    for insn in &p.instructions {
        let _ = writeln!(s, "{insn}");
    }
    if p.memory.iter().all(|b| *b == 0) {
        return s;
    }
    s.push_str("PacketMemory:\n");
    let hop_bytes = usize::from(h.hop_size_words) * WORD_BYTES;
    if hop_bytes > 0 && p.mem_len() % hop_bytes == 0 {
        for (i, hop) in p.memory.chunks(hop_bytes).enumerate() {
            if hop.iter().any(|b| *b != 0) {
                let words: Vec<String> =
                    hop.chunks(2).map(|w| format!("{:#06x}", u16::from_be_bytes([w[0], w[1]]))).collect();
                let _ = writeln!(s, "  Hop{}: {}", i + 1, words.join(", "));
            }
        }
    } else {
        let last = p.memory.iter().rposition(|b| *b != 0).map_or(0, |i| i + 1);
        let bytes: Vec<String> = p.memory[..last].iter().map(|b| format!("{b:02x}")).collect();
        let _ = writeln!(s, "  Bytes: {}", bytes.join(" "));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn queue_occupancy_push() {
        let p = assemble("PUSH [Queue:QueueOccupancy]").unwrap();
        assert_eq!(p.instructions, [Instruction::Push { addr: Address(0xb000) }]);
        assert_eq!(p.header.sp, 0);
        assert!(p.memory.iter().all(|b| *b == 0));
    }

    #[test]
    fn empty_and_oversized_sources() {
        assert_eq!(assemble(""), Err(AsmError::NoInstructions));
        assert_eq!(assemble("# nothing\n\n"), Err(AsmError::NoInstructions));
        let six = "PUSH [Switch:ID]\n".repeat(6);
        assert_eq!(assemble(&six), Err(AsmError::TooManyInstructions(6)));
    }

    #[test]
    fn arity_and_unknown_mnemonics() {
        assert!(matches!(assemble("PUSH [Switch:ID], [Packet:Hop[0]]"), Err(AsmError::BadOperandArity { .. })));
        assert!(matches!(assemble("LOAD [Switch:ID]"), Err(AsmError::BadOperandArity { .. })));
        assert!(matches!(assemble("JUMP [Switch:ID]"), Err(AsmError::UnknownMnemonic { .. })));
        assert!(matches!(assemble("PUSH [Bogus:Nothing]"), Err(AsmError::UnknownMnemonic { .. })));
    }

    #[test]
    fn phase3_listing_with_continuation_and_memory() {
        let src = "  CSTORE [Link:AppSpecific_0], \\\n            [Packet:Hop[0]], [Packet:Hop[1]]\n  STORE [Link:AppSpecific_1], [Packet:Hop[2]]\nPacketMemory:\n  Hop1: 3, 4, 80, (* 16 bits each*)\n  Hop2: 7, 8, 90, ...\n";
        let p = assemble(src).unwrap();
        assert_eq!(p.insn_count(), 2);
        assert_eq!(p.header.hop_size_words, 3);
        assert_eq!(p.words(), [3, 4, 80, 7, 8, 90]);
    }

    #[test]
    fn memory_budget() {
        let opts = AsmOptions { max_tpp_bytes: 128 };
        assert!(assemble_with(".hops 17\nPUSH [Switch:ID]\nPUSH [Switch:ID]\nPUSH [Switch:ID]", &opts).is_ok());
        assert!(matches!(
            assemble_with(".hops 18\nPUSH [Switch:ID]\nPUSH [Switch:ID]\nPUSH [Switch:ID]", &opts),
            Err(AsmError::MemoryTooLarge { size: 132, budget: 128 })
        ));
    }

    #[test]
    fn raw_addresses_and_case() {
        let p = assemble("load [0x7fff], [packet:hop[1]]\ncexec [switch:switchid], [Packet:Hop[2]]").unwrap();
        assert_eq!(p.instructions[0], Instruction::Load { addr: Address(0x7fff), slot: 1 });
        assert_eq!(p.header.hop_size_words, 6);
    }

    #[test]
    fn disassembly_reassembles() {
        let src = ".hops 2\n.session 7\nCSTORE [Link:AppSpecific_0], [Packet:Hop[0]], [Packet:Hop[1]]\nSTORE [Link:AppSpecific_1], [Packet:Hop[2]]\nLOAD [0x7fff], [Packet:Hop[2]]\nPacketMemory:\nHop2: 1, 2, 3\n";
        let p = assemble(src).unwrap();
        let text = disassemble(&p);
        let q = assemble(&text).unwrap();
        assert_eq!(q.encode().unwrap(), p.encode().unwrap());
    }
}
