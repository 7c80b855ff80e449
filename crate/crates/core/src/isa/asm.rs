//! Textual assembly.
//!
//! ```text
//! ; comment
//! start:  ldi r1, 5
//!         s.bz r1, done      ; secure branch
//!         add r2, r2, r1
//! done:   eosjmp
//!         ld r3, [r2+8]
//!         st [r2-1], r3
//!         halt
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use super::{Instruction, Opcode, Program};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AsmError {
    #[error("line {line}: unknown mnemonic `{mnemonic}`")]
    UnknownMnemonic { line: u32, mnemonic: String },
    #[error("line {line}: secure prefix on non-branch `{mnemonic}`")]
    SecurePrefixOnNonBranch { line: u32, mnemonic: String },
    #[error("line {line}: malformed operand `{operand}`: {reason}")]
    MalformedOperand { line: u32, operand: String, reason: String },
    #[error("line {line}: `{mnemonic}` expects {expected} operand(s), found {found}")]
    OperandCount { line: u32, mnemonic: String, expected: usize, found: usize },
    #[error("line {line}: unresolved label `{label}`")]
    UnresolvedLabel { line: u32, label: String },
    #[error("line {line}: duplicate label `{label}`")]
    DuplicateLabel { line: u32, label: String },
}

struct PendingLine<'a> {
    line: u32,
    secure: bool,
    mnemonic: &'a str,
    operands: Vec<&'a str>,
}

/// Assembles source text into a [`Program`] with resolved branch targets.
pub fn assemble(source: &str) -> Result<Program, AsmError> {
    let mut labels = BTreeMap::new();
    let mut pending = Vec::new();

    for (idx, raw) in source.lines().enumerate() {
        let line = idx as u32 + 1;
        let mut text = raw.split(';').next().unwrap_or("").trim();
        while let Some(colon) = text.find(':') {
            let (label, rest) = text.split_at(colon);
            let label = label.trim();
            if !is_identifier(label) {
                break;
            }
            if labels.insert(label.to_string(), pending.len()).is_some() {
                return Err(AsmError::DuplicateLabel { line, label: label.to_string() });
            }
            text = rest[1..].trim();
        }
        if text.is_empty() {
            continue;
        }
        let (head, rest) = match text.find(char::is_whitespace) {
            Some(pos) => (&text[..pos], text[pos..].trim()),
            None => (text, ""),
        };
        let (secure, mnemonic) = match head.strip_prefix("s.") {
            Some(m) => (true, m),
            None => (false, head),
        };
        let operands = if rest.is_empty() {
            Vec::new()
        } else {
            split_operands(rest)
        };
        pending.push(PendingLine { line, secure, mnemonic, operands });
    }

    let mut instructions = Vec::with_capacity(pending.len());
    for p in &pending {
        instructions.push(parse_instruction(p, &labels)?);
    }
    let mut program = Program::new(instructions);
    program.labels = labels;
    Ok(program)
}

fn split_operands(text: &str) -> Vec<&str> {
    // Commas inside brackets do not occur in the grammar, so a plain split is enough.
    text.split(',').map(str::trim).collect()
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_' || c == '.')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
}

fn parse_instruction(p: &PendingLine<'_>, labels: &BTreeMap<String, usize>) -> Result<Instruction, AsmError> {
    let line = p.line;
    let opcode = Opcode::from_mnemonic(p.mnemonic).ok_or_else(|| AsmError::UnknownMnemonic {
        line,
        mnemonic: p.mnemonic.to_string(),
    })?;
    if p.secure && !opcode.is_conditional_branch() {
        return Err(AsmError::SecurePrefixOnNonBranch { line, mnemonic: p.mnemonic.to_string() });
    }
    let ops = &p.operands;
    let expect = |n: usize| -> Result<(), AsmError> {
        if ops.len() == n {
            Ok(())
        } else {
            Err(AsmError::OperandCount {
                line,
                mnemonic: p.mnemonic.to_string(),
                expected: n,
                found: ops.len(),
            })
        }
    };
    let reg = |s: &str| parse_register(s, line);
    let imm = |s: &str| parse_immediate(s, line);
    let target = |s: &str| {
        labels.get(s).copied().ok_or_else(|| AsmError::UnresolvedLabel { line, label: s.to_string() })
    };

    use Opcode::*;
    let ins = match opcode {
        Ldi => {
            expect(2)?;
            Instruction::ldi(reg(ops[0])?, imm(ops[1])?)
        }
        Mov => {
            expect(2)?;
            Instruction::mov(reg(ops[0])?, reg(ops[1])?)
        }
        Add | Sub | Mul | And | Or | Xor | Slt | Cmov => {
            expect(3)?;
            Instruction::alu(opcode, reg(ops[0])?, reg(ops[1])?, reg(ops[2])?)
        }
        Divc | Shl | Shr => {
            expect(3)?;
            Instruction::alu_imm(opcode, reg(ops[0])?, reg(ops[1])?, imm(ops[2])?)
        }
        Ld => {
            expect(2)?;
            let (base, offset) = parse_memory(ops[1], line)?;
            Instruction::ld(reg(ops[0])?, base, offset)
        }
        St => {
            expect(2)?;
            let (base, offset) = parse_memory(ops[0], line)?;
            Instruction::st(base, reg(ops[1])?, offset)
        }
        Jmp => {
            expect(1)?;
            Instruction::jmp(target(ops[0])?)
        }
        Call => {
            expect(1)?;
            Instruction::call(target(ops[0])?)
        }
        Bz | Bnz => {
            expect(2)?;
            Instruction::branch(opcode, reg(ops[0])?, target(ops[1])?, p.secure)
        }
        Ret | Nop | Halt | Eosjmp => {
            expect(0)?;
            Instruction::bare(opcode)
        }
    };
    Ok(ins.with_line(line))
}

fn malformed(line: u32, operand: &str, reason: &str) -> AsmError {
    AsmError::MalformedOperand { line, operand: operand.to_string(), reason: reason.to_string() }
}

fn parse_register(s: &str, line: u32) -> Result<u8, AsmError> {
    s.strip_prefix('r')
        .and_then(|n| n.parse::<u8>().ok())
        .ok_or_else(|| malformed(line, s, "expected register r0..r255"))
}

fn parse_immediate(s: &str, line: u32) -> Result<i64, AsmError> {
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let magnitude = if let Some(hex) = body.strip_prefix("0x") {
        u64::from_str_radix(hex, 16).ok()
    } else {
        body.parse::<u64>().ok()
    }
    .ok_or_else(|| malformed(line, s, "expected integer"))?;
    if neg {
        if magnitude > 1u64 << 63 {
            return Err(malformed(line, s, "immediate out of 64-bit range"));
        }
        Ok((magnitude as i64).wrapping_neg())
    } else {
        // Hex literals may spell any 64-bit pattern; decimal must fit i64.
        if !body.starts_with("0x") && magnitude > i64::MAX as u64 {
            return Err(malformed(line, s, "immediate out of 64-bit range"));
        }
        Ok(magnitude as i64)
    }
}

/// `[rN]`, `[rN+imm]` or `[rN-imm]`.
fn parse_memory(s: &str, line: u32) -> Result<(u8, i64), AsmError> {
    let inner = s
        .strip_prefix('[')
        .and_then(|t| t.strip_suffix(']'))
        .ok_or_else(|| malformed(line, s, "expected [reg+offset]"))?
        .trim();
    let split = inner.find(['+', '-']);
    match split {
        None => Ok((parse_register(inner, line)?, 0)),
        Some(pos) => {
            let base = parse_register(inner[..pos].trim(), line)?;
            let offset = parse_immediate(inner[pos..].trim(), line)?;
            Ok((base, offset))
        }
    }
}

/// Renders a program as assembly. Every branch target gets a label (the
/// program's own label if one names that index, else `L<index>`), so
/// `assemble(disassemble(p))` reproduces `p` up to debug info.
pub fn disassemble(program: &Program) -> String {
    let mut names: BTreeMap<usize, String> = BTreeMap::new();
    for (name, &idx) in &program.labels {
        names.entry(idx).or_insert_with(|| name.clone());
    }
    for ins in &program.instructions {
        if let Some(t) = ins.target() {
            names.entry(t).or_insert_with(|| format!("L{t}"));
        }
    }
    let label_of = |t: usize| names.get(&t).cloned().unwrap_or_else(|| format!("L{t}"));

    let mut out = String::new();
    for (idx, ins) in program.instructions.iter().enumerate() {
        if let Some(name) = names.get(&idx) {
            let _ = writeln!(out, "{name}:");
        }
        let _ = write!(out, "    {}", format_instruction(ins, &label_of));
        if ins.source_line != 0 {
            let _ = write!(out, "    ; line {}", ins.source_line);
        }
        out.push('\n');
    }
    // A label may point one past the end (e.g. an empty tail block).
    if let Some(name) = names.get(&program.instructions.len()) {
        let _ = writeln!(out, "{name}:");
    }
    out
}

fn format_instruction(ins: &Instruction, label_of: &dyn Fn(usize) -> String) -> String {
    let r = |x: Option<u8>| format!("r{}", x.unwrap_or(0));
    let imm = ins.imm.unwrap_or(0);
    let mem = |base: Option<u8>| {
        if imm < 0 {
            format!("[r{}{}]", base.unwrap_or(0), imm)
        } else {
            format!("[r{}+{}]", base.unwrap_or(0), imm)
        }
    };
    let prefix = if ins.secure_prefix { "s." } else { "" };
    let m = ins.opcode.mnemonic();
    use Opcode::*;
    match ins.opcode {
        Ldi => format!("{m} {}, {imm}", r(ins.dst)),
        Mov => format!("{m} {}, {}", r(ins.dst), r(ins.src1)),
        Add | Sub | Mul | And | Or | Xor | Slt | Cmov => {
            format!("{m} {}, {}, {}", r(ins.dst), r(ins.src1), r(ins.src2))
        }
        Divc | Shl | Shr => format!("{m} {}, {}, {imm}", r(ins.dst), r(ins.src1)),
        Ld => format!("{m} {}, {}", r(ins.dst), mem(ins.src1)),
        St => format!("{m} {}, {}", mem(ins.src1), r(ins.src2)),
        Jmp | Call => format!("{m} {}", label_of(imm.max(0) as usize)),
        Bz | Bnz => format!("{prefix}{m} {}, {}", r(ins.src1), label_of(imm.max(0) as usize)),
        Ret | Nop | Halt | Eosjmp => m.to_string(),
    }
}
