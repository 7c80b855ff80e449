//! The toy instruction set.
//!
//! Every instruction has a fixed operand layout chosen by its opcode, so the
//! binary form needs no ModRM-style decoding. Branch targets are held as
//! absolute instruction indices in [`Instruction::imm`]; the binary form
//! stores them as byte displacements relative to the end of the branch.

mod asm;
mod encoding;
mod layout;
mod validate;

pub use asm::{assemble, disassemble, AsmError};
pub use encoding::{decode, encode, BinaryImage, DecodeError, EncodeError};
pub use layout::{DataLayout, DataSymbol, Inputs, LayoutError};
pub use validate::{validate, Diagnostic, DiagnosticKind};

use std::collections::BTreeMap;
use std::fmt;

/// Default number of general registers.
pub const DEFAULT_REGISTERS: usize = 16;
/// Secure-branch prefix, also the first byte of `eosjmp`.
pub const SECURE_PREFIX: u8 = 0x2E;
/// Single-byte NOP, also the second byte of `eosjmp`.
pub const NOP_BYTE: u8 = 0x90;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Opcode {
    Ldi,
    Mov,
    Add,
    Sub,
    Mul,
    Divc,
    And,
    Or,
    Xor,
    Shl,
    Shr,
    Slt,
    Ld,
    St,
    Jmp,
    Bz,
    Bnz,
    Cmov,
    Call,
    Ret,
    Nop,
    Halt,
    Eosjmp,
}

/// Operand slots used by an opcode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OperandLayout {
    pub dst: bool,
    pub src1: bool,
    pub src2: bool,
    pub imm: bool,
}

impl OperandLayout {
    const fn new(dst: bool, src1: bool, src2: bool, imm: bool) -> Self {
        Self { dst, src1, src2, imm }
    }
}

impl Opcode {
    pub const ALL: [Opcode; 23] = [
        Opcode::Ldi,
        Opcode::Mov,
        Opcode::Add,
        Opcode::Sub,
        Opcode::Mul,
        Opcode::Divc,
        Opcode::And,
        Opcode::Or,
        Opcode::Xor,
        Opcode::Shl,
        Opcode::Shr,
        Opcode::Slt,
        Opcode::Ld,
        Opcode::St,
        Opcode::Jmp,
        Opcode::Bz,
        Opcode::Bnz,
        Opcode::Cmov,
        Opcode::Call,
        Opcode::Ret,
        Opcode::Nop,
        Opcode::Halt,
        Opcode::Eosjmp,
    ];

    pub fn mnemonic(self) -> &'static str {
        match self {
            Opcode::Ldi => "ldi",
            Opcode::Mov => "mov",
            Opcode::Add => "add",
            Opcode::Sub => "sub",
            Opcode::Mul => "mul",
            Opcode::Divc => "divc",
            Opcode::And => "and",
            Opcode::Or => "or",
            Opcode::Xor => "xor",
            Opcode::Shl => "shl",
            Opcode::Shr => "shr",
            Opcode::Slt => "slt",
            Opcode::Ld => "ld",
            Opcode::St => "st",
            Opcode::Jmp => "jmp",
            Opcode::Bz => "bz",
            Opcode::Bnz => "bnz",
            Opcode::Cmov => "cmov",
            Opcode::Call => "call",
            Opcode::Ret => "ret",
            Opcode::Nop => "nop",
            Opcode::Halt => "halt",
            Opcode::Eosjmp => "eosjmp",
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<Opcode> {
        Opcode::ALL.into_iter().find(|op| op.mnemonic() == s)
    }

    /// Opcode byte. `eosjmp` has none of its own: it is the prefix followed
    /// by the NOP byte.
    pub fn byte(self) -> u8 {
        match self {
            Opcode::Ldi => 0x01,
            Opcode::Mov => 0x02,
            Opcode::Add => 0x03,
            Opcode::Sub => 0x04,
            Opcode::Mul => 0x05,
            Opcode::Divc => 0x06,
            Opcode::And => 0x07,
            Opcode::Or => 0x08,
            Opcode::Xor => 0x09,
            Opcode::Shl => 0x0A,
            Opcode::Shr => 0x0B,
            Opcode::Slt => 0x0C,
            Opcode::Ld => 0x10,
            Opcode::St => 0x11,
            Opcode::Jmp => 0x20,
            Opcode::Bz => 0x21,
            Opcode::Bnz => 0x22,
            Opcode::Cmov => 0x30,
            Opcode::Call => 0x40,
            Opcode::Ret => 0x41,
            Opcode::Nop | Opcode::Eosjmp => NOP_BYTE,
            Opcode::Halt => 0xF4,
        }
    }

    /// Inverse of [`Opcode::byte`] for single-byte opcodes (never `eosjmp`).
    pub fn from_byte(b: u8) -> Option<Opcode> {
        Opcode::ALL
            .into_iter()
            .find(|op| *op != Opcode::Eosjmp && op.byte() == b)
    }

    pub fn layout(self) -> OperandLayout {
        use Opcode::*;
        match self {
            Ldi => OperandLayout::new(true, false, false, true),
            Mov => OperandLayout::new(true, true, false, false),
            Add | Sub | Mul | And | Or | Xor | Slt | Cmov => OperandLayout::new(true, true, true, false),
            Divc | Shl | Shr | Ld => OperandLayout::new(true, true, false, true),
            St => OperandLayout::new(false, true, true, true),
            Jmp | Call => OperandLayout::new(false, false, false, true),
            Bz | Bnz => OperandLayout::new(false, true, false, true),
            Ret | Nop | Halt | Eosjmp => OperandLayout::new(false, false, false, false),
        }
    }

    /// Whether `imm` holds an instruction-index target.
    pub fn has_target(self) -> bool {
        matches!(self, Opcode::Jmp | Opcode::Bz | Opcode::Bnz | Opcode::Call)
    }

    pub fn is_conditional_branch(self) -> bool {
        matches!(self, Opcode::Bz | Opcode::Bnz)
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Instruction {
    pub opcode: Opcode,
    pub dst: Option<u8>,
    pub src1: Option<u8>,
    pub src2: Option<u8>,
    pub imm: Option<i64>,
    pub secure_prefix: bool,
    /// Debug info only; not part of the binary encoding.
    pub source_line: u32,
}

impl Instruction {
    fn raw(opcode: Opcode) -> Self {
        Self {
            opcode,
            dst: None,
            src1: None,
            src2: None,
            imm: None,
            secure_prefix: false,
            source_line: 0,
        }
    }

    pub fn ldi(dst: u8, imm: i64) -> Self {
        Self { dst: Some(dst), imm: Some(imm), ..Self::raw(Opcode::Ldi) }
    }

    pub fn mov(dst: u8, src: u8) -> Self {
        Self { dst: Some(dst), src1: Some(src), ..Self::raw(Opcode::Mov) }
    }

    /// Three-register form: ALU ops, `slt` and `cmov`.
    pub fn alu(opcode: Opcode, dst: u8, a: u8, b: u8) -> Self {
        debug_assert_eq!(opcode.layout(), Opcode::Add.layout());
        Self { dst: Some(dst), src1: Some(a), src2: Some(b), ..Self::raw(opcode) }
    }

    /// Register + immediate form: `divc`, `shl`, `shr`.
    pub fn alu_imm(opcode: Opcode, dst: u8, src: u8, imm: i64) -> Self {
        debug_assert!(matches!(opcode, Opcode::Divc | Opcode::Shl | Opcode::Shr));
        Self { dst: Some(dst), src1: Some(src), imm: Some(imm), ..Self::raw(opcode) }
    }

    pub fn ld(dst: u8, base: u8, offset: i64) -> Self {
        Self { dst: Some(dst), src1: Some(base), imm: Some(offset), ..Self::raw(Opcode::Ld) }
    }

    pub fn st(base: u8, value: u8, offset: i64) -> Self {
        Self { src1: Some(base), src2: Some(value), imm: Some(offset), ..Self::raw(Opcode::St) }
    }

    pub fn jmp(target: usize) -> Self {
        Self { imm: Some(target as i64), ..Self::raw(Opcode::Jmp) }
    }

    pub fn call(target: usize) -> Self {
        Self { imm: Some(target as i64), ..Self::raw(Opcode::Call) }
    }

    pub fn branch(opcode: Opcode, cond: u8, target: usize, secure: bool) -> Self {
        debug_assert!(opcode.is_conditional_branch());
        Self {
            src1: Some(cond),
            imm: Some(target as i64),
            secure_prefix: secure,
            ..Self::raw(opcode)
        }
    }

    pub fn cmov(dst: u8, pred: u8, src: u8) -> Self {
        Self::alu(Opcode::Cmov, dst, pred, src)
    }

    /// Operand-less instructions: `ret`, `nop`, `halt`, `eosjmp`.
    pub fn bare(opcode: Opcode) -> Self {
        debug_assert_eq!(opcode.layout(), Opcode::Nop.layout());
        Self::raw(opcode)
    }

    pub fn with_line(mut self, line: u32) -> Self {
        self.source_line = line;
        self
    }

    pub fn target(&self) -> Option<usize> {
        if self.opcode.has_target() {
            self.imm.and_then(|t| usize::try_from(t).ok())
        } else {
            None
        }
    }

    /// Registers read by this instruction.
    pub fn reads(&self) -> impl Iterator<Item = u8> {
        let extra = if self.opcode == Opcode::Cmov { self.dst } else { None };
        self.src1.into_iter().chain(self.src2).chain(extra)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    pub instructions: Vec<Instruction>,
    pub labels: BTreeMap<String, usize>,
    pub entry: usize,
    pub register_count: usize,
    /// Words of data memory the program expects.
    pub data_size: usize,
}

impl Default for Program {
    fn default() -> Self {
        Self::new(Vec::new())
    }
}

impl Program {
    pub fn new(instructions: Vec<Instruction>) -> Self {
        Self {
            instructions,
            labels: BTreeMap::new(),
            entry: 0,
            register_count: DEFAULT_REGISTERS,
            data_size: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.instructions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instructions.is_empty()
    }

    /// Drops source lines and labels, the parts a binary image cannot carry.
    pub fn without_debug_info(&self) -> Program {
        let mut p = self.clone();
        p.labels.clear();
        for ins in &mut p.instructions {
            ins.source_line = 0;
        }
        p
    }

    /// What a legacy decoder sees: secure prefixes cleared and every
    /// `eosjmp` replaced by `nop`.
    pub fn legacy_view(&self) -> Program {
        let mut p = self.clone();
        for ins in &mut p.instructions {
            ins.secure_prefix = false;
            if ins.opcode == Opcode::Eosjmp {
                ins.opcode = Opcode::Nop;
            }
        }
        p
    }

    pub fn secure_branch_count(&self) -> usize {
        self.instructions.iter().filter(|i| i.secure_prefix).count()
    }

    pub fn eosjmp_count(&self) -> usize {
        self.instructions
            .iter()
            .filter(|i| i.opcode == Opcode::Eosjmp)
            .count()
    }
}
