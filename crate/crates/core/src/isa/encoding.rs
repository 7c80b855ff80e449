//! Byte-exact binary encoding.
//!
//! Layout per instruction:
//!
//! ```text
//! [2E]? opcode dst src1 src2 [imm: 8 bytes little-endian]
//! ```
//!
//! Unused operand bytes are zero and the immediate is present only for
//! opcodes whose layout uses it. `nop` is the single byte 90 and `eosjmp` is
//! 2E 90, neither with operand bytes. Branch immediates are byte
//! displacements from the end of the branch instruction.

use std::collections::HashMap;

use thiserror::Error;

use super::{Instruction, Opcode, Program, NOP_BYTE, SECURE_PREFIX};
use crate::Mode;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryImage {
    pub bytes: Vec<u8>,
    /// Byte offset of each instruction, indexed by instruction index.
    pub byte_offsets: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("instruction {index}: operands do not match the `{opcode}` layout")]
    OperandLayout { index: usize, opcode: Opcode },
    #[error("instruction {index}: secure prefix on non-branch `{opcode}`")]
    SecurePrefixOnNonBranch { index: usize, opcode: Opcode },
    #[error("instruction {index}: branch target {target} out of range")]
    TargetOutOfRange { index: usize, target: i64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("truncated instruction at byte {offset}")]
    Truncated { offset: usize },
    #[error("unknown opcode byte {byte:#04x} at byte {offset}")]
    UnknownOpcode { offset: usize, byte: u8 },
    #[error("prefix 0x2e before non-branch opcode {byte:#04x} at byte {offset}")]
    InvalidPrefix { offset: usize, byte: u8 },
    #[error("nonzero unused operand byte at byte {offset}")]
    NonZeroPadding { offset: usize },
    #[error("branch at byte {offset} targets byte {target}, which is not an instruction boundary")]
    MisalignedTarget { offset: usize, target: i64 },
}

fn encoded_len(ins: &Instruction) -> usize {
    match ins.opcode {
        Opcode::Nop => 1,
        Opcode::Eosjmp => 2,
        op => usize::from(ins.secure_prefix) + 4 + if op.layout().imm { 8 } else { 0 },
    }
}

fn check_layout(index: usize, ins: &Instruction) -> Result<(), EncodeError> {
    let l = ins.opcode.layout();
    let ok = l.dst == ins.dst.is_some()
        && l.src1 == ins.src1.is_some()
        && l.src2 == ins.src2.is_some()
        && l.imm == ins.imm.is_some();
    if !ok {
        return Err(EncodeError::OperandLayout { index, opcode: ins.opcode });
    }
    if ins.secure_prefix && !ins.opcode.is_conditional_branch() {
        return Err(EncodeError::SecurePrefixOnNonBranch { index, opcode: ins.opcode });
    }
    Ok(())
}

pub fn encode(program: &Program) -> Result<BinaryImage, EncodeError> {
    let mut byte_offsets = Vec::with_capacity(program.len());
    let mut offset = 0usize;
    for (index, ins) in program.instructions.iter().enumerate() {
        check_layout(index, ins)?;
        byte_offsets.push(offset);
        offset += encoded_len(ins);
    }

    let mut bytes = Vec::with_capacity(offset);
    for (index, ins) in program.instructions.iter().enumerate() {
        match ins.opcode {
            Opcode::Nop => bytes.push(NOP_BYTE),
            Opcode::Eosjmp => bytes.extend_from_slice(&[SECURE_PREFIX, NOP_BYTE]),
            op => {
                if ins.secure_prefix {
                    bytes.push(SECURE_PREFIX);
                }
                bytes.push(op.byte());
                bytes.push(ins.dst.unwrap_or(0));
                bytes.push(ins.src1.unwrap_or(0));
                bytes.push(ins.src2.unwrap_or(0));
                if let Some(imm) = ins.imm {
                    let value = if op.has_target() {
                        let target = usize::try_from(imm)
                            .ok()
                            .and_then(|t| byte_offsets.get(t))
                            .ok_or(EncodeError::TargetOutOfRange { index, target: imm })?;
                        let end = byte_offsets[index] + encoded_len(ins);
                        *target as i64 - end as i64
                    } else {
                        imm
                    };
                    bytes.extend_from_slice(&value.to_le_bytes());
                }
            }
        }
    }
    Ok(BinaryImage { bytes, byte_offsets })
}

/// Decodes a byte stream. In [`Mode::Sempe`] the 0x2E prefix marks secure
/// branches and 2E 90 is `eosjmp`; in [`Mode::Legacy`] the prefix is
/// consumed and ignored, so 2E 90 is a NOP.
///
/// Register count and data size are not part of the encoding; the result
/// carries the defaults.
pub fn decode(bytes: &[u8], mode: Mode) -> Result<Program, DecodeError> {
    let mut instructions = Vec::new();
    let mut offsets = Vec::new();
    // (instruction index, end offset, displacement) for later resolution
    let mut pending_targets = Vec::new();
    let mut pos = 0usize;

    while pos < bytes.len() {
        let start = pos;
        let mut prefixed = false;
        while bytes[pos] == SECURE_PREFIX {
            if prefixed && mode == Mode::Sempe {
                return Err(DecodeError::InvalidPrefix { offset: pos, byte: SECURE_PREFIX });
            }
            prefixed = true;
            pos += 1;
            if pos >= bytes.len() {
                return Err(DecodeError::Truncated { offset: start });
            }
        }
        let byte = bytes[pos];
        if byte == NOP_BYTE {
            let opcode = if prefixed && mode == Mode::Sempe { Opcode::Eosjmp } else { Opcode::Nop };
            pos += 1;
            offsets.push(start);
            instructions.push(Instruction::bare(opcode));
            continue;
        }
        let opcode = Opcode::from_byte(byte).ok_or(DecodeError::UnknownOpcode { offset: pos, byte })?;
        if prefixed && mode == Mode::Sempe && !opcode.is_conditional_branch() {
            return Err(DecodeError::InvalidPrefix { offset: start, byte });
        }
        let layout = opcode.layout();
        let need = 4 + if layout.imm { 8 } else { 0 };
        if pos + need > bytes.len() {
            return Err(DecodeError::Truncated { offset: start });
        }
        let operand = |present: bool, b: u8, at: usize| -> Result<Option<u8>, DecodeError> {
            match (present, b) {
                (true, v) => Ok(Some(v)),
                (false, 0) => Ok(None),
                (false, _) => Err(DecodeError::NonZeroPadding { offset: at }),
            }
        };
        let dst = operand(layout.dst, bytes[pos + 1], pos + 1)?;
        let src1 = operand(layout.src1, bytes[pos + 2], pos + 2)?;
        let src2 = operand(layout.src2, bytes[pos + 3], pos + 3)?;
        let imm = if layout.imm {
            let mut raw = [0u8; 8];
            raw.copy_from_slice(&bytes[pos + 4..pos + 12]);
            Some(i64::from_le_bytes(raw))
        } else {
            None
        };
        pos += need;
        let index = instructions.len();
        if opcode.has_target() {
            pending_targets.push((index, start, pos, imm.unwrap_or(0)));
        }
        offsets.push(start);
        instructions.push(Instruction {
            opcode,
            dst,
            src1,
            src2,
            imm,
            secure_prefix: prefixed && mode == Mode::Sempe,
            source_line: 0,
        });
    }

    let index_of: HashMap<usize, usize> = offsets.iter().enumerate().map(|(i, &o)| (o, i)).collect();
    for (index, start, end, disp) in pending_targets {
        let target = end as i64 + disp;
        let resolved = usize::try_from(target)
            .ok()
            .and_then(|t| index_of.get(&t))
            .ok_or(DecodeError::MisalignedTarget { offset: start, target })?;
        instructions[index].imm = Some(*resolved as i64);
    }
    Ok(Program::new(instructions))
}
