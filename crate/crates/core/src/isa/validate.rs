use std::fmt;

use super::{Opcode, Program};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagnosticKind {
    OperandLayout,
    SecurePrefixOnNonBranch,
    RegisterOutOfRange,
    TargetOutOfRange,
    DivideByZero,
    ShiftOutOfRange,
    EntryOutOfRange,
    NoHalt,
    FallsOffEnd,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub kind: DiagnosticKind,
    /// Instruction index, when the problem is tied to one.
    pub index: Option<usize>,
    pub line: u32,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.index {
            Some(i) if self.line != 0 => write!(f, "instruction {i} (line {}): {}", self.line, self.message),
            Some(i) => write!(f, "instruction {i}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

/// Static checks. An empty result means the program may be run.
pub fn validate(program: &Program) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let n = program.len();
    let regs = program.register_count;
    let mut push = |kind, index: Option<usize>, message: String| {
        let line = index.map(|i| program.instructions[i].source_line).unwrap_or(0);
        out.push(Diagnostic { kind, index, line, message });
    };

    if n == 0 {
        push(DiagnosticKind::NoHalt, None, "empty program".into());
        return out;
    }
    if program.entry >= n {
        push(DiagnosticKind::EntryOutOfRange, None, format!("entry {} out of range", program.entry));
    }

    for (i, ins) in program.instructions.iter().enumerate() {
        let l = ins.opcode.layout();
        if l.dst != ins.dst.is_some()
            || l.src1 != ins.src1.is_some()
            || l.src2 != ins.src2.is_some()
            || l.imm != ins.imm.is_some()
        {
            push(DiagnosticKind::OperandLayout, Some(i), format!("operands do not match `{}`", ins.opcode));
            continue;
        }
        if ins.secure_prefix && !ins.opcode.is_conditional_branch() {
            push(
                DiagnosticKind::SecurePrefixOnNonBranch,
                Some(i),
                format!("secure prefix on `{}`", ins.opcode),
            );
        }
        for r in [ins.dst, ins.src1, ins.src2].into_iter().flatten() {
            if usize::from(r) >= regs {
                push(
                    DiagnosticKind::RegisterOutOfRange,
                    Some(i),
                    format!("register r{r} out of range (R = {regs})"),
                );
            }
        }
        if ins.opcode.has_target() {
            let t = ins.imm.unwrap_or(-1);
            if t < 0 || t as usize >= n {
                push(DiagnosticKind::TargetOutOfRange, Some(i), format!("target {t} out of range 0..{n}"));
            }
        }
        match ins.opcode {
            Opcode::Divc if ins.imm == Some(0) => {
                push(DiagnosticKind::DivideByZero, Some(i), "divc by constant zero".into());
            }
            Opcode::Shl | Opcode::Shr if !(0..64).contains(&ins.imm.unwrap_or(0)) => {
                push(DiagnosticKind::ShiftOutOfRange, Some(i), "shift amount outside 0..64".into());
            }
            _ => {}
        }
    }

    if !program.instructions.iter().any(|i| i.opcode == Opcode::Halt) {
        push(DiagnosticKind::NoHalt, None, "no halt instruction".into());
    }
    let last = n - 1;
    if !matches!(program.instructions[last].opcode, Opcode::Halt | Opcode::Jmp | Opcode::Ret) {
        push(DiagnosticKind::FallsOffEnd, Some(last), "execution can fall off the end".into());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::{assemble, Instruction};

    #[test]
    fn clean_program_has_no_diagnostics() {
        assert!(validate(&assemble("nop\nhalt").unwrap()).is_empty());
    }

    #[test]
    fn divc_by_zero_is_reported_at_its_line() {
        let p = assemble("ldi r1, 4\ndivc r1, r1, 0\nhalt").unwrap();
        let d = validate(&p);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].kind, DiagnosticKind::DivideByZero);
        assert_eq!(d[0].line, 2);
    }

    #[test]
    fn branch_out_of_range() {
        let mut ins: Vec<_> = (0..9).map(|_| Instruction::bare(Opcode::Nop)).collect();
        ins.push(Instruction::bare(Opcode::Halt));
        ins[3] = Instruction::branch(Opcode::Bz, 1, 999, false);
        let d = validate(&Program::new(ins));
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].kind, DiagnosticKind::TargetOutOfRange);
        assert_eq!(d[0].index, Some(3));
    }

    #[test]
    fn register_range_follows_register_count() {
        let mut p = assemble("ldi r20, 1\nhalt").unwrap();
        assert_eq!(validate(&p)[0].kind, DiagnosticKind::RegisterOutOfRange);
        p.register_count = 48;
        assert!(validate(&p).is_empty());
    }

    #[test]
    fn missing_halt_and_fall_through() {
        let d = validate(&assemble("nop").unwrap());
        let kinds: Vec<_> = d.iter().map(|d| d.kind).collect();
        assert!(kinds.contains(&DiagnosticKind::NoHalt));
        assert!(kinds.contains(&DiagnosticKind::FallsOffEnd));
    }
}
