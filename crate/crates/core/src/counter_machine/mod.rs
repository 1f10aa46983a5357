//! Reference interpreter for k-register counter machines with a read-only
//! input tape.
//!
//! The tape holds `^ w $`. Each instruction branches on the symbol under the
//! head and on which registers are zero, then adds a delta in {-1, 0, +1} to
//! every register, moves the head by at most one cell and jumps. Registers
//! range over all of `i64`; the only test is zero/nonzero.

mod parse;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use parse::parse_program;

/// Symbol under the read head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Symbol {
    Start,
    End,
    Letter(char),
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Symbol::Start => f.write_str("^"),
            Symbol::End => f.write_str("$"),
            Symbol::Letter(c) => write!(f, "{c}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Accept,
    Reject,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Accept => f.write_str("accept"),
            Verdict::Reject => f.write_str("reject"),
        }
    }
}

/// Effect of one branch of a conditional instruction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Branch {
    pub deltas: Vec<i8>,
    pub head: i8,
    pub next: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Instruction {
    /// Dense branch table indexed by `symbol_index * 2^k + zero_mask`, where
    /// bit `j` of `zero_mask` is set iff register `j` is nonzero.
    Case(Vec<Branch>),
    Halt(Verdict),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProgramError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: jump target {target} is not an instruction (program has {count})")]
    DanglingJump {
        line: usize,
        target: usize,
        count: usize,
    },
    #[error("instruction {instr}: no branch for symbol {symbol} with zero pattern {pattern}")]
    NonTotal {
        instr: usize,
        symbol: String,
        pattern: String,
    },
    #[error("line {line}: branch overlaps an earlier row of instruction {instr}")]
    Overlap { line: usize, instr: usize },
    #[error("malformed program: {0}")]
    Invalid(String),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MachineError {
    #[error("instruction {pc}: head move from position {head} leaves the tape (length {len})")]
    HeadOutOfTape { pc: usize, head: usize, len: usize },
    #[error("input symbol {0:?} is not in the program alphabet")]
    BadInput(char),
    #[error("program counter {0} is not a valid instruction")]
    BadPc(usize),
}

/// A validated counter-machine program. Instructions are numbered from 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    instructions: Vec<Instruction>,
    registers: usize,
    alphabet: Vec<char>,
}

impl Program {
    /// Builds a program from dense branch tables, checking jump targets,
    /// table sizes and delta ranges.
    pub fn new(
        instructions: Vec<Instruction>,
        registers: usize,
        alphabet: Vec<char>,
    ) -> Result<Self, ProgramError> {
        if registers > 16 {
            return Err(ProgramError::Invalid(format!(
                "{registers} registers exceeds the supported maximum of 16"
            )));
        }
        if instructions.is_empty() {
            return Err(ProgramError::Invalid("program has no instructions".into()));
        }
        let mut alphabet = alphabet;
        alphabet.sort_unstable();
        alphabet.dedup();
        if let Some(c) = alphabet.iter().find(|c| matches!(c, '^' | '$' | '*')) {
            return Err(ProgramError::Invalid(format!("reserved symbol {c:?} in alphabet")));
        }
        let rows = (alphabet.len() + 2) << registers;
        let count = instructions.len();
        for (idx, instr) in instructions.iter().enumerate() {
            let Instruction::Case(table) = instr else { continue };
            if table.len() != rows {
                return Err(ProgramError::Invalid(format!(
                    "instruction {}: branch table has {} rows, expected {rows}",
                    idx + 1,
                    table.len()
                )));
            }
            for b in table {
                if b.deltas.len() != registers
                    || b.deltas.iter().any(|d| !(-1..=1).contains(d))
                    || !(-1..=1).contains(&b.head)
                {
                    return Err(ProgramError::Invalid(format!(
                        "instruction {}: malformed branch {b:?}",
                        idx + 1
                    )));
                }
                if b.next == 0 || b.next > count {
                    return Err(ProgramError::DanglingJump {
                        line: idx + 1,
                        target: b.next,
                        count,
                    });
                }
            }
        }
        Ok(Self {
            instructions,
            registers,
            alphabet,
        })
    }

    pub fn len(&self) -> usize {
        self.instructions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instructions.is_empty()
    }

    pub fn registers(&self) -> usize {
        self.registers
    }

    pub fn alphabet(&self) -> &[char] {
        &self.alphabet
    }

    /// Instruction `number` (1-based).
    pub fn instruction(&self, number: usize) -> Option<&Instruction> {
        number.checked_sub(1).and_then(|i| self.instructions.get(i))
    }

    pub fn instructions(&self) -> &[Instruction] {
        &self.instructions
    }

    /// All head symbols the branch tables are indexed by, in table order.
    pub fn symbols(&self) -> Vec<Symbol> {
        let mut v = vec![Symbol::Start, Symbol::End];
        v.extend(self.alphabet.iter().map(|&c| Symbol::Letter(c)));
        v
    }

    pub(crate) fn symbol_index(&self, s: Symbol) -> Option<usize> {
        match s {
            Symbol::Start => Some(0),
            Symbol::End => Some(1),
            Symbol::Letter(c) => self.alphabet.binary_search(&c).ok().map(|i| i + 2),
        }
    }

    pub fn branch(&self, number: usize, symbol: Symbol, zero_mask: u32) -> Option<&Branch> {
        match self.instruction(number)? {
            Instruction::Case(table) => {
                let row = (self.symbol_index(symbol)? << self.registers) | zero_mask as usize;
                table.get(row)
            }
            Instruction::Halt(_) => None,
        }
    }

    pub fn check_input(&self, input: &str) -> Result<(), MachineError> {
        match input.chars().find(|c| self.alphabet.binary_search(c).is_err()) {
            Some(c) => Err(MachineError::BadInput(c)),
            None => Ok(()),
        }
    }
}

/// `^ w $` as a vector of symbols.
pub fn tape(input: &str) -> Vec<Symbol> {
    let mut t = vec![Symbol::Start];
    t.extend(input.chars().map(Symbol::Letter));
    t.push(Symbol::End);
    t
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MachineState {
    pub registers: Vec<i64>,
    /// Index into `^ w $`; the head starts at 1.
    pub head: usize,
    pub pc: usize,
    pub step_count: u64,
}

impl MachineState {
    pub fn initial(program: &Program) -> Self {
        Self {
            registers: vec![0; program.registers()],
            head: 1,
            pc: 1,
            step_count: 0,
        }
    }

    pub fn zero_mask(&self) -> u32 {
        self.registers
            .iter()
            .enumerate()
            .filter(|(_, r)| **r != 0)
            .fold(0, |m, (j, _)| m | (1 << j))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepOutcome {
    Continue(MachineState),
    Halted(Verdict),
}

/// Applies one instruction. HALT instructions report their verdict without
/// changing the state.
pub fn step(
    program: &Program,
    state: &MachineState,
    input: &str,
) -> Result<StepOutcome, MachineError> {
    let tape = tape(input);
    step_on_tape(program, state, &tape)
}

pub(crate) fn step_on_tape(
    program: &Program,
    state: &MachineState,
    tape: &[Symbol],
) -> Result<StepOutcome, MachineError> {
    let instr = program
        .instruction(state.pc)
        .ok_or(MachineError::BadPc(state.pc))?;
    let table = match instr {
        Instruction::Halt(v) => return Ok(StepOutcome::Halted(*v)),
        Instruction::Case(t) => t,
    };
    let symbol = *tape.get(state.head).ok_or(MachineError::HeadOutOfTape {
        pc: state.pc,
        head: state.head,
        len: tape.len(),
    })?;
    let sym = program.symbol_index(symbol).ok_or_else(|| match symbol {
        Symbol::Letter(c) => MachineError::BadInput(c),
        _ => unreachable!("^ and $ always have table rows"),
    })?;
    let branch = &table[(sym << program.registers()) | state.zero_mask() as usize];

    let head = state.head as i64 + branch.head as i64;
    if head < 0 || head >= tape.len() as i64 {
        return Err(MachineError::HeadOutOfTape {
            pc: state.pc,
            head: state.head,
            len: tape.len(),
        });
    }
    let registers = state
        .registers
        .iter()
        .zip(&branch.deltas)
        .map(|(r, d)| r + *d as i64)
        .collect();
    Ok(StepOutcome::Continue(MachineState {
        registers,
        head: head as usize,
        pc: branch.next,
        step_count: state.step_count + 1,
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExecVerdict {
    Accept,
    Reject,
    StepLimitExceeded,
}

impl From<Verdict> for ExecVerdict {
    fn from(v: Verdict) -> Self {
        match v {
            Verdict::Accept => ExecVerdict::Accept,
            Verdict::Reject => ExecVerdict::Reject,
        }
    }
}

impl fmt::Display for ExecVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExecVerdict::Accept => "accept",
            ExecVerdict::Reject => "reject",
            ExecVerdict::StepLimitExceeded => "step-limit-exceeded",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecResult {
    pub verdict: ExecVerdict,
    pub steps: u64,
    /// States visited, starting with the initial state. Capped at
    /// [`TRACE_CAP`] entries.
    pub trace: Vec<MachineState>,
}

pub const TRACE_CAP: usize = 100_000;

/// Runs from the initial state until a HALT or until `step_limit` calls of
/// [`step`] have been made.
pub fn run(program: &Program, input: &str, step_limit: u64) -> Result<ExecResult, MachineError> {
    program.check_input(input)?;
    let tape = tape(input);
    let mut state = MachineState::initial(program);
    let mut trace = vec![state.clone()];
    let mut budget = step_limit;
    loop {
        if budget == 0 {
            return Ok(ExecResult {
                verdict: ExecVerdict::StepLimitExceeded,
                steps: state.step_count,
                trace,
            });
        }
        budget -= 1;
        match step_on_tape(program, &state, &tape)? {
            StepOutcome::Halted(v) => {
                return Ok(ExecResult {
                    verdict: v.into(),
                    steps: state.step_count,
                    trace,
                })
            }
            StepOutcome::Continue(next) => {
                if trace.len() < TRACE_CAP {
                    trace.push(next.clone());
                }
                state = next;
            }
        }
    }
}

/// Programs shipped with the crate.
pub mod fixtures {
    use super::{parse_program, Program};

    pub const ANBN_SOURCE: &str = include_str!("../../fixtures/anbn.cm");
    pub const PARITY_SOURCE: &str = include_str!("../../fixtures/parity.cm");

    /// Two-register decider for `{a^n b^n}`.
    pub fn anbn() -> Program {
        parse_program(ANBN_SOURCE).expect("shipped fixture parses")
    }

    /// One-register decider for unary words of even length.
    pub fn parity() -> Program {
        parse_program(PARITY_SOURCE).expect("shipped fixture parses")
    }
}
