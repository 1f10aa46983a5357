//! Lowering of a program run onto a path of lattice cells.
//!
//! A machine state `(registers, head, pc)` lives at cell
//! `(r_1, ..., r_k, 2*head, pc, 0)`. The last coordinate is the jump lane.
//! One transition leaves its state cell along the lane axis, travels at a
//! fixed lane height while the other coordinates change one unit step at a
//! time, and comes back down to lane 0 at the next state cell:
//!
//! 1. rise from lane 0 to `side * height`
//! 2. step the head coordinate to the odd value next to `2*head`, toward the
//!    target head position
//! 3. apply register deltas
//! 4. walk the pc coordinate to the jump target
//! 5. step the head coordinate to `2*head'`
//! 6. descend to lane 0
//!
//! While travelling, the head coordinate is odd, so a route never passes
//! over the column above or below any state cell. Consecutive transitions
//! use opposite lane sides, so a state cell is always crossed straight
//! through. Heights start at 1 and grow only when a route would reuse a cell.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::counter_machine::{self, ExecVerdict, MachineError, MachineState, Program, Verdict};

/// Integer cell coordinates: registers, doubled head, pc, jump lane.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LatticeCoord(pub Vec<i64>);

impl LatticeCoord {
    pub fn dims(&self) -> usize {
        self.0.len()
    }

    pub fn lane(&self) -> i64 {
        *self.0.last().expect("coordinates are never empty")
    }

    /// Axis index and sign of the unit step from `self` to `other`, if they
    /// are lattice neighbours.
    pub fn unit_step_to(&self, other: &LatticeCoord) -> Option<(usize, i64)> {
        if self.dims() != other.dims() {
            return None;
        }
        let mut found = None;
        for (i, (a, b)) in self.0.iter().zip(&other.0).enumerate() {
            match b - a {
                0 => {}
                d @ (1 | -1) if found.is_none() => found = Some((i, d)),
                _ => return None,
            }
        }
        found
    }
}

/// An axis-aligned unit step between two neighbouring cells.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathSegment {
    pub start: LatticeCoord,
    pub end: LatticeCoord,
}

impl PathSegment {
    pub fn new(start: LatticeCoord, end: LatticeCoord) -> Option<Self> {
        start.unit_step_to(&end)?;
        Some(Self { start, end })
    }

    /// `(axis, +1 | -1)`.
    pub fn direction(&self) -> (usize, i64) {
        self.start
            .unit_step_to(&self.end)
            .expect("segment endpoints are neighbours")
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CompileError {
    #[error(transparent)]
    Machine(#[from] MachineError),
    #[error("program did not halt within {0} steps on this input")]
    NoHalt(u64),
    #[error("transition {step}: every lane height up to {max_height} collides with an earlier groove")]
    Collision { step: usize, max_height: i64 },
    #[error("bad groove geometry: {0}")]
    Geometry(String),
}

/// Register, head and pc values of a machine state.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StatePoint {
    pub registers: Vec<i64>,
    pub head: usize,
    pub pc: usize,
}

impl From<&MachineState> for StatePoint {
    fn from(s: &MachineState) -> Self {
        Self {
            registers: s.registers.clone(),
            head: s.head,
            pc: s.pc,
        }
    }
}

pub fn embed(state: &StatePoint) -> LatticeCoord {
    let mut c = state.registers.clone();
    c.push(2 * state.head as i64);
    c.push(state.pc as i64);
    c.push(0);
    LatticeCoord(c)
}

/// Inverse of [`embed`] for state cells; `None` for transit cells.
pub fn unembed(cell: &LatticeCoord) -> Option<StatePoint> {
    let n = cell.dims();
    if n < 3 || cell.0[n - 1] != 0 || cell.0[n - 3] % 2 != 0 || cell.0[n - 3] < 0 || cell.0[n - 2] < 1
    {
        return None;
    }
    Some(StatePoint {
        registers: cell.0[..n - 3].to_vec(),
        head: (cell.0[n - 3] / 2) as usize,
        pc: cell.0[n - 2] as usize,
    })
}

/// Cells visited by one transition, excluding the source state cell and
/// ending with the target state cell.
pub fn transit_path(from: &StatePoint, to: &StatePoint, side: i64, height: i64) -> Vec<LatticeCoord> {
    debug_assert!(side == 1 || side == -1);
    debug_assert!(height >= 1);
    let k = from.registers.len();
    let (head_ax, pc_ax, lane_ax) = (k, k + 1, k + 2);
    let mut cur = embed(from).0;
    let mut out = Vec::new();
    let mut push = |cur: &Vec<i64>| out.push(LatticeCoord(cur.clone()));

    for _ in 0..height {
        cur[lane_ax] += side;
        push(&cur);
    }
    let (src, dst) = (2 * from.head as i64, 2 * to.head as i64);
    let offset = if dst < src { -1 } else { 1 };
    cur[head_ax] += offset;
    push(&cur);
    for j in 0..k {
        let delta = to.registers[j] - from.registers[j];
        if delta != 0 {
            cur[j] += delta.signum();
            push(&cur);
        }
    }
    let target_pc = to.pc as i64;
    while cur[pc_ax] != target_pc {
        cur[pc_ax] += (target_pc - cur[pc_ax]).signum();
        push(&cur);
    }
    cur[head_ax] += (dst - cur[head_ax]).signum();
    push(&cur);
    for _ in 0..height {
        cur[lane_ax] -= side;
        push(&cur);
    }
    out
}

/// Maximum lane height tried before reporting a collision.
pub const MAX_LANE_HEIGHT: i64 = 64;

/// The compiled groove: a simple path of cells from START to a terminal
/// cell, realizing one program run.
#[derive(Debug, Clone, PartialEq)]
pub struct GrooveGraph {
    registers: usize,
    cells: Vec<LatticeCoord>,
    /// Path index of each visited machine state, in execution order.
    state_indices: Vec<usize>,
    verdict: Verdict,
}

impl GrooveGraph {
    /// Runs `program` on `input` and lays the resulting state sequence out
    /// as grooves.
    pub fn compile(program: &Program, input: &str, step_limit: u64) -> Result<Self, CompileError> {
        let run = counter_machine::run(program, input, step_limit)?;
        let verdict = match run.verdict {
            ExecVerdict::Accept => Verdict::Accept,
            ExecVerdict::Reject => Verdict::Reject,
            ExecVerdict::StepLimitExceeded => return Err(CompileError::NoHalt(step_limit)),
        };
        if run.trace.len() as u64 != run.steps + 1 {
            return Err(CompileError::Geometry("state trace was truncated".into()));
        }
        let states: Vec<StatePoint> = run.trace.iter().map(StatePoint::from).collect();
        Self::from_states(&states, program.registers(), verdict)
    }

    /// Lays out an explicit state sequence (consecutive states must differ by
    /// one machine step).
    pub fn from_states(
        states: &[StatePoint],
        registers: usize,
        verdict: Verdict,
    ) -> Result<Self, CompileError> {
        let first = states
            .first()
            .ok_or_else(|| CompileError::Geometry("empty state sequence".into()))?;
        let mut cells = vec![embed(first)];
        let mut occupied: HashSet<LatticeCoord> = cells.iter().cloned().collect();
        let mut state_indices = vec![0];
        for (step, pair) in states.windows(2).enumerate() {
            let side = if step % 2 == 0 { 1 } else { -1 };
            let route = (1..=MAX_LANE_HEIGHT)
                .map(|h| transit_path(&pair[0], &pair[1], side, h))
                .find(|route| route.iter().all(|c| !occupied.contains(c)))
                .ok_or(CompileError::Collision {
                    step,
                    max_height: MAX_LANE_HEIGHT,
                })?;
            occupied.extend(route.iter().cloned());
            cells.extend(route);
            state_indices.push(cells.len() - 1);
        }
        Ok(Self {
            registers,
            cells,
            state_indices,
            verdict,
        })
    }

    /// Rebuilds a graph from its segment list, checking that the segments
    /// chain into a simple path that starts and ends on state cells.
    pub fn from_segments(
        registers: usize,
        start: LatticeCoord,
        segments: &[PathSegment],
        verdict: Verdict,
    ) -> Result<Self, CompileError> {
        let bad = |m: String| CompileError::Geometry(m);
        let mut cells = vec![start];
        for (i, seg) in segments.iter().enumerate() {
            if seg.start != *cells.last().unwrap() {
                return Err(bad(format!("segment {i} does not continue the path")));
            }
            if seg.start.unit_step_to(&seg.end).is_none() {
                return Err(bad(format!("segment {i} is not a unit step")));
            }
            cells.push(seg.end.clone());
        }
        if cells.iter().any(|c| c.dims() != registers + 3) {
            return Err(bad("cell dimension does not match register count".into()));
        }
        let unique: HashSet<&LatticeCoord> = cells.iter().collect();
        if unique.len() != cells.len() {
            return Err(bad("path revisits a cell".into()));
        }
        let state_indices: Vec<usize> = cells
            .iter()
            .enumerate()
            .filter(|(_, c)| c.lane() == 0)
            .map(|(i, _)| i)
            .collect();
        if state_indices.first() != Some(&0) || state_indices.last() != Some(&(cells.len() - 1)) {
            return Err(bad("path must start and end on lane 0".into()));
        }
        Ok(Self {
            registers,
            cells,
            state_indices,
            verdict,
        })
    }

    pub fn registers(&self) -> usize {
        self.registers
    }

    pub fn dims(&self) -> usize {
        self.registers + 3
    }

    pub fn cells(&self) -> &[LatticeCoord] {
        &self.cells
    }

    pub fn start(&self) -> &LatticeCoord {
        &self.cells[0]
    }

    pub fn terminal(&self) -> &LatticeCoord {
        self.cells.last().expect("path is never empty")
    }

    pub fn verdict(&self) -> Verdict {
        self.verdict
    }

    pub fn state_indices(&self) -> &[usize] {
        &self.state_indices
    }

    pub fn segments(&self) -> Vec<PathSegment> {
        self.cells
            .windows(2)
            .map(|w| PathSegment {
                start: w[0].clone(),
                end: w[1].clone(),
            })
            .collect()
    }

    /// State cells along the path, in order.
    pub fn state_cells(&self) -> Vec<LatticeCoord> {
        self.state_indices.iter().map(|&i| self.cells[i].clone()).collect()
    }

    /// Successor of each non-terminal cell. Fails if some cell would need two
    /// outgoing grooves.
    pub fn successors(&self) -> Result<HashMap<LatticeCoord, LatticeCoord>, CompileError> {
        let mut next = HashMap::with_capacity(self.cells.len());
        for seg in self.segments() {
            if let Some(prev) = next.insert(seg.start.clone(), seg.end.clone()) {
                if prev != seg.end {
                    return Err(CompileError::Geometry(format!(
                        "cell {:?} has two outgoing grooves",
                        seg.start.0
                    )));
                }
            }
        }
        Ok(next)
    }

    /// Follows grooves from START until no successor exists, returning the
    /// state cells passed on the way.
    pub fn walk_states(&self) -> Result<Vec<StatePoint>, CompileError> {
        let next = self.successors()?;
        let mut cur = self.start().clone();
        let mut out = Vec::new();
        let mut guard = 0usize;
        loop {
            if let Some(s) = unembed(&cur) {
                out.push(s);
            }
            match next.get(&cur) {
                Some(n) => cur = n.clone(),
                None => return Ok(out),
            }
            guard += 1;
            if guard > self.cells.len() {
                return Err(CompileError::Geometry("groove walk does not terminate".into()));
            }
        }
    }
}
