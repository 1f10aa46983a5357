//! Euler–Maruyama integration of the pinball SDE
//! `dx = x/2 dt + f(x) dt + dW` and of generic drift-diffusion processes.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::counter_machine::{Program, Verdict};
use crate::groove::{self, FieldCache, ForceFieldSpec, GrooveError, GrooveParams, LatticeCoord};
use crate::{par, seeds};

#[derive(Debug, Error)]
pub enum SdeError {
    #[error("integration produced a non-finite state at step {0}")]
    NonFinite(u64),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error(transparent)]
    Groove(#[from] GrooveError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One step `x += drift(x) h + noise_scale sqrt(h) xi`.
pub fn euler_maruyama_step<F>(
    x: &mut [f64],
    mut drift: F,
    h: f64,
    noise_scale: f64,
    xi: &[f64],
) -> Result<(), SdeError>
where
    F: FnMut(&[f64], &mut [f64]),
{
    let mut d = vec![0.0; x.len()];
    drift(x, &mut d);
    if d.iter().any(|v| !v.is_finite()) {
        return Err(SdeError::NonFinite(0));
    }
    let sh = h.sqrt() * noise_scale;
    for ((xi_, di), zi) in x.iter_mut().zip(&d).zip(xi) {
        *xi_ += di * h + sh * zi;
    }
    Ok(())
}

/// Integrates `n_steps` steps of a time-homogeneous SDE, calling `observe`
/// after every step.
pub fn integrate<F, O>(
    x: &mut [f64],
    mut drift: F,
    h: f64,
    noise_scale: f64,
    n_steps: u64,
    rng: &mut impl Rng,
    mut observe: O,
) -> Result<(), SdeError>
where
    F: FnMut(&[f64], &mut [f64]),
    O: FnMut(u64, &[f64]),
{
    let n = x.len();
    let mut d = vec![0.0; n];
    let sh = h.sqrt() * noise_scale;
    for step in 0..n_steps {
        drift(x, &mut d);
        for (xi, di) in x.iter_mut().zip(&d) {
            let z: f64 = rng.sample(StandardNormal);
            *xi += di * h + sh * z;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SdeError::NonFinite(step));
        }
        observe(step, x);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdeParams {
    /// Step size `h`.
    pub step: f64,
    /// Simulated time limit.
    pub t_max: f64,
    /// Multiplier on the Brownian increment; 1 for the pinball equation.
    pub noise_scale: f64,
    pub seed: u64,
    /// Record every `record_stride`-th state; 0 records nothing.
    pub record_stride: u64,
}

/// `0.005 * min(1, 1 / lipschitz)`.
pub fn default_step(lipschitz: f64) -> f64 {
    0.005 * (1.0 / lipschitz).min(1.0)
}

/// `50 * N * S * L`, with `S` at least 1.
pub fn default_t_max(instructions: usize, steps: u64, cell_size: f64) -> f64 {
    50.0 * instructions as f64 * steps.max(1) as f64 * cell_size
}

impl SdeParams {
    pub fn new(step: f64, t_max: f64, seed: u64) -> Self {
        Self {
            step,
            t_max,
            noise_scale: 1.0,
            seed,
            record_stride: 0,
        }
    }

    pub fn validate(&self) -> Result<(), SdeError> {
        if !(self.step.is_finite() && self.step > 0.0) {
            return Err(SdeError::Argument(format!("step must be positive, got {}", self.step)));
        }
        if !(self.t_max.is_finite() && self.t_max > 0.0) {
            return Err(SdeError::Argument(format!("t_max must be positive, got {}", self.t_max)));
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return Err(SdeError::Argument(format!(
                "noise scale must be nonnegative, got {}",
                self.noise_scale
            )));
        }
        Ok(())
    }

    /// Explicit Euler on a field with this Lipschitz constant is only
    /// trustworthy for `h * lipschitz <= 1`.
    pub fn stability_warning(&self, lipschitz: f64) -> Option<String> {
        (self.step * lipschitz > 1.0).then(|| {
            format!(
                "step {} exceeds the stability bound 1/{lipschitz:.3} of the field",
                self.step
            )
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Accept,
    Reject,
    Leaked,
    Timeout,
}

impl Outcome {
    pub fn halted(self) -> bool {
        matches!(self, Outcome::Accept | Outcome::Reject)
    }

    pub fn verdict(self) -> Option<Verdict> {
        match self {
            Outcome::Accept => Some(Verdict::Accept),
            Outcome::Reject => Some(Verdict::Reject),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Accept => "accept",
            Outcome::Reject => "reject",
            Outcome::Leaked => "leaked",
            Outcome::Timeout => "timeout",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSample {
    pub t: f64,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub outcome: Outcome,
    /// Integration steps taken.
    pub steps: u64,
    pub time: f64,
    /// Recorded states (see [`SdeParams::record_stride`]).
    pub samples: Vec<StateSample>,
    /// State cells passed, in order.
    pub cell_trace: Vec<LatticeCoord>,
    /// Whether `cell_trace` equals the compiled state sequence.
    pub trace_matches: bool,
}

/// Integrates the pinball equation from the center of the START cell.
///
/// The run ends when the ball comes within `r/2` of the terminal cell center
/// (accept or reject, per the compiled HALT), when its distance to the
/// groove path exceeds `L/2` (leaked), or at `t_max`.
pub fn simulate_pinball(spec: &ForceFieldSpec, params: &SdeParams) -> Result<Trajectory, SdeError> {
    params.validate()?;
    let graph = spec.graph();
    let n = spec.dims();
    let l = spec.cell_size();
    let leak = l / 2.0;
    let core = spec.params().corridor_radius / 2.0;
    let core2 = core * core;
    let terminal = spec.cell_center(graph.terminal());
    let halted = match graph.verdict() {
        Verdict::Accept => Outcome::Accept,
        Verdict::Reject => Outcome::Reject,
    };

    let mut ordinal = vec![u32::MAX; graph.cells().len()];
    for (o, &i) in graph.state_indices().iter().enumerate() {
        ordinal[i] = o as u32;
    }
    let mut visited: Vec<u32> = Vec::new();

    let mut rng = seeds::rng(params.seed);
    let mut x = spec.cell_center(graph.start());
    let mut g = vec![0.0; n];
    let mut cache = FieldCache::default();
    let mut samples = Vec::new();
    let h = params.step;
    let sh = h.sqrt() * params.noise_scale;
    let mut step: u64 = 0;

    let outcome = loop {
        let t = step as f64 * h;
        let near = spec.groove_force_cached(&x, &mut g, &mut cache);
        let o = ordinal[near.path_index];
        if o != u32::MAX && visited.last() != Some(&o) {
            visited.push(o);
        }
        if params.record_stride > 0 && step % params.record_stride == 0 {
            samples.push(StateSample { t, x: x.clone() });
        }
        let to_terminal: f64 = x.iter().zip(&terminal).map(|(a, b)| (a - b) * (a - b)).sum();
        if to_terminal < core2 {
            break halted;
        }
        if near.distance > leak {
            break Outcome::Leaked;
        }
        if t >= params.t_max {
            break Outcome::Timeout;
        }
        for (xi, gi) in x.iter_mut().zip(&g) {
            // f = -x/2 + groove; the SDE adds +x/2 back.
            let f = -0.5 * *xi + gi;
            let z: f64 = rng.sample(StandardNormal);
            *xi += (0.5 * *xi + f) * h + sh * z;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SdeError::NonFinite(step));
        }
        step += 1;
    };

    let cell_trace: Vec<LatticeCoord> = visited
        .iter()
        .map(|&o| graph.cells()[graph.state_indices()[o as usize]].clone())
        .collect();
    let trace_matches = visited.len() == graph.state_indices().len()
        && visited.iter().enumerate().all(|(i, &o)| o as usize == i);
    Ok(Trajectory {
        outcome,
        steps: step,
        time: step as f64 * h,
        samples,
        cell_trace,
        trace_matches,
    })
}

/// Writes `t,x0,x1,...` rows for the recorded states.
pub fn write_states_csv(traj: &Trajectory, mut w: impl Write) -> Result<(), SdeError> {
    let dims = traj.samples.first().map_or(0, |s| s.x.len());
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain((0..dims).map(|i| format!("x{i}")))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    for s in &traj.samples {
        let row: Vec<String> = std::iter::once(format!("{}", s.t))
            .chain(s.x.iter().map(|v| format!("{v}")))
            .collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Summary of one trial, without the recorded states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub index: u64,
    pub seed: u64,
    pub outcome: Outcome,
    pub steps: u64,
    pub time: f64,
    pub trace_matches: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialStats {
    pub trials: u64,
    pub accept: u64,
    pub reject: u64,
    pub leaked: u64,
    pub timeout: u64,
    /// Halted runs whose verdict differs from the compiled HALT.
    pub wrong_verdicts: u64,
    /// Halted runs whose state-cell trace differs from the compiled one.
    pub trace_mismatches: u64,
    /// Fraction of trials that halted.
    pub success_rate: f64,
    /// 95% Wilson score interval for `success_rate`.
    pub ci_low: f64,
    pub ci_high: f64,
    pub mean_halting_time: Option<f64>,
}

/// 95% Wilson score interval for `k` successes in `n` trials.
pub fn wilson_interval(k: u64, n: u64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054;
    let n_f = n as f64;
    let p = k as f64 / n_f;
    let denom = 1.0 + z * z / n_f;
    let center = (p + z * z / (2.0 * n_f)) / denom;
    let half = z * (p * (1.0 - p) / n_f + z * z / (4.0 * n_f * n_f)).sqrt() / denom;
    let lo = if k == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if k == n { 1.0 } else { (center + half).min(1.0) };
    (lo, hi)
}

impl TrialStats {
    pub fn from_records(records: &[TrialRecord], expected: Verdict) -> Self {
        let count = |o: Outcome| records.iter().filter(|r| r.outcome == o).count() as u64;
        let halted: Vec<&TrialRecord> = records.iter().filter(|r| r.outcome.halted()).collect();
        let successes = halted.len() as u64;
        let trials = records.len() as u64;
        let (ci_low, ci_high) = wilson_interval(successes, trials);
        Self {
            trials,
            accept: count(Outcome::Accept),
            reject: count(Outcome::Reject),
            leaked: count(Outcome::Leaked),
            timeout: count(Outcome::Timeout),
            wrong_verdicts: halted
                .iter()
                .filter(|r| r.outcome.verdict() != Some(expected))
                .count() as u64,
            trace_mismatches: halted.iter().filter(|r| !r.trace_matches).count() as u64,
            success_rate: if trials == 0 { 0.0 } else { successes as f64 / trials as f64 },
            ci_low,
            ci_high,
            mean_halting_time: (!halted.is_empty())
                .then(|| halted.iter().map(|r| r.time).sum::<f64>() / successes as f64),
        }
    }
}

/// Runs `trials` independent trajectories; trial `i` uses seed
/// `seeds::derive(master_seed, i)`. Records come back ordered by trial index
/// whatever the worker count.
pub fn run_trials(
    spec: &ForceFieldSpec,
    params: &SdeParams,
    trials: u64,
    master_seed: u64,
) -> Result<(Vec<TrialRecord>, TrialStats), SdeError> {
    params.validate()?;
    let records = par::try_map(trials as usize, |i| {
        let i = i as u64;
        let seed = seeds::derive(master_seed, i);
        let p = SdeParams {
            seed,
            record_stride: 0,
            ..*params
        };
        let t = simulate_pinball(spec, &p)?;
        Ok::<_, SdeError>(TrialRecord {
            index: i,
            seed,
            outcome: t.outcome,
            steps: t.steps,
            time: t.time,
            trace_matches: t.trace_matches,
        })
    })?;
    let stats = TrialStats::from_records(&records, spec.graph().verdict());
    Ok((records, stats))
}

pub const MIN_LEAKAGE_TRIALS: u64 = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageRow {
    pub cell_size: f64,
    pub stats: TrialStats,
}

/// Success statistics per cell size with matched trial seeds across sizes.
/// Field constants follow [`GrooveParams::for_cell_size`]; `params.t_max`
/// is used as given for every size.
pub fn leakage_study(
    program: &Program,
    input: &str,
    cell_sizes: &[f64],
    params: &SdeParams,
    trials: u64,
    master_seed: u64,
) -> Result<Vec<LeakageRow>, SdeError> {
    if trials < MIN_LEAKAGE_TRIALS {
        return Err(SdeError::Argument(format!(
            "leakage study needs at least {MIN_LEAKAGE_TRIALS} trials, got {trials}"
        )));
    }
    cell_sizes
        .iter()
        .map(|&l| {
            let spec = groove::compile(program, input, GrooveParams::for_cell_size(l))?;
            let (_, stats) = run_trials(&spec, params, trials, master_seed)?;
            Ok(LeakageRow { cell_size: l, stats })
        })
        .collect()
}

/// Whether success is non-decreasing along `rows` within the Wilson
/// intervals: each row's upper bound reaches the previous row's lower bound.
pub fn success_non_decreasing(rows: &[LeakageRow]) -> bool {
    rows.windows(2).all(|w| w[1].stats.ci_high >= w[0].stats.ci_low)
}
