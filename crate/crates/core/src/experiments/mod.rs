//! Config-driven experiments behind the `difflab` binary.
//!
//! Each run writes `summary.json` (schema version, resolved config,
//! timestamp, results) and one or more deterministic CSV files to the output
//! directory. Identical config and seed give byte-identical CSVs.

mod config;

pub use config::*;

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::{json, Value};
use thiserror::Error;

use crate::counter_machine::{run, ExecVerdict};
use crate::diffusion::{self, AdviceSeed, PrefixTask, SamplerConfig};
use crate::groove::{self, GrooveParams, DEFAULT_COMPILE_STEP_LIMIT};
use crate::sde::{self, SdeParams};
use crate::seeds;

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

/// Stream index for the Lipschitz probe seed, kept apart from trial seeds.
const LIPSCHITZ_STREAM: u64 = u64::MAX;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{0}")]
pub struct ConfigError(pub String);

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ExperimentError {
    /// 2 for config validation failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 2,
            _ => 1,
        }
    }
}

fn rt(e: impl std::fmt::Display) -> ExperimentError {
    ExperimentError::Runtime(e.to_string())
}

/// Everything an experiment produces, before it touches the disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifacts {
    pub results: Value,
    /// `(file name, contents)`.
    pub csv: Vec<(String, String)>,
    /// Whether the experiment's built-in assertions hold.
    pub passed: bool,
    pub line: String,
    pub warnings: Vec<String>,
}

fn csv_row<I: IntoIterator<Item = String>>(out: &mut String, cells: I) {
    let cells: Vec<String> = cells.into_iter().collect();
    out.push_str(&cells.join(","));
    out.push('\n');
}

/// Runs the experiment without writing anything.
pub fn compute(cfg: &ExperimentConfig) -> Result<Artifacts, ExperimentError> {
    cfg.validate()?;
    match &cfg.params {
        Params::CmRun(p) => cm_run(cfg, p),
        Params::Pinball(p) => pinball(cfg, p),
        Params::Leakage(p) => leakage(cfg, p),
        Params::Converge(p) => converge(cfg, p),
        Params::Prefix(p) => prefix(cfg, p),
        Params::Derandomize(p) => derandomize(cfg, p),
        Params::Circuit(p) => circuit(cfg, p),
    }
}

/// Runs the experiment and writes its files to `cfg.out`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(Artifacts, Vec<PathBuf>), ExperimentError> {
    let art = compute(cfg)?;
    std::fs::create_dir_all(&cfg.out)?;
    let mut files = Vec::new();
    for (name, body) in &art.csv {
        let path = cfg.out.join(name);
        std::fs::write(&path, body)?;
        files.push(path);
    }
    let created = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let summary = json!({
        "schema_version": SUMMARY_SCHEMA_VERSION,
        "kind": cfg.kind(),
        "seed": cfg.seed,
        "config": cfg,
        "created_unix": created,
        "passed": art.passed,
        "warnings": art.warnings,
        "results": art.results,
    });
    let path = cfg.out.join("summary.json");
    std::fs::write(&path, serde_json::to_string_pretty(&summary).expect("json value serializes") + "\n")?;
    files.push(path);
    Ok((art, files))
}

struct PinballPlan {
    spec: groove::ForceFieldSpec,
    lipschitz: f64,
    interpreter: crate::counter_machine::ExecResult,
    params: SdeParams,
}

fn plan_pinball(cfg: &ExperimentConfig, p: &PinballParams) -> Result<PinballPlan, ExperimentError> {
    let prog = p.program.load(&cfg.base_dir)?;
    let interpreter = run(&prog, &p.input, DEFAULT_COMPILE_STEP_LIMIT).map_err(rt)?;
    let spec = groove::compile(&prog, &p.input, GrooveParams::for_cell_size(p.cell_size)).map_err(rt)?;
    let lipschitz = groove::lipschitz_estimate(&spec, p.lipschitz_samples, seeds::derive(cfg.seed, LIPSCHITZ_STREAM))
        .map_err(rt)?;
    let mut params = SdeParams::new(
        p.step.unwrap_or_else(|| sde::default_step(lipschitz)),
        p.t_max
            .unwrap_or_else(|| sde::default_t_max(prog.len(), interpreter.steps, p.cell_size)),
        cfg.seed,
    );
    params.noise_scale = p.noise_scale;
    Ok(PinballPlan {
        spec,
        lipschitz,
        interpreter,
        params,
    })
}

fn cm_run(cfg: &ExperimentConfig, p: &CmRunParams) -> Result<Artifacts, ExperimentError> {
    let prog = p.program.load(&cfg.base_dir)?;
    let r = run(&prog, &p.input, p.step_limit).map_err(rt)?;
    let mut csv = String::new();
    csv_row(
        &mut csv,
        ["step", "pc", "head"]
            .map(String::from)
            .into_iter()
            .chain((1..=prog.registers()).map(|j| format!("r{j}"))),
    );
    for s in &r.trace {
        csv_row(
            &mut csv,
            [s.step_count.to_string(), s.pc.to_string(), s.head.to_string()]
                .into_iter()
                .chain(s.registers.iter().map(|v| v.to_string())),
        );
    }
    Ok(Artifacts {
        results: json!({ "verdict": r.verdict, "steps": r.steps }),
        csv: vec![("trace.csv".into(), csv)],
        passed: true,
        line: format!("cm-run {:?}: {} after {} steps", p.input, r.verdict, r.steps),
        warnings: Vec::new(),
    })
}

fn pinball(cfg: &ExperimentConfig, p: &PinballParams) -> Result<Artifacts, ExperimentError> {
    let plan = plan_pinball(cfg, p)?;
    if plan.interpreter.verdict == ExecVerdict::StepLimitExceeded {
        return Err(rt("the interpreter did not halt; nothing to compile"));
    }
    let warnings: Vec<String> = plan.params.stability_warning(plan.lipschitz).into_iter().collect();
    let (records, stats) = sde::run_trials(&plan.spec, &plan.params, p.trials, cfg.seed).map_err(rt)?;

    let mut csv = String::from("trial,seed,outcome,steps,time,trace_matches\n");
    for r in &records {
        csv_row(
            &mut csv,
            [
                r.index.to_string(),
                r.seed.to_string(),
                r.outcome.as_str().to_string(),
                r.steps.to_string(),
                r.time.to_string(),
                r.trace_matches.to_string(),
            ],
        );
    }
    let mut files = vec![("trials.csv".to_string(), csv)];
    if p.record_stride > 0 {
        let mut one = plan.params;
        one.seed = records[0].seed;
        one.record_stride = p.record_stride;
        let traj = sde::simulate_pinball(&plan.spec, &one).map_err(rt)?;
        let mut buf = Vec::new();
        sde::write_states_csv(&traj, &mut buf).map_err(rt)?;
        files.push(("trajectory.csv".into(), String::from_utf8(buf).expect("ascii csv")));
    }
    let passed = stats.wrong_verdicts == 0 && stats.trace_mismatches == 0;
    Ok(Artifacts {
        line: format!(
            "pinball {:?} L={}: {}/{} halted (accept {}, reject {}, leaked {}, timeout {}), wrong verdicts {}",
            p.input,
            p.cell_size,
            stats.accept + stats.reject,
            stats.trials,
            stats.accept,
            stats.reject,
            stats.leaked,
            stats.timeout,
            stats.wrong_verdicts
        ),
        results: json!({
            "interpreter": { "verdict": plan.interpreter.verdict, "steps": plan.interpreter.steps },
            "cell_size": p.cell_size,
            "step": plan.params.step,
            "t_max": plan.params.t_max,
            "lipschitz": plan.lipschitz,
            "path_cells": plan.spec.graph().cells().len(),
            "stats": stats,
        }),
        csv: files,
        passed,
        warnings,
    })
}

struct LeakagePlan {
    program: crate::counter_machine::Program,
    lipschitz: f64,
    params: SdeParams,
}

fn plan_leakage(cfg: &ExperimentConfig, p: &LeakageParams) -> Result<LeakagePlan, ExperimentError> {
    let program = p.program.load(&cfg.base_dir)?;
    let r = run(&program, &p.input, DEFAULT_COMPILE_STEP_LIMIT).map_err(rt)?;
    if r.verdict == ExecVerdict::StepLimitExceeded {
        return Err(rt("the interpreter did not halt; nothing to compile"));
    }
    let l_min = p.cell_sizes.iter().cloned().fold(f64::INFINITY, f64::min);
    let l_max = p.cell_sizes.iter().cloned().fold(0.0, f64::max);
    let spec = groove::compile(&program, &p.input, GrooveParams::for_cell_size(l_min)).map_err(rt)?;
    let lipschitz = groove::lipschitz_estimate(&spec, p.lipschitz_samples, seeds::derive(cfg.seed, LIPSCHITZ_STREAM))
        .map_err(rt)?;
    let params = SdeParams::new(
        p.step.unwrap_or_else(|| sde::default_step(lipschitz)),
        p.t_max
            .unwrap_or_else(|| sde::default_t_max(program.len(), r.steps, l_max)),
        cfg.seed,
    );
    Ok(LeakagePlan {
        program,
        lipschitz,
        params,
    })
}

fn leakage(cfg: &ExperimentConfig, p: &LeakageParams) -> Result<Artifacts, ExperimentError> {
    let plan = plan_leakage(cfg, p)?;
    let rows = sde::leakage_study(&plan.program, &p.input, &p.cell_sizes, &plan.params, p.trials, cfg.seed)
        .map_err(rt)?;
    let mut csv = String::from("cell_size,trials,accept,reject,leaked,timeout,success_rate,ci_low,ci_high\n");
    for r in &rows {
        let s = &r.stats;
        csv_row(
            &mut csv,
            [
                r.cell_size.to_string(),
                s.trials.to_string(),
                s.accept.to_string(),
                s.reject.to_string(),
                s.leaked.to_string(),
                s.timeout.to_string(),
                s.success_rate.to_string(),
                s.ci_low.to_string(),
                s.ci_high.to_string(),
            ],
        );
    }
    let passed = sde::success_non_decreasing(&rows)
        && rows.iter().all(|r| r.stats.wrong_verdicts == 0);
    let rates: Vec<String> = rows
        .iter()
        .map(|r| format!("L={}: {:.2}", r.cell_size, r.stats.success_rate))
        .collect();
    Ok(Artifacts {
        line: format!("leakage {:?}: {}", p.input, rates.join(", ")),
        results: json!({
            "step": plan.params.step,
            "t_max": plan.params.t_max,
            "lipschitz": plan.lipschitz,
            "rows": rows,
            "non_decreasing": sde::success_non_decreasing(&rows),
        }),
        csv: vec![("leakage.csv".into(), csv)],
        passed,
        warnings: plan.params.stability_warning(plan.lipschitz).into_iter().collect(),
    })
}

fn converge(cfg: &ExperimentConfig, p: &ConvergeParams) -> Result<Artifacts, ExperimentError> {
    let (mix, q) = diffusion::circle_fixture();
    let curve = diffusion::convergence_curve(&mix, &p.schedule, &q, &p.step_counts, p.samples, cfg.seed)
        .map_err(rt)?;
    let mut csv = String::from("step_count,tv,band_low,band_high\n");
    for c in &curve {
        csv_row(
            &mut csv,
            [
                c.steps.to_string(),
                c.tv.to_string(),
                (c.tv - c.band).max(0.0).to_string(),
                (c.tv + c.band).min(1.0).to_string(),
            ],
        );
    }
    let passed = diffusion::non_increasing_within_bands(&curve);
    let pts: Vec<String> = curve.iter().map(|c| format!("{}: {:.4}", c.steps, c.tv)).collect();
    Ok(Artifacts {
        line: format!("converge TV by steps {}", pts.join(", ")),
        results: json!({ "curve": curve, "non_increasing": passed }),
        csv: vec![("convergence.csv".into(), csv)],
        passed,
        warnings: Vec::new(),
    })
}

fn prefix(cfg: &ExperimentConfig, p: &PrefixParams) -> Result<Artifacts, ExperimentError> {
    let task = PrefixTask::mod_p_word(p.modulus, p.max_len, p.correct_weight).map_err(rt)?;
    let sampler = SamplerConfig::new(&p.schedule, p.steps);
    let report = diffusion::prefix_eval(&task, &p.schedule, &sampler, p.samples, cfg.seed).map_err(rt)?;
    let mut csv = String::new();
    csv_row(
        &mut csv,
        ["prefix", "answer", "empirical_margin", "analytic_margin", "satisfied"]
            .map(String::from)
            .into_iter()
            .chain((0..task.tokens()).map(|t| format!("p_{}", task.label(t)))),
    );
    for r in &report.rows {
        csv_row(
            &mut csv,
            [
                r.prefix.clone(),
                task.label(r.answer).to_string(),
                r.empirical_margin.to_string(),
                r.analytic_margin.to_string(),
                r.satisfied.to_string(),
            ]
            .into_iter()
            .chain(r.frequencies.iter().map(|f| f.to_string())),
        );
    }
    let worst = report
        .rows
        .iter()
        .map(|r| r.empirical_margin)
        .fold(f64::INFINITY, f64::min);
    Ok(Artifacts {
        line: format!(
            "prefix mod {}: {} prefixes, worst empirical margin {worst:.4}, epsilon {:.4}",
            p.modulus,
            task.len(),
            report.epsilon
        ),
        results: json!({
            "prefixes": task.len(),
            "epsilon": report.epsilon,
            "worst_margin": worst,
            "all_satisfied": report.all_satisfied,
        }),
        csv: vec![("prefix.csv".into(), csv)],
        passed: report.all_satisfied,
        warnings: Vec::new(),
    })
}

fn derandomize(cfg: &ExperimentConfig, p: &DerandomizeParams) -> Result<Artifacts, ExperimentError> {
    let (advice, search) = if p.search {
        let task = PrefixTask::mod_p_word(p.modulus, p.max_len, p.correct_weight).map_err(rt)?;
        let sampler = SamplerConfig::new(&p.schedule, p.steps);
        let s = diffusion::seed_search(&task, &p.schedule, &sampler, p.repetitions, cfg.seed, p.search_attempts)
            .map_err(rt)?;
        let advice = AdviceSeed {
            schema_version: diffusion::ADVICE_SCHEMA_VERSION,
            modulus: p.modulus,
            max_len: p.max_len,
            correct_weight: p.correct_weight,
            schedule: p.schedule,
            steps: p.steps,
            repetitions: p.repetitions,
            seed: s.found.unwrap_or(cfg.seed),
        };
        (advice, Some(s))
    } else {
        let advice = match &p.advice {
            Some(path) => AdviceSeed::load(&cfg.base_dir.join(path)).map_err(ConfigError)?,
            None => diffusion::shipped_advice(),
        };
        (advice, None)
    };
    let task = advice.task().map_err(rt)?;
    let report = diffusion::majority_derandomize(&task, &advice.schedule, &advice.sampler(), advice.repetitions, advice.seed)
        .map_err(rt)?;
    let mut csv = String::from("prefix,answer,output,correct\n");
    for (i, &o) in report.outputs.iter().enumerate() {
        csv_row(
            &mut csv,
            [
                task.prefix_label(i),
                task.label(task.answer(i)).to_string(),
                task.label(o).to_string(),
                (o == task.answer(i)).to_string(),
            ],
        );
    }
    let found = search.as_ref().map_or(true, |s| s.found.is_some());
    let passed = found && report.all_correct();
    Ok(Artifacts {
        line: format!(
            "derandomize m={} seed {}: {} of {} prefixes wrong{}",
            advice.repetitions,
            advice.seed,
            report.wrong,
            task.len(),
            search
                .as_ref()
                .map(|s| format!(", {} search attempts", s.attempts.len()))
                .unwrap_or_default()
        ),
        results: json!({
            "advice": advice,
            "wrong": report.wrong,
            "prefixes": task.len(),
            "search": search,
            "hoeffding_bound": diffusion::hoeffding_failure_bound(advice.repetitions, task.epsilon()),
        }),
        csv: vec![
            ("majority.csv".into(), csv),
            ("advice.json".into(), advice.to_json() + "\n"),
        ],
        passed,
        warnings: Vec::new(),
    })
}

fn circuit(cfg: &ExperimentConfig, p: &CircuitParams) -> Result<Artifacts, ExperimentError> {
    let (c, oracle) = p.build(&cfg.base_dir)?;
    let inputs = p.parse_inputs(c.arity())?;
    let mut csv = String::from("input,output,popcount,expected\n");
    let mut agree = true;
    for x in &inputs {
        let out = c.eval(x).map_err(rt)?;
        let pop = x.iter().filter(|&&b| b).count();
        let expected = oracle.as_ref().map(|s| s.contains(&pop));
        if expected.is_some_and(|e| e != out) {
            agree = false;
        }
        csv_row(
            &mut csv,
            [
                x.iter().map(|&b| if b { '1' } else { '0' }).collect(),
                u8::from(out).to_string(),
                pop.to_string(),
                expected.map(|e| u8::from(e).to_string()).unwrap_or_default(),
            ],
        );
    }
    let audit = c.audit_depth();
    let passed = agree && audit == c.declared_depth();
    Ok(Artifacts {
        line: format!(
            "circuit {} n={}: depth {} (audited {}), width {}, {} inputs, oracle {}",
            p.construct,
            c.arity(),
            c.declared_depth(),
            audit,
            c.width(),
            inputs.len(),
            if oracle.is_none() { "n/a" } else if agree { "agrees" } else { "DISAGREES" }
        ),
        results: json!({
            "arity": c.arity(),
            "declared_depth": c.declared_depth(),
            "audited_depth": audit,
            "width": c.width(),
            "gates": c.gate_count(),
            "inputs": inputs.len(),
            "oracle_agrees": oracle.as_ref().map(|_| agree),
            "circuit": c,
        }),
        csv: vec![("circuit.csv".into(), csv)],
        passed,
        warnings: Vec::new(),
    })
}

/// Dry-run report: resolved parameters and derived constants, no
/// simulation.
pub fn describe(cfg: &ExperimentConfig) -> Result<String, ExperimentError> {
    cfg.validate()?;
    let mut s = String::new();
    let _ = writeln!(s, "kind: {}", cfg.kind());
    let _ = writeln!(s, "seed: {}", cfg.seed);
    let _ = writeln!(s, "out: {}", cfg.out.display());
    let _ = writeln!(
        s,
        "params: {}",
        serde_json::to_string(&cfg.params).expect("params serialize")
    );
    match &cfg.params {
        Params::Pinball(p) => {
            let plan = plan_pinball(cfg, p)?;
            let _ = writeln!(s, "cell size L: {}", p.cell_size);
            let _ = writeln!(s, "step h: {}", plan.params.step);
            let _ = writeln!(s, "t_max: {}", plan.params.t_max);
            let _ = writeln!(s, "lipschitz estimate: {:.4}", plan.lipschitz);
            let _ = writeln!(s, "lipschitz bound: {:.4}", plan.spec.params().lipschitz_bound());
            let _ = writeln!(s, "interpreter: {} in {} steps", plan.interpreter.verdict, plan.interpreter.steps);
            let _ = writeln!(s, "path cells: {}", plan.spec.graph().cells().len());
            let _ = writeln!(s, "planned trials: {}", p.trials);
            if let Some(w) = plan.params.stability_warning(plan.lipschitz) {
                let _ = writeln!(s, "warning: {w}");
            }
        }
        Params::Leakage(p) => {
            let plan = plan_leakage(cfg, p)?;
            let _ = writeln!(s, "step h: {}", plan.params.step);
            let _ = writeln!(s, "t_max: {}", plan.params.t_max);
            let _ = writeln!(s, "lipschitz estimate: {:.4}", plan.lipschitz);
            let _ = writeln!(s, "planned runs: {}", p.cell_sizes.len());
            for (i, l) in p.cell_sizes.iter().enumerate() {
                let _ = writeln!(s, "  run {}: L={l}, {} trials", i + 1, p.trials);
            }
        }
        Params::Converge(p) => {
            let _ = writeln!(s, "planned runs: {} x {} samples", p.step_counts.len(), p.samples);
        }
        Params::Prefix(p) => {
            let task = PrefixTask::mod_p_word(p.modulus, p.max_len, p.correct_weight).map_err(rt)?;
            let _ = writeln!(s, "prefixes: {}, epsilon {:.4}", task.len(), task.epsilon());
            let _ = writeln!(s, "planned samples: {}", task.len() * p.samples);
        }
        Params::Derandomize(p) => {
            if p.search {
                let _ = writeln!(s, "seed search: up to {} attempts from seed {}", p.search_attempts, cfg.seed);
            } else {
                let a = match &p.advice {
                    Some(path) => AdviceSeed::load(&cfg.base_dir.join(path)).map_err(ConfigError)?,
                    None => diffusion::shipped_advice(),
                };
                let _ = writeln!(s, "advice: seed {} m={} steps={}", a.seed, a.repetitions, a.steps);
            }
        }
        Params::CmRun(_) | Params::Circuit(_) => {}
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cm_run_default_accepts() {
        let art = compute(&ExperimentConfig::defaults(Kind::CmRun)).unwrap();
        assert_eq!(art.results["verdict"], "accept");
        assert!(art.csv[0].1.starts_with("step,pc,head,r1,r2\n0,1,1,0,0\n"));
    }

    #[test]
    fn circuit_default_passes() {
        let art = compute(&ExperimentConfig::defaults(Kind::Circuit)).unwrap();
        assert!(art.passed);
        assert_eq!(art.csv[0].1.lines().count(), 65);
        assert_eq!(art.results["audited_depth"], 2);
    }

    #[test]
    fn config_errors_exit_two() {
        let mut cfg = ExperimentConfig::defaults(Kind::Pinball);
        if let Params::Pinball(p) = &mut cfg.params {
            p.program = ProgramRef("missing.cm".into());
        }
        assert_eq!(compute(&cfg).unwrap_err().exit_code(), 2);
        assert_eq!(describe(&cfg).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn describe_leakage_lists_runs() {
        let d = describe(&ExperimentConfig::defaults(Kind::Leakage)).unwrap();
        assert!(d.contains("planned runs: 4"));
        assert!(d.contains("run 4: L=6"));
    }
}
