use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::circuits::{self, Circuit};
use crate::counter_machine::{fixtures, parse_program, Program};
use crate::diffusion::NoiseSchedule;

use super::ConfigError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    CmRun,
    Pinball,
    Leakage,
    Converge,
    Prefix,
    Derandomize,
    Circuit,
}

impl Kind {
    pub const ALL: [Kind; 7] = [
        Kind::CmRun,
        Kind::Pinball,
        Kind::Leakage,
        Kind::Converge,
        Kind::Prefix,
        Kind::Derandomize,
        Kind::Circuit,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Kind::CmRun => "cm-run",
            Kind::Pinball => "pinball",
            Kind::Leakage => "leakage",
            Kind::Converge => "converge",
            Kind::Prefix => "prefix",
            Kind::Derandomize => "derandomize",
            Kind::Circuit => "circuit",
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Kind {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Kind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| ConfigError(format!("unknown experiment kind {s:?}")))
    }
}

/// `anbn`, `parity` or a path to a program file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProgramRef(pub String);

impl ProgramRef {
    pub fn load(&self, base: &Path) -> Result<Program, ConfigError> {
        match self.0.as_str() {
            "anbn" => Ok(fixtures::anbn()),
            "parity" => Ok(fixtures::parity()),
            path => {
                let p = base.join(path);
                let text = std::fs::read_to_string(&p)
                    .map_err(|e| ConfigError(format!("program file {}: {e}", p.display())))?;
                parse_program(&text).map_err(|e| ConfigError(format!("program file {}: {e}", p.display())))
            }
        }
    }
}

fn default_program() -> ProgramRef {
    ProgramRef("anbn".into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CmRunParams {
    pub program: ProgramRef,
    pub input: String,
    pub step_limit: u64,
}

impl Default for CmRunParams {
    fn default() -> Self {
        Self {
            program: default_program(),
            input: "aabb".into(),
            step_limit: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PinballParams {
    pub program: ProgramRef,
    pub input: String,
    pub cell_size: f64,
    pub trials: u64,
    /// Defaults to `0.005 min(1, 1/Lipschitz)`.
    pub step: Option<f64>,
    /// Defaults to `50 N S L`.
    pub t_max: Option<f64>,
    pub noise_scale: f64,
    /// Stride of the state dump for trial 0; 0 disables it.
    pub record_stride: u64,
    pub lipschitz_samples: usize,
}

impl Default for PinballParams {
    fn default() -> Self {
        Self {
            program: default_program(),
            input: "ab".into(),
            cell_size: 6.0,
            trials: 100,
            step: None,
            t_max: None,
            noise_scale: 1.0,
            record_stride: 0,
            lipschitz_samples: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LeakageParams {
    pub program: ProgramRef,
    pub input: String,
    pub cell_sizes: Vec<f64>,
    pub trials: u64,
    pub step: Option<f64>,
    /// Defaults to `50 N S L` at the largest cell size.
    pub t_max: Option<f64>,
    pub lipschitz_samples: usize,
}

impl Default for LeakageParams {
    fn default() -> Self {
        Self {
            program: ProgramRef("parity".into()),
            input: "aaa".into(),
            cell_sizes: vec![2.0, 3.0, 4.0, 6.0],
            trials: 100,
            step: None,
            t_max: None,
            lipschitz_samples: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergeParams {
    /// Only `circle` (the shipped d=2 three-mass fixture) is built in.
    pub fixture: String,
    pub schedule: NoiseSchedule,
    pub step_counts: Vec<usize>,
    pub samples: usize,
}

impl Default for ConvergeParams {
    fn default() -> Self {
        Self {
            fixture: "circle".into(),
            schedule: NoiseSchedule::default(),
            step_counts: vec![4, 16, 64, 256],
            samples: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrefixParams {
    pub modulus: usize,
    pub max_len: usize,
    pub correct_weight: f64,
    pub schedule: NoiseSchedule,
    pub steps: usize,
    pub samples: usize,
}

impl Default for PrefixParams {
    fn default() -> Self {
        Self {
            modulus: 7,
            max_len: 4,
            correct_weight: 0.8,
            schedule: NoiseSchedule::default(),
            steps: 256,
            samples: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DerandomizeParams {
    /// Advice file to verify; without one the shipped advice is used.
    pub advice: Option<PathBuf>,
    /// Search for a seed, starting at the master seed, instead of verifying
    /// advice.
    pub search: bool,
    pub search_attempts: usize,
    pub modulus: usize,
    pub max_len: usize,
    pub correct_weight: f64,
    pub schedule: NoiseSchedule,
    pub steps: usize,
    pub repetitions: usize,
}

impl Default for DerandomizeParams {
    fn default() -> Self {
        Self {
            advice: None,
            search: false,
            search_attempts: 10,
            modulus: 7,
            max_len: 4,
            correct_weight: 0.8,
            schedule: NoiseSchedule::default(),
            steps: 256,
            repetitions: 201,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CircuitParams {
    /// `k-equals`, `is-in`, `and`, `or`, `not` or `file`.
    pub construct: String,
    pub n: usize,
    pub k: usize,
    pub set: Vec<usize>,
    pub file: Option<PathBuf>,
    /// Bit strings to evaluate, input 0 first; empty means all `2^n`.
    pub inputs: Vec<String>,
}

impl Default for CircuitParams {
    fn default() -> Self {
        Self {
            construct: "k-equals".into(),
            n: 6,
            k: 3,
            set: Vec::new(),
            file: None,
            inputs: Vec::new(),
        }
    }
}

pub const MAX_EXHAUSTIVE_ARITY: usize = 20;

impl CircuitParams {
    /// The circuit and, for built-in gadgets, its popcount oracle.
    pub fn build(&self, base: &Path) -> Result<(Circuit, Option<Vec<usize>>), ConfigError> {
        let err = |e: circuits::CircuitError| ConfigError(e.to_string());
        let n = self.n;
        match self.construct.as_str() {
            "k-equals" => Ok((circuits::k_equals(n, self.k).map_err(err)?, Some(vec![self.k]))),
            "is-in" => Ok((circuits::is_in(n, &self.set).map_err(err)?, Some(self.set.clone()))),
            "and" => Ok((circuits::and_gate(n), Some(vec![n]))),
            "or" => Ok((circuits::or_gate(n), Some((1..=n).collect()))),
            "not" => Ok((circuits::not_gate(), Some(vec![0]))),
            "file" => {
                let path = self
                    .file
                    .as_ref()
                    .ok_or_else(|| ConfigError("construct = \"file\" needs `file`".into()))?;
                let p = base.join(path);
                let text = std::fs::read_to_string(&p)
                    .map_err(|e| ConfigError(format!("circuit file {}: {e}", p.display())))?;
                let c = Circuit::from_json(&text)
                    .map_err(|e| ConfigError(format!("circuit file {}: {e}", p.display())))?;
                Ok((c, None))
            }
            other => Err(ConfigError(format!("unknown circuit construct {other:?}"))),
        }
    }

    pub fn parse_inputs(&self, arity: usize) -> Result<Vec<Vec<bool>>, ConfigError> {
        if self.inputs.is_empty() {
            if arity > MAX_EXHAUSTIVE_ARITY {
                return Err(ConfigError(format!(
                    "arity {arity} is too large to enumerate; list `inputs`"
                )));
            }
            return Ok((0u64..1 << arity)
                .map(|b| (0..arity).map(|i| b >> i & 1 == 1).collect())
                .collect());
        }
        self.inputs
            .iter()
            .map(|s| {
                if s.len() != arity || s.chars().any(|c| c != '0' && c != '1') {
                    return Err(ConfigError(format!("input {s:?} is not {arity} bits")));
                }
                Ok(s.chars().map(|c| c == '1').collect())
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "kebab-case")]
pub enum Params {
    CmRun(CmRunParams),
    Pinball(PinballParams),
    Leakage(LeakageParams),
    Converge(ConvergeParams),
    Prefix(PrefixParams),
    Derandomize(DerandomizeParams),
    Circuit(CircuitParams),
}

impl Params {
    pub fn default_for(kind: Kind) -> Self {
        match kind {
            Kind::CmRun => Params::CmRun(Default::default()),
            Kind::Pinball => Params::Pinball(Default::default()),
            Kind::Leakage => Params::Leakage(Default::default()),
            Kind::Converge => Params::Converge(Default::default()),
            Kind::Prefix => Params::Prefix(Default::default()),
            Kind::Derandomize => Params::Derandomize(Default::default()),
            Kind::Circuit => Params::Circuit(Default::default()),
        }
    }

    pub fn kind(&self) -> Kind {
        match self {
            Params::CmRun(_) => Kind::CmRun,
            Params::Pinball(_) => Kind::Pinball,
            Params::Leakage(_) => Kind::Leakage,
            Params::Converge(_) => Kind::Converge,
            Params::Prefix(_) => Kind::Prefix,
            Params::Derandomize(_) => Kind::Derandomize,
            Params::Circuit(_) => Kind::Circuit,
        }
    }

    fn from_table(kind: Kind, table: toml::Table) -> Result<Self, ConfigError> {
        let v = toml::Value::Table(table);
        let e = |e: toml::de::Error| ConfigError(format!("[params] for {kind}: {e}"));
        Ok(match kind {
            Kind::CmRun => Params::CmRun(v.try_into().map_err(e)?),
            Kind::Pinball => Params::Pinball(v.try_into().map_err(e)?),
            Kind::Leakage => Params::Leakage(v.try_into().map_err(e)?),
            Kind::Converge => Params::Converge(v.try_into().map_err(e)?),
            Kind::Prefix => Params::Prefix(v.try_into().map_err(e)?),
            Kind::Derandomize => Params::Derandomize(v.try_into().map_err(e)?),
            Kind::Circuit => Params::Circuit(v.try_into().map_err(e)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(flatten)]
    pub params: Params,
    pub seed: u64,
    pub out: PathBuf,
    /// Directory that relative paths in the config resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    kind: String,
    seed: Option<u64>,
    out: Option<PathBuf>,
    #[serde(default)]
    params: toml::Table,
}

pub const DEFAULT_SEED: u64 = 20240101;

impl ExperimentConfig {
    pub fn defaults(kind: Kind) -> Self {
        Self {
            params: Params::default_for(kind),
            seed: DEFAULT_SEED,
            out: PathBuf::from("out").join(kind.as_str()),
            base_dir: PathBuf::from("."),
        }
    }

    pub fn kind(&self) -> Kind {
        self.params.kind()
    }

    /// Parses a TOML config; relative paths resolve against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
        let kind: Kind = raw.kind.parse()?;
        let defaults = Self::defaults(kind);
        Ok(Self {
            params: Params::from_table(kind, raw.params)?,
            seed: raw.seed.unwrap_or(defaults.seed),
            out: raw.out.unwrap_or(defaults.out),
            base_dir: base_dir.to_path_buf(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    /// Applies `--trials`: trial count, sample count or repetitions,
    /// depending on the kind.
    pub fn override_trials(&mut self, n: u64) -> Result<(), ConfigError> {
        match &mut self.params {
            Params::Pinball(p) => p.trials = n,
            Params::Leakage(p) => p.trials = n,
            Params::Converge(p) => p.samples = n as usize,
            Params::Prefix(p) => p.samples = n as usize,
            Params::Derandomize(p) => p.repetitions = n as usize,
            Params::CmRun(_) | Params::Circuit(_) => {
                return Err(ConfigError(format!("--trials does not apply to {}", self.kind())))
            }
        }
        Ok(())
    }

    /// Checks every precondition that can be checked without simulating.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: String| Err(ConfigError(m));
        let base = &self.base_dir;
        let positive = |name: &str, v: Option<f64>| -> Result<(), ConfigError> {
            match v {
                Some(x) if !(x.is_finite() && x > 0.0) => Err(ConfigError(format!("{name} must be positive, got {x}"))),
                _ => Ok(()),
            }
        };
        let check_input = |p: &Program, input: &str| {
            p.check_input(input).map_err(|e| ConfigError(format!("input {input:?}: {e}")))
        };
        match &self.params {
            Params::CmRun(p) => {
                let prog = p.program.load(base)?;
                check_input(&prog, &p.input)?;
            }
            Params::Pinball(p) => {
                let prog = p.program.load(base)?;
                check_input(&prog, &p.input)?;
                positive("cell_size", Some(p.cell_size))?;
                positive("step", p.step)?;
                positive("t_max", p.t_max)?;
                if p.trials == 0 {
                    return fail("trials must be positive".into());
                }
                if !(p.noise_scale.is_finite() && p.noise_scale >= 0.0) {
                    return fail("noise_scale must be nonnegative".into());
                }
                if p.lipschitz_samples < 2 {
                    return fail("lipschitz_samples must be at least 2".into());
                }
            }
            Params::Leakage(p) => {
                let prog = p.program.load(base)?;
                check_input(&prog, &p.input)?;
                if p.cell_sizes.is_empty() {
                    return fail("cell_sizes is empty".into());
                }
                for &l in &p.cell_sizes {
                    positive("cell size", Some(l))?;
                }
                positive("step", p.step)?;
                positive("t_max", p.t_max)?;
                if p.trials < crate::sde::MIN_LEAKAGE_TRIALS {
                    return fail(format!(
                        "leakage needs at least {} trials, got {}",
                        crate::sde::MIN_LEAKAGE_TRIALS,
                        p.trials
                    ));
                }
                if p.lipschitz_samples < 2 {
                    return fail("lipschitz_samples must be at least 2".into());
                }
            }
            Params::Converge(p) => {
                if p.fixture != "circle" {
                    return fail(format!("unknown mixture fixture {:?}", p.fixture));
                }
                p.schedule.validate().map_err(|e| ConfigError(e.to_string()))?;
                if p.step_counts.is_empty() || p.step_counts.contains(&0) {
                    return fail("step_counts must be nonempty and positive".into());
                }
                if p.samples == 0 {
                    return fail("samples must be positive".into());
                }
            }
            Params::Prefix(p) => {
                p.schedule.validate().map_err(|e| ConfigError(e.to_string()))?;
                crate::diffusion::PrefixTask::mod_p_word(p.modulus, p.max_len, p.correct_weight)
                    .map_err(|e| ConfigError(e.to_string()))?;
                if p.steps == 0 || p.samples == 0 {
                    return fail("steps and samples must be positive".into());
                }
            }
            Params::Derandomize(p) => {
                if let Some(path) = &p.advice {
                    crate::diffusion::AdviceSeed::load(&base.join(path)).map_err(ConfigError)?;
                }
                if p.search {
                    p.schedule.validate().map_err(|e| ConfigError(e.to_string()))?;
                    crate::diffusion::PrefixTask::mod_p_word(p.modulus, p.max_len, p.correct_weight)
                        .map_err(|e| ConfigError(e.to_string()))?;
                    if p.steps == 0 || p.search_attempts == 0 {
                        return fail("steps and search_attempts must be positive".into());
                    }
                    if p.repetitions % 2 == 0 {
                        return fail(format!("repetitions must be odd, got {}", p.repetitions));
                    }
                }
            }
            Params::Circuit(p) => {
                let (c, _) = p.build(base)?;
                p.parse_inputs(c.arity())?;
            }
        }
        Ok(())
    }
}
