use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    arg, histogram, sample_tokens, Component, DiffusionError, GaussianMixture, NoiseSchedule,
    Quantizer, SamplerConfig,
};
use crate::seeds;

/// Variance of the point-like components in the shipped fixtures.
pub const FIXTURE_VARIANCE: f64 = 1e-4;
/// Distance of fixture centroids from the origin; keeps `E‖x‖ ≤ 1`.
pub const FIXTURE_RADIUS: f64 = 0.95;

/// Next-token prediction where the conditional law of every prefix is given
/// directly as a Gaussian mixture, quantized by a shared [`Quantizer`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefixTask {
    labels: Vec<String>,
    prefixes: Vec<Vec<usize>>,
    answers: Vec<usize>,
    mixtures: Vec<GaussianMixture>,
    quantizer: Quantizer,
    epsilon: f64,
}

impl PrefixTask {
    /// Checks that every prefix's correct token outweighs every other token
    /// by more than `epsilon`.
    pub fn new(
        labels: Vec<String>,
        prefixes: Vec<Vec<usize>>,
        answers: Vec<usize>,
        mixtures: Vec<GaussianMixture>,
        quantizer: Quantizer,
        epsilon: f64,
    ) -> Result<Self, DiffusionError> {
        let m = quantizer.tokens();
        if labels.len() != m {
            return Err(arg(format!("{} labels for {m} tokens", labels.len())));
        }
        if prefixes.len() != answers.len() || prefixes.len() != mixtures.len() {
            return Err(arg("prefixes, answers and mixtures differ in length"));
        }
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(arg(format!("margin must be in (0, 1), got {epsilon}")));
        }
        let task = Self {
            labels,
            prefixes,
            answers,
            mixtures,
            quantizer,
            epsilon,
        };
        for i in 0..task.len() {
            if task.prefixes[i].iter().chain([&task.answers[i]]).any(|&t| t >= m) {
                return Err(arg(format!("prefix {i} uses a token outside the alphabet")));
            }
            let margin = task.analytic_margin(i)?;
            if m > 1 && margin <= epsilon {
                return Err(DiffusionError::Precondition(format!(
                    "prefix {} has margin {margin:.4}, not above {epsilon}",
                    task.prefix_label(i)
                )));
            }
        }
        Ok(task)
    }

    /// Word problem of the multiplicative group mod `p`: tokens are the
    /// elements `1..p`, the answer to a prefix is its product (1 for the
    /// empty word). Every prefix of length `≤ max_len` is included, shortest
    /// first. The conditional law puts `correct_weight` on the answer's
    /// centroid and splits the rest evenly; centroids sit on the coordinate
    /// axes at [`FIXTURE_RADIUS`]. The declared margin is 0.9 times the
    /// analytic one.
    pub fn mod_p_word(p: usize, max_len: usize, correct_weight: f64) -> Result<Self, DiffusionError> {
        if p < 2 || !(2..=1000).contains(&p) || (2..p).any(|q| q * q <= p && p % q == 0) {
            return Err(arg(format!("{p} is not a prime in 2..=1000")));
        }
        let m = p - 1;
        let other = if m > 1 { (1.0 - correct_weight) / (m - 1) as f64 } else { 0.0 };
        if !(correct_weight > 0.0 && correct_weight <= 1.0) || (m == 1 && correct_weight != 1.0) {
            return Err(arg(format!("bad correct weight {correct_weight}")));
        }
        let centroids: Vec<Vec<f64>> = (0..m)
            .map(|i| {
                let mut c = vec![0.0; m];
                c[i] = FIXTURE_RADIUS;
                c
            })
            .collect();
        let mixture_for = |answer: usize| -> Result<GaussianMixture, DiffusionError> {
            GaussianMixture::new(
                centroids
                    .iter()
                    .enumerate()
                    .filter(|&(i, _)| i == answer || other > 0.0)
                    .map(|(i, c)| Component {
                        weight: if i == answer { correct_weight } else { other },
                        mean: c.clone(),
                        variance: FIXTURE_VARIANCE,
                    })
                    .collect(),
            )
        };
        let per_answer: Vec<GaussianMixture> = (0..m).map(mixture_for).collect::<Result<_, _>>()?;

        let mut prefixes = Vec::new();
        let mut level: Vec<Vec<usize>> = vec![Vec::new()];
        for len in 0..=max_len {
            prefixes.extend(level.iter().cloned());
            if len < max_len {
                level = level
                    .iter()
                    .flat_map(|w| {
                        (0..m).map(move |t| {
                            let mut v = w.clone();
                            v.push(t);
                            v
                        })
                    })
                    .collect();
            }
        }
        let answers: Vec<usize> = prefixes
            .iter()
            .map(|w| w.iter().fold(1, |acc, &t| acc * (t + 1) % p) - 1)
            .collect();
        let mixtures = answers.iter().map(|&a| per_answer[a].clone()).collect();
        let margin = if m > 1 { correct_weight - other } else { 1.0 };
        Self::new(
            (1..p).map(|e| e.to_string()).collect(),
            prefixes,
            answers,
            mixtures,
            Quantizer::new(centroids)?,
            0.9 * margin,
        )
    }

    pub fn len(&self) -> usize {
        self.prefixes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prefixes.is_empty()
    }

    pub fn tokens(&self) -> usize {
        self.quantizer.tokens()
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn quantizer(&self) -> &Quantizer {
        &self.quantizer
    }

    pub fn prefix(&self, i: usize) -> &[usize] {
        &self.prefixes[i]
    }

    pub fn answer(&self, i: usize) -> usize {
        self.answers[i]
    }

    pub fn mixture(&self, i: usize) -> &GaussianMixture {
        &self.mixtures[i]
    }

    pub fn label(&self, token: usize) -> &str {
        &self.labels[token]
    }

    /// Prefix as dot-separated token labels; `-` for the empty prefix.
    pub fn prefix_label(&self, i: usize) -> String {
        if self.prefixes[i].is_empty() {
            return "-".into();
        }
        self.prefixes[i]
            .iter()
            .map(|&t| self.labels[t].as_str())
            .collect::<Vec<_>>()
            .join(".")
    }

    /// Exact `p(correct) − max p(other)` of prefix `i`; 1 for a one-token
    /// alphabet.
    pub fn analytic_margin(&self, i: usize) -> Result<f64, DiffusionError> {
        let q = self.quantizer.component_masses(&self.mixtures[i])?;
        Ok(margin_of(&q, self.answers[i]))
    }
}

fn margin_of(freq: &[f64], answer: usize) -> f64 {
    let best_other = freq
        .iter()
        .enumerate()
        .filter(|&(t, _)| t != answer)
        .map(|(_, &f)| f)
        .fold(f64::NEG_INFINITY, f64::max);
    if best_other == f64::NEG_INFINITY {
        1.0
    } else {
        freq[answer] - best_other
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefixRow {
    pub prefix: String,
    pub answer: usize,
    pub frequencies: Vec<f64>,
    pub empirical_margin: f64,
    pub analytic_margin: f64,
    /// `empirical_margin ≥ ε/2`.
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefixReport {
    pub epsilon: f64,
    pub samples: usize,
    pub rows: Vec<PrefixRow>,
    pub all_satisfied: bool,
}

/// Samples every prefix's mixture `samples` times; prefix `i` uses master
/// seed `seeds::derive(seed, i)`.
pub fn prefix_eval(
    task: &PrefixTask,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    samples: usize,
    seed: u64,
) -> Result<PrefixReport, DiffusionError> {
    if samples == 0 {
        return Err(arg("samples must be positive"));
    }
    let m = task.tokens();
    let mut rows = Vec::with_capacity(task.len());
    for i in 0..task.len() {
        let tokens = sample_tokens(task.mixture(i), sched, cfg, task.quantizer(), samples, seeds::derive(seed, i as u64))?;
        let frequencies = histogram(&tokens, m)?;
        let empirical_margin = margin_of(&frequencies, task.answer(i));
        rows.push(PrefixRow {
            prefix: task.prefix_label(i),
            answer: task.answer(i),
            empirical_margin,
            analytic_margin: task.analytic_margin(i)?,
            satisfied: empirical_margin >= task.epsilon() / 2.0,
            frequencies,
        });
    }
    Ok(PrefixReport {
        epsilon: task.epsilon(),
        samples,
        all_satisfied: rows.iter().all(|r| r.satisfied),
        rows,
    })
}

/// Most frequent token, lowest index on ties.
pub fn plurality(tokens: &[usize], m: usize) -> usize {
    let mut counts = vec![0usize; m];
    for &t in tokens {
        counts[t] += 1;
    }
    let mut best = 0;
    for (t, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = t;
        }
    }
    best
}

/// Upper bound `exp(−2m(margin/2)²)` on the probability that the plurality
/// of `m` draws misses a token that leads every other by `margin`.
pub fn hoeffding_failure_bound(m: usize, margin: f64) -> f64 {
    (-2.0 * m as f64 * (margin / 2.0).powi(2)).exp()
}

/// Smallest odd `m` with [`hoeffding_failure_bound`] at most `delta`.
pub fn hoeffding_repetitions(margin: f64, delta: f64) -> usize {
    let m = ((1.0 / delta).ln() * 2.0 / (margin * margin)).ceil().max(1.0) as usize;
    m | 1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MajorityReport {
    pub repetitions: usize,
    pub seed: u64,
    pub outputs: Vec<usize>,
    pub wrong: usize,
}

impl MajorityReport {
    pub fn all_correct(&self) -> bool {
        self.wrong == 0
    }
}

/// Plurality of `m` sampler draws per prefix, with prefix `i` drawn from
/// master seed `seeds::derive2(seed, i, m)`. Fixing `seed` makes the output
/// deterministic.
pub fn majority_derandomize(
    task: &PrefixTask,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    m: usize,
    seed: u64,
) -> Result<MajorityReport, DiffusionError> {
    if m % 2 == 0 {
        return Err(arg(format!("repetitions must be odd, got {m}")));
    }
    let mut outputs = Vec::with_capacity(task.len());
    for i in 0..task.len() {
        let draws = sample_tokens(task.mixture(i), sched, cfg, task.quantizer(), m, seeds::derive2(seed, i as u64, m as u64))?;
        outputs.push(plurality(&draws, task.tokens()));
    }
    let wrong = outputs.iter().enumerate().filter(|&(i, &o)| o != task.answer(i)).count();
    Ok(MajorityReport {
        repetitions: m,
        seed,
        outputs,
        wrong,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSearch {
    /// First seed whose majority output is correct on every prefix.
    pub found: Option<u64>,
    /// `(seed, wrong prefixes)` for every attempt made.
    pub attempts: Vec<(u64, usize)>,
}

/// Tries seeds `first, first + 1, ...` until one derandomizes the whole task.
pub fn seed_search(
    task: &PrefixTask,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    m: usize,
    first: u64,
    max_attempts: usize,
) -> Result<SeedSearch, DiffusionError> {
    let mut attempts = Vec::new();
    for a in 0..max_attempts as u64 {
        let seed = first.wrapping_add(a);
        let r = majority_derandomize(task, sched, cfg, m, seed)?;
        attempts.push((seed, r.wrong));
        if r.all_correct() {
            return Ok(SeedSearch {
                found: Some(seed),
                attempts,
            });
        }
    }
    Ok(SeedSearch {
        found: None,
        attempts,
    })
}

pub const ADVICE_SCHEMA_VERSION: u32 = 1;

/// A recorded seed that makes [`majority_derandomize`] correct on a task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdviceSeed {
    pub schema_version: u32,
    pub modulus: usize,
    pub max_len: usize,
    pub correct_weight: f64,
    pub schedule: NoiseSchedule,
    pub steps: usize,
    pub repetitions: usize,
    pub seed: u64,
}

impl AdviceSeed {
    pub fn task(&self) -> Result<PrefixTask, DiffusionError> {
        PrefixTask::mod_p_word(self.modulus, self.max_len, self.correct_weight)
    }

    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig::new(&self.schedule, self.steps)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let a: Self = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if a.schema_version != ADVICE_SCHEMA_VERSION {
            return Err(format!("unsupported advice schema version {}", a.schema_version));
        }
        Ok(a)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }
}

/// The advice seed shipped for the mod-7 task.
pub const SHIPPED_ADVICE: &str = include_str!("../../fixtures/advice_mod7.json");

pub fn shipped_advice() -> AdviceSeed {
    AdviceSeed::from_json(SHIPPED_ADVICE).expect("shipped advice parses")
}
