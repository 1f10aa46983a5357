//! Variance-preserving diffusion on Gaussian-mixture data with the exact
//! score, plus the token-level measurements built on it.
//!
//! Forward process: `dx = -β(t)x/2 dt + sqrt(β(t)) dW`. A component
//! `N(μ, σ²I)` at time 0 is `N(αμ, (σ²α² + 1 - α²)I)` at time `t`, with
//! `α = exp(-B(t)/2)` and `B` the integrated schedule.

mod prefix;
mod tokens;

pub use prefix::*;
pub use tokens::*;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{par, seeds};

#[derive(Debug, Error, PartialEq)]
pub enum DiffusionError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("score is undefined at t = {0}: a component has zero variance")]
    Degenerate(f64),
    #[error("sampler produced a non-finite state")]
    NonFinite,
    #[error("precondition failed: {0}")]
    Precondition(String),
}

fn arg(msg: impl Into<String>) -> DiffusionError {
    DiffusionError::Argument(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NoiseSchedule {
    Constant { beta: f64 },
    /// `β(t) = beta0 + (beta1 - beta0) t`.
    Linear { beta0: f64, beta1: f64 },
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule::Constant { beta: 1.0 }
    }
}

impl NoiseSchedule {
    pub fn linear_default() -> Self {
        NoiseSchedule::Linear {
            beta0: 0.1,
            beta1: 20.0,
        }
    }

    /// B must be strictly increasing and unbounded.
    pub fn validate(&self) -> Result<(), DiffusionError> {
        let ok = match *self {
            NoiseSchedule::Constant { beta } => beta.is_finite() && beta > 0.0,
            NoiseSchedule::Linear { beta0, beta1 } => {
                beta0.is_finite() && beta1.is_finite() && beta0 > 0.0 && beta1 >= beta0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(arg(format!("schedule {self:?} is not positive and nondecreasing")))
        }
    }

    pub fn beta(&self, t: f64) -> f64 {
        match *self {
            NoiseSchedule::Constant { beta } => beta,
            NoiseSchedule::Linear { beta0, beta1 } => beta0 + (beta1 - beta0) * t,
        }
    }

    /// `B(t) = ∫₀ᵗ β`.
    pub fn integral(&self, t: f64) -> f64 {
        match *self {
            NoiseSchedule::Constant { beta } => beta * t,
            NoiseSchedule::Linear { beta0, beta1 } => beta0 * t + 0.5 * (beta1 - beta0) * t * t,
        }
    }

    pub fn alpha(&self, t: f64) -> f64 {
        (-0.5 * self.integral(t)).exp()
    }

    /// Reverse horizon: 5 for the constant schedule (scaled by 1/β), 1 for
    /// the linear one.
    pub fn default_horizon(&self) -> f64 {
        match *self {
            NoiseSchedule::Constant { beta } => 5.0 / beta,
            NoiseSchedule::Linear { .. } => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Isotropic variance; 0 is a point mass.
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Component>", into = "Vec<Component>")]
pub struct GaussianMixture {
    components: Vec<Component>,
    dim: usize,
}

impl TryFrom<Vec<Component>> for GaussianMixture {
    type Error = DiffusionError;
    fn try_from(c: Vec<Component>) -> Result<Self, Self::Error> {
        GaussianMixture::new(c)
    }
}

impl From<GaussianMixture> for Vec<Component> {
    fn from(m: GaussianMixture) -> Self {
        m.components
    }
}

impl GaussianMixture {
    pub fn new(components: Vec<Component>) -> Result<Self, DiffusionError> {
        let dim = components
            .first()
            .map(|c| c.mean.len())
            .ok_or_else(|| arg("mixture needs at least one component"))?;
        if dim == 0 {
            return Err(arg("mixture dimension must be positive"));
        }
        for (i, c) in components.iter().enumerate() {
            if c.mean.len() != dim {
                return Err(arg(format!("component {i} has dimension {}, expected {dim}", c.mean.len())));
            }
            if !(c.weight.is_finite() && c.weight > 0.0) {
                return Err(arg(format!("component {i} weight must be positive")));
            }
            if !(c.variance.is_finite() && c.variance >= 0.0) {
                return Err(arg(format!("component {i} variance must be nonnegative")));
            }
            if c.mean.iter().any(|v| !v.is_finite()) {
                return Err(arg(format!("component {i} mean is not finite")));
            }
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(arg(format!("weights sum to {total}, expected 1")));
        }
        Ok(Self { components, dim })
    }

    pub fn standard_normal(dim: usize) -> Self {
        Self::new(vec![Component {
            weight: 1.0,
            mean: vec![0.0; dim],
            variance: 1.0,
        }])
        .expect("valid by construction")
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Upper bound on `E‖x‖`: `Σ w (‖μ‖ + σ sqrt(d))`.
    pub fn first_moment_bound(&self) -> f64 {
        let d = self.dim as f64;
        self.components
            .iter()
            .map(|c| c.weight * (norm(&c.mean) + (c.variance * d).sqrt()))
            .sum()
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = self.components.len() - 1;
        for (i, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                pick = i;
                break;
            }
        }
        let c = &self.components[pick];
        let sd = c.variance.sqrt();
        c.mean
            .iter()
            .map(|m| m + sd * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    /// `ln ρ(x)`; every component needs positive variance.
    pub fn log_density(&self, x: &[f64]) -> Result<f64, DiffusionError> {
        self.check_point(x)?;
        let d = self.dim as f64;
        let mut terms = Vec::with_capacity(self.components.len());
        for c in &self.components {
            if c.variance <= 0.0 {
                return Err(DiffusionError::Degenerate(0.0));
            }
            let r2 = dist2(x, &c.mean);
            terms.push(
                c.weight.ln() - 0.5 * d * (2.0 * std::f64::consts::PI * c.variance).ln()
                    - r2 / (2.0 * c.variance),
            );
        }
        Ok(log_sum_exp(&terms))
    }

    fn check_point(&self, x: &[f64]) -> Result<(), DiffusionError> {
        if x.len() != self.dim {
            return Err(arg(format!("point has dimension {}, expected {}", x.len(), self.dim)));
        }
        Ok(())
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|a| (a - m).exp()).sum::<f64>().ln()
}

/// The time-`t` marginal of the forward process started from `mix`.
pub fn forward_marginal(
    mix: &GaussianMixture,
    sched: &NoiseSchedule,
    t: f64,
) -> Result<GaussianMixture, DiffusionError> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(arg(format!("time must be nonnegative, got {t}")));
    }
    let a = sched.alpha(t);
    let a2 = a * a;
    Ok(GaussianMixture {
        components: mix
            .components
            .iter()
            .map(|c| Component {
                weight: c.weight,
                mean: c.mean.iter().map(|m| m * a).collect(),
                variance: c.variance * a2 + (1.0 - a2),
            })
            .collect(),
        dim: mix.dim,
    })
}

/// Evaluates `∇ ln ρ_t` with preallocated scratch; the reverse sampler's
/// inner loop.
struct ScoreKernel<'a> {
    mix: &'a GaussianMixture,
    log_weights: Vec<f64>,
    logits: Vec<f64>,
}

impl<'a> ScoreKernel<'a> {
    fn new(mix: &'a GaussianMixture) -> Self {
        Self {
            mix,
            log_weights: mix.components.iter().map(|c| c.weight.ln()).collect(),
            logits: vec![0.0; mix.components.len()],
        }
    }

    fn eval(&mut self, alpha: f64, x: &[f64], out: &mut [f64]) -> Result<(), DiffusionError> {
        let a2 = alpha * alpha;
        let d = self.mix.dim as f64;
        let mut max = f64::NEG_INFINITY;
        for ((c, l), lw) in self.mix.components.iter().zip(self.logits.iter_mut()).zip(&self.log_weights) {
            let var = c.variance * a2 + (1.0 - a2);
            if var <= 0.0 {
                return Err(DiffusionError::Degenerate(0.0));
            }
            let r2: f64 = x.iter().zip(&c.mean).map(|(xi, m)| (xi - alpha * m).powi(2)).sum();
            *l = lw - 0.5 * d * var.ln() - r2 / (2.0 * var);
            max = max.max(*l);
        }
        let mut z = 0.0;
        for l in self.logits.iter_mut() {
            *l = (*l - max).exp();
            z += *l;
        }
        out.fill(0.0);
        for (c, p) in self.mix.components.iter().zip(&self.logits) {
            let var = c.variance * a2 + (1.0 - a2);
            let w = p / z / var;
            for ((o, xi), m) in out.iter_mut().zip(x).zip(&c.mean) {
                *o -= w * (xi - alpha * m);
            }
        }
        Ok(())
    }
}

/// `∇ₓ ln ρ_t(x)`: the posterior-weighted average of the component scores
/// of [`forward_marginal`].
pub fn exact_score(
    mix: &GaussianMixture,
    sched: &NoiseSchedule,
    x: &[f64],
    t: f64,
) -> Result<Vec<f64>, DiffusionError> {
    mix.check_point(x)?;
    if !(t.is_finite() && t >= 0.0) {
        return Err(arg(format!("time must be nonnegative, got {t}")));
    }
    let alpha = sched.alpha(t);
    let mut out = vec![0.0; mix.dim];
    ScoreKernel::new(mix)
        .eval(alpha, x, &mut out)
        .map_err(|_| DiffusionError::Degenerate(t))?;
    Ok(out)
}

/// Time discretization of the reverse process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Start time `T` of the reverse process.
    pub horizon: f64,
    pub steps: usize,
    /// The last step lands here instead of at 0.
    pub t_min: f64,
}

pub const DEFAULT_T_MIN: f64 = 1e-3;

impl SamplerConfig {
    pub fn new(sched: &NoiseSchedule, steps: usize) -> Self {
        Self {
            horizon: sched.default_horizon(),
            steps,
            t_min: DEFAULT_T_MIN,
        }
    }

    pub fn validate(&self) -> Result<(), DiffusionError> {
        if self.steps == 0 {
            return Err(arg("steps must be at least 1"));
        }
        if !(self.t_min > 0.0 && self.horizon.is_finite() && self.horizon > self.t_min) {
            return Err(arg(format!(
                "need 0 < t_min < horizon, got t_min {} horizon {}",
                self.t_min, self.horizon
            )));
        }
        Ok(())
    }
}

/// Runs the reverse SDE `x ← x + (βx/2 + β score) Δ + sqrt(βΔ) ξ` on a
/// uniform grid from `horizon` down to `t_min`, starting at `x_T`, and
/// returns `x̂₀` in place. Noise comes from `rng`.
pub fn reverse_from(
    mix: &GaussianMixture,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    x: &mut [f64],
    rng: &mut impl Rng,
) -> Result<(), DiffusionError> {
    cfg.validate()?;
    mix.check_point(x)?;
    let mut kernel = ScoreKernel::new(mix);
    let mut score = vec![0.0; mix.dim];
    let dt = (cfg.horizon - cfg.t_min) / cfg.steps as f64;
    for j in 0..cfg.steps {
        let t = cfg.horizon - j as f64 * dt;
        let beta = sched.beta(t);
        kernel.eval(sched.alpha(t), x, &mut score)?;
        let noise = (beta * dt).sqrt();
        for (xi, s) in x.iter_mut().zip(&score) {
            let z: f64 = rng.sample(StandardNormal);
            *xi += (0.5 * beta * *xi + beta * s) * dt + noise * z;
        }
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(DiffusionError::NonFinite);
    }
    Ok(())
}

/// One reverse-process draw: `x_T ~ N(0, I)` then [`reverse_from`].
pub fn reverse_sample(
    mix: &GaussianMixture,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    seed: u64,
) -> Result<Vec<f64>, DiffusionError> {
    sched.validate()?;
    let mut rng = seeds::rng(seed);
    let mut x: Vec<f64> = (0..mix.dim).map(|_| rng.sample(StandardNormal)).collect();
    reverse_from(mix, sched, cfg, &mut x, &mut rng)?;
    Ok(x)
}

/// `n` draws; draw `i` uses seed `seeds::derive(master_seed, i)`, so any
/// two calls with the same master seed start from the same `x_T` values.
pub fn reverse_sample_batch(
    mix: &GaussianMixture,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    n: usize,
    master_seed: u64,
) -> Result<Vec<Vec<f64>>, DiffusionError> {
    sched.validate()?;
    cfg.validate()?;
    par::try_map(n, |i| reverse_sample(mix, sched, cfg, seeds::derive(master_seed, i as u64)))
}

/// Euler–Maruyama simulation of the forward process up to `t`.
pub fn forward_simulate(
    mix: &GaussianMixture,
    sched: &NoiseSchedule,
    t: f64,
    steps: usize,
    seed: u64,
) -> Result<Vec<f64>, DiffusionError> {
    if steps == 0 || !(t > 0.0) {
        return Err(arg("forward simulation needs t > 0 and at least one step"));
    }
    let mut rng = seeds::rng(seed);
    let mut x = mix.sample(&mut rng);
    let dt = t / steps as f64;
    for j in 0..steps {
        let beta = sched.beta(j as f64 * dt);
        let noise = (beta * dt).sqrt();
        for xi in x.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *xi += -0.5 * beta * *xi * dt + noise * z;
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(weight: f64, mean: Vec<f64>) -> Component {
        Component {
            weight,
            mean,
            variance: 0.0,
        }
    }

    #[test]
    fn standard_normal_is_stationary() {
        let mix = GaussianMixture::standard_normal(3);
        for sched in [NoiseSchedule::default(), NoiseSchedule::linear_default()] {
            for t in [0.0, 0.3, 2.0, 7.0] {
                assert_eq!(forward_marginal(&mix, &sched, t).unwrap().components()[0].variance, 1.0);
            }
        }
    }

    #[test]
    fn point_mass_marginal_constant_beta() {
        let mix = GaussianMixture::new(vec![point(1.0, vec![2.0, -1.0])]).unwrap();
        let t: f64 = 0.7;
        let m = forward_marginal(&mix, &NoiseSchedule::default(), t).unwrap();
        let c = &m.components()[0];
        let e = (-t / 2.0).exp();
        assert!((c.mean[0] - 2.0 * e).abs() < 1e-15);
        assert!((c.mean[1] + e).abs() < 1e-15);
        assert!((c.variance - (1.0 - (-t).exp())).abs() < 1e-15);
    }

    #[test]
    fn marginal_tends_to_standard_normal() {
        let mix = GaussianMixture::new(vec![
            Component { weight: 0.4, mean: vec![3.0], variance: 0.2 },
            point(0.6, vec![-2.0]),
        ])
        .unwrap();
        let m = forward_marginal(&mix, &NoiseSchedule::default(), 60.0).unwrap();
        for c in m.components() {
            assert!(c.mean[0].abs() < 1e-12);
            assert!((c.variance - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_schedule_integral() {
        let s = NoiseSchedule::linear_default();
        // Trapezoid is exact for a linear integrand.
        let t = 0.8;
        assert!((s.integral(t) - 0.5 * t * (s.beta(0.0) + s.beta(t))).abs() < 1e-12);
        assert!(NoiseSchedule::Constant { beta: 0.0 }.validate().is_err());
        assert!(NoiseSchedule::Linear { beta0: 1.0, beta1: 0.5 }.validate().is_err());
    }

    #[test]
    fn standard_normal_score_is_minus_x() {
        let mix = GaussianMixture::standard_normal(2);
        let s = exact_score(&mix, &NoiseSchedule::default(), &[0.3, -1.7], 1.1).unwrap();
        assert!((s[0] + 0.3).abs() < 1e-15 && (s[1] - 1.7).abs() < 1e-15);
    }

    #[test]
    fn single_component_score() {
        let mix = GaussianMixture::new(vec![Component {
            weight: 1.0,
            mean: vec![1.0, 2.0],
            variance: 0.5,
        }])
        .unwrap();
        let sched = NoiseSchedule::default();
        let t = 0.4;
        let m = forward_marginal(&mix, &sched, t).unwrap();
        let c = &m.components()[0];
        let x = [0.2, -0.3];
        let s = exact_score(&mix, &sched, &x, t).unwrap();
        for i in 0..2 {
            assert!((s[i] + (x[i] - c.mean[i]) / c.variance).abs() < 1e-13);
        }
    }

    #[test]
    fn symmetric_midpoint_score_vanishes() {
        let mix = GaussianMixture::new(vec![point(0.5, vec![1.0, 0.3]), point(0.5, vec![-1.0, 0.3])]).unwrap();
        let s = exact_score(&mix, &NoiseSchedule::default(), &[0.0, 0.9], 0.5).unwrap();
        assert!(s[0].abs() < 1e-15);
    }

    #[test]
    fn degenerate_score_rejected() {
        let mix = GaussianMixture::new(vec![point(1.0, vec![0.0])]).unwrap();
        assert_eq!(
            exact_score(&mix, &NoiseSchedule::default(), &[0.1], 0.0),
            Err(DiffusionError::Degenerate(0.0))
        );
    }

    #[test]
    fn mixture_validation() {
        assert!(GaussianMixture::new(vec![]).is_err());
        assert!(GaussianMixture::new(vec![point(0.5, vec![0.0])]).is_err());
        assert!(GaussianMixture::new(vec![point(0.5, vec![0.0]), point(0.5, vec![0.0, 1.0])]).is_err());
        let json = serde_json::to_string(&GaussianMixture::standard_normal(2)).unwrap();
        assert!(serde_json::from_str::<GaussianMixture>(&json.replace("1.0,", "2.0,")).is_err());
    }

    #[test]
    fn symmetric_point_masses_split_evenly() {
        let mix = GaussianMixture::new(vec![point(0.5, vec![1.0]), point(0.5, vec![-1.0])]).unwrap();
        let sched = NoiseSchedule::default();
        let cfg = SamplerConfig::new(&sched, 64);
        let xs = reverse_sample_batch(&mix, &sched, &cfg, 10_000, 3).unwrap();
        let pos = xs.iter().filter(|x| x[0] > 0.0).count() as f64 / 1e4;
        assert!((pos - 0.5).abs() <= 0.03, "{pos}");
    }

    #[test]
    fn zero_steps_rejected() {
        let mix = GaussianMixture::standard_normal(1);
        let sched = NoiseSchedule::default();
        let cfg = SamplerConfig { steps: 0, ..SamplerConfig::new(&sched, 1) };
        assert!(reverse_sample(&mix, &sched, &cfg, 0).is_err());
    }
}
