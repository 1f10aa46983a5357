use serde::{Deserialize, Serialize};

use super::{arg, dist2, reverse_sample_batch, DiffusionError, GaussianMixture, NoiseSchedule, SamplerConfig};

/// Voronoi quantizer: a point maps to its nearest centroid, ties going to
/// the lower token index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quantizer {
    centroids: Vec<Vec<f64>>,
}

impl Quantizer {
    pub fn new(centroids: Vec<Vec<f64>>) -> Result<Self, DiffusionError> {
        let d = centroids
            .first()
            .map(|c| c.len())
            .ok_or_else(|| arg("quantizer needs at least one centroid"))?;
        if centroids.iter().any(|c| c.len() != d || c.iter().any(|v| !v.is_finite())) {
            return Err(arg("centroids must be finite and share one dimension"));
        }
        Ok(Self { centroids })
    }

    pub fn tokens(&self) -> usize {
        self.centroids.len()
    }

    pub fn dim(&self) -> usize {
        self.centroids[0].len()
    }

    pub fn centroids(&self) -> &[Vec<f64>] {
        &self.centroids
    }

    pub fn quantize(&self, x: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, c) in self.centroids.iter().enumerate() {
            let d = dist2(x, c);
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        best
    }

    /// Token mass of `mix`, assigning each component wholly to the region of
    /// its mean. Exact when every component lies inside one region.
    pub fn component_masses(&self, mix: &GaussianMixture) -> Result<Vec<f64>, DiffusionError> {
        if mix.dim() != self.dim() {
            return Err(arg("mixture and quantizer dimensions differ"));
        }
        let mut q = vec![0.0; self.tokens()];
        for c in mix.components() {
            q[self.quantize(&c.mean)] += c.weight;
        }
        Ok(q)
    }
}

pub fn histogram(tokens: &[usize], m: usize) -> Result<Vec<f64>, DiffusionError> {
    if tokens.is_empty() {
        return Err(arg("empty sample"));
    }
    let mut h = vec![0.0; m];
    for &t in tokens {
        *h.get_mut(t).ok_or_else(|| arg(format!("token {t} outside alphabet of {m}")))? += 1.0;
    }
    let n = tokens.len() as f64;
    h.iter_mut().for_each(|v| *v /= n);
    Ok(h)
}

/// `½ Σ|pᵢ − qᵢ|` for two distributions on the same alphabet.
pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// TV between the empirical distributions of two token samples.
pub fn tv_empirical(a: &[usize], b: &[usize]) -> Result<f64, DiffusionError> {
    let m = a.iter().chain(b).max().map_or(0, |&t| t + 1);
    Ok(tv_distance(&histogram(a, m)?, &histogram(b, m)?))
}

/// TV between a token sample and an exact distribution.
pub fn tv_exact(a: &[usize], q: &[f64]) -> Result<f64, DiffusionError> {
    Ok(tv_distance(&histogram(a, q.len())?, q))
}

/// Sampling half-width of the empirical TV against `q` at `n` samples:
/// `½ Σ 1.96 sqrt(qᵢ(1−qᵢ)/n)`.
pub fn tv_band(q: &[f64], n: usize) -> f64 {
    0.5 * q
        .iter()
        .map(|&p| 1.96 * (p * (1.0 - p) / n as f64).sqrt())
        .sum::<f64>()
}

/// Quantized reverse-process draws, seeded as in [`reverse_sample_batch`].
pub fn sample_tokens(
    mix: &GaussianMixture,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    quantizer: &Quantizer,
    n: usize,
    master_seed: u64,
) -> Result<Vec<usize>, DiffusionError> {
    if mix.dim() != quantizer.dim() {
        return Err(arg("mixture and quantizer dimensions differ"));
    }
    Ok(reverse_sample_batch(mix, sched, cfg, n, master_seed)?
        .iter()
        .map(|x| quantizer.quantize(x))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub steps: usize,
    pub tv: f64,
    /// Sampling half-width of `tv`, see [`tv_band`].
    pub band: f64,
}

/// TV to the exact token distribution per step count. Sample `i` uses the
/// same seed at every step count.
pub fn convergence_curve(
    mix: &GaussianMixture,
    sched: &NoiseSchedule,
    quantizer: &Quantizer,
    step_counts: &[usize],
    samples: usize,
    master_seed: u64,
) -> Result<Vec<CurvePoint>, DiffusionError> {
    if samples == 0 || step_counts.is_empty() {
        return Err(arg("need at least one step count and one sample"));
    }
    let truth = quantizer.component_masses(mix)?;
    let band = tv_band(&truth, samples);
    step_counts
        .iter()
        .map(|&steps| {
            let cfg = SamplerConfig::new(sched, steps);
            let tokens = sample_tokens(mix, sched, &cfg, quantizer, samples, master_seed)?;
            Ok(CurvePoint {
                steps,
                tv: tv_exact(&tokens, &truth)?,
                band,
            })
        })
        .collect()
}

/// Whether each point's TV is at most the previous one's plus both bands.
pub fn non_increasing_within_bands(curve: &[CurvePoint]) -> bool {
    curve
        .windows(2)
        .all(|w| w[1].tv <= w[0].tv + w[0].band + w[1].band)
}

/// Three near-point masses at [`super::FIXTURE_RADIUS`] on the unit circle,
/// 120° apart, with weights 0.5, 0.3, 0.2, and the matching quantizer.
pub fn circle_fixture() -> (GaussianMixture, Quantizer) {
    let weights = [0.5, 0.3, 0.2];
    let centroids: Vec<Vec<f64>> = (0..3)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / 3.0;
            vec![super::FIXTURE_RADIUS * a.cos(), super::FIXTURE_RADIUS * a.sin()]
        })
        .collect();
    let mix = GaussianMixture::new(
        centroids
            .iter()
            .zip(weights)
            .map(|(c, weight)| super::Component {
                weight,
                mean: c.clone(),
                variance: super::FIXTURE_VARIANCE,
            })
            .collect(),
    )
    .expect("valid fixture");
    (mix, Quantizer::new(centroids).expect("valid fixture"))
}
