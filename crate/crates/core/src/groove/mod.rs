//! Program-to-force-field compiler for the pinball machine.
//!
//! [`compile`] runs a counter-machine program on a fixed input, lays the
//! state sequence out as grooves on a lattice (see [`layout`]) and wraps the
//! result in a [`ForceFieldSpec`] that evaluates a smooth field on
//! `R^(k+3)` (see [`field`]).

pub mod field;
pub mod layout;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::counter_machine::{Program, Verdict};
use crate::seeds;

pub use field::{smoothstep, FieldCache, ForceFieldSpec, GrooveParams, Nearest};
pub use layout::{
    embed, transit_path, unembed, CompileError, GrooveGraph, LatticeCoord, PathSegment, StatePoint,
};

/// Interpreter budget used while compiling.
pub const DEFAULT_COMPILE_STEP_LIMIT: u64 = 100_000;

pub const FIELD_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum GrooveError {
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error("invalid field parameters: {0}")]
    Params(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("field document: {0}")]
    Json(#[from] serde_json::Error),
}

/// Compiles `program` specialised to `input` into a force field.
pub fn compile(
    program: &Program,
    input: &str,
    params: GrooveParams,
) -> Result<ForceFieldSpec, GrooveError> {
    let graph = GrooveGraph::compile(program, input, DEFAULT_COMPILE_STEP_LIMIT)?;
    ForceFieldSpec::new(graph, params).map_err(GrooveError::Params)
}

/// Serialized form of a [`ForceFieldSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForceFieldDoc {
    pub schema_version: u32,
    pub registers: usize,
    pub start: LatticeCoord,
    pub segments: Vec<PathSegment>,
    pub verdict: Verdict,
    pub params: GrooveParams,
}

impl ForceFieldSpec {
    pub fn to_doc(&self) -> ForceFieldDoc {
        let g = self.graph();
        ForceFieldDoc {
            schema_version: FIELD_SCHEMA_VERSION,
            registers: g.registers(),
            start: g.start().clone(),
            segments: g.segments(),
            verdict: g.verdict(),
            params: *self.params(),
        }
    }

    pub fn from_doc(doc: &ForceFieldDoc) -> Result<Self, GrooveError> {
        if doc.schema_version != FIELD_SCHEMA_VERSION {
            return Err(GrooveError::Argument(format!(
                "unsupported schema_version {}",
                doc.schema_version
            )));
        }
        let graph = GrooveGraph::from_segments(doc.registers, doc.start.clone(), &doc.segments, doc.verdict)?;
        ForceFieldSpec::new(graph, doc.params).map_err(GrooveError::Params)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_doc()).expect("field document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, GrooveError> {
        Self::from_doc(&serde_json::from_str(text)?)
    }
}

/// Difference quotient `|g(x + eps*dir) - g(x)| / eps` of the groove part
/// along unit direction `dir`.
pub fn local_lipschitz(spec: &ForceFieldSpec, x: &[f64], dir: &[f64], eps: f64) -> f64 {
    let n = x.len();
    let mut fx = vec![0.0; n];
    let mut fy = vec![0.0; n];
    spec.groove_force(x, &mut fx);
    let y: Vec<f64> = x.iter().zip(dir).map(|(a, d)| a + eps * d).collect();
    spec.groove_force(&y, &mut fy);
    let diff: f64 = fx.iter().zip(&fy).map(|(a, b)| (a - b) * (a - b)).sum();
    diff.sqrt() / eps
}

fn random_unit(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|a| a / norm).collect();
        }
    }
}

/// Empirical Lipschitz constant of the groove part inside the corridors.
///
/// Each sample picks a path cell and a point on its centerline uniformly,
/// moves off it by a uniform distance in `[0, r)` along a random normal
/// direction, and takes the difference quotient to a partner point at
/// distance `1e-4 * L` in a random direction. The estimate is the largest
/// quotient seen. Sample positions are drawn in cell units, so the same seed
/// probes geometrically similar points for every `L`.
pub fn lipschitz_estimate(spec: &ForceFieldSpec, samples: usize, seed: u64) -> Result<f64, GrooveError> {
    if samples < 2 {
        return Err(GrooveError::Argument(format!("need at least 2 samples, got {samples}")));
    }
    let mut rng = seeds::rng(seed);
    let n = spec.dims();
    let r = spec.params().corridor_radius;
    let eps = 1e-4 * spec.cell_size();
    let cells = spec.primitive_count();
    let mut best = 0.0f64;
    for _ in 0..samples {
        let m = rng.random_range(0..cells);
        let u: f64 = rng.random();
        let (q, t) = spec.centerline_point(m, u);
        let mut w = random_unit(&mut rng, n);
        let along: f64 = w.iter().zip(&t).map(|(a, b)| a * b).sum();
        for (wi, ti) in w.iter_mut().zip(&t) {
            *wi -= along * ti;
        }
        let wn = w.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
        let rho = r * rng.random::<f64>();
        let x: Vec<f64> = q.iter().zip(&w).map(|(a, b)| a + rho * b / wn).collect();
        let dir = random_unit(&mut rng, n);
        best = best.max(local_lipschitz(spec, &x, &dir, eps));
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::counter_machine::{fixtures, parse_program};

    fn parity_spec(l: f64, input: &str) -> ForceFieldSpec {
        compile(&fixtures::parity(), input, GrooveParams::for_cell_size(l)).unwrap()
    }

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|a| a * a).sum::<f64>().sqrt()
    }

    /// First straight interior cell of the path.
    fn straight_cell(spec: &ForceFieldSpec) -> usize {
        (1..spec.primitive_count() - 1).find(|&m| !spec.is_turn(m)).unwrap()
    }

    #[test]
    fn on_centerline_force_is_tangent_times_speed() {
        let spec = parity_spec(6.0, "aa");
        let m = straight_cell(&spec);
        let (q, t) = spec.centerline_point(m, 0.3);
        let f = spec.eval_force(&q);
        for i in 0..q.len() {
            assert!((f[i] - (-0.5 * q[i] + t[i])).abs() < 1e-12, "coord {i}");
        }
    }

    #[test]
    fn perpendicular_displacement_gives_linear_restoring_force() {
        let spec = parity_spec(6.0, "aa");
        let m = straight_cell(&spec);
        let (q, t) = spec.centerline_point(m, 0.5);
        let perp_axis = (0..q.len()).find(|&i| t[i] == 0.0).unwrap();
        let delta = 0.4; // below r - s = 0.75
        let mut x = q.clone();
        x[perp_axis] += delta;
        let f = spec.eval_force(&x);
        let perp = f[perp_axis] + 0.5 * x[perp_axis];
        assert!((perp - (-4.0 * delta)).abs() < 1e-12);

        // Finite-difference slope of the profile matches kappa.
        let p = spec.params();
        let h = 1e-5;
        let slope = (p.confinement(delta + h) - p.confinement(delta - h)) / (2.0 * h);
        assert!((slope - 4.0).abs() < 1e-6);
    }

    #[test]
    fn confinement_profile_is_c1() {
        let p = GrooveParams::for_cell_size(6.0);
        let a = p.corridor_radius - p.smoothing;
        let h = 1e-7;
        for knot in [a, p.corridor_radius] {
            let left = (p.confinement(knot) - p.confinement(knot - h)) / h;
            let right = (p.confinement(knot + h) - p.confinement(knot)) / h;
            assert!((left - right).abs() < 1e-5, "kink at {knot}");
        }
        assert!((p.confinement(10.0) - 4.0 * (a + p.smoothing / 2.0)).abs() < 1e-12);
    }

    #[test]
    fn far_point_is_pulled_toward_the_path() {
        let spec = parity_spec(6.0, "a");
        let start = spec.cell_center(spec.graph().start());
        let mut x = start.clone();
        x[0] -= 40.0;
        let f = spec.eval_force(&x);
        let p = spec.params();
        let g: Vec<f64> = f.iter().zip(&x).map(|(a, b)| a + 0.5 * b).collect();
        // Fallback pull: constant magnitude, no tangential part that far out.
        let plateau = p.stiffness * (p.corridor_radius - p.smoothing / 2.0);
        assert!((norm(&g) - plateau).abs() < 1e-9);
        assert!(g[0] > 0.0);
    }

    #[test]
    fn single_cell_path_is_an_attractor() {
        let p = parse_program("1: HALT accept").unwrap();
        let spec = compile(&p, "", GrooveParams::for_cell_size(4.0)).unwrap();
        let c = spec.cell_center(spec.graph().start());
        let mut x = c.clone();
        x[1] += 0.3;
        let mut g = vec![0.0; x.len()];
        spec.groove_force(&x, &mut g);
        assert!((g[1] + 4.0 * 0.3).abs() < 1e-12);
        assert!(g.iter().enumerate().all(|(i, v)| i == 1 || *v == 0.0));
    }

    #[test]
    fn terminal_center_has_no_tangential_push() {
        let spec = parity_spec(6.0, "aa");
        let c = spec.cell_center(spec.graph().terminal());
        let mut g = vec![0.0; c.len()];
        spec.groove_force(&c, &mut g);
        assert!(norm(&g) < 1e-12);
    }

    #[test]
    fn field_is_continuous_along_the_path() {
        let spec = parity_spec(6.0, "aaa");
        let mut prev: Option<Vec<f64>> = None;
        for m in 0..spec.primitive_count() {
            for step in 0..=20 {
                let (q, _) = spec.centerline_point(m, step as f64 / 20.0);
                let mut w = q.clone();
                w[0] += 0.2;
                let mut g = vec![0.0; q.len()];
                spec.groove_force(&w, &mut g);
                if let Some(p) = &prev {
                    let jump = norm(&g.iter().zip(p).map(|(a, b)| a - b).collect::<Vec<_>>());
                    assert!(jump < 0.5, "jump {jump} in cell {m}");
                }
                prev = Some(g);
            }
        }
    }

    #[test]
    fn straight_centerline_probe_is_flat() {
        let spec = parity_spec(6.0, "aa");
        let m = straight_cell(&spec);
        let (q, t) = spec.centerline_point(m, 0.2);
        assert!(local_lipschitz(&spec, &q, &t, 1e-3) < 1e-9);
    }

    #[test]
    fn lipschitz_within_documented_bound() {
        let spec = parity_spec(6.0, "aa");
        let est = lipschitz_estimate(&spec, 4000, 3).unwrap();
        assert!(est <= spec.params().lipschitz_bound(), "{est}");
        assert!(est >= spec.params().stiffness * 0.95, "{est}");
    }

    #[test]
    fn lipschitz_needs_two_samples() {
        let spec = parity_spec(6.0, "");
        assert!(lipschitz_estimate(&spec, 1, 0).is_err());
    }

    #[test]
    fn json_round_trip_reproduces_field() {
        let spec = parity_spec(5.0, "aa");
        let back = ForceFieldSpec::from_json(&spec.to_json()).unwrap();
        assert_eq!(back.graph(), spec.graph());
        let x = vec![1.3, 4.1, 2.2, 0.7];
        assert_eq!(back.eval_force(&x), spec.eval_force(&x));
    }

    #[test]
    fn out_degree_at_most_one() {
        for input in ["", "a", "aa", "aaaaa"] {
            let spec = parity_spec(6.0, input);
            spec.graph().successors().unwrap();
        }
    }
}
