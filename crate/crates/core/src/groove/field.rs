//! Closed-form force field around a compiled groove path.
//!
//! Every path cell carries one centerline primitive: a straight segment
//! through the cell center, or, where the path turns, a quarter circle of
//! radius `L/2` joining the midpoints of the entry and exit faces. The first
//! cell holds a half segment starting at its center and the terminal cell a
//! half segment ending at its center, where the tangential speed fades to
//! zero so the ball parks there.
//!
//! For a point at distance `d` from the nearest centerline point `q` with
//! unit tangent `t`, the groove force is
//!
//! ```text
//! v * speed(q) * fade(d) * t  -  g(d) * (x - q) / d
//! ```
//!
//! with `g(d) = kappa * d` up to `r - s`, bending over quadratically to the
//! constant `kappa * (r - s/2)` at `d = r`, and `fade` a smoothstep from 1 at
//! `r` to 0 at `r + s`. The full field handed to the SDE adds `-x/2`, which
//! cancels the `+x/2` drift of the pinball equation.
//!
//! Within distance `L/2` of the path the nearest point is unique and found
//! among the primitives of the current cell and its face neighbours.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::layout::{GrooveGraph, LatticeCoord};

/// Geometry and strength constants of a compiled field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrooveParams {
    /// Cell side length `L`.
    pub cell_size: f64,
    /// Corridor radius `r`, `0 < r < L/2`.
    pub corridor_radius: f64,
    /// Width `s` of the confinement roll-off and of the tangential fade,
    /// `0 < s <= r`.
    pub smoothing: f64,
    /// Confinement stiffness `kappa`.
    pub stiffness: f64,
    /// Tangential speed `v`.
    pub speed: f64,
}

impl GrooveParams {
    /// Defaults: `r = L/4`, `s = L/8`, `kappa = 4`, `v = 1`.
    pub fn for_cell_size(cell_size: f64) -> Self {
        Self {
            cell_size,
            corridor_radius: cell_size / 4.0,
            smoothing: cell_size / 8.0,
            stiffness: 4.0,
            speed: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let Self {
            cell_size: l,
            corridor_radius: r,
            smoothing: s,
            stiffness: k,
            speed: v,
        } = *self;
        if !(l.is_finite() && l > 0.0) {
            return Err(format!("cell size must be positive, got {l}"));
        }
        if !(r > 0.0 && r < l / 2.0) {
            return Err(format!("corridor radius must lie in (0, L/2), got {r}"));
        }
        if !(s > 0.0 && s <= r) {
            return Err(format!("smoothing must lie in (0, r], got {s}"));
        }
        if !(k.is_finite() && k > 0.0) {
            return Err(format!("stiffness must be positive, got {k}"));
        }
        if !(v.is_finite() && v > 0.0) {
            return Err(format!("speed must be positive, got {v}"));
        }
        Ok(())
    }

    /// Confinement magnitude at distance `d` from the centerline.
    pub fn confinement(&self, d: f64) -> f64 {
        let a = self.corridor_radius - self.smoothing;
        let k = self.stiffness;
        if d <= a {
            k * d
        } else if d < self.corridor_radius {
            let e = d - a;
            k * (a + e - e * e / (2.0 * self.smoothing))
        } else {
            k * (a + self.smoothing / 2.0)
        }
    }

    /// Tangential weight at distance `d` from the centerline.
    pub fn tangential_fade(&self, d: f64) -> f64 {
        1.0 - smoothstep((d - self.corridor_radius) / self.smoothing)
    }

    /// Documented Lipschitz bound of the groove part (without the `-x/2`
    /// term): `kappa + v / (2 s)`. With `s = L/8` the second term is the
    /// `4v/L` turning rate of a unit-speed flow around a quarter circle of
    /// radius `L/2` at the inner corridor edge.
    pub fn lipschitz_bound(&self) -> f64 {
        self.stiffness + self.speed / (2.0 * self.smoothing)
    }
}

/// `3u^2 - 2u^3` on `[0, 1]`, clamped outside.
pub fn smoothstep(u: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else if u >= 1.0 {
        1.0
    } else {
        u * u * (3.0 - 2.0 * u)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Shape {
    /// Single-cell path: the cell center is a point attractor.
    Point,
    /// Along `axis` in direction `sign`, covering offsets `[lo, hi]` from
    /// the cell center.
    Segment { axis: usize, sign: f64, lo: f64, hi: f64 },
    /// Quarter circle entering along `sa * e_ia` and leaving along
    /// `sb * e_ib`.
    Arc { ia: usize, sa: f64, ib: usize, sb: f64 },
}

#[derive(Debug, Clone)]
struct Primitive {
    center: Vec<f64>,
    shape: Shape,
    /// Terminal primitive: speed fades to zero at the cell center.
    parks: bool,
}

/// Nearest centerline point of one primitive.
#[derive(Debug, Clone, Copy)]
struct Foot {
    dist2: f64,
    // In-primitive parameters needed to rebuild q and t.
    along: f64,
    angle: f64,
}

/// Result of locating a point relative to the groove path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nearest {
    /// Path index of the cell whose centerline is nearest.
    pub path_index: usize,
    /// Euclidean distance to that centerline.
    pub distance: f64,
}

/// Per-trajectory lookup cache for [`ForceFieldSpec::groove_force_cached`].
#[derive(Debug, Clone, Default)]
pub struct FieldCache {
    cell: Vec<i64>,
    candidates: Vec<u32>,
}

/// Compiled, immutable force field.
#[derive(Debug, Clone)]
pub struct ForceFieldSpec {
    graph: GrooveGraph,
    params: GrooveParams,
    primitives: Vec<Primitive>,
    index: HashMap<Vec<i64>, Vec<u32>>,
}

impl ForceFieldSpec {
    pub fn new(graph: GrooveGraph, params: GrooveParams) -> Result<Self, String> {
        params.validate()?;
        let l = params.cell_size;
        let half = l / 2.0;
        let cells = graph.cells();
        let n = cells.len();
        let mut primitives = Vec::with_capacity(n);
        for (m, cell) in cells.iter().enumerate() {
            let center: Vec<f64> = cell.0.iter().map(|&c| c as f64 * l).collect();
            let incoming = (m > 0).then(|| cells[m - 1].unit_step_to(cell).expect("path is connected"));
            let outgoing = (m + 1 < n).then(|| cell.unit_step_to(&cells[m + 1]).expect("path is connected"));
            let shape = match (incoming, outgoing) {
                (None, None) => Shape::Point,
                (None, Some((axis, s))) => Shape::Segment {
                    axis,
                    sign: s as f64,
                    lo: if s > 0 { 0.0 } else { -half },
                    hi: if s > 0 { half } else { 0.0 },
                },
                (Some((axis, s)), None) => Shape::Segment {
                    axis,
                    sign: s as f64,
                    lo: if s > 0 { -half } else { 0.0 },
                    hi: if s > 0 { 0.0 } else { half },
                },
                (Some((ia, sa)), Some((ib, sb))) if ia == ib => {
                    if sa != sb {
                        return Err(format!("path reverses at cell {m}"));
                    }
                    Shape::Segment {
                        axis: ia,
                        sign: sa as f64,
                        lo: -half,
                        hi: half,
                    }
                }
                (Some((ia, sa)), Some((ib, sb))) => Shape::Arc {
                    ia,
                    sa: sa as f64,
                    ib,
                    sb: sb as f64,
                },
            };
            primitives.push(Primitive {
                center,
                shape,
                parks: m + 1 == n,
            });
        }

        let mut index: HashMap<Vec<i64>, Vec<u32>> = HashMap::new();
        for (m, cell) in cells.iter().enumerate() {
            index.entry(cell.0.clone()).or_default().push(m as u32);
            for axis in 0..cell.dims() {
                for d in [-1, 1] {
                    let mut nb = cell.0.clone();
                    nb[axis] += d;
                    index.entry(nb).or_default().push(m as u32);
                }
            }
        }
        Ok(Self {
            graph,
            params,
            primitives,
            index,
        })
    }

    pub fn graph(&self) -> &GrooveGraph {
        &self.graph
    }

    pub fn params(&self) -> &GrooveParams {
        &self.params
    }

    pub fn dims(&self) -> usize {
        self.graph.dims()
    }

    pub fn cell_size(&self) -> f64 {
        self.params.cell_size
    }

    /// Center of `cell` in space.
    pub fn cell_center(&self, cell: &LatticeCoord) -> Vec<f64> {
        cell.0.iter().map(|&c| c as f64 * self.params.cell_size).collect()
    }

    /// Lattice cell containing `x`.
    pub fn cell_of(&self, x: &[f64]) -> Vec<i64> {
        x.iter()
            .map(|v| (v / self.params.cell_size).round() as i64)
            .collect()
    }

    fn foot(&self, p: &Primitive, x: &[f64]) -> Foot {
        let half = self.params.cell_size / 2.0;
        let full2: f64 = x.iter().zip(&p.center).map(|(a, c)| (a - c) * (a - c)).sum();
        match p.shape {
            Shape::Point => Foot {
                dist2: full2,
                along: 0.0,
                angle: 0.0,
            },
            Shape::Segment { axis, lo, hi, .. } => {
                let off = x[axis] - p.center[axis];
                let clamped = off.clamp(lo, hi);
                let e = off - clamped;
                Foot {
                    dist2: (full2 - off * off).max(0.0) + e * e,
                    along: clamped,
                    angle: 0.0,
                }
            }
            Shape::Arc { ia, sa, ib, sb } => {
                let da = x[ia] - p.center[ia];
                let db = x[ib] - p.center[ib];
                let perp2 = (full2 - da * da - db * db).max(0.0);
                // In-plane coordinates about the arc center, basis (-b, a).
                let y1 = -sb * db + half;
                let y2 = sa * da + half;
                let phi = y2.atan2(y1);
                let phi = if (0.0..=std::f64::consts::FRAC_PI_2).contains(&phi) {
                    phi
                } else {
                    let at = |ang: f64| {
                        let (s, c) = ang.sin_cos();
                        (y1 - half * c).powi(2) + (y2 - half * s).powi(2)
                    };
                    if at(0.0) <= at(std::f64::consts::FRAC_PI_2) {
                        0.0
                    } else {
                        std::f64::consts::FRAC_PI_2
                    }
                };
                let (s, c) = phi.sin_cos();
                Foot {
                    dist2: perp2 + (y1 - half * c).powi(2) + (y2 - half * s).powi(2),
                    along: 0.0,
                    angle: phi,
                }
            }
        }
    }

    /// Writes the groove force for primitive `p` with foot `f` into `out`.
    fn force_from(&self, p: &Primitive, f: &Foot, x: &[f64], out: &mut [f64]) -> f64 {
        let prm = &self.params;
        let half = prm.cell_size / 2.0;
        let d = f.dist2.sqrt();
        // Start with x - q, then turn it into the force.
        for (o, (a, c)) in out.iter_mut().zip(x.iter().zip(&p.center)) {
            *o = a - c;
        }
        let mut tangent = [(0usize, 0.0f64); 2];
        let mut speed = prm.speed * prm.tangential_fade(d);
        match p.shape {
            Shape::Point => speed = 0.0,
            Shape::Segment { axis, sign, lo, hi } => {
                out[axis] -= f.along;
                tangent[0] = (axis, sign);
                if p.parks {
                    let remaining = if sign > 0.0 { hi - f.along } else { f.along - lo };
                    speed *= smoothstep(remaining / half);
                }
            }
            Shape::Arc { ia, sa, ib, sb } => {
                let (s, c) = f.angle.sin_cos();
                // q - center along ia and ib.
                out[ia] -= sa * (half * s - half);
                out[ib] -= -sb * (half * c - half);
                tangent[0] = (ia, sa * c);
                tangent[1] = (ib, sb * s);
            }
        }
        let pull = if d > 0.0 { prm.confinement(d) / d } else { 0.0 };
        for o in out.iter_mut() {
            *o *= -pull;
        }
        if speed != 0.0 {
            for (axis, w) in tangent {
                if w != 0.0 {
                    out[axis] += speed * w;
                }
            }
        }
        d
    }

    fn best<'a>(&self, x: &[f64], candidates: impl Iterator<Item = &'a u32>) -> Option<(usize, Foot)> {
        let mut best: Option<(usize, Foot)> = None;
        for &m in candidates {
            let f = self.foot(&self.primitives[m as usize], x);
            if best.is_none_or(|(_, b)| f.dist2 < b.dist2) {
                best = Some((m as usize, f));
            }
        }
        best
    }

    fn locate(&self, x: &[f64], candidates: Option<&[u32]>) -> (usize, Foot) {
        match candidates.filter(|c| !c.is_empty()) {
            Some(c) => self.best(x, c.iter()),
            None => {
                let all: Vec<u32> = (0..self.primitives.len() as u32).collect();
                self.best(x, all.iter())
            }
        }
        .expect("path has at least one cell")
    }

    /// Groove part of the field (without `-x/2`).
    pub fn groove_force(&self, x: &[f64], out: &mut [f64]) -> Nearest {
        assert_eq!(x.len(), self.dims(), "point dimension");
        let cell = self.cell_of(x);
        let (m, foot) = self.locate(x, self.index.get(&cell).map(Vec::as_slice));
        let distance = self.force_from(&self.primitives[m], &foot, x, out);
        Nearest {
            path_index: m,
            distance,
        }
    }

    /// Same as [`groove_force`](Self::groove_force), reusing the candidate
    /// list while `x` stays in one cell.
    pub fn groove_force_cached(&self, x: &[f64], out: &mut [f64], cache: &mut FieldCache) -> Nearest {
        let l = self.params.cell_size;
        let same = cache.cell.len() == x.len()
            && x.iter().zip(&cache.cell).all(|(v, c)| (v / l).round() as i64 == *c);
        if !same {
            cache.cell = self.cell_of(x);
            cache.candidates = self.index.get(&cache.cell).cloned().unwrap_or_default();
        }
        let (m, foot) = self.locate(x, Some(&cache.candidates));
        let distance = self.force_from(&self.primitives[m], &foot, x, out);
        Nearest {
            path_index: m,
            distance,
        }
    }

    /// Full field `f(x) = -x/2 + groove(x)`.
    pub fn eval_force(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.groove_force(x, &mut out);
        for (o, v) in out.iter_mut().zip(x) {
            *o -= 0.5 * v;
        }
        out
    }

    pub fn nearest(&self, x: &[f64]) -> Nearest {
        let mut scratch = vec![0.0; x.len()];
        self.groove_force(x, &mut scratch)
    }

    /// A point on the centerline of path cell `m`: `u in [0, 1]` runs from
    /// entry to exit.
    pub fn centerline_point(&self, m: usize, u: f64) -> (Vec<f64>, Vec<f64>) {
        let p = &self.primitives[m];
        let half = self.params.cell_size / 2.0;
        let mut q = p.center.clone();
        let mut t = vec![0.0; q.len()];
        match p.shape {
            Shape::Point => {}
            Shape::Segment { axis, sign, lo, hi } => {
                let along = if sign > 0.0 { lo + u * (hi - lo) } else { hi - u * (hi - lo) };
                q[axis] += along;
                t[axis] = sign;
            }
            Shape::Arc { ia, sa, ib, sb } => {
                let phi = u * std::f64::consts::FRAC_PI_2;
                let (s, c) = phi.sin_cos();
                q[ia] += sa * (half * s - half);
                q[ib] += -sb * (half * c - half);
                t[ia] = sa * c;
                t[ib] = sb * s;
            }
        }
        (q, t)
    }

    /// Number of centerline primitives (one per path cell).
    pub fn primitive_count(&self) -> usize {
        self.primitives.len()
    }

    /// Whether path cell `m` is a quarter-circle turn.
    pub fn is_turn(&self, m: usize) -> bool {
        matches!(self.primitives[m].shape, Shape::Arc { .. })
    }
}
