//! Layered threshold circuits with exact integer weights.
//!
//! Wires are numbered inputs first (`0..n`), then gates in layer order. A
//! gate reads any wire from the inputs or an earlier layer and outputs
//! `θ(Σ wᵢxᵢ + t)` with `θ(u) = 1` iff `u ≥ 0`. The last layer holds the
//! single output gate.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CircuitError {
    #[error("expected {expected} input bits, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("invalid circuit: {0}")]
    Invalid(String),
    #[error("argument out of range: {0}")]
    Range(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThresholdGate {
    /// Sparse `(wire, weight)` pairs.
    pub weights: Vec<(usize, i64)>,
    pub threshold: i64,
}

impl ThresholdGate {
    pub fn new(weights: Vec<(usize, i64)>, threshold: i64) -> Self {
        Self { weights, threshold }
    }

    /// Gate over wires `0..weights.len()` with the given dense weights.
    pub fn dense(weights: &[i64], threshold: i64) -> Self {
        Self::new(weights.iter().copied().enumerate().collect(), threshold)
    }

    pub fn fire(&self, wires: &[bool]) -> bool {
        let s: i64 = self
            .weights
            .iter()
            .map(|&(i, w)| if wires[i] { w } else { 0 })
            .sum();
        s + self.threshold >= 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "CircuitDoc", into = "CircuitDoc")]
pub struct Circuit {
    arity: usize,
    layers: Vec<Vec<ThresholdGate>>,
}

#[derive(Serialize, Deserialize)]
struct CircuitDoc {
    arity: usize,
    layers: Vec<Vec<ThresholdGate>>,
}

impl TryFrom<CircuitDoc> for Circuit {
    type Error = CircuitError;
    fn try_from(d: CircuitDoc) -> Result<Self, Self::Error> {
        Circuit::new(d.arity, d.layers)
    }
}

impl From<Circuit> for CircuitDoc {
    fn from(c: Circuit) -> Self {
        CircuitDoc {
            arity: c.arity,
            layers: c.layers,
        }
    }
}

impl Circuit {
    pub fn new(arity: usize, layers: Vec<Vec<ThresholdGate>>) -> Result<Self, CircuitError> {
        let invalid = |m: String| Err(CircuitError::Invalid(m));
        match layers.last() {
            Some(last) if last.len() == 1 => {}
            Some(last) => return invalid(format!("output layer has {} gates, expected 1", last.len())),
            None => return invalid("circuit has no layers".into()),
        }
        let mut available = arity;
        for (l, layer) in layers.iter().enumerate() {
            if layer.is_empty() {
                return invalid(format!("layer {l} is empty"));
            }
            for gate in layer {
                if let Some(&(w, _)) = gate.weights.iter().find(|&&(w, _)| w >= available) {
                    return invalid(format!("a gate in layer {l} reads wire {w}, which is not earlier"));
                }
            }
            available += layer.len();
        }
        Ok(Self { arity, layers })
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn layers(&self) -> &[Vec<ThresholdGate>] {
        &self.layers
    }

    /// Number of layers.
    pub fn declared_depth(&self) -> usize {
        self.layers.len()
    }

    /// Gate count of the widest layer.
    pub fn width(&self) -> usize {
        self.layers.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn gate_count(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    /// Longest chain of gates ending at the output, following only
    /// nonzero-weight wires.
    pub fn audit_depth(&self) -> usize {
        let mut depth = vec![0usize; self.arity];
        for layer in &self.layers {
            let next: Vec<usize> = layer
                .iter()
                .map(|g| {
                    1 + g
                        .weights
                        .iter()
                        .filter(|&&(_, w)| w != 0)
                        .map(|&(i, _)| depth[i])
                        .max()
                        .unwrap_or(0)
                })
                .collect();
            depth.extend(next);
        }
        *depth.last().expect("circuit has an output gate")
    }

    pub fn eval(&self, input: &[bool]) -> Result<bool, CircuitError> {
        if input.len() != self.arity {
            return Err(CircuitError::Arity {
                expected: self.arity,
                got: input.len(),
            });
        }
        let mut wires = input.to_vec();
        for layer in &self.layers {
            let out: Vec<bool> = layer.iter().map(|g| g.fire(&wires)).collect();
            wires.extend(out);
        }
        Ok(*wires.last().expect("circuit has an output gate"))
    }

    /// Evaluates on the low `arity` bits of `bits`, bit `i` feeding input `i`.
    pub fn eval_bits(&self, bits: u64) -> bool {
        let input: Vec<bool> = (0..self.arity).map(|i| bits >> i & 1 == 1).collect();
        self.eval(&input).expect("arity matches by construction")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| e.to_string())
    }
}

fn sum_gate(n: usize, weight: i64, threshold: i64) -> ThresholdGate {
    ThresholdGate::new((0..n).map(|i| (i, weight)).collect(), threshold)
}

/// `x₁ ∧ … ∧ xₙ` as `[Σx − n ≥ 0]`.
pub fn and_gate(n: usize) -> Circuit {
    Circuit::new(n, vec![vec![sum_gate(n, 1, -(n as i64))]]).expect("valid by construction")
}

/// `x₁ ∨ … ∨ xₙ` as `[Σx − 1 ≥ 0]`.
pub fn or_gate(n: usize) -> Circuit {
    Circuit::new(n, vec![vec![sum_gate(n, 1, -1)]]).expect("valid by construction")
}

/// `¬x` as `[−x ≥ 0]`.
pub fn not_gate() -> Circuit {
    Circuit::new(1, vec![vec![ThresholdGate::new(vec![(0, -1)], 0)]]).expect("valid by construction")
}

/// The two layer-one gates `[Σx ≥ k]` and `[Σx ≤ k]`.
fn count_bounds(n: usize, k: usize) -> [ThresholdGate; 2] {
    [sum_gate(n, 1, -(k as i64)), sum_gate(n, -1, k as i64)]
}

/// 1 iff exactly `k` of the `n` inputs are set. Depth 2, width 2: the two
/// count bounds feed an AND output gate.
pub fn k_equals(n: usize, k: usize) -> Result<Circuit, CircuitError> {
    if k > n {
        return Err(CircuitError::Range(format!("k = {k} exceeds n = {n}")));
    }
    let [ge, le] = count_bounds(n, k);
    let and = ThresholdGate::new(vec![(n, 1), (n + 1, 1)], -2);
    Circuit::new(n, vec![vec![ge, le], vec![and]])
}

/// 1 iff the number of set inputs lies in `set`. Depth 3 and width `2|S|`:
/// count bounds, one AND per member, then an OR. The empty set gives a
/// constant-0 chain of the same depth.
pub fn is_in(n: usize, set: &[usize]) -> Result<Circuit, CircuitError> {
    let members: BTreeSet<usize> = set.iter().copied().collect();
    if let Some(&k) = members.iter().find(|&&k| k > n) {
        return Err(CircuitError::Range(format!("set element {k} exceeds n = {n}")));
    }
    if members.is_empty() {
        let never = sum_gate(n, 1, -(n as i64) - 1);
        let pass = |w: usize| ThresholdGate::new(vec![(w, 1)], -1);
        return Circuit::new(n, vec![vec![never], vec![pass(n)], vec![pass(n + 1)]]);
    }
    let s = members.len();
    let first = members.iter().flat_map(|&k| count_bounds(n, k)).collect();
    let second = (0..s)
        .map(|j| ThresholdGate::new(vec![(n + 2 * j, 1), (n + 2 * j + 1, 1)], -2))
        .collect();
    let or = ThresholdGate::new((0..s).map(|j| (n + 2 * s + j, 1)).collect(), -1);
    Circuit::new(n, vec![first, second, vec![or]])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bits(s: &str) -> Vec<bool> {
        s.chars().map(|c| c == '1').collect()
    }

    #[test]
    fn basic_gadgets() {
        assert!(and_gate(2).eval(&[true, true]).unwrap());
        assert!(!and_gate(2).eval(&[true, false]).unwrap());
        assert!(not_gate().eval(&[false]).unwrap());
        assert!(!not_gate().eval(&[true]).unwrap());
        assert!(or_gate(3).eval(&bits("001")).unwrap());
        assert!(!or_gate(3).eval(&bits("000")).unwrap());
    }

    #[test]
    fn threshold_at_zero_fires() {
        assert!(ThresholdGate::dense(&[1, -1], 0).fire(&[true, true]));
        assert!(!ThresholdGate::dense(&[1, -1], -1).fire(&[true, true]));
    }

    #[test]
    fn k_equals_examples() {
        assert!(k_equals(6, 3).unwrap().eval(&bits("110100")).unwrap());
        assert!(k_equals(4, 0).unwrap().eval(&bits("0000")).unwrap());
        assert!(k_equals(1, 1).unwrap().eval(&[true]).unwrap());
        assert!(k_equals(3, 4).is_err());
    }

    #[test]
    fn arity_mismatch() {
        assert_eq!(
            k_equals(3, 1).unwrap().eval(&[true]),
            Err(CircuitError::Arity { expected: 3, got: 1 })
        );
    }

    #[test]
    fn is_in_examples() {
        let c = is_in(5, &[]).unwrap();
        assert!((0..32).all(|b| !c.eval_bits(b)));
        assert_eq!(c.audit_depth(), 3);
        let c = is_in(6, &[2, 5]).unwrap();
        for b in 0..64u64 {
            assert_eq!(c.eval_bits(b), [2, 5].contains(&b.count_ones()));
        }
        assert!(is_in(3, &[4]).is_err());
    }

    #[test]
    fn layering_enforced() {
        let g = ThresholdGate::new(vec![(2, 1)], 0);
        assert!(Circuit::new(2, vec![vec![g]]).is_err());
        assert!(Circuit::new(2, vec![]).is_err());
        let two = vec![ThresholdGate::dense(&[1], 0), ThresholdGate::dense(&[1], 0)];
        assert!(Circuit::new(1, vec![two]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let c = is_in(4, &[1, 3]).unwrap();
        assert_eq!(Circuit::from_json(&c.to_json()).unwrap(), c);
        assert!(Circuit::from_json(r#"{"arity":1,"layers":[[{"weights":[[5,1]],"threshold":0}]]}"#).is_err());
    }

    #[test]
    fn zero_weights_do_not_add_depth() {
        let c = Circuit::new(
            1,
            vec![
                vec![ThresholdGate::dense(&[1], 0)],
                vec![ThresholdGate::new(vec![(0, 1), (1, 0)], 0)],
            ],
        )
        .unwrap();
        assert_eq!(c.declared_depth(), 2);
        assert_eq!(c.audit_depth(), 1);
    }
}
