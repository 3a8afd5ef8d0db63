//! Scalar reverse-mode tape for composing objectives out of network outputs.
//!
//! Nodes are appended in evaluation order; each stores its value and the
//! local partials with respect to its parents. `backward` sweeps the tape
//! once in reverse, so reductions always accumulate in the same order.

use crate::error::{Result, WanError};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(u32);

impl Var {
    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub(crate) fn from_index(i: usize) -> Self {
        Var(i as u32)
    }
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    values: Vec<f64>,
    spans: Vec<(u32, u32)>,
    parents: Vec<(u32, f64)>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(nodes: usize) -> Self {
        Self {
            values: Vec::with_capacity(nodes),
            spans: Vec::with_capacity(nodes),
            parents: Vec::with_capacity(2 * nodes),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, v: Var) -> f64 {
        self.values[v.index()]
    }

    fn push(&mut self, value: f64, parents: &[(Var, f64)]) -> Var {
        let start = self.parents.len() as u32;
        self.parents.extend(parents.iter().map(|&(p, d)| (p.0, d)));
        self.spans.push((start, parents.len() as u32));
        self.values.push(value);
        Var(self.values.len() as u32 - 1)
    }

    /// An independent input (also used for constants).
    pub fn leaf(&mut self, value: f64) -> Var {
        self.push(value, &[])
    }

    /// Contiguous leaves; returns the handle of the first.
    pub fn leaves(&mut self, values: &[f64]) -> Var {
        let first = Var(self.values.len() as u32);
        for &v in values {
            self.leaf(v);
        }
        first
    }

    /// A node with caller-supplied value and partial derivatives.
    pub fn custom(&mut self, value: f64, partials: &[(Var, f64)]) -> Var {
        self.push(value, partials)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, &[(a, 1.0), (b, 1.0)])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, &[(a, 1.0), (b, -1.0)])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        self.push(va * vb, &[(a, vb), (b, va)])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        self.push(va / vb, &[(a, 1.0 / vb), (b, -va / (vb * vb))])
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = -self.value(a);
        self.push(v, &[(a, -1.0)])
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = k * self.value(a);
        self.push(v, &[(a, k)])
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) + c;
        self.push(v, &[(a, 1.0)])
    }

    pub fn square(&mut self, a: Var) -> Var {
        let va = self.value(a);
        self.push(va * va, &[(a, 2.0 * va)])
    }

    /// `|a|` with subgradient 0 at the kink.
    pub fn abs(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let s = if va > 0.0 {
            1.0
        } else if va < 0.0 {
            -1.0
        } else {
            0.0
        };
        self.push(va.abs(), &[(a, s)])
    }

    /// Natural logarithm; `term` names the argument in the domain error.
    pub fn ln(&mut self, a: Var, term: &str) -> Result<Var> {
        let va = self.value(a);
        if va <= 0.0 || va.is_nan() {
            return Err(WanError::LogDomain {
                term: term.to_string(),
                value: va,
            });
        }
        Ok(self.push(va.ln(), &[(a, 1.0 / va)]))
    }

    /// `max(a, floor)`; the derivative is zero while the floor is active.
    pub fn floor_at(&mut self, a: Var, floor: f64) -> Var {
        let va = self.value(a);
        if va >= floor {
            self.push(va, &[(a, 1.0)])
        } else {
            self.push(floor, &[(a, 0.0)])
        }
    }

    pub fn sum(&mut self, terms: &[Var]) -> Var {
        let v = terms.iter().map(|&t| self.value(t)).sum();
        let parents: Vec<(Var, f64)> = terms.iter().map(|&t| (t, 1.0)).collect();
        self.push(v, &parents)
    }

    /// `Σ wᵢ·aᵢ` for constant weights.
    pub fn dot_const(&mut self, terms: &[Var], weights: &[f64]) -> Var {
        debug_assert_eq!(terms.len(), weights.len());
        let v = terms.iter().zip(weights).map(|(&t, &w)| w * self.value(t)).sum();
        let parents: Vec<(Var, f64)> = terms.iter().zip(weights).map(|(&t, &w)| (t, w)).collect();
        self.push(v, &parents)
    }

    /// Adjoints of every node with respect to `output`.
    pub fn backward(&self, output: Var) -> Vec<f64> {
        let mut adj = vec![0.0; self.values.len()];
        adj[output.index()] = 1.0;
        for node in (0..=output.index()).rev() {
            let a = adj[node];
            if a == 0.0 {
                continue;
            }
            let (start, len) = self.spans[node];
            for &(p, d) in &self.parents[start as usize..(start + len) as usize] {
                adj[p as usize] += a * d;
            }
        }
        adj
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule() {
        let mut t = Tape::new();
        let x = t.leaf(3.0);
        let y = t.mul(x, x);
        let adj = t.backward(y);
        assert_eq!(t.value(y), 9.0);
        assert_eq!(adj[x.index()], 6.0);
    }

    #[test]
    fn log_domain_error_names_term() {
        let mut t = Tape::new();
        let x = t.leaf(-1.0);
        match t.ln(x, "pairing") {
            Err(WanError::LogDomain { term, .. }) => assert_eq!(term, "pairing"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn abs_kink_and_floor() {
        let mut t = Tape::new();
        let x = t.leaf(0.0);
        let y = t.abs(x);
        assert_eq!(t.backward(y)[x.index()], 0.0);
        let z = t.leaf(1e-40);
        let f = t.floor_at(z, 1e-30);
        assert_eq!(t.value(f), 1e-30);
        assert_eq!(t.backward(f)[z.index()], 0.0);
    }

    #[test]
    fn quotient_and_sums() {
        let mut t = Tape::new();
        let a = t.leaf(2.0);
        let b = t.leaf(4.0);
        let q = t.div(a, b);
        let s = t.dot_const(&[a, b, q], &[1.0, 2.0, 3.0]);
        let adj = t.backward(s);
        // s = a + 2b + 3a/b
        assert!((adj[a.index()] - (1.0 + 3.0 / 4.0)).abs() < 1e-15);
        assert!((adj[b.index()] - (2.0 - 3.0 * 2.0 / 16.0)).abs() < 1e-15);
    }
}
