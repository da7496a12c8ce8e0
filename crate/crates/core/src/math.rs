//! Dense vectors, row-major matrices and the probability primitives shared
//! by both learners.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

/// Norms at or below this are treated as the zero vector.
pub const EPS_NORM: f64 = 1e-12;
/// Probability clamp applied before taking logs of a divergence target.
pub const EPS_PROB: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| if r == c { 1.0 } else { 0.0 })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(contract("ragged matrix rows"));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(contract(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `self · x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|r| dot(self.row(r), x)).collect()
    }

    /// `self[:, cols] · x` for a contiguous column block starting at `offset`.
    pub fn matvec_block(&self, offset: usize, x: &[f64]) -> Vec<f64> {
        debug_assert!(offset + x.len() <= self.cols);
        (0..self.rows)
            .map(|r| dot(&self.row(r)[offset..offset + x.len()], x))
            .collect()
    }

    /// `self[:, offset..offset+n]ᵀ · y`, accumulated into `out`.
    pub fn matvec_t_block_into(&self, offset: usize, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.rows);
        for (r, &yr) in y.iter().enumerate() {
            if yr == 0.0 {
                continue;
            }
            let row = &self.row(r)[offset..offset + out.len()];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += yr * w;
            }
        }
    }

    /// `self[:, offset..offset+b.len()] += scale · a bᵀ`.
    pub fn add_outer_block(&mut self, offset: usize, scale: f64, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        for (r, &ar) in a.iter().enumerate() {
            let s = scale * ar;
            if s == 0.0 {
                continue;
            }
            let row = &mut self.row_mut(r)[offset..offset + b.len()];
            for (x, &bv) in row.iter_mut().zip(b) {
                *x += s * bv;
            }
        }
    }

    pub fn add_outer(&mut self, scale: f64, a: &[f64], b: &[f64]) {
        debug_assert_eq!(b.len(), self.cols);
        self.add_outer_block(0, scale, a, b);
    }

    /// `self += scale · other`.
    pub fn axpy(&mut self, scale: f64, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        for (x, &y) in self.data.iter_mut().zip(&other.data) {
            *x += scale * y;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Scales `v` onto the unit sphere; vectors with norm at most [`EPS_NORM`]
/// come back unchanged.
pub fn l2_normalize(v: &[f64]) -> Vec<f64> {
    let n = norm(v);
    if n > EPS_NORM {
        v.iter().map(|x| x / n).collect()
    } else {
        v.to_vec()
    }
}

pub fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + z.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(z);
    z.iter().map(|x| x - lse).collect()
}

fn softmax_vec(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

pub fn softmax(z: &[f64]) -> RelationDistribution {
    RelationDistribution {
        probs: softmax_vec(z),
    }
}

/// A probability vector over relation classes (|R| for the supervised
/// learner, |R'| for the semi-supervised one).
#[derive(Debug, Clone, PartialEq)]
pub struct RelationDistribution {
    probs: Vec<f64>,
}

impl RelationDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(contract("empty distribution"));
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(contract("probability outside [0, 1]"));
        }
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(contract(format!("probabilities sum to {s}")));
        }
        Ok(Self { probs })
    }

    pub fn uniform(k: usize) -> Self {
        Self {
            probs: vec![1.0 / k as f64; k],
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn arity(&self) -> usize {
        self.probs.len()
    }

    /// The first `k` entries rescaled to sum to one.
    pub fn renormalized_prefix(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.probs.len() {
            return Err(contract(format!(
                "prefix {k} of a {}-way distribution",
                self.probs.len()
            )));
        }
        let head = &self.probs[..k];
        let s: f64 = head.iter().sum();
        if s <= 0.0 {
            return Ok(Self::uniform(k));
        }
        Ok(Self {
            probs: head.iter().map(|p| p / s).collect(),
        })
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }
}

/// Index of the largest entry; ties go to the lower index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(d: &RelationDistribution) -> f64 {
    let h = -d
        .probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>();
    h.max(0.0)
}

/// `KL(p ‖ q)` in nats. `q` is clamped at [`EPS_PROB`] and renormalized.
pub fn kl_divergence(p: &RelationDistribution, q: &RelationDistribution) -> Result<f64> {
    if p.arity() != q.arity() {
        return Err(contract(format!(
            "KL between arities {} and {}",
            p.arity(),
            q.arity()
        )));
    }
    // Renormalize only when clamping changed q, so KL(p, p) is exactly 0.
    let clamped: Vec<f64> = if q.probs.iter().any(|&x| x < EPS_PROB) {
        let c: Vec<f64> = q.probs.iter().map(|&x| x.max(EPS_PROB)).collect();
        let z: f64 = c.iter().sum();
        c.into_iter().map(|x| x / z).collect()
    } else {
        q.probs.clone()
    };
    let kl = p
        .probs
        .iter()
        .zip(&clamped)
        .filter(|(&pk, _)| pk > 0.0)
        .map(|(&pk, &qk)| pk * (pk.ln() - qk.ln()))
        .sum::<f64>();
    Ok(kl.max(0.0))
}
