//! Dense-matrix primitives, the Kronecker product, the rearrangement
//! operator and its inverse, masked projection, and candidate-set
//! enumeration.
//!
//! The rearrangement operator `R_{p,q}` is the entry permutation that maps
//! a Kronecker product `A (x) B` to the rank-one matrix `vec(A) vec(B)^T`.
//! All indices in this module are 0-based; file formats convert at the I/O
//! boundary.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix of finite `f64` entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "expected {} entries for a {rows}x{cols} matrix, got {}",
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "matrix entries must be finite".into(),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Build from nested rows; convenient in tests and CSV loading.
    pub fn from_nested(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        if r == 0 {
            return Err(Error::InvalidArgument("no rows".into()));
        }
        let c = rows[0].len();
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::DimensionMismatch("ragged rows".into()));
        }
        Self::new(r, c, rows.iter().flatten().copied().collect())
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn scale(&self, alpha: f64) -> DenseMatrix {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| alpha * v).collect(),
        }
    }

    pub fn add(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.check_same_shape(other)?;
        Ok(DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    pub fn sub(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.check_same_shape(other)?;
        Ok(DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    pub fn transpose(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    fn check_same_shape(&self, other: &DenseMatrix) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }
}

/// Set of observed entry indices, stored densely with an observed count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationMask {
    rows: usize,
    cols: usize,
    observed: Vec<bool>,
    count: usize,
}

impl ObservationMask {
    pub fn full(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            observed: vec![true; rows * cols],
            count: rows * cols,
        }
    }

    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            observed: vec![false; rows * cols],
            count: 0,
        }
    }

    /// Build from 0-based index pairs, rejecting duplicates and
    /// out-of-bounds entries.
    pub fn from_indices(rows: usize, cols: usize, indices: &[(usize, usize)]) -> Result<Self> {
        let mut mask = Self::empty(rows, cols);
        for &(i, j) in indices {
            if i >= rows || j >= cols {
                return Err(Error::OutOfBounds(i, j, rows, cols));
            }
            if mask.observed[i * cols + j] {
                return Err(Error::DuplicateIndex(i, j));
            }
            mask.observed[i * cols + j] = true;
            mask.count += 1;
        }
        Ok(mask)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.observed[i * self.cols + j]
    }

    pub fn insert(&mut self, i: usize, j: usize) {
        let idx = i * self.cols + j;
        if !self.observed[idx] {
            self.observed[idx] = true;
            self.count += 1;
        }
    }

    pub fn remove(&mut self, i: usize, j: usize) {
        let idx = i * self.cols + j;
        if self.observed[idx] {
            self.observed[idx] = false;
            self.count -= 1;
        }
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Observed indices in row-major order.
    pub fn indices(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.count);
        for i in 0..self.rows {
            for j in 0..self.cols {
                if self.observed[i * self.cols + j] {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Set-minus another mask of the same shape.
    pub fn difference(&self, other: &ObservationMask) -> Result<ObservationMask> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch("mask shapes differ".into()));
        }
        let mut out = self.clone();
        for i in 0..self.rows {
            for j in 0..self.cols {
                if other.is_observed(i, j) {
                    out.remove(i, j);
                }
            }
        }
        Ok(out)
    }

    /// Dense 0/1 view, for file output.
    pub fn to_dense(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.rows, self.cols, |i, j| {
            if self.is_observed(i, j) {
                1.0
            } else {
                0.0
            }
        })
    }
}

/// A divisor pair `(p, q)` of ambient dimensions `(P, Q)`, with implied
/// complement `(p*, q*) = (P/p, Q/q)` giving the Kronecker factor shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Configuration {
    p: usize,
    q: usize,
    big_p: usize,
    big_q: usize,
}

impl Configuration {
    pub fn new(p: usize, q: usize, big_p: usize, big_q: usize) -> Result<Self> {
        if p == 0 || q == 0 || big_p == 0 || big_q == 0 {
            return Err(Error::InvalidArgument(
                "configuration dimensions must be positive".into(),
            ));
        }
        if big_p % p != 0 || big_q % q != 0 {
            return Err(Error::DimensionMismatch(format!(
                "({p}, {q}) does not divide ({big_p}, {big_q})"
            )));
        }
        Ok(Self { p, q, big_p, big_q })
    }

    #[inline]
    pub fn p(&self) -> usize {
        self.p
    }

    #[inline]
    pub fn q(&self) -> usize {
        self.q
    }

    #[inline]
    pub fn p_star(&self) -> usize {
        self.big_p / self.p
    }

    #[inline]
    pub fn q_star(&self) -> usize {
        self.big_q / self.q
    }

    #[inline]
    pub fn ambient(&self) -> (usize, usize) {
        (self.big_p, self.big_q)
    }

    /// Shape of the rearranged matrix: `(pq, p*q*)`.
    pub fn rearranged_shape(&self) -> (usize, usize) {
        (self.p * self.q, self.p_star() * self.q_star())
    }

    fn check_operand(&self, rows: usize, cols: usize) -> Result<()> {
        if rows != self.big_p || cols != self.big_q {
            return Err(Error::DimensionMismatch(format!(
                "configuration expects a {}x{} operand, got {rows}x{cols}",
                self.big_p, self.big_q
            )));
        }
        Ok(())
    }

    fn check_rearranged(&self, rows: usize, cols: usize) -> Result<()> {
        let (r, c) = self.rearranged_shape();
        if rows != r || cols != c {
            return Err(Error::DimensionMismatch(format!(
                "configuration expects a {r}x{c} rearranged operand, got {rows}x{cols}"
            )));
        }
        Ok(())
    }
}

impl std::fmt::Display for Configuration {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {})", self.p, self.q)
    }
}

/// How the candidate-set bounds on `pq` are specified.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CandidateMode {
    /// `(PQ)^(1/4+delta) <= pq <= (PQ)^(3/4-delta)` with `delta` in (0, 1/4).
    Delta(f64),
    /// `2^s <= pq <= PQ * 2^-s`; requires `P` and `Q` to be powers of two
    /// and `(M+N)/4 < s < (M+N)/2` for `P = 2^M`, `Q = 2^N`.
    S(u32),
}

/// Ordered list of candidate configurations with the bounds that produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfigurationSet {
    members: Vec<Configuration>,
    lower: f64,
    upper: f64,
}

impl ConfigurationSet {
    pub fn members(&self) -> &[Configuration] {
        &self.members
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.lower, self.upper)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, c: &Configuration) -> bool {
        self.members.contains(c)
    }
}

/// Kronecker product `A (x) B`: block `(i, j)` equals `a_ij * B`.
pub fn kronecker_product(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(a.rows() * b.rows(), a.cols() * b.cols());
    kron_add_into(&mut out, 1.0, a, b);
    out
}

/// Accumulate `alpha * (A (x) B)` into `out`. Shared by `kronecker_product`
/// and model reconstruction so both take the identical arithmetic path.
pub(crate) fn kron_add_into(out: &mut DenseMatrix, alpha: f64, a: &DenseMatrix, b: &DenseMatrix) {
    debug_assert_eq!(out.rows(), a.rows() * b.rows());
    debug_assert_eq!(out.cols(), a.cols() * b.cols());
    for i in 0..a.rows() {
        for j in 0..a.cols() {
            let aij = a.get(i, j);
            for k in 0..b.rows() {
                for l in 0..b.cols() {
                    let r = i * b.rows() + k;
                    let c = j * b.cols() + l;
                    let v = out.get(r, c) + alpha * (aij * b.get(k, l));
                    out.set(r, c, v);
                }
            }
        }
    }
}

/// Column-major vectorization: stacks column 1 first, then column 2, ...
pub fn vec_matrix(m: &DenseMatrix) -> DenseMatrix {
    let mut data = Vec::with_capacity(m.rows() * m.cols());
    for j in 0..m.cols() {
        for i in 0..m.rows() {
            data.push(m.get(i, j));
        }
    }
    DenseMatrix {
        rows: m.rows() * m.cols(),
        cols: 1,
        data,
    }
}

/// Inverse of `vec_matrix`: reshape a length-`rows*cols` column vector into
/// a `rows x cols` matrix, column-major.
pub fn unvec(v: &[f64], rows: usize, cols: usize) -> Result<DenseMatrix> {
    if v.len() != rows * cols {
        return Err(Error::DimensionMismatch(format!(
            "cannot reshape length {} into {rows}x{cols}",
            v.len()
        )));
    }
    Ok(DenseMatrix::from_fn(rows, cols, |i, j| v[j * rows + i]))
}

// Index map of the rearrangement: entry (i*p* + k, j*q* + l) of the
// original P x Q matrix goes to entry (i + j*p, k + l*p*) of the
// (pq) x (p*q*) rearranged matrix. Blocks and within-block entries are
// both ordered column-major, so R[A (x) B] = vec(A) vec(B)^T exactly.
#[inline]
fn rearranged_index(c: &Configuration, i: usize, j: usize) -> (usize, usize) {
    let ps = c.p_star();
    let qs = c.q_star();
    let (bi, k) = (i / ps, i % ps);
    let (bj, l) = (j / qs, j % qs);
    (bi + bj * c.p(), k + l * ps)
}

#[inline]
fn original_index(c: &Configuration, r: usize, s: usize) -> (usize, usize) {
    let ps = c.p_star();
    let qs = c.q_star();
    let (bi, bj) = (r % c.p(), r / c.p());
    let (k, l) = (s % ps, s / ps);
    (bi * ps + k, bj * qs + l)
}

/// Rearrangement operator `R_{p,q}`: maps a `P x Q` matrix to a
/// `(pq) x (p*q*)` matrix whose rows are vectorized blocks.
pub fn rearrange(m: &DenseMatrix, c: &Configuration) -> Result<DenseMatrix> {
    c.check_operand(m.rows(), m.cols())?;
    let (rr, rc) = c.rearranged_shape();
    let mut out = DenseMatrix::zeros(rr, rc);
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            let (r, s) = rearranged_index(c, i, j);
            out.set(r, s, m.get(i, j));
        }
    }
    Ok(out)
}

/// Inverse rearrangement: exact (bit-identical) inverse permutation.
pub fn inverse_rearrange(n: &DenseMatrix, c: &Configuration) -> Result<DenseMatrix> {
    c.check_rearranged(n.rows(), n.cols())?;
    let mut out = DenseMatrix::zeros(c.big_p, c.big_q);
    for r in 0..n.rows() {
        for s in 0..n.cols() {
            let (i, j) = original_index(c, r, s);
            out.set(i, j, n.get(r, s));
        }
    }
    Ok(out)
}

/// Apply the rearrangement permutation to an observation mask.
pub fn rearrange_mask(mask: &ObservationMask, c: &Configuration) -> Result<ObservationMask> {
    c.check_operand(mask.rows(), mask.cols())?;
    let (rr, rc) = c.rearranged_shape();
    let mut out = ObservationMask::empty(rr, rc);
    for i in 0..mask.rows() {
        for j in 0..mask.cols() {
            if mask.is_observed(i, j) {
                let (r, s) = rearranged_index(c, i, j);
                out.insert(r, s);
            }
        }
    }
    Ok(out)
}

/// Projection `P_Omega`: keep observed entries, zero-fill the rest.
pub fn project(m: &DenseMatrix, mask: &ObservationMask) -> Result<DenseMatrix> {
    if m.rows() != mask.rows() || m.cols() != mask.cols() {
        return Err(Error::DimensionMismatch(format!(
            "matrix {}x{} vs mask {}x{}",
            m.rows(),
            m.cols(),
            mask.rows(),
            mask.cols()
        )));
    }
    Ok(DenseMatrix::from_fn(m.rows(), m.cols(), |i, j| {
        if mask.is_observed(i, j) {
            m.get(i, j)
        } else {
            0.0
        }
    }))
}

/// All divisors of `n`, ascending.
pub fn divisors(n: usize) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::InvalidArgument("divisors of 0 are undefined".into()));
    }
    let mut small = Vec::new();
    let mut large = Vec::new();
    let mut d = 1;
    while d * d <= n {
        if n % d == 0 {
            small.push(d);
            if d != n / d {
                large.push(n / d);
            }
        }
        d += 1;
    }
    large.reverse();
    small.extend(large);
    Ok(small)
}

/// Candidate configurations `(p, q)` with `p | P`, `q | Q` and `pq` inside
/// the bounds given by `mode`. Construction order is lexicographic.
pub fn candidate_set(big_p: usize, big_q: usize, mode: CandidateMode) -> Result<ConfigurationSet> {
    let pq_total = (big_p as f64) * (big_q as f64);
    let (lower, upper) = match mode {
        CandidateMode::Delta(delta) => {
            if !(delta > 0.0 && delta < 0.25) {
                return Err(Error::InvalidBound(format!(
                    "delta must lie in (0, 1/4), got {delta}"
                )));
            }
            (pq_total.powf(0.25 + delta), pq_total.powf(0.75 - delta))
        }
        CandidateMode::S(s) => {
            if !big_p.is_power_of_two() || !big_q.is_power_of_two() {
                return Err(Error::InvalidBound(format!(
                    "s-mode requires power-of-two dimensions, got {big_p}x{big_q}"
                )));
            }
            let mn = (big_p.trailing_zeros() + big_q.trailing_zeros()) as f64;
            let s_f = s as f64;
            if !(s_f > mn / 4.0 && s_f < mn / 2.0) {
                return Err(Error::InvalidBound(format!(
                    "s must satisfy (M+N)/4 < s < (M+N)/2, got s={s} with M+N={mn}"
                )));
            }
            (2f64.powi(s as i32), pq_total / 2f64.powi(s as i32))
        }
    };
    // Small slack so integer pq sitting exactly on a bound is kept despite
    // floating-point rounding of the powf bounds.
    let eps = 1e-9;
    let mut members = Vec::new();
    for &p in &divisors(big_p)? {
        for &q in &divisors(big_q)? {
            let pq = (p as f64) * (q as f64);
            if pq >= lower * (1.0 - eps) && pq <= upper * (1.0 + eps) {
                members.push(Configuration::new(p, q, big_p, big_q)?);
            }
        }
    }
    if members.is_empty() {
        return Err(Error::InvalidBound(format!(
            "no admissible configurations for {big_p}x{big_q} with bounds [{lower}, {upper}]"
        )));
    }
    Ok(ConfigurationSet {
        members,
        lower,
        upper,
    })
}
