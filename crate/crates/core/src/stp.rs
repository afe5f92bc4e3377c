//! Semi-tensor product kernel.
//!
//! Logical matrices are kept in column-index ("delta") form: a `{0,1}` matrix
//! with exactly one unit entry per column is stored as the row index of that
//! entry for each column, `δ_s[i_1 … i_t]`. All indices are 1-based.
//!
//! Finite-field values `v ∈ {0, …, κ-1}` are encoded as `δ_κ^{v+1}`. The only
//! place that knows about this offset is [`value_to_index`] / [`index_to_value`]
//! and the profile codecs built on them.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

pub fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}

pub fn is_prime(k: usize) -> bool {
    if k < 2 {
        return false;
    }
    let mut d = 2;
    while d * d <= k {
        if k.is_multiple_of(d) {
            return false;
        }
        d += 1;
    }
    true
}

/// `v ∈ D_κ` ↦ index of `δ_κ^{v+1}`.
pub fn value_to_index(value: usize) -> usize {
    value + 1
}

/// Index of `δ_κ^i` ↦ `i - 1 ∈ D_κ`.
pub fn index_to_value(index: usize) -> usize {
    debug_assert!(index >= 1);
    index - 1
}

/// Encodes a tuple of field values as the index of `⋉_j δ_κ^{v_j+1}`.
/// The first component is the most significant digit.
pub fn encode_values(values: &[usize], kappa: usize) -> usize {
    values.iter().fold(0, |acc, &v| acc * kappa + v) + 1
}

/// Inverse of [`encode_values`] for a tuple of `len` components.
pub fn decode_index(index: usize, kappa: usize, len: usize) -> Vec<usize> {
    let mut rest = index - 1;
    let mut out = vec![0; len];
    for slot in out.iter_mut().rev() {
        *slot = rest % kappa;
        rest /= kappa;
    }
    out
}

/// A canonical basis vector `δ_base^index`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DeltaIndex {
    base: usize,
    index: usize,
}

impl DeltaIndex {
    pub fn new(base: usize, index: usize) -> Result<Self> {
        if base == 0 || index == 0 || index > base {
            return Err(Error::Index(format!("δ_{base}^{index} is not a basis vector")));
        }
        Ok(DeltaIndex { base, index })
    }

    pub fn base(&self) -> usize {
        self.base
    }

    pub fn index(&self) -> usize {
        self.index
    }

    /// `δ_s^i ⋉ δ_t^j = δ_{st}^{(i-1)t + j}`.
    pub fn stp(&self, other: &DeltaIndex) -> DeltaIndex {
        DeltaIndex {
            base: self.base * other.base,
            index: (self.index - 1) * other.base + other.index,
        }
    }

    pub fn to_logical(&self) -> LogicalMatrix {
        LogicalMatrix {
            rows: self.base,
            cols: vec![self.index],
        }
    }
}

impl fmt::Display for DeltaIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "δ_{}^{}", self.base, self.index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LogicalMatrix {
    rows: usize,
    cols: Vec<usize>,
}

impl LogicalMatrix {
    pub fn new(rows: usize, cols: Vec<usize>) -> Result<Self> {
        if rows == 0 {
            return Err(Error::Dimension("logical matrix needs at least one row".into()));
        }
        if cols.is_empty() {
            return Err(Error::Dimension("logical matrix needs at least one column".into()));
        }
        if let Some((j, &i)) = cols.iter().enumerate().find(|(_, &i)| i == 0 || i > rows) {
            return Err(Error::Index(format!(
                "column {} holds row index {i}, outside 1..={rows}",
                j + 1
            )));
        }
        Ok(LogicalMatrix { rows, cols })
    }

    pub fn identity(n: usize) -> Self {
        LogicalMatrix {
            rows: n,
            cols: (1..=n).collect(),
        }
    }

    /// Row vector of ones, `1_t^T`, as a `1 × t` logical matrix.
    pub fn ones_row(t: usize) -> Self {
        LogicalMatrix {
            rows: 1,
            cols: vec![1; t],
        }
    }

    pub fn delta(base: usize, index: usize) -> Result<Self> {
        Ok(DeltaIndex::new(base, index)?.to_logical())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols.len()
    }

    pub fn columns(&self) -> &[usize] {
        &self.cols
    }

    /// Row index of the unit entry in column `j` (1-based).
    pub fn col(&self, j: usize) -> Result<usize> {
        j.checked_sub(1)
            .and_then(|k| self.cols.get(k))
            .copied()
            .ok_or_else(|| Error::Index(format!("column {j} outside 1..={}", self.cols.len())))
    }

    pub fn col_delta(&self, j: usize) -> Result<DeltaIndex> {
        Ok(DeltaIndex {
            base: self.rows,
            index: self.col(j)?,
        })
    }

    /// Ordinary product `self · other`; requires `self.ncols() == other.rows()`.
    pub fn product(&self, other: &LogicalMatrix) -> Result<LogicalMatrix> {
        if self.ncols() != other.rows {
            return Err(Error::Dimension(format!(
                "cannot multiply {}×{} by {}×{}",
                self.rows,
                self.ncols(),
                other.rows,
                other.ncols()
            )));
        }
        Ok(LogicalMatrix {
            rows: self.rows,
            cols: other.cols.iter().map(|&k| self.cols[k - 1]).collect(),
        })
    }

    /// Kronecker product `self ⊗ other`.
    pub fn kron(&self, other: &LogicalMatrix) -> LogicalMatrix {
        let mut cols = Vec::with_capacity(self.ncols() * other.ncols());
        for &a in &self.cols {
            for &b in &other.cols {
                cols.push((a - 1) * other.rows + b);
            }
        }
        LogicalMatrix {
            rows: self.rows * other.rows,
            cols,
        }
    }

    /// `self ⊗ I_k`.
    pub fn kron_identity(&self, k: usize) -> LogicalMatrix {
        if k == 1 {
            return self.clone();
        }
        self.kron(&LogicalMatrix::identity(k))
    }

    /// `I_k ⊗ self`.
    pub fn identity_kron(&self, k: usize) -> LogicalMatrix {
        if k == 1 {
            return self.clone();
        }
        LogicalMatrix::identity(k).kron(self)
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.rows, self.ncols());
        for (j, &i) in self.cols.iter().enumerate() {
            m.set(i - 1, j, 1.0);
        }
        m
    }

    /// Re-encodes a dense matrix; `None` unless every column is a basis vector.
    pub fn from_dense(m: &DenseMatrix) -> Option<LogicalMatrix> {
        let mut cols = Vec::with_capacity(m.cols());
        for j in 0..m.cols() {
            let mut hit = None;
            for i in 0..m.rows() {
                let v = m.get(i, j);
                if v == 1.0 {
                    if hit.is_some() {
                        return None;
                    }
                    hit = Some(i + 1);
                } else if v != 0.0 {
                    return None;
                }
            }
            cols.push(hit?);
        }
        Some(LogicalMatrix { rows: m.rows(), cols })
    }
}

/// Semi-tensor product of two logical matrices, computed on indices.
pub fn stp_logical(m: &LogicalMatrix, p: &LogicalMatrix) -> LogicalMatrix {
    let n = m.ncols();
    let l = lcm(n, p.rows);
    let left = m.kron_identity(l / n);
    let right = p.kron_identity(l / p.rows);
    left.product(&right)
        .expect("inflated factors always have matching inner dimension")
}

impl fmt::Display for LogicalMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "δ_{}[", self.rows)?;
        for (k, c) in self.cols.iter().enumerate() {
            if k > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{c}")?;
        }
        f.write_str("]")
    }
}

impl FromStr for LogicalMatrix {
    type Err = Error;

    /// Parses `δ_s[i_1 … i_t]`; `delta_s[...]` is accepted as an ASCII spelling.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let rest = s
            .strip_prefix("δ_")
            .or_else(|| s.strip_prefix("delta_"))
            .ok_or_else(|| Error::Parse(format!("expected `δ_s[...]`, got `{s}`")))?;
        let open = rest
            .find('[')
            .ok_or_else(|| Error::Parse(format!("missing `[` in `{s}`")))?;
        let body = rest[open + 1..]
            .strip_suffix(']')
            .ok_or_else(|| Error::Parse(format!("missing `]` in `{s}`")))?;
        let rows: usize = rest[..open]
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("bad row count in `{s}`")))?;
        let cols = body
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|_| Error::Parse(format!("bad index `{t}` in `{s}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        LogicalMatrix::new(rows, cols)
    }
}

/// Real matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} entries for a {rows}×{cols} matrix",
                data.len()
            )));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn kron(&self, other: &DenseMatrix) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.rows * other.rows, self.cols * other.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                let a = self.get(i, j);
                if a == 0.0 {
                    continue;
                }
                for k in 0..other.rows {
                    for l in 0..other.cols {
                        out.set(i * other.rows + k, j * other.cols + l, a * other.get(k, l));
                    }
                }
            }
        }
        out
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "cannot multiply {}×{} by {}×{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        Ok(out)
    }

    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Semi-tensor product `M ⋉ P := (M ⊗ I_{l/n})(P ⊗ I_{l/p})`, `l = lcm(n, p)`.
pub fn stp(m: &DenseMatrix, p: &DenseMatrix) -> Result<DenseMatrix> {
    if m.rows == 0 || m.cols == 0 || p.rows == 0 || p.cols == 0 {
        return Err(Error::Dimension(format!(
            "semi-tensor product of {}×{} and {}×{}",
            m.rows, m.cols, p.rows, p.cols
        )));
    }
    let l = lcm(m.cols, p.rows);
    let left = m.kron(&DenseMatrix::identity(l / m.cols));
    let right = p.kron(&DenseMatrix::identity(l / p.rows));
    left.matmul(&right)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Structural {
    Swap(usize, usize),
    PowerReducing(usize),
    ModAdd(usize),
    ModMul(usize),
}

fn memoized(key: Structural, build: impl FnOnce() -> LogicalMatrix) -> LogicalMatrix {
    static CACHE: OnceLock<Mutex<HashMap<Structural, LogicalMatrix>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(m) = cache.lock().expect("structural cache poisoned").get(&key) {
        return m.clone();
    }
    let m = build();
    cache
        .lock()
        .expect("structural cache poisoned")
        .insert(key, m.clone());
    m
}

/// Swap matrix `W_[s,t]`: `W ⋉ x ⋉ y = y ⋉ x` for `x ∈ Δ_s`, `y ∈ Δ_t`.
pub fn swap_matrix(s: usize, t: usize) -> LogicalMatrix {
    assert!(s >= 1 && t >= 1, "swap matrix needs positive sizes");
    memoized(Structural::Swap(s, t), || {
        // Column (i-1)t + j (x = δ_s^i, y = δ_t^j) maps to (j-1)s + i.
        let mut cols = Vec::with_capacity(s * t);
        for i in 1..=s {
            for j in 1..=t {
                cols.push((j - 1) * s + i);
            }
        }
        LogicalMatrix { rows: s * t, cols }
    })
}

/// Power-reducing matrix `P_{r,s} = diag{δ_s^1, …, δ_s^s}`.
pub fn power_reducing_matrix(s: usize) -> LogicalMatrix {
    assert!(s >= 1, "power-reducing matrix needs a positive size");
    memoized(Structural::PowerReducing(s), || LogicalMatrix {
        rows: s * s,
        cols: (1..=s).map(|i| (i - 1) * s + i).collect(),
    })
}

fn check_field(kappa: usize) -> Result<()> {
    if is_prime(kappa) {
        Ok(())
    } else {
        Err(Error::validation("kappa", format!("field size {kappa} is not prime")))
    }
}

/// Structural matrix of `+_κ`: `a +_κ b = F_+ ⋉ a ⋉ b`.
pub fn mod_add_matrix(kappa: usize) -> Result<LogicalMatrix> {
    check_field(kappa)?;
    Ok(memoized(Structural::ModAdd(kappa), || {
        let cols = (0..kappa)
            .flat_map(|a| (0..kappa).map(move |b| value_to_index((a + b) % kappa)))
            .collect();
        LogicalMatrix { rows: kappa, cols }
    }))
}

/// Structural matrix of `×_κ`: `a ×_κ b = F_× ⋉ a ⋉ b`.
pub fn mod_mul_matrix(kappa: usize) -> Result<LogicalMatrix> {
    check_field(kappa)?;
    Ok(memoized(Structural::ModMul(kappa), || {
        let cols = (0..kappa)
            .flat_map(|a| (0..kappa).map(move |b| value_to_index((a * b) % kappa)))
            .collect();
        LogicalMatrix { rows: kappa, cols }
    }))
}
