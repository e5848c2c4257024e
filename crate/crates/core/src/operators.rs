//! Measurement operators.
//!
//! All ensembles follow one column-scaling convention: columns have unit
//! squared norm on average, which for dense random matrices means entries
//! of variance `1/M`. Operators are immutable once built, so a single
//! instance can be shared read-only across worker threads.

use std::fmt;
use std::io::Write;

use rand::seq::index;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::rng::{rng_from, stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    IidGaussian,
    SubsampledDct,
    SubsampledWht,
    QuasiToeplitz,
    SparseBernoulli,
}

/// A real `M x N` matrix known only through its action.
pub trait LinearOperator: Send + Sync + fmt::Debug {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    fn kind(&self) -> OperatorKind;

    fn sign_randomized(&self) -> bool {
        false
    }

    /// `y = H x`. Slices must already have the right lengths.
    fn apply_into(&self, x: &[f64], y: &mut [f64]);

    /// `z = H^T r`. Slices must already have the right lengths.
    fn adjoint_into(&self, r: &[f64], z: &mut [f64]);

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.cols(), x.len())?;
        let mut y = vec![0.0; self.rows()];
        self.apply_into(x, &mut y);
        Ok(y)
    }

    fn adjoint(&self, r: &[f64]) -> Result<Vec<f64>> {
        check_len(self.rows(), r.len())?;
        let mut z = vec![0.0; self.cols()];
        self.adjoint_into(r, &mut z);
        Ok(z)
    }

    /// Materializes the matrix row by row by applying it to unit vectors.
    fn to_dense(&self) -> Vec<Vec<f64>> {
        let (m, n) = (self.rows(), self.cols());
        let mut out = vec![vec![0.0; n]; m];
        let mut e = vec![0.0; n];
        let mut col = vec![0.0; m];
        for i in 0..n {
            e[i] = 1.0;
            self.apply_into(&e, &mut col);
            for (row, v) in out.iter_mut().zip(&col) {
                row[i] = *v;
            }
            e[i] = 0.0;
        }
        out
    }

    /// Damping factor the solvers default to for this ensemble.
    fn default_damping(&self) -> f64 {
        if self.kind() == OperatorKind::QuasiToeplitz {
            0.5
        } else {
            1.0
        }
    }
}

impl<T: LinearOperator + ?Sized> LinearOperator for Box<T> {
    fn rows(&self) -> usize {
        (**self).rows()
    }
    fn cols(&self) -> usize {
        (**self).cols()
    }
    fn kind(&self) -> OperatorKind {
        (**self).kind()
    }
    fn sign_randomized(&self) -> bool {
        (**self).sign_randomized()
    }
    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        (**self).apply_into(x, y)
    }
    fn adjoint_into(&self, r: &[f64], z: &mut [f64]) {
        (**self).adjoint_into(r, z)
    }
}

fn check_dims(m: usize, n: usize) -> Result<()> {
    if m < 1 || n < 2 {
        return Err(Error::Domain(format!("operator needs m >= 1 and n >= 2, got {m}x{n}")));
    }
    Ok(())
}

/// Row-major dense matrix.
#[derive(Clone, Debug)]
pub struct DenseMatrix {
    m: usize,
    n: usize,
    kind: OperatorKind,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn from_rows(rows: &[Vec<f64>], kind: OperatorKind) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        check_dims(m, n)?;
        let mut data = Vec::with_capacity(m * n);
        for row in rows {
            check_len(n, row.len())?;
            data.extend_from_slice(row);
        }
        Ok(Self { m, n, kind, data })
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.data[j * self.n..(j + 1) * self.n]
    }
}

impl LinearOperator for DenseMatrix {
    fn rows(&self) -> usize {
        self.m
    }
    fn cols(&self) -> usize {
        self.n
    }
    fn kind(&self) -> OperatorKind {
        self.kind
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        for (yj, row) in y.iter_mut().zip(self.data.chunks_exact(self.n)) {
            *yj = row.iter().zip(x).map(|(h, x)| h * x).sum();
        }
    }

    fn adjoint_into(&self, r: &[f64], z: &mut [f64]) {
        z.fill(0.0);
        for (rj, row) in r.iter().zip(self.data.chunks_exact(self.n)) {
            for (zi, h) in z.iter_mut().zip(row) {
                *zi += rj * h;
            }
        }
    }
}

/// Dense matrix with i.i.d. `N(0, 1/M)` entries, filled row by row.
pub fn make_iid_gaussian(m: usize, n: usize, seed: u64) -> Result<DenseMatrix> {
    check_dims(m, n)?;
    let mut rng = rng_from(seed, stream::MATRIX);
    let scale = 1.0 / (m as f64).sqrt();
    let data = (0..m * n)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Ok(DenseMatrix { m, n, kind: OperatorKind::IidGaussian, data })
}

fn sample_rows(m: usize, n: usize, seed: u64) -> Result<Vec<usize>> {
    if m > n {
        return Err(Error::Domain(format!("cannot sample {m} distinct rows from a {n}-point transform")));
    }
    let mut rng = rng_from(seed, stream::MATRIX);
    let mut rows = index::sample(&mut rng, n, m).into_vec();
    rows.sort_unstable();
    Ok(rows)
}

/// Entry `(k, i)` of the orthonormal DCT-II matrix of size `n`.
pub fn dct_entry(k: usize, i: usize, n: usize) -> f64 {
    let nf = n as f64;
    let s = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
    s * (std::f64::consts::PI * (i as f64 + 0.5) * k as f64 / nf).cos()
}

/// `m` rows of the orthonormal `n`-point DCT-II, sampled without
/// replacement and scaled by `sqrt(n/m)`. Applied densely.
pub fn make_subsampled_dct(m: usize, n: usize, seed: u64) -> Result<DenseMatrix> {
    check_dims(m, n)?;
    let rows = sample_rows(m, n, seed)?;
    let scale = (n as f64 / m as f64).sqrt();
    let mut data = Vec::with_capacity(m * n);
    for &k in &rows {
        data.extend((0..n).map(|i| scale * dct_entry(k, i, n)));
    }
    Ok(DenseMatrix { m, n, kind: OperatorKind::SubsampledDct, data })
}

/// In-place unnormalized fast Walsh-Hadamard transform, natural ordering.
pub fn fwht(a: &mut [f64]) {
    let n = a.len();
    debug_assert!(n.is_power_of_two());
    let mut h = 1;
    while h < n {
        for block in a.chunks_exact_mut(2 * h) {
            let (lo, hi) = block.split_at_mut(h);
            for (u, v) in lo.iter_mut().zip(hi.iter_mut()) {
                let (s, d) = (*u + *v, *u - *v);
                *u = s;
                *v = d;
            }
        }
        h *= 2;
    }
}

/// `m` rows of the orthonormal `n`-point Walsh-Hadamard matrix (natural
/// order), scaled by `sqrt(n/m)` and applied with the fast transform.
#[derive(Clone, Debug)]
pub struct SubsampledWht {
    n: usize,
    rows: Vec<usize>,
    scale: f64,
}

pub fn make_subsampled_wht(m: usize, n: usize, seed: u64) -> Result<SubsampledWht> {
    check_dims(m, n)?;
    if !n.is_power_of_two() {
        return Err(Error::Domain(format!("Walsh-Hadamard size must be a power of two, got {n}")));
    }
    let rows = sample_rows(m, n, seed)?;
    // orthonormal 1/sqrt(n) times the sqrt(n/m) column rescaling
    let scale = 1.0 / (m as f64).sqrt();
    Ok(SubsampledWht { n, rows, scale })
}

impl LinearOperator for SubsampledWht {
    fn rows(&self) -> usize {
        self.rows.len()
    }
    fn cols(&self) -> usize {
        self.n
    }
    fn kind(&self) -> OperatorKind {
        OperatorKind::SubsampledWht
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        let mut buf = x.to_vec();
        fwht(&mut buf);
        for (yj, &k) in y.iter_mut().zip(&self.rows) {
            *yj = self.scale * buf[k];
        }
    }

    fn adjoint_into(&self, r: &[f64], z: &mut [f64]) {
        z.fill(0.0);
        for (&rj, &k) in r.iter().zip(&self.rows) {
            z[k] = rj;
        }
        fwht(z);
        for zi in z.iter_mut() {
            *zi *= self.scale;
        }
    }
}

/// Partial circulant matrix: row `j` is the first row cyclically shifted
/// right by `j`, and the first row carries `b` Gaussian coefficients in
/// positions `0..b`. Only those `b` numbers are stored.
#[derive(Clone, Debug)]
pub struct QuasiToeplitz {
    m: usize,
    n: usize,
    coeffs: Vec<f64>,
}

impl QuasiToeplitz {
    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }
}

/// Coefficients have variance `n / (b M)`, which is `1/M` for a full row
/// and keeps unit average column norm when `b < n`. Rows are the first
/// `m` shifts.
pub fn make_quasi_toeplitz(m: usize, n: usize, b: usize, seed: u64) -> Result<QuasiToeplitz> {
    check_dims(m, n)?;
    if b < 1 || b > n {
        return Err(Error::Domain(format!("quasi-Toeplitz band {b} must lie in 1..={n}")));
    }
    let mut rng = rng_from(seed, stream::MATRIX);
    let scale = (n as f64 / (b as f64 * m as f64)).sqrt();
    let coeffs = (0..b)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Ok(QuasiToeplitz { m, n, coeffs })
}

impl LinearOperator for QuasiToeplitz {
    fn rows(&self) -> usize {
        self.m
    }
    fn cols(&self) -> usize {
        self.n
    }
    fn kind(&self) -> OperatorKind {
        OperatorKind::QuasiToeplitz
    }

    // H[j][i] = c[(i - j) mod n]
    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        let n = self.n;
        for (j, yj) in y.iter_mut().enumerate() {
            let start = j % n;
            let head = (n - start).min(self.coeffs.len());
            let (c_head, c_tail) = self.coeffs.split_at(head);
            let mut acc: f64 = c_head.iter().zip(&x[start..]).map(|(c, x)| c * x).sum();
            acc += c_tail.iter().zip(x).map(|(c, x)| c * x).sum::<f64>();
            *yj = acc;
        }
    }

    fn adjoint_into(&self, r: &[f64], z: &mut [f64]) {
        let n = self.n;
        z.fill(0.0);
        for (j, &rj) in r.iter().enumerate() {
            let start = j % n;
            let head = (n - start).min(self.coeffs.len());
            let (c_head, c_tail) = self.coeffs.split_at(head);
            for (zi, c) in z[start..].iter_mut().zip(c_head) {
                *zi += c * rj;
            }
            for (zi, c) in z.iter_mut().zip(c_tail) {
                *zi += c * rj;
            }
        }
    }
}

/// Sparse `{0, -1, +1} / sqrt(L)` matrix with exactly `L` nonzeros per
/// column, stored column-compressed.
#[derive(Clone, Debug)]
pub struct SparseBernoulli {
    m: usize,
    n: usize,
    col_weight: usize,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseBernoulli {
    pub fn col_weight(&self) -> usize {
        self.col_weight
    }

    /// Row indices and values of column `i`.
    pub fn column(&self, i: usize) -> (&[usize], &[f64]) {
        let span = i * self.col_weight..(i + 1) * self.col_weight;
        (&self.row_idx[span.clone()], &self.values[span])
    }
}

pub fn make_sparse_bernoulli(m: usize, n: usize, col_weight: usize, seed: u64) -> Result<SparseBernoulli> {
    check_dims(m, n)?;
    if col_weight < 1 || col_weight > m {
        return Err(Error::Domain(format!("column weight {col_weight} must lie in 1..={m}")));
    }
    let mut rng = rng_from(seed, stream::MATRIX);
    let mag = 1.0 / (col_weight as f64).sqrt();
    let mut row_idx = Vec::with_capacity(n * col_weight);
    let mut values = Vec::with_capacity(n * col_weight);
    for _ in 0..n {
        let mut rows = index::sample(&mut rng, m, col_weight).into_vec();
        rows.sort_unstable();
        for r in rows {
            row_idx.push(r);
            values.push(if rng.random::<bool>() { mag } else { -mag });
        }
    }
    Ok(SparseBernoulli { m, n, col_weight, row_idx, values })
}

impl LinearOperator for SparseBernoulli {
    fn rows(&self) -> usize {
        self.m
    }
    fn cols(&self) -> usize {
        self.n
    }
    fn kind(&self) -> OperatorKind {
        OperatorKind::SparseBernoulli
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        y.fill(0.0);
        for (i, &xi) in x.iter().enumerate() {
            let (rows, vals) = self.column(i);
            for (&r, v) in rows.iter().zip(vals) {
                y[r] += v * xi;
            }
        }
    }

    fn adjoint_into(&self, r: &[f64], z: &mut [f64]) {
        for (i, zi) in z.iter_mut().enumerate() {
            let (rows, vals) = self.column(i);
            *zi = rows.iter().zip(vals).map(|(&j, v)| v * r[j]).sum();
        }
    }
}

/// `H diag(s)` for a seeded random sign vector `s`.
#[derive(Debug)]
pub struct SignRandomized {
    inner: Box<dyn LinearOperator>,
    signs: Vec<f64>,
}

impl SignRandomized {
    pub fn with_signs(inner: Box<dyn LinearOperator>, signs: Vec<f64>) -> Result<Self> {
        check_len(inner.cols(), signs.len())?;
        if signs.iter().any(|s| s.abs() != 1.0) {
            return Err(Error::Domain("column signs must be +1 or -1".into()));
        }
        Ok(Self { inner, signs })
    }

    pub fn signs(&self) -> &[f64] {
        &self.signs
    }
}

/// The `n` independent equiprobable signs drawn for `seed`.
pub fn random_signs(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_from(seed, stream::SIGNS);
    (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect()
}

pub fn column_sign_randomize(op: Box<dyn LinearOperator>, seed: u64) -> SignRandomized {
    let signs = random_signs(op.cols(), seed);
    SignRandomized { inner: op, signs }
}

impl LinearOperator for SignRandomized {
    fn rows(&self) -> usize {
        self.inner.rows()
    }
    fn cols(&self) -> usize {
        self.inner.cols()
    }
    fn kind(&self) -> OperatorKind {
        self.inner.kind()
    }
    fn sign_randomized(&self) -> bool {
        true
    }

    fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        let flipped: Vec<f64> = x.iter().zip(&self.signs).map(|(x, s)| x * s).collect();
        self.inner.apply_into(&flipped, y);
    }

    fn adjoint_into(&self, r: &[f64], z: &mut [f64]) {
        self.inner.adjoint_into(r, z);
        for (zi, s) in z.iter_mut().zip(&self.signs) {
            *zi *= s;
        }
    }
}

/// Serializable description of a measurement ensemble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatrixSpec {
    pub kind: OperatorKind,
    /// Wrap the operator in a random column-sign diagonal.
    pub sign_randomize: bool,
    /// Quasi-Toeplitz band as a fraction of `n`.
    pub band_ratio: f64,
    /// Sparse-Bernoulli nonzeros per column as a fraction of `m` (used when
    /// `col_weight` is unset).
    pub sparsity: f64,
    pub col_weight: Option<usize>,
}

impl Default for MatrixSpec {
    fn default() -> Self {
        Self {
            kind: OperatorKind::IidGaussian,
            sign_randomize: false,
            band_ratio: 1.0,
            sparsity: 0.05,
            col_weight: None,
        }
    }
}

impl MatrixSpec {
    pub fn build(&self, m: usize, n: usize, seed: u64) -> Result<Box<dyn LinearOperator>> {
        let op: Box<dyn LinearOperator> = match self.kind {
            OperatorKind::IidGaussian => Box::new(make_iid_gaussian(m, n, seed)?),
            OperatorKind::SubsampledDct => Box::new(make_subsampled_dct(m, n, seed)?),
            OperatorKind::SubsampledWht => Box::new(make_subsampled_wht(m, n, seed)?),
            OperatorKind::QuasiToeplitz => {
                let b = ((self.band_ratio * n as f64).round() as usize).clamp(1, n);
                Box::new(make_quasi_toeplitz(m, n, b, seed)?)
            }
            OperatorKind::SparseBernoulli => {
                let l = self
                    .col_weight
                    .unwrap_or_else(|| ((self.sparsity * m as f64).round() as usize).max(1));
                Box::new(make_sparse_bernoulli(m, n, l, seed)?)
            }
        };
        Ok(if self.sign_randomize {
            Box::new(column_sign_randomize(op, seed))
        } else {
            op
        })
    }
}

/// Writes the materialized matrix, one row per line, space-separated.
pub fn write_dense<W: Write>(op: &dyn LinearOperator, mut out: W) -> Result<()> {
    for row in op.to_dense() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    Ok(())
}
