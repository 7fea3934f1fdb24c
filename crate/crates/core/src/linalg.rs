//! Dense and banded linear algebra kernels.
//!
//! Everything here works on row-major `f64` storage. The factorizations are
//! immutable once built, so a single factorization may be shared across
//! threads for concurrent solves.

use std::fmt;

use thiserror::Error;

/// Default relative threshold for declaring a pivot singular.
pub const DEFAULT_PIVOT_THRESHOLD: f64 = 1e-14;

/// Threshold on `|1 + wᵀA⁻¹u|` below which a rank-one update is rejected.
pub const RANK_ONE_THRESHOLD: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is singular to working precision (pivot {pivot:e} at column {column})")]
    SingularMatrix { column: usize, pivot: f64 },
    #[error("rank-one update is singular (denominator {denominator:e})")]
    SingularUpdate { denominator: f64 },
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix contains non-finite entries")]
    NonFinite,
}

/// A dense row-major matrix.
#[derive(Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major data.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if data.len() != rows * cols {
            return Err(LinalgError::DimensionMismatch {
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows. Panics if the rows are ragged.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(nrows * ncols);
        for r in rows {
            let r = r.as_ref();
            assert_eq!(r.len(), ncols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: nrows,
            cols: ncols,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    pub fn matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.cols, other.rows);
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                for (o, b) in out.row_mut(i).iter_mut().zip(orow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    /// `self += s * other`
    pub fn add_scaled(&mut self, s: f64, other: &DenseMatrix) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    /// `self += u wᵀ`
    pub fn add_outer(&mut self, u: &[f64], w: &[f64]) {
        assert_eq!(u.len(), self.rows);
        assert_eq!(w.len(), self.cols);
        for (i, ui) in u.iter().enumerate() {
            if *ui == 0.0 {
                continue;
            }
            for (a, wj) in self.row_mut(i).iter_mut().zip(w) {
                *a += ui * wj;
            }
        }
    }

    /// Largest `|i - j|` over the nonzero entries.
    pub fn bandwidth(&self) -> usize {
        let mut bw = 0;
        for i in 0..self.rows {
            for j in 0..self.cols {
                if self[(i, j)] != 0.0 {
                    bw = bw.max(i.abs_diff(j));
                }
            }
        }
        bw
    }
}

impl std::ops::Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DenseMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `offset + a·b` evaluated as if in twice the working precision
/// (error-free products via FMA and compensated summation), then rounded.
pub fn dot_accurate(a: &[f64], b: &[f64], offset: f64) -> f64 {
    let mut sum = offset;
    let mut err = 0.0;
    for (x, y) in a.iter().zip(b) {
        let p = x * y;
        let ep = x.mul_add(*y, -p);
        let t = sum + p;
        let z = t - sum;
        err += (sum - (t - z)) + (p - z) + ep;
        sum = t;
    }
    sum + err
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// `a - b`
pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// `y += s * x`
pub fn axpy(s: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += s * xi;
    }
}

/// Anything that can solve `A x = b` for a fixed, already-factorized `A`.
pub trait LinearSolve {
    fn dim(&self) -> usize;
    fn solve(&self, b: &[f64]) -> Result<Vec<f64>, LinalgError>;
    /// Solves `Aᵀ x = b`.
    fn solve_transpose(&self, b: &[f64]) -> Result<Vec<f64>, LinalgError>;
}

/// LU factorization `PA = LU` with partial (row) pivoting.
#[derive(Clone, Debug)]
pub struct LuFactorization {
    factors: DenseMatrix,
    perm: Vec<usize>,
    singular: Option<(usize, f64)>,
}

impl LuFactorization {
    pub fn is_singular(&self) -> bool {
        self.singular.is_some()
    }

    pub fn factors(&self) -> &DenseMatrix {
        &self.factors
    }

    /// Row permutation: row `i` of `PA` is row `perm[i]` of `A`.
    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    fn check(&self, b: &[f64]) -> Result<(), LinalgError> {
        if let Some((column, pivot)) = self.singular {
            return Err(LinalgError::SingularMatrix { column, pivot });
        }
        if b.len() != self.factors.rows {
            return Err(LinalgError::DimensionMismatch {
                expected: self.factors.rows,
                found: b.len(),
            });
        }
        Ok(())
    }
}

/// Factorizes `a` with the default pivot threshold `1e-14 · max|A|`.
pub fn lu_factor(a: &DenseMatrix) -> Result<LuFactorization, LinalgError> {
    lu_factor_with_threshold(a, DEFAULT_PIVOT_THRESHOLD)
}

/// Factorizes `a`; a pivot below `threshold · max|A|` marks the result singular.
///
/// A singular factorization is still returned so that callers can inspect
/// it; solving with it yields [`LinalgError::SingularMatrix`].
pub fn lu_factor_with_threshold(
    a: &DenseMatrix,
    threshold: f64,
) -> Result<LuFactorization, LinalgError> {
    if !a.is_square() {
        return Err(LinalgError::NotSquare {
            rows: a.rows,
            cols: a.cols,
        });
    }
    if !a.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    let n = a.rows;
    let tol = threshold * a.max_abs();
    let mut lu = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut singular = None;

    for k in 0..n {
        let mut p = k;
        let mut pmax = lu[(k, k)].abs();
        for i in k + 1..n {
            let v = lu[(i, k)].abs();
            if v > pmax {
                pmax = v;
                p = i;
            }
        }
        if pmax <= tol || pmax == 0.0 {
            if singular.is_none() {
                singular = Some((k, pmax));
            }
            continue;
        }
        if p != k {
            perm.swap(p, k);
            for j in 0..n {
                lu.data.swap(k * n + j, p * n + j);
            }
        }
        let pivot = lu[(k, k)];
        for i in k + 1..n {
            let m = lu[(i, k)] / pivot;
            lu[(i, k)] = m;
            if m == 0.0 {
                continue;
            }
            for j in k + 1..n {
                let ukj = lu[(k, j)];
                lu[(i, j)] -= m * ukj;
            }
        }
    }

    Ok(LuFactorization {
        factors: lu,
        perm,
        singular,
    })
}

impl LinearSolve for LuFactorization {
    fn dim(&self) -> usize {
        self.factors.rows
    }

    fn solve(&self, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        self.check(b)?;
        let n = self.factors.rows;
        let lu = &self.factors;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s -= lu[(i, j)] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..n {
                s -= lu[(i, j)] * x[j];
            }
            x[i] = s / lu[(i, i)];
        }
        Ok(x)
    }

    fn solve_transpose(&self, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        self.check(b)?;
        // Aᵀ = Uᵀ Lᵀ P, so solve Uᵀ y = b, Lᵀ v = y, x = Pᵀ v.
        let n = self.factors.rows;
        let lu = &self.factors;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for j in 0..i {
                s -= lu[(j, i)] * y[j];
            }
            y[i] = s / lu[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for j in i + 1..n {
                s -= lu[(j, i)] * y[j];
            }
            y[i] = s;
        }
        let mut x = vec![0.0; n];
        for (i, &p) in self.perm.iter().enumerate() {
            x[p] = y[i];
        }
        Ok(x)
    }
}

/// Banded LU with partial pivoting for matrices with `kl` sub- and `ku`
/// super-diagonals. Row interchanges widen the upper band to `kl + ku`.
#[derive(Clone, Debug)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    /// Upper bandwidth of `U` after pivoting.
    ku_fill: usize,
    /// Row `i` stores columns `i - kl ..= i + ku_fill` at offsets `0..width`.
    band: Vec<f64>,
    /// Multipliers of `L`: `lower[k * kl + (i - k - 1)]` for `i` in `k+1..=k+kl`.
    lower: Vec<f64>,
    pivots: Vec<usize>,
    singular: Option<(usize, f64)>,
}

impl BandedLu {
    fn width(&self) -> usize {
        self.kl + self.ku_fill + 1
    }

    /// Offset of column `j` within row `i`'s band slot, if in range.
    #[inline]
    fn slot(&self, i: usize, j: usize) -> Option<usize> {
        let off = j as isize - i as isize + self.kl as isize;
        if off < 0 || off as usize >= self.width() {
            None
        } else {
            Some(i * self.width() + off as usize)
        }
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        self.slot(i, j).map_or(0.0, |s| self.band[s])
    }

    pub fn is_singular(&self) -> bool {
        self.singular.is_some()
    }

    fn check(&self, b: &[f64]) -> Result<(), LinalgError> {
        if let Some((column, pivot)) = self.singular {
            return Err(LinalgError::SingularMatrix { column, pivot });
        }
        if b.len() != self.n {
            return Err(LinalgError::DimensionMismatch {
                expected: self.n,
                found: b.len(),
            });
        }
        Ok(())
    }
}

/// Factorizes a matrix whose nonzeros satisfy `|i - j| <= bandwidth`.
///
/// Entries outside the declared band are ignored, so callers must pass the
/// true bandwidth (see [`DenseMatrix::bandwidth`]).
pub fn banded_lu_factor(a: &DenseMatrix, bandwidth: usize) -> Result<BandedLu, LinalgError> {
    banded_lu_factor_with_threshold(a, bandwidth, DEFAULT_PIVOT_THRESHOLD)
}

pub fn banded_lu_factor_with_threshold(
    a: &DenseMatrix,
    bandwidth: usize,
    threshold: f64,
) -> Result<BandedLu, LinalgError> {
    if !a.is_square() {
        return Err(LinalgError::NotSquare {
            rows: a.rows,
            cols: a.cols,
        });
    }
    if !a.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    let n = a.rows;
    let kl = bandwidth;
    let mut f = BandedLu {
        n,
        kl,
        ku_fill: 2 * bandwidth,
        band: Vec::new(),
        lower: vec![0.0; n * kl.max(1)],
        pivots: vec![0; n],
        singular: None,
    };
    let width = f.width();
    f.band = vec![0.0; n * width];
    for i in 0..n {
        let lo = i.saturating_sub(kl);
        let hi = (i + bandwidth).min(n - 1);
        for j in lo..=hi {
            let s = f.slot(i, j).expect("in band");
            f.band[s] = a[(i, j)];
        }
    }
    let tol = threshold * a.max_abs();

    // The band slot of a row is keyed by its current position, so row swaps
    // move entries between slots column by column.
    for k in 0..n {
        let last = (k + kl).min(n - 1);
        let mut p = k;
        let mut pmax = f.get(k, k).abs();
        for i in k + 1..=last {
            let v = f.get(i, k).abs();
            if v > pmax {
                pmax = v;
                p = i;
            }
        }
        f.pivots[k] = p;
        if pmax <= tol || pmax == 0.0 {
            if f.singular.is_none() {
                f.singular = Some((k, pmax));
            }
            continue;
        }
        let jmax = (k + f.ku_fill).min(n - 1);
        if p != k {
            for j in k..=jmax {
                let sk = f.slot(k, j);
                let sp = f.slot(p, j);
                let vk = sk.map_or(0.0, |s| f.band[s]);
                let vp = sp.map_or(0.0, |s| f.band[s]);
                if let Some(s) = sk {
                    f.band[s] = vp;
                }
                if let Some(s) = sp {
                    f.band[s] = vk;
                }
            }
        }
        let pivot = f.get(k, k);
        for i in k + 1..=last {
            let si = f.slot(i, k).expect("in band");
            let m = f.band[si] / pivot;
            f.band[si] = 0.0;
            f.lower[k * kl + (i - k - 1)] = m;
            if m == 0.0 {
                continue;
            }
            for j in k + 1..=jmax {
                let ukj = f.get(k, j);
                if ukj == 0.0 {
                    continue;
                }
                let s = f.slot(i, j).expect("fill stays in band");
                f.band[s] -= m * ukj;
            }
        }
    }
    Ok(f)
}

impl LinearSolve for BandedLu {
    fn dim(&self) -> usize {
        self.n
    }

    fn solve(&self, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        self.check(b)?;
        let n = self.n;
        let kl = self.kl;
        let mut x = b.to_vec();
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                x.swap(k, p);
            }
            let xk = x[k];
            if xk == 0.0 {
                continue;
            }
            let last = (k + kl).min(n - 1);
            for i in k + 1..=last {
                x[i] -= self.lower[k * kl + (i - k - 1)] * xk;
            }
        }
        for i in (0..n).rev() {
            let jmax = (i + self.ku_fill).min(n - 1);
            let mut s = x[i];
            for j in i + 1..=jmax {
                s -= self.get(i, j) * x[j];
            }
            x[i] = s / self.get(i, i);
        }
        Ok(x)
    }

    fn solve_transpose(&self, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        self.check(b)?;
        let n = self.n;
        let kl = self.kl;
        // Uᵀ y = b
        let mut y = b.to_vec();
        for i in 0..n {
            let jmin = i.saturating_sub(self.ku_fill);
            let mut s = y[i];
            for j in jmin..i {
                s -= self.get(j, i) * y[j];
            }
            y[i] = s / self.get(i, i);
        }
        // Undo the elimination steps in reverse order.
        for k in (0..n).rev() {
            let last = (k + kl).min(n - 1);
            let mut s = y[k];
            for i in k + 1..=last {
                s -= self.lower[k * kl + (i - k - 1)] * y[i];
            }
            y[k] = s;
            let p = self.pivots[k];
            if p != k {
                y.swap(k, p);
            }
        }
        Ok(y)
    }
}

/// Either a dense or a banded factorization, chosen by declared bandwidth.
#[derive(Clone, Debug)]
pub enum Factorization {
    Dense(LuFactorization),
    Banded(BandedLu),
}

impl Factorization {
    /// Uses the banded path when a bandwidth is declared and it is narrow
    /// enough to pay off, otherwise falls back to dense LU.
    pub fn new(a: &DenseMatrix, bandwidth: Option<usize>) -> Result<Self, LinalgError> {
        match bandwidth {
            Some(bw) if 4 * bw + 1 < a.rows() => Ok(Self::Banded(banded_lu_factor(a, bw)?)),
            _ => Ok(Self::Dense(lu_factor(a)?)),
        }
    }

    pub fn is_singular(&self) -> bool {
        match self {
            Self::Dense(f) => f.is_singular(),
            Self::Banded(f) => f.is_singular(),
        }
    }
}

impl LinearSolve for Factorization {
    fn dim(&self) -> usize {
        match self {
            Self::Dense(f) => f.dim(),
            Self::Banded(f) => f.dim(),
        }
    }

    fn solve(&self, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        match self {
            Self::Dense(f) => f.solve(b),
            Self::Banded(f) => f.solve(b),
        }
    }

    fn solve_transpose(&self, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        match self {
            Self::Dense(f) => f.solve_transpose(b),
            Self::Banded(f) => f.solve_transpose(b),
        }
    }
}

/// Solves `(A + u wᵀ) x = b` by Sherman–Morrison, given a factorization of `A`.
pub fn solve_rank_one_update<F: LinearSolve + ?Sized>(
    fac: &F,
    u: &[f64],
    w: &[f64],
    b: &[f64],
) -> Result<Vec<f64>, LinalgError> {
    let n = fac.dim();
    for v in [u, w] {
        if v.len() != n {
            return Err(LinalgError::DimensionMismatch {
                expected: n,
                found: v.len(),
            });
        }
    }
    let y = fac.solve(b)?;
    if u.iter().all(|&v| v == 0.0) || w.iter().all(|&v| v == 0.0) {
        return Ok(y);
    }
    let z = fac.solve(u)?;
    let denominator = 1.0 + dot(w, &z);
    if !denominator.is_finite() || denominator.abs() < RANK_ONE_THRESHOLD {
        return Err(LinalgError::SingularUpdate { denominator });
    }
    let coef = dot(w, &y) / denominator;
    Ok(y.iter().zip(&z).map(|(yi, zi)| yi - coef * zi).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize, diag: f64) -> DenseMatrix {
        let mut a = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] = rng.gen_range(-1.0..1.0);
            }
            a[(i, i)] += diag;
        }
        a
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn accurate_dot_survives_cancellation() {
        let a = [1e16, 1.0, -1e16, 3.0];
        let b = [1.0, 1.0, 1.0, 1.0];
        assert_eq!(dot(&a, &b), 3.0);
        assert_eq!(dot_accurate(&a, &b, 0.0), 4.0);
        let x = 1.0 + f64::EPSILON;
        // x² − (1 + 2ε) = ε² exactly
        assert_eq!(
            dot_accurate(&[x], &[x], -(1.0 + 2.0 * f64::EPSILON)),
            f64::EPSILON * f64::EPSILON
        );
    }

    #[test]
    fn identity_solve() {
        let f = lu_factor(&DenseMatrix::identity(3)).unwrap();
        assert_eq!(f.solve(&[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn diagonal_solve() {
        let a = DenseMatrix::from_rows(&[[2.0, 0.0], [0.0, 4.0]]);
        let x = lu_factor(&a).unwrap().solve(&[2.0, 8.0]).unwrap();
        assert_eq!(x, vec![1.0, 2.0]);
    }

    #[test]
    fn random_residual_is_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_matrix(&mut rng, 10, 4.0);
        let b = random_vec(&mut rng, 10);
        let x = lu_factor(&a).unwrap().solve(&b).unwrap();
        let r = sub(&a.matvec(&x), &b);
        assert!(norm2(&r) <= 1e-10 * norm2(&b));
    }

    #[test]
    fn pivoting_handles_zero_leading_entry() {
        let a = DenseMatrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]);
        let x = lu_factor(&a).unwrap().solve(&[3.0, 5.0]).unwrap();
        assert_eq!(x, vec![5.0, 3.0]);
    }

    #[test]
    fn singular_matrix_is_flagged() {
        let a = DenseMatrix::from_rows(&[[1.0, 2.0], [2.0, 4.0]]);
        let f = lu_factor(&a).unwrap();
        assert!(f.is_singular());
        assert!(matches!(
            f.solve(&[1.0, 1.0]),
            Err(LinalgError::SingularMatrix { .. })
        ));
    }

    #[test]
    fn transpose_solve_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_matrix(&mut rng, 6, 3.0);
        let b = random_vec(&mut rng, 6);
        let x = lu_factor(&a).unwrap().solve_transpose(&b).unwrap();
        let r = sub(&a.transpose().matvec(&x), &b);
        assert!(norm2(&r) < 1e-12);
    }

    #[test]
    fn rank_one_zero_update_is_plain_solve() {
        let a = DenseMatrix::from_rows(&[[2.0, 1.0], [1.0, 3.0]]);
        let f = lu_factor(&a).unwrap();
        let b = [1.0, 2.0];
        let plain = f.solve(&b).unwrap();
        let upd = solve_rank_one_update(&f, &[0.0, 0.0], &[1.0, 1.0], &b).unwrap();
        assert_eq!(plain, upd);
    }

    #[test]
    fn rank_one_matches_dense_assembly() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_matrix(&mut rng, 4, 3.0);
        let u = random_vec(&mut rng, 4);
        let w = random_vec(&mut rng, 4);
        let b = random_vec(&mut rng, 4);
        let x = solve_rank_one_update(&lu_factor(&a).unwrap(), &u, &w, &b).unwrap();
        let mut full = a.clone();
        full.add_outer(&u, &w);
        let xd = lu_factor(&full).unwrap().solve(&b).unwrap();
        assert!(norm2(&sub(&x, &xd)) <= 1e-10 * norm2(&xd));
    }

    #[test]
    fn rank_one_singular_denominator() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_matrix(&mut rng, 4, 3.0);
        let f = lu_factor(&a).unwrap();
        let u = random_vec(&mut rng, 4);
        // w = -e / (eᵀA⁻¹u) gives wᵀA⁻¹u = -1.
        let y = f.solve(&u).unwrap();
        let w = vec![-1.0 / y[0], 0.0, 0.0, 0.0];
        let err = solve_rank_one_update(&f, &u, &w, &[1.0; 4]).unwrap_err();
        assert!(matches!(err, LinalgError::SingularUpdate { .. }));
    }

    fn random_banded(rng: &mut ChaCha8Rng, n: usize, bw: usize) -> DenseMatrix {
        let mut a = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in i.saturating_sub(bw)..=(i + bw).min(n - 1) {
                a[(i, j)] = rng.gen_range(-1.0..1.0);
            }
        }
        a
    }

    #[test]
    fn banded_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for &(n, bw) in &[(12, 1), (20, 3), (31, 2), (9, 4)] {
            let a = random_banded(&mut rng, n, bw);
            let b = random_vec(&mut rng, n);
            let xd = lu_factor(&a).unwrap().solve(&b).unwrap();
            let fb = banded_lu_factor(&a, bw).unwrap();
            let xb = fb.solve(&b).unwrap();
            assert!(
                norm2(&sub(&xb, &xd)) <= 1e-9 * (1.0 + norm2(&xd)),
                "n={n} bw={bw}"
            );
            let xt = fb.solve_transpose(&b).unwrap();
            let r = sub(&a.transpose().matvec(&xt), &b);
            assert!(norm2(&r) <= 1e-9 * (1.0 + norm2(&xt)));
        }
    }

    #[test]
    fn banded_needs_pivoting() {
        // Zero diagonal forces row swaps inside the band.
        let mut a = DenseMatrix::zeros(6, 6);
        for i in 0..6 {
            if i + 1 < 6 {
                a[(i, i + 1)] = 1.0;
                a[(i + 1, i)] = 2.0;
            }
        }
        let b = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let xb = banded_lu_factor(&a, 1).unwrap().solve(&b).unwrap();
        let r = sub(&a.matvec(&xb), &b);
        assert!(norm2(&r) < 1e-12);
    }

    #[test]
    fn bandwidth_detection() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(random_banded(&mut rng, 10, 3).bandwidth(), 3);
        assert_eq!(DenseMatrix::identity(4).bandwidth(), 0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn lu_solves_diagonally_dominant(seed in any::<u64>(), n in 1usize..12) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let a = random_matrix(&mut rng, n, n as f64 + 1.0);
                let b = random_vec(&mut rng, n);
                let x = lu_factor(&a).unwrap().solve(&b).unwrap();
                let r = sub(&a.matvec(&x), &b);
                prop_assert!(norm2(&r) <= 1e-10 * norm2(&b).max(1e-300));
            }

            #[test]
            fn sherman_morrison_agrees(seed in any::<u64>(), n in 2usize..10) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let a = random_matrix(&mut rng, n, n as f64 + 1.0);
                let u = random_vec(&mut rng, n);
                let w = random_vec(&mut rng, n);
                let b = random_vec(&mut rng, n);
                let f = lu_factor(&a).unwrap();
                let z = f.solve(&u).unwrap();
                let denom = 1.0 + dot(&w, &z);
                prop_assume!(denom.abs() >= 1e-6);
                let x = solve_rank_one_update(&f, &u, &w, &b).unwrap();
                let mut full = a.clone();
                full.add_outer(&u, &w);
                let xd = lu_factor(&full).unwrap().solve(&b).unwrap();
                prop_assert!(norm2(&sub(&x, &xd)) <= 1e-10 * norm2(&xd).max(1e-300));
            }
        }
    }
}
