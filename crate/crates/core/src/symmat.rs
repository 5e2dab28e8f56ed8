//! Dense real symmetric matrices with packed upper-triangle storage.
//!
//! Only one slot exists per unordered index pair, so `get(i, j) == get(j, i)`
//! holds by construction. Indices are zero-based throughout the library;
//! one-based indices only appear at the wire and configuration boundaries.

use std::fmt;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Number of entries in the upper triangle (diagonal included) of an `n x n` matrix.
pub const fn upper_len(n: usize) -> usize {
    n * (n + 1) / 2
}

#[inline]
fn offset(n: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * (2 * n - i + 1) / 2 + (j - i)
}

#[derive(Clone, PartialEq)]
pub struct SymMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        assert!(n >= 1, "matrix dimension must be at least 1");
        Self {
            n,
            data: vec![0.0; upper_len(n)],
        }
    }

    /// Matrix with every entry equal to `value` (the `T * 1` threshold layout).
    pub fn filled(n: usize, value: f64) -> Self {
        assert!(value.is_finite());
        let mut m = Self::zeros(n);
        m.data.iter_mut().for_each(|x| *x = value);
        m
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diag(&vec![1.0; n])
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m.set(i, i, d);
        }
        m
    }

    /// Builds from the packed upper triangle, row-major.
    pub fn from_upper(n: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyMatrix);
        }
        if data.len() != upper_len(n) {
            return Err(Error::DimensionMismatch {
                expected: upper_len(n),
                found: data.len(),
            });
        }
        let m = Self { n, data };
        if let Some((i, j, _)) = m.iter_upper().find(|(_, _, v)| !v.is_finite()) {
            return Err(Error::NonFinite { i, j });
        }
        Ok(m)
    }

    /// Builds from full rows; the input must be exactly symmetric.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::EmptyMatrix);
        }
        for row in rows {
            if row.as_ref().len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: row.as_ref().len(),
                });
            }
        }
        let mut data = Vec::with_capacity(upper_len(n));
        for i in 0..n {
            for j in i..n {
                let (a, b) = (rows[i].as_ref()[j], rows[j].as_ref()[i]);
                if a != b {
                    return Err(Error::NotSymmetric { i, j });
                }
                data.push(a);
            }
        }
        Self::from_upper(n, data)
    }

    /// Converts a dense matrix, averaging it with its transpose.
    pub fn from_dense_symmetrized(m: &DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        let n = m.nrows();
        let mut data = Vec::with_capacity(upper_len(n));
        for i in 0..n {
            for j in i..n {
                data.push(0.5 * (m[(i, j)] + m[(j, i)]));
            }
        }
        Self::from_upper(n, data)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    /// Packed upper triangle, row-major.
    pub fn as_upper(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        assert!(i < self.n && j < self.n, "index out of range");
        self.data[offset(self.n, i, j)]
    }

    /// Sets the entry at the unordered pair `{i, j}`.
    ///
    /// Panics on a non-finite value or an out-of-range index.
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        assert!(i < self.n && j < self.n, "index out of range");
        assert!(value.is_finite(), "non-finite entry at ({i}, {j})");
        self.data[offset(self.n, i, j)] = value;
    }

    /// Upper-triangle entries `(i, j, value)` with `i <= j`, row-major.
    pub fn iter_upper(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let n = self.n;
        (0..n)
            .flat_map(move |i| (i..n).map(move |j| (i, j)))
            .zip(self.data.iter().copied())
            .map(|((i, j), v)| (i, j, v))
    }

    fn check_dim(&self, other: &Self) -> Result<()> {
        if self.n != other.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: other.n,
            });
        }
        Ok(())
    }

    fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_dim(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Self::from_upper(self.n, data)
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let data: Vec<f64> = self.data.iter().map(|&a| f(a)).collect();
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Self { n: self.n, data }
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.iter_upper()
            .map(|(i, j, v)| if i == j { v * v } else { 2.0 * v * v })
            .sum::<f64>()
            .sqrt()
    }

    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn elem_abs(&self) -> Self {
        self.map(f64::abs)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> Self {
        assert!(c.is_finite());
        self.map(|a| c * a)
    }

    /// Full row sums `sum_j A[i][j]` (the product `A * 1`).
    pub fn row_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.n];
        for (i, j, v) in self.iter_upper() {
            sums[i] += v;
            if i != j {
                sums[j] += v;
            }
        }
        sums
    }

    pub fn add_diag(&self, v: &[f64]) -> Result<Self> {
        if v.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: v.len(),
            });
        }
        let mut out = self.clone();
        for (i, &d) in v.iter().enumerate() {
            if !d.is_finite() {
                return Err(Error::NonFinite { i, j: i });
            }
            out.set(i, i, self.get(i, i) + d);
        }
        Ok(out)
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Diagonal dominance with nonnegative diagonal: `A[i][i] >= sum_{j != i} |A[i][j]|`
    /// for every row, compared exactly.
    pub fn is_dd(&self) -> bool {
        let mut off = vec![0.0; self.n];
        for (i, j, v) in self.iter_upper() {
            if i != j {
                off[i] += v.abs();
                off[j] += v.abs();
            }
        }
        (0..self.n).all(|i| self.get(i, i) >= off[i])
    }

    /// Smallest eigenvalue, from nalgebra's symmetric QR eigen-solver.
    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.to_dense())
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// `1e-9 * max(1, ||A||_F)`.
    pub fn default_psd_tol(&self) -> f64 {
        1e-9 * self.frobenius_norm().max(1.0)
    }

    /// True iff the smallest eigenvalue is at least `-tol`.
    ///
    /// Uses a full symmetric eigendecomposition; meant for verification,
    /// not for per-step use.
    pub fn is_psd(&self, tol: f64) -> bool {
        debug_assert!(tol >= 0.0);
        self.min_eigenvalue() >= -tol
    }

    /// Text form: `n` on the first line, then the packed upper triangle.
    pub fn to_text(&self) -> String {
        let mut s = format!("{}\n", self.n);
        let vals: Vec<String> = self.data.iter().map(|v| format!("{v:e}")).collect();
        s.push_str(&vals.join(" "));
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut tokens = text.split_whitespace();
        let n: usize = tokens
            .next()
            .ok_or_else(|| Error::Parse("missing dimension".into()))?
            .parse()
            .map_err(|e| Error::Parse(format!("bad dimension: {e}")))?;
        let data = tokens
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("bad value {t:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_upper(n, data)
    }
}

impl fmt::Debug for SymMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: Vec<Vec<f64>> = (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j)).collect())
            .collect();
        f.debug_struct("SymMatrix")
            .field("n", &self.n)
            .field("rows", &rows)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m(rows: &[&[f64]]) -> SymMatrix {
        SymMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn offsets_cover_upper_triangle_once() {
        for n in 1..7 {
            let mut seen = vec![false; upper_len(n)];
            for i in 0..n {
                for j in i..n {
                    let o = offset(n, i, j);
                    assert!(!seen[o]);
                    seen[o] = true;
                    assert_eq!(o, offset(n, j, i));
                }
            }
            assert!(seen.iter().all(|&s| s));
        }
    }

    #[test]
    fn dd_examples() {
        assert!(m(&[&[2.0, 1.0], &[1.0, 2.0]]).is_dd());
        assert!(!m(&[&[1.0, 2.0], &[2.0, 1.0]]).is_dd());
        assert!(m(&[&[1.0, 1.0], &[1.0, 1.0]]).is_dd());
        assert!(!m(&[&[-1.0, 0.0], &[0.0, 1.0]]).is_dd());
    }

    #[test]
    fn psd_examples() {
        assert!(SymMatrix::identity(3).is_psd(0.0));
        // eigenvalues 3 and -1
        let a = m(&[&[1.0, 2.0], &[2.0, 1.0]]);
        assert!(!a.is_psd(1e-9));
        assert_abs_diff_eq!(a.min_eigenvalue(), -1.0, epsilon = 1e-12);
        assert!(SymMatrix::zeros(2).is_psd(0.0));
    }

    #[test]
    fn elementary_ops() {
        assert_abs_diff_eq!(m(&[&[1.5, 0.5], &[0.5, 1.2]]).trace(), 2.7, epsilon = 1e-15);
        assert_eq!(m(&[&[0.5, 0.5], &[0.5, 0.5]]).frobenius_norm(), 1.0);
        assert_eq!(m(&[&[0.0, 0.5], &[0.5, 0.0]]).row_sums(), vec![0.5, 0.5]);
        let a = m(&[&[1.0, -2.0], &[-2.0, 3.0]]);
        assert_eq!(a.elem_abs(), m(&[&[1.0, 2.0], &[2.0, 3.0]]));
        assert_eq!(
            a.add_diag(&[1.0, 2.0]).unwrap(),
            m(&[&[2.0, -2.0], &[-2.0, 5.0]])
        );
        assert_eq!(a.sub(&a).unwrap(), SymMatrix::zeros(2));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let a = SymMatrix::zeros(2);
        let b = SymMatrix::zeros(3);
        assert!(matches!(a.sub(&b), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(a.hadamard(&b), Err(Error::DimensionMismatch { .. })));
        assert!(a.add_diag(&[1.0]).is_err());
    }

    #[test]
    fn constructors_reject_bad_input() {
        assert!(matches!(
            SymMatrix::from_upper(2, vec![1.0, f64::NAN, 1.0]),
            Err(Error::NonFinite { i: 0, j: 1 })
        ));
        assert!(matches!(
            SymMatrix::from_rows(&[[1.0, 2.0], [3.0, 1.0]]),
            Err(Error::NotSymmetric { .. })
        ));
        assert!(SymMatrix::from_upper(0, vec![]).is_err());
        assert!(SymMatrix::from_upper(2, vec![1.0]).is_err());
    }

    #[test]
    fn text_round_trip_is_exact() {
        let a = m(&[&[0.1, 1.0 / 3.0], &[1.0 / 3.0, 1e-300]]);
        let text = a.to_text();
        assert!(text.starts_with("2\n"));
        assert_eq!(SymMatrix::from_text(&text).unwrap(), a);
    }

    fn random_dd(rng: &mut ChaCha8Rng, n: usize) -> SymMatrix {
        let mut a = SymMatrix::zeros(n);
        for i in 0..n {
            for j in i + 1..n {
                a.set(i, j, rng.gen_range(-1.0..1.0));
            }
        }
        for i in 0..n {
            let off: f64 = (0..n).filter(|&j| j != i).map(|j| a.get(i, j).abs()).sum();
            let slack = if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(0.0..0.5) };
            a.set(i, i, off + slack);
        }
        a
    }

    #[test]
    fn dd_matrices_are_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let n = rng.gen_range(1..9);
            let a = random_dd(&mut rng, n);
            assert!(a.is_dd());
            assert!(a.is_psd(1e-9), "{a:?}");
        }
    }

    proptest! {
        #[test]
        fn dd_is_scale_invariant(seed in any::<u64>(), c in 1e-6f64..1e6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(1..7);
            let mut a = SymMatrix::zeros(n);
            for i in 0..n {
                for j in i..n {
                    a.set(i, j, rng.gen_range(-2.0..2.0));
                }
            }
            // Exact DD comparisons can flip under rounding only at equality;
            // use power-of-two scales so scaling is exact.
            let c = 2f64.powi(c.log2().round() as i32);
            prop_assert_eq!(a.is_dd(), a.scale(c).is_dd());
            let d = random_dd(&mut rng, n);
            prop_assert!(d.scale(c).is_dd());
        }

        #[test]
        fn masking_does_not_increase_norm(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(1..7);
            let mut a = SymMatrix::zeros(n);
            let mut w = SymMatrix::zeros(n);
            for i in 0..n {
                for j in i..n {
                    a.set(i, j, rng.gen_range(-5.0..5.0));
                    w.set(i, j, if rng.gen_bool(0.5) { 1.0 } else { 0.0 });
                }
            }
            prop_assert!(w.hadamard(&a).unwrap().frobenius_norm() <= a.frobenius_norm());
        }

        #[test]
        fn text_round_trip(vals in proptest::collection::vec(-1e6f64..1e6, 10)) {
            let a = SymMatrix::from_upper(4, vals).unwrap();
            prop_assert_eq!(SymMatrix::from_text(&a.to_text()).unwrap(), a);
        }
    }
}
