use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

// Tile shape for the batched solve.
const TILE_ROWS: usize = 4;
const TILE_COLS: usize = 8;

/// Number of ×10 jitter escalations attempted before giving up.
pub const MAX_JITTER_RETRIES: usize = 3;

/// Packed lower-triangular Cholesky factor. Row `i` occupies
/// `entries[i(i+1)/2 ..= i(i+1)/2 + i]`, so appending a row never moves
/// existing entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerTriangular {
    n: usize,
    entries: Vec<f64>,
}

#[inline]
fn row_start(i: usize) -> usize {
    i * (i + 1) / 2
}

impl LowerTriangular {
    pub fn empty() -> Self {
        Self {
            n: 0,
            entries: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(j <= i && i < self.n);
        self.entries[row_start(i) + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[row_start(i)..row_start(i) + i + 1]
    }

    /// Plain Cholesky of `k + jitter·I`; fails on a non-positive pivot.
    pub fn factor(k: &[Vec<f64>], jitter: f64) -> Result<Self> {
        let n = k.len();
        let mut l = Self {
            n: 0,
            entries: Vec::with_capacity(row_start(n)),
        };
        for (i, row) in k.iter().enumerate() {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    actual: row.len(),
                });
            }
            l.push_row(&row[..i], row[i] + jitter)
                .map_err(|_| Error::NotPositiveDefinite { jitter })?;
        }
        Ok(l)
    }

    /// Factor `k + jitter·I`, escalating the jitter on failure.
    ///
    /// The first escalation jumps to at least `1e-6 · mean(diag k)`; each
    /// further retry multiplies by 10. Returns the factor and the jitter
    /// that succeeded.
    pub fn factor_with_jitter(k: &[Vec<f64>], jitter: f64) -> Result<(Self, f64)> {
        if jitter < 0.0 || !jitter.is_finite() {
            return Err(Error::InvalidConfig(format!("jitter must be >= 0, got {jitter}")));
        }
        let n = k.len();
        let mean_diag = if n == 0 {
            1.0
        } else {
            k.iter().enumerate().map(|(i, r)| r.get(i).copied().unwrap_or(0.0)).sum::<f64>() / n as f64
        };
        let floor = 1e-6 * mean_diag.abs().max(f64::MIN_POSITIVE);
        let mut current = jitter;
        for attempt in 0..=MAX_JITTER_RETRIES {
            match Self::factor(k, current) {
                Ok(l) => return Ok((l, current)),
                Err(Error::NotPositiveDefinite { .. }) if attempt < MAX_JITTER_RETRIES => {
                    current = if attempt == 0 { floor.max(current * 10.0) } else { current * 10.0 };
                }
                Err(Error::NotPositiveDefinite { .. }) => {
                    return Err(Error::NotPositiveDefinite { jitter: current })
                }
                Err(e) => return Err(e),
            }
        }
        unreachable!("loop returns on the final attempt")
    }

    /// Rank-one append: extends the factor of `K` to the factor of
    /// `[[K, c], [cᵀ, diag]]` in O(n²). On failure the factor is unchanged.
    pub fn push_row(&mut self, cross: &[f64], diag: f64) -> Result<()> {
        if cross.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                actual: cross.len(),
            });
        }
        let new_row = self.solve_lower(cross);
        let pivot = diag - new_row.iter().map(|x| x * x).sum::<f64>();
        if !(pivot > 0.0) || !pivot.is_finite() {
            return Err(Error::NotPositiveDefinite { jitter: 0.0 });
        }
        self.entries.extend_from_slice(&new_row);
        self.entries.push(pivot.sqrt());
        self.n += 1;
        Ok(())
    }

    /// Forward substitution: solves `L y = b`.
    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        debug_assert_eq!(b.len(), self.n);
        let mut y = Vec::with_capacity(self.n);
        for i in 0..self.n {
            let row = self.row(i);
            let dot: f64 = row[..i].iter().zip(&y).map(|(a, b)| a * b).sum();
            y.push((b[i] - dot) / row[i]);
        }
        y
    }

    /// Forward substitution for `width` right-hand sides at once. `b` is
    /// row-major `n × width` (row `i` holds component `i` of every system)
    /// and is overwritten with the solutions. Each column sees exactly the
    /// same sequence of operations as [`solve_lower`](Self::solve_lower),
    /// so results agree bit for bit; the tiling only reorders work across
    /// columns and rows.
    pub fn solve_lower_many(&self, b: &mut [f64], width: usize) {
        debug_assert_eq!(b.len(), self.n * width);
        let mut i = 0;
        while i < self.n {
            let rows = (self.n - i).min(TILE_ROWS);
            let mut c = 0;
            while c + TILE_COLS <= width {
                self.solve_tile::<TILE_COLS>(b, width, i, rows, c);
                c += TILE_COLS;
            }
            while c < width {
                self.solve_tile::<1>(b, width, i, rows, c);
                c += 1;
            }
            i += rows;
        }
    }

    /// Solves rows `i..i + rows` for columns `c..c + W`, given every
    /// earlier row already solved.
    #[inline(always)]
    fn solve_tile<const W: usize>(&self, b: &mut [f64], width: usize, i: usize, rows: usize, c: usize) {
        // -0.0 is the identity `Iterator::sum` starts from.
        let mut acc = [[-0.0f64; W]; TILE_ROWS];
        let lrows: [&[f64]; TILE_ROWS] = std::array::from_fn(|r| if r < rows { self.row(i + r) } else { &[] });
        for j in 0..i {
            let y: &[f64; W] = b[j * width + c..j * width + c + W].try_into().expect("tile width");
            for r in 0..rows {
                let l = lrows[r][j];
                for k in 0..W {
                    acc[r][k] += l * y[k];
                }
            }
        }
        for r in 0..rows {
            for j in i..i + r {
                let l = lrows[r][j];
                for k in 0..W {
                    acc[r][k] += l * b[j * width + c + k];
                }
            }
            let diag = lrows[r][i + r];
            for k in 0..W {
                let cell = &mut b[(i + r) * width + c + k];
                *cell = (*cell - acc[r][k]) / diag;
            }
        }
    }

    /// Back substitution: solves `Lᵀ x = y`.
    pub fn solve_upper(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.n);
        let mut x = y.to_vec();
        for i in (0..self.n).rev() {
            let xi = x[i] / self.get(i, i);
            x[i] = xi;
            let row = self.row(i);
            for j in 0..i {
                x[j] -= row[j] * xi;
            }
        }
        x
    }

    /// Solves `L Lᵀ x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.solve_upper(&self.solve_lower(b))
    }

    /// Dense `L Lᵀ`, for checks.
    pub fn reconstruct(&self) -> Vec<Vec<f64>> {
        let n = self.n;
        let mut out = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..=i {
                let v: f64 = (0..=j).map(|k| self.get(i, k) * self.get(j, k)).sum();
                out[i][j] = v;
                out[j][i] = v;
            }
        }
        out
    }
}

/// Solves `(K + jitter·I) x = b` through a Cholesky factor, escalating the
/// jitter if `K` is numerically indefinite.
pub fn cholesky_solve(k: &[Vec<f64>], b: &[f64], jitter: f64) -> Result<Vec<f64>> {
    if b.len() != k.len() {
        return Err(Error::DimensionMismatch {
            expected: k.len(),
            actual: b.len(),
        });
    }
    let (l, _) = LowerTriangular::factor_with_jitter(k, jitter)?;
    Ok(l.solve(b))
}
