//! Symmetric banded matrices: storage, products and Cholesky solves.

/// Symmetric `n x n` matrix with half-bandwidth `p`, lower diagonals stored row by row.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct SymBand {
    n: usize,
    p: usize,
    // data[i * (p + 1) + k] = A[i, i - k]
    data: Vec<f64>,
}

impl SymBand {
    pub fn zeros(n: usize, p: usize) -> Self {
        Self {
            n,
            p,
            data: vec![0.0; n * (p + 1)],
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.p
    }

    /// Entry `(i, j)`; zero outside the band.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let k = i - j;
        if k > self.p {
            0.0
        } else {
            self.data[i * (self.p + 1) + k]
        }
    }

    /// Adds `v` at `(i, j)` and, implicitly, `(j, i)`.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let k = i - j;
        assert!(k <= self.p, "entry ({i}, {j}) outside band {}", self.p);
        self.data[i * (self.p + 1) + k] += v;
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn add_diagonal(&mut self, s: f64) {
        for i in 0..self.n {
            self.data[i * (self.p + 1)] += s;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for i in 0..self.n {
            let row = &self.data[i * (self.p + 1)..(i + 1) * (self.p + 1)];
            out[i] += row[0] * x[i];
            for k in 1..=self.p.min(i) {
                let a = row[k];
                out[i] += a * x[i - k];
                out[i - k] += a * x[i];
            }
        }
        out
    }

    /// Banded Cholesky `A = L L'`; `None` if `A` is not positive definite.
    pub fn cholesky(&self) -> Option<BandCholesky> {
        let (n, p) = (self.n, self.p);
        let w = p + 1;
        let mut l = vec![0.0; n * w];
        for i in 0..n {
            let lo = i.saturating_sub(p);
            for j in lo..=i {
                let mut s = self.data[i * w + (i - j)];
                for k in lo.max(j.saturating_sub(p))..j {
                    s -= l[i * w + (i - k)] * l[j * w + (j - k)];
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return None;
                    }
                    l[i * w] = s.sqrt();
                } else {
                    l[i * w + (i - j)] = s / l[j * w];
                }
            }
        }
        Some(BandCholesky { n, p, l })
    }
}

/// Lower banded Cholesky factor.
#[derive(Debug, Clone)]
pub(crate) struct BandCholesky {
    n: usize,
    p: usize,
    l: Vec<f64>,
}

impl BandCholesky {
    pub fn log_det(&self) -> f64 {
        let w = self.p + 1;
        2.0 * (0..self.n).map(|i| self.l[i * w].ln()).sum::<f64>()
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let (n, p, w) = (self.n, self.p, self.p + 1);
        for i in 0..n {
            let mut s = b[i];
            for k in 1..=p.min(i) {
                s -= self.l[i * w + k] * b[i - k];
            }
            b[i] = s / self.l[i * w];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in 1..=p.min(n - 1 - i) {
                s -= self.l[(i + k) * w + k] * b[i + k];
            }
            b[i] = s / self.l[i * w];
        }
    }

    /// Solves `A X = B` in place for a row-major `n x k` right-hand side.
    pub fn solve_rows_in_place(&self, b: &mut [f64], k: usize) {
        let (n, p, w) = (self.n, self.p, self.p + 1);
        assert_eq!(b.len(), n * k);
        for i in 0..n {
            let (done, rest) = b.split_at_mut(i * k);
            let row = &mut rest[..k];
            for lag in 1..=p.min(i) {
                let c = self.l[i * w + lag];
                let prev = &done[(i - lag) * k..(i - lag + 1) * k];
                row.iter_mut().zip(prev).for_each(|(r, v)| *r -= c * v);
            }
            let inv = 1.0 / self.l[i * w];
            row.iter_mut().for_each(|r| *r *= inv);
        }
        for i in (0..n).rev() {
            let (head, tail) = b.split_at_mut((i + 1) * k);
            let row = &mut head[i * k..];
            for lag in 1..=p.min(n - 1 - i) {
                let c = self.l[(i + lag) * w + lag];
                let next = &tail[(lag - 1) * k..lag * k];
                row.iter_mut().zip(next).for_each(|(r, v)| *r -= c * v);
            }
            let inv = 1.0 / self.l[i * w];
            row.iter_mut().for_each(|r| *r *= inv);
        }
    }
}
