//! Symmetric banded matrices and their Cholesky factorisation.

use nalgebra::DVector;

/// Lower band of a symmetric `n × n` matrix with half-bandwidth `bw`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricBand {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl SymmetricBand {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Self {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    fn index(&self, i: usize, j: usize) -> Option<usize> {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        (i - j <= self.bw).then(|| i * (self.bw + 1) + (i - j))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.index(i, j).map_or(0.0, |k| self.data[k])
    }

    /// Adds `v` at `(i, j)` (and by symmetry `(j, i)`).
    ///
    /// # Panics
    /// If `(i, j)` lies outside the band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self
            .index(i, j)
            .unwrap_or_else(|| panic!("({i}, {j}) outside band {}", self.bw));
        self.data[k] += v;
    }

    pub fn diagonal(&self) -> DVector<f64> {
        DVector::from_fn(self.n, |i, _| self.get(i, i))
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(self.n);
        for i in 0..self.n {
            for j in i.saturating_sub(self.bw)..=i {
                let a = self.get(i, j);
                y[i] += a * x[j];
                if i != j {
                    y[j] += a * x[i];
                }
            }
        }
        y
    }

    /// Cholesky factor `L` with `A = L Lᵀ`; `Err(row)` at the first
    /// non-positive pivot.
    pub fn cholesky(&self) -> Result<BandCholesky, usize> {
        let (n, bw) = (self.n, self.bw);
        let w = bw + 1;
        let mut l = vec![0.0; n * w];
        let at = |i: usize, j: usize| i * w + (i - j);
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let mut s = self.data[at(i, j)];
                for k in lo.max(j.saturating_sub(bw))..j {
                    s -= l[at(i, k)] * l[at(j, k)];
                }
                if i == j {
                    if !s.is_finite() || s <= 0.0 {
                        return Err(i);
                    }
                    l[at(i, i)] = s.sqrt();
                } else {
                    l[at(i, j)] = s / l[at(j, j)];
                }
            }
        }
        Ok(BandCholesky { n, bw, l })
    }
}

#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    bw: usize,
    l: Vec<f64>,
}

impl BandCholesky {
    fn l(&self, i: usize, j: usize) -> f64 {
        self.l[i * (self.bw + 1) + (i - j)]
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let (n, bw) = (self.n, self.bw);
        let mut y = b.clone();
        for i in 0..n {
            let mut s = y[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.l(i, k) * y[k];
            }
            y[i] = s / self.l(i, i);
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..(i + bw + 1).min(n) {
                s -= self.l(k, i) * y[k];
            }
            y[i] = s / self.l(i, i);
        }
        y
    }

    /// Diagonal of the inverse, one column solve per entry in `indices`.
    pub fn inverse_diagonal(&self, indices: impl Iterator<Item = usize>) -> Vec<f64> {
        indices
            .map(|i| {
                let mut e = DVector::zeros(self.n);
                e[i] = 1.0;
                self.solve(&e)[i]
            })
            .collect()
    }
}
