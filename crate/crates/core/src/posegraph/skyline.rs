//! Symmetric matrices stored by row envelope ("skyline") with an in-place
//! Cholesky factorization. Fill-in of a Cholesky factor never leaves the
//! envelope, so a pose chain with a few long loop edges stays cheap.

#[derive(Clone, Debug)]
pub struct SkylineMatrix {
    first: Vec<usize>,
    start: Vec<usize>,
    data: Vec<f64>,
}

impl SkylineMatrix {
    /// `first[r]` is the first stored column of row `r` (must be `<= r`).
    pub fn new(first: Vec<usize>) -> Self {
        let mut start = Vec::with_capacity(first.len() + 1);
        let mut acc = 0;
        for (r, &f) in first.iter().enumerate() {
            assert!(f <= r, "envelope start {f} beyond diagonal {r}");
            start.push(acc);
            acc += r - f + 1;
        }
        start.push(acc);
        Self {
            first,
            start,
            data: vec![0.0; acc],
        }
    }

    pub fn dim(&self) -> usize {
        self.first.len()
    }

    fn slot(&self, r: usize, c: usize) -> usize {
        let (r, c) = if c > r { (c, r) } else { (r, c) };
        assert!(c >= self.first[r], "({r},{c}) outside envelope");
        self.start[r] + c - self.first[r]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (hi, lo) = if c > r { (c, r) } else { (r, c) };
        if lo < self.first[hi] {
            0.0
        } else {
            self.data[self.slot(hi, lo)]
        }
    }

    /// Adds to entry `(r, c)` (and implicitly its mirror).
    pub fn add(&mut self, r: usize, c: usize, v: f64) {
        let s = self.slot(r, c);
        self.data[s] += v;
    }

    fn row(&self, r: usize) -> &[f64] {
        &self.data[self.start[r]..self.start[r + 1]]
    }

    /// Replaces the stored lower triangle with its Cholesky factor `L`.
    /// Returns `false` if the matrix is not positive definite.
    pub fn factorize(&mut self) -> bool {
        for i in 0..self.dim() {
            let fi = self.first[i];
            for j in fi..=i {
                let fj = self.first[j];
                let k0 = fi.max(fj);
                let dot: f64 = {
                    let ri = &self.row(i)[k0 - fi..j - fi];
                    let rj = &self.row(j)[k0 - fj..j - fj];
                    ri.iter().zip(rj).map(|(a, b)| a * b).sum()
                };
                let s = self.start[i] + j - fi;
                let v = self.data[s] - dot;
                if j == i {
                    if !(v > 0.0) || !v.is_finite() {
                        return false;
                    }
                    self.data[s] = v.sqrt();
                } else {
                    let d = self.data[self.start[j] + j - fj];
                    self.data[s] = v / d;
                }
            }
        }
        true
    }

    /// Solves `L L^T x = b` using a factor produced by [`factorize`](Self::factorize).
    pub fn solve_factored(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut y = b.to_vec();
        for i in 0..n {
            let fi = self.first[i];
            let row = self.row(i);
            let dot: f64 = row[..i - fi].iter().zip(&y[fi..i]).map(|(a, b)| a * b).sum();
            y[i] = (y[i] - dot) / row[i - fi];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let row = self.row(i);
            y[i] /= row[i - fi];
            let yi = y[i];
            for (k, l) in row[..i - fi].iter().enumerate() {
                y[fi + k] -= l * yi;
            }
        }
        y
    }
}
