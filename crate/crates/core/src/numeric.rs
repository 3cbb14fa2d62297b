//! Floating-point accumulation helpers.

/// Exact running sum of `f64` terms (Shewchuk's non-overlapping partials).
///
/// [`ExactSum::value`] is the correctly rounded value of the exact sum, so two
/// accumulators fed the same multiset of terms in any order agree bit for bit.
#[derive(Debug, Clone, Default)]
pub struct ExactSum {
    partials: Vec<f64>,
}

impl ExactSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, mut x: f64) {
        let mut i = 0;
        for j in 0..self.partials.len() {
            let mut y = self.partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                self.partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        self.partials.truncate(i);
        self.partials.push(x);
    }

    /// Adds the exact product `count * x` (error-free via fma).
    pub fn add_product(&mut self, count: u64, x: f64) {
        let c = count as f64;
        debug_assert!(count < (1 << 53));
        let p = c * x;
        let e = c.mul_add(x, -p);
        self.add(p);
        if e != 0.0 {
            self.add(e);
        }
    }

    pub fn value(&self) -> f64 {
        let p = &self.partials;
        let Some(mut n) = p.len().checked_sub(1) else {
            return 0.0;
        };
        let mut hi = p[n];
        let mut lo = 0.0;
        while n > 0 {
            n -= 1;
            let x = hi;
            let y = p[n];
            hi = x + y;
            let yr = hi - x;
            lo = y - yr;
            if lo != 0.0 {
                break;
            }
        }
        // Round-half-even correction across the remaining partials.
        if n > 0 && ((lo < 0.0 && p[n - 1] < 0.0) || (lo > 0.0 && p[n - 1] > 0.0)) {
            let y = lo * 2.0;
            let x = hi + y;
            if y == x - hi {
                hi = x;
            }
        }
        hi
    }
}

/// Neumaier-compensated sum; cheap enough for per-level accumulation in hot loops.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Sample mean vector and covariance matrix (divisor `N - 1`) of a set of
/// equal-length rows, computed in two compensated passes.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SampleMoments {
    pub count: usize,
    pub mean: Vec<f64>,
    /// `None` with fewer than two rows.
    pub covariance: Option<Vec<Vec<f64>>>,
}

impl SampleMoments {
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let count = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        let mut sums = vec![CompensatedSum::default(); d];
        for row in rows {
            for (acc, &x) in sums.iter_mut().zip(row) {
                acc.add(x);
            }
        }
        let mean: Vec<f64> = sums.iter().map(|s| s.value() / count as f64).collect();
        let covariance = (count > 1).then(|| {
            let mut acc = vec![vec![CompensatedSum::default(); d]; d];
            for row in rows {
                for i in 0..d {
                    let di = row[i] - mean[i];
                    for j in i..d {
                        acc[i][j].add(di * (row[j] - mean[j]));
                    }
                }
            }
            let mut cov = vec![vec![0.0; d]; d];
            for i in 0..d {
                for j in i..d {
                    let c = acc[i][j].value() / (count - 1) as f64;
                    cov[i][j] = c;
                    cov[j][i] = c;
                }
            }
            cov
        });
        Self { count, mean, covariance }
    }

    pub fn variance(&self, i: usize) -> Option<f64> {
        self.covariance.as_ref().map(|c| c[i][i])
    }

    pub fn correlation(&self, i: usize, j: usize) -> Option<f64> {
        self.covariance.as_ref().map(|c| c[i][j] / (c[i][i] * c[j][j]).sqrt())
    }

    /// Standard error of the mean of coordinate `i`.
    pub fn se_mean(&self, i: usize) -> Option<f64> {
        self.variance(i).map(|v| (v / self.count as f64).sqrt())
    }
}
