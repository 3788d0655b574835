//! Normalized mean-square error, accumulated as a ratio of sums.

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Nmse {
    pub error: f64,
    pub power: f64,
    pub count: usize,
}

impl Nmse {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, estimate: &[f64], truth: &[f64]) {
        debug_assert_eq!(estimate.len(), truth.len());
        self.error += estimate.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        self.power += truth.iter().map(|b| b * b).sum::<f64>();
        self.count += 1;
    }

    /// Adds every row of two row-major batches.
    pub fn add_rows(&mut self, estimates: &[f64], truth: &[f64], dim: usize) {
        for (e, t) in estimates.chunks_exact(dim).zip(truth.chunks_exact(dim)) {
            self.add(e, t);
        }
    }

    pub fn merge(&mut self, other: &Nmse) {
        self.error += other.error;
        self.power += other.power;
        self.count += other.count;
    }

    pub fn linear(&self) -> f64 {
        self.error / self.power
    }

    pub fn db(&self) -> f64 {
        to_db(self.linear())
    }
}

pub fn to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// `sum ||e - t||^2 / sum ||t||^2` over row-major batches.
pub fn nmse(estimates: &[f64], truth: &[f64], dim: usize) -> f64 {
    let mut acc = Nmse::new();
    acc.add_rows(estimates, truth, dim);
    acc.linear()
}

pub fn nmse_db(estimates: &[f64], truth: &[f64], dim: usize) -> f64 {
    to_db(nmse(estimates, truth, dim))
}

/// Median of a sample; `NaN` when empty.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}
