//! Small Monte-Carlo statistics helpers.

use serde::Serialize;

/// Welford accumulator for mean and variance.
#[derive(Debug, Clone, Copy, Default)]
pub struct Running {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Running {
    pub fn push(&mut self, v: f64) {
        self.n += 1;
        let d = v - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (v - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance (0 for fewer than two values).
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn stderr(&self) -> f64 {
        if self.n == 0 {
            return f64::INFINITY;
        }
        (self.variance() / self.n as f64).sqrt()
    }
}

impl FromIterator<f64> for Running {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut r = Running::default();
        iter.into_iter().for_each(|v| r.push(v));
        r
    }
}

/// A Monte-Carlo estimate together with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn from_samples(values: impl IntoIterator<Item = f64>) -> Self {
        let r: Running = values.into_iter().collect();
        Self { value: r.mean(), stderr: r.stderr() }
    }

    /// True when |value − target| ≤ k·stderr (+ `floor` for exactly
    /// degenerate samples).
    pub fn agrees_with(&self, target: f64, k: f64, floor: f64) -> bool {
        (self.value - target).abs() <= k * self.stderr + floor
    }
}

/// Sample variance and the standard error of that variance estimate
/// (delta method with the fourth central moment).
pub fn variance_with_stderr(values: &[f64]) -> Estimate {
    let n = values.len() as f64;
    if values.len() < 2 {
        return Estimate { value: 0.0, stderr: f64::INFINITY };
    }
    let mean = values.iter().sum::<f64>() / n;
    let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m4 = values.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
    let var = m2 * n / (n - 1.0);
    Estimate { value: var, stderr: ((m4 - m2 * m2).max(0.0) / n).sqrt() }
}

/// Two-sample energy distance 2E|X−Y| − E|X−X'| − E|Y−Y'| for scalars,
/// computed from sorted samples in O(n log n).
pub fn energy_distance_1d(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return f64::NAN;
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    let cross = mean_abs_cross(&sa, &sb);
    2.0 * cross - mean_abs_within(&sa) - mean_abs_within(&sb)
}

/// E|X − X'| over all ordered pairs of a sorted sample (including i = j).
fn mean_abs_within(s: &[f64]) -> f64 {
    let n = s.len() as f64;
    let total: f64 = s.iter().enumerate().map(|(i, v)| (2.0 * i as f64 - n + 1.0) * v).sum();
    2.0 * total / (n * n)
}

fn mean_abs_cross(a: &[f64], b: &[f64]) -> f64 {
    // For each a_i, Σ_j |a_i − b_j| from prefix sums of the sorted b.
    let mut prefix = Vec::with_capacity(b.len() + 1);
    prefix.push(0.0);
    for v in b {
        prefix.push(prefix.last().unwrap() + v);
    }
    let total_b = *prefix.last().unwrap();
    let nb = b.len();
    let mut j = 0;
    let mut acc = 0.0;
    for &x in a {
        while j < nb && b[j] <= x {
            j += 1;
        }
        let below = j as f64 * x - prefix[j];
        let above = (total_b - prefix[j]) - (nb - j) as f64 * x;
        acc += below + above;
    }
    acc / (a.len() as f64 * nb as f64)
}

/// Multivariate energy distance from row-major samples of dimension `dim`,
/// brute force O(n²); callers subsample large inputs.
pub fn energy_distance(a: &[f64], b: &[f64], dim: usize) -> f64 {
    if dim == 1 {
        return energy_distance_1d(a, b);
    }
    let dist = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
    let mean_pair = |x: &[f64], y: &[f64]| {
        let (nx, ny) = (x.len() / dim, y.len() / dim);
        let mut acc = 0.0;
        for i in 0..nx {
            for j in 0..ny {
                acc += dist(&x[i * dim..(i + 1) * dim], &y[j * dim..(j + 1) * dim]);
            }
        }
        acc / (nx * ny) as f64
    };
    2.0 * mean_pair(a, b) - mean_pair(a, a) - mean_pair(b, b)
}
