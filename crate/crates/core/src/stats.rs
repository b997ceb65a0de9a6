//! Small statistics toolkit: running moments, estimates with standard
//! errors, z-scores and rank correlation.

use serde::{Deserialize, Serialize};

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: u64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self { mean: value, stderr: 0.0, n: 0 }
    }

    pub fn from_samples(samples: &[f64]) -> Self {
        let mut acc = Moments::default();
        for &s in samples {
            acc.push(s);
        }
        acc.estimate()
    }

    /// z-score of this estimate against a reference value that carries its
    /// own standard error.
    pub fn z_against(&self, reference: f64, reference_stderr: f64) -> f64 {
        z_score(self.mean - reference, combined_stderr(self.stderr, reference_stderr))
    }

    pub fn lower(&self, sigmas: f64) -> f64 {
        self.mean - sigmas * self.stderr
    }

    pub fn upper(&self, sigmas: f64) -> f64 {
        self.mean + sigmas * self.stderr
    }

    /// Estimate of a difference of independent estimates.
    pub fn minus(&self, other: &Estimate) -> Estimate {
        Estimate {
            mean: self.mean - other.mean,
            stderr: combined_stderr(self.stderr, other.stderr),
            n: self.n.min(other.n),
        }
    }
}

pub fn combined_stderr(a: f64, b: f64) -> f64 {
    (a * a + b * b).sqrt()
}

/// z-score of a discrepancy; an exact zero discrepancy scores zero even
/// when the standard error vanishes.
pub fn z_score(diff: f64, stderr: f64) -> f64 {
    if diff == 0.0 {
        0.0
    } else if stderr > 0.0 {
        diff / stderr
    } else {
        diff.signum() * f64::INFINITY
    }
}

/// Welford running mean/variance. Merging is deterministic for a fixed
/// merge order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub n: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        self.mean += delta * other.n as f64 / n as f64;
        self.m2 += other.m2 + delta * delta * (self.n as f64) * (other.n as f64) / n as f64;
        self.n = n;
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn estimate(&self) -> Estimate {
        let stderr = if self.n < 2 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        };
        Estimate { mean: self.mean, stderr, n: self.n }
    }
}

/// Kendall's tau-a between two equally long sequences.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    if n < 2 {
        return 0.0;
    }
    let mut score = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let s = (a[i] - a[j]).signum() * (b[i] - b[j]).signum();
            if (a[i] - a[j]) != 0.0 && (b[i] - b[j]) != 0.0 {
                score += s;
            }
        }
    }
    score / (n * (n - 1) / 2) as f64
}

pub fn erf(x: f64) -> f64 {
    libm::erf(x)
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Kolmogorov–Smirnov statistic of `samples` against a continuous CDF.
pub fn ks_statistic(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}
