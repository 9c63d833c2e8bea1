//! Error metrics and Monte Carlo aggregation.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::linalg::{frob_sq, CMatrix};
use crate::stage1::fmt_f64;

const NMSE_FLOOR_DB: f64 = -300.0;

/// `10 log10(||est - truth||^2 / ||truth||^2)`, floored at -300 dB.
pub fn nmse_db(estimate: &CMatrix, truth: &CMatrix) -> Result<f64> {
    check_dims("nmse operands", truth.shape(), estimate.shape())?;
    let denom = frob_sq(truth);
    if denom == 0.0 {
        return Err(Error::ZeroReference);
    }
    let ratio = frob_sq(&(estimate - truth)) / denom;
    Ok(if ratio > 0.0 { (10.0 * ratio.log10()).max(NMSE_FLOOR_DB) } else { NMSE_FLOOR_DB })
}

/// Pairs sorted estimates with sorted truths, the optimal 1-D matching.
pub fn matched_errors_deg(estimate: &[f64], truth: &[f64]) -> Vec<f64> {
    let mut e = estimate.to_vec();
    let mut t = truth.to_vec();
    e.sort_by(f64::total_cmp);
    t.sort_by(f64::total_cmp);
    e.iter().zip(&t).map(|(a, b)| a - b).collect()
}

/// Root mean square of paired angle errors.
pub fn rmse_deg(tracked: &[f64], truth: &[f64]) -> f64 {
    let n = tracked.len().min(truth.len());
    if n == 0 {
        return 0.0;
    }
    let ss: f64 = tracked.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum();
    (ss / n as f64).sqrt()
}

/// Neumaier compensated sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = CompensatedSum::default();
        for x in iter {
            s.add(x);
        }
        s
    }
}

/// How per-trial samples are reduced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Reduce {
    Mean,
    /// Samples are squared errors; the curve is `sqrt(mean)`.
    RootMean,
}

/// Mean, standard error, sample count and failure count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub stderr: f64,
    pub count: usize,
    pub failures: usize,
}

impl Stat {
    pub fn from_samples(samples: &[Option<f64>], reduce: Reduce) -> Stat {
        let ok: Vec<f64> = samples.iter().flatten().copied().collect();
        let failures = samples.len() - ok.len();
        let n = ok.len();
        if n == 0 {
            return Stat { mean: f64::NAN, stderr: f64::NAN, count: 0, failures };
        }
        let mean = ok.iter().copied().collect::<CompensatedSum>().value() / n as f64;
        let var = if n > 1 {
            ok.iter().map(|x| (x - mean).powi(2)).collect::<CompensatedSum>().value() / (n - 1) as f64
        } else {
            0.0
        };
        let se = (var / n as f64).sqrt();
        match reduce {
            Reduce::Mean => Stat { mean, stderr: se, count: n, failures },
            Reduce::RootMean => {
                let r = mean.max(0.0).sqrt();
                // delta method
                let rse = if r > 0.0 { se / (2.0 * r) } else { 0.0 };
                Stat { mean: r, stderr: rse, count: n, failures }
            }
        }
    }
}

/// One curve of a figure.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantSeries {
    pub name: String,
    pub stats: Vec<Stat>,
}

impl VariantSeries {
    pub fn means(&self) -> Vec<f64> {
        self.stats.iter().map(|s| s.mean).collect()
    }
}

/// All curves of a figure over a shared x axis.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSeries {
    /// One of `nmse_db`, `se_bits_hz`, `rmse_deg`, `beampattern_db`, `spectrum`.
    pub metric_name: String,
    pub x_name: String,
    pub x_values: Vec<f64>,
    pub variants: Vec<VariantSeries>,
}

impl MetricSeries {
    pub fn new(metric_name: &str, x_name: &str, x_values: Vec<f64>) -> Self {
        Self { metric_name: metric_name.into(), x_name: x_name.into(), x_values, variants: Vec::new() }
    }

    /// Adds a curve from per-point, per-trial samples (`None` marks a failed trial).
    pub fn push(&mut self, name: &str, samples: &[Vec<Option<f64>>], reduce: Reduce) {
        assert_eq!(samples.len(), self.x_values.len(), "one sample set per x value");
        let stats = samples.iter().map(|s| Stat::from_samples(s, reduce)).collect();
        self.variants.push(VariantSeries { name: name.into(), stats });
    }

    pub fn variant(&self, name: &str) -> Option<&VariantSeries> {
        self.variants.iter().find(|v| v.name == name)
    }

    /// Worst failure fraction over all points.
    pub fn max_failure_rate(&self) -> f64 {
        self.variants
            .iter()
            .flat_map(|v| &v.stats)
            .map(|s| s.failures as f64 / (s.count + s.failures).max(1) as f64)
            .fold(0.0, f64::max)
    }

    /// Long-format CSV: `x, variant, <metric>_mean, <metric>_stderr, trials, failures`.
    pub fn to_csv(&self, header_comments: &[String]) -> String {
        let short = match self.metric_name.as_str() {
            "se_bits_hz" => "se",
            other => other,
        };
        let mut out = String::new();
        for c in header_comments {
            let _ = writeln!(out, "# {c}");
        }
        let _ = writeln!(out, "{},variant,{short}_mean,{short}_stderr,trials,failures", self.x_name);
        for (i, x) in self.x_values.iter().enumerate() {
            for v in &self.variants {
                let s = v.stats[i];
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    fmt_f64(*x),
                    v.name,
                    fmt_f64(s.mean),
                    fmt_f64(s.stderr),
                    s.count,
                    s.failures
                );
            }
        }
        out
    }
}

/// Local maxima of a sampled pattern at most `threshold_db` (positive) below its peak.
pub fn strong_lobes(angles_deg: &[f64], pattern: &[f64], threshold_db: f64) -> Vec<f64> {
    let peak = pattern.iter().copied().fold(f64::MIN, f64::max);
    let floor = peak * 10f64.powf(-threshold_db / 10.0);
    crate::stage1::local_maxima(pattern)
        .into_iter()
        .filter(|&i| pattern[i] >= floor)
        .map(|i| angles_deg[i])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use proptest::prelude::*;

    #[test]
    fn nmse_examples() {
        let t = CMatrix::from_element(2, 2, Complex64::new(1.0, -1.0));
        assert_eq!(nmse_db(&t, &t).unwrap(), -300.0);
        assert!((nmse_db(&CMatrix::zeros(2, 2), &t).unwrap()).abs() < 1e-12);
        // ||e||^2 = 0.01 ||truth||^2
        let e = t.scale(0.1);
        assert!((nmse_db(&(&t + e), &t).unwrap() + 20.0).abs() < 1e-9);
        assert_eq!(nmse_db(&t, &CMatrix::zeros(2, 2)), Err(Error::ZeroReference));
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse_deg(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert!((rmse_deg(&[1.5, 2.5], &[1.0, 2.0]) - 0.5).abs() < 1e-12);
        assert!((rmse_deg(&[0.0, 1.0], &[0.0, 0.0]) - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn stat_handles_failures_and_root_mean() {
        let s = Stat::from_samples(&[Some(1.0), None, Some(3.0)], Reduce::Mean);
        assert_eq!((s.mean, s.count, s.failures), (2.0, 2, 1));
        assert!((s.stderr - 1.0).abs() < 1e-12);
        let r = Stat::from_samples(&[Some(4.0), Some(4.0)], Reduce::RootMean);
        assert_eq!(r.mean, 2.0);
    }

    #[test]
    fn csv_layout() {
        let mut m = MetricSeries::new("se_bits_hz", "snr_db", vec![0.0, 10.0]);
        m.push("hbf_opt", &[vec![Some(1.0)], vec![Some(2.0)]], Reduce::Mean);
        let csv = m.to_csv(&["note".into()]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "# note");
        assert_eq!(lines[1], "snr_db,variant,se_mean,se_stderr,trials,failures");
        assert_eq!(lines.len(), 4);
        assert!(lines[3].starts_with("1.0000000000000000e1,hbf_opt,2.0000000000000000e0"));
    }

    #[test]
    fn lobes_above_threshold() {
        let a = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let p = [0.0, 10.0, 1.0, 6.0, 1.0, 4.0, 0.0];
        assert_eq!(strong_lobes(&a, &p, 3.0), vec![1.0, 3.0]);
    }

    proptest! {
        #[test]
        fn mean_is_order_independent(mut xs in proptest::collection::vec(-1e6f64..1e6, 1..200), seed in any::<u64>()) {
            let a = Stat::from_samples(&xs.iter().map(|&x| Some(x)).collect::<Vec<_>>(), Reduce::Mean);
            // deterministic shuffle
            let n = xs.len();
            let mut s = seed;
            for i in (1..n).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                xs.swap(i, (s >> 33) as usize % (i + 1));
            }
            let b = Stat::from_samples(&xs.iter().map(|&x| Some(x)).collect::<Vec<_>>(), Reduce::Mean);
            prop_assert!((a.mean - b.mean).abs() <= 1e-12 * (1.0 + a.mean.abs()));
            prop_assert!((a.stderr - b.stderr).abs() <= 1e-9 * (1.0 + a.stderr.abs()));
        }
    }
}
