use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: usize,
    pub p_two_sided: f64,
}

fn two_sided_p(t: f64, df: usize) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    let dist = StudentsT::new(0.0, 1.0, df as f64).expect("df >= 1");
    (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
}

/// Mean and standard error of the mean (sample std / sqrt n).
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// t statistic from summary statistics.
pub fn one_sample_t_summary(mean: f64, se: f64, n: usize, null_mean: f64) -> Result<TTest> {
    if n < 2 {
        return Err(Error::domain(format!("t test needs n >= 2, got {n}")));
    }
    if !(se > 0.0) || !se.is_finite() {
        return Err(Error::domain(format!("standard error must be positive, got {se}")));
    }
    let t = (mean - null_mean) / se;
    Ok(TTest { t, df: n - 1, p_two_sided: two_sided_p(t, n - 1) })
}

pub fn one_sample_t(values: &[f64], null_mean: f64) -> Result<TTest> {
    if values.len() < 2 {
        return Err(Error::domain(format!("t test needs n >= 2, got {}", values.len())));
    }
    let (mean, se) = mean_se(values);
    one_sample_t_summary(mean, se, values.len(), null_mean)
}

/// Paired t test on per-problem differences `a - b`.
pub fn paired_t(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::domain(format!("paired samples differ in length: {} vs {}", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::domain(format!("t test needs n >= 2, got {}", a.len())));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if d.iter().all(|&x| x == 0.0) {
        return Ok(TTest { t: 0.0, df: d.len() - 1, p_two_sided: 1.0 });
    }
    one_sample_t(&d, 0.0)
}
