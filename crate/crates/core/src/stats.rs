use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTTest {
    pub t_statistic: f64,
    /// `P(T >= t)` under the null, `T ~ Student-t(n - 1)`.
    pub p_one_tailed: f64,
    pub df: usize,
    pub mean_difference: f64,
}

/// Paired t-test on `a - b` using the sample standard deviation.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTTest> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(format!(
            "paired samples of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::LengthMismatch(format!("need at least 2 pairs, got {n}")));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        return Err(Error::DegenerateVariance);
    }
    let t = mean / (var.sqrt() / (n as f64).sqrt());
    let dist =
        StudentsT::new(0.0, 1.0, (n - 1) as f64).map_err(|e| Error::InvalidConfig(format!("t distribution: {e}")))?;
    Ok(PairedTTest {
        t_statistic: t,
        p_one_tailed: dist.sf(t),
        df: n - 1,
        mean_difference: mean,
    })
}
