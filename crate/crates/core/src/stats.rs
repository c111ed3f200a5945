//! Summary statistics over repeated draws.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator); 0 for a single value.
    pub sd: f64,
    /// Half-width of the two-sided 95% Student-t interval on the mean.
    /// `None` with fewer than two values.
    pub ci95: Option<f64>,
    pub min: f64,
    pub max: f64,
}

/// Summarizes `values`. Returns `None` for an empty slice.
pub fn summarize(values: &[f64]) -> Option<Summary> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let (sd, ci95) = if n < 2 {
        (0.0, None)
    } else {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let sd = var.sqrt();
        (sd, Some(t_quantile_975(n - 1) * sd / (n as f64).sqrt()))
    };
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Some(Summary { count: n, mean, sd, ci95, min, max })
}

/// 97.5% quantile of Student's t with `dof` degrees of freedom.
pub fn t_quantile_975(dof: usize) -> f64 {
    StudentsT::new(0.0, 1.0, dof as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn t_table_values() {
        // Standard table values.
        assert!((t_quantile_975(1) - 12.706).abs() < 1e-3);
        assert!((t_quantile_975(9) - 2.262).abs() < 1e-3);
        assert!((t_quantile_975(30) - 2.042).abs() < 1e-3);
    }

    #[test]
    fn summary_of_known_values() {
        let s = summarize(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]).unwrap();
        assert_eq!(s.mean, 5.0);
        // Sum of squared deviations is 32, so the sample variance is 32 / 7.
        assert!((s.sd - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
        let t = t_quantile_975(7);
        assert!((s.ci95.unwrap() - t * s.sd / 8f64.sqrt()).abs() < 1e-12);
        assert_eq!((s.min, s.max), (2.0, 9.0));
    }

    #[test]
    fn degenerate_inputs() {
        assert!(summarize(&[]).is_none());
        let s = summarize(&[3.0]).unwrap();
        assert_eq!((s.sd, s.ci95), (0.0, None));
        let s = summarize(&[1.5; 10]).unwrap();
        assert_eq!(s.sd, 0.0);
        assert_eq!(s.ci95, Some(0.0));
    }
}
