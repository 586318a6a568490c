//! Pearson correlation and the Concordance Correlation Coefficient used to
//! score valence/arousal predictions.
//!
//! Both metrics use population moments (divide by N). CCC is computed as
//! 2·cov / (var_x + var_y + (mean_x − mean_y)²), which equals the textbook
//! 2·rho·sigma_x·sigma_y form without routing through square roots; this keeps
//! ccc(x, x) == 1 exact and the function symmetric to the bit.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("series lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("undefined correlation: {0}")]
    Degenerate(&'static str),
    #[error("non-finite value in input series")]
    NonFinite,
    #[error("correlation {value} for {field} outside [-1, 1]")]
    OutOfRange { field: &'static str, value: f64 },
}

struct Moments {
    mean_x: f64,
    mean_y: f64,
    var_x: f64,
    var_y: f64,
    cov: f64,
}

fn moments(x: &[f64], y: &[f64]) -> Result<Moments, MetricError> {
    if x.len() != y.len() {
        return Err(MetricError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(MetricError::TooFewSamples(x.len()));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    let n = x.len() as f64;
    let mean_x = x.iter().sum::<f64>() / n;
    let mean_y = y.iter().sum::<f64>() / n;
    let (mut var_x, mut var_y, mut cov) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let dx = a - mean_x;
        let dy = b - mean_y;
        var_x += dx * dx;
        var_y += dy * dy;
        cov += dx * dy;
    }
    Ok(Moments {
        mean_x,
        mean_y,
        var_x: var_x / n,
        var_y: var_y / n,
        cov: cov / n,
    })
}

/// Pearson correlation coefficient with population moments.
///
/// Errors if either series has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    let m = moments(x, y)?;
    if m.var_x <= 0.0 || m.var_y <= 0.0 {
        return Err(MetricError::Degenerate("zero variance series"));
    }
    Ok((m.cov / (m.var_x.sqrt() * m.var_y.sqrt())).clamp(-1.0, 1.0))
}

/// Concordance Correlation Coefficient: agreement with the identity line.
///
/// Defined whenever the denominator var_x + var_y + (mean_x − mean_y)² is
/// positive, i.e. unless both series are constant with equal means.
pub fn ccc(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    let m = moments(x, y)?;
    let mean_gap = m.mean_x - m.mean_y;
    let denom = m.var_x + m.var_y + mean_gap * mean_gap;
    if denom <= 0.0 {
        return Err(MetricError::Degenerate(
            "both series constant with equal means",
        ));
    }
    Ok((2.0 * m.cov / denom).clamp(-1.0, 1.0))
}

/// Per-fold evaluation summary for the two affect dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub valence_ccc: f64,
    pub arousal_ccc: f64,
    pub valence_pearson: f64,
    pub arousal_pearson: f64,
    pub n_frames: usize,
}

impl MetricReport {
    /// Validating constructor; formatting never has to re-check the fields.
    pub fn new(
        valence_ccc: f64,
        arousal_ccc: f64,
        valence_pearson: f64,
        arousal_pearson: f64,
        n_frames: usize,
    ) -> Result<Self, MetricError> {
        if n_frames < 2 {
            return Err(MetricError::TooFewSamples(n_frames));
        }
        for (field, value) in [
            ("valence_ccc", valence_ccc),
            ("arousal_ccc", arousal_ccc),
            ("valence_pearson", valence_pearson),
            ("arousal_pearson", arousal_pearson),
        ] {
            if !(-1.0..=1.0).contains(&value) {
                return Err(MetricError::OutOfRange { field, value });
            }
        }
        Ok(MetricReport {
            valence_ccc,
            arousal_ccc,
            valence_pearson,
            arousal_pearson,
            n_frames,
        })
    }

    /// Score predictions against labels; columns are (valence, arousal).
    pub fn from_predictions(
        pred_valence: &[f64],
        pred_arousal: &[f64],
        label_valence: &[f64],
        label_arousal: &[f64],
    ) -> Result<Self, MetricError> {
        MetricReport::new(
            ccc(pred_valence, label_valence)?,
            ccc(pred_arousal, label_arousal)?,
            pearson(pred_valence, label_valence)?,
            pearson(pred_arousal, label_arousal)?,
            pred_valence.len(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    fn approx(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    /// Independent oracle written straight from the published formula,
    /// including the rho * sigma_x * sigma_y route the implementation avoids.
    fn ccc_formula_oracle(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let vx = x.iter().map(|a| (a - mx) * (a - mx)).sum::<f64>() / n;
        let vy = y.iter().map(|a| (a - my) * (a - my)).sum::<f64>() / n;
        let cov = x
            .iter()
            .zip(y)
            .map(|(&a, &b)| (a - mx) * (b - my))
            .sum::<f64>()
            / n;
        let rho = cov / (vx.sqrt() * vy.sqrt());
        2.0 * rho * vx.sqrt() * vy.sqrt() / (vx + vy + (mx - my) * (mx - my))
    }

    #[test]
    fn pearson_trivial_cases() {
        let x = [1.0, 2.0, 3.0];
        assert_eq!(pearson(&x, &x).unwrap(), 1.0);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_eq!(pearson(&x, &neg).unwrap(), -1.0);
        approx(
            pearson(&[0.0, 1.0, 2.0], &[0.0, 2.0, 4.0]).unwrap(),
            1.0,
            1e-15,
        );
    }

    #[test]
    fn pearson_rejects_constant_series() {
        assert!(matches!(
            pearson(&[1.0, 1.0, 1.0], &[0.0, 1.0, 2.0]),
            Err(MetricError::Degenerate(_))
        ));
        assert!(matches!(
            pearson(&[0.0, 1.0], &[5.0, 5.0]),
            Err(MetricError::Degenerate(_))
        ));
    }

    #[test]
    fn ccc_perfect_concordance_and_discordance() {
        let x = [1.0, 2.0, 3.0];
        assert_eq!(ccc(&x, &x).unwrap(), 1.0);
        // reversed arithmetic progression: equal moments, rho = -1
        assert_eq!(ccc(&x, &[3.0, 2.0, 1.0]).unwrap(), -1.0);
    }

    #[test]
    fn ccc_hand_evaluated_case() {
        // rho = 1, var_x = 2/3, var_y = 8/3, mean gap 1 -> 2*(4/3)/(13/3) = 8/13
        let got = ccc(&[0.0, 1.0, 2.0], &[0.0, 2.0, 4.0]).unwrap();
        approx(got, 8.0 / 13.0, 1e-12);
    }

    #[test]
    fn ccc_attenuates_scaled_but_correlated_pair() {
        let x: Vec<f64> = (0..50).map(|i| i as f64 / 10.0).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.5 * v + 0.3).collect();
        let p = pearson(&x, &y).unwrap();
        let c = ccc(&x, &y).unwrap();
        approx(p, 1.0, 1e-12);
        assert!(c < p, "ccc {c} should be below pearson {p}");
    }

    #[test]
    fn ccc_is_exactly_symmetric() {
        let mut rng = Rng::new(17);
        for _ in 0..50 {
            let x: Vec<f64> = (0..20).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let y: Vec<f64> = (0..20).map(|_| rng.uniform(-1.0, 1.0)).collect();
            assert_eq!(ccc(&x, &y).unwrap(), ccc(&y, &x).unwrap());
        }
    }

    #[test]
    fn ccc_shift_breaks_perfect_agreement() {
        let mut rng = Rng::new(23);
        for _ in 0..20 {
            let x: Vec<f64> = (0..30).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let a = rng.uniform(0.1, 2.0);
            let shifted: Vec<f64> = x.iter().map(|v| v + a).collect();
            assert!(ccc(&x, &shifted).unwrap() < 1.0);
        }
    }

    #[test]
    fn ccc_matches_formula_oracle_on_random_pairs() {
        let mut rng = Rng::new(404);
        for _ in 0..1000 {
            let n = 5 + (rng.next_u64() % 50) as usize;
            let x: Vec<f64> = (0..n).map(|_| rng.uniform(-2.0, 2.0)).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.uniform(-2.0, 2.0)).collect();
            let got = ccc(&x, &y).unwrap();
            let want = ccc_formula_oracle(&x, &y);
            approx(got, want, 1e-12);
            assert!(got.abs() <= pearson(&x, &y).unwrap().abs() + 1e-12);
        }
    }

    #[test]
    fn ccc_degenerate_inputs() {
        assert!(matches!(
            ccc(&[2.0, 2.0], &[2.0, 2.0]),
            Err(MetricError::Degenerate(_))
        ));
        // one constant series is still defined (ccc = 0)
        assert_eq!(ccc(&[1.0, 1.0], &[0.0, 2.0]).unwrap(), 0.0);
        assert!(matches!(
            ccc(&[1.0], &[1.0]),
            Err(MetricError::TooFewSamples(1))
        ));
        assert!(matches!(
            ccc(&[1.0, 2.0], &[1.0, 2.0, 3.0]),
            Err(MetricError::LengthMismatch { .. })
        ));
        assert!(matches!(
            ccc(&[f64::NAN, 1.0], &[0.0, 1.0]),
            Err(MetricError::NonFinite)
        ));
    }

    #[test]
    fn report_constructor_enforces_invariants() {
        assert!(MetricReport::new(0.5, 0.5, 0.5, 0.5, 1).is_err());
        assert!(MetricReport::new(1.5, 0.5, 0.5, 0.5, 10).is_err());
        assert!(MetricReport::new(0.9, -0.2, 0.95, -0.1, 10).is_ok());
    }
}
