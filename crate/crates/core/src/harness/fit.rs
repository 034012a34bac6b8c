use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Transform {
    Linear,
    LogLog,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// Largest absolute deviation from the line, in transformed coordinates.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FitError {
    #[error("a slope fit needs at least 3 points (got {0})")]
    TooFew(usize),
    #[error("log-log fit needs positive values (got ({0}, {1}))")]
    NonPositive(f64, f64),
    #[error("all x values coincide")]
    Degenerate,
}

/// Least-squares line through the (transformed) points.
pub fn fit_slope(points: &[(f64, f64)], transform: Transform) -> Result<SlopeFit, FitError> {
    if points.len() < 3 {
        return Err(FitError::TooFew(points.len()));
    }
    let pts: Vec<(f64, f64)> = points
        .iter()
        .map(|&(x, y)| match transform {
            Transform::Linear => Ok((x, y)),
            Transform::LogLog if x > 0.0 && y > 0.0 => Ok((x.ln(), y.ln())),
            Transform::LogLog => Err(FitError::NonPositive(x, y)),
        })
        .collect::<Result<_, _>>()?;
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(FitError::Degenerate);
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = pts
        .iter()
        .map(|p| (p.1 - (slope * p.0 + intercept)).abs())
        .fold(0.0, f64::max);
    Ok(SlopeFit {
        slope,
        intercept,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_power_law() {
        let pts: Vec<(f64, f64)> = [1.0, 2.0, 4.0, 8.0].iter().map(|&x| (x, x * x * x)).collect();
        let f = fit_slope(&pts, Transform::LogLog).unwrap();
        assert!((f.slope - 3.0).abs() < 1e-12);
        assert!(f.residual < 1e-12);
    }

    #[test]
    fn two_points_are_rejected() {
        assert_eq!(fit_slope(&[(1.0, 1.0), (2.0, 8.0)], Transform::LogLog), Err(FitError::TooFew(2)));
        assert!(matches!(
            fit_slope(&[(1.0, 1.0), (2.0, 0.0), (3.0, 1.0)], Transform::LogLog),
            Err(FitError::NonPositive(..))
        ));
    }

    #[test]
    fn perturbed_power_law() {
        let pts: Vec<(f64, f64)> = [1.0f64, 2.0, 4.0, 8.0]
            .iter()
            .map(|&x| (x, x.powi(3) * (1.0 + 0.01 * x.sin())))
            .collect();
        let f = fit_slope(&pts, Transform::LogLog).unwrap();
        assert!((f.slope - 3.0).abs() < 0.05);
    }

    proptest! {
        #[test]
        fn linear_fit_recovers_lines(a in -5.0f64..5.0, b in -5.0f64..5.0) {
            let pts: Vec<(f64, f64)> = (0..6).map(|k| (k as f64, a * k as f64 + b)).collect();
            let f = fit_slope(&pts, Transform::Linear).unwrap();
            prop_assert!((f.slope - a).abs() < 1e-10);
            prop_assert!((f.intercept - b).abs() < 1e-10);
        }
    }
}
