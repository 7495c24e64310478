use super::EstimatorError;
use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorEllipse {
    pub semi_major: f64,
    pub semi_minor: f64,
    /// Angle of the major axis from +x, radians in (-pi/2, pi/2].
    pub orientation: f64,
    pub confidence: f64,
}

impl ErrorEllipse {
    pub fn area(&self) -> f64 {
        PI * self.semi_major * self.semi_minor
    }
}

/// Chi-square quantile with two degrees of freedom.
pub fn chi2_2dof_quantile(confidence: f64) -> f64 {
    -2.0 * (1.0 - confidence).ln()
}

pub fn error_ellipse_from_covariance(cov: &Matrix2<f64>, confidence: f64) -> Result<ErrorEllipse, EstimatorError> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(EstimatorError::InvalidConfig(format!("confidence must lie in (0, 1), got {confidence}")));
    }
    if !cov.iter().all(|v| v.is_finite()) || (cov[(0, 1)] - cov[(1, 0)]).abs() > 1e-9 * (cov[(0, 0)].abs() + cov[(1, 1)].abs()) {
        return Err(EstimatorError::DegenerateCovariance);
    }
    let (a, b, c) = (cov[(0, 0)], 0.5 * (cov[(0, 1)] + cov[(1, 0)]), cov[(1, 1)]);
    let mean = 0.5 * (a + c);
    let half = (0.25 * (a - c).powi(2) + b * b).sqrt();
    let (l1, l2) = (mean + half, mean - half);
    if !(l2 > 0.0) {
        return Err(EstimatorError::DegenerateCovariance);
    }
    let mut orientation = 0.5 * (2.0 * b).atan2(a - c);
    if orientation <= -PI / 2.0 {
        orientation += PI;
    }
    let k = chi2_2dof_quantile(confidence).sqrt();
    Ok(ErrorEllipse {
        semi_major: k * l1.sqrt(),
        semi_minor: k * l2.sqrt(),
        orientation,
        confidence,
    })
}

/// Ellipse of the sample covariance (n - 1 normalisation) of 2D points.
pub fn error_ellipse_from_samples(samples: &[(f64, f64)], confidence: f64) -> Result<ErrorEllipse, EstimatorError> {
    if samples.len() < 3 {
        return Err(EstimatorError::TooFewSamples(samples.len()));
    }
    let n = samples.len() as f64;
    let (mx, my) = samples.iter().fold((0.0, 0.0), |(x, y), s| (x + s.0, y + s.1));
    let (mx, my) = (mx / n, my / n);
    let mut cov = Matrix2::zeros();
    for (x, y) in samples {
        let (dx, dy) = (x - mx, y - my);
        cov[(0, 0)] += dx * dx;
        cov[(0, 1)] += dx * dy;
        cov[(1, 1)] += dy * dy;
    }
    cov[(1, 0)] = cov[(0, 1)];
    error_ellipse_from_covariance(&(cov / (n - 1.0)), confidence)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn isotropic_is_a_circle() {
        let e = error_ellipse_from_covariance(&(Matrix2::identity() * 9.0), 0.95).unwrap();
        let r = 3.0 * chi2_2dof_quantile(0.95).sqrt();
        assert_relative_eq!(e.semi_major, r, epsilon = 1e-12);
        assert_relative_eq!(e.semi_minor, r, epsilon = 1e-12);
        assert_relative_eq!(chi2_2dof_quantile(0.95), 5.991464547107979, epsilon = 1e-12);
    }

    #[test]
    fn diagonal_four_one_is_two_to_one() {
        let e = error_ellipse_from_covariance(&Matrix2::new(4.0, 0.0, 0.0, 1.0), 0.5).unwrap();
        assert_relative_eq!(e.semi_major / e.semi_minor, 2.0, epsilon = 1e-12);
        assert_eq!(e.orientation, 0.0);
        let e = error_ellipse_from_covariance(&Matrix2::new(1.0, 0.0, 0.0, 4.0), 0.5).unwrap();
        assert_relative_eq!(e.orientation, PI / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(error_ellipse_from_covariance(&Matrix2::new(1.0, 1.0, 1.0, 1.0), 0.9).is_err());
        assert!(error_ellipse_from_covariance(&Matrix2::new(1.0, 0.5, 0.0, 1.0), 0.9).is_err());
        assert!(error_ellipse_from_samples(&[(0.0, 0.0), (1.0, 1.0)], 0.9).is_err());
    }

    #[test]
    fn samples_agree_with_covariance() {
        // Correlated Gaussian with known covariance via a Cholesky factor.
        let cov = Matrix2::new(5.0, 1.5, 1.5, 2.0);
        let l = cov.cholesky().unwrap().l();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let samples: Vec<(f64, f64)> = (0..10_000)
            .map(|_| {
                let z = nalgebra::Vector2::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
                let v = l * z;
                (v.x + 3.0, v.y - 1.0)
            })
            .collect();
        let a = error_ellipse_from_covariance(&cov, 0.95).unwrap();
        let b = error_ellipse_from_samples(&samples, 0.95).unwrap();
        assert!((a.semi_major - b.semi_major).abs() / a.semi_major < 0.05);
        assert!((a.semi_minor - b.semi_minor).abs() / a.semi_minor < 0.05);
        assert!((a.orientation - b.orientation).abs() < 0.05);
    }
}
