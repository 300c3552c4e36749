//! Small sample-statistics helpers.

/// Sample mean and sum of squared deviations (Welford).
pub fn mean_and_m2(xs: &[f64]) -> (f64, f64) {
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (k, &x) in xs.iter().enumerate() {
        let delta = x - mean;
        mean += delta / (k + 1) as f64;
        m2 += delta * (x - mean);
    }
    (mean, m2)
}

/// Unbiased sample variance.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let (_, m2) = mean_and_m2(xs);
    m2 / (xs.len() as f64 - 1.0)
}

/// Delete-one jackknife standard error of the unbiased sample variance.
///
/// Needs at least three samples; returns infinity otherwise.
pub fn jackknife_variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 3 {
        return f64::INFINITY;
    }
    let nf = n as f64;
    let (mean, m2) = mean_and_m2(xs);
    // Leave-one-out: M2_(i) = M2 - (x_i - mean)^2 n / (n - 1).
    let loo: Vec<f64> = xs
        .iter()
        .map(|&x| {
            let d = x - mean;
            (m2 - d * d * nf / (nf - 1.0)).max(0.0) / (nf - 2.0)
        })
        .collect();
    let (_, loo_m2) = mean_and_m2(&loo);
    ((nf - 1.0) / nf * loo_m2).sqrt()
}

/// Ordinary least-squares fit y = a + b x.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub intercept: f64,
    pub slope: f64,
    /// Standard error of the slope from the residual scatter.
    pub slope_se: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> LinearFit {
    assert_eq!(x.len(), y.len());
    assert!(x.len() >= 2, "a line needs two points");
    let n = x.len() as f64;
    let (mx, sxx) = mean_and_m2(x);
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_se = if x.len() > 2 {
        let rss: f64 = x
            .iter()
            .zip(y)
            .map(|(a, b)| {
                let r = b - intercept - slope * a;
                r * r
            })
            .sum();
        (rss / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    LinearFit {
        intercept,
        slope,
        slope_se,
    }
}

/// Least-squares slope of ln y against ln x.
pub fn log_log_fit(x: &[f64], y: &[f64]) -> LinearFit {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    linear_fit(&lx, &ly)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn brute_jackknife(xs: &[f64]) -> f64 {
        let n = xs.len();
        let loo: Vec<f64> = (0..n)
            .map(|i| {
                let rest: Vec<f64> = xs
                    .iter()
                    .enumerate()
                    .filter(|&(k, _)| k != i)
                    .map(|(_, &v)| v)
                    .collect();
                sample_variance(&rest)
            })
            .collect();
        let mean = loo.iter().sum::<f64>() / n as f64;
        let ss: f64 = loo.iter().map(|v| (v - mean).powi(2)).sum();
        ((n as f64 - 1.0) / n as f64 * ss).sqrt()
    }

    #[test]
    fn variance_of_small_sample() {
        assert_relative_eq!(sample_variance(&[1.0, 2.0, 3.0, 4.0]), 5.0 / 3.0);
    }

    #[test]
    fn exact_line() {
        let x = [1.0, 2.0, 3.0, 5.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 0.5 * v).collect();
        let fit = linear_fit(&x, &y);
        assert_relative_eq!(fit.slope, -0.5, epsilon = 1e-14);
        assert_relative_eq!(fit.intercept, 2.0, epsilon = 1e-14);
        assert!(fit.slope_se < 1e-12);
    }

    #[test]
    fn inverse_law_has_slope_minus_one() {
        let n = [10.0, 20.0, 40.0, 100.0];
        let y: Vec<f64> = n.iter().map(|v| 3.0 / v).collect();
        assert_relative_eq!(log_log_fit(&n, &y).slope, -1.0, epsilon = 1e-12);
    }

    #[test]
    fn tiny_samples() {
        assert!(jackknife_variance(&[1.0, 2.0]).is_infinite());
    }

    proptest! {
        #[test]
        fn jackknife_matches_brute_force(xs in proptest::collection::vec(0u32..50, 3..40)) {
            let xs: Vec<f64> = xs.into_iter().map(f64::from).collect();
            let fast = jackknife_variance(&xs);
            let slow = brute_jackknife(&xs);
            prop_assert!((fast - slow).abs() <= 1e-9 * slow.max(1.0));
        }
    }
}
