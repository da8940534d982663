//! Reference distributions for the test statistics.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use statrs::function::gamma::{gamma_lr, gamma_ur};

/// Upper tail `P(χ²_df > x)` via the regularized upper incomplete gamma.
pub fn chi_squared_sf(x: f64, df: usize) -> f64 {
    assert!(df > 0, "chi-squared needs positive degrees of freedom");
    if x.is_nan() {
        return f64::NAN;
    }
    if x <= 0.0 {
        return 1.0;
    }
    if x == f64::INFINITY {
        return 0.0;
    }
    gamma_ur(df as f64 / 2.0, x / 2.0).clamp(0.0, 1.0)
}

pub fn chi_squared_cdf(x: f64, df: usize) -> f64 {
    1.0 - chi_squared_sf(x, df)
}

/// `p`-quantile of `χ²_df`.
pub fn chi_squared_quantile(p: f64, df: usize) -> f64 {
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    ChiSquared::new(df as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(p)
}

/// Upper tail `P(N(0,1) > z)`.
///
/// Computed as `Q(1/2, z²/2)/2`; statrs' `erfc` loses about five digits.
pub fn normal_sf(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    let half_sq = 0.5 * z * z;
    if half_sq == 0.0 {
        return 0.5;
    }
    if z > 0.0 {
        if z == f64::INFINITY {
            return 0.0;
        }
        0.5 * gamma_ur(0.5, half_sq)
    } else {
        if z == f64::NEG_INFINITY {
            return 1.0;
        }
        0.5 + 0.5 * gamma_lr(0.5, half_sq)
    }
}

pub fn normal_cdf(z: f64) -> f64 {
    normal_sf(-z)
}

pub fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    Normal::standard().inverse_cdf(p)
}
