//! Least-squares and bootstrap machinery plus the small descriptive helpers
//! the analyses share.

mod bootstrap;
mod ols;

pub use bootstrap::{bootstrap_percentile, user_bootstrap_variance, BootstrapCi};
pub use ols::{ols, Coefficient, DesignMatrix, RegressionResult};

use crate::error::{Error, Result};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance with denominator n - 1 (two-pass).
pub fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Rescales a column to mean 0 and sample standard deviation 1.
pub fn standardize(column: &[f64]) -> Result<Vec<f64>> {
    standardize_named(column, "column")
}

pub(crate) fn standardize_named(column: &[f64], name: &str) -> Result<Vec<f64>> {
    if column.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "cannot standardize `{name}` with {} value(s)",
            column.len()
        )));
    }
    let m = mean(column);
    let sd = sample_variance(column).sqrt();
    // Relative test: a constant column can pick up rounding-level spread.
    let scale = column.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if !(sd > 1e-12 * scale.max(f64::MIN_POSITIVE)) {
        return Err(Error::DegenerateColumn(name.to_string()));
    }
    Ok(column.iter().map(|x| (x - m) / sd).collect())
}

/// Pearson sample correlation.
pub fn pearson_correlation(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Data(format!(
            "correlation inputs differ in length ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::InsufficientData(
            "correlation needs at least two points".into(),
        ));
    }
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(Error::DegenerateColumn("x".into()));
    }
    if syy == 0.0 {
        return Err(Error::DegenerateColumn("y".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Linear-interpolation quantile of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if frac == 0.0 || lo + 1 >= sorted.len() {
        return sorted[lo];
    }
    sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
}

/// Same definition as [`quantile_sorted`], via selection; reorders `values`.
pub fn quantile_select(values: &mut [f64], q: f64) -> f64 {
    let n = values.len();
    let h = q * (n - 1) as f64;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    let (_, v_lo, upper) = values.select_nth_unstable_by(lo, f64::total_cmp);
    let v_lo = *v_lo;
    if frac == 0.0 || upper.is_empty() {
        return v_lo;
    }
    let v_hi = upper.iter().copied().fold(f64::INFINITY, f64::min);
    v_lo + frac * (v_hi - v_lo)
}
