use crate::error::{Error, Result};

fn check(pairs: &[(f64, f64)]) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput);
    }
    if pairs.iter().any(|(p, a)| !p.is_finite() || !a.is_finite()) {
        return Err(Error::InvalidParameter("predictions and ratings must be finite".into()));
    }
    Ok(())
}

/// Root mean squared error over `(predicted, actual)` pairs.
pub fn rmse(pairs: &[(f64, f64)]) -> Result<f64> {
    check(pairs)?;
    let sq: f64 = pairs.iter().map(|(p, a)| (p - a) * (p - a)).sum();
    Ok((sq / pairs.len() as f64).sqrt())
}

/// Mean absolute error over `(predicted, actual)` pairs.
pub fn mae(pairs: &[(f64, f64)]) -> Result<f64> {
    check(pairs)?;
    let abs: f64 = pairs.iter().map(|(p, a)| (p - a).abs()).sum();
    Ok(abs / pairs.len() as f64)
}

/// Arithmetic mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
