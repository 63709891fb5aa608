//! Depth outlier removal and ratio thresholding.

use crate::error::{invalid, Result};

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mu = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
    (mu, var.sqrt())
}

/// Indices of values inside the closed band `[μ − σ, μ + σ]`, in input order.
pub fn depth_inliers(depths: &[f64]) -> Result<Vec<usize>> {
    if depths.is_empty() {
        return invalid("depth outlier removal needs at least one value");
    }
    let (mu, sigma) = mean_std(depths);
    Ok((0..depths.len()).filter(|&i| (depths[i] - mu).abs() <= sigma).collect())
}

pub fn remove_depth_outliers(depths: &[f64]) -> Result<Vec<f64>> {
    Ok(depth_inliers(depths)?.into_iter().map(|i| depths[i]).collect())
}

/// `z_min + ratio (z_max − z_min)` over the given depths.
pub fn depth_threshold(depths: &[f64], ratio: f64) -> Result<f64> {
    if depths.is_empty() {
        return invalid("depth threshold needs at least one value");
    }
    if !(0.0..=1.0).contains(&ratio) {
        return invalid(format!("depth ratio {ratio} outside [0, 1]"));
    }
    let lo = depths.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = depths.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(lo + ratio * (hi - lo))
}

/// Threshold plus the mask of depths at or in front of it.
pub fn front_mask(depths: &[f64], ratio: f64) -> Result<(f64, Vec<bool>)> {
    let t = depth_threshold(depths, ratio)?;
    Ok((t, depths.iter().map(|&d| d <= t).collect()))
}
