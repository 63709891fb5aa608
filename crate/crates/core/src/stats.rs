//! Small summary statistics for evaluation reports.

/// One-sided sign test: probability of at least `wins` successes in `n` fair coin flips.
pub fn sign_test_one_sided(wins: usize, n: usize) -> f64 {
    if wins > n {
        return 0.0;
    }
    let mut total = 0.0;
    for k in wins..=n {
        total += binomial(n, k);
    }
    total / 2f64.powi(n as i32)
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Relative success `S_rel = S_robot / S_reference · 100`.
pub fn relative_success(robot: f64, reference: f64) -> f64 {
    if reference == 0.0 {
        return f64::NAN;
    }
    robot / reference * 100.0
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (n − 1 denominator); 0 for fewer than two values.
pub fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}
