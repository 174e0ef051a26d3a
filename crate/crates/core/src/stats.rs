//! Order-fixed reductions shared by the experiment modules.

/// Pairwise summation; the result depends only on the slice contents and
/// order, never on how work was scheduled.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 64;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let (a, b) = values.split_at(values.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Shifted by the first value, so a constant sample returns that constant exactly.
pub fn mean(values: &[f64]) -> f64 {
    let Some(&v0) = values.first() else { return f64::NAN };
    let shifted: Vec<f64> = values.iter().map(|v| v - v0).collect();
    v0 + pairwise_sum(&shifted) / values.len() as f64
}

/// Unbiased sample standard deviation (two-pass). `None` below two values.
pub fn sample_std(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let m = mean(values);
    let dev: Vec<f64> = values.iter().map(|v| (v - m) * (v - m)).collect();
    Some((pairwise_sum(&dev) / (values.len() - 1) as f64).sqrt())
}

/// Sample median; averages the two middle values for even counts.
pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Least-squares fit `y = intercept + slope * x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let mx = mean(x);
    let my = mean(y);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = r_squared(y, x.iter().map(|a| intercept + slope * a));
    (intercept, slope, r2)
}

/// Coefficient of determination; 1 when the residual is exactly zero.
pub fn r_squared(y: &[f64], predicted: impl Iterator<Item = f64>) -> f64 {
    let my = mean(y);
    let ss_res: f64 = y.iter().zip(predicted).map(|(a, b)| (a - b) * (a - b)).sum();
    let ss_tot: f64 = y.iter().map(|a| (a - my) * (a - my)).sum();
    if ss_res == 0.0 {
        1.0
    } else if ss_tot == 0.0 {
        0.0
    } else {
        1.0 - ss_res / ss_tot
    }
}
