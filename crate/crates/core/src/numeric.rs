//! Order-independent reductions. Values are sorted before a compensated sum so
//! that permuting the input (or changing the thread count that produced it)
//! never changes a single bit of the result.

pub(crate) fn sorted_sum(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    neumaier(&v)
}

pub(crate) fn neumaier(values: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for &x in values {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

pub(crate) fn stable_mean(values: &[f64]) -> f64 {
    sorted_sum(values) / values.len() as f64
}

/// Population (1/n) standard deviation around the order-independent mean.
pub(crate) fn population_std(values: &[f64]) -> f64 {
    let mean = stable_mean(values);
    let sq: Vec<f64> = values.iter().map(|x| (x - mean) * (x - mean)).collect();
    (sorted_sum(&sq) / values.len() as f64).sqrt()
}
