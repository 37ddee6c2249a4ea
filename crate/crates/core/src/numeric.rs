//! Small numeric helpers shared by every module: compensated summation in a
//! fixed order, and the fixed-precision float rendering used for outputs.

/// Neumaier-compensated running sum.
///
/// Values are accumulated strictly in the order they are pushed, so two runs
/// over the same sequence produce bit-identical totals.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.compensation += (self.sum - t) + value;
        } else {
            self.compensation += (value - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn total(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl Extend<f64> for CompensatedSum {
    fn extend<I: IntoIterator<Item = f64>>(&mut self, iter: I) {
        for v in iter {
            self.add(v);
        }
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = CompensatedSum::new();
        acc.extend(iter);
        acc
    }
}

/// Compensated sum of a slice, left to right.
pub fn sum(values: &[f64]) -> f64 {
    values.iter().copied().collect::<CompensatedSum>().total()
}

/// Arithmetic mean; `None` for an empty slice.
pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(sum(values) / values.len() as f64)
    }
}

/// Sample variance with the `n - 1` divisor. A single observation has variance 0.
pub fn sample_variance(values: &[f64]) -> Option<f64> {
    let m = mean(values)?;
    if values.len() < 2 {
        return Some(0.0);
    }
    let ss: CompensatedSum = values.iter().map(|v| (v - m) * (v - m)).collect();
    Some(ss.total() / (values.len() - 1) as f64)
}

/// Rounds to ten significant digits.
pub fn round_sig10(value: f64) -> f64 {
    if !value.is_finite() || value == 0.0 {
        return value;
    }
    format!("{value:.9e}").parse().unwrap_or(value)
}

/// Renders a float for JSON/CSV output: ten significant digits, shortest
/// plain-decimal form of the rounded value.
pub fn format_sig10(value: f64) -> String {
    let r = round_sig10(value);
    if r == 0.0 {
        // collapse -0
        return "0".to_string();
    }
    format!("{r}")
}
