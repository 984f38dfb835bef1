//! Log-space probability vectors.

/// `ln(1e-300)`: no stored log-probability is allowed below this.
pub const LOG_FLOOR: f64 = -690.775_527_898_213_7;

/// A normalized distribution over one variable, stored as log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Message(Vec<f64>);

impl Message {
    pub fn uniform(len: usize) -> Self {
        Self(vec![-(len as f64).ln(); len])
    }

    /// Normalizes arbitrary (unnormalized) log values.
    pub fn from_log(mut values: Vec<f64>) -> Self {
        normalize_log(&mut values);
        Self(values)
    }

    /// Normalizes nonnegative linear values.
    pub fn from_linear(values: &[f64]) -> Self {
        Self::from_log(values.iter().map(|p| p.ln()).collect())
    }

    /// Wraps values already produced by a normalizing routine.
    pub(crate) fn from_log_unchecked(values: Vec<f64>) -> Self {
        debug_assert!({
            let s: f64 = values.iter().map(|l| l.exp()).sum();
            (s - 1.0).abs() < 1e-9
        });
        Self(values)
    }

    pub fn log_values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_log_values(self) -> Vec<f64> {
        self.0
    }

    pub fn to_linear(&self) -> Vec<f64> {
        self.0.iter().map(|l| l.exp()).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Linear-space L1 distance.
    pub fn l1_distance(&self, other: &Message) -> f64 {
        l1_log(&self.0, &other.0)
    }
}

/// `ln Σ exp(v)`, stabilized by the maximum.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Normalizes log values in place so the linear entries sum to one, then floors.
///
/// An all-`-inf` input becomes uniform.
pub fn normalize_log(values: &mut [f64]) {
    let lse = log_sum_exp(values);
    if !lse.is_finite() {
        let u = -(values.len() as f64).ln();
        values.iter_mut().for_each(|v| *v = u);
        return;
    }
    for v in values.iter_mut() {
        *v = (*v - lse).max(LOG_FLOOR);
    }
}

/// Linear-space L1 distance between two log-space vectors.
pub fn l1_log(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x.exp() - y.exp()).abs()).sum()
}

/// Linear-space L1 distance between two linear-space vectors.
pub fn l1_linear(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Online log-sum-exp accumulator: subtracts the running maximum before exponentiating.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LogAccumulator {
    max: f64,
    sum: f64,
}

impl LogAccumulator {
    pub(crate) const fn new() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            sum: 0.0,
        }
    }

    #[inline]
    pub(crate) fn add(&mut self, term: f64) {
        if term <= self.max {
            self.sum += (term - self.max).exp();
        } else {
            self.sum = self.sum * (self.max - term).exp() + 1.0;
            self.max = term;
        }
    }

    pub(crate) fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}
