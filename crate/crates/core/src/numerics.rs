//! Small numerical helpers shared across modules.

/// `Γ(x)` for real `x`, including negative non-integers.
pub fn gamma(x: f64) -> f64 {
    libm::tgamma(x)
}

/// `ln |Γ(x)|`
pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// Neumaier-compensated running sum.
#[derive(Debug, Default, Clone, Copy)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl std::iter::FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = CompensatedSum::default();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

/// `1/Γ(x)`, returning exactly zero at the poles `x = 0, −1, −2, …`.
pub fn recip_gamma(x: f64) -> f64 {
    if x <= 0.0 && x == x.round() {
        0.0
    } else {
        1.0 / gamma(x)
    }
}

/// `n!` as a float.
pub fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let acc: CompensatedSum = [1.0, 1e-16, -1.0, 1e-16].into_iter().collect();
        assert!((acc.value() - 2e-16).abs() < 1e-30);
    }

    #[test]
    fn gamma_negative_half() {
        let pi = std::f64::consts::PI;
        assert!((gamma(-0.5) + 2.0 * pi.sqrt()).abs() < 1e-14);
        assert!((gamma(1.5) - 0.5 * pi.sqrt()).abs() < 4e-16);
        assert_eq!(recip_gamma(-2.0), 0.0);
        assert_eq!(recip_gamma(0.0), 0.0);
    }
}
