/// Compensated (Neumaier) summation.
///
/// Accumulation stays fixed-order and sequential, so results are
/// run-to-run identical, while the compensation term keeps the error
/// independent of the number of addends. Line-loss probes are differenced
/// at tightly spaced abscissae, so plain sequential error would leak into
/// the fitted curvature.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensates_small_addends() {
        let mut s = CompensatedSum::new();
        s.add(1.0);
        for _ in 0..10 {
            s.add(1e-17);
        }
        assert_eq!(s.value(), 1.0 + 1e-16);
    }

    #[test]
    fn deterministic_for_fixed_order() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        let run = || {
            let mut s = CompensatedSum::new();
            for &x in &xs {
                s.add(x);
            }
            s.value()
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }
}
