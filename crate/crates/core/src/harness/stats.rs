use serde::Serialize;

/// Mean across replicas with the half-width of a normal 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    /// `1.96·s/√n` with the sample standard deviation `s`; absent for one
    /// replica.
    pub ci_half_width: Option<f64>,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                ci_half_width: None,
                n,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let ci_half_width = (n > 1).then(|| {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            1.96 * var.sqrt() / (n as f64).sqrt()
        });
        Self {
            mean,
            ci_half_width,
            n,
        }
    }

    /// Half-width, or 0 for a single replica.
    pub fn half_width(&self) -> f64 {
        self.ci_half_width.unwrap_or(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_values() {
        let s = Stat::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        let sd = (5.0f64 / 3.0).sqrt();
        assert!((s.ci_half_width.unwrap() - 1.96 * sd / 2.0).abs() < 1e-15);
        assert_eq!(Stat::of(&[7.0]).ci_half_width, None);
        assert!(Stat::of(&[]).mean.is_nan());
    }
}
