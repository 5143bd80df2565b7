use serde::Serialize;

use crate::error::{config_err, Result};

/// A PAC-Bayes upper bound on the population loss, split into its parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundReport {
    /// Maximum training loss over the ρ-neighbourhood.
    pub sharpness_term: f64,
    pub norm_term: f64,
    pub total: f64,
    pub w_norm_sq: f64,
    pub rho: f64,
    pub k: u64,
    pub n: u64,
    pub delta: f64,
}

/// `max_loss + sqrt((k·log(1 + ‖w‖²/ρ²·(1 + sqrt(log(n)/k))²) + 4·log(n/δ)
/// + 8·log(6n + 3k)) / (n − 1))` for `k` parameters and `n` training
/// examples, holding with probability `1 − δ`.
pub fn pac_bayes_bound(
    max_loss: f64,
    w_norm_sq: f64,
    rho: f64,
    k: u64,
    n: u64,
    delta: f64,
) -> Result<BoundReport> {
    if n < 2 {
        return config_err(format!("n must be at least 2, got {n}"));
    }
    if k < 1 {
        return config_err("k must be at least 1");
    }
    if !(delta > 0.0 && delta < 1.0) {
        return config_err(format!("delta must lie in (0, 1), got {delta}"));
    }
    if !(rho > 0.0 && rho.is_finite()) {
        return config_err(format!("rho must be positive, got {rho}"));
    }
    if !(w_norm_sq >= 0.0 && w_norm_sq.is_finite()) {
        return config_err(format!("squared weight norm must be >= 0, got {w_norm_sq}"));
    }
    if !max_loss.is_finite() {
        return config_err(format!("max loss must be finite, got {max_loss}"));
    }
    let (kf, nf) = (k as f64, n as f64);
    let spread = 1.0 + (nf.ln() / kf).sqrt();
    let complexity = kf * (w_norm_sq / (rho * rho) * spread * spread).ln_1p();
    let confidence = 4.0 * (nf / delta).ln();
    let slack = 8.0 * (6.0 * nf + 3.0 * kf).ln();
    let norm_term = ((complexity + confidence + slack) / (nf - 1.0)).sqrt();
    Ok(BoundReport {
        sharpness_term: max_loss,
        norm_term,
        total: max_loss + norm_term,
        w_norm_sq,
        rho,
        k,
        n,
        delta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_norm_drops_the_complexity_term() {
        let r = pac_bayes_bound(0.1, 0.0, 0.05, 10, 1000, 0.05).unwrap();
        let want = ((4.0 * (1000f64 / 0.05).ln() + 8.0 * 6030f64.ln()) / 999.0).sqrt();
        assert!((r.norm_term - want).abs() < 1e-15);
        assert_eq!(r.total, r.sharpness_term + r.norm_term);
    }

    #[test]
    fn doubling_the_norm_increases_the_term() {
        let mut prev = pac_bayes_bound(0.0, 0.5, 0.05, 10, 1000, 0.05)
            .unwrap()
            .norm_term;
        let mut w = 1.0;
        for _ in 0..40 {
            let r = pac_bayes_bound(0.0, w, 0.05, 10, 1000, 0.05).unwrap();
            assert!(r.norm_term > prev);
            prev = r.norm_term;
            w *= 2.0;
        }
    }

    #[test]
    fn domain_is_checked() {
        assert!(pac_bayes_bound(0.0, 1.0, 0.05, 10, 1, 0.05).is_err());
        assert!(pac_bayes_bound(0.0, 1.0, 0.05, 0, 10, 0.05).is_err());
        assert!(pac_bayes_bound(0.0, 1.0, 0.05, 1, 10, 1.0).is_err());
        assert!(pac_bayes_bound(0.0, 1.0, 0.0, 1, 10, 0.5).is_err());
        assert!(pac_bayes_bound(0.0, -1.0, 0.1, 1, 10, 0.5).is_err());
    }
}
