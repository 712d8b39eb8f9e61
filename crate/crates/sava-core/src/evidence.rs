//! Evidence accumulation: e-processes, the always-valid directional
//! p-values derived from them, and the fixed-sample tests used by the
//! online-FDR baselines.
//!
//! Two e-process constructions are supported for a data stream `X_1, X_2, …`
//! testing the direction of the stream mean:
//!
//! * a Hoeffding-style supermartingale for bounded observations
//!   `|X| <= K`, with per-observation bet sizes
//!   `lambda_i = sqrt(8 ln(2/alpha) / (r_i ln(r_i + 1))) ∧ 1`
//!   and log-increment `lambda_i X_i / (2K) - lambda_i^2 / 8`;
//! * a Gaussian likelihood-ratio process for unit-variance streams with
//!   known effect magnitude `|mu|`, with log-increment `2 |mu| X_i`
//!   (the log ratio of the `N(|mu|, 1)` and `N(-|mu|, 1)` densities).
//!
//! The A-direction process grows when the mean is positive, the B-direction
//! process when it is negative. From the running maximum of each process the
//! directional p-value is `p = min(1, 1 / max_s E_s)`, which is
//! non-increasing by construction, so any stopping rule sees a valid level.
//!
//! All e-process arithmetic is carried in log space: raw products overflow
//! within a few hundred steps when the bet size sits near 1.

use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EvidenceError {
    #[error("lambda schedule requires r >= 1, got {0}")]
    ZeroCount(u64),
    #[error("alpha must lie in (0, 1), got {0}")]
    BadAlpha(f64),
    #[error("observation {x} outside the declared support [-{bound}, {bound}]")]
    OutOfSupport { x: f64, bound: f64 },
    #[error("bound K must be positive, got {0}")]
    BadBound(f64),
    #[error("effect magnitude must be positive, got {0}")]
    BadEffect(f64),
    #[error("z-test requires at least one sample")]
    EmptySample,
    #[error("sigma must be positive, got {0}")]
    BadSigma(f64),
}

/// Which e-process family backs a task's directional p-values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EvidenceKind {
    /// Bounded observations on `[-K, K]`; `alpha` feeds the bet-size
    /// schedule. Natural logarithms throughout.
    HoeffdingBounded { bound: f64, alpha: f64 },
    /// Unit-variance Gaussian stream with known `|mu|`.
    GaussianLr { mu_abs: f64 },
}

impl EvidenceKind {
    pub fn validate(&self) -> Result<(), EvidenceError> {
        match *self {
            EvidenceKind::HoeffdingBounded { bound, alpha } => {
                if bound <= 0.0 {
                    return Err(EvidenceError::BadBound(bound));
                }
                if !(alpha > 0.0 && alpha < 1.0) {
                    return Err(EvidenceError::BadAlpha(alpha));
                }
                Ok(())
            }
            EvidenceKind::GaussianLr { mu_abs } => {
                if mu_abs <= 0.0 {
                    return Err(EvidenceError::BadEffect(mu_abs));
                }
                Ok(())
            }
        }
    }
}

/// Bet-size schedule for the bounded-support e-process:
/// `min(sqrt(8 ln(2/alpha) / (r ln(r+1))), 1)`.
pub fn lambda_schedule(r: u64, alpha: f64) -> Result<f64, EvidenceError> {
    if r == 0 {
        return Err(EvidenceError::ZeroCount(r));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(EvidenceError::BadAlpha(alpha));
    }
    let raw = (8.0 * (2.0 / alpha).ln() / (r as f64 * ((r + 1) as f64).ln())).sqrt();
    Ok(raw.min(1.0))
}

/// Per-task evidence: the pair of log e-processes, their running maxima, and
/// the stored running-min directional p-values.
///
/// The p-values are stored rather than recomputed so the running-min
/// contract survives any caller access pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceState {
    pub log_e_a: f64,
    pub log_e_b: f64,
    pub max_log_e_a: f64,
    pub max_log_e_b: f64,
    /// Number of observations absorbed.
    pub r: u64,
    p_a: f64,
    p_b: f64,
}

impl Default for EvidenceState {
    fn default() -> Self {
        Self::new()
    }
}

impl EvidenceState {
    /// Fresh state: empty products, p-values at 1.
    pub fn new() -> Self {
        Self {
            log_e_a: 0.0,
            log_e_b: 0.0,
            max_log_e_a: 0.0,
            max_log_e_b: 0.0,
            r: 0,
            p_a: 1.0,
            p_b: 1.0,
        }
    }

    /// Current `(p_a, p_b)`. Pure read of the stored running minima.
    pub fn pvalues(&self) -> (f64, f64) {
        (self.p_a, self.p_b)
    }

    /// Absorb one observation under the given e-process family.
    pub fn observe(&mut self, x: f64, kind: &EvidenceKind) -> Result<(), EvidenceError> {
        match *kind {
            EvidenceKind::HoeffdingBounded { bound, alpha } => {
                self.observe_hoeffding(x, bound, alpha)
            }
            EvidenceKind::GaussianLr { mu_abs } => self.observe_gaussian_lr(x, mu_abs),
        }
    }

    /// Hoeffding-style update. Observations outside the support are
    /// rejected rather than clamped: clamping would silently change the
    /// tested hypothesis.
    pub fn observe_hoeffding(
        &mut self,
        x: f64,
        bound: f64,
        alpha: f64,
    ) -> Result<(), EvidenceError> {
        if bound <= 0.0 {
            return Err(EvidenceError::BadBound(bound));
        }
        if x.is_nan() || x.abs() > bound {
            return Err(EvidenceError::OutOfSupport { x, bound });
        }
        let r = self.r + 1;
        let lambda = lambda_schedule(r, alpha)?;
        let drift = lambda * lambda / 8.0;
        let bet = lambda * x / (2.0 * bound);
        self.push(bet - drift, -bet - drift);
        Ok(())
    }

    /// Gaussian likelihood-ratio update: log increments `±2 |mu| x`.
    pub fn observe_gaussian_lr(&mut self, x: f64, mu_abs: f64) -> Result<(), EvidenceError> {
        if mu_abs <= 0.0 {
            return Err(EvidenceError::BadEffect(mu_abs));
        }
        let inc = 2.0 * mu_abs * x;
        self.push(inc, -inc);
        Ok(())
    }

    fn push(&mut self, inc_a: f64, inc_b: f64) {
        self.r += 1;
        self.log_e_a += inc_a;
        self.log_e_b += inc_b;
        self.max_log_e_a = self.max_log_e_a.max(self.log_e_a);
        self.max_log_e_b = self.max_log_e_b.max(self.log_e_b);
        // max_log_e only grows, so these assignments are non-increasing.
        self.p_a = (-self.max_log_e_a).exp().min(1.0);
        self.p_b = (-self.max_log_e_b).exp().min(1.0);
    }
}

/// Outcome of a fixed-sample two-direction test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionalPvalues {
    /// Tests H0: mu <= 0 against mu > 0; small values favor arm A.
    pub p_a: f64,
    /// Tests H0: mu >= 0 against mu < 0; small values favor arm B.
    pub p_b: f64,
    /// Set when the sample was empty after zero removal, in which case both
    /// p-values are 1.
    pub degenerate: bool,
}

/// One-sided Wilcoxon signed-rank p-values.
///
/// Exact null distribution (sign-flip enumeration via the rank-sum count
/// recursion) when `n <= 25` and the absolute values are tie-free after zero
/// removal; otherwise the normal approximation with midranks, tie variance
/// correction, and continuity correction.
pub fn fixed_p_wilcoxon(samples: &[f64]) -> DirectionalPvalues {
    let nonzero: Vec<f64> = samples.iter().copied().filter(|x| *x != 0.0).collect();
    let n = nonzero.len();
    if n == 0 {
        return DirectionalPvalues {
            p_a: 1.0,
            p_b: 1.0,
            degenerate: true,
        };
    }

    // Midranks of |x|.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        nonzero[i]
            .abs()
            .partial_cmp(&nonzero[j].abs())
            .expect("non-NaN samples")
    });
    let mut ranks = vec![0.0; n];
    let mut tie_correction = 0.0;
    let mut has_ties = false;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && nonzero[order[j]].abs() == nonzero[order[i]].abs() {
            j += 1;
        }
        let tie_len = (j - i) as f64;
        if j - i > 1 {
            has_ties = true;
            tie_correction += (tie_len.powi(3) - tie_len) / 48.0;
        }
        let midrank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            ranks[idx] = midrank;
        }
        i = j;
    }

    let w_plus: f64 = nonzero
        .iter()
        .zip(&ranks)
        .filter(|(x, _)| **x > 0.0)
        .map(|(_, r)| *r)
        .sum();

    if n <= 25 && !has_ties {
        // Exact: counts[s] = number of sign patterns with rank sum s.
        let w = w_plus.round() as usize;
        let max_sum = n * (n + 1) / 2;
        let mut counts = vec![0u64; max_sum + 1];
        counts[0] = 1;
        for rank in 1..=n {
            for s in (rank..=max_sum).rev() {
                counts[s] += counts[s - rank];
            }
        }
        let total = (1u64 << n) as f64;
        let upper: u64 = counts[w..].iter().sum();
        let lower: u64 = counts[..=w].iter().sum();
        DirectionalPvalues {
            p_a: upper as f64 / total,
            p_b: lower as f64 / total,
            degenerate: false,
        }
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_correction;
        let sd = var.sqrt();
        let norm = Normal::standard();
        let p_a = 1.0 - norm.cdf((w_plus - mean - 0.5) / sd);
        let p_b = norm.cdf((w_plus - mean + 0.5) / sd);
        DirectionalPvalues {
            p_a: p_a.clamp(0.0, 1.0),
            p_b: p_b.clamp(0.0, 1.0),
            degenerate: false,
        }
    }
}

/// One-sided z-test p-values for a known-sigma mean:
/// `z = mean * sqrt(n) / sigma`, `p_a = 1 - Phi(z)`, `p_b = Phi(z)`.
pub fn fixed_p_ztest(samples: &[f64], sigma: f64) -> Result<DirectionalPvalues, EvidenceError> {
    if samples.is_empty() {
        return Err(EvidenceError::EmptySample);
    }
    if sigma <= 0.0 {
        return Err(EvidenceError::BadSigma(sigma));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let z = mean * n.sqrt() / sigma;
    let phi = Normal::standard().cdf(z);
    Ok(DirectionalPvalues {
        p_a: 1.0 - phi,
        p_b: phi,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const K: f64 = 2.0;
    const ALPHA: f64 = 0.05;

    fn hoeffding() -> EvidenceKind {
        EvidenceKind::HoeffdingBounded {
            bound: K,
            alpha: ALPHA,
        }
    }

    #[test]
    fn lambda_schedule_caps_at_one() {
        // Uncapped value at r = 1 is ~6.525.
        assert_eq!(lambda_schedule(1, 0.05).unwrap(), 1.0);
        // Cap case in general: 8 ln(2/alpha) >= r ln(r+1).
        assert_eq!(lambda_schedule(2, 0.05).unwrap(), 1.0);
    }

    #[test]
    fn lambda_schedule_matches_closed_form() {
        let got = lambda_schedule(100, 0.05).unwrap();
        assert!((got - 0.25287197586966476).abs() < 1e-12, "got {got}");
    }

    #[test]
    fn lambda_schedule_domain_errors() {
        assert_eq!(lambda_schedule(0, 0.05), Err(EvidenceError::ZeroCount(0)));
        assert!(matches!(
            lambda_schedule(3, 1.0),
            Err(EvidenceError::BadAlpha(_))
        ));
        assert!(matches!(
            lambda_schedule(3, 0.0),
            Err(EvidenceError::BadAlpha(_))
        ));
    }

    #[test]
    fn fresh_state_is_unit() {
        let s = EvidenceState::new();
        assert_eq!(s.r, 0);
        assert_eq!(s.log_e_a, 0.0);
        assert_eq!(s.log_e_b, 0.0);
        assert_eq!(s.pvalues(), (1.0, 1.0));
    }

    #[test]
    fn hoeffding_zero_observation() {
        let mut s = EvidenceState::new();
        s.observe(0.0, &hoeffding()).unwrap();
        // lambda = 1 at r = 1, so both increments are -1/8.
        assert!((s.log_e_a - (-0.125)).abs() < 1e-15);
        assert!((s.log_e_b - (-0.125)).abs() < 1e-15);
        // E-values below 1 never push p below 1.
        assert_eq!(s.pvalues(), (1.0, 1.0));
    }

    #[test]
    fn hoeffding_boundary_observation() {
        let mut s = EvidenceState::new();
        s.observe(2.0, &hoeffding()).unwrap();
        assert!((s.log_e_a - 0.375).abs() < 1e-15);
        assert!((s.log_e_b - (-0.625)).abs() < 1e-15);
    }

    #[test]
    fn hoeffding_rejects_out_of_support() {
        let mut s = EvidenceState::new();
        let err = s.observe(2.0001, &hoeffding()).unwrap_err();
        assert!(matches!(err, EvidenceError::OutOfSupport { .. }));
        // State untouched on rejection.
        assert_eq!(s.r, 0);
    }

    #[test]
    fn pvalue_tracks_running_max() {
        let mut s = EvidenceState::new();
        s.max_log_e_a = 40.0_f64.ln();
        // Force a refresh through a neutral-ish update; p_a is pinned by the
        // historical maximum regardless of later e-value decreases.
        s.observe(-2.0, &hoeffding()).unwrap();
        let (p_a, _) = s.pvalues();
        assert!((p_a - 0.025).abs() < 1e-12, "p_a = {p_a}");
    }

    #[test]
    fn gaussian_lr_increments() {
        let mut s = EvidenceState::new();
        s.observe(0.0, &EvidenceKind::GaussianLr { mu_abs: 0.1 })
            .unwrap();
        assert_eq!(s.log_e_a, 0.0);
        assert_eq!(s.log_e_b, 0.0);

        s.observe(1.0, &EvidenceKind::GaussianLr { mu_abs: 0.1 })
            .unwrap();
        assert!((s.log_e_a - 0.2).abs() < 1e-15);
        assert!((s.log_e_b - (-0.2)).abs() < 1e-15);
    }

    #[test]
    fn gaussian_lr_sequence_pvalue() {
        let kind = EvidenceKind::GaussianLr { mu_abs: 0.1 };
        let mut s = EvidenceState::new();
        s.observe(1.0, &kind).unwrap();
        s.observe(1.0, &kind).unwrap();
        assert!((s.max_log_e_a - 0.4).abs() < 1e-12);
        let (p_a, _) = s.pvalues();
        assert!((p_a - 0.6703200460356393).abs() < 1e-12);
    }

    #[test]
    fn log_space_matches_direct_product() {
        // exp(log_e) agrees with a direct product reference on a short run.
        let kind = hoeffding();
        let mut s = EvidenceState::new();
        let mut direct_a = 1.0_f64;
        let mut direct_b = 1.0_f64;
        let mut x = -1.9_f64;
        for r in 1..=100u64 {
            s.observe(x, &kind).unwrap();
            let lambda = lambda_schedule(r, ALPHA).unwrap();
            direct_a *= (lambda * x / (2.0 * K) - lambda * lambda / 8.0).exp();
            direct_b *= (-lambda * x / (2.0 * K) - lambda * lambda / 8.0).exp();
            assert!(
                (s.log_e_a.exp() - direct_a).abs() <= 1e-10 * direct_a.abs().max(1.0),
                "diverged at r={r}"
            );
            assert!((s.log_e_b.exp() - direct_b).abs() <= 1e-10 * direct_b.abs().max(1.0));
            x = -x * 0.98 + 0.01;
        }
    }

    #[test]
    fn wilcoxon_all_positive_exact() {
        let out = fixed_p_wilcoxon(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert!(!out.degenerate);
        assert!((out.p_a - 1.0 / 32.0).abs() < 1e-15);
        assert!((out.p_b - 1.0).abs() < 1e-15);
    }

    #[test]
    fn wilcoxon_sign_symmetry() {
        let xs = [0.3, -1.2, 2.4, 0.7, -0.1, 1.9];
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        let a = fixed_p_wilcoxon(&xs);
        let b = fixed_p_wilcoxon(&neg);
        assert!((a.p_a - b.p_b).abs() < 1e-12);
        assert!((a.p_b - b.p_a).abs() < 1e-12);
    }

    #[test]
    fn wilcoxon_symmetric_ties_balance() {
        // Midranked tie (1, -1) lands in the approximation branch and the
        // two one-sided p-values coincide.
        let out = fixed_p_wilcoxon(&[1.0, -1.0]);
        assert!((out.p_a - out.p_b).abs() < 1e-12);
    }

    #[test]
    fn wilcoxon_degenerate_all_zero() {
        let out = fixed_p_wilcoxon(&[0.0, 0.0, 0.0]);
        assert!(out.degenerate);
        assert_eq!((out.p_a, out.p_b), (1.0, 1.0));
    }

    #[test]
    fn wilcoxon_exact_agrees_with_sign_pattern_enumeration() {
        // Exhaustive oracle over all 2^n sign assignments for n <= 10.
        let base = [0.5, 1.25, 2.0, 2.75, 3.5, 4.25, 5.0, 5.75, 6.5, 7.25];
        for n in 1..=10usize {
            for mask in 0u32..(1 << n) {
                let xs: Vec<f64> = (0..n)
                    .map(|i| {
                        if mask >> i & 1 == 1 {
                            base[i]
                        } else {
                            -base[i]
                        }
                    })
                    .collect();
                let got = fixed_p_wilcoxon(&xs);

                // Oracle: rank i+1 belongs to |x| sorted ascending = base.
                let w_obs: usize = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| i + 1).sum();
                let mut ge = 0u64;
                let mut le = 0u64;
                for pat in 0u32..(1 << n) {
                    let w: usize = (0..n).filter(|i| pat >> i & 1 == 1).map(|i| i + 1).sum();
                    if w >= w_obs {
                        ge += 1;
                    }
                    if w <= w_obs {
                        le += 1;
                    }
                }
                let total = (1u64 << n) as f64;
                assert!((got.p_a - ge as f64 / total).abs() < 1e-12);
                assert!((got.p_b - le as f64 / total).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ztest_examples() {
        let out = fixed_p_ztest(&[0.5, -0.5], 1.0).unwrap();
        assert!((out.p_a - 0.5).abs() < 1e-12);
        assert!((out.p_b - 0.5).abs() < 1e-12);

        let out = fixed_p_ztest(&[1.0, 1.0, 1.0, 1.0], 1.0).unwrap();
        assert!((out.p_a - 0.02275013194817921).abs() < 1e-9);
        assert!((out.p_a + out.p_b - 1.0).abs() < 1e-12);

        assert!(matches!(
            fixed_p_ztest(&[], 1.0),
            Err(EvidenceError::EmptySample)
        ));
    }
}
