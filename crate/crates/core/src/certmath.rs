//! Certification mathematics: power means, simultaneous multinomial
//! confidence bounds, and the Rényi-divergence certified-radius solver.
//!
//! The certified ℓ2 radius for top-two class probabilities `pA ≥ pB` at
//! noise level σ is
//!
//! ```text
//! L = sup_{α>1} sqrt( -(2σ²/α) · ln(1 - 2·M_1(pA,pB) + 2·M_{1-α}(pA,pB)) )
//! ```
//!
//! where `M_p` is the two-point power mean. σ factors out of the
//! supremum, so the solver maximizes the σ-free objective and scales —
//! radii are exactly linear in σ.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use thiserror::Error;

use crate::smoothing::SampleCounts;

/// α search domain: the objective is evaluated on (1, ALPHA_MAX].
const ALPHA_MIN_OFFSET: f64 = 1e-8;
const ALPHA_MAX: f64 = 1e6;
/// Coarse grid size before golden-section refinement.
const COARSE_GRID: usize = 400;
/// Relative width tolerance for golden-section refinement.
const GOLDEN_REL_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum CertError {
    #[error("power mean exponent 0 is unsupported")]
    UnsupportedExponent,
    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),
    #[error("argument order: pA {pa} < pB {pb}")]
    ArgumentOrder { pa: f64, pb: f64 },
    #[error("pA + pB = {0} exceeds 1")]
    ProbabilityMassExceeded(f64),
    #[error("alpha must be > 1, got {0}")]
    InvalidAlpha(f64),
    #[error("sigma must be >= 0, got {0}")]
    InvalidSigma(f64),
    #[error("confidence level beta must be in (0, 1), got {0}")]
    InvalidBeta(f64),
}

/// Conservative bounds on the top-two class probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBounds {
    pub pa_lower: f64,
    pub pb_upper: f64,
    pub beta: f64,
    /// CI construction, e.g. `"clopper-pearson-bonferroni"`.
    pub method: &'static str,
}

/// Certified ℓ2 radius with diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertifiedRadius {
    /// Radius lower bound in signal units; 0 when abstained.
    pub radius: f64,
    /// True when the bounds could not separate pA from pB.
    pub abstained: bool,
    /// Maximizing α (diagnostic; `None` when abstained).
    pub alpha_star: Option<f64>,
    /// True when the log argument underflowed to ≤ 0 somewhere in the
    /// search; such points are clamped to radius 0 (fail conservative).
    pub clamped: bool,
}

impl CertifiedRadius {
    fn abstained() -> Self {
        CertifiedRadius { radius: 0.0, abstained: true, alpha_star: None, clamped: false }
    }
}

/// Outcome of certifying one vote histogram.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Certification {
    pub prediction: usize,
    pub bounds: ConfidenceBounds,
    pub radius: CertifiedRadius,
}

/// Two-point power mean `M_p(a, b) = ((a^p + b^p)/2)^{1/p}`.
///
/// `p = 1` is the arithmetic mean; negative exponents take the limit
/// value 0 when either argument is 0. Exponent 0 is unsupported (the
/// radius bound only needs `M_1` and `M_{1-α}` with α > 1).
pub fn power_mean(exponent: f64, a: f64, b: f64) -> Result<f64, CertError> {
    if exponent == 0.0 {
        return Err(CertError::UnsupportedExponent);
    }
    for v in [a, b] {
        if !(0.0..=1.0).contains(&v) || v.is_nan() {
            return Err(CertError::InvalidProbability(v));
        }
    }
    Ok(power_mean_unchecked(exponent, a, b))
}

/// ln cosh(x), accurate to relative (not just absolute) precision.
fn ln_cosh(x: f64) -> f64 {
    let x = x.abs();
    if x < 1e-4 {
        // ln cosh x = x²/2 · (1 - x²/6 + O(x⁴))
        0.5 * x * x * (1.0 - x * x / 6.0)
    } else {
        x + (-2.0 * x).exp().ln_1p() - std::f64::consts::LN_2
    }
}

fn power_mean_unchecked(exponent: f64, a: f64, b: f64) -> f64 {
    if exponent == 1.0 {
        return (a + b) / 2.0;
    }
    if a == 0.0 || b == 0.0 {
        return if exponent < 0.0 {
            0.0
        } else {
            // 0^p = 0 for p > 0; the zero argument still contributes to
            // the mean.
            (0.5 * (a.powf(exponent) + b.powf(exponent))).powf(1.0 / exponent)
        };
    }
    // Log-space evaluation: a^p overflows f64 for the large negative
    // exponents the α-supremum visits (e.g. p = 1 - 10^6), and the naive
    // logmeanexp/p grouping loses ~|1e-16/p| of relative precision as
    // p → 0, which the supremum amplifies. With m = (ln a + ln b)/2 and
    // d = ln a - ln b:  ln M_p = m + ln cosh(p·d/2)/p,  every term of
    // which is computed to relative precision.
    let (la, lb) = (a.ln(), b.ln());
    let mean_log = 0.5 * (la + lb);
    let half_spread = 0.5 * exponent * (la - lb);
    (mean_log + ln_cosh(half_spread) / exponent).exp()
}

/// σ-free log argument `1 - 2·M_1 + 2·M_{1-α}` of the radius bound.
fn log_argument(pa: f64, pb: f64, alpha: f64) -> f64 {
    1.0 - (pa + pb) + 2.0 * power_mean_unchecked(1.0 - alpha, pa, pb)
}

fn validate_pair(pa: f64, pb: f64, sigma: f64) -> Result<(), CertError> {
    for v in [pa, pb] {
        if !(0.0..=1.0).contains(&v) || v.is_nan() {
            return Err(CertError::InvalidProbability(v));
        }
    }
    if pa < pb {
        return Err(CertError::ArgumentOrder { pa, pb });
    }
    if pa + pb > 1.0 + 1e-9 {
        return Err(CertError::ProbabilityMassExceeded(pa + pb));
    }
    if sigma < 0.0 || sigma.is_nan() {
        return Err(CertError::InvalidSigma(sigma));
    }
    Ok(())
}

/// Radius at one fixed α: `sqrt(max(0, -(2σ²/α)·ln(1 - 2M_1 + 2M_{1-α})))`.
///
/// A log argument ≤ 0 (numerical underflow at extreme pA) clamps to 0.
pub fn radius_at_alpha(pa: f64, pb: f64, sigma: f64, alpha: f64) -> Result<f64, CertError> {
    validate_pair(pa, pb, sigma)?;
    if alpha <= 1.0 || alpha.is_nan() {
        return Err(CertError::InvalidAlpha(alpha));
    }
    let arg = log_argument(pa, pb, alpha);
    if arg <= 0.0 {
        return Ok(0.0);
    }
    Ok(sigma * (-(2.0 / alpha) * arg.ln()).max(0.0).sqrt())
}

/// σ-free squared-radius objective at one α; 0 when the log argument
/// underflows. The boolean reports the underflow.
fn objective(pa: f64, pb: f64, alpha: f64) -> (f64, bool) {
    let arg = log_argument(pa, pb, alpha);
    if arg <= 0.0 {
        (0.0, true)
    } else {
        ((-(2.0 / alpha) * arg.ln()).max(0.0), false)
    }
}

/// Golden-section maximization of `f` on `[a, b]` to a relative width
/// tolerance. Returns `(x_max, f_max)`.
fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, rel_tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..200 {
        if (b - a) <= rel_tol * (a.abs() + b.abs()) {
            break;
        }
        if f1 >= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
        }
    }
    if f1 >= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Coarse α grid: log-spaced in (α - 1) so the supremum is resolved both
/// near the open boundary α → 1⁺ and at large α.
fn alpha_grid(points: usize) -> impl Iterator<Item = f64> {
    let lo = ALPHA_MIN_OFFSET.ln();
    let hi = (ALPHA_MAX - 1.0).ln();
    (0..points).map(move |j| 1.0 + (lo + (hi - lo) * j as f64 / (points - 1) as f64).exp())
}

/// Certified radius: numerically maximizes [`radius_at_alpha`] over
/// α ∈ (1, 10^6]. Abstains (radius 0) when `pa <= pb`.
///
/// σ multiplies the maximized σ-free objective, so radii are exactly
/// linear in σ and the maximizing α does not depend on it.
pub fn certified_radius(pa: f64, pb: f64, sigma: f64) -> Result<CertifiedRadius, CertError> {
    validate_pair(pa, pb, sigma)?;
    if pa <= pb {
        return Ok(CertifiedRadius::abstained());
    }

    let mut clamped = false;
    let mut best = (1.0 + ALPHA_MIN_OFFSET, f64::NEG_INFINITY);
    let grid: Vec<f64> = alpha_grid(COARSE_GRID).collect();
    for &alpha in &grid {
        let (value, under) = objective(pa, pb, alpha);
        clamped |= under;
        if value > best.1 {
            best = (alpha, value);
        }
    }

    // Refine on the bracket around the best grid point. Golden section
    // only probes interior points, so the bracket edges are evaluated
    // explicitly — the supremum can sit at the open boundary α → 1⁺.
    let idx = grid.partition_point(|&a| a < best.0).min(grid.len() - 1);
    let lo = if idx == 0 { 1.0 + ALPHA_MIN_OFFSET } else { grid[idx - 1] };
    let hi = if idx + 1 < grid.len() { grid[idx + 1] } else { ALPHA_MAX };
    let (alpha_star, refined) = golden_max(
        |alpha| objective(pa, pb, alpha).0,
        lo,
        hi,
        GOLDEN_REL_TOL,
    );
    let mut incumbent = (best.0, best.1);
    for (alpha, value) in [(alpha_star, refined), (lo, objective(pa, pb, lo).0), (hi, objective(pa, pb, hi).0)] {
        if value > incumbent.1 {
            incumbent = (alpha, value);
        }
    }
    let g_max = incumbent.1.max(0.0);

    Ok(CertifiedRadius {
        radius: sigma * g_max.sqrt(),
        abstained: false,
        alpha_star: Some(incumbent.0),
        clamped,
    })
}

/// One-sided Clopper–Pearson lower bound for `successes` out of `n` at
/// one-sided confidence `1 - gamma`.
pub fn clopper_pearson_lower(successes: u64, n: u64, gamma: f64) -> f64 {
    assert!(n >= 1 && successes <= n);
    if successes == 0 {
        return 0.0;
    }
    beta_quantile(gamma, successes as f64, (n - successes) as f64 + 1.0)
}

/// One-sided Clopper–Pearson upper bound for `successes` out of `n` at
/// one-sided confidence `1 - gamma`.
pub fn clopper_pearson_upper(successes: u64, n: u64, gamma: f64) -> f64 {
    assert!(n >= 1 && successes <= n);
    if successes == n {
        return 1.0;
    }
    beta_quantile(1.0 - gamma, successes as f64 + 1.0, (n - successes) as f64)
}

/// Beta(a, b) quantile by bisection on the regularized incomplete beta
/// function. Monotone, ~1e-14 accurate, no dependence on any generic
/// inverse-CDF machinery.
fn beta_quantile(p: f64, a: f64, b: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&p));
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    for _ in 0..200 {
        if hi - lo < 1e-15 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if beta_reg(a, b, mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Simultaneous bounds on the top-two class probabilities: exact
/// Clopper–Pearson per bound with a Bonferroni β/2 split, so the joint
/// coverage is at least `1 - beta`.
pub fn multinomial_ci(counts: &SampleCounts, beta: f64) -> Result<ConfidenceBounds, CertError> {
    if beta <= 0.0 || beta >= 1.0 || beta.is_nan() {
        return Err(CertError::InvalidBeta(beta));
    }
    let n = counts.total();
    let gamma = beta / 2.0;
    Ok(ConfidenceBounds {
        pa_lower: clopper_pearson_lower(counts.count(counts.top()), n, gamma),
        pb_upper: clopper_pearson_upper(counts.count(counts.runner_up()), n, gamma),
        beta,
        method: "clopper-pearson-bonferroni",
    })
}

/// Full certification of one vote histogram: prediction, conservative
/// bounds, and the certified radius. Abstains when the bounds overlap.
pub fn certify_counts(
    counts: &SampleCounts,
    sigma: f64,
    beta: f64,
) -> Result<Certification, CertError> {
    if sigma < 0.0 || sigma.is_nan() {
        return Err(CertError::InvalidSigma(sigma));
    }
    let bounds = multinomial_ci(counts, beta)?;
    let radius = if bounds.pa_lower <= bounds.pb_upper {
        CertifiedRadius::abstained()
    } else {
        certified_radius(bounds.pa_lower, bounds.pb_upper, sigma)?
    };
    Ok(Certification { prediction: counts.top(), bounds, radius })
}

/// One row of the radius surface: squared radius at fixed `(α, pA)` under
/// the conservative two-class convention `pB = 1 - pA`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceRow {
    pub alpha: f64,
    pub p_a: f64,
    pub l_squared: f64,
}

/// Tabulate `L²` against `pA` for each α, with `pB = 1 - pA`. Grid points
/// with `pA ≤ 0.5` certify nothing and emit 0.
pub fn emit_radius_surface(
    sigma: f64,
    alphas: &[f64],
    pa_grid: &[f64],
) -> Result<Vec<SurfaceRow>, CertError> {
    if sigma < 0.0 || sigma.is_nan() {
        return Err(CertError::InvalidSigma(sigma));
    }
    let mut rows = Vec::with_capacity(alphas.len() * pa_grid.len());
    for &alpha in alphas {
        if alpha <= 1.0 || alpha.is_nan() {
            return Err(CertError::InvalidAlpha(alpha));
        }
        for &pa in pa_grid {
            if !(0.0..=1.0).contains(&pa) || pa.is_nan() {
                return Err(CertError::InvalidProbability(pa));
            }
            let pb = 1.0 - pa;
            let l_squared = if pa <= pb {
                0.0
            } else {
                let r = radius_at_alpha(pa, pb, sigma, alpha)?;
                r * r
            };
            rows.push(SurfaceRow { alpha, p_a: pa, l_squared });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn power_mean_closed_forms() {
        assert!((power_mean(1.0, 0.6, 0.2).unwrap() - 0.4).abs() < 1e-15);
        assert!((power_mean(-1.0, 0.6, 0.2).unwrap() - 0.3).abs() < 1e-12);
        assert!((power_mean(-1.0, 0.5, 0.5).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn power_mean_zero_limit_and_errors() {
        assert_eq!(power_mean(-2.0, 0.6, 0.0).unwrap(), 0.0);
        assert!(matches!(power_mean(0.0, 0.5, 0.5), Err(CertError::UnsupportedExponent)));
        assert!(matches!(power_mean(1.0, 1.5, 0.5), Err(CertError::InvalidProbability(_))));
    }

    #[test]
    fn power_mean_survives_extreme_negative_exponents() {
        // 0.00757^(1 - 10^6) overflows f64 in direct evaluation; the
        // log-space path must return ~min(a, b).
        let m = power_mean(1.0 - 1e6, 0.99243, 0.00757).unwrap();
        assert!((m - 0.00757).abs() < 1e-7, "m = {m}");
    }

    #[test]
    fn radius_spot_value() {
        // Hand-derivable: M_1 = 0.4, M_{-1} = 0.3, arg = 0.8.
        let r = radius_at_alpha(0.6, 0.2, 1.0, 2.0).unwrap();
        assert!((r - (-(0.8f64).ln()).sqrt()).abs() < 1e-12);
        assert!((r - 0.47238).abs() < 1e-4);
    }

    #[test]
    fn radius_zero_cases() {
        assert_eq!(radius_at_alpha(0.5, 0.5, 1.0, 2.0).unwrap(), 0.0);
        assert_eq!(radius_at_alpha(0.6, 0.2, 0.0, 2.0).unwrap(), 0.0);
        assert!(matches!(
            radius_at_alpha(0.2, 0.6, 1.0, 2.0),
            Err(CertError::ArgumentOrder { .. })
        ));
        assert!(matches!(radius_at_alpha(0.6, 0.2, 1.0, 1.0), Err(CertError::InvalidAlpha(_))));
    }

    #[test]
    fn certified_radius_abstains_without_margin() {
        let r = certified_radius(0.5, 0.5, 0.4).unwrap();
        assert!(r.abstained);
        assert_eq!(r.radius, 0.0);
    }

    #[test]
    fn certified_radius_dominates_single_alpha() {
        let r = certified_radius(0.6, 0.2, 1.0).unwrap();
        let at2 = radius_at_alpha(0.6, 0.2, 1.0, 2.0).unwrap();
        assert!(!r.abstained);
        assert!(r.radius >= at2 - 1e-12, "sup {} below α=2 value {}", r.radius, at2);
    }

    #[test]
    fn certified_radius_sigma_linearity_is_exact() {
        for (pa, pb) in [(0.6, 0.2), (0.9, 0.05), (0.992, 0.008)] {
            let r1 = certified_radius(pa, pb, 0.37).unwrap();
            let r2 = certified_radius(pa, pb, 0.74).unwrap();
            let rel = (r2.radius - 2.0 * r1.radius).abs() / r1.radius.max(1e-300);
            assert!(rel < 1e-9, "relative error {rel}");
        }
    }

    /// Independent dense-grid oracle with its own log-space pointwise math.
    fn dense_grid_oracle(pa: f64, pb: f64, sigma: f64, points: usize) -> f64 {
        let (la, lb) = (pa.ln(), pb.ln());
        let mean_log = 0.5 * (la + lb);
        let spread = 0.5 * (la - lb);
        let lo = (1e-8f64).ln();
        let hi = (1e6 - 1.0f64).ln();
        let mut best: f64 = 0.0;
        for j in 0..points {
            let alpha = 1.0 + (lo + (hi - lo) * j as f64 / (points - 1) as f64).exp();
            let q = 1.0 - alpha;
            let m = if pb == 0.0 {
                0.0
            } else {
                let x = (q * spread).abs();
                let lcosh = if x < 1e-4 {
                    0.5 * x * x * (1.0 - x * x / 6.0)
                } else {
                    x + (-2.0 * x).exp().ln_1p() - std::f64::consts::LN_2
                };
                (mean_log + lcosh / q).exp()
            };
            let arg = 1.0 - (pa + pb) + 2.0 * m;
            if arg > 0.0 {
                let val = -(2.0 * sigma * sigma / alpha) * arg.ln();
                best = best.max(val);
            }
        }
        best.sqrt()
    }

    #[test]
    fn solver_matches_dense_grid_oracle() {
        use rand::Rng;
        let mut rng = crate::seeds::rng_from(20_240_601);
        for _ in 0..60 {
            let pb: f64 = rng.gen_range(0.0..0.45);
            let pa: f64 = rng.gen_range(pb..(1.0 - pb).min(pb + 0.9)).min(1.0 - pb);
            let sigma: f64 = rng.gen_range(0.05..2.0);
            let solver = certified_radius(pa, pb, sigma).unwrap();
            let oracle = dense_grid_oracle(pa, pb, sigma, 100_000);
            assert!(
                (solver.radius - oracle).abs() < 1e-6,
                "(pa={pa}, pb={pb}, sigma={sigma}): solver {} vs oracle {oracle}",
                solver.radius
            );
        }
    }

    #[test]
    fn clopper_pearson_closed_forms() {
        let beta = 0.001;
        let gamma = beta / 2.0;
        let lo = clopper_pearson_lower(100, 100, gamma);
        assert!((lo - gamma.powf(0.01)).abs() < 1e-9, "lo = {lo}");
        assert!((lo - 0.9268).abs() < 1e-4);
        let hi = clopper_pearson_upper(0, 100, gamma);
        assert!((hi - (1.0 - gamma.powf(0.01))).abs() < 1e-9, "hi = {hi}");
        assert_eq!(clopper_pearson_lower(0, 100, gamma), 0.0);
        assert_eq!(clopper_pearson_upper(100, 100, gamma), 1.0);
    }

    /// Exact binomial tail: P(X >= k) for X ~ Bin(n, p), small n only.
    fn binomial_upper_tail(k: u64, n: u64, p: f64) -> f64 {
        (k..=n)
            .map(|j| {
                let mut c = 1.0f64;
                for i in 0..j {
                    c *= (n - i) as f64 / (i + 1) as f64;
                }
                c * p.powi(j as i32) * (1.0 - p).powi((n - j) as i32)
            })
            .sum()
    }

    #[test]
    fn clopper_pearson_matches_binomial_tail_definition() {
        // The CP lower bound at one-sided level 1-γ solves
        // P(X >= k | p) = γ. Invert the exact tail by bisection and
        // compare for every k on small n.
        let gamma = 0.025;
        for n in [5u64, 10, 20] {
            for k in 1..=n {
                let mut lo = 0.0;
                let mut hi = 1.0;
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if binomial_upper_tail(k, n, mid) < gamma {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let oracle = 0.5 * (lo + hi);
                let got = clopper_pearson_lower(k, n, gamma);
                assert!((got - oracle).abs() < 1e-10, "k={k} n={n}: {got} vs {oracle}");
            }
        }
    }

    #[test]
    fn multinomial_ci_spot_values() {
        let counts = SampleCounts::from_counts(vec![1000, 0, 0]).unwrap();
        let b = multinomial_ci(&counts, 0.001).unwrap();
        assert!((b.pa_lower - 0.992428).abs() < 1e-5, "pa_lower {}", b.pa_lower);
        assert!((b.pb_upper - 0.007572).abs() < 1e-5, "pb_upper {}", b.pb_upper);
        let cert = certify_counts(&counts, 0.4, 0.001).unwrap();
        assert_eq!(cert.prediction, 0);
        assert!(!cert.radius.abstained);
        assert!(cert.radius.radius > 0.0);
    }

    #[test]
    fn certify_symmetric_counts_abstains() {
        let counts = SampleCounts::from_counts(vec![500, 500]).unwrap();
        let cert = certify_counts(&counts, 0.4, 0.001).unwrap();
        assert!(cert.radius.abstained);
        assert_eq!(cert.radius.radius, 0.0);
        assert_eq!(cert.prediction, 0);
        assert!(cert.bounds.pa_lower < 0.5 && cert.bounds.pb_upper > 0.5);
    }

    #[test]
    fn certify_sigma_doubling_doubles_radius() {
        let counts = SampleCounts::from_counts(vec![1000, 0]).unwrap();
        let r1 = certify_counts(&counts, 0.4, 0.001).unwrap().radius.radius;
        let r2 = certify_counts(&counts, 0.8, 0.001).unwrap().radius.radius;
        assert!((r2 - 2.0 * r1).abs() / r1 < 1e-9);
    }

    #[test]
    fn ci_joint_coverage_simulation() {
        use rand::Rng;
        // 10^4 multinomial draws at a known p; the joint event
        // {pa_lower <= pA_true and pb_upper >= pB_true} must hold with
        // frequency >= 1 - beta - 0.003.
        let p = [0.5, 0.3, 0.2];
        let beta = 0.001;
        let (n, draws) = (200u64, 10_000usize);
        let mut rng = crate::seeds::rng_from(4242);
        let mut hits = 0usize;
        for _ in 0..draws {
            let mut counts = vec![0u64; 3];
            for _ in 0..n {
                let u: f64 = rng.gen();
                let idx = if u < p[0] {
                    0
                } else if u < p[0] + p[1] {
                    1
                } else {
                    2
                };
                counts[idx] += 1;
            }
            let sc = SampleCounts::from_counts(counts).unwrap();
            let b = multinomial_ci(&sc, beta).unwrap();
            if b.pa_lower <= p[0] && b.pb_upper >= p[1] {
                hits += 1;
            }
        }
        let freq = hits as f64 / draws as f64;
        assert!(freq >= 1.0 - beta - 0.003, "joint coverage {freq}");
    }

    #[test]
    fn surface_is_monotone_and_zero_at_half() {
        let alphas = [1.5, 2.0, 4.0, 16.0];
        let pa_grid: Vec<f64> = (0..60).map(|i| 0.5 + 0.49 * i as f64 / 59.0).collect();
        let rows = emit_radius_surface(0.5, &alphas, &pa_grid).unwrap();
        assert_eq!(rows.len(), alphas.len() * pa_grid.len());
        for chunk in rows.chunks(pa_grid.len()) {
            assert_eq!(chunk[0].l_squared, 0.0);
            for w in chunk.windows(2) {
                assert!(
                    w[1].l_squared >= w[0].l_squared,
                    "not monotone at alpha {} pa {}",
                    w[1].alpha,
                    w[1].p_a
                );
            }
        }
        // Pointwise agreement with radius_at_alpha.
        for row in &rows {
            if row.p_a > 0.5 {
                let r = radius_at_alpha(row.p_a, 1.0 - row.p_a, 0.5, row.alpha).unwrap();
                assert!((row.l_squared - r * r).abs() < 1e-15);
            }
        }
    }

    proptest! {
        #[test]
        fn power_mean_between_min_and_max(
            p in prop_oneof![-50.0f64..-0.01, 0.01f64..50.0],
            a in 0.01f64..1.0,
            b in 0.01f64..1.0,
        ) {
            let m = power_mean(p, a, b).unwrap();
            prop_assert!(m >= a.min(b) - 1e-12 && m <= a.max(b) + 1e-12);
        }

        #[test]
        fn radius_monotone_in_pa_and_pb(
            pa in 0.4f64..0.95,
            pb in 0.0f64..0.3,
            bump in 0.001f64..0.04,
        ) {
            prop_assume!(pa > pb + 0.01);
            prop_assume!(pa + pb + bump <= 1.0);
            let base = certified_radius(pa, pb, 1.0).unwrap().radius;
            let more_pa = certified_radius(pa + bump, pb, 1.0).unwrap().radius;
            let more_pb = certified_radius(pa, pb + bump.min(pa - pb - 1e-6), 1.0).unwrap().radius;
            prop_assert!(more_pa >= base - 1e-9);
            prop_assert!(more_pb <= base + 1e-9);
        }

        #[test]
        fn conservative_bounds_shrink_radius(
            pa in 0.5f64..0.9,
            pb in 0.0f64..0.25,
            slack_a in 0.0f64..0.1,
            slack_b in 0.0f64..0.1,
        ) {
            prop_assume!(pa > pb + 0.12);
            prop_assume!(pa + pb <= 1.0);
            let pa_l = (pa - slack_a).max(0.0);
            let pb_u = (pb + slack_b).min(1.0);
            prop_assume!(pa_l > pb_u);
            prop_assume!(pa_l + pb_u <= 1.0);
            let tight = certified_radius(pa, pb, 0.7).unwrap().radius;
            let loose = certified_radius(pa_l, pb_u, 0.7).unwrap().radius;
            prop_assert!(loose <= tight + 1e-9);
        }
    }
}
