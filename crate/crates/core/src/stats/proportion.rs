//! Wilson score interval and the two-sided binomial test.

use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

/// Two-sided normal quantile for confidence level `conf`.
pub fn z_for(conf: f64) -> f64 {
    assert!(conf > 0.0 && conf < 1.0, "confidence must lie in (0,1)");
    Normal::standard().inverse_cdf(1.0 - (1.0 - conf) / 2.0)
}

/// Wilson score interval for `k` successes in `n` trials.
pub fn wilson_interval(k: u64, n: u64, conf: f64) -> (f64, f64) {
    assert!(n >= 1 && k <= n, "need 0 <= k <= n and n >= 1");
    wilson_with_z(k, n, z_for(conf))
}

pub fn wilson_with_z(k: u64, n: u64, z: f64) -> (f64, f64) {
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let centre = p + z2 / (2.0 * nf);
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt();
    let lo = if k == 0 { 0.0 } else { ((centre - half) / denom).max(0.0) };
    let hi = if k == n { 1.0 } else { ((centre + half) / denom).min(1.0) };
    (lo, hi)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinomialMethod {
    Exact,
    /// Normal approximation with continuity correction.
    NormalApprox,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BinomialTest {
    pub p_value: f64,
    pub method: BinomialMethod,
}

/// Default size above which the normal approximation is used.
pub const EXACT_LIMIT: u64 = 1_000_000;

/// Two-sided test of `H0: p = p0`, doubling the smaller tail and capping at 1.
pub fn binomial_two_sided(k: u64, n: u64, p0: f64) -> BinomialTest {
    binomial_two_sided_with_limit(k, n, p0, EXACT_LIMIT)
}

pub fn binomial_two_sided_with_limit(k: u64, n: u64, p0: f64, exact_limit: u64) -> BinomialTest {
    assert!(k <= n, "k must not exceed n");
    assert!((0.0..=1.0).contains(&p0), "p0 must lie in [0,1]");
    if n > exact_limit {
        let mean = n as f64 * p0;
        let sd = (n as f64 * p0 * (1.0 - p0)).sqrt();
        let p_value = if sd == 0.0 {
            if (k as f64 - mean).abs() < 0.5 {
                1.0
            } else {
                0.0
            }
        } else {
            let z = (((k as f64 - mean).abs() - 0.5) / sd).max(0.0);
            erfc(z / std::f64::consts::SQRT_2).min(1.0)
        };
        return BinomialTest {
            p_value,
            method: BinomialMethod::NormalApprox,
        };
    }
    let (lower, upper) = binomial_tails(k, n, p0);
    BinomialTest {
        p_value: (2.0 * lower.min(upper)).min(1.0),
        method: BinomialMethod::Exact,
    }
}

fn ln_pmf(i: u64, n: u64, p: f64) -> f64 {
    let (i, n) = (i as f64, n as f64);
    ln_gamma(n + 1.0) - ln_gamma(i + 1.0) - ln_gamma(n - i + 1.0) + i * p.ln() + (n - i) * (1.0 - p).ln()
}

/// `(P[X <= k], P[X >= k])` for `X ~ Bin(n, p)`.
///
/// The tail away from the mode is summed term by term from `k` outward, where
/// terms decrease monotonically; the other tail is its complement plus the
/// point mass at `k`.
pub fn binomial_tails(k: u64, n: u64, p: f64) -> (f64, f64) {
    if p == 0.0 {
        return (1.0, if k == 0 { 1.0 } else { 0.0 });
    }
    if p == 1.0 {
        return (if k == n { 1.0 } else { 0.0 }, 1.0);
    }
    let mode = ((n as f64 + 1.0) * p).floor() as u64;
    let pk = ln_pmf(k, n, p).exp();
    let odds = p / (1.0 - p);
    let mut sum = pk;
    let mut term = pk;
    if k <= mode {
        let mut i = k;
        while i > 0 {
            term *= i as f64 / ((n - i + 1) as f64 * odds);
            sum += term;
            i -= 1;
            if term < sum * 1e-18 {
                break;
            }
        }
        let lower = sum.min(1.0);
        (lower, (1.0 - lower + pk).clamp(0.0, 1.0))
    } else {
        let mut i = k;
        while i < n {
            term *= (n - i) as f64 / (i + 1) as f64 * odds;
            sum += term;
            i += 1;
            if term < sum * 1e-18 {
                break;
            }
        }
        let upper = sum.min(1.0);
        ((1.0 - upper + pk).clamp(0.0, 1.0), upper)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn round2(x: f64) -> f64 {
        (x * 100.0).round() / 100.0
    }

    #[test]
    fn z_value() {
        assert!((z_for(0.95) - 1.959964).abs() < 1e-6);
    }

    #[test]
    fn wilson_reported_intervals() {
        for (k, n, lo, hi) in [
            (16, 24, 0.47, 0.82),
            (15, 25, 0.41, 0.77),
            (15, 30, 0.33, 0.67),
            (13, 30, 0.27, 0.61),
        ] {
            let (l, h) = wilson_interval(k, n, 0.95);
            assert_eq!((round2(l), round2(h)), (lo, hi), "({k},{n})");
        }
    }

    #[test]
    fn wilson_boundaries() {
        assert_eq!(wilson_interval(0, 17, 0.95).0, 0.0);
        assert_eq!(wilson_interval(17, 17, 0.95).1, 1.0);
    }

    /// Direct summation with exact binomial coefficients in f64.
    fn exact_tails(k: u64, n: u64, p: f64) -> (f64, f64) {
        let pmf = |i: u64| {
            let mut c = 1.0f64;
            for j in 0..i {
                c = c * (n - j) as f64 / (j + 1) as f64;
            }
            c * p.powi(i as i32) * (1.0 - p).powi((n - i) as i32)
        };
        let lower = (0..=k).map(pmf).sum();
        let upper = (k..=n).map(pmf).sum();
        (lower, upper)
    }

    #[test]
    fn tails_match_direct_summation() {
        for n in [1u64, 5, 10, 37, 120] {
            for k in 0..=n {
                for p in [0.1, 0.5, 0.83] {
                    let (l, u) = binomial_tails(k, n, p);
                    let (el, eu) = exact_tails(k, n, p);
                    assert!((l - el).abs() <= 1e-12 + 1e-9 * el, "{k}/{n} p={p}: {l} vs {el}");
                    assert!((u - eu).abs() <= 1e-12 + 1e-9 * eu, "{k}/{n} p={p}: {u} vs {eu}");
                }
            }
        }
    }

    #[test]
    fn binomial_examples() {
        assert_eq!(binomial_two_sided(5, 50, 0.1).p_value, 1.0);
        assert!((binomial_two_sided(2, 10, 0.5).p_value - 0.109375).abs() < 1e-12);
        let p = binomial_two_sided(10, 10, 0.1).p_value;
        assert!((p - 2e-10).abs() < 1e-20, "{p}");
        let big = binomial_two_sided(1_020_000, 10_000_000, 0.1);
        assert_eq!(big.method, BinomialMethod::NormalApprox);
        assert!(big.p_value < 0.05);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn wilson_nests_and_covers(n in 1u64..500, frac in 0.0f64..=1.0) {
                let k = ((n as f64) * frac).floor() as u64;
                let (l95, h95) = wilson_interval(k, n, 0.95);
                let (l99, h99) = wilson_interval(k, n, 0.99);
                let p = k as f64 / n as f64;
                prop_assert!(0.0 <= l95 && l95 <= p && p <= h95 && h95 <= 1.0);
                prop_assert!(l99 <= l95 + 1e-15 && h95 <= h99 + 1e-15);
            }

            #[test]
            fn p_value_in_unit_interval_and_monotone(n in 1u64..150, p0 in 0.02f64..0.98) {
                let mean = n as f64 * p0;
                let mut ks: Vec<u64> = (0..=n).collect();
                ks.sort_by(|a, b| (*a as f64 - mean).abs().total_cmp(&(*b as f64 - mean).abs()));
                // along each side of the mean, p decreases moving outward
                let above: Vec<f64> = (0..=n).filter(|&k| k as f64 >= mean)
                    .map(|k| binomial_two_sided(k, n, p0).p_value).collect();
                let below: Vec<f64> = (0..=n).rev().filter(|&k| (k as f64) < mean)
                    .map(|k| binomial_two_sided(k, n, p0).p_value).collect();
                for side in [above, below] {
                    for w in side.windows(2) {
                        prop_assert!(w[1] <= w[0] + 1e-12);
                    }
                }
                for k in ks {
                    let p = binomial_two_sided(k, n, p0).p_value;
                    prop_assert!(p > 0.0 && p <= 1.0);
                }
            }
        }
    }
}
