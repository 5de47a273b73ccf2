//! Small numerical helpers shared across the crate: standard-normal
//! functions, seed derivation for parallel streams, empirical quantiles,
//! and truncated-normal sampling.

use rand::Rng;

const LN_2PI: f64 = 1.837877066409345483560659472811;

/// Standard normal CDF.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile function.
///
/// Panics if `p` is outside [0, 1]. Returns the infinities at the endpoints.
pub fn std_normal_quantile(p: f64) -> f64 {
    assert!((0.0..=1.0).contains(&p), "quantile probability out of range: {p}");
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    let mut x = -std::f64::consts::SQRT_2 * statrs::function::erf::erfc_inv(2.0 * p);
    // One Newton step tightens the library approximation to machine
    // precision away from the extreme tails.
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    if pdf > 1e-290 {
        x -= (std_normal_cdf(x) - p) / pdf;
    }
    x
}

/// Log density of N(mean, var) at `x`.
pub fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + var.ln() + d * d / var)
}

/// Logistic function 1 / (1 + e^{-x}).
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Logit function, inverse of [`logistic`].
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Derives an independent stream seed from a master seed and a stream index
/// (SplitMix64 finalizer). Used so parallel replicates and chains get
/// decorrelated, reproducible RNG streams.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master
        .wrapping_add(0x9e3779b97f4a7c15)
        .wrapping_add(stream.wrapping_mul(0xbf58476d1ce4e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// 1-based order-statistic index for the q-quantile of a sample of size `n`:
/// the ceil(q*n)-th smallest value, clamped to [1, n]. A small epsilon guard
/// keeps exact rational products (e.g. q = 2/3, n = 300) from rounding up.
pub fn order_stat_index(q: f64, n: usize) -> usize {
    assert!(n > 0);
    assert!((0.0..=1.0).contains(&q));
    let k = (q * n as f64 - 1e-9).ceil() as usize;
    k.clamp(1, n)
}

/// Empirical q-quantile of `values` under the order-statistic convention
/// above. Sorts a copy; fine for the sample sizes used here.
pub fn empirical_quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[order_stat_index(q, v.len()) - 1]
}

/// Draws from N(0, 1) truncated to the interval (lo, hi), by inverse-CDF in
/// whichever tail is better conditioned. Endpoints may be infinite. The
/// returned value is strictly inside the interval.
pub fn sample_std_normal_truncated<R: Rng + ?Sized>(lo: f64, hi: f64, rng: &mut R) -> f64 {
    debug_assert!(lo < hi);
    let x = if lo >= 0.0 {
        // Work in the upper tail: survival scale keeps precision for large lo.
        let s_lo = std_normal_cdf(-lo);
        let s_hi = if hi.is_infinite() { 0.0 } else { std_normal_cdf(-hi) };
        let s = rng.random_range(s_hi..s_lo);
        -std_normal_quantile(s)
    } else if hi <= 0.0 {
        let p_lo = if lo.is_infinite() { 0.0 } else { std_normal_cdf(lo) };
        let p_hi = std_normal_cdf(hi);
        let p = rng.random_range(p_lo..p_hi);
        std_normal_quantile(p.max(f64::MIN_POSITIVE))
    } else {
        let p_lo = if lo.is_infinite() { 0.0 } else { std_normal_cdf(lo) };
        let p_hi = if hi.is_infinite() { 1.0 } else { std_normal_cdf(hi) };
        let p = rng.random_range(p_lo..p_hi);
        std_normal_quantile(p)
    };
    // Rounding at the quantile boundary can land on an endpoint; nudge inside.
    if x <= lo {
        return next_up(lo);
    }
    if x >= hi {
        return next_down(hi);
    }
    x
}

fn next_up(x: f64) -> f64 {
    if x.is_infinite() {
        return x;
    }
    let bits = if x == 0.0 { 1 } else if x > 0.0 { x.to_bits() + 1 } else { x.to_bits() - 1 };
    f64::from_bits(bits)
}

fn next_down(x: f64) -> f64 {
    -next_up(-x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cdf_quantile_round_trip() {
        for &p in &[1e-10, 1e-4, 0.2, 1.0 / 3.0, 0.5, 0.75, 0.9999, 1.0 - 1e-10] {
            let x = std_normal_quantile(p);
            assert!((std_normal_cdf(x) - p).abs() < 1e-12, "p = {p}");
        }
        assert_eq!(std_normal_quantile(0.5), 0.0);
    }

    #[test]
    fn known_normal_values() {
        assert!((std_normal_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((std_normal_quantile(0.20) + 0.8416212335729143).abs() < 1e-9);
        assert!((normal_logpdf(0.0, 0.0, 1.0) + 0.5 * LN_2PI).abs() < 1e-14);
    }

    #[test]
    fn logistic_logit_inverse() {
        for &p in &[0.01, 0.1, 0.5, 0.9] {
            assert!((logistic(logit(p)) - p).abs() < 1e-12);
        }
        assert!((logit(0.10) + 2.1972245773362196).abs() < 1e-12);
    }

    #[test]
    fn order_stat_index_terciles() {
        // ceil(n/3) and ceil(2n/3), robust to float representation of 1/3.
        assert_eq!(order_stat_index(1.0 / 3.0, 300), 100);
        assert_eq!(order_stat_index(2.0 / 3.0, 300), 200);
        assert_eq!(order_stat_index(1.0 / 3.0, 10), 4);
        assert_eq!(order_stat_index(0.95, 200), 190);
        assert_eq!(order_stat_index(1.0, 7), 7);
    }

    #[test]
    fn empirical_quantile_on_1_to_300() {
        let v: Vec<f64> = (1..=300).map(|i| i as f64).collect();
        assert_eq!(empirical_quantile(&v, 1.0 / 3.0), 100.0);
        assert_eq!(empirical_quantile(&v, 2.0 / 3.0), 200.0);
    }

    #[test]
    fn derive_seed_decorrelates_streams() {
        let a = derive_seed(42, 0);
        let b = derive_seed(42, 1);
        assert_ne!(a, b);
        assert_eq!(a, derive_seed(42, 0));
    }

    #[test]
    fn truncated_normal_respects_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20_000 {
            let x = sample_std_normal_truncated(1.5, f64::INFINITY, &mut rng);
            assert!(x > 1.5);
            let y = sample_std_normal_truncated(-0.3, 0.4, &mut rng);
            assert!(y > -0.3 && y < 0.4);
            let z = sample_std_normal_truncated(f64::NEG_INFINITY, -2.0, &mut rng);
            assert!(z < -2.0);
        }
    }

    #[test]
    fn truncated_normal_matches_conditional_mean() {
        // E[X | X > a] = phi(a) / (1 - Phi(a)) for a standard normal.
        let a = 1.0;
        let expected = (-0.5f64).exp() / ((2.0 * std::f64::consts::PI).sqrt() * (1.0 - std_normal_cdf(a)));
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = 200_000;
        let mean: f64 = (0..m)
            .map(|_| sample_std_normal_truncated(a, f64::INFINITY, &mut rng))
            .sum::<f64>()
            / m as f64;
        assert!((mean - expected).abs() < 0.01, "mean {mean} vs {expected}");
    }
}
