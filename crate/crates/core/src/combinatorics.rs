//! Exact integer combinatorics for hierarchy coefficients.

use num_integer::Integer;

/// `C(n, k)` in exact integer arithmetic; 0 when `k > n`.
///
/// Exact for every `n ≤ 125` (the largest intermediate is `C(n, k) · n`).
pub fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) is always divisible by (i + 1)
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Signed-argument binomial used by the SDE hierarchy, zero outside
/// `0 ≤ k ≤ n`.
pub fn binomial_i(n: i64, k: i64) -> u128 {
    if n < 0 || k < 0 || k > n {
        0
    } else {
        binomial(n as u64, k as u64)
    }
}

/// Falling factorial `n! / (n - k)!`; exact for `n ≤ 33`.
pub fn falling_factorial(n: u64, k: u64) -> u128 {
    assert!(k <= n, "falling factorial needs k ≤ n");
    ((n - k + 1)..=n).fold(1u128, |acc, x| acc * x as u128)
}

/// Reduced fraction `C(p, l) C(n-p, n-k-l) / C(n, k)` of the SDE hierarchy's
/// nonlinear term, as `(numerator, denominator)`.
pub fn sde_ratio(n: i64, k: i64, p: i64, l: i64) -> (u128, u128) {
    let num = binomial_i(p, l) * binomial_i(n - p, n - k - l);
    let den = binomial_i(n, k);
    assert!(den > 0, "sde_ratio needs 0 ≤ k ≤ n");
    let g = num.gcd(&den);
    if g == 0 {
        (0, 1)
    } else {
        (num / g, den / g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_binomials() {
        assert_eq!(binomial(5, 2), 10);
        assert_eq!(binomial(0, 0), 1);
        assert_eq!(binomial(3, 4), 0);
        assert_eq!(binomial(60, 30), 118_264_581_564_861_424);
    }

    #[test]
    fn pascal_identity_exact_to_sixty() {
        for k in 1..=60u64 {
            for i in 1..k {
                assert_eq!(binomial(k, i), binomial(k - 1, i - 1) + binomial(k - 1, i));
            }
            assert_eq!(binomial(k, 0), 1);
            assert_eq!(binomial(k, k), 1);
        }
    }

    #[test]
    fn falling_factorials() {
        assert_eq!(falling_factorial(5, 0), 1);
        assert_eq!(falling_factorial(5, 2), 20);
        assert_eq!(
            falling_factorial(30, 30),
            265_252_859_812_191_058_636_308_480_000_000
        );
    }

    #[test]
    fn sde_ratio_reduces() {
        assert_eq!(sde_ratio(2, 1, 1, 0), (1, 2));
        assert_eq!(sde_ratio(0, 0, 0, 0), (1, 1));
        assert_eq!(sde_ratio(3, 1, 0, 5), (0, 1));
    }
}
