//! Integer helpers shared by the protocol models.
//!
//! Ledger amounts are `i128`; intermediate products routinely overflow that,
//! so the multiply-then-divide helpers round-trip through `BigInt`.

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{Signed, ToPrimitive, Zero};

pub type Amount = i128;

/// floor(a * b / d) computed exactly. All callers pass non-negative inputs;
/// `d` must be non-zero.
pub fn muldiv_floor(a: Amount, b: Amount, d: Amount) -> Amount {
    assert!(d != 0, "muldiv_floor division by zero");
    let num = BigInt::from(a) * BigInt::from(b);
    let den = BigInt::from(d);
    big_to_amount(&num.div_floor(&den))
}

fn div_floor_big(num: &BigInt, den: &BigInt) -> BigInt {
    num.div_floor(den)
}

/// Exact floor division for BigInt pairs, panicking on zero divisors.
pub fn big_div_floor(num: &BigInt, den: &BigInt) -> BigInt {
    assert!(!den.is_zero(), "big_div_floor division by zero");
    div_floor_big(num, den)
}

/// Converts a BigInt known to fit in an `Amount`. Protocol math keeps every
/// committed quantity below pool totals, which stay far inside i128 range.
pub fn big_to_amount(v: &BigInt) -> Amount {
    v.to_i128().expect("amount exceeds 128-bit range")
}

/// Integer square root, floor convention.
pub fn isqrt(n: Amount) -> Amount {
    assert!(n >= 0, "isqrt of negative value");
    if n < 2 {
        return n;
    }
    let mut x = n;
    let mut y = (x + 1) / 2;
    while y < x {
        x = y;
        y = (x + n / x) / 2;
    }
    x
}

/// FNV-1a over bytes; used for cheap state-identity hashes in fixtures and
/// the snapshot round-trip checks.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// abs(a - b) in BigInt space.
pub fn big_abs_diff(a: &BigInt, b: &BigInt) -> BigInt {
    (a - b).abs()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn muldiv_matches_small_cases() {
        assert_eq!(muldiv_floor(7, 3, 2), 10);
        assert_eq!(muldiv_floor(0, 5, 9), 0);
        assert_eq!(muldiv_floor(1_000_000_000_000, 1_000_000_000_000, 3), 333_333_333_333_333_333_333_333);
    }

    #[test]
    fn isqrt_exact_and_floor() {
        assert_eq!(isqrt(0), 0);
        assert_eq!(isqrt(1), 1);
        assert_eq!(isqrt(40_000), 200);
        assert_eq!(isqrt(40_001), 200);
        assert_eq!(isqrt(39_999), 199);
    }
}
