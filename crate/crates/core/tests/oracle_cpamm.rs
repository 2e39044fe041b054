//! Cross-checks the constant-product pair math against oracles that
//! characterize each result as the greatest integer satisfying its defining
//! multiplicative inequality, found by bisection. The oracles never divide,
//! so they share no arithmetic route with the implementation.

use num_bigint::BigInt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use windfall::protocols::cpamm::{mint_amount, swap_out};

/// Greatest dy with dy·(r_in·fd + dx·(fd−fn)) ≤ dx·(fd−fn)·r_out, bisected
/// over [0, r_out]. Both sides are monotone in dy, so the predicate flips
/// exactly once.
fn bisect_swap(dx: i128, r_in: i128, r_out: i128, fee_num: u64, fee_den: u64) -> i128 {
    let ax = BigInt::from(dx) * BigInt::from(fee_den - fee_num);
    let rhs = &ax * BigInt::from(r_out);
    let scale = BigInt::from(r_in) * BigInt::from(fee_den) + &ax;
    let ok = |dy: i128| BigInt::from(dy) * &scale <= rhs;
    let (mut lo, mut hi) = (0i128, r_out);
    if ok(hi) {
        return hi;
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Greatest m with m² ≤ a0·a1 (first mint) or with both pro-rata bounds
/// m·r_i ≤ a_i·supply (ongoing mint). No a-priori ceiling exists (tiny
/// reserves against a large supply mint many units per token), so the
/// bound is found by doubling and the root by bisection.
fn bisect_mint(a0: i128, a1: i128, r0: i128, r1: i128, supply: i128) -> i128 {
    let ok: Box<dyn Fn(i128) -> bool> = if supply == 0 {
        let product = BigInt::from(a0) * BigInt::from(a1);
        Box::new(move |m: i128| BigInt::from(m) * BigInt::from(m) <= product)
    } else {
        let lhs0 = BigInt::from(a0) * BigInt::from(supply);
        let lhs1 = BigInt::from(a1) * BigInt::from(supply);
        Box::new(move |m: i128| {
            BigInt::from(m) * BigInt::from(r0) <= lhs0 && BigInt::from(m) * BigInt::from(r1) <= lhs1
        })
    };
    let mut hi = 1i128;
    while ok(hi) {
        hi = hi.checked_mul(2).expect("mint bound exceeds native width");
    }
    let mut lo = hi / 2;
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

fn log_uniform(rng: &mut ChaCha8Rng, lo_exp: f64, hi_exp: f64) -> i128 {
    10f64.powf(rng.gen_range(lo_exp..hi_exp)) as i128
}

const FEES: [(u64, u64); 5] = [(0, 1000), (3, 1000), (30, 10_000), (25, 10_000), (1, 100)];

#[test]
fn swap_matches_greatest_output_inequality() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xCAFE);
    let mut checked = 0;
    while checked < 500 {
        let r_in = log_uniform(&mut rng, 3.0, 15.0);
        let r_out = log_uniform(&mut rng, 3.0, 15.0);
        let dx = log_uniform(&mut rng, 0.0, 15.0);
        let (fee_num, fee_den) = FEES[rng.gen_range(0..FEES.len())];
        let oracle = bisect_swap(dx, r_in, r_out, fee_num, fee_den);
        match swap_out(dx, r_in, r_out, fee_num, fee_den) {
            Ok(dy) => assert_eq!(dy, oracle, "dx {dx} r_in {r_in} r_out {r_out} fee {fee_num}/{fee_den}"),
            // The implementation refuses dust trades whose output floors
            // to nothing; the oracle must agree that nothing was owed.
            Err(_) => assert_eq!(oracle, 0, "revert despite oracle output {oracle}"),
        }
        checked += 1;
    }
}

/// With the fee removed the swap output is exactly the largest integer
/// that keeps the reserve product from shrinking; one more unit of output
/// would break the invariant.
#[test]
fn fee_free_output_is_tight_against_the_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x1DEA);
    let mut checked = 0;
    while checked < 300 {
        let r_in = log_uniform(&mut rng, 3.0, 14.0);
        let r_out = log_uniform(&mut rng, 3.0, 14.0);
        let dx = log_uniform(&mut rng, 0.0, 14.0);
        let Ok(dy) = swap_out(dx, r_in, r_out, 0, 1000) else { continue };
        let k = BigInt::from(r_in) * BigInt::from(r_out);
        let keeps = |out: i128| {
            (BigInt::from(r_in) + BigInt::from(dx)) * (BigInt::from(r_out) - BigInt::from(out)) >= k
        };
        assert!(keeps(dy), "output shrank the product");
        assert!(!keeps(dy + 1), "output left value on the table");
        checked += 1;
    }
}

#[test]
fn charging_a_fee_never_increases_the_output() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xFEE);
    for _ in 0..200 {
        let r_in = log_uniform(&mut rng, 3.0, 14.0);
        let r_out = log_uniform(&mut rng, 3.0, 14.0);
        let dx = log_uniform(&mut rng, 1.0, 14.0);
        let free = swap_out(dx, r_in, r_out, 0, 1000).map_or(0, |v| v);
        let taxed = swap_out(dx, r_in, r_out, 30, 1000).map_or(0, |v| v);
        assert!(taxed <= free, "fee produced more output: {taxed} > {free}");
    }
}

#[test]
fn mint_matches_inequality_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x317);
    let mut checked = 0;
    while checked < 400 {
        let first = rng.gen_bool(0.3);
        let a0 = log_uniform(&mut rng, 0.0, 15.0);
        let a1 = log_uniform(&mut rng, 0.0, 15.0);
        let (r0, r1, supply) = if first {
            (0, 0, 0)
        } else {
            (
                log_uniform(&mut rng, 3.0, 15.0),
                log_uniform(&mut rng, 3.0, 15.0),
                log_uniform(&mut rng, 3.0, 15.0),
            )
        };
        let oracle = bisect_mint(a0, a1, r0, r1, supply);
        match mint_amount(a0, a1, r0, r1, supply) {
            Ok(minted) => assert_eq!(minted, oracle, "a0 {a0} a1 {a1} r0 {r0} r1 {r1} supply {supply}"),
            Err(_) => assert_eq!(oracle, 0, "revert despite oracle mint {oracle}"),
        }
        checked += 1;
    }
}

/// Amounts above ~1.3e19 push the first-mint product past i128 and onto
/// the big-integer square-root path; the oracle's inequality does not care
/// which path ran.
#[test]
fn first_mint_survives_products_beyond_native_width() {
    let a0 = 20_000_000_000_000_000_000i128;
    let a1 = 30_000_000_000_000_000_000i128;
    let minted = mint_amount(a0, a1, 0, 0, 0).unwrap();
    assert_eq!(minted, bisect_mint(a0, a1, 0, 0, 0));
    assert_eq!(minted, 24_494_897_427_831_780_981);
}

/// Values pinned from the inequality oracle; any drift is a behavior
/// change in the pair math, not noise.
#[test]
fn pinned_swap_and_mint_outputs() {
    let swaps: [(i128, i128, i128, u64, u64, i128); 4] = [
        (1_000_000, 123_456_789, 987_654_321, 3, 1000, 7_912_104),
        (500_000_000_000_000, 1_000_000_000_000_000, 700_000_000_000_000, 30, 10_000, 232_866_199_532_866),
        (777, 12_345, 67_890, 25, 10_000, 4_010),
        (999_999_999_999, 88_888_888, 44_444_444_444_444, 1, 100, 44_440_454_280_238),
    ];
    for (dx, r_in, r_out, fee_num, fee_den, expected) in swaps {
        assert_eq!(bisect_swap(dx, r_in, r_out, fee_num, fee_den), expected);
        assert_eq!(swap_out(dx, r_in, r_out, fee_num, fee_den).unwrap(), expected);
    }
    let mints: [(i128, i128, i128, i128, i128, i128); 3] = [
        (123_456_789, 987_654_321, 0, 0, 0, 349_188_532),
        (1_000_000, 2_000_000, 50_000_000, 60_000_000, 10_000_000, 200_000),
        (314_159, 271_828, 999_999_937, 999_999_733, 123_456_789, 33_559),
    ];
    for (a0, a1, r0, r1, supply, expected) in mints {
        assert_eq!(bisect_mint(a0, a1, r0, r1, supply), expected);
        assert_eq!(mint_amount(a0, a1, r0, r1, supply).unwrap(), expected);
    }
}
