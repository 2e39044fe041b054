//! Collateralized lending market that prices LP collateral off its pair's
//! spot reserves: lp_value = (r0·p0 + r1·p1) / lp_supply.
//!
//! That quote is manipulable by anyone who can move the pair's reserves,
//! which is exactly the flaw the LP-collateral fixtures exercise. Borrow
//! headroom is exposed as a read-only variable in micro-USD so candidate
//! actions can declare it as a state.

use crate::intmath::Amount;
use crate::ledger::TokenId;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Signed;

pub const MICRO_USD: u32 = 6;

#[derive(Clone, Debug)]
pub struct LendingConfig {
    /// Protocol id of the constant-product pair backing the LP collateral.
    pub lp_pool: String,
    pub lp_token: TokenId,
    pub collateral_factor_num: u64,
    pub collateral_factor_den: u64,
    pub borrowable: Vec<TokenId>,
}

/// USD value of the whole pair at current reserves, as an exact rational.
/// `reserve_values` pairs each reserve amount with (price, decimals).
pub fn pool_value_usd(reserves: &[(Amount, Option<BigRational>, u32)]) -> BigRational {
    let mut total = BigRational::from(BigInt::from(0));
    for (amount, price, decimals) in reserves {
        if let Some(p) = price {
            let scale = BigInt::from(10u32).pow(*decimals);
            total += BigRational::new(BigInt::from(*amount), scale) * p;
        }
    }
    total
}

/// Borrow headroom in micro-USD, floored:
/// cf · collateral_lp · pool_value / lp_supply − Σ debt value.
pub fn credit_micro_usd(
    collateral_lp: Amount,
    lp_supply: Amount,
    pool_value: &BigRational,
    cf_num: u64,
    cf_den: u64,
    debt_value_usd: &BigRational,
) -> Amount {
    if lp_supply <= 0 {
        return 0;
    }
    let cf = BigRational::new(BigInt::from(cf_num), BigInt::from(cf_den));
    let collateral_value =
        cf * BigRational::new(BigInt::from(collateral_lp), BigInt::from(lp_supply)) * pool_value;
    let headroom = collateral_value - debt_value_usd;
    let scaled = headroom * BigRational::from(BigInt::from(10u64.pow(MICRO_USD)));
    floor_rational(&scaled)
}

fn floor_rational(r: &BigRational) -> Amount {
    let f = r.floor();
    let int = f.numer() / f.denom();
    // Headroom magnitudes stay within USD scale; i128 is ample.
    let as_str = int.to_string();
    as_str.parse::<i128>().unwrap_or_else(|_| if r.is_negative() { i128::MIN } else { i128::MAX })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigInt;

    fn rat(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    #[test]
    fn headroom_at_par() {
        // Pool worth 1000 USD, supply 1000 LP, factor 3/4, 100 LP collateral.
        let value = rat(1000, 1);
        let credit = credit_micro_usd(100, 1000, &value, 3, 4, &rat(0, 1));
        assert_eq!(credit, 75_000_000);
    }

    #[test]
    fn debt_reduces_headroom() {
        let value = rat(1000, 1);
        let credit = credit_micro_usd(100, 1000, &value, 3, 4, &rat(50, 1));
        assert_eq!(credit, 25_000_000);
    }

    #[test]
    fn negative_headroom_floors_below_zero() {
        let value = rat(1000, 1);
        let credit = credit_micro_usd(100, 1000, &value, 3, 4, &rat(80, 1));
        assert!(credit < 0);
    }
}
