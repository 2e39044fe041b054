//! Yield vault with share accounting over "idle plus invested" underlying.
//!
//! The invested side can be valued through a linked pool's balance ratio.
//! That valuation is the deliberate weakness of the oracle-linked fixtures:
//! skewing the pool moves the share price within a single transaction. The
//! formula here is a stand-in for the closed-source converter it models:
//! invested_value = principal · (n · x_underlying) / Σx, floor division,
//! capped at the nominal principal. A balanced pool values the position at
//! exactly its principal; a skew can only mark it down, never up, so the
//! share price cannot be inflated past par to drain the idle buffer.

use crate::intmath::{muldiv_floor, Amount};
use crate::ledger::{Revert, TokenId};
use num_bigint::BigInt;

#[derive(Clone, Debug)]
pub struct VaultConfig {
    pub underlying: TokenId,
    pub share_token: TokenId,
    /// Protocol id of the pool whose balance ratio prices the invested
    /// position. Absent means the position is valued at face (no oracle).
    pub oracle_pool: Option<String>,
}

/// Value of the invested principal at the linked pool's current ratio,
/// never above the principal itself.
pub fn invested_value(principal: Amount, pool_balances: &[Amount], underlying_index: usize) -> Amount {
    let n = pool_balances.len() as i128;
    let total: BigInt = pool_balances.iter().map(|&b| BigInt::from(b)).sum();
    if total <= BigInt::from(0) {
        return 0;
    }
    let numer = BigInt::from(principal) * BigInt::from(n) * BigInt::from(pool_balances[underlying_index]);
    let marked = crate::intmath::big_to_amount(&crate::intmath::big_div_floor(&numer, &total));
    marked.min(principal)
}

/// Shares minted for a deposit: `amount` on first mint, otherwise pro-rata
/// against underlying-with-investment.
pub fn deposit_mint(amount: Amount, total_supply: Amount, with_investment: Amount) -> Result<Amount, Revert> {
    if amount <= 0 {
        return Err(Revert::AmountOutZero);
    }
    let minted = if total_supply == 0 {
        amount
    } else {
        if with_investment <= 0 {
            return Err(Revert::EmptyPool);
        }
        muldiv_floor(amount, total_supply, with_investment)
    };
    if minted <= 0 {
        return Err(Revert::AmountOutZero);
    }
    Ok(minted)
}

/// Underlying owed for burning `shares` against the pre-burn supply.
pub fn withdraw_out(shares: Amount, total_supply: Amount, with_investment: Amount) -> Result<Amount, Revert> {
    if shares <= 0 {
        return Err(Revert::AmountOutZero);
    }
    if total_supply <= 0 {
        return Err(Revert::EmptyPool);
    }
    let out = muldiv_floor(with_investment, shares, total_supply);
    if out <= 0 {
        return Err(Revert::AmountOutZero);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_deposit_mints_one_to_one() {
        assert_eq!(deposit_mint(100, 0, 0).unwrap(), 100);
    }

    #[test]
    fn deposit_pro_rata() {
        assert_eq!(deposit_mint(100, 1000, 2000).unwrap(), 50);
    }

    #[test]
    fn withdraw_pro_rata() {
        assert_eq!(withdraw_out(50, 1050, 2100).unwrap(), 100);
    }

    #[test]
    fn balanced_pool_values_at_par() {
        assert_eq!(invested_value(40_000_000, &[7_000, 7_000], 1), 40_000_000);
        assert_eq!(invested_value(40_000_000, &[5_000, 5_000, 5_000], 0), 40_000_000);
    }

    #[test]
    fn skew_against_underlying_lowers_value() {
        let par = invested_value(1_000_000, &[10_000, 10_000], 1);
        let skewed = invested_value(1_000_000, &[15_000, 6_000], 1);
        assert!(skewed < par);
    }

    #[test]
    fn skew_toward_underlying_never_marks_above_principal() {
        assert_eq!(invested_value(1_000_000, &[4_000, 16_000], 1), 1_000_000);
    }
}
