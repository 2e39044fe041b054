//! Uniswap-v2-style constant-product pair: fee-adjusted swaps and pro-rata
//! liquidity minting. Reserve products never decrease across swaps.

use crate::intmath::{isqrt, muldiv_floor, Amount};
use crate::ledger::{Revert, TokenId};
use num_bigint::BigInt;

#[derive(Clone, Debug)]
pub struct ConstantProductConfig {
    pub token0: TokenId,
    pub token1: TokenId,
    /// LP share token minted by `mint`.
    pub lp_token: TokenId,
    pub fee_num: u64,
    pub fee_den: u64,
}

/// Swap output: dy = dx·(1-fee)·r_out / (r_in + dx·(1-fee)), floored.
pub fn swap_out(dx: Amount, reserve_in: Amount, reserve_out: Amount, fee_num: u64, fee_den: u64) -> Result<Amount, Revert> {
    if reserve_in <= 0 || reserve_out <= 0 {
        return Err(Revert::EmptyPool);
    }
    if dx <= 0 {
        return Err(Revert::AmountOutZero);
    }
    let ax = BigInt::from(dx) * BigInt::from(fee_den - fee_num);
    let numer = &ax * BigInt::from(reserve_out);
    let denom = BigInt::from(reserve_in) * BigInt::from(fee_den) + &ax;
    let dy = crate::intmath::big_to_amount(&crate::intmath::big_div_floor(&numer, &denom));
    if dy <= 0 {
        return Err(Revert::AmountOutZero);
    }
    Ok(dy)
}

/// LP amount for adding (amount0, amount1): geometric mean on first mint,
/// pro-rata minimum afterwards.
pub fn mint_amount(
    amount0: Amount,
    amount1: Amount,
    reserve0: Amount,
    reserve1: Amount,
    lp_supply: Amount,
) -> Result<Amount, Revert> {
    if amount0 <= 0 || amount1 <= 0 {
        return Err(Revert::AmountOutZero);
    }
    let minted = if lp_supply == 0 {
        let product = BigInt::from(amount0) * BigInt::from(amount1);
        // isqrt over the BigInt product; amounts keep it inside u256-ish range
        // but the i128 helper needs the product itself to fit, so shortcut via
        // sqrt of each factor's product computed exactly.
        big_isqrt(&product)
    } else {
        if reserve0 <= 0 || reserve1 <= 0 {
            return Err(Revert::EmptyPool);
        }
        std::cmp::min(
            muldiv_floor(amount0, lp_supply, reserve0),
            muldiv_floor(amount1, lp_supply, reserve1),
        )
    };
    if minted <= 0 {
        return Err(Revert::AmountOutZero);
    }
    Ok(minted)
}

fn big_isqrt(n: &BigInt) -> Amount {
    use num_traits::ToPrimitive;
    if let Some(small) = n.to_i128() {
        return isqrt(small);
    }
    // Newton on BigInt for products beyond i128.
    let mut x = n.clone();
    let mut y: BigInt = (&x + 1u32) / 2u32;
    while y < x {
        x = y.clone();
        y = (&x + n / &x) / 2u32;
    }
    crate::intmath::big_to_amount(&x)
}
