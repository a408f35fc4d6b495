//! Canonical token helpers shared by the line-oriented file formats.
//!
//! Every format in this crate is bit-exact: a token is accepted only if
//! formatting the parsed value reproduces it.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TokenError {
    #[error("not a canonical unsigned integer")]
    NotInteger,
    #[error("value out of range")]
    OutOfRange,
    #[error("expected exactly {0} decimals")]
    Decimals(usize),
    #[error("not a finite non-negative number")]
    NotNumber,
}

/// Decimal digits without sign or leading zeros (except "0" itself).
pub fn parse_canonical_u64(s: &str) -> Result<u64, TokenError> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) || (s.len() > 1 && s.starts_with('0')) {
        return Err(TokenError::NotInteger);
    }
    s.parse().map_err(|_| TokenError::OutOfRange)
}

/// Non-negative fixed-point number with exactly `decimals` fraction digits.
pub fn parse_fixed(s: &str, decimals: usize) -> Result<f64, TokenError> {
    let (int, frac) = s.split_once('.').ok_or(TokenError::Decimals(decimals))?;
    if frac.len() != decimals || !frac.bytes().all(|b| b.is_ascii_digit()) {
        return Err(TokenError::Decimals(decimals));
    }
    parse_canonical_u64(int).map_err(|_| TokenError::NotNumber)?;
    let v: f64 = s.parse().map_err(|_| TokenError::NotNumber)?;
    if !v.is_finite() || format_fixed(v, decimals) != s {
        return Err(TokenError::NotNumber);
    }
    Ok(v)
}

pub fn format_fixed(v: f64, decimals: usize) -> String {
    format!("{v:.decimals$}")
}

/// Rounds to six decimals so values survive a text round-trip unchanged.
pub fn quantize6(v: f64) -> f64 {
    let q = (v * 1e6).round() / 1e6;
    // Re-parse the printed form: guarantees format(parse(format(q))) == format(q).
    format_fixed(q, 6).parse().unwrap_or(q)
}
