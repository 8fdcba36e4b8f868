//! Thin helpers over `astro-float` for the multi-precision constant work.

use astro_float::{BigFloat, Consts, Exponent, Radix, RoundingMode, Sign, Word};
use num_bigint::BigUint;

use crate::error::{Error, Result};

pub const RM: RoundingMode = RoundingMode::ToEven;

/// Working precision plus the constant cache.
pub struct Ctx {
    pub p: usize,
    pub cc: Consts,
}

impl Ctx {
    pub fn new(bits: usize) -> Result<Self> {
        let cc = Consts::new().map_err(|e| Error::Precision(format!("{e:?}")))?;
        Ok(Ctx { p: bits.max(64), cc })
    }

    pub fn num(&self, v: f64) -> BigFloat {
        BigFloat::from_f64(v, self.p)
    }

    pub fn pi(&mut self) -> BigFloat {
        self.cc.pi(self.p, RM)
    }

    pub fn ln(&mut self, x: &BigFloat) -> BigFloat {
        x.ln(self.p, RM, &mut self.cc)
    }

    pub fn exp(&mut self, x: &BigFloat) -> BigFloat {
        x.exp(self.p, RM, &mut self.cc)
    }

    pub fn sin(&mut self, x: &BigFloat) -> BigFloat {
        x.sin(self.p, RM, &mut self.cc)
    }

    pub fn add(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.add(b, self.p, RM)
    }

    pub fn sub(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.sub(b, self.p, RM)
    }

    pub fn mul(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.mul(b, self.p, RM)
    }

    pub fn div(&self, a: &BigFloat, b: &BigFloat) -> BigFloat {
        a.div(b, self.p, RM)
    }

    /// `ln(1 + x)`, accurate for tiny `x` (including values whose exponential underflows).
    pub fn ln1p(&mut self, x: &BigFloat) -> BigFloat {
        if x.is_zero() {
            return x.clone();
        }
        match x.exponent() {
            // |x| < 2^-(p/2): two terms of the series are exact to working precision
            Some(e) if (e as i64) < -(self.p as i64) / 2 => {
                let half = self.mul(x, x).div(&self.num(2.0), self.p, RM);
                self.sub(x, &half)
            }
            _ => {
                let one = self.num(1.0);
                let s = self.add(&one, x);
                self.ln(&s)
            }
        }
    }

    pub fn to_decimal(&mut self, x: &BigFloat) -> String {
        x.format(Radix::Dec, RM, &mut self.cc)
            .unwrap_or_else(|_| x.to_string())
    }

    pub fn parse(&mut self, s: &str) -> Result<BigFloat> {
        let v = BigFloat::parse(s, Radix::Dec, self.p, RM, &mut self.cc);
        if v.is_nan() {
            return Err(Error::Precision(format!("cannot parse `{s}`")));
        }
        Ok(v)
    }

    pub fn from_biguint(&self, n: &BigUint) -> BigFloat {
        if n.bits() == 0 {
            return BigFloat::from_f64(0.0, self.p);
        }
        let words: Vec<Word> = n.to_u64_digits().into_iter().map(|w| w as Word).collect();
        let e = (words.len() * Word::BITS as usize) as Exponent;
        BigFloat::from_words(&words, Sign::Pos, e)
    }
}

/// Nearest `f64` (overflowing to infinity, underflowing to zero).
pub fn to_f64(x: &BigFloat) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x.is_inf_pos() {
        return f64::INFINITY;
    }
    if x.is_inf_neg() {
        return f64::NEG_INFINITY;
    }
    let Some((m, _, s, e, _)) = x.as_raw_parts() else {
        return f64::NAN;
    };
    if x.is_zero() || m.is_empty() {
        return 0.0;
    }
    let top = m[m.len() - 1] as f64;
    let next = if m.len() > 1 { m[m.len() - 2] as f64 } else { 0.0 };
    let frac = (top + next / 2f64.powi(64)) / 2f64.powi(64);
    let e = e as i64;
    let v = if e > 1100 {
        f64::INFINITY
    } else if e < -1200 {
        0.0
    } else {
        frac * 2f64.powi(e as i32)
    };
    if s == Sign::Neg {
        -v
    } else {
        v
    }
}

/// Exact conversion of a non-negative integer value.
pub fn to_biguint(x: &BigFloat) -> Result<BigUint> {
    if x.is_zero() {
        return Ok(BigUint::default());
    }
    let (m, _, s, e, _) = x
        .as_raw_parts()
        .ok_or_else(|| Error::Precision("not a finite value".into()))?;
    if s == Sign::Neg {
        return Err(Error::Precision("negative value".into()));
    }
    let digits: Vec<u64> = m.iter().map(|&w| w as u64).collect();
    let mant = BigUint::from_slice(
        &digits
            .iter()
            .flat_map(|w| [*w as u32, (*w >> 32) as u32])
            .collect::<Vec<u32>>(),
    );
    let total = (m.len() * 64) as i64;
    let e = e as i64;
    if e >= total {
        Ok(mant << (e - total) as u64)
    } else if e <= 0 {
        Err(Error::Precision("value below one is not an integer".into()))
    } else {
        let shift = (total - e) as u64;
        if mant.trailing_zeros().unwrap_or(0) < shift {
            return Err(Error::Precision("value is not an integer".into()));
        }
        Ok(mant >> shift)
    }
}

/// Bit length of the integer part, or 0 when `|x| < 1`.
pub fn int_bits(x: &BigFloat) -> usize {
    match x.exponent() {
        Some(e) if e > 0 && !x.is_zero() => e as usize,
        _ => 0,
    }
}
