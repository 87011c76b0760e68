//! Elements of Q_p with explicit valuation and capped relative precision.
//!
//! A nonzero scalar is stored as `p^val * unit + O(p^(val+relprec))` with
//! `unit` a unit of Z_p reduced modulo `p^relprec`. A scalar whose known
//! digits are all zero carries only an absolute-precision bound `O(p^abs)`;
//! comparisons against it are "equal at precision". Zero-testing without a
//! bound is not decidable, so there is no exact zero.

use crate::error::{Error, Result};
use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_traits::{One, Signed, Zero};

#[derive(Debug, Clone, PartialEq, Eq)]
enum Repr {
    /// O(p^abs_prec): all known digits vanish.
    Zero { abs_prec: i64 },
    /// p^val * unit + O(p^(val + relprec)), unit a p-adic unit mod p^relprec.
    Unit { val: i64, unit: BigUint, relprec: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PadicScalar {
    p: u64,
    repr: Repr,
}

fn pow_p(p: u64, k: u32) -> BigUint {
    BigUint::from(p).pow(k)
}

impl PadicScalar {
    /// Zero known to absolute precision `O(p^abs_prec)`.
    pub fn zero(p: u64, abs_prec: i64) -> Self {
        PadicScalar { p, repr: Repr::Zero { abs_prec } }
    }

    pub fn one(p: u64, relprec: u32) -> Self {
        PadicScalar::from_integer(p, 1.into(), relprec)
    }

    /// Build from an exact integer, keeping `relprec` digits of the unit part.
    pub fn from_integer(p: u64, n: BigInt, relprec: u32) -> Self {
        if n.is_zero() {
            // An exact integer zero is zero to any finite precision we track.
            return PadicScalar::zero(p, i64::MAX / 4);
        }
        let mut mag = n.magnitude().clone();
        let pb = BigUint::from(p);
        let mut val: i64 = 0;
        while (&mag % &pb).is_zero() {
            mag /= &pb;
            val += 1;
        }
        let modulus = pow_p(p, relprec);
        let mut unit = mag % &modulus;
        if n.is_negative() {
            unit = &modulus - unit;
        }
        PadicScalar { p, repr: Repr::Unit { val, unit, relprec } }
    }

    pub fn from_i64(p: u64, n: i64, relprec: u32) -> Self {
        PadicScalar::from_integer(p, n.into(), relprec)
    }

    /// Exact rational a/b (b prime to nothing in particular; p-part moves to val).
    pub fn from_rational(p: u64, num: i64, den: i64, relprec: u32) -> Result<Self> {
        if den == 0 {
            return Err(Error::InvalidInput("zero denominator".into()));
        }
        let a = PadicScalar::from_integer(p, num.into(), relprec + 4);
        let b = PadicScalar::from_integer(p, den.into(), relprec + 4);
        Ok(a.mul(&b.inv()?).with_relprec(relprec))
    }

    pub fn prime(&self) -> u64 {
        self.p
    }

    pub fn is_zero_at_precision(&self) -> bool {
        matches!(self.repr, Repr::Zero { .. })
    }

    /// Valuation; `None` means "zero at precision" (valuation beyond the bound).
    pub fn valuation(&self) -> Option<i64> {
        match &self.repr {
            Repr::Zero { .. } => None,
            Repr::Unit { val, .. } => Some(*val),
        }
    }

    /// Absolute precision: the value is known modulo p^abs_prec.
    pub fn abs_prec(&self) -> i64 {
        match &self.repr {
            Repr::Zero { abs_prec } => *abs_prec,
            Repr::Unit { val, relprec, .. } => val + *relprec as i64,
        }
    }

    pub fn relprec(&self) -> u32 {
        match &self.repr {
            Repr::Zero { .. } => 0,
            Repr::Unit { relprec, .. } => *relprec,
        }
    }

    pub fn unit_digits(&self) -> Option<&BigUint> {
        match &self.repr {
            Repr::Zero { .. } => None,
            Repr::Unit { unit, .. } => Some(unit),
        }
    }

    /// Truncate to at most `relprec` retained digits.
    pub fn with_relprec(&self, relprec: u32) -> Self {
        match &self.repr {
            Repr::Zero { .. } => self.clone(),
            Repr::Unit { val, unit, relprec: r } => {
                if *r <= relprec {
                    self.clone()
                } else {
                    let unit = unit % pow_p(self.p, relprec);
                    debug_assert!(!unit.is_zero());
                    PadicScalar { p: self.p, repr: Repr::Unit { val: *val, unit, relprec } }
                }
            }
        }
    }

    /// Truncate so the absolute precision is at most `abs`.
    pub fn with_abs_prec(&self, abs: i64) -> Self {
        match &self.repr {
            Repr::Zero { abs_prec } => PadicScalar::zero(self.p, (*abs_prec).min(abs)),
            Repr::Unit { val, unit, relprec } => {
                if val + *relprec as i64 <= abs {
                    self.clone()
                } else if *val >= abs {
                    PadicScalar::zero(self.p, abs)
                } else {
                    let keep = (abs - val) as u32;
                    let unit = unit % pow_p(self.p, keep);
                    if unit.is_zero() {
                        PadicScalar::zero(self.p, abs)
                    } else {
                        // Re-normalize: truncation may expose trailing p-divisibility.
                        PadicScalar::normalize(self.p, *val, unit, keep)
                    }
                }
            }
        }
    }

    /// Multiply by p^k exactly.
    pub fn shift_val(&self, k: i64) -> Self {
        match &self.repr {
            Repr::Zero { abs_prec } => PadicScalar::zero(self.p, abs_prec.saturating_add(k)),
            Repr::Unit { val, unit, relprec } => PadicScalar {
                p: self.p,
                repr: Repr::Unit { val: val + k, unit: unit.clone(), relprec: *relprec },
            },
        }
    }

    fn normalize(p: u64, val: i64, digits: BigUint, relprec: u32) -> Self {
        // digits interpreted at scale p^val, known mod p^(val+relprec).
        if digits.is_zero() {
            return PadicScalar::zero(p, val + relprec as i64);
        }
        let pb = BigUint::from(p);
        let mut v = 0u32;
        let mut d = digits;
        while (&d % &pb).is_zero() {
            d /= &pb;
            v += 1;
            if v >= relprec {
                return PadicScalar::zero(p, val + relprec as i64);
            }
        }
        PadicScalar {
            p,
            repr: Repr::Unit { val: val + v as i64, unit: d, relprec: relprec - v },
        }
    }

    pub fn add(&self, other: &PadicScalar) -> PadicScalar {
        assert_eq!(self.p, other.p, "mixed primes");
        let p = self.p;
        let abs = self.abs_prec().min(other.abs_prec());
        match (&self.repr, &other.repr) {
            (Repr::Zero { .. }, _) => other.with_abs_prec(abs),
            (_, Repr::Zero { .. }) => self.with_abs_prec(abs),
            (
                Repr::Unit { val: va, unit: ua, .. },
                Repr::Unit { val: vb, unit: ub, .. },
            ) => {
                let vmin = (*va).min(*vb);
                if abs <= vmin {
                    return PadicScalar::zero(p, abs);
                }
                let keep = (abs - vmin) as u32;
                let modulus = pow_p(p, keep);
                let da = (ua * pow_p(p, (va - vmin) as u32)) % &modulus;
                let db = (ub * pow_p(p, (vb - vmin) as u32)) % &modulus;
                let digits = (da + db) % &modulus;
                PadicScalar::normalize(p, vmin, digits, keep)
            }
        }
    }

    pub fn neg(&self) -> PadicScalar {
        match &self.repr {
            Repr::Zero { .. } => self.clone(),
            Repr::Unit { val, unit, relprec } => {
                let modulus = pow_p(self.p, *relprec);
                PadicScalar {
                    p: self.p,
                    repr: Repr::Unit { val: *val, unit: &modulus - unit, relprec: *relprec },
                }
            }
        }
    }

    pub fn sub(&self, other: &PadicScalar) -> PadicScalar {
        self.add(&other.neg())
    }

    pub fn mul(&self, other: &PadicScalar) -> PadicScalar {
        assert_eq!(self.p, other.p, "mixed primes");
        let p = self.p;
        match (&self.repr, &other.repr) {
            (Repr::Zero { abs_prec: a }, _) => {
                // O(p^a) * x = O(p^(a + v(x))); for zero x use its bound.
                let shift = other.valuation().unwrap_or_else(|| other.abs_prec());
                PadicScalar::zero(p, a.saturating_add(shift))
            }
            (_, Repr::Zero { abs_prec: b }) => {
                let shift = self.valuation().unwrap_or_else(|| self.abs_prec());
                PadicScalar::zero(p, b.saturating_add(shift))
            }
            (
                Repr::Unit { val: va, unit: ua, relprec: ra },
                Repr::Unit { val: vb, unit: ub, relprec: rb },
            ) => {
                let relprec = (*ra).min(*rb);
                let modulus = pow_p(p, relprec);
                let unit = (ua * ub) % &modulus;
                debug_assert!(!unit.is_zero());
                PadicScalar { p, repr: Repr::Unit { val: va + vb, unit, relprec } }
            }
        }
    }

    pub fn inv(&self) -> Result<PadicScalar> {
        match &self.repr {
            Repr::Zero { .. } => Err(Error::DivisionByZeroAtPrecision),
            Repr::Unit { val, unit, relprec } => {
                let modulus = pow_p(self.p, *relprec);
                let inv = mod_inverse(unit, &modulus)
                    .ok_or(Error::DivisionByZeroAtPrecision)?;
                Ok(PadicScalar {
                    p: self.p,
                    repr: Repr::Unit { val: -val, unit: inv, relprec: *relprec },
                })
            }
        }
    }

    pub fn div(&self, other: &PadicScalar) -> Result<PadicScalar> {
        Ok(self.mul(&other.inv()?))
    }

    /// Integer power, negative exponents through the inverse.
    pub fn pow_i64(&self, e: i64) -> Result<PadicScalar> {
        if e == 0 {
            return Ok(PadicScalar::one(self.p, self.relprec().max(1)));
        }
        let base = if e < 0 { self.inv()? } else { self.clone() };
        let mut acc = base.clone();
        let mut k = e.unsigned_abs() - 1;
        let mut sq = base;
        while k > 0 {
            if k & 1 == 1 {
                acc = acc.mul(&sq);
            }
            sq = sq.mul(&sq);
            k >>= 1;
        }
        Ok(acc)
    }

    /// `v(a - b) >= min(abs_prec)`: indistinguishable at the shared precision.
    pub fn eq_at_precision(&self, other: &PadicScalar) -> bool {
        self.sub(other).is_zero_at_precision()
    }

    /// Balanced integer representative `u * p^val` with `|u| <= p^relprec / 2`,
    /// as an exact BigInt times p^val. Panics if zero at precision.
    pub fn balanced_lift(&self) -> (BigInt, i64) {
        match &self.repr {
            Repr::Zero { .. } => (BigInt::zero(), 0),
            Repr::Unit { val, unit, relprec } => {
                let modulus = pow_p(self.p, *relprec);
                let half = &modulus / 2u32;
                let u: BigInt = if unit > &half {
                    BigInt::from(unit.clone()) - BigInt::from(modulus)
                } else {
                    BigInt::from(unit.clone())
                };
                (u, *val)
            }
        }
    }

    /// Decimal rendering of the balanced representative, e.g. `-2` or `18`,
    /// falling back to `u*p^v` notation for negative valuations.
    pub fn render(&self) -> String {
        match &self.repr {
            Repr::Zero { abs_prec } => format!("O({}^{})", self.p, abs_prec),
            Repr::Unit { val, .. } => {
                let (u, v) = self.balanced_lift();
                if v >= 0 {
                    let scaled = u * BigInt::from(self.p).pow(v as u32);
                    scaled.to_string()
                } else {
                    format!("{}*{}^{}", u, self.p, val)
                }
            }
        }
    }

    /// Reinterpret the stored digits as exact and extend the retained count.
    /// Only valid for scalars backed by exact data (integer constructors,
    /// Teichmueller lifts); widening measured data would fabricate digits.
    pub fn assume_exact_to(&self, relprec: u32) -> PadicScalar {
        match &self.repr {
            Repr::Zero { .. } => self.clone(),
            Repr::Unit { val, unit, relprec: r } => {
                if *r >= relprec {
                    self.clone()
                } else {
                    PadicScalar {
                        p: self.p,
                        repr: Repr::Unit { val: *val, unit: unit.clone(), relprec },
                    }
                }
            }
        }
    }

    /// Teichmueller representative congruent to this unit mod p.
    pub fn teichmuller(&self) -> Result<PadicScalar> {
        match &self.repr {
            Repr::Zero { .. } => Err(Error::ZeroInput),
            Repr::Unit { val, unit, relprec } => {
                if *val != 0 {
                    return Err(Error::InvalidInput("teichmuller needs a unit".into()));
                }
                let modulus = pow_p(self.p, *relprec);
                let mut x = unit.clone();
                for _ in 0..(*relprec as usize + 2) {
                    let next = x.modpow(&BigUint::from(self.p), &modulus);
                    if next == x {
                        break;
                    }
                    x = next;
                }
                Ok(PadicScalar { p: self.p, repr: Repr::Unit { val: 0, unit: x, relprec: *relprec } })
            }
        }
    }

    /// Iwasawa logarithm with the branch log(p) = 0 and log(roots of unity) = 0.
    ///
    /// The p-power part is stripped, torsion is killed by raising to
    /// (p-1)p^s (squaring at p = 2), the 1-unit log series is summed, and the
    /// exponent is divided back out.
    pub fn iwasawa_log(&self) -> Result<PadicScalar> {
        match &self.repr {
            Repr::Zero { .. } => Err(Error::ZeroInput),
            Repr::Unit { unit, relprec, .. } => {
                let p = self.p;
                let torsion_exp: u32 = if p == 2 { 2 } else { (p - 1) as u32 };
                let u = PadicScalar {
                    p,
                    repr: Repr::Unit { val: 0, unit: unit.clone(), relprec: *relprec },
                };
                let mut z = u.pow_i64(torsion_exp as i64)?;
                // Raise to p-th powers until v(z - 1) >= 2, so the log series
                // gains at least one digit per term.
                let mut s: u32 = 0;
                loop {
                    let e = z.sub(&PadicScalar::one(p, *relprec));
                    match e.valuation() {
                        None => return Ok(PadicScalar::zero(p, e.abs_prec())),
                        Some(v) if v >= 2 => break,
                        _ => {
                            z = z.pow_i64(p as i64)?;
                            s += 1;
                            if s > 3 * relprec {
                                return Err(Error::PrecisionExhausted(
                                    "1-unit normalization did not converge".into(),
                                ));
                            }
                        }
                    }
                }
                let e = z.sub(&PadicScalar::one(p, *relprec));
                let log_z = one_unit_log(&e)?;
                let divisor = PadicScalar::from_integer(
                    p,
                    BigInt::from(torsion_exp) * BigInt::from(p).pow(s),
                    relprec + s + 2,
                );
                log_z.div(&divisor)
            }
        }
    }
}

/// log(1 + e) for v(e) >= 2, summed until the increment falls below the
/// absolute precision carried by `e`.
fn one_unit_log(e: &PadicScalar) -> Result<PadicScalar> {
    let p = e.prime();
    if e.is_zero_at_precision() {
        return Ok(e.clone());
    }
    let target = e.abs_prec();
    let prec = e.relprec() + 8;
    let mut acc = PadicScalar::zero(p, target);
    let mut power = e.clone();
    let cap = 8 * prec as usize + 16;
    for k in 1..=(cap as i64) {
        let term = power.div(&PadicScalar::from_i64(p, k, prec))?;
        let term = if k % 2 == 0 { term.neg() } else { term };
        acc = acc.add(&term);
        if term.valuation().map_or(true, |v| v >= target) {
            return Ok(acc);
        }
        power = power.mul(e);
    }
    Err(Error::PrecisionExhausted("log series cap exceeded".into()))
}

fn mod_inverse(a: &BigUint, modulus: &BigUint) -> Option<BigUint> {
    let a = BigInt::from(a.clone());
    let m = BigInt::from(modulus.clone());
    let egcd = a.extended_gcd(&m);
    if !egcd.gcd.is_one() {
        return None;
    }
    let mut x = egcd.x % &m;
    if x.is_negative() {
        x += &m;
    }
    Some(x.magnitude().clone())
}

/// Generalized binomial coefficient C(c, k) = c(c-1)...(c-k+1)/k! for c in Z_p.
///
/// The result lies in Z_p; `PrecisionExhausted` when k! eats more digits than
/// the scalar carries.
pub fn padic_binomial(c: &PadicScalar, k: u64) -> Result<PadicScalar> {
    if c.valuation().map_or(false, |v| v < 0) {
        return Err(Error::InvalidInput("binomial base must lie in Z_p".into()));
    }
    let p = c.prime();
    if k == 0 {
        return Ok(PadicScalar::one(p, c.relprec().max(1)));
    }
    let mut num = PadicScalar::one(p, c.relprec().max(1));
    for j in 0..k {
        num = num.mul(&c.sub(&PadicScalar::from_integer(p, j.into(), c.relprec().max(1))));
        if num.is_zero_at_precision() {
            // An exact small-integer c with c < k: the product is a true zero.
            return Ok(num);
        }
    }
    let mut fact = BigInt::one();
    for j in 1..=k {
        fact *= BigInt::from(j);
    }
    let vfact = {
        // v_p(k!) by Legendre.
        let mut v = 0i64;
        let mut q = p as u64;
        while q <= k {
            v += (k / q) as i64;
            match q.checked_mul(p) {
                Some(nq) => q = nq,
                None => break,
            }
        }
        v
    };
    let fact = PadicScalar::from_integer(p, fact, num.relprec() + vfact as u32 + 1);
    let out = num.div(&fact)?;
    // The numerator is an integer multiple of k!, so the quotient stays in
    // Z_p; a negative computed valuation means the digits actually ran out.
    if out.valuation().map_or(false, |v| v < 0) {
        return Err(Error::PrecisionExhausted(format!(
            "k! consumed the retained digits (v_p(k!) = {})",
            vfact
        )));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factorization_example() {
        // p=3: 18 = 3^2 * 2.
        let x = PadicScalar::from_i64(3, 18, 40);
        assert_eq!(x.valuation(), Some(2));
        assert_eq!(x.unit_digits().unwrap(), &BigUint::from(2u32));
    }

    #[test]
    fn inverse_identity() {
        // p=3: (1+3)*(1+3)^-1 = 1 to precision N.
        let x = PadicScalar::from_i64(3, 4, 40);
        let prod = x.mul(&x.inv().unwrap());
        assert!(prod.eq_at_precision(&PadicScalar::one(3, 40)));
    }

    #[test]
    fn addition_cancellation_gives_zero_at_precision() {
        let x = PadicScalar::from_i64(5, 7, 30);
        let d = x.sub(&x);
        assert!(d.is_zero_at_precision());
        assert!(d.abs_prec() >= 30);
    }

    #[test]
    fn addition_precision_is_min_absolute() {
        let a = PadicScalar::from_i64(2, 3, 10); // abs prec 10
        let b = PadicScalar::from_i64(2, 8, 4); // val 3, abs prec 7
        assert_eq!(a.add(&b).abs_prec(), 7);
    }

    #[test]
    fn binomial_examples() {
        let one = PadicScalar::one(3, 40);
        assert!(padic_binomial(&PadicScalar::from_i64(3, 7, 40), 0).unwrap().eq_at_precision(&one));
        // C(4,2) = 6 at p=3.
        let c = padic_binomial(&PadicScalar::from_i64(3, 4, 40), 2).unwrap();
        assert!(c.eq_at_precision(&PadicScalar::from_i64(3, 6, 40)));
        // p=5, c = 6 at prec 20: C(6,3) = 20.
        let c = padic_binomial(&PadicScalar::from_i64(5, 6, 20), 3).unwrap();
        assert!(c.eq_at_precision(&PadicScalar::from_i64(5, 20, 20)));
    }

    #[test]
    fn iwasawa_log_of_p_is_zero() {
        let x = PadicScalar::from_i64(3, 3, 40);
        assert!(x.iwasawa_log().unwrap().is_zero_at_precision());
        let y = PadicScalar::from_i64(2, -2, 40);
        assert!(y.iwasawa_log().unwrap().is_zero_at_precision());
    }

    #[test]
    fn iwasawa_log_additive() {
        let a = PadicScalar::from_i64(3, 5, 40);
        let b = PadicScalar::from_i64(3, 7, 40);
        let lhs = a.mul(&b).iwasawa_log().unwrap();
        let rhs = a.iwasawa_log().unwrap().add(&b.iwasawa_log().unwrap());
        let diff = lhs.sub(&rhs);
        assert!(
            diff.valuation().map_or(true, |v| v >= 32),
            "additivity residual too small: {:?}",
            diff.valuation()
        );
    }

    #[test]
    fn teichmuller_fixed_by_power() {
        let t = PadicScalar::from_i64(5, 2, 30).teichmuller().unwrap();
        let t4 = t.pow_i64(4).unwrap();
        assert!(t4.eq_at_precision(&PadicScalar::one(5, 30)));
    }

    #[test]
    fn balanced_render() {
        let x = PadicScalar::from_i64(2, -2, 40);
        assert_eq!(x.render(), "-2");
        let y = PadicScalar::from_i64(3, 18, 40);
        assert_eq!(y.render(), "18");
    }
}
