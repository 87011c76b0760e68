//! Arithmetic in K_n = Q_p(zeta_{p^n}) through the Eisenstein presentation.
//!
//! The field is Q_p[x] / E_n(x) with E_n(x) = Phi_{p^n}(1+x), so the class of
//! x is pi_n = zeta_{p^n} - 1, the canonical uniformizer, and valuations can
//! be read off the Newton polygon of the pi-adic expansion.

use crate::error::{Error, Result};
use crate::padic::PadicScalar;
use num_bigint::BigInt;
use num_rational::Ratio;
use num_traits::{One, Zero};

pub type Rational = Ratio<i64>;

/// Degree of K_n over Q_p.
pub fn cyclo_degree(p: u64, level: u32) -> usize {
    ((p - 1) as usize) * (p as usize).pow(level - 1)
}

/// Coefficients of E_n(x) = Phi_{p^n}(1+x), constant term first, monic.
/// E_n is Eisenstein: constant term p, lower coefficients divisible by p.
pub fn eisenstein_coeffs(p: u64, level: u32) -> Vec<BigInt> {
    let d = cyclo_degree(p, level);
    let q = (p as usize).pow(level - 1);
    // sum_{j=0}^{p-1} (1+x)^(j*q)
    let mut out = vec![BigInt::zero(); d + 1];
    for j in 0..p as usize {
        let e = j * q;
        // add binomial row C(e, i)
        let mut c = BigInt::one();
        for i in 0..=e.min(d) {
            out[i] += &c;
            // next binomial
            c = c * BigInt::from((e - i) as u64) / BigInt::from((i + 1) as u64);
        }
    }
    debug_assert!(out[d].is_one());
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct CyclotomicScalar {
    p: u64,
    level: u32,
    /// Length-d polynomial in pi_n, constant term first.
    coeffs: Vec<PadicScalar>,
}

impl CyclotomicScalar {
    pub fn new(p: u64, level: u32, coeffs: Vec<PadicScalar>) -> Result<Self> {
        let d = cyclo_degree(p, level);
        if coeffs.len() != d {
            return Err(Error::InvalidInput(format!(
                "K_{} over Q_{} needs {} coefficients, got {}",
                level,
                p,
                d,
                coeffs.len()
            )));
        }
        Ok(CyclotomicScalar { p, level, coeffs })
    }

    pub fn zero(p: u64, level: u32, abs_prec: i64) -> Self {
        let d = cyclo_degree(p, level);
        CyclotomicScalar { p, level, coeffs: vec![PadicScalar::zero(p, abs_prec); d] }
    }

    pub fn from_padic(level: u32, c: &PadicScalar) -> Self {
        let p = c.prime();
        let d = cyclo_degree(p, level);
        let mut coeffs = vec![PadicScalar::zero(p, c.abs_prec()); d];
        coeffs[0] = c.clone();
        CyclotomicScalar { p, level, coeffs }
    }

    pub fn one(p: u64, level: u32, relprec: u32) -> Self {
        CyclotomicScalar::from_padic(level, &PadicScalar::one(p, relprec))
    }

    /// The uniformizer pi_n = zeta_{p^n} - 1 (the class of x).
    pub fn pi(p: u64, level: u32, relprec: u32) -> Self {
        let d = cyclo_degree(p, level);
        if d == 1 {
            // x = -e_0 after reduction (e.g. p=2, n=1: pi_1 = -2).
            let e = eisenstein_coeffs(p, level);
            let c = PadicScalar::from_integer(p, -e[0].clone(), relprec);
            CyclotomicScalar { p, level, coeffs: vec![c] }
        } else {
            let mut coeffs = vec![PadicScalar::zero(p, relprec as i64); d];
            coeffs[1] = PadicScalar::one(p, relprec);
            CyclotomicScalar { p, level, coeffs }
        }
    }

    pub fn prime(&self) -> u64 {
        self.p
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &[PadicScalar] {
        &self.coeffs
    }

    pub fn is_zero_at_precision(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_zero_at_precision())
    }

    fn check_compatible(&self, other: &CyclotomicScalar) {
        assert_eq!(self.p, other.p, "mixed primes");
        assert_eq!(self.level, other.level, "mixed levels");
    }

    pub fn add(&self, other: &CyclotomicScalar) -> CyclotomicScalar {
        self.check_compatible(other);
        let coeffs = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a.add(b))
            .collect();
        CyclotomicScalar { p: self.p, level: self.level, coeffs }
    }

    pub fn neg(&self) -> CyclotomicScalar {
        CyclotomicScalar {
            p: self.p,
            level: self.level,
            coeffs: self.coeffs.iter().map(|c| c.neg()).collect(),
        }
    }

    pub fn sub(&self, other: &CyclotomicScalar) -> CyclotomicScalar {
        self.add(&other.neg())
    }

    pub fn scale(&self, s: &PadicScalar) -> CyclotomicScalar {
        CyclotomicScalar {
            p: self.p,
            level: self.level,
            coeffs: self.coeffs.iter().map(|c| c.mul(s)).collect(),
        }
    }

    pub fn mul(&self, other: &CyclotomicScalar) -> CyclotomicScalar {
        self.check_compatible(other);
        let d = self.coeffs.len();
        let p = self.p;
        let relprec = self
            .coeffs
            .iter()
            .chain(&other.coeffs)
            .map(|c| c.relprec())
            .max()
            .unwrap_or(1)
            .max(1);
        let mut full = vec![PadicScalar::zero(p, i64::MAX / 4); 2 * d - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            if a.is_zero_at_precision() {
                // still propagates its bound through add below
            }
            for (j, b) in other.coeffs.iter().enumerate() {
                full[i + j] = full[i + j].add(&a.mul(b));
            }
        }
        // Reduce modulo the monic Eisenstein polynomial.
        let e: Vec<PadicScalar> = eisenstein_coeffs(p, self.level)
            .into_iter()
            .map(|c| PadicScalar::from_integer(p, c, relprec + 8))
            .collect();
        for i in (d..2 * d - 1).rev() {
            let top = full[i].clone();
            if top.is_zero_at_precision() && top.abs_prec() > (relprec as i64) * 4 {
                continue;
            }
            for j in 0..d {
                let sub = top.mul(&e[j]);
                full[i - d + j] = full[i - d + j].sub(&sub);
            }
        }
        full.truncate(d);
        CyclotomicScalar { p, level: self.level, coeffs: full }
    }

    pub fn pow_i64(&self, e: i64) -> Result<CyclotomicScalar> {
        let relprec = self.max_relprec();
        if e == 0 {
            return Ok(CyclotomicScalar::one(self.p, self.level, relprec));
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

    fn max_relprec(&self) -> u32 {
        self.coeffs.iter().map(|c| c.relprec()).max().unwrap_or(1).max(1)
    }

    /// v_p of the element, in (1/d)Z. The pi-adic Newton polygon of an
    /// Eisenstein presentation gives the exact value: the candidates
    /// v_p(c_i) + i/d have pairwise distinct fractional parts.
    pub fn valuation(&self) -> Option<Rational> {
        let d = self.coeffs.len() as i64;
        self.coeffs
            .iter()
            .enumerate()
            .filter_map(|(i, c)| c.valuation().map(|v| Rational::new(v * d + i as i64, d)))
            .min()
    }

    pub fn cyclo_valuation(&self) -> Result<Rational> {
        self.valuation().ok_or(Error::ZeroInput)
    }

    pub fn eq_at_precision(&self, other: &CyclotomicScalar) -> bool {
        self.sub(other).is_zero_at_precision()
    }

    /// Multiply by pi^k (k >= 0) without forming powers explicitly.
    fn mul_pi_power(&self, k: usize) -> CyclotomicScalar {
        let mut out = self.clone();
        let pi = CyclotomicScalar::pi(self.p, self.level, self.max_relprec() + 8);
        for _ in 0..k {
            out = out.mul(&pi);
        }
        out
    }

    /// Inverse of a nonzero element.
    ///
    /// Normalizes to a unit of Z_p[pi] by monomial and p-power shifts, runs
    /// Newton iteration x <- x(2 - bx) from the inverse of the constant term,
    /// then shifts back.
    pub fn inv(&self) -> Result<CyclotomicScalar> {
        let d = self.coeffs.len() as i64;
        let val = self.valuation().ok_or(Error::DivisionByZeroAtPrecision)?;
        // val = (k*d + m)/d with 0 <= m < d.
        let num = *val.numer();
        let den = *val.denom(); // divides d
        let scaled = num * (d / den); // val * d
        let m = scaled.rem_euclid(d);
        let k = (scaled - m) / d;
        let (b, unshift_pi, unshift_p) = if m == 0 {
            (self.scale(&p_power_scalar(self.p, -k, self.max_relprec() + 8)), 0usize, -k)
        } else {
            let b = self
                .mul_pi_power((d - m) as usize)
                .scale(&p_power_scalar(self.p, -k - 1, self.max_relprec() + 8));
            (b, (d - m) as usize, -k - 1)
        };
        // b is now a unit of Z_p[pi]; its constant term is a p-adic unit.
        let c0 = b.coeffs[0].clone();
        if c0.valuation() != Some(0) {
            return Err(Error::IllConditioned(
                "unit normalization failed; precision too low".into(),
            ));
        }
        let mut x = CyclotomicScalar::from_padic(self.level, &c0.inv()?);
        let one = CyclotomicScalar::one(self.p, self.level, self.max_relprec());
        let two = CyclotomicScalar::from_padic(
            self.level,
            &PadicScalar::from_i64(self.p, 2, self.max_relprec() + 8),
        );
        let max_iter = 2 * (64 - (d as u64 * self.max_relprec() as u64).leading_zeros()) + 8;
        let mut converged = false;
        for _ in 0..max_iter {
            let err = one.sub(&b.mul(&x));
            if err.is_zero_at_precision() {
                converged = true;
                break;
            }
            x = x.mul(&two.sub(&b.mul(&x)));
        }
        if !converged {
            let err = one.sub(&b.mul(&x));
            if !err.is_zero_at_precision() {
                return Err(Error::PrecisionExhausted("Newton inversion stalled".into()));
            }
        }
        // self = b * pi^(-unshift_pi) * p^(-unshift_p)  =>
        // self^-1 = x * pi^(unshift_pi) * p^(unshift_p).
        let out = x
            .mul_pi_power(unshift_pi)
            .scale(&p_power_scalar(self.p, unshift_p, self.max_relprec() + 8));
        Ok(out)
    }

    pub fn div(&self, other: &CyclotomicScalar) -> Result<CyclotomicScalar> {
        Ok(self.mul(&other.inv()?))
    }

    /// Iwasawa logarithm on K_n, branch log(p) = 0, log(mu_infty) = 0.
    pub fn iwasawa_log(&self) -> Result<CyclotomicScalar> {
        if self.is_zero_at_precision() {
            return Err(Error::ZeroInput);
        }
        let p = self.p;
        let d = self.coeffs.len() as i64;
        let relprec = self.max_relprec();
        // x^d has integer valuation; strip the p-power.
        let val = self.valuation().unwrap();
        let m = (val * Rational::from_integer(d)).to_integer();
        let y = self.pow_i64(d)?.scale(&p_power_scalar(p, -m, relprec + 8));
        // Kill torsion mu_{(p-1)p^n}.
        let e_tors: i64 = (p as i64 - 1) * (p as i64).pow(self.level);
        let mut z = y.pow_i64(e_tors)?;
        let one = CyclotomicScalar::one(p, self.level, relprec);
        let mut s: u32 = 0;
        let gain_threshold = Rational::from_integer(2);
        loop {
            let e = z.sub(&one);
            match e.valuation() {
                None => return Ok(CyclotomicScalar::zero(p, self.level, e_abs_floor(&e))),
                Some(v) if v >= gain_threshold => break,
                _ => {
                    z = z.pow_i64(p as i64)?;
                    s += 1;
                    if s > 4 * relprec {
                        return Err(Error::PrecisionExhausted(
                            "cyclotomic 1-unit normalization stalled".into(),
                        ));
                    }
                }
            }
        }
        let e = z.sub(&one);
        let log_z = cyclo_one_unit_log(&e, relprec)?;
        // log(self) = log(z) / (d * e_tors * p^s).
        let divisor_int = BigInt::from(d) * BigInt::from(e_tors) * BigInt::from(p).pow(s);
        let divisor = PadicScalar::from_integer(p, divisor_int, relprec + 2 * s + 16);
        Ok(log_z.scale(&divisor.inv()?))
    }

    /// Evaluate E_n at this element (used to confirm pi_n is a root).
    pub fn eval_eisenstein(&self) -> CyclotomicScalar {
        let relprec = self.max_relprec();
        let e = eisenstein_coeffs(self.p, self.level);
        let mut acc = CyclotomicScalar::zero(self.p, self.level, (relprec as i64) * 2);
        for c in e.iter().rev() {
            let cs = CyclotomicScalar::from_padic(
                self.level,
                &PadicScalar::from_integer(self.p, c.clone(), relprec + 8),
            );
            acc = acc.mul(self).add(&cs);
        }
        acc
    }

    /// Render as a polynomial in pi (or a plain number when the degree is 1).
    pub fn render(&self) -> String {
        if self.coeffs.len() == 1 {
            return self.coeffs[0].render();
        }
        let terms: Vec<String> = self
            .coeffs
            .iter()
            .enumerate()
            .filter(|(_, c)| !c.is_zero_at_precision())
            .map(|(i, c)| match i {
                0 => c.render(),
                1 => format!("{}*pi", c.render()),
                _ => format!("{}*pi^{}", c.render(), i),
            })
            .collect();
        if terms.is_empty() {
            "0".into()
        } else {
            terms.join(" + ")
        }
    }
}

fn e_abs_floor(e: &CyclotomicScalar) -> i64 {
    e.coeffs().iter().map(|c| c.abs_prec()).min().unwrap_or(0)
}

fn p_power_scalar(p: u64, k: i64, relprec: u32) -> PadicScalar {
    PadicScalar::one(p, relprec).shift_val(k)
}

fn cyclo_one_unit_log(e: &CyclotomicScalar, relprec: u32) -> Result<CyclotomicScalar> {
    let p = e.prime();
    if e.is_zero_at_precision() {
        return Ok(e.clone());
    }
    let target = Rational::from_integer(relprec as i64);
    let mut acc = CyclotomicScalar::zero(p, e.level(), relprec as i64);
    let mut power = e.clone();
    let cap = 8 * relprec as usize + 16;
    for k in 1..=(cap as i64) {
        let kinv = PadicScalar::from_i64(p, k, relprec + 8).inv()?;
        let mut term = power.scale(&kinv);
        if k % 2 == 0 {
            term = term.neg();
        }
        acc = acc.add(&term);
        if term.valuation().map_or(true, |v| v >= target) {
            return Ok(acc);
        }
        power = power.mul(e);
    }
    Err(Error::PrecisionExhausted("cyclotomic log series cap exceeded".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eisenstein_small_cases() {
        // p=2, n=1: x + 2.
        assert_eq!(eisenstein_coeffs(2, 1), vec![BigInt::from(2), BigInt::from(1)]);
        // p=2, n=2: x^2 + 2x + 2.
        assert_eq!(
            eisenstein_coeffs(2, 2),
            vec![BigInt::from(2), BigInt::from(2), BigInt::from(1)]
        );
        // p=3, n=1: x^2 + 3x + 3.
        assert_eq!(
            eisenstein_coeffs(3, 1),
            vec![BigInt::from(3), BigInt::from(3), BigInt::from(1)]
        );
    }

    #[test]
    fn pi_is_root_of_eisenstein() {
        for (p, n) in [(2u64, 1u32), (2, 2), (3, 1), (3, 2)] {
            let pi = CyclotomicScalar::pi(p, n, 40);
            assert!(pi.eval_eisenstein().is_zero_at_precision(), "E_{}(pi) != 0 at p={}", n, p);
        }
    }

    #[test]
    fn pi_plus_two_is_zero_at_p2() {
        let pi = CyclotomicScalar::pi(2, 1, 40);
        let two = CyclotomicScalar::from_padic(1, &PadicScalar::from_i64(2, 2, 40));
        assert!(pi.add(&two).is_zero_at_precision());
    }

    #[test]
    fn valuations() {
        // v(pi_1) = 1/(p-1): p=3 gives 1/2.
        let pi = CyclotomicScalar::pi(3, 1, 40);
        assert_eq!(pi.cyclo_valuation().unwrap(), Rational::new(1, 2));
        // v(p) = 1.
        let p3 = CyclotomicScalar::from_padic(1, &PadicScalar::from_i64(3, 3, 40));
        assert_eq!(p3.cyclo_valuation().unwrap(), Rational::from_integer(1));
        // p=2, n=2: v(pi_2) = 1/2.
        let pi22 = CyclotomicScalar::pi(2, 2, 40);
        assert_eq!(pi22.cyclo_valuation().unwrap(), Rational::new(1, 2));
    }

    #[test]
    fn inverse_roundtrip() {
        let pi = CyclotomicScalar::pi(3, 1, 40);
        let one = CyclotomicScalar::one(3, 1, 40);
        let x = pi.add(&one); // zeta_3, a unit
        let inv = x.inv().unwrap();
        assert!(x.mul(&inv).eq_at_precision(&one));
        // And a ramified element: pi itself.
        let pinv = pi.inv().unwrap();
        assert!(pi.mul(&pinv).eq_at_precision(&one));
    }

    #[test]
    fn iwasawa_log_examples() {
        // log(p) = 0.
        let p3 = CyclotomicScalar::from_padic(1, &PadicScalar::from_i64(3, 3, 40));
        assert!(p3.iwasawa_log().unwrap().is_zero_at_precision());
        // p=2, n=1: log(pi_1) = log(-2) = 0.
        let pi21 = CyclotomicScalar::pi(2, 1, 40);
        assert!(pi21.iwasawa_log().unwrap().is_zero_at_precision());
        // p=3, n=1: 1+pi_1 = zeta_3 is torsion.
        let z3 = CyclotomicScalar::pi(3, 1, 40).add(&CyclotomicScalar::one(3, 1, 40));
        assert!(z3.iwasawa_log().unwrap().is_zero_at_precision());
    }
}
