//! Localization at the circle of zeta_{p^n} - 1: the maps
//! iota_n : window series -> K_n[[t]] given by the substitution
//! T -> (1+pi_n) exp(t/p^n) - 1, the evaluation theta(iota_n(f)) = f(pi_n),
//! and truncated power-series arithmetic over K_n.
//!
//! The t appearing here is the global period, so iota_n sends the element
//! t = log(1+T) to t/p^n (iota_n implements phi^(-n) on the model ring).

use crate::budget::PrecisionBudget;
use crate::cyclo::{CyclotomicScalar, Rational};
use crate::error::{Error, Result};
use crate::padic::PadicScalar;
use crate::series::{r_level, special_qn, AnnulusSeries};

/// Truncated power series in t with K_n coefficients, working modulo t^order.
#[derive(Debug, Clone, PartialEq)]
pub struct TPowerSeries {
    p: u64,
    level: u32,
    order: usize,
    coeffs: Vec<CyclotomicScalar>,
}

impl TPowerSeries {
    pub fn new(p: u64, level: u32, order: usize, mut coeffs: Vec<CyclotomicScalar>) -> Self {
        coeffs.truncate(order);
        while coeffs.len() < order {
            coeffs.push(CyclotomicScalar::zero(p, level, i64::MAX / 4));
        }
        TPowerSeries { p, level, order, coeffs }
    }

    pub fn zero(p: u64, level: u32, order: usize) -> Self {
        TPowerSeries::new(p, level, order, vec![])
    }

    pub fn from_constant(c: &CyclotomicScalar, order: usize) -> Self {
        TPowerSeries::new(c.prime(), c.level(), order, vec![c.clone()])
    }

    pub fn prime(&self) -> u64 {
        self.p
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn coeff(&self, k: usize) -> &CyclotomicScalar {
        &self.coeffs[k]
    }

    pub fn coeffs(&self) -> &[CyclotomicScalar] {
        &self.coeffs
    }

    pub fn constant_term(&self) -> &CyclotomicScalar {
        &self.coeffs[0]
    }

    pub fn is_zero_at_precision(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_zero_at_precision())
    }

    fn check(&self, other: &TPowerSeries) {
        assert_eq!(self.p, other.p, "mixed primes");
        assert_eq!(self.level, other.level, "mixed levels");
        assert_eq!(self.order, other.order, "mixed t-orders");
    }

    pub fn add(&self, other: &TPowerSeries) -> TPowerSeries {
        self.check(other);
        let coeffs = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a.add(b))
            .collect();
        TPowerSeries::new(self.p, self.level, self.order, coeffs)
    }

    pub fn neg(&self) -> TPowerSeries {
        TPowerSeries::new(
            self.p,
            self.level,
            self.order,
            self.coeffs.iter().map(|c| c.neg()).collect(),
        )
    }

    pub fn sub(&self, other: &TPowerSeries) -> TPowerSeries {
        self.add(&other.neg())
    }

    pub fn mul(&self, other: &TPowerSeries) -> TPowerSeries {
        self.check(other);
        let mut out = vec![CyclotomicScalar::zero(self.p, self.level, i64::MAX / 4); self.order];
        for i in 0..self.order {
            for j in 0..self.order - i {
                out[i + j] = out[i + j].add(&self.coeffs[i].mul(&other.coeffs[j]));
            }
        }
        TPowerSeries::new(self.p, self.level, self.order, out)
    }

    pub fn scale(&self, s: &CyclotomicScalar) -> TPowerSeries {
        TPowerSeries::new(
            self.p,
            self.level,
            self.order,
            self.coeffs.iter().map(|c| c.mul(s)).collect(),
        )
    }

    /// t d/dt: sum a_k t^k -> sum k a_k t^k.
    pub fn tderiv(&self) -> TPowerSeries {
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(k, c)| {
                c.scale(&PadicScalar::from_i64(self.p, k as i64, max_relprec(c).max(1)))
            })
            .collect();
        TPowerSeries::new(self.p, self.level, self.order, coeffs)
    }

    /// Plain d/dt.
    pub fn deriv(&self) -> TPowerSeries {
        let mut coeffs = Vec::with_capacity(self.order);
        for k in 1..self.order {
            coeffs.push(
                self.coeffs[k]
                    .scale(&PadicScalar::from_i64(self.p, k as i64, max_relprec(&self.coeffs[k]).max(1))),
            );
        }
        TPowerSeries::new(self.p, self.level, self.order, coeffs)
    }

    /// Multiply by t (shifts coefficients up, dropping the top).
    pub fn mul_t(&self) -> TPowerSeries {
        let mut coeffs = vec![CyclotomicScalar::zero(self.p, self.level, i64::MAX / 4)];
        coeffs.extend(self.coeffs.iter().take(self.order - 1).cloned());
        TPowerSeries::new(self.p, self.level, self.order, coeffs)
    }

    /// Divide by t; requires the constant term to vanish at precision.
    pub fn div_t(&self) -> Result<TPowerSeries> {
        if !self.coeffs[0].is_zero_at_precision() {
            return Err(Error::NotDivisible("nonzero constant term".into()));
        }
        let coeffs: Vec<CyclotomicScalar> = self.coeffs.iter().skip(1).cloned().collect();
        Ok(TPowerSeries::new(self.p, self.level, self.order, coeffs))
    }

    /// Inverse when the constant term is invertible; coefficient recurrence.
    pub fn invert(&self) -> Result<TPowerSeries> {
        let c0 = self.coeffs[0].inv().map_err(|_| {
            Error::NotDivisible("constant term not invertible at precision".into())
        })?;
        let mut v = vec![CyclotomicScalar::zero(self.p, self.level, i64::MAX / 4); self.order];
        v[0] = c0.clone();
        for n in 1..self.order {
            let mut acc = CyclotomicScalar::zero(self.p, self.level, i64::MAX / 4);
            for j in 1..=n {
                acc = acc.add(&self.coeffs[j].mul(&v[n - j]));
            }
            v[n] = acc.mul(&c0).neg();
        }
        Ok(TPowerSeries::new(self.p, self.level, self.order, v))
    }

    pub fn eq_at_precision(&self, other: &TPowerSeries) -> bool {
        self.sub(other).is_zero_at_precision()
    }

    pub fn render(&self) -> String {
        let terms: Vec<String> = self
            .coeffs
            .iter()
            .enumerate()
            .filter(|(_, c)| !c.is_zero_at_precision())
            .map(|(k, c)| match k {
                0 => format!("({})", c.render()),
                1 => format!("({})*t", c.render()),
                _ => format!("({})*t^{}", c.render(), k),
            })
            .collect();
        if terms.is_empty() {
            format!("0 + O(t^{})", self.order)
        } else {
            format!("{} + O(t^{})", terms.join(" + "), self.order)
        }
    }
}

fn max_relprec(c: &CyclotomicScalar) -> u32 {
    c.coeffs().iter().map(|x| x.relprec()).max().unwrap_or(1)
}

/// The image of T: S(t) = pi_n + (1+pi_n)(exp(t/p^n) - 1), truncated at the
/// t-order. Denominators p^(nk) k! are tracked exactly.
pub fn iota_image_of_t(p: u64, n: u32, w: usize, relprec: u32) -> Result<TPowerSeries> {
    let pi = CyclotomicScalar::pi(p, n, relprec);
    let one = CyclotomicScalar::one(p, n, relprec);
    let one_plus_pi = pi.add(&one);
    let mut coeffs = Vec::with_capacity(w);
    coeffs.push(pi.clone());
    // (1+pi) * t^k / (p^(nk) k!)
    let mut denom = PadicScalar::one(p, relprec + (n as u32) * (w as u32) + 8);
    for k in 1..w {
        let kf = PadicScalar::from_i64(p, k as i64, relprec + (n as u32) * (w as u32) + 8);
        let pn = PadicScalar::one(p, relprec).shift_val(n as i64);
        denom = denom.mul(&kf).mul(&pn);
        let c = denom.inv().map_err(|_| {
            Error::PrecisionExhausted("exp denominators exceeded precision".into())
        })?;
        coeffs.push(one_plus_pi.scale(&c));
    }
    Ok(TPowerSeries::new(p, n, w, coeffs))
}

/// iota_n of a window series: ring morphism to order w. Requires the annulus
/// index of f to be at most r_n.
pub fn iota_n(f: &AnnulusSeries, n: u32, w: usize, budget: &PrecisionBudget) -> Result<TPowerSeries> {
    let p = f.prime();
    if f.annulus() > r_level(p, n) {
        return Err(Error::InvalidInput(format!(
            "annulus index {} exceeds r_{} = {}",
            f.annulus(),
            n,
            r_level(p, n)
        )));
    }
    let relprec = budget.n_digits + 2 * budget.slack;
    let s = iota_image_of_t(p, n, w, relprec)?;
    // Horner for the nonnegative part.
    let mut pos = TPowerSeries::zero(p, n, w);
    for k in (0..=f.kmax().max(0)).rev() {
        pos = pos.mul(&s);
        pos = pos.add(&TPowerSeries::from_constant(
            &CyclotomicScalar::from_padic(n, &f.coeff(k)),
            w,
        ));
    }
    let mut out = pos;
    if f.kmin() < 0 {
        let sinv = s.invert()?;
        let mut spow = sinv.clone();
        let mut neg = TPowerSeries::zero(p, n, w);
        for k in (f.kmin()..=(-1)).rev() {
            let c = CyclotomicScalar::from_padic(n, &f.coeff(k));
            neg = neg.add(&spow.scale(&c));
            if k > f.kmin() {
                spow = spow.mul(&sinv);
            }
        }
        out = out.add(&neg);
    }
    Ok(out)
}

/// theta(iota_n(f)) = f(pi_n): exact evaluation in K_n.
pub fn theta_iota_n(f: &AnnulusSeries, n: u32, budget: &PrecisionBudget) -> Result<CyclotomicScalar> {
    let p = f.prime();
    if f.annulus() > r_level(p, n) {
        return Err(Error::InvalidInput(format!(
            "annulus index {} exceeds r_{}",
            f.annulus(),
            n
        )));
    }
    let relprec = budget.n_digits + 2 * budget.slack;
    let pi = CyclotomicScalar::pi(p, n, relprec);
    // Horner on the nonnegative part.
    let mut acc = CyclotomicScalar::zero(p, n, i64::MAX / 4);
    for k in (0..=f.kmax().max(0)).rev() {
        acc = acc.mul(&pi);
        acc = acc.add(&CyclotomicScalar::from_padic(n, &f.coeff(k)));
    }
    if f.kmin() < 0 {
        let pinv = pi.inv()?;
        let mut ppow = pinv.clone();
        for k in (f.kmin()..=(-1)).rev() {
            acc = acc.add(&CyclotomicScalar::from_padic(n, &f.coeff(k)).mul(&ppow));
            if k > f.kmin() {
                ppow = ppow.mul(&pinv);
            }
        }
    }
    Ok(acc)
}

/// Solves theta(iota_n(f)) = y for a window polynomial f: the pi-adic
/// coordinates of y are read off as T-coefficients.
pub fn iota_surjectivity_witness(y: &CyclotomicScalar, annulus: Rational) -> AnnulusSeries {
    let p = y.prime();
    AnnulusSeries::new(p, annulus, 0, y.coeffs().to_vec(), None)
}

/// The exact localized period: iota_m(log(1+T)) = t / p^m. Pushing the
/// truncated window of t through the substitution converges to this; the
/// closed form avoids the window-tail error entirely.
pub fn iota_of_period(p: u64, m: u32, w: usize, relprec: u32) -> TPowerSeries {
    let mut coeffs = vec![CyclotomicScalar::zero(p, m, i64::MAX / 4); w];
    if w > 1 {
        coeffs[1] = CyclotomicScalar::from_padic(
            m,
            &PadicScalar::one(p, relprec).shift_val(-(m as i64)),
        );
    }
    TPowerSeries::new(p, m, w, coeffs)
}

/// theta(iota_m(p^n t / q_n)) by series division at level m: the image of
/// the normalized period p^n t / phi^(n-1)(q).
///
/// Equals 0 for m != n and zeta_p - 1 (embedded in K_m) for m = n.
pub fn partunit_value(p: u64, m: u32, n: u32, budget: &PrecisionBudget) -> Result<CyclotomicScalar> {
    let w = budget.t_order.max(4);
    let annulus = r_level(p, m.min(n));
    let relprec = budget.n_digits + 2 * budget.slack;
    let qn = special_qn(p, n, annulus, relprec);
    let num = iota_of_period(p, m, w, relprec);
    let pn = PadicScalar::one(p, relprec).shift_val(n as i64);
    let num = num.scale(&CyclotomicScalar::from_padic(m, &pn));
    let den = iota_n(&qn, m, w, budget)?;
    if den.constant_term().is_zero_at_precision() {
        // m = n: both numerator and denominator vanish at t = 0 once.
        let num_shift = num.div_t()?;
        let den_shift = den.div_t()?;
        let q = num_shift.mul(&den_shift.invert()?);
        Ok(q.constant_term().clone())
    } else {
        let q = num.mul(&den.invert()?);
        Ok(q.constant_term().clone())
    }
}

/// zeta_p - 1 embedded in K_m: (1+pi_m)^(p^(m-1)) - 1.
pub fn zeta_p_minus_one(p: u64, m: u32, relprec: u32) -> Result<CyclotomicScalar> {
    let one = CyclotomicScalar::one(p, m, relprec);
    let z = CyclotomicScalar::pi(p, m, relprec).add(&one);
    let e = (p as i64).pow(m - 1);
    Ok(z.pow_i64(e)?.sub(&one))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::special_t;

    fn budget() -> PrecisionBudget {
        PrecisionBudget::default()
    }

    #[test]
    fn iota_of_variable_matches_expansion() {
        let b = budget();
        let p = 3u64;
        let t = AnnulusSeries::variable(p, r_level(p, 1), 40);
        let img = iota_n(&t, 1, 3, &b).unwrap();
        // pi_1 + (1+pi_1) t/p + (1+pi_1) t^2/(2p^2).
        let pi = CyclotomicScalar::pi(p, 1, 56);
        let one = CyclotomicScalar::one(p, 1, 56);
        assert!(img.coeff(0).eq_at_precision(&pi));
        let c1 = pi.add(&one).scale(&PadicScalar::from_rational(p, 1, 3, 56).unwrap());
        assert!(img.coeff(1).eq_at_precision(&c1));
        let c2 = pi.add(&one).scale(&PadicScalar::from_rational(p, 1, 18, 56).unwrap());
        assert!(img.coeff(2).eq_at_precision(&c2));
    }

    #[test]
    fn iota_of_log_is_scaled_variable() {
        // iota_n(log(1+T)) = t / p^n: pushing the truncated window of t
        // through the substitution agrees with the closed form up to the
        // window tail evaluated on the pi_n-circle. At (p, n) = (3, 2) the
        // tail only guarantees ~(window+1)/6 - log corrections of digits.
        let b = budget();
        for p in [2u64, 3] {
            for n in [1u32, 2] {
                let ts = special_t(p, r_level(p, 1), &b);
                let img = iota_n(&ts, n, 8, &b).unwrap();
                let exact = iota_of_period(p, n, 8, 56);
                let diff = img.sub(&exact);
                let v_pi = Rational::from_integer(1) / r_level(p, n);
                for k in 0..8i64 {
                    // Tail terms a_j T^j (j > kmax, v_p(a_j) >= -log_p j)
                    // contribute >= (kmax+1-k) v(pi) - nk - v_p(k!) - log slop.
                    let bound = Rational::from_integer(ts.kmax() + 1 - k) * v_pi
                        - Rational::from_integer(n as i64 * k)
                        - Rational::from_integer(6);
                    if bound <= Rational::from_integer(2) {
                        continue;
                    }
                    let c = diff.coeff(k as usize);
                    assert!(
                        c.is_zero_at_precision()
                            || c.valuation().map_or(false, |v| v >= bound),
                        "p={} n={} k={} (bound {}): {}",
                        p,
                        n,
                        k,
                        bound,
                        c.render()
                    );
                }
            }
        }
    }

    #[test]
    fn theta_iota_examples() {
        let b = budget();
        let p = 2u64;
        let t = AnnulusSeries::variable(p, r_level(p, 1), 40);
        let v = theta_iota_n(&t, 1, &b).unwrap();
        assert!(v.eq_at_precision(&CyclotomicScalar::pi(p, 1, 40)));
        // theta(iota_n(q_n)) = 0.
        for n in [1u32, 2] {
            let qn = special_qn(p, n, r_level(p, 1), 40);
            assert!(theta_iota_n(&qn, n, &b).unwrap().is_zero_at_precision());
        }
        // theta(iota_m(q_n)) = p for m < n.
        let q2 = special_qn(p, 2, r_level(p, 1), 40);
        let v = theta_iota_n(&q2, 1, &b).unwrap();
        let pp = CyclotomicScalar::from_padic(1, &PadicScalar::from_i64(p, p as i64, 40));
        assert!(v.eq_at_precision(&pp), "got {}", v.render());
    }

    #[test]
    fn iota_constant_term_of_qn_image_vanishes() {
        let b = budget();
        let p = 3u64;
        let qn = special_qn(p, 1, r_level(p, 1), 40);
        let img = iota_n(&qn, 1, 4, &b).unwrap();
        assert!(img.constant_term().is_zero_at_precision());
    }

    #[test]
    fn partunit_values_match() {
        let b = budget();
        for p in [2u64, 3] {
            for m in [1u32, 2] {
                for n in [1u32, 2] {
                    let v = partunit_value(p, m, n, &b).unwrap();
                    if m == n {
                        let expect = zeta_p_minus_one(p, m, 56).unwrap();
                        assert!(
                            v.eq_at_precision(&expect),
                            "p={} m={} n={}: got {}, want {}",
                            p,
                            m,
                            n,
                            v.render(),
                            expect.render()
                        );
                    } else {
                        let val = v.valuation();
                        assert!(
                            v.is_zero_at_precision()
                                || val.map_or(false, |x| x >= Rational::from_integer(b.floor())),
                            "p={} m={} n={}: got {} (val {:?})",
                            p,
                            m,
                            n,
                            v.render(),
                            val
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn tseries_ops() {
        let p = 3u64;
        let one = CyclotomicScalar::one(p, 1, 40);
        // t^3 derivative examples on level-1 series of order 5.
        let mut cs = vec![CyclotomicScalar::zero(p, 1, 1 << 40); 5];
        cs[3] = one.clone();
        let t3 = TPowerSeries::new(p, 1, 5, cs);
        let d = t3.tderiv();
        let three = CyclotomicScalar::from_padic(1, &PadicScalar::from_i64(p, 3, 40));
        assert!(d.coeff(3).eq_at_precision(&three.mul(&one)));
        // tderiv(1) = 0.
        let c = TPowerSeries::from_constant(&one, 5);
        assert!(c.tderiv().is_zero_at_precision());
        // mul(t, t^4) = 0 at order 5.
        let mut t1 = vec![CyclotomicScalar::zero(p, 1, 1 << 40); 5];
        t1[1] = one.clone();
        let t1 = TPowerSeries::new(p, 1, 5, t1);
        let mut t4 = vec![CyclotomicScalar::zero(p, 1, 1 << 40); 5];
        t4[4] = one.clone();
        let t4 = TPowerSeries::new(p, 1, 5, t4);
        assert!(t1.mul(&t4).is_zero_at_precision());
    }

    #[test]
    fn iota_is_ring_morphism() {
        let b = budget();
        let p = 2u64;
        let f = AnnulusSeries::from_integers(p, r_level(p, 1), -1, &[3, 1, 2], 40);
        let g = AnnulusSeries::from_integers(p, r_level(p, 1), 0, &[1, 0, 5], 40);
        let lhs = iota_n(&f.mul(&g, &b).unwrap(), 1, 6, &b).unwrap();
        let rhs = iota_n(&f, 1, 6, &b).unwrap().mul(&iota_n(&g, 1, 6, &b).unwrap());
        assert!(lhs.eq_at_precision(&rhs));
    }

    #[test]
    fn surjectivity_witness_roundtrip() {
        let b = budget();
        let p = 3u64;
        let pi = CyclotomicScalar::pi(p, 1, 40);
        let y = pi.mul(&pi).add(&CyclotomicScalar::one(p, 1, 40)); // 1 + pi^2
        let f = iota_surjectivity_witness(&y, r_level(p, 1));
        let back = theta_iota_n(&f, 1, &b).unwrap();
        assert!(back.eq_at_precision(&y));
    }
}
